"""Rotation-based forward/adjoint projection with attenuation and detector blur.

The system matrix is built from four exactly-transposable pieces applied per
view: (1) in-plane rotation of the volume into the detector frame, stored as
a sparse matrix of bilinear interpolation weights; (2) a diagonal
transmission factor accumulated by the midpoint rule along the ray axis;
(3) a depth-dependent Gaussian blur per constant-depth plane, stored as
symmetric Toeplitz matrices; (4) summation of planes toward the detector.
The adjoint applies the literal transposes in reverse order, so the
forward/back pair satisfies the dot-product identity to rounding error,
which is what multiplicative EM updates rely on.

Frame conventions: the volume is (nx, ny, nz) with x right, y toward the
far side of the detector, z axial.  The detector sits on the -y side of the
rotated frame; plane j=0 is nearest the detector, and a plane's blur depth
is its distance to the detector face, ``radial + (j - (ny-1)/2) * pitch``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse

from .geometry import ProjectionStack, ScanGeometry
from .phantom import ImageVolume


@dataclass
class SystemModel:
    """Fixed per-scan physics: geometry, attenuation map, blur model, scale.

    ``mu_map`` is a linear attenuation map in 1/mm on the reconstruction
    grid, or None for no attenuation.  ``psf_sigma0``/``psf_slope`` give the
    blur sigma in mm at depth 0 and its growth per mm of depth.
    ``calibration`` converts line integrals to expected counts.
    """

    geometry: ScanGeometry
    mu_map: ImageVolume | None = None
    psf_sigma0: float = 0.0
    psf_slope: float = 0.0
    calibration: float = 1.0
    _rot: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.psf_sigma0 < 0 or self.psf_slope < 0:
            raise ValueError("blur parameters must be nonnegative")
        if self.calibration <= 0:
            raise ValueError("calibration must be positive")
        if self.mu_map is not None:
            if self.mu_map.dims != self.grid_shape:
                raise ValueError(
                    f"attenuation grid {self.mu_map.dims} != reconstruction grid {self.grid_shape}")
            if self.mu_map.voxel_iso_mm != self.geometry.det_pixel_mm:
                raise ValueError("attenuation voxel size must equal the detector pitch")

    @property
    def grid_shape(self):
        """Reconstruction grid implied by the detector: (nu, nu, nv) isotropic voxels."""
        g = self.geometry
        return (g.det_nu, g.det_nu, g.det_nv)

    @property
    def step_mm(self) -> float:
        return self.geometry.det_pixel_mm

    def rotation(self, view: int):
        """Sparse in-plane rotation into the detector frame at this view, and its transpose.

        The forward matrix scatters each voxel's value onto the bilinear
        neighbors of its rotated position, so an on-axis point source stays a
        single pixel at every angle and interior mass is conserved; the
        adjoint is the literal transpose of those weights.
        """
        if view not in self._rot:
            theta = math.radians(self.geometry.view_angles_deg[view])
            r = _rotation_csr(self.geometry.det_nu, -theta)
            self._rot[view] = (r.T.tocsr(), r)
        return self._rot[view]


def psf_sigma(depth_mm: float, model: SystemModel) -> float:
    """Blur sigma in mm at the given depth from the detector face."""
    if depth_mm < 0:
        raise ValueError("depth must be nonnegative")
    return model.psf_sigma0 + model.psf_slope * depth_mm


def _rotation_csr(n: int, theta: float) -> scipy.sparse.csr_matrix:
    """Bilinear gather matrix: each output pixel samples the input at its own
    center rotated by +theta about the plane center.

    Acts on row-major flattened planes; weights falling outside the grid are
    dropped.  ``SystemModel.rotation`` uses the transpose as the forward
    (scatter) rotation and this matrix itself as the adjoint.
    """
    c = np.arange(n) - 0.5 * (n - 1)
    xi = np.repeat(c, n)
    yj = np.tile(c, n)
    ct, st = math.cos(theta), math.sin(theta)
    fi = ct * xi - st * yj + 0.5 * (n - 1)
    fj = st * xi + ct * yj + 0.5 * (n - 1)
    i0 = np.floor(fi).astype(np.int64)
    j0 = np.floor(fj).astype(np.int64)
    wi = fi - i0
    wj = fj - j0
    rows, cols, vals = [], [], []
    out = np.arange(n * n, dtype=np.int64)
    for di, dj, w in (
        (0, 0, (1 - wi) * (1 - wj)),
        (1, 0, wi * (1 - wj)),
        (0, 1, (1 - wi) * wj),
        (1, 1, wi * wj),
    ):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n) & (w > 0)
        rows.append(out[ok])
        cols.append((ii * n + jj)[ok])
        vals.append(w[ok])
    mat = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, n * n),
    )
    return mat.tocsr()


@lru_cache(maxsize=256)
def _blur_matrix(n: int, sigma_px: float) -> np.ndarray:
    """Symmetric Toeplitz 1-D Gaussian blur, truncated at 4 sigma.

    The tap vector is renormalized to unit sum before being laid into the
    Toeplitz form, so interior columns conserve counts while edge columns
    lose the mass blurred off the detector.  Symmetry keeps the operator
    self-adjoint.
    """
    half = int(math.ceil(4.0 * sigma_px))
    d = np.arange(half + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (d / sigma_px) ** 2)
    norm = taps[0] + 2.0 * taps[1:].sum()
    col = np.zeros(n)
    col[: min(half + 1, n)] = taps[: min(half + 1, n)] / norm
    mat = scipy.linalg.toeplitz(col)
    mat.setflags(write=False)
    return mat


def _transmission(model: SystemModel, mu_rot: np.ndarray) -> np.ndarray:
    """Midpoint-rule survival factor per voxel toward the detector (-y side)."""
    path = (np.cumsum(mu_rot, axis=1) - 0.5 * mu_rot) * model.step_mm
    return np.exp(-path)


def _plane_blur(model: SystemModel, view: int, j: int):
    """(Bu, Bv) blur matrices for plane j of this view, or None for identity."""
    g = model.geometry
    ny = g.det_nu
    depth = max(0.0, g.radial_mm[view] + (j - 0.5 * (ny - 1)) * model.step_mm)
    sigma_px = psf_sigma(depth, model) / model.step_mm
    if sigma_px <= 0.0:
        return None
    return _blur_matrix(g.det_nu, sigma_px), _blur_matrix(g.det_nv, sigma_px)


def _as_volume_array(x, model: SystemModel) -> np.ndarray:
    vol = x.values if isinstance(x, ImageVolume) else np.asarray(x)
    if vol.shape != model.grid_shape:
        raise ValueError(f"volume shape {vol.shape} != model grid {model.grid_shape}")
    if (vol < 0).any():
        raise ValueError("volume must be nonnegative")
    return np.ascontiguousarray(vol, dtype=np.float64)


def forward_project(x, model: SystemModel, views=None) -> ProjectionStack:
    """Mean photopeak projections of a volume at the selected views.

    Returns a single-window stack of shape (1, len(views), det_nu, det_nv);
    rows are stored in ascending global view order.
    """
    g = model.geometry
    views = np.arange(g.n_views) if views is None else np.asarray(views, dtype=np.intp)
    vol = _as_volume_array(x, model)
    nx, ny, nz = model.grid_shape
    mu = model.mu_map.values if model.mu_map is not None else None
    out = np.empty((len(views), g.det_nu, g.det_nv))
    for k, v in enumerate(views):
        rot, _ = model.rotation(int(v))
        xr = (rot @ vol.reshape(nx * ny, nz)).reshape(nx, ny, nz)
        if mu is not None:
            mur = (rot @ mu.reshape(nx * ny, nz)).reshape(nx, ny, nz)
            xr = xr * _transmission(model, mur)
        p = np.zeros((g.det_nu, g.det_nv))
        for j in range(ny):
            bl = _plane_blur(model, int(v), j)
            if bl is None:
                p += xr[:, j, :]
            else:
                p += bl[0] @ xr[:, j, :] @ bl[1]
        out[k] = model.calibration * model.step_mm * p
    return ProjectionStack(
        geometry=g,
        view_indices=views,
        windows=out[None],
        window_names=("peak",),
        kind="mean",
    )


def back_project(p, model: SystemModel, views=None) -> ImageVolume:
    """Adjoint of forward_project applied to photopeak data.

    ``p`` is a ProjectionStack (photopeak window used, views taken from the
    stack unless given) or a raw (len(views), det_nu, det_nv) array with
    ``views`` required.  Every step is the transpose of the forward step, in
    reverse order; no ad-hoc rotation by the opposite angle.
    """
    g = model.geometry
    if isinstance(p, ProjectionStack):
        if (p.geometry.det_nu, p.geometry.det_nv, p.geometry.n_views) != (g.det_nu, g.det_nv, g.n_views):
            raise ValueError("projection stack geometry does not match the model")
        if views is None:
            views = p.view_indices
            rows = p.peak
        else:
            views = np.asarray(views, dtype=np.intp)
            rows = p.restrict(views).peak
    else:
        if views is None:
            raise ValueError("views are required with a raw projection array")
        views = np.asarray(views, dtype=np.intp)
        rows = np.asarray(p, dtype=np.float64)
        if rows.shape != (len(views), g.det_nu, g.det_nv):
            raise ValueError(f"projection shape {rows.shape} != {(len(views), g.det_nu, g.det_nv)}")
    nx, ny, nz = model.grid_shape
    mu = model.mu_map.values if model.mu_map is not None else None
    acc = np.zeros((nx, ny, nz))
    for q, v in zip(rows, views):
        q = np.asarray(q, dtype=np.float64)
        rot, rot_t = model.rotation(int(v))
        spread = np.empty((nx, ny, nz))
        for j in range(ny):
            bl = _plane_blur(model, int(v), j)
            if bl is None:
                spread[:, j, :] = q
            else:
                spread[:, j, :] = bl[0] @ q @ bl[1]
        if mu is not None:
            mur = (rot @ mu.reshape(nx * ny, nz)).reshape(nx, ny, nz)
            spread *= _transmission(model, mur)
        acc += (rot_t @ spread.reshape(nx * ny, nz)).reshape(nx, ny, nz)
    return ImageVolume(model.calibration * model.step_mm * acc, model.step_mm)
