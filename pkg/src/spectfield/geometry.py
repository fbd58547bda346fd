"""Acquisition geometry, view down-sampling, and coordinate grids.

Conventions used throughout the package:

* View angles are in degrees, ascending in ``[0, 360)``.  The camera orbits
  the axial (z) axis; at angle ``theta`` the detector sits at distance
  ``radial_mm[view]`` from the rotation axis, with its u axis in the
  transaxial plane and its v axis along z.
* Detector coordinates ``(u, v)`` are normalized to ``[-1, 1]`` by pixel
  centers, so the field input is scale-free across detector sizes.
* The radial coordinate is normalized by the largest radius in the scan;
  skipped views take their radius from the same orbit model (the planned
  orbit is known ahead of time for every angle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Column order of the arrays produced by :func:`coordinate_grid`.
COORD_COLUMNS = ("u", "v", "sin_theta", "cos_theta", "r")

#: Default energy-window labels, photopeak first.
WINDOW_NAMES = ("peak", "lower", "upper")


@dataclass(frozen=True)
class CircularOrbit:
    """Camera orbit at a fixed distance from the rotation axis."""

    radius_mm: float

    def radial(self, angles_deg: np.ndarray) -> np.ndarray:
        if self.radius_mm <= 0:
            raise ValueError("orbit radius must be positive")
        return np.full(len(angles_deg), float(self.radius_mm))


@dataclass(frozen=True)
class EllipticalOrbit:
    """Body-hugging orbit following an elliptical support curve.

    The detector plane at angle ``theta`` is tangent to the ellipse with
    semi-axes ``(semi_a_mm, semi_b_mm)``, so the radial distance equals the
    ellipse support function ``sqrt((a sin)^2 + (b cos)^2)`` plus a fixed
    clearance.  At 0/180 deg the detector normal crosses the short axis
    (distance b); at 90/270 deg the long axis (distance a).
    """

    semi_a_mm: float
    semi_b_mm: float
    clearance_mm: float = 0.0

    def radial(self, angles_deg: np.ndarray) -> np.ndarray:
        if self.semi_a_mm <= 0 or self.semi_b_mm <= 0 or self.clearance_mm < 0:
            raise ValueError("orbit semi-axes must be positive and clearance nonnegative")
        th = np.deg2rad(angles_deg)
        return np.hypot(self.semi_a_mm * np.sin(th), self.semi_b_mm * np.cos(th)) + self.clearance_mm


@dataclass
class ScanGeometry:
    """Static description of one acquisition: angles, radii, detector grid."""

    view_angles_deg: np.ndarray
    radial_mm: np.ndarray
    det_nu: int
    det_nv: int
    det_pixel_mm: float
    n_windows: int = 3

    def __post_init__(self):
        self.view_angles_deg = np.asarray(self.view_angles_deg, dtype=np.float64)
        self.radial_mm = np.asarray(self.radial_mm, dtype=np.float64)
        if self.view_angles_deg.ndim != 1 or len(self.view_angles_deg) < 2:
            raise ValueError("need at least 2 views")
        if self.radial_mm.shape != self.view_angles_deg.shape:
            raise ValueError("radial_mm must have one entry per view")
        d = np.diff(self.view_angles_deg)
        if not (d > 0).all():
            raise ValueError("view angles must be strictly ascending")
        if self.view_angles_deg[0] < 0 or self.view_angles_deg[-1] >= 360.0:
            raise ValueError("view angles must lie in [0, 360)")
        if not (self.radial_mm > 0).all():
            raise ValueError("radial positions must be positive")
        if self.det_nu < 1 or self.det_nv < 1:
            raise ValueError("detector dimensions must be positive")
        if self.det_pixel_mm <= 0:
            raise ValueError("detector pixel pitch must be positive")
        if self.n_windows < 1:
            raise ValueError("need at least one energy window")
        self.view_angles_deg.setflags(write=False)
        self.radial_mm.setflags(write=False)

    @property
    def n_views(self) -> int:
        return len(self.view_angles_deg)

    def to_dict(self) -> dict:
        return {
            "view_angles_deg": self.view_angles_deg.tolist(),
            "radial_mm": self.radial_mm.tolist(),
            "det_nu": int(self.det_nu),
            "det_nv": int(self.det_nv),
            "det_pixel_mm": float(self.det_pixel_mm),
            "n_windows": int(self.n_windows),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanGeometry":
        return cls(
            view_angles_deg=np.asarray(d["view_angles_deg"], dtype=np.float64),
            radial_mm=np.asarray(d["radial_mm"], dtype=np.float64),
            det_nu=int(d["det_nu"]),
            det_nv=int(d["det_nv"]),
            det_pixel_mm=float(d["det_pixel_mm"]),
            n_windows=int(d["n_windows"]),
        )


@dataclass(frozen=True)
class ViewSplit:
    """Partition of the view set into measured and skipped indices."""

    df: int
    measured: np.ndarray
    skipped: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "measured", np.asarray(self.measured, dtype=np.intp))
        object.__setattr__(self, "skipped", np.asarray(self.skipped, dtype=np.intp))
        self.measured.setflags(write=False)
        self.skipped.setflags(write=False)


@dataclass(frozen=True)
class CoordinateSample:
    """One row of a coordinate grid; see ``COORD_COLUMNS`` for array layout."""

    u: float
    v: float
    sin_theta: float
    cos_theta: float
    r: float


@dataclass
class ProjectionStack:
    """Per-view, per-energy-window 2-D count arrays bound to a geometry.

    ``windows`` has shape ``(n_windows, n_views_held, det_nu, det_nv)`` and
    ``view_indices`` lists the global view indices held, ascending.  ``kind``
    is one of ``mean`` (noise-free expected counts), ``sampled`` (integer
    Poisson draws), or ``synthesized`` (model- or interpolation-generated).

    This type lives here rather than in :mod:`spectfield.simulate` so the
    projector can return stacks without a circular import; ``simulate``
    re-exports it.
    """

    geometry: ScanGeometry
    view_indices: np.ndarray
    windows: np.ndarray
    window_names: tuple = WINDOW_NAMES
    kind: str = "mean"

    def __post_init__(self):
        self.view_indices = np.asarray(self.view_indices, dtype=np.intp)
        self.windows = np.asarray(self.windows)
        if self.kind not in ("mean", "sampled", "synthesized"):
            raise ValueError(f"unknown stack kind {self.kind!r}")
        if self.view_indices.ndim != 1 or len(self.view_indices) == 0:
            raise ValueError("stack must hold at least one view")
        order = np.argsort(self.view_indices, kind="stable")
        if not np.array_equal(order, np.arange(len(order))):
            # canonical storage order: ascending global view index
            self.view_indices = self.view_indices[order]
            self.windows = self.windows[:, order]
        if len(np.unique(self.view_indices)) != len(self.view_indices):
            raise ValueError("duplicate view indices")
        if self.view_indices[0] < 0 or self.view_indices[-1] >= self.geometry.n_views:
            raise ValueError("view index out of range for geometry")
        expect = (len(self.window_names), len(self.view_indices), self.geometry.det_nu, self.geometry.det_nv)
        if self.windows.shape != expect:
            raise ValueError(f"windows shape {self.windows.shape} != expected {expect}")
        if self.kind in ("mean", "sampled") and (self.windows < 0).any():
            raise ValueError(f"negative counts in a {self.kind} stack")
        if self.kind == "sampled" and not (
            np.issubdtype(self.windows.dtype, np.integer)
            or (np.mod(self.windows, 1.0) == 0).all()
        ):
            raise ValueError("sampled stacks must hold integer counts")

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    @property
    def peak(self) -> np.ndarray:
        """Photopeak window (index 0 by convention), shape (n_views_held, nu, nv)."""
        return self.windows[0]

    def window(self, name: str) -> np.ndarray:
        if name not in self.window_names:
            raise KeyError(f"no window {name!r}; have {self.window_names}")
        return self.windows[self.window_names.index(name)]

    def angles_deg(self) -> np.ndarray:
        return self.geometry.view_angles_deg[self.view_indices]

    def restrict(self, view_indices) -> "ProjectionStack":
        """Sub-stack holding only the requested global view indices."""
        view_indices = np.asarray(view_indices, dtype=np.intp)
        pos = np.searchsorted(self.view_indices, view_indices)
        if (pos >= len(self.view_indices)).any() or (self.view_indices[pos] != view_indices).any():
            raise ValueError("requested views not present in stack")
        return ProjectionStack(
            geometry=self.geometry,
            view_indices=view_indices,
            windows=self.windows[:, pos].copy(),
            window_names=self.window_names,
            kind=self.kind,
        )


def make_geometry(n_views, orbit, det_nu=128, det_nv=128, det_pixel_mm=4.8, n_windows=3) -> ScanGeometry:
    """Uniform full-circle geometry with radii taken from the orbit model.

    ``orbit`` is a :class:`CircularOrbit` or :class:`EllipticalOrbit`.
    Dual-head systems are modeled as a single merged view set; head identity
    carries no information downstream.
    """
    if n_views < 2:
        raise ValueError("need at least 2 views")
    angles = np.arange(n_views, dtype=np.float64) * (360.0 / n_views)
    radial = orbit.radial(angles)
    return ScanGeometry(
        view_angles_deg=angles,
        radial_mm=radial,
        det_nu=det_nu,
        det_nv=det_nv,
        det_pixel_mm=det_pixel_mm,
        n_windows=n_windows,
    )


def split_views(geometry: ScanGeometry, df: int) -> ViewSplit:
    """Every ``df``-th view starting at index 0 is measured; the rest are skipped."""
    if not 1 <= df <= geometry.n_views:
        raise ValueError(f"df must be in [1, {geometry.n_views}]")
    measured = np.arange(0, geometry.n_views, df, dtype=np.intp)
    mask = np.ones(geometry.n_views, dtype=bool)
    mask[measured] = False
    return ViewSplit(df=int(df), measured=measured, skipped=np.flatnonzero(mask))


def coordinate_grid(geometry: ScanGeometry, view: int, upsample: int = 2) -> np.ndarray:
    """5-D coordinate samples for one view's (upsampled) pixel grid.

    Returns an array of shape ``(det_nu*upsample * det_nv*upsample, 5)`` in
    row-major order (u index outer, v inner); columns are ``COORD_COLUMNS``:
    pixel-center positions mapped linearly to [-1, 1], the sine and cosine of
    the view angle, and the radius normalized by the scan maximum.
    """
    if upsample < 1:
        raise ValueError("upsample must be >= 1")
    if not 0 <= view < geometry.n_views:
        raise ValueError(f"view {view} out of range")
    nu = geometry.det_nu * upsample
    nv = geometry.det_nv * upsample
    u = (2.0 * np.arange(nu) + 1.0) / nu - 1.0
    v = (2.0 * np.arange(nv) + 1.0) / nv - 1.0
    th = math.radians(geometry.view_angles_deg[view])
    r = geometry.radial_mm[view] / geometry.radial_mm.max()
    out = np.empty((nu * nv, 5), dtype=np.float64)
    out[:, 0] = np.repeat(u, nv)
    out[:, 1] = np.tile(v, nu)
    out[:, 2] = math.sin(th)
    out[:, 3] = math.cos(th)
    out[:, 4] = r
    return out
