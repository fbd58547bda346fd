"""Digital ellipsoid phantom with hot spheres, plus evaluation masks.

The object is an axis-aligned ellipsoid of uniform background activity
containing hot spheres; the default layout places six spheres of graded
volume on a ring in the central transaxial plane.  Voxel activity is
``concentration x voxel volume x occupancy`` with fractional occupancy from
a fixed 3x3x3 subvoxel grid, so small spheres keep nearly their analytic
totals on coarse grids.  Attenuation follows the same occupancy, which makes
the attenuation map nonzero exactly where activity is nonzero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def sphere_radius_from_volume(volume_ml: float) -> float:
    """Radius in mm of a sphere with the given volume in mL (1 mL = 1000 mm^3)."""
    if volume_ml < 0:
        raise ValueError("volume must be nonnegative")
    return (3.0 * volume_ml * 1000.0 / (4.0 * math.pi)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class SphereSpec:
    """One hot sphere: center (mm), volume (mL), activity concentration."""

    center_mm: tuple
    volume_ml: float
    conc: float

    @property
    def radius_mm(self) -> float:
        return sphere_radius_from_volume(self.volume_ml)


def _default_ring(volumes=(2.0, 4.0, 8.0, 16.0, 30.0, 114.0), conc=0.22, ring_radius_mm=60.0):
    """Six spheres equally spaced on the z=0 ring, smallest first."""
    out = []
    for k, v in enumerate(volumes):
        phi = 2.0 * math.pi * k / len(volumes)
        c = (ring_radius_mm * math.cos(phi), ring_radius_mm * math.sin(phi), 0.0)
        out.append(SphereSpec(center_mm=c, volume_ml=v, conc=conc))
    return out


@dataclass
class PhantomSpec:
    """Object description: body ellipsoid, background fill, hot spheres.

    Lengths are mm, concentrations amount per mL, attenuation 1/mm.  The
    default body attenuation 0.0136/mm is narrow-beam water at 208 keV.
    """

    semi_axes_mm: tuple = (150.0, 110.0, 90.0)
    background_conc: float = 0.035
    spheres: list = field(default_factory=_default_ring)
    mu_body_per_mm: float = 0.0136

    def validate(self) -> None:
        if len(self.semi_axes_mm) != 3 or min(self.semi_axes_mm) <= 0:
            raise ValueError("need three positive ellipsoid semi-axes")
        if self.background_conc < 0 or self.mu_body_per_mm < 0:
            raise ValueError("background concentration and attenuation must be nonnegative")
        a, b, c = self.semi_axes_mm
        amin = min(a, b, c)
        for s in self.spheres:
            if s.conc < 0:
                raise ValueError("sphere concentration must be nonnegative")
            x, y, z = s.center_mm
            # moving by r changes sqrt((x/a)^2+..) by at most r/amin, so this
            # bound guarantees the whole sphere stays inside the ellipsoid
            e = math.sqrt((x / a) ** 2 + (y / b) ** 2 + (z / c) ** 2)
            if e + s.radius_mm / amin > 1.0:
                raise ValueError(f"{s.radius_mm:.1f} mm sphere at {s.center_mm} pokes out of the ellipsoid")
        for i, si in enumerate(self.spheres):
            for sj in self.spheres[i + 1 :]:
                gap = math.dist(si.center_mm, sj.center_mm)
                if si.radius_mm + sj.radius_mm >= gap:
                    raise ValueError("spheres overlap")

    def to_dict(self) -> dict:
        return {
            "semi_axes_mm": list(self.semi_axes_mm),
            "background_conc": self.background_conc,
            "spheres": [
                {"center_mm": list(s.center_mm), "volume_ml": s.volume_ml, "conc": s.conc}
                for s in self.spheres
            ],
            "mu_body_per_mm": self.mu_body_per_mm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        return cls(
            semi_axes_mm=tuple(d["semi_axes_mm"]),
            background_conc=float(d["background_conc"]),
            spheres=[
                SphereSpec(tuple(s["center_mm"]), float(s["volume_ml"]), float(s["conc"]))
                for s in d["spheres"]
            ],
            mu_body_per_mm=float(d["mu_body_per_mm"]),
        )


@dataclass
class ImageVolume:
    """A nonnegative 3-D scalar field on a regular grid centered at the origin."""

    values: np.ndarray
    voxel_mm: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError("image must be 3-D")
        if min(self.values.shape) < 8:
            raise ValueError("image must be at least 8 voxels per axis")
        if np.isscalar(self.voxel_mm) or isinstance(self.voxel_mm, float):
            self.voxel_mm = (float(self.voxel_mm),) * 3
        else:
            self.voxel_mm = tuple(float(v) for v in self.voxel_mm)
        if len(self.voxel_mm) != 3 or min(self.voxel_mm) <= 0:
            raise ValueError("voxel size must be three positive lengths")
        if (self.values < 0).any():
            raise ValueError("image values must be nonnegative")

    @property
    def dims(self):
        return self.values.shape

    @property
    def voxel_iso_mm(self) -> float:
        v = self.voxel_mm
        if not (v[0] == v[1] == v[2]):
            raise ValueError("operation requires isotropic voxels")
        return v[0]

    def axis_coords(self, axis: int) -> np.ndarray:
        """Voxel-center physical coordinates along one axis, mm."""
        n = self.values.shape[axis]
        return (np.arange(n) - 0.5 * (n - 1)) * self.voxel_mm[axis]


@dataclass
class VoiMask:
    """A named boolean evaluation region on the phantom grid."""

    name: str
    values: np.ndarray
    role: str

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.dtype != bool or self.values.ndim != 3:
            raise ValueError("mask must be a boolean 3-D field")
        if self.role not in ("sphere", "background"):
            raise ValueError(f"unknown mask role {self.role!r}")
        if not self.values.any():
            raise ValueError(f"mask {self.name!r} is empty; grid too coarse for it")


@dataclass
class Phantom:
    """build_phantom output: activity, attenuation, and evaluation masks."""

    spec: PhantomSpec
    activity: ImageVolume
    mu_map: ImageVolume
    masks: list

    def sphere_masks(self):
        """Sphere masks sorted by ascending volume, as (volume_ml, mask) pairs."""
        pairs = [
            (s.volume_ml, m)
            for s, m in zip(self.spec.spheres, [m for m in self.masks if m.role == "sphere"])
        ]
        return sorted(pairs, key=lambda p: p[0])

    @property
    def background_mask(self) -> np.ndarray:
        return next(m for m in self.masks if m.role == "background").values


def _axis_fine(n: int, voxel: float, sub: int) -> np.ndarray:
    """Subvoxel sample positions along one axis (sub points per voxel), mm."""
    k = np.arange(n * sub)
    return (k // sub - 0.5 * (n - 1) + ((k % sub) + 0.5) / sub - 0.5) * voxel


def occupancy(dims, voxel_mm, center, semi, sub: int = 3) -> np.ndarray:
    """Fraction of each voxel inside the ellipsoid (center, semi), in [0, 1].

    Evaluated on a sub^3 grid per voxel, restricted to the shape's bounding
    box so small spheres cost little.
    """
    if sub < 1:
        raise ValueError("subsample factor must be >= 1")
    nx, ny, nz = dims
    occ = np.zeros((nx, ny, nz))
    spans = []
    for n, vox, c, s in zip(dims, voxel_mm, center, semi):
        centers = (np.arange(n) - 0.5 * (n - 1)) * vox
        lo = int(np.searchsorted(centers, c - s - vox))
        hi = int(np.searchsorted(centers, c + s + vox))
        if lo >= hi:
            return occ
        spans.append((lo, hi))
    (x0, x1), (y0, y1), (z0, z1) = spans
    fx = _axis_fine(nx, voxel_mm[0], sub)[x0 * sub : x1 * sub]
    fy = _axis_fine(ny, voxel_mm[1], sub)[y0 * sub : y1 * sub]
    fz = _axis_fine(nz, voxel_mm[2], sub)[z0 * sub : z1 * sub]
    qx = ((fx - center[0]) / semi[0]) ** 2
    qy = ((fy - center[1]) / semi[1]) ** 2
    qz = ((fz - center[2]) / semi[2]) ** 2
    inside = (qx[:, None, None] + qy[None, :, None] + qz[None, None, :]) <= 1.0
    block = inside.reshape(x1 - x0, sub, y1 - y0, sub, z1 - z0, sub)
    occ[x0:x1, y0:y1, z0:z1] = block.mean(axis=(1, 3, 5))
    return occ


def build_phantom(spec: PhantomSpec, dims=(128, 128, 128), voxel_mm=4.8, sub: int = 3) -> Phantom:
    """Voxelize a phantom spec onto a grid.

    Per-voxel activity is ``conc x voxel mL x occupancy``; sphere voxels use
    the sphere concentration, the rest of the ellipsoid the background one.
    Sphere masks take majority-occupied voxels.  The background mask keeps
    voxels at least 2 voxels inside the ellipsoid boundary and 2 voxels clear
    of every sphere surface, so neither edge falloff nor sphere spill-in
    contaminates background statistics.
    """
    spec.validate()
    if np.isscalar(voxel_mm) or isinstance(voxel_mm, float):
        voxel_mm = (float(voxel_mm),) * 3
    voxel_mm = tuple(float(v) for v in voxel_mm)
    half = 0.5 * np.asarray(dims) * np.asarray(voxel_mm)
    if (np.asarray(spec.semi_axes_mm) > half).any():
        raise ValueError("grid does not contain the ellipsoid")

    occ_ell = occupancy(dims, voxel_mm, (0.0, 0.0, 0.0), spec.semi_axes_mm, sub)
    occ_sph = [occupancy(dims, voxel_mm, s.center_mm, (s.radius_mm,) * 3, sub) for s in spec.spheres]
    total_sph = sum(occ_sph) if occ_sph else np.zeros(dims)

    voxel_ml = voxel_mm[0] * voxel_mm[1] * voxel_mm[2] / 1000.0
    conc = spec.background_conc * np.clip(occ_ell - total_sph, 0.0, None)
    for s, o in zip(spec.spheres, occ_sph):
        conc += s.conc * o
    activity = voxel_ml * conc
    mu = spec.mu_body_per_mm * occ_ell

    x = (np.arange(dims[0]) - 0.5 * (dims[0] - 1)) * voxel_mm[0]
    y = (np.arange(dims[1]) - 0.5 * (dims[1] - 1)) * voxel_mm[1]
    z = (np.arange(dims[2]) - 0.5 * (dims[2] - 1)) * voxel_mm[2]
    margin = 2.0 * max(voxel_mm)
    a, b, c = spec.semi_axes_mm
    if min(a, b, c) <= margin:
        raise ValueError("ellipsoid thinner than the background erosion margin")
    bkg = ((x[:, None, None] / (a - margin)) ** 2
           + (y[None, :, None] / (b - margin)) ** 2
           + (z[None, None, :] / (c - margin)) ** 2) <= 1.0
    for s in spec.spheres:
        d2 = ((x[:, None, None] - s.center_mm[0]) ** 2
              + (y[None, :, None] - s.center_mm[1]) ** 2
              + (z[None, None, :] - s.center_mm[2]) ** 2)
        bkg &= d2 > (s.radius_mm + margin) ** 2

    masks = [
        VoiMask(name=f"sphere_{s.volume_ml:g}ml", values=o > 0.5, role="sphere")
        for s, o in zip(spec.spheres, occ_sph)
    ]
    masks.append(VoiMask(name="background", values=bkg, role="background"))
    return Phantom(
        spec=spec,
        activity=ImageVolume(activity, voxel_mm),
        mu_map=ImageVolume(mu, voxel_mm),
        masks=masks,
    )
