"""Linear angular interpolation baseline and per-regime view assembly.

The four reconstruction regimes share one entry point: ``full`` uses every
acquired view, ``partial`` only the measured subset, and ``linint``/``nerf``
fill the skipped angles with interpolated or field-synthesized views while
keeping the measured data untouched at measured angles.
"""

from __future__ import annotations

import numpy as np

from .geometry import ProjectionStack, ScanGeometry, ViewSplit

REGIMES = ("full", "partial", "linint", "nerf")


def linear_interpolate_views(
    measured: ProjectionStack, split: ViewSplit, geometry: ScanGeometry
) -> ProjectionStack:
    """Fill skipped views by angle-linear blending of bracketing measured views.

    Every energy window is interpolated the same way.  The angle domain is
    circular: the bracket of an angle beyond the last measured view wraps to
    the first one plus 360 degrees.
    """
    if len(measured.view_indices) < 2:
        raise ValueError("need at least 2 measured views to interpolate")
    if not np.array_equal(measured.view_indices, split.measured):
        raise ValueError("measured stack does not match the view split")
    if len(split.skipped) == 0:
        raise ValueError("split has no skipped views to synthesize")
    ma = geometry.view_angles_deg[split.measured]
    data = np.asarray(measured.windows, dtype=np.float64)
    m = len(ma)
    out = np.empty((data.shape[0], len(split.skipped), geometry.det_nu, geometry.det_nv))
    for k, v in enumerate(split.skipped):
        theta = geometry.view_angles_deg[v]
        pos = int(np.searchsorted(ma, theta))
        lo = (pos - 1) % m
        hi = pos % m
        th_lo = ma[lo] if pos > 0 else ma[lo] - 360.0
        th_hi = ma[hi] if pos < m else ma[hi] + 360.0
        w = (theta - th_lo) / (th_hi - th_lo)
        # a + w(b - a) rather than (1-w)a + wb: identical brackets then
        # reproduce their value bit-exactly for any w
        out[:, k] = data[:, lo] + w * (data[:, hi] - data[:, lo])
    return ProjectionStack(
        geometry=geometry,
        view_indices=split.skipped.copy(),
        windows=out,
        window_names=measured.window_names,
        kind="synthesized",
    )


def assemble_regime(full, measured, synthesized, regime: str):
    """Stack-plus-view-list for one reconstruction regime.

    Returns ``(stack, view_indices)``.  ``full`` needs the full scan;
    ``partial`` needs the measured subset; ``linint``/``nerf`` splice the
    measured views with a synthesized stack covering exactly the complement,
    and the measured pixels pass through bit-equal (as float).
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if regime == "full":
        if full is None:
            raise ValueError("full regime requires the full scan")
        return full, full.view_indices.copy()
    if measured is None:
        raise ValueError(f"{regime} regime requires the measured subset")
    if regime == "partial":
        return measured, measured.view_indices.copy()
    if synthesized is None:
        raise ValueError(f"{regime} regime requires a synthesized stack")
    g = measured.geometry
    idx = np.concatenate([measured.view_indices, synthesized.view_indices])
    order = np.argsort(idx, kind="stable")
    if not np.array_equal(np.sort(idx), np.arange(g.n_views)):
        raise ValueError("measured and synthesized views do not partition the view set")
    if measured.window_names != synthesized.window_names:
        raise ValueError("window labels differ between measured and synthesized stacks")
    windows = np.concatenate(
        [np.asarray(measured.windows, dtype=np.float64),
         np.asarray(synthesized.windows, dtype=np.float64)],
        axis=1,
    )[:, order]
    stack = ProjectionStack(
        geometry=g,
        view_indices=idx[order],
        windows=windows,
        window_names=measured.window_names,
        kind="synthesized",
    )
    return stack, stack.view_indices.copy()
