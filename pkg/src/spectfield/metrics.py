"""Quantitative evaluation: NRMSD, activity recovery, CNR, profiles.

Conventions: activity recovery compares mean reconstructed to mean true
values inside a region; background noise is the population (divide-by-n)
standard deviation over the background mask; relative CNR is expressed in
percent of the full-data reconstruction, which is 100 by definition for the
full regime itself.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = ("regime", "df", "voi", "nrmsd", "ar", "arnr", "cnr", "rcnr", "std_bkg")


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def nrmsd(estimate, reference, region=None) -> float:
    """Root-mean-square difference over a region, relative to the reference RMS."""
    est = _values(estimate)
    ref = _values(reference)
    if est.shape != ref.shape:
        raise ValueError("estimate and reference shapes must match")
    if region is not None:
        region = np.asarray(getattr(region, "values", region))
        if region.shape != ref.shape or region.dtype != bool:
            raise ValueError("region must be a boolean mask matching the data")
        est = est[region]
        ref = ref[region]
    if est.size == 0:
        raise ValueError("empty region")
    ref_rms = float(np.sqrt(np.mean(ref * ref)))
    if ref_rms == 0.0:
        raise ValueError("reference is zero over the region")
    return float(np.sqrt(np.mean((est - ref) ** 2))) / ref_rms


def activity_recovery(recon, truth, voi) -> float:
    """Mean reconstructed value over the VOI divided by mean true value."""
    rec = _values(recon)
    tru = _values(truth)
    m = np.asarray(getattr(voi, "values", voi))
    if m.dtype != bool or m.shape != rec.shape or m.shape != tru.shape:
        raise ValueError("VOI must be a boolean mask matching both volumes")
    if not m.any():
        raise ValueError("empty VOI")
    truth_mean = float(tru[m].mean())
    if truth_mean <= 0:
        raise ValueError("true activity in the VOI must be positive")
    return float(rec[m].mean()) / truth_mean


def bkg_std(recon, bkg_mask) -> float:
    """Population standard deviation of reconstructed values over the background."""
    rec = _values(recon)
    m = np.asarray(getattr(bkg_mask, "values", bkg_mask))
    if m.dtype != bool or m.shape != rec.shape:
        raise ValueError("background must be a boolean mask matching the volume")
    vals = rec[m]
    if vals.size < 2:
        raise ValueError("background mask needs at least 2 voxels")
    return float(vals.std())


def arnr(ar: float, std_bkg: float) -> float:
    """Activity recovery per unit of background noise."""
    if std_bkg <= 0:
        raise ValueError("background standard deviation must be positive")
    return ar / std_bkg


def cnr(recon, voi, bkg) -> float:
    """(VOI mean - background mean) / background standard deviation."""
    rec = _values(recon)
    mv = np.asarray(getattr(voi, "values", voi))
    mb = np.asarray(getattr(bkg, "values", bkg))
    if mv.dtype != bool or mb.dtype != bool or mv.shape != rec.shape or mb.shape != rec.shape:
        raise ValueError("VOI and background must be boolean masks matching the volume")
    if not mv.any():
        raise ValueError("empty VOI")
    sd = bkg_std(rec, mb)
    if sd == 0:
        raise ValueError("background standard deviation is zero")
    return (float(rec[mv].mean()) - float(rec[mb].mean())) / sd


def rcnr(cnr_sparse: float, cnr_full: float) -> float:
    """CNR as a percentage of the full-data reconstruction's CNR."""
    if cnr_full == 0:
        raise ValueError("full-regime CNR is zero; relative CNR undefined")
    return 100.0 * cnr_sparse / cnr_full


def line_profile(view: np.ndarray, start, end):
    """Pixel values along the discrete segment from start to end, inclusive.

    Steps one pixel at a time along the dominant axis; returns
    ``(coords (n, 2) int array, values (n,))``.  A horizontal or vertical
    segment reproduces the corresponding array slice verbatim.
    """
    view = np.asarray(view)
    if view.ndim != 2:
        raise ValueError("profile requires a 2-D view")
    i0, j0 = (int(c) for c in start)
    i1, j1 = (int(c) for c in end)
    for i, j in ((i0, j0), (i1, j1)):
        if not (0 <= i < view.shape[0] and 0 <= j < view.shape[1]):
            raise ValueError(f"endpoint ({i}, {j}) outside the view {view.shape}")
    n = max(abs(i1 - i0), abs(j1 - j0)) + 1
    ii = np.rint(np.linspace(i0, i1, n)).astype(np.intp)
    jj = np.rint(np.linspace(j0, j1, n)).astype(np.intp)
    coords = np.column_stack([ii, jj])
    return coords, view[ii, jj]


def count_local_maxima(values: np.ndarray, min_height_frac: float = 0.1) -> int:
    """Strict interior local maxima above a fraction of the global peak.

    A plateau (equal neighbors) does not count; intended for comparing peak
    multiplicity between synthesized-view profiles.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 3:
        return 0
    floor = min_height_frac * v.max()
    inner = v[1:-1]
    hits = (inner > v[:-2]) & (inner > v[2:]) & (inner > floor)
    return int(hits.sum())


@dataclass
class MetricsReport:
    """Flat evaluation table: one row per (regime, DF, VOI)."""

    rows: list = field(default_factory=list)

    def add(self, **kw) -> None:
        row = {k: kw.get(k) for k in CSV_COLUMNS}
        self.rows.append(row)

    def select(self, **kw) -> list:
        out = []
        for row in self.rows:
            if all(row.get(k) == v for k, v in kw.items()):
                out.append(row)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: ("" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else row[k])
                            for k in CSV_COLUMNS})

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"rows": self.rows}, f, sort_keys=True, indent=1)
            f.write("\n")

    @classmethod
    def read_csv(cls, path) -> "MetricsReport":
        rep = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                parsed = {}
                for k in CSV_COLUMNS:
                    val = row.get(k, "")
                    if k in ("regime", "voi"):
                        parsed[k] = val
                    elif val == "" or val is None:
                        parsed[k] = None
                    elif k == "df":
                        parsed[k] = int(val)
                    else:
                        parsed[k] = float(val)
                rep.rows.append(parsed)
        return rep


def evaluate_regimes(recons: dict, truth, masks, df: int) -> MetricsReport:
    """Per-sphere metrics for a set of reconstructions sharing one phantom.

    ``recons`` maps regime name to ImageVolume and must include ``full``
    (the relative-CNR reference).  ``masks`` is the phantom's mask list;
    sphere rows keep the list's order, regimes are alphabetical.
    """
    if "full" not in recons:
        raise ValueError("relative CNR needs the full regime present")
    bkg = next(m for m in masks if m.role == "background")
    spheres = [m for m in masks if m.role == "sphere"]

    full_cnr = {}
    for m in spheres:
        full_cnr[m.name] = cnr(recons["full"], m, bkg)

    report = MetricsReport()
    for regime in sorted(recons):
        vol = recons[regime]
        sd = bkg_std(vol, bkg)
        for m in spheres:
            ar = activity_recovery(vol, truth, m)
            c = cnr(vol, m, bkg)
            report.add(
                regime=regime,
                df=df,
                voi=m.name,
                nrmsd=nrmsd(vol, truth, m),
                ar=ar,
                arnr=arnr(ar, sd),
                cnr=c,
                rcnr=rcnr(c, full_cnr[m.name]),
                std_bkg=sd,
            )
    return report
