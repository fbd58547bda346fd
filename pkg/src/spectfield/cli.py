"""Command-line pipeline: configuration, stage orchestration, manifests.

Every stage reads its inputs from container files and writes its outputs
back to them, so any artifact can be regenerated or swapped and the
pipeline re-entered at that boundary with identical downstream results.
Stage boundaries quantize arrays to 32-bit storage; all determinism
guarantees are stated at that precision.

Exit codes: 0 success, 2 configuration error, 3 container format error,
4 numeric failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import field as field_mod
from . import metrics as metrics_mod
from .container import container_read, container_write
from .errors import ConfigError, FormatError, NumericError
from .geometry import (CircularOrbit, EllipticalOrbit, ProjectionStack,
                       ScanGeometry, WINDOW_NAMES, make_geometry, split_views)
from .interp import REGIMES, assemble_regime, linear_interpolate_views
from .phantom import ImageVolume, Phantom, PhantomSpec, VoiMask, build_phantom
from .projector import SystemModel
from .recon import ReconConfig, osem, tew_scatter_estimate
from .simulate import ScatterParams, acquire

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


@dataclass
class ExperimentConfig:
    """Everything one experiment run depends on, JSON-serializable."""

    seed: int
    out_dir: str = "."
    n_views: int = 120
    orbit: dict = dc_field(default_factory=lambda: {
        "kind": "elliptical", "semi_a_mm": 150.0, "semi_b_mm": 110.0, "clearance_mm": 50.0})
    det_nu: int = 128
    det_nv: int = 128
    det_pixel_mm: float = 4.8
    count_target: float = 2e6
    psf_sigma0_mm: float = 4.0
    psf_slope: float = 0.02
    dfs: list = dc_field(default_factory=lambda: [2, 4, 8])
    phantom: PhantomSpec = dc_field(default_factory=PhantomSpec)
    scatter: ScatterParams = dc_field(default_factory=ScatterParams)
    train: field_mod.TrainConfig = dc_field(default_factory=field_mod.TrainConfig)
    recon: ReconConfig = dc_field(default_factory=ReconConfig)

    def validate(self) -> None:
        try:
            if self.seed is None:
                raise ValueError("a seed is required for reproducibility")
            int(self.seed)
            if self.n_views < 2:
                raise ValueError("need at least 2 views")
            if not self.dfs:
                raise ValueError("need at least one down-sampling factor")
            for df in self.dfs:
                if not 1 <= int(df) <= self.n_views:
                    raise ValueError(f"df {df} out of range for {self.n_views} views")
            self.build_orbit()
            self.phantom.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def build_orbit(self):
        kind = self.orbit.get("kind")
        if kind == "circular":
            return CircularOrbit(radius_mm=float(self.orbit["radius_mm"]))
        if kind == "elliptical":
            return EllipticalOrbit(
                semi_a_mm=float(self.orbit["semi_a_mm"]),
                semi_b_mm=float(self.orbit["semi_b_mm"]),
                clearance_mm=float(self.orbit.get("clearance_mm", 0.0)),
            )
        raise ValueError(f"unknown orbit kind {kind!r}")

    def build_geometry(self) -> ScanGeometry:
        return make_geometry(
            n_views=self.n_views, orbit=self.build_orbit(),
            det_nu=self.det_nu, det_nv=self.det_nv,
            det_pixel_mm=self.det_pixel_mm, n_windows=len(WINDOW_NAMES),
        )

    def grid_dims(self):
        return (self.det_nu, self.det_nu, self.det_nv)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "out_dir": self.out_dir,
            "n_views": self.n_views,
            "orbit": dict(self.orbit),
            "det_nu": self.det_nu,
            "det_nv": self.det_nv,
            "det_pixel_mm": self.det_pixel_mm,
            "count_target": self.count_target,
            "psf_sigma0_mm": self.psf_sigma0_mm,
            "psf_slope": self.psf_slope,
            "dfs": [int(d) for d in self.dfs],
            "phantom": self.phantom.to_dict(),
            "scatter": self.scatter.to_dict(),
            "train": self.train.to_dict(),
            "recon": self.recon.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            kw = dict(d)
            if "phantom_path" in kw:
                with open(kw.pop("phantom_path")) as f:
                    kw["phantom"] = json.load(f)
            if "phantom" in kw:
                kw["phantom"] = PhantomSpec.from_dict(kw["phantom"])
            if "scatter" in kw:
                kw["scatter"] = ScatterParams.from_dict(kw["scatter"])
            if "train" in kw:
                kw["train"] = field_mod.TrainConfig.from_dict(kw["train"])
            if "recon" in kw:
                kw["recon"] = ReconConfig.from_dict(kw["recon"])
            cfg = cls(**kw)
        except (TypeError, KeyError, ValueError, OSError) as e:
            raise ConfigError(f"bad experiment config: {e}") from e
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as f:
                d = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        return cls.from_dict(d)


def _train_seed(cfg: ExperimentConfig, df: int) -> int:
    """Stable per-DF training seed derived from the experiment seed."""
    ss = np.random.SeedSequence((int(cfg.seed), 7, int(df)))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# artifact files


def _paths(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_phantom(path, ph: Phantom) -> None:
    arrays = {
        "activity": ph.activity.values.astype(np.float32),
        "mu_map": ph.mu_map.values.astype(np.float32),
    }
    for m in ph.masks:
        arrays[f"mask_{m.name}"] = m.values.astype(np.int32)
    meta = {
        "phantom": ph.spec.to_dict(),
        "voxel_mm": list(ph.activity.voxel_mm),
        "masks": [{"name": m.name, "role": m.role} for m in ph.masks],
    }
    container_write(path, arrays, meta)


def _read_phantom(path) -> Phantom:
    arrays, meta = container_read(path)
    spec = PhantomSpec.from_dict(meta["phantom"])
    voxel = tuple(meta["voxel_mm"])
    masks = [
        VoiMask(name=m["name"], values=arrays[f"mask_{m['name']}"].astype(bool), role=m["role"])
        for m in meta["masks"]
    ]
    return Phantom(
        spec=spec,
        activity=ImageVolume(arrays["activity"].astype(np.float64), voxel),
        mu_map=ImageVolume(arrays["mu_map"].astype(np.float64), voxel),
        masks=masks,
    )


def _write_scan(path, acq, geometry: ScanGeometry) -> None:
    container_write(
        path,
        {
            "sampled": acq.full_scan.windows.astype(np.int32),
            "mean": acq.mean_stack.windows.astype(np.float32),
        },
        {
            "geometry": geometry.to_dict(),
            "window_names": list(acq.full_scan.window_names),
            "calibration": float(acq.calibration),
            "scale_factor": float(acq.scale_factor),
        },
    )


def _read_scan(path):
    arrays, meta = container_read(path)
    geometry = ScanGeometry.from_dict(meta["geometry"])
    names = tuple(meta["window_names"])
    idx = np.arange(geometry.n_views)
    full = ProjectionStack(geometry=geometry, view_indices=idx,
                           windows=arrays["sampled"], window_names=names, kind="sampled")
    mean = ProjectionStack(geometry=geometry, view_indices=idx.copy(),
                           windows=arrays["mean"].astype(np.float64),
                           window_names=names, kind="mean")
    return full, mean, float(meta["calibration"])


def _write_synth(path, stack: ProjectionStack) -> None:
    container_write(
        path,
        {"windows": np.asarray(stack.windows, dtype=np.float32)},
        {
            "view_indices": [int(v) for v in stack.view_indices],
            "window_names": list(stack.window_names),
            "geometry": stack.geometry.to_dict(),
        },
    )


def _read_synth(path) -> ProjectionStack:
    arrays, meta = container_read(path)
    return ProjectionStack(
        geometry=ScanGeometry.from_dict(meta["geometry"]),
        view_indices=np.asarray(meta["view_indices"], dtype=np.intp),
        windows=arrays["windows"].astype(np.float64),
        window_names=tuple(meta["window_names"]),
        kind="synthesized",
    )


def _write_model(path, model: field_mod.FieldModel, report, train_cfg) -> None:
    arrays = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w.astype(np.float32)
        arrays[f"b{i}"] = b.astype(np.float32)
    meta = {
        "layer_widths": model.layer_widths,
        "encoding": model.encoding,
        "n_frequencies": model.n_frequencies,
        "activation": model.activation,
        "train": train_cfg.to_dict(),
        # wall time is deliberately left out: artifact bytes must depend
        # only on config and seed
        "report": {
            "train_loss": report.train_loss,
            "val_loss": report.val_loss,
            "lr": report.lr,
            "best_epoch": report.best_epoch,
        },
    }
    container_write(path, arrays, meta)


def _read_model(path):
    arrays, meta = container_read(path)
    n_layers = len(meta["layer_widths"]) - 1
    weights = [arrays[f"w{i}"] for i in range(n_layers)]
    biases = [arrays[f"b{i}"] for i in range(n_layers)]
    model = field_mod.FieldModel(
        weights=weights, biases=biases,
        encoding=meta["encoding"], n_frequencies=int(meta["n_frequencies"]),
        activation=meta["activation"],
    )
    return model, meta


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# stages


def stage_phantom(cfg: ExperimentConfig):
    out = _paths(cfg)
    ph = build_phantom(cfg.phantom, dims=cfg.grid_dims(), voxel_mm=cfg.det_pixel_mm)
    _write_phantom(out / "phantom.spj", ph)
    return ["phantom.spj"]


def stage_simulate(cfg: ExperimentConfig):
    out = _paths(cfg)
    ph = _read_phantom(out / "phantom.spj")
    geometry = cfg.build_geometry()
    model = SystemModel(geometry=geometry, mu_map=ph.mu_map,
                        psf_sigma0=cfg.psf_sigma0_mm, psf_slope=cfg.psf_slope)
    split = split_views(geometry, 1)
    acq = acquire(ph.activity, model, cfg.scatter, split, seed=int(cfg.seed),
                  target_total=cfg.count_target)
    _write_scan(out / "scan.spj", acq, geometry)
    return ["scan.spj"]


def stage_train(cfg: ExperimentConfig, df: int):
    out = _paths(cfg)
    full, _, _ = _read_scan(out / "scan.spj")
    split = split_views(full.geometry, df)
    measured = full.restrict(split.measured)
    tc_dict = cfg.train.to_dict()
    tc_dict["seed"] = _train_seed(cfg, df)
    tc = field_mod.TrainConfig.from_dict(tc_dict)
    model, report = field_mod.train(measured, full.geometry, tc)
    _write_model(out / f"df{df}_model.spj", model, report, tc)
    loss_csv = out / f"df{df}_loss.csv"
    with open(loss_csv, "w") as f:
        f.write("epoch,train_loss,val_loss,lr\n")
        for e, (tl, vl, lr) in enumerate(zip(report.train_loss, report.val_loss, report.lr)):
            f.write(f"{e},{tl!r},{vl!r},{lr!r}\n")
    return [f"df{df}_model.spj", f"df{df}_loss.csv"]


def stage_synthesize(cfg: ExperimentConfig, df: int):
    out = _paths(cfg)
    full, _, _ = _read_scan(out / "scan.spj")
    model, meta = _read_model(out / f"df{df}_model.spj")
    split = split_views(full.geometry, df)
    upsample = int(meta["train"]["upsample"])
    stack = field_mod.synthesize(model, full.geometry, split.skipped, upsample=upsample,
                                 window_names=full.window_names)
    _write_synth(out / f"df{df}_synth_nerf.spj", stack)
    return [f"df{df}_synth_nerf.spj"]


def stage_interp(cfg: ExperimentConfig, df: int):
    out = _paths(cfg)
    full, _, _ = _read_scan(out / "scan.spj")
    split = split_views(full.geometry, df)
    measured = full.restrict(split.measured)
    stack = linear_interpolate_views(measured, split, full.geometry)
    _write_synth(out / f"df{df}_synth_linint.spj", stack)
    return [f"df{df}_synth_linint.spj"]


def _recon_path(df, regime) -> str:
    return "recon_full.spj" if regime == "full" else f"df{df}_recon_{regime}.spj"


def stage_recon(cfg: ExperimentConfig, df: int, regime: str):
    """One OSEM reconstruction; the full regime is DF-independent."""
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}")
    out = _paths(cfg)
    ph = _read_phantom(out / "phantom.spj")
    full, _, calibration = _read_scan(out / "scan.spj")
    geometry = full.geometry
    model = SystemModel(geometry=geometry, mu_map=ph.mu_map,
                        psf_sigma0=cfg.psf_sigma0_mm, psf_slope=cfg.psf_slope,
                        calibration=calibration)
    if regime == "full":
        stack, views = assemble_regime(full, None, None, "full")
    else:
        split = split_views(geometry, df)
        measured = full.restrict(split.measured)
        if regime == "partial":
            stack, views = assemble_regime(None, measured, None, "partial")
        else:
            synth = _read_synth(out / f"df{df}_synth_{regime}.spj")
            stack, views = assemble_regime(None, measured, synth, regime)
    r_bar = tew_scatter_estimate(
        stack.window("lower"), stack.window("upper"),
        w_low=cfg.scatter.w_low_kev, w_up=cfg.scatter.w_up_kev,
        w_peak=cfg.scatter.w_peak_kev,
    )
    rcfg = cfg.recon
    if rcfg.n_subsets > len(views):
        raise ConfigError(
            f"{rcfg.n_subsets} subsets need at least that many views; regime {regime} has {len(views)}")

    truth = ph.activity
    bkg = ph.background_mask
    curve_path = out / (f"ar_noise_{regime}.csv" if regime == "full"
                        else f"df{df}_ar_noise_{regime}.csv")
    curve = open(curve_path, "w")
    curve.write("iteration,voi,ar,std_bkg\n")

    def record(it, vol):
        sd = metrics_mod.bkg_std(vol, bkg)
        for volume_ml, mask in ph.sphere_masks():
            ar = metrics_mod.activity_recovery(vol, truth, mask)
            curve.write(f"{it},sphere_{volume_ml:g}ml,{ar!r},{sd!r}\n")

    try:
        vol = osem(stack, r_bar, model, views=views, config=rcfg, callback=record)
    finally:
        curve.close()
    name = _recon_path(df, regime)
    container_write(out / name, {"volume": vol.values.astype(np.float32)},
                    {"regime": regime, "df": 1 if regime == "full" else int(df),
                     "voxel_mm": list(vol.voxel_mm), "recon": rcfg.to_dict()})
    return [name, curve_path.name]


def stage_evaluate(cfg: ExperimentConfig):
    """Metrics table over every reconstruction plus synthesis quality rows."""
    out = _paths(cfg)
    ph = _read_phantom(out / "phantom.spj")
    full_scan, _, _ = _read_scan(out / "scan.spj")
    arrays, meta = container_read(out / "recon_full.spj")
    full_vol = ImageVolume(arrays["volume"].astype(np.float64), tuple(meta["voxel_mm"]))

    report = metrics_mod.MetricsReport()
    written = []
    for df in cfg.dfs:
        recons = {"full": full_vol}
        for regime in ("partial", "linint", "nerf"):
            arrays, meta = container_read(out / _recon_path(df, regime))
            recons[regime] = ImageVolume(arrays["volume"].astype(np.float64),
                                         tuple(meta["voxel_mm"]))
        part = metrics_mod.evaluate_regimes(recons, ph.activity, ph.masks, df=int(df))
        report.rows.extend(part.rows)

        split = split_views(full_scan.geometry, int(df))
        withheld = full_scan.restrict(split.skipped)
        for regime in ("linint", "nerf"):
            synth = _read_synth(out / f"df{df}_synth_{regime}.spj")
            err = metrics_mod.nrmsd(synth.peak, withheld.peak.astype(np.float64))
            report.add(regime=regime, df=int(df), voi="skipped_views", nrmsd=err)
        written.append(_write_profile(out, full_scan, df))
    report.write_csv(out / "metrics.csv")
    report.write_json(out / "metrics.json")
    return ["metrics.csv", "metrics.json"] + written


def _write_profile(out: Path, full_scan: ProjectionStack, df: int) -> str:
    """Central-row profile of the first skipped view: measured vs both syntheses."""
    split = split_views(full_scan.geometry, int(df))
    v = int(split.skipped[0])
    row = full_scan.geometry.det_nv // 2
    take = lambda stack: np.asarray(stack.restrict([v]).peak[0][:, row], dtype=np.float64)
    measured = take(full_scan)
    nerf = take(_read_synth(out / f"df{df}_synth_nerf.spj"))
    lin = take(_read_synth(out / f"df{df}_synth_linint.spj"))
    name = f"df{df}_profile.csv"
    with open(out / name, "w") as f:
        f.write("u,measured,nerf,linint\n")
        for u in range(len(measured)):
            f.write(f"{u},{measured[u]!r},{nerf[u]!r},{lin[u]!r}\n")
    return name


def run_pipeline(cfg: ExperimentConfig) -> dict:
    """phantom -> simulate -> per-DF synthesis -> reconstructions -> metrics.

    Returns the manifest dict (also written to ``manifest.json``): artifact
    paths with content hashes, the config, and the seed.  Rerunning with the
    same config and seed reproduces every hash.
    """
    out = _paths(cfg)
    artifacts = []
    stages = [("phantom", stage_phantom, ()), ("simulate", stage_simulate, ())]
    for df in cfg.dfs:
        d = int(df)
        stages += [
            (f"train[df={d}]", stage_train, (d,)),
            (f"synthesize[df={d}]", stage_synthesize, (d,)),
            (f"interp[df={d}]", stage_interp, (d,)),
        ]
    stages.append(("recon[full]", stage_recon, (1, "full")))
    for df in cfg.dfs:
        d = int(df)
        for regime in ("partial", "linint", "nerf"):
            stages.append((f"recon[{regime},df={d}]", stage_recon, (d, regime)))
    stages.append(("evaluate", stage_evaluate, ()))

    for name, fn, args in stages:
        try:
            artifacts.extend(fn(cfg, *args))
        except (ConfigError, FormatError, NumericError, ValueError) as e:
            raise e.__class__(f"[stage {name}] {e}") from e

    manifest = {
        "artifacts": {rel: _sha256(out / rel) for rel in sorted(set(artifacts))},
        "config": cfg.to_dict(),
        "seed": int(cfg.seed),
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# command line


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spectfield",
        description="Sparse-view SPECT simulation, view synthesis, and reconstruction.",
    )
    p.add_argument("command", choices=[
        "phantom", "simulate", "train", "synthesize", "interp", "recon",
        "evaluate", "pipeline"])
    p.add_argument("--config", help="experiment config JSON; defaults apply if omitted")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--df", help="comma-separated down-sampling factors, e.g. 2,4")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--regime", choices=list(REGIMES),
                   help="recon only: reconstruct a single regime")
    p.add_argument("--threads", type=int, help="cap numerical library threads")
    return p


def _apply_overrides(cfg_dict: dict, args) -> dict:
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.out is not None:
        cfg_dict["out_dir"] = args.out
    if args.df is not None:
        try:
            cfg_dict["dfs"] = [int(tok) for tok in args.df.split(",") if tok]
        except ValueError as e:
            raise ConfigError(f"bad --df list {args.df!r}: {e}") from e
    return cfg_dict


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            import threadpoolctl
            threadpoolctl.threadpool_limits(limits=args.threads)
        if args.config is not None:
            with open(args.config) as f:
                cfg_dict = json.load(f)
        else:
            cfg_dict = {"seed": None}
        if not isinstance(cfg_dict, dict):
            raise ConfigError("config root must be a JSON object")
        if cfg_dict.get("seed") is None and args.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        cfg = ExperimentConfig.from_dict(_apply_overrides(cfg_dict, args))

        if args.command == "pipeline":
            run_pipeline(cfg)
        elif args.command == "phantom":
            stage_phantom(cfg)
        elif args.command == "simulate":
            stage_simulate(cfg)
        elif args.command in ("train", "synthesize", "interp"):
            fn = {"train": stage_train, "synthesize": stage_synthesize,
                  "interp": stage_interp}[args.command]
            for df in cfg.dfs:
                fn(cfg, int(df))
        elif args.command == "recon":
            regimes = [args.regime] if args.regime else list(REGIMES)
            if "full" in regimes:
                stage_recon(cfg, 1, "full")
            for df in cfg.dfs:
                for regime in regimes:
                    if regime != "full":
                        stage_recon(cfg, int(df), regime)
        elif args.command == "evaluate":
            stage_evaluate(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except json.JSONDecodeError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
