"""Command-line front end tying the modules into reproducible pipelines.

Exit codes: 0 success, 2 configuration error, 3 stage failure.  The
PCBD_THREADS environment variable caps the BLAS worker count; it must be
honored before numpy loads, which is why this module sets the thread
environment at import time.
"""

from __future__ import annotations

import os

if "PCBD_THREADS" in os.environ:  # must precede the numpy import chain
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["PCBD_THREADS"])

import argparse
import csv
import json
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np

from . import ae as ae_mod
from . import cloud as cloud_mod
from . import defenses as defenses_mod
from . import sht as sht_mod
from . import spectral as spectral_mod
from . import triggers as triggers_mod
from . import victims as victims_mod
from .config import ExperimentConfig, RunManifest, SCHEMA_VERSION
from .errors import ConfigError, NothingToPoison, PcbdError, StageError
from .metrics import chamfer
from .rng import SeededRng


def _prepare_out(path: Path, overwrite: bool, directory: bool = False) -> Path:
    if path.exists() and not overwrite:
        raise ConfigError(f"output {path} exists; pass --overwrite to replace it")
    if directory:
        path.mkdir(parents=True, exist_ok=True)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _stamp(cfg: ExperimentConfig) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.hash()}


def _write_csv(path, header: list[str], rows, stamp: dict) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write(f"# seed={stamp['seed']} config_hash={stamp['config_hash']}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# stages (shared between the single commands and full-run)
# ---------------------------------------------------------------------------

def stage_gen_data(cfg: ExperimentConfig, out_dir: Path) -> tuple[Path, Path]:
    base = SeededRng(cfg.seed)
    train = cloud_mod.synth_dataset(
        cfg.dataset.classes, cfg.dataset.per_class_train, cfg.dataset.n_points,
        base.derive(1), split="train",
    )
    test = cloud_mod.synth_dataset(
        cfg.dataset.classes, cfg.dataset.per_class_test, cfg.dataset.n_points,
        base.derive(2), split="test",
    )
    train_dir, test_dir = out_dir / "train", out_dir / "test"
    cloud_mod.save_dataset(train, train_dir)
    cloud_mod.save_dataset(test, test_dir)
    for d in (train_dir, test_dir):
        _annotate_manifest(d, cfg)
    return train_dir, test_dir


def _annotate_manifest(dataset_dir: Path, cfg: ExperimentConfig) -> None:
    mpath = dataset_dir / cloud_mod.DATASET_MANIFEST
    with open(mpath, "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    manifest.update(_stamp(cfg))
    with open(mpath, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def stage_train_ae(cfg: ExperimentConfig, train_dir: Path, out: Path):
    train = cloud_mod.load_dataset(train_dir)
    model = ae_mod.train_ae(train, cfg.ae, SeededRng(cfg.seed).derive(3))
    ae_mod.save_ae(model, out, extra=_stamp(cfg))
    return model


def stage_poison(cfg: ExperimentConfig, train_dir: Path, out_dir: Path,
                 ae_model=None):
    train = cloud_mod.load_dataset(train_dir)
    plan = cfg.poison_plan()
    poisoned, indices = victims_mod.poison_dataset(train, plan, ae_model)
    cloud_mod.save_dataset(poisoned, out_dir)
    _annotate_manifest(out_dir, cfg)
    with open(out_dir / "poisoned_indices.json", "w", encoding="ascii") as fh:
        json.dump(
            {"indices": [int(i) for i in indices], **_stamp(cfg)},
            fh, indent=1, sort_keys=True,
        )
        fh.write("\n")
    return poisoned, indices


def stage_train_victim(cfg: ExperimentConfig, data_dir: Path, out: Path):
    data = cloud_mod.load_dataset(data_dir)
    model = victims_mod.train_victim(
        data, cfg.victim, SeededRng(cfg.seed).derive(4),
        augmentations=cfg.augmentations or None,
    )
    victims_mod.save_victim(model, out, extra=_stamp(cfg))
    return model


def stage_eval(cfg: ExperimentConfig, victim, test_dir: Path, out_json: Path,
               ae_model=None) -> dict:
    test = cloud_mod.load_dataset(test_dir)
    result = victims_mod.evaluate_attack(
        victim, test, cfg.trigger, int(cfg.poison["target_label"]),
        ae_model=ae_model, poison=dict(cfg.poison), seed=cfg.seed,
        config_hash=cfg.hash(),
    )
    report = result.to_dict()
    imp = report["imperceptibility"]
    with open(out_json, "w", encoding="ascii") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    csv_path = out_json.with_suffix(".csv")
    _write_csv(
        csv_path,
        ["metric", "value"],
        [
            ["acc", f"{report['acc']:.6f}"],
            ["asr", f"{report['asr']:.6f}"],
            ["asr_all", f"{report['asr_all']:.6f}"],
            ["cd", f"{imp['cd']:.9f}"],
            ["swd", "" if imp["swd"] is None else f"{imp['swd']:.9f}"],
            ["wd_exact", "" if imp["wd_exact"] is None else f"{imp['wd_exact']:.9f}"],
            ["hd", f"{imp['hd']:.9f}"],
        ],
        _stamp(cfg),
    )
    return report


def format_report(report: dict) -> str:
    """Human-readable summary; display scalings applied only here."""
    imp = report["imperceptibility"]
    lines = [
        f"clean ACC        : {report['acc'] * 100:.1f}%",
        f"ASR (non-target) : {report['asr'] * 100:.1f}%",
        f"ASR (all)        : {report['asr_all'] * 100:.1f}%",
        f"CD x100          : {imp['cd'] * 100:.3f}",
    ]
    if imp.get("wd_exact") is not None:
        lines.append(f"WD x0.1 (exact)  : {imp['wd_exact'] * 0.1:.4f}")
    if imp.get("swd") is not None:
        lines.append(f"SWD (raw)        : {imp['swd']:.5f}")
    lines.append(f"HD               : {imp['hd']:.4f}")
    return "\n".join(lines)


def stage_analyze(cfg: ExperimentConfig, test_dir: Path, plots: Path,
                  victim=None, ae_model=None) -> None:
    test = cloud_mod.load_dataset(test_dir)
    stamp = _stamp(cfg)
    sample = test.clouds[: cfg.analysis.eval_clouds]

    # band profiles per trigger (qualitative frequency fingerprint)
    rows = []
    for name in cfg.analysis.band_triggers:
        spec = _trigger_by_name(cfg, name)
        profiles = []
        for i, c in enumerate(sample):
            trig = triggers_mod.apply_trigger(spec, c, ae_model, instance=i)
            res = spectral_mod.residual_spectrum(c, trig, k=cfg.analysis.gft_k)
            profiles.append(spectral_mod.band_profile(res).fractions)
        mean = np.mean(profiles, axis=0)
        rows.extend(
            [name, band, f"{frac:.6f}"]
            for band, frac in zip(spectral_mod.BAND_NAMES, mean)
        )
    _write_csv(plots / "band_profiles.csv", ["trigger", "band", "fraction"],
               rows, stamp)

    # reconstruction error vs max order
    rows = []
    for n_l in cfg.analysis.n_l_sweep:
        scfg = _smoothing_with(cfg, n_max=n_l)
        errs = [chamfer(c, sht_mod.reproduce(c, scfg)) for c in sample]
        rows.append([n_l, f"{float(np.mean(errs)):.9f}"])
    _write_csv(plots / "err_vs_nl.csv", ["n_l", "mean_cd"], rows, stamp)

    # trigger-intensity sweeps
    if ae_model is not None:
        cd_rows, asr_rows = [], []
        target = int(cfg.poison["target_label"])
        for t in cfg.analysis.t_sweep:
            spec = triggers_mod.TriggerSpec(
                "iba", seed=cfg.trigger.seed, smoothing_t=float(t),
                smoothing_n_max=cfg.smoothing.n_max,
            )
            cds = [
                chamfer(c, triggers_mod.apply_trigger(spec, c, ae_model, i))
                for i, c in enumerate(sample)
            ]
            cd_rows.append([f"{t:.2f}", f"{float(np.mean(cds)):.9f}"])
            if victim is not None:
                asr = victims_mod.eval_asr(victim, test, spec, target, ae_model)
                asr_rows.append([f"{t:.2f}", f"{asr.asr:.6f}", f"{asr.asr_all:.6f}"])
        _write_csv(plots / "cd_vs_t.csv", ["t", "mean_cd"], cd_rows, stamp)
        if victim is not None:
            _write_csv(plots / "asr_vs_t.csv", ["t", "asr", "asr_all"],
                       asr_rows, stamp)


def _trigger_by_name(cfg: ExperimentConfig, name: str):
    if name == cfg.trigger.variant:
        return cfg.trigger
    return triggers_mod.TriggerSpec(name, seed=cfg.trigger.seed)


def _smoothing_with(cfg: ExperimentConfig, **kw) -> sht_mod.SmoothingConfig:
    base = cfg.smoothing
    merged = dict(
        n_max=base.n_max, grid=base.grid, seed=base.seed, mode=base.mode,
        collision=base.collision, ridge=base.ridge,
        spline_scale=base.spline_scale,
    )
    merged.update(kw)
    return sht_mod.SmoothingConfig(**merged)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = _prepare_out(Path(args.out), args.overwrite, directory=True)
    stage_gen_data(cfg, out)
    print(f"wrote train/ and test/ under {out}")
    return 0


def cmd_train_ae(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = _prepare_out(Path(args.out), args.overwrite)
    model = stage_train_ae(cfg, Path(args.data), out)
    print(f"trained {cfg.ae.epochs} epochs; final loss "
          f"{model.train_log[-1]:.6f}; saved {out}")
    return 0


def cmd_reconstruct(args) -> int:
    model = ae_mod.load_ae(args.ae)
    cloud = cloud_mod.load_xyz(args.input)
    recon = ae_mod.implant_iba(model, cloud)
    out = _prepare_out(Path(args.out), args.overwrite)
    cloud_mod.save_xyz(recon, out)
    print(f"reconstruction CD {chamfer(cloud, recon):.6f}; saved {out}")
    return 0


def _trigger_from_args(cfg: ExperimentConfig, args) -> None:
    if getattr(args, "trigger", None):
        overrides = {"variant": args.trigger, "seed": cfg.trigger.seed}
        if args.trigger_t is not None:
            overrides["smoothing_t"] = args.trigger_t
        if args.sigma is not None:
            overrides["sigma"] = args.sigma
        if args.angles is not None:
            overrides["angles"] = tuple(args.angles)
        if args.radius is not None:
            overrides["radius"] = args.radius
        if args.fraction is not None:
            overrides["fraction"] = args.fraction
        cfg.trigger = triggers_mod.TriggerSpec(**overrides)


def cmd_poison(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    _trigger_from_args(cfg, args)
    ae_model = ae_mod.load_ae(args.ae) if args.ae else None
    if cfg.trigger.variant == "iba" and ae_model is None:
        raise ConfigError("iba trigger needs --ae CHECKPOINT")
    out = _prepare_out(Path(args.out), args.overwrite, directory=True)
    _, indices = stage_poison(cfg, Path(args.data), out, ae_model)
    print(f"poisoned {len(indices)} entries -> {out}")
    return 0


def cmd_train_victim(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.augment:
        cfg.augmentations = tuple(
            defenses_mod.AugmentationSpec(v) for v in args.augment
        )
    out = _prepare_out(Path(args.out), args.overwrite)
    model = stage_train_victim(cfg, Path(args.data), out)
    print(f"trained victim ({cfg.victim.architecture}); final train acc "
          f"{model.train_log[-1]['acc']:.3f}; saved {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    _trigger_from_args(cfg, args)
    victim = victims_mod.load_victim(args.victim)
    ae_model = ae_mod.load_ae(args.ae) if args.ae else None
    if cfg.trigger.variant == "iba" and ae_model is None:
        raise ConfigError("iba trigger needs --ae CHECKPOINT")
    out = _prepare_out(Path(args.out), args.overwrite)
    report = stage_eval(cfg, victim, Path(args.test), out, ae_model)
    print(format_report(report))
    return 0


def cmd_defend(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    cloud = cloud_mod.load_xyz(args.input)
    if args.sor:
        result = defenses_mod.sor(cloud)
        what = f"sor kept {result.n}/{cloud.n} points"
    elif args.lpf is not None:
        result = defenses_mod.lpf_defense(
            cloud, args.lpf, _smoothing_with(cfg)
        )
        what = f"lpf l_cut={args.lpf} kept {result.n} cells"
    elif args.augment:
        spec = defenses_mod.AugmentationSpec(args.augment, seed=cfg.seed)
        result = defenses_mod.augment(cloud, spec)
        what = f"augment {args.augment}"
    else:
        raise ConfigError("choose one of --sor, --lpf L, --augment VARIANT")
    out = _prepare_out(Path(args.out), args.overwrite)
    cloud_mod.save_xyz(result, out)
    print(f"{what}; saved {out}")
    return 0


def cmd_detect(args) -> int:
    victim = victims_mod.load_victim(args.victim)
    cloud = cloud_mod.load_xyz(args.input)
    out = _prepare_out(Path(args.out), args.overwrite)
    if args.mode == "saliency":
        res = defenses_mod.saliency(victim, cloud, args.label)
        values = res.values
    else:
        res = defenses_mod.grad_cam(
            victim, cloud, args.label, counterfactual=args.counterfactual
        )
        values = res.values
    with open(out, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "value"])
        writer.writerows([i, f"{v:.9g}"] for i, v in enumerate(values))
    print(f"{args.mode} for label {args.label}; saved {out}")
    return 0


def cmd_analyze(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.what != "gft":
        raise ConfigError(f"unknown analysis {args.what!r}")
    _trigger_from_args(cfg, args)
    ae_model = ae_mod.load_ae(args.ae) if args.ae else None
    if cfg.trigger.variant == "iba" and ae_model is None:
        raise ConfigError("iba trigger needs --ae CHECKPOINT")
    test = cloud_mod.load_dataset(args.data)
    sample = test.clouds[: cfg.analysis.eval_clouds]
    profiles = []
    for i, c in enumerate(sample):
        trig = triggers_mod.apply_trigger(cfg.trigger, c, ae_model, instance=i)
        res = spectral_mod.residual_spectrum(c, trig, k=cfg.analysis.gft_k)
        profiles.append(spectral_mod.band_profile(res).fractions)
    mean = np.mean(profiles, axis=0)
    out = _prepare_out(Path(args.out), args.overwrite)
    _write_csv(
        out, ["band", "fraction"],
        [[b, f"{f:.6f}"] for b, f in zip(spectral_mod.BAND_NAMES, mean)],
        _stamp(cfg),
    )
    print(f"mean band profile ({cfg.trigger.variant}) over {len(sample)} "
          f"clouds; saved {out}")
    return 0


def cmd_smooth(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    ae_model = ae_mod.load_ae(args.ae)
    cloud = cloud_mod.load_xyz(args.input)
    scfg = _smoothing_with(cfg, n_max=args.nl)
    result = sht_mod.homotopy(
        lambda c: ae_mod.implant_iba(ae_model, c), cloud, args.t, scfg
    )
    out = _prepare_out(Path(args.out), args.overwrite)
    cloud_mod.save_xyz(result, out)
    print(f"homotopy t={args.t} n_l={args.nl}; CD to input "
          f"{chamfer(cloud, result):.6f}; saved {out}")
    if args.spectrum:
        field = sht_mod.to_spherical_field(cloud, scfg.grid, scfg.collision)
        spec = sht_mod.analyze(field, scfg.n_max, scfg.mode, scfg.ridge)
        spath = _prepare_out(Path(args.spectrum), args.overwrite)
        _write_csv(
            spath, ["l", "m", "re", "im"],
            [[l, m, f"{re:.9g}", f"{im:.9g}"]
             for l, m, re, im in sht_mod.spectrum_to_rows(spec)],
            _stamp(cfg),
        )
        print(f"spectrum saved {spath}")
    return 0


def cmd_full_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    base = Path(args.out)
    if args.run_dir:
        run_dir = base / args.run_dir
        _prepare_out(run_dir, args.overwrite, directory=True)
    else:
        stamp_name = datetime.now().strftime("run-%Y%m%d-%H%M%S")
        run_dir = base / stamp_name
        if run_dir.exists():
            raise ConfigError(f"{run_dir} already exists")
        run_dir.mkdir(parents=True)
    manifest = RunManifest(config=cfg.to_dict(), config_hash=cfg.hash(),
                           seed=cfg.seed)
    cfg.save(run_dir / "config.json")
    plots = run_dir / "plots"
    plots.mkdir(exist_ok=True)

    stages = []

    def run_stage(name, fn):
        t0 = time.time()
        try:
            result = fn()
        except PcbdError as exc:
            raise StageError(name, exc)
        manifest.time(name, time.time() - t0)
        stages.append(name)
        print(f"[{name}] done in {time.time() - t0:.1f}s")
        return result

    data_dir = run_dir / "data"
    train_dir, test_dir = run_stage(
        "gen-data", lambda: stage_gen_data(cfg, data_dir)
    )
    manifest.record("data", data_dir)
    ae_model = run_stage(
        "train-ae", lambda: stage_train_ae(cfg, train_dir, run_dir / "ae.pcbd")
    )
    manifest.record("ae", run_dir / "ae.pcbd")
    run_stage(
        "poison",
        lambda: stage_poison(cfg, train_dir, run_dir / "poisoned", ae_model),
    )
    manifest.record("poisoned", run_dir / "poisoned")
    victim = run_stage(
        "train-victim",
        lambda: stage_train_victim(cfg, run_dir / "poisoned",
                                   run_dir / "victim.pcbd"),
    )
    manifest.record("victim", run_dir / "victim.pcbd")
    report = run_stage(
        "eval",
        lambda: stage_eval(cfg, victim, test_dir, run_dir / "report.json",
                           ae_model),
    )
    manifest.record("report", run_dir / "report.json")
    run_stage(
        "analyze",
        lambda: stage_analyze(cfg, test_dir, plots, victim, ae_model),
    )
    manifest.record("plots", plots)
    manifest.save(run_dir / "manifest.json")
    print(format_report(report))
    print(f"artifacts in {run_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcbd",
        description="Desk-scale point-cloud backdoor laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--overwrite", action="store_true",
                       help="replace existing outputs")

    p = sub.add_parser("gen-data", help="generate the synthetic datasets")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-ae", help="train the folding autoencoder")
    common(p)
    p.add_argument("--data", required=True, help="training dataset directory")
    p.set_defaults(fn=cmd_train_ae)

    p = sub.add_parser("reconstruct", help="run a cloud through the AE")
    p.add_argument("--ae", required=True)
    p.add_argument("--input", required=True, help=".xyz file")
    common(p, config=False)
    p.set_defaults(fn=cmd_reconstruct)

    def trigger_flags(p):
        p.add_argument("--trigger",
                       choices=list(triggers_mod.VARIANTS), default=None)
        p.add_argument("--trigger-t", type=float, default=None,
                       help="smoothing intensity for iba")
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--angles", type=float, nargs=3, default=None)
        p.add_argument("--radius", type=float, default=None)
        p.add_argument("--fraction", type=float, default=None)

    p = sub.add_parser("poison", help="poison a training dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ae", default=None)
    trigger_flags(p)
    p.set_defaults(fn=cmd_poison)

    p = sub.add_parser("train-victim", help="train a classifier")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--augment", action="append", default=None,
                   choices=list(defenses_mod.AUG_VARIANTS),
                   help="online training augmentation (repeatable)")
    p.set_defaults(fn=cmd_train_victim)

    p = sub.add_parser("eval", help="evaluate ACC/ASR/imperceptibility")
    common(p)
    p.add_argument("--victim", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--ae", default=None)
    trigger_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("defend", help="apply a defense to one cloud")
    common(p)
    p.add_argument("--input", required=True, help=".xyz file")
    p.add_argument("--sor", action="store_true")
    p.add_argument("--lpf", type=int, default=None, metavar="L_CUT")
    p.add_argument("--augment", choices=list(defenses_mod.AUG_VARIANTS),
                   default=None)
    p.set_defaults(fn=cmd_defend)

    p = sub.add_parser("detect", help="per-point saliency/activation CSV")
    p.add_argument("--victim", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=["saliency", "cam"], required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--counterfactual", action="store_true")
    common(p, config=False)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("analyze", help="spectral trigger analysis")
    p.add_argument("what", choices=["gft"])
    common(p)
    p.add_argument("--data", required=True, help="test dataset directory")
    p.add_argument("--ae", default=None)
    trigger_flags(p)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("smooth", help="intensity-controlled trigger")
    common(p)
    p.add_argument("--ae", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--nl", type=int, default=100)
    p.add_argument("--spectrum", default=None,
                   help="also export the input spectrum CSV here")
    p.set_defaults(fn=cmd_smooth)

    p = sub.add_parser("full-run", help="end-to-end pipeline")
    common(p)
    p.add_argument("--run-dir", default=None,
                   help="fixed run directory name (default: timestamped)")
    p.set_defaults(fn=cmd_full_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NothingToPoison as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except PcbdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
