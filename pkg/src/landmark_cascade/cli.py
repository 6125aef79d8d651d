"""``landmark-cascade`` command line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .balance import InitConfig, PlanError
from .cascade import (LandmarkCountError, ModelFormatError, TrainConfig, TrainingError,
                      batch_inits, inits_digest, load_model, predict_with_inits, save_model,
                      train_cascade)
from .dataset import (DataError, PtsParseError, SynthConfig, generate_synthetic, load_manifest,
                      load_samples, read_pts, write_dataset, write_pts)
from .features import MODES
from .geometry import ShapeError
from .headpose import Model3D, PoseError, significant_angle
from .metrics import DEFAULT_THRESHOLD, EvalReport, Normalizer, failure_histogram, nme
from .pipeline import make_plan, parse_aug_spec, sample_poses

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "LANDMARK_CASCADE_THREADS"

log = logging.getLogger("landmark_cascade")


class ConfigError(ValueError):
    pass


def _threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _section(path, name: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return dict(doc.get(name, doc))


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} {p} does not exist")
    return p


def _model3d(path):
    return Model3D.load(_existing(path, "3D model")) if path else None


# --- commands --------------------------------------------------------------

def cmd_synth(args) -> int:
    conf = _section(args.config, "synth")
    for key in ("count", "k", "seed", "image_size"):
        val = getattr(args, key)
        if val is not None:
            conf[key] = val
    try:
        cfg = SynthConfig.from_dict(conf)
    except TypeError as exc:
        raise ConfigError(f"bad synth config: {exc}") from exc
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    path = write_dataset(generate_synthetic(cfg), out)
    print(path)
    return EXIT_OK


def _train_config(args, conf: dict) -> TrainConfig:
    tc = dict(conf)
    for key in ("mode", "aug", "norm"):
        tc.pop(key, None)
    if args.seed is not None:
        tc["seed"] = args.seed
    for key in ("stages", "ferns", "depth"):
        val = getattr(args, key)
        if val is not None:
            tc[key] = val
    tc["threads"] = _threads(args.threads)
    if "init" in tc:
        tc["init"] = InitConfig.from_dict(tc["init"])
    try:
        return TrainConfig(**tc)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def cmd_train(args) -> int:
    conf = _section(args.config, "train")
    manifest = load_manifest(_existing(args.manifest, "manifest"))
    mode = args.mode or conf.get("mode", "tif")
    if mode not in MODES:
        raise ConfigError(f"unknown feature mode {mode!r}")
    aug = args.aug or conf.get("aug", "uniform:20")
    parse_aug_spec(aug, len(manifest.entries))
    cfg = _train_config(args, conf)
    samples = load_samples(manifest)
    plan, _ = make_plan(aug, samples, _model3d(args.model3d), args.focal_factor)
    model = train_cascade(samples, plan, mode, cfg)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(save_model(model))
    log_path = Path(args.log) if args.log else out.with_name(out.name.split(".")[0] + ".train_log.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "mean_nme", "sse"])
        for e in model.train_log:
            w.writerow([e.stage, f"{e.mean_nme:.8f}", f"{e.sse:.8f}"])
    nmes = [e.mean_nme for e in model.train_log]
    if any(b > a for a, b in zip(nmes, nmes[1:])):
        log.warning("training NME increased between stages: %s", nmes)
    print(out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(_existing(args.model, "model").read_bytes())
    manifest = load_manifest(_existing(args.manifest, "manifest"))
    model.check_k(manifest.k)
    samples = load_samples(manifest, require_truth=False)
    restarts = args.restarts or model.config.restarts
    inits = batch_inits(model, len(samples), restarts, args.seed)
    preds = predict_with_inits(model, [s.image for s in samples], [s.box for s in samples],
                               inits, threads=_threads(args.threads))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s, p in zip(samples, preds):
        write_pts(out / f"{s.id}.pts", p)
    digest = inits_digest(inits)
    (out / "predict_log.json").write_text(json.dumps(
        {"model": str(args.model), "mode": model.mode, "restarts": restarts, "seed": args.seed,
         "count": len(samples), "init_sha256": digest}, indent=1, sort_keys=True) + "\n")
    log.info("initialisation hash %s", digest)
    print(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(_existing(args.manifest, "manifest"))
    pred_dir = _existing(args.pred, "prediction directory")
    norm = Normalizer.parse(args.norm)
    samples = load_samples(manifest)
    ids, errors, poses, missing = [], [], [], []
    for s in samples:
        ids.append(s.id)
        poses.append(significant_angle(s.pose) if s.pose is not None else None)
        p = pred_dir / f"{s.id}.pts"
        if not p.is_file():
            errors.append(np.inf)
            missing.append(True)
            continue
        pred = read_pts(p)
        if pred.shape[0] != manifest.k:
            raise LandmarkCountError(f"{p}: K={pred.shape[0]}, manifest says {manifest.k}")
        errors.append(nme(pred, s.truth, s.box, norm))
        missing.append(False)
    report = EvalReport(ids, np.array(errors), poses, missing, threshold=args.threshold)
    out = Path(args.out)
    report.write(out, config={"norm": norm.describe(), "manifest": str(args.manifest),
                              "pred": str(args.pred)})
    if all(p is not None for p in poses):
        edges = np.arange(-90, 91, 10)
        counts = failure_histogram(report.errors, poses, edges, args.threshold)
        with open(out / "failures.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["angle_low", "angle_high", "failures"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([lo, hi, int(c)])
    print(json.dumps({"mean_nme": report.mean_nme, "slr": report.slr}))
    return EXIT_OK


def cmd_augplan(args) -> int:
    manifest = load_manifest(_existing(args.manifest, "manifest"))
    lo, hi = (int(v) for v in args.bounds.split(","))
    spec = f"nca:{lo},{hi},{args.budget}"
    parse_aug_spec(spec, len(manifest.entries))
    samples = load_samples(manifest)
    plan, pdf = make_plan(spec, samples, _model3d(args.model3d), args.focal_factor)
    rows = zip((s.id for s in samples), pdf, plan.counts)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "pdf_value", "count"])
        for sid, d, c in rows:
            w.writerow([sid, f"{d:.10g}", c])
    return EXIT_OK


def cmd_pose(args) -> int:
    manifest = load_manifest(_existing(args.manifest, "manifest"))
    samples = load_samples(manifest)
    for s in samples:
        s.pose = None  # always estimate from landmarks here
    poses = sample_poses(samples, _model3d(args.model3d), args.focal_factor)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "pitch", "yaw", "roll", "significant"])
        for s, p in zip(samples, poses):
            w.writerow([s.id] + [f"{v:.4f}" for v in p] + [f"{significant_angle(p):.4f}"])
    return EXIT_OK


class _open_out:
    def __init__(self, path):
        self.path = path

    def __enter__(self):
        if self.path in (None, "-"):
            self.fh = sys.stdout
        else:
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(self.path, "w", newline="")
        return self.fh

    def __exit__(self, *exc):
        if self.fh is not sys.stdout:
            self.fh.close()


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="landmark-cascade", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic annotated dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a cascade model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--aug", help="uniform:M or nca:MIN,MAX,BUDGET (BUDGET may be 20N)")
    p.add_argument("--model3d")
    p.add_argument("--focal-factor", type=float, default=1.5)
    p.add_argument("--stages", type=int)
    p.add_argument("--ferns", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--log", help="training log CSV (default: next to the model)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict landmarks for a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    p.add_argument("--pred", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--norm", default="face", help="face or iod:LEFT,RIGHT")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augplan", help="negatively correlated augmentation plan as CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model3d")
    p.add_argument("--focal-factor", type=float, default=1.5)
    p.add_argument("--bounds", default="11,40")
    p.add_argument("--budget", default="20N")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_augplan)

    p = sub.add_parser("pose", help="head pose of annotated samples via POSIT")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model3d")
    p.add_argument("--focal-factor", type=float, default=1.5)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_pose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingError, ArithmeticError, np.linalg.LinAlgError, PoseError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, PtsParseError, LandmarkCountError, ModelFormatError, ShapeError,
            OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, PlanError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
