"""Command-line surface: dataset synthesis, training, upsampling, evaluation.

Configuration precedence is flag > config file > built-in default; the
resolved configuration is printed to stderr at startup. Exit codes:
0 success, 2 usage or input errors, 3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import (
    AugmentConfig,
    Patch,
    PointCloud,
    generate_entry_patches,
    load_manifest,
    normalize_cloud,
    read_cloud,
    write_cloud,
)
from .discriminator import DiscriminatorConfig, PoolBlockConfig
from .generator import FeatureNetConfig, GeneratorConfig, ResidualBlockConfig
from .loss import LossConfig
from .metrics import DEFAULT_P_LEVELS, evaluate
from .training import (
    NumericalError,
    TrainConfig,
    Trainer,
    load_checkpoint,
    save_checkpoint,
)

_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(text: str) -> bool:
    if text.lower() not in _BOOL_VALUES:
        raise ValueError(f"expected a boolean, got {text!r}")
    return _BOOL_VALUES[text.lower()]


# every tunable: name -> (parser, default)
CONFIG_KEYS = {
    "seed": (int, 0),
    "batch_size": (int, 28),
    "phase1_epochs": (int, 80),
    "phase2_epochs": (int, 40),
    "d_steps_per_g_step": (int, 1),
    "checkpoint_interval": (int, 0),
    "learning_rate": (float, 0.001),
    "input_size": (int, 1024),
    "gt_size": (int, 4096),
    "surface_points": (int, 20000),
    "reference_factor": (int, 0),
    "chamfer_weight": (float, 100.0),
    "chamfer_reduction": (str, "mean"),
    "stages": (int, 2),
    "channels": (int, 128),
    "residual_layers": (int, 12),
    "feature_depth": (int, 3),
    "k": (int, 8),
    "d_channels": (int, 64),
    "d_residual_layers": (int, 4),
    "d_feature_depth": (int, 2),
    "d_output_points": (int, 64),
    "pool_factor": (int, 4),
    "pool_stages": (int, 3),
    "use_bias": (_parse_bool, True),
    "rotate": (_parse_bool, True),
    "shift": (float, 0.1),
    "scale_min": (float, 0.8),
    "scale_max": (float, 1.2),
    "noise_sigma": (float, 0.0),
    "tau": (float, 0.01),
    "nuc_disks": (int, 24),
}


def _parse_config_file(path) -> dict:
    """Line-oriented `key = value` file; '#' comments; unknown keys are errors."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            parser = CONFIG_KEYS[key][0]
            try:
                out[key] = parser(value)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def _resolve_config(args) -> dict:
    cfg = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    if getattr(args, "config", None):
        cfg.update(_parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"--set: unknown config key {key!r}")
        cfg[key] = CONFIG_KEYS[key][0](value)
    for flag in ("seed", "phase1_epochs", "phase2_epochs", "tau"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[flag] = value
    for key in sorted(cfg):
        print(f"config: {key} = {cfg[key]}", file=sys.stderr)
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["batch_size"],
        phase1_epochs=cfg["phase1_epochs"],
        phase2_epochs=cfg["phase2_epochs"],
        d_steps_per_g_step=cfg["d_steps_per_g_step"],
        rng_seed=cfg["seed"],
        checkpoint_interval=cfg["checkpoint_interval"],
        learning_rate=cfg["learning_rate"],
        input_size=cfg["input_size"],
        noise_sigma=cfg["noise_sigma"],
        loss=LossConfig(chamfer_weight=cfg["chamfer_weight"],
                        chamfer_reduction=cfg["chamfer_reduction"]),
        augment=AugmentConfig(rotate=cfg["rotate"], shift=cfg["shift"],
                              scale_min=cfg["scale_min"], scale_max=cfg["scale_max"]),
        generator=GeneratorConfig(
            stages=cfg["stages"],
            feature_net=FeatureNetConfig(k=cfg["k"], channels=cfg["channels"],
                                         depth=cfg["feature_depth"]),
            block=ResidualBlockConfig(k=cfg["k"], channels=cfg["channels"],
                                      residual_layers=cfg["residual_layers"]),
            use_bias=cfg["use_bias"],
        ),
        discriminator=DiscriminatorConfig(
            feature_net=FeatureNetConfig(k=cfg["k"], channels=cfg["d_channels"],
                                         depth=cfg["d_feature_depth"]),
            block=ResidualBlockConfig(k=cfg["k"], channels=cfg["d_channels"],
                                      residual_layers=cfg["d_residual_layers"]),
            pool=PoolBlockConfig(factor=cfg["pool_factor"], k=cfg["k"]),
            output_points=cfg["d_output_points"],
            pool_stages=cfg["pool_stages"],
            use_bias=cfg["use_bias"],
        ),
    )


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    entries = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_lines = []
    for e_idx, entry in enumerate(entries):
        pairs = generate_entry_patches(
            entry,
            surface_points=cfg["surface_points"],
            gt_size=cfg["gt_size"],
            reference_factor=cfg["reference_factor"],
        )
        for p_idx, (patch, reference) in enumerate(pairs):
            name = f"{entry.kind}-{e_idx:02d}-{p_idx:03d}.xyz"
            write_cloud(patch.gt, out_dir / name)
            ref_name = "-"
            if reference is not None:
                ref_name = f"{entry.kind}-{e_idx:02d}-{p_idx:03d}-ref.xyz"
                write_cloud(reference, out_dir / ref_name)
            center = ",".join("%.17g" % v for v in patch.center)
            index_lines.append(
                f"file={name} split={entry.split} kind={entry.kind} "
                f"center={center} scale={'%.17g' % patch.scale} ref={ref_name}"
            )
    with open(out_dir / "index.txt", "w") as fh:
        fh.write("\n".join(index_lines) + "\n")
    print(f"wrote {len(index_lines)} patches to {out_dir}", file=sys.stderr)
    return 0


def read_dataset_index(dataset_dir, split: str = None) -> list:
    """Parse index.txt into (path, split, kind, center, scale, ref_path|None) records."""
    index_path = Path(dataset_dir) / "index.txt"
    if not index_path.exists():
        raise ValueError(f"{dataset_dir}: missing index.txt (not a dataset directory?)")
    records = []
    with open(index_path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = dict(tok.split("=", 1) for tok in line.split())
            missing = {"file", "split", "kind", "center", "scale"} - set(fields)
            if missing:
                raise ValueError(f"{index_path}:{lineno}: missing fields {sorted(missing)}")
            if split is not None and fields["split"] != split:
                continue
            ref = fields.get("ref", "-")
            records.append({
                "path": Path(dataset_dir) / fields["file"],
                "split": fields["split"],
                "kind": fields["kind"],
                "center": np.array([float(v) for v in fields["center"].split(",")]),
                "scale": float(fields["scale"]),
                "ref_path": None if ref == "-" else Path(dataset_dir) / ref,
            })
    return records


def load_dataset(dataset_dir, split: str = "train") -> list:
    patches = []
    for rec in read_dataset_index(dataset_dir, split):
        cloud = read_cloud(rec["path"])
        patches.append(Patch(gt=cloud, center=rec["center"], scale=rec["scale"]))
    return patches


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    patches = load_dataset(args.dataset_dir, split="train")
    if not patches:
        raise ValueError(f"{args.dataset_dir}: no training patches in the index")
    config = _train_config(cfg)
    out_path = Path(args.out)
    log_path = Path(args.log) if args.log else out_path.with_suffix(".loss.csv")

    def checkpoint_cb(state):
        save_checkpoint(state, out_path)

    trainer = Trainer(patches, config, checkpoint_cb=checkpoint_cb)
    trainer.run_phase1()
    if config.phase2_epochs > 0:
        trainer.run_phase2()
    save_checkpoint(trainer.state, out_path)
    with open(log_path, "w") as fh:
        fh.write("step,l_cd,l_g,l_d\n")
        for row in trainer.history:
            l_g = "" if row["l_g"] is None else "%.9g" % row["l_g"]
            l_d = "" if row["l_d"] is None else "%.9g" % row["l_d"]
            fh.write(f"{row['step']},{'%.9g' % row['l_cd']},{l_g},{l_d}\n")
    print(f"checkpoint: {out_path}  loss log: {log_path}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# upsample


def cmd_upsample(args) -> int:
    _resolve_config(args)
    state = load_checkpoint(args.checkpoint)
    cloud = read_cloud(args.input)
    pts = cloud.points
    if args.iterations < 1:
        raise ValueError("iterations must be >= 1")
    for _ in range(args.iterations):
        normalized, center, scale = normalize_cloud(pts)
        out = state.generator.upsample(normalized)
        pts = out * scale + center
    if not np.isfinite(pts).all():
        raise NumericalError("upsampled cloud contains non-finite coordinates")
    write_cloud(PointCloud(pts), args.output)
    print(f"wrote {pts.shape[0]} points to {args.output}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# eval


def _fmt(value) -> str:
    return "" if value is None else "%.9g" % value


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    pred = read_cloud(args.pred)
    gt = read_cloud(args.gt)
    reference = read_cloud(args.reference)
    report = evaluate(pred, gt, reference, tau=cfg["tau"], num_disks=cfg["nuc_disks"])
    nuc_headers = [f"nuc_p{100 * p:g}%" for p in DEFAULT_P_LEVELS]
    header = ["cd", "emd", "emd_epsilon", f"fscore_tau{cfg['tau']:g}"] + nuc_headers + [
        "deviation_mean", "deviation_std"]
    values = [_fmt(report.cd), _fmt(report.emd),
              _fmt(report.emd_epsilon if report.emd is not None else None),
              _fmt(report.fscore)]
    values += [_fmt(report.nuc.get(p)) for p in DEFAULT_P_LEVELS]
    values += [_fmt(report.deviation_mean), _fmt(report.deviation_std)]
    print(",".join(header))
    print(",".join(values))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcsr", description="Point cloud super-resolution toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="master random seed")

    p_synth = sub.add_parser("synth", help="generate a patch dataset from a manifest")
    p_synth.add_argument("manifest")
    p_synth.add_argument("out_dir")
    common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="run two-phase training on a dataset")
    p_train.add_argument("dataset_dir")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--log", help="loss log path (default: <out>.loss.csv)")
    p_train.add_argument("--phase1-epochs", type=int, dest="phase1_epochs")
    p_train.add_argument("--phase2-epochs", type=int, dest="phase2_epochs")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_up = sub.add_parser("upsample", help="apply a trained model to a cloud file")
    p_up.add_argument("checkpoint")
    p_up.add_argument("input")
    p_up.add_argument("output")
    p_up.add_argument("--iterations", type=int, default=1)
    common(p_up)
    p_up.set_defaults(func=cmd_upsample)

    p_eval = sub.add_parser("eval", help="metric report for prediction vs ground truth")
    p_eval.add_argument("pred")
    p_eval.add_argument("gt")
    p_eval.add_argument("reference", help="dense reference sample of the same region")
    p_eval.add_argument("--tau", type=float, default=None)
    common(p_eval)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
