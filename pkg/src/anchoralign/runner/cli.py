"""Command-line entry point: ``anchoralign <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..data_synth import ModalityMask, enumerate_modality_masks
from ..distill import DistillConfig
from ..segmetrics import attach_improvements
from ..theory import theory_report
from .config import TrainConfig, dump_config, load_config
from .data import load_dataset, write_dataset

log = logging.getLogger("anchoralign")


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    cfg.validate()
    return cfg


def _checkpoint_config(args, trained) -> TrainConfig:
    """Dataset/seed config for a checkpoint command: ``--config`` wins, else the checkpoint's own."""
    cfg = load_config(args.config) if args.config else trained.config
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _parse_masks(spec: str | None, n_modalities: int):
    if not spec:
        return None
    if spec == "all":
        return enumerate_modality_masks(n_modalities)
    masks = [ModalityMask.from_code(c.strip()) for c in spec.split(",") if c.strip()]
    for m in masks:
        if m.n_modalities != n_modalities:
            raise SystemExit(f"mask {m.code} does not have {n_modalities} positions")
    return masks


# --- subcommands --------------------------------------------------------------


def cmd_show_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return 0


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    train_dir, test_dir = write_dataset(cfg, _out(args.out))
    print(f"wrote {cfg.dataset.n_train} samples to {train_dir} and {cfg.dataset.n_test} to {test_dir}")
    return 0


def cmd_train_teacher(args) -> int:
    from .training import train_teacher

    cfg = _config(args)
    out = _out(args.out)
    (out / "config.yaml").write_text(dump_config(cfg))
    result = train_teacher(cfg, out_dir=out, name=args.name)
    last = result.log[-1]
    print(f"teacher saved to {out / (args.name + '.ckpt')} (final total_loss={last['total_loss']:.6f}, "
          f"modality_gap={last['modality_gap']:.6f})")
    if result.weights is not None:
        print("adaptive weights:", " ".join(f"{w:.4f}" for w in result.weights.numpy()))
    return 0


def cmd_train_student(args) -> int:
    from .training import load_trained, train_student

    cfg = _config(args)
    if args.baseline:
        cfg = cfg.replace(distill=DistillConfig(latent_weight=0.0, soft_label_weight=0.0))
    teacher = load_trained(args.teacher) if args.teacher else None
    mask = ModalityMask.from_code(args.mask)
    out = _out(args.out)
    name = args.name or f"student_{mask.code}"
    result = train_student(cfg, teacher, mask, out_dir=out, name=name)
    print(f"student saved to {out / (name + '.ckpt')} (final total_loss={result.log[-1]['total_loss']:.6f})")
    return 0


def cmd_eval(args) -> int:
    from ..segmetrics import DiceReport
    from .evaluation import evaluate
    from .training import load_trained

    trained = load_trained(args.checkpoint)
    cfg = _checkpoint_config(args, trained)
    _, test = load_dataset(cfg)
    report = evaluate(trained, test, _parse_masks(args.masks, trained.model.n_modalities), args.method)
    if args.baseline_report:
        report = attach_improvements(report, DiceReport.from_csv(Path(args.baseline_report).read_text()))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    sys.stdout.write(report.to_csv())
    return 0


def cmd_export_latents(args) -> int:
    from .evaluation import export_latents, summary_gap
    from .training import load_trained

    trained = load_trained(args.checkpoint)
    cfg = _checkpoint_config(args, trained)
    train, test = load_dataset(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = export_latents(trained, test if args.split == "test" else train, out)
    print(f"wrote {len(rows)} rows to {out}")
    if len(trained.model.modalities) > 1:
        print(f"centroid spread of channel-mean summaries: {summary_gap(rows):.6f}")
    return 0


def cmd_export_slices(args) -> int:
    from .evaluation import export_slices
    from .training import load_trained

    trained = load_trained(args.checkpoint)
    cfg = _checkpoint_config(args, trained)
    train, test = load_dataset(cfg)
    samples = test if args.split == "test" else train
    if not 0 <= args.sample < len(samples):
        raise SystemExit(f"sample index {args.sample} outside [0, {len(samples)})")
    sample = samples[args.sample]
    index = args.index if args.index is not None else sample.shape[args.axis] // 2
    paths = export_slices(trained, sample, args.axis, index, _out(args.out))
    for p in paths:
        print(p)
    return 0


def cmd_verify_theory(args) -> int:
    out = _out(args.out)
    text, records = theory_report(args.seed or 0, args.discrete_trials, args.gaussian_trials)
    (out / "report.txt").write_text(text)
    for r in records:
        r.write_csv(out / f"{r.name}.csv")
    sys.stdout.write(text)
    return 0 if all(r.passed for r in records) else 1


def cmd_sweep_anchor(args) -> int:
    from .evaluation import sweep_anchor

    cfg = _config(args)
    out = _out(args.out)
    result = sweep_anchor(cfg, out)
    for k, avg in enumerate(result["averages"]):
        print(f"base modality {k}: mean avg dice {avg:.2f}")
    print(f"best base modality k = {result['best_k']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchoralign", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, config=True):
        p = sub.add_parser(name, help=help_)
        if config:
            p.add_argument("--config", help="YAML experiment config (missing fields take defaults)")
        p.add_argument("--seed", type=int, default=None, help="override every seed stream")
        p.set_defaults(func=fn)
        return p

    add("show-config", cmd_show_config, "print the effective configuration as YAML")

    p = add("gen-data", cmd_gen_data, "write the synthetic train/test split as .vol files")
    p.add_argument("--out", required=True)

    p = add("train-teacher", cmd_train_teacher, "train the complete-modality teacher")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="teacher")

    p = add("train-student", cmd_train_student, "distill a student for one modality mask")
    p.add_argument("--teacher", help="teacher checkpoint (not needed with --baseline)")
    p.add_argument("--mask", required=True, help="present/missing code, e.g. xxox")
    p.add_argument("--baseline", action="store_true", help="zero distillation weights (plain supervised student)")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None)

    p = add("eval", cmd_eval, "dice report over modality masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--masks", default=None, help="'all' or comma-separated codes; default depends on the role")
    p.add_argument("--method", default=None)
    p.add_argument("--baseline-report", default=None, help="report.csv to compute imp against")
    p.add_argument("--out", default="report.csv")

    for name, fn, help_ in (
        ("export-latents", cmd_export_latents, "write per-(sample, modality) latent summaries and PCA"),
        ("export-slices", cmd_export_slices, "write PPM slices of inputs, prediction and ground truth"),
    ):
        p = add(name, fn, help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=("train", "test"), default="test")
        if name == "export-latents":
            p.add_argument("--out", default="latents.csv")
        else:
            p.add_argument("--sample", type=int, default=0)
            p.add_argument("--axis", type=int, default=0)
            p.add_argument("--index", type=int, default=None, help="slice index (default: middle)")
            p.add_argument("--out", default="slices")

    p = add("verify-theory", cmd_verify_theory, "randomized checks of the information bounds", config=False)
    p.add_argument("--discrete-trials", type=int, default=1000)
    p.add_argument("--gaussian-trials", type=int, default=200)
    p.add_argument("--out", default="theory")

    p = add("sweep-anchor", cmd_sweep_anchor, "single-modality teachers; pick the best base modality")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
