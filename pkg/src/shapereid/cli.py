"""Command-line entry point: generate-data / train / evaluate / ablate / audit.

Configuration precedence is defaults < --config file < flags. Each command
writes its artifacts under --out and embeds the resolved configuration.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .ablation import ablation_run, aggregate
from .complexity import audit, format_audit
from .config import ConfigError, RunConfig, parse_config
from .evaluator import Protocol, evaluate_protocol
from .manifest import DatasetManifest, ManifestError, load_manifest
from .network import COMPOSITIONS, SETTINGS, resolve_composition
from .report import (ablation_rows_text, ablation_table, metric_table,
                     plot_cmc, write_result)
from .synth import generate_dataset
from .trainer import load_model_from_checkpoint, train

PRESETS = ("toy", "resnet50-like")


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", type=Path, help="INI config file")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--plots", choices=("on", "off"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="shapereid",
        description="Shape-centered cross-modality person re-identification: "
                    "synthetic data, training, retrieval evaluation, and "
                    "complexity audits.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="render a synthetic paired dataset")
    _add_common(g)
    g.add_argument("--data", help="dataset destination (default: --out)")
    g.add_argument("--num-identities", type=int)
    g.add_argument("--images-per-identity", type=int,
                   help="training images per identity per modality")
    g.add_argument("--eval-images-per-identity", type=int,
                   help="held-out poses per identity per modality")
    g.add_argument("--corruption-rate", type=float,
                   help="fraction of IR limb mask pixels erased")
    g.add_argument("--image-size", help="HxW, e.g. 128x64")

    t = sub.add_parser("train", help="train a model on a dataset directory")
    _add_common(t)
    t.add_argument("--data", help="dataset directory containing train.tsv")
    t.add_argument("--preset", choices=PRESETS)
    t.add_argument("--setting", choices=tuple(SETTINGS))
    t.add_argument("--epochs", type=int)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint")
    _add_common(e)
    e.add_argument("--data", help="dataset directory with query.tsv/gallery.tsv")
    e.add_argument("--checkpoint", type=Path,
                   help="model checkpoint (default: <out>/checkpoint_last.pt)")
    e.add_argument("--composition", choices=COMPOSITIONS)
    e.add_argument("--protocol", choices=("ir->vis", "vis->ir"))

    a = sub.add_parser("ablate", help="train and evaluate several settings")
    _add_common(a)
    a.add_argument("--data")
    a.add_argument("--preset", choices=PRESETS)
    a.add_argument("--epochs", type=int)
    a.add_argument("--composition", choices=COMPOSITIONS)
    a.add_argument("--protocol", choices=("ir->vis", "vis->ir"))
    a.add_argument("--settings", default="B,B+S,B+S+I,full",
                   help="comma-separated setting tokens")
    a.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")

    u = sub.add_parser("audit", help="print parameter/FLOP accounting")
    u.add_argument("--config", type=Path)
    u.add_argument("--preset", choices=PRESETS)
    u.add_argument("--input-size", help="HxW, e.g. 384x144")
    return p


_FLAG_MAP = {
    "seed": ("run", "seed"),
    "out": ("run", "out_dir"),
    "data": ("run", "data_dir"),
    "preset": ("run", "preset"),
    "composition": ("run", "composition"),
    "protocol": ("run", "protocol"),
    "epochs": ("train", "epochs"),
    "setting": ("train", "setting"),
    "num_identities": ("synth", "num_identities"),
    "images_per_identity": ("synth", "images_per_identity_per_modality"),
    "eval_images_per_identity": ("synth", "eval_images_per_identity"),
    "corruption_rate": ("synth", "corruption_rate"),
}


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ConfigError(f"expected HxW, got {text!r}")


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: dict[tuple[str, str], object] = {}
    for flag, target in _FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[target] = value
    if getattr(args, "plots", None) is not None:
        overrides[("run", "plots")] = args.plots == "on"
    if getattr(args, "image_size", None):
        size = _parse_size(args.image_size)
        overrides[("synth", "image_size")] = size
        overrides[("backbone", "input_size")] = size
    if getattr(args, "input_size", None):
        overrides[("backbone", "input_size")] = _parse_size(args.input_size)
    return parse_config(getattr(args, "config", None), overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: RunConfig, directory: Path) -> None:
    (directory / "run_config.ini").write_text(cfg.to_text())


def _data_dir(cfg: RunConfig) -> Path:
    if not cfg.run.data_dir:
        raise ConfigError("no dataset directory; pass --data or set run.data_dir")
    d = Path(cfg.run.data_dir)
    if not d.exists():
        raise ConfigError(f"dataset directory not found: {d}")
    return d


def _load_split(data: Path, split: str):
    path = data / f"{split}.tsv"
    if not path.exists():
        raise ConfigError(f"missing manifest: {path}")
    return load_manifest(path)


def _eval_pool(data: Path) -> DatasetManifest:
    """query.tsv and gallery.tsv merged; the protocol assigns roles by
    modality, so both retrieval directions work on the same dataset."""
    q = _load_split(data, "query")
    g = _load_split(data, "gallery")
    return DatasetManifest(q.root, q.records + g.records,
                           max(q.num_identities, g.num_identities),
                           max(q.num_part_labels, g.num_part_labels),
                           split="eval")


def cmd_generate(args) -> int:
    cfg = config_from_args(args)
    target = Path(cfg.run.data_dir) if cfg.run.data_dir else _out_dir(cfg)
    ds = generate_dataset(cfg.synth, target)
    _write_config(cfg, target)
    n_eval = len(ds.query) if ds.query else 0
    print(f"generated {len(ds.train)} training images "
          f"({cfg.synth.num_identities} identities) and {n_eval} query images "
          f"under {target}")
    return 0


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    data = _data_dir(cfg)
    manifest = _load_split(data, "train")
    out = _out_dir(cfg)
    _write_config(cfg, out)
    trainer = train(manifest, cfg.build_backbone(), cfg.train, cfg.augment, out)
    summaries = [r for r in trainer.log_records if r.startswith("epoch_summary")]
    if summaries:
        print(summaries[-1])
    print(f"trained {cfg.train.epochs} epochs "
          f"(setting {cfg.train.setting}); artifacts in {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = config_from_args(args)
    data = _data_dir(cfg)
    out = _out_dir(cfg)
    ckpt_path = args.checkpoint or out / "checkpoint_last.pt"
    model, _, _ = load_model_from_checkpoint(ckpt_path)
    composition = resolve_composition(cfg.composition_or_none(), model.setting)
    protocol = Protocol(cfg.run.protocol)
    pool = _eval_pool(data)
    result = evaluate_protocol(model, pool, pool, protocol,
                               composition=composition)
    label = f"{protocol.name} ({composition})"
    print(metric_table([(label, result)]))
    if result.num_excluded:
        print(f"queries without gallery positives: {result.num_excluded}")
    stem = protocol.name.replace("->", "_to_")
    write_result(result, out / f"eval_{stem}.txt", cfg.to_text())
    _write_config(cfg, out)
    if cfg.run.plots:
        plot_cmc([(label, result)], out / f"cmc_{stem}.png")
    return 0


def cmd_ablate(args) -> int:
    cfg = config_from_args(args)
    data = _data_dir(cfg)
    out = _out_dir(cfg)
    _write_config(cfg, out)
    settings = [s.strip() for s in args.settings.split(",") if s.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    pool = _eval_pool(data)
    rows = ablation_run(_load_split(data, "train"), pool, pool,
                        cfg.build_backbone(), cfg.train, settings, seeds,
                        cfg.augment, Protocol(cfg.run.protocol),
                        cfg.composition_or_none(), out_dir=out)
    stats = aggregate(rows)
    table = ablation_table(stats)
    print(table)
    (out / "ablation_table.txt").write_text(table + "\n")
    (out / "ablation_rows.tsv").write_text(ablation_rows_text(rows))
    return 0


def cmd_audit(args) -> int:
    overrides: dict[tuple[str, str], object] = {}
    if args.preset:
        overrides[("run", "preset")] = args.preset
    if args.input_size:
        overrides[("backbone", "input_size")] = _parse_size(args.input_size)
    cfg = parse_config(args.config, overrides)
    print(f"preset: {cfg.run.preset}")
    print(format_audit(audit(cfg.build_backbone())))
    return 0


_COMMANDS = {
    "generate-data": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "audit": cmd_audit,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ManifestError, FileNotFoundError, NotADirectoryError,
            ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
