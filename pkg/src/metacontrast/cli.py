"""Command-line front end for experiments.

Subcommands: ``pretrain``, ``eval``, ``sweep``, ``dump-embeddings``,
``gen-data``. Every run writes a resolved-config manifest next to its
outputs so a result can always be traced back to its exact inputs. Exit
codes: 0 on success, 2 for usage or config errors, 3 for I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfg
from . import synthdata, trainer
from .errors import ConfigError

USAGE_ERROR = 2
IO_ERROR = 3


def _load_or_generate_data(data_cfg, count, data_seed, data_path):
    if data_path is not None:
        return synthdata.load_dataset(data_path)
    return synthdata.generate(data_cfg, count, data_seed)


def _data_manifest_entry(manifest: dict) -> dict:
    return manifest["data"]


def cmd_pretrain(args) -> int:
    data_cfg, count, data_seed, data_path, train_cfg = cfg.load_run_config(args.config)
    if args.preset:
        train_cfg = cfg.apply_preset(train_cfg, args.preset)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    train_cfg.validate()
    dataset = _load_or_generate_data(data_cfg, count, data_seed, data_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = cfg.resolved_manifest(
        data_cfg, count, data_seed, data_path, train_cfg, args.preset
    )
    cfg.write_manifest(out / "manifest.json", manifest)
    result = trainer.train(train_cfg, dataset, out_dir=out)
    # re-save the final checkpoint with the data section attached so that
    # eval/dump-embeddings can rebuild the dataset from the checkpoint alone
    trainer.save_run_checkpoint(
        out / "checkpoint", result.params, result.state, train_cfg.steps,
        train_cfg, data_manifest=_data_manifest_entry(manifest),
    )
    return 0


def _dataset_from_checkpoint(manifest: dict, override: str | None):
    if override is not None:
        return synthdata.load_dataset(override)
    data = manifest.get("data")
    if data is None:
        raise ConfigError(
            "checkpoint carries no dataset description; pass --data"
        )
    if data.get("path"):
        return synthdata.load_dataset(data["path"])
    keys = {f for f in synthdata.DataConfig().__dict__}
    data_cfg = synthdata.DataConfig(**{
        k: (tuple(v) if k == "label_sources" else v)
        for k, v in data.items() if k in keys
    })
    return synthdata.generate(data_cfg, data["count"], data["seed"])


def cmd_eval(args) -> int:
    params, state, manifest = trainer.load_run_checkpoint(args.ckpt)
    dataset = synthdata.load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scores = trainer.probe(params, dataset, seed=args.seed)
    payload = {
        "checkpoint": str(args.ckpt),
        "data": str(args.data),
        "seed": args.seed,
        "scores": scores.to_json(),
    }
    (out / "probe_scores.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )
    return 0


def cmd_dump_embeddings(args) -> int:
    params, _, manifest = trainer.load_run_checkpoint(args.ckpt)
    dataset = _dataset_from_checkpoint(manifest, args.data)
    trainer.dump_embeddings(params, dataset, args.out)
    return 0


def cmd_gen_data(args) -> int:
    parser = cfg._read_ini(args.spec)
    section = parser["data"] if parser.has_section("data") else parser["DEFAULT"]
    data_cfg, count, _, _ = cfg.data_config_from_section(section)
    dataset = synthdata.generate(data_cfg, count, args.seed)
    synthdata.save_dataset(args.out, dataset)
    return 0


def cmd_sweep(args) -> int:
    parser = cfg._read_ini(args.grid)
    if not parser.has_section("sweep"):
        raise ConfigError("grid file needs a [sweep] section")
    sweep = parser["sweep"]
    presets = [tok.strip() for tok in sweep.get("presets", "").split(",") if tok.strip()]
    if not presets:
        raise ConfigError("sweep needs a non-empty presets list")
    seeds = [int(tok) for tok in sweep.get("seeds", "0").split(",")]
    single_labels = [
        int(tok) for tok in sweep.get("single_meta_labels", "").split(",") if tok.strip()
    ]

    data_section = parser["data"] if parser.has_section("data") else parser["DEFAULT"]
    train_section = parser["train"] if parser.has_section("train") else parser["DEFAULT"]
    data_cfg, count, data_seed, data_path = cfg.data_config_from_section(data_section)
    base_train = cfg.train_config_from_section(train_section)
    dataset = _load_or_generate_data(data_cfg, count, data_seed, data_path)

    cells: list[tuple[str, str, int | None]] = []
    for preset in presets:
        if preset == "single-meta" and single_labels:
            for lbl in single_labels:
                cells.append((f"single-meta-{lbl}", preset, lbl))
        else:
            cells.append((preset, preset, None))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for cell_name, preset, label in cells:
        run_cfg = cfg.apply_preset(base_train, preset, single_meta_label=label)
        for seed in seeds:
            run_cfg_seeded = replace(run_cfg, seed=seed)
            run_dir = out / cell_name / f"seed-{seed}"
            manifest = cfg.resolved_manifest(
                data_cfg, count, data_seed, data_path, run_cfg_seeded, preset
            )
            run_dir.mkdir(parents=True, exist_ok=True)
            cfg.write_manifest(run_dir / "manifest.json", manifest)
            result = trainer.train(run_cfg_seeded, dataset, out_dir=run_dir)
            scores = trainer.probe(result.params, dataset, seed=seed)
            rows.append({
                "cell": cell_name,
                "seed": seed,
                "final_loss": result.history[-1].total_loss,
                "linear_accuracy": scores.linear_accuracy,
                "pixel_accuracy": scores.pixel_accuracy,
                "clustering_nmi": scores.clustering_nmi,
            })

    with (out / "results.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    metrics = ("final_loss", "linear_accuracy", "pixel_accuracy", "clustering_nmi")
    with (out / "summary.csv").open("w", newline="") as fh:
        header = ["cell", "runs"]
        for m in metrics:
            header += [f"{m}_mean", f"{m}_std"]
        writer = csv.writer(fh)
        writer.writerow(header)
        for cell_name, _, _ in cells:
            cell_rows = [r for r in rows if r["cell"] == cell_name]
            line: list = [cell_name, len(cell_rows)]
            for m in metrics:
                values = [r[m] for r in cell_rows if r[m] is not None]
                if values:
                    mean = statistics.fmean(values)
                    std = statistics.pstdev(values) if len(values) > 1 else 0.0
                    line += [f"{mean:.6f}", f"{std:.6f}"]
                else:
                    line += ["", ""]
            writer.writerow(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metacontrast",
        description="Meta-label contrastive pre-training experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train an encoder from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--preset", choices=sorted(cfg.PRESETS), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="probe a checkpoint against a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a preset x seed grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-embeddings", help="write pooled embeddings to CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None,
                   help="dataset directory; defaults to the checkpoint's own data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_embeddings)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; keep its code
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return IO_ERROR
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
