"""Experiment driver: generate, train, evaluate, sweep.

Every run is fully described by a JSON config (unknown keys rejected) plus a
handful of override flags; outputs are a fixed-schema metrics CSV, per-step
checkpoints, and a manifest echoing the resolved config, so identical
configs reproduce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import generator_config, load_config, resolve_config, split_seed, train_settings
from .corpus import (
    EvalSplit,
    generate_synthetic_corpus,
    load_tracklets,
    one_shot_split,
    save_tracklets,
)
from .evaluation import evaluate_split
from .exceptions import ConfigError, InvalidConfig
from .model import load_checkpoint
from .selftrain import run_tcpl

METRICS_COLUMNS = [
    "step", "t", "n_t", "churn", "label_acc_Dp", "label_acc_Du",
    "ce_labeled", "ce_pseudo", "intra", "inter", "total",
    "rank1", "rank5", "rank20", "map",
]

SWEEP_COLUMNS = [
    "axis", "value", "seed", "status", "best_step",
    "rank1", "rank5", "rank20", "map", "label_acc",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"arguments: {message}")


def _load_config_with_overrides(args) -> dict:
    cfg = load_config(args.config) if args.config else resolve_config({})
    if getattr(args, "seed", None) is not None:
        cfg["seeds"]["train"] = args.seed
    if getattr(args, "variant", None) is not None:
        cfg["loss"]["variant"] = args.variant
    if getattr(args, "out", None) is not None:
        cfg["output_dir"] = str(args.out)
    return cfg


def _out_dir(cfg: dict) -> Path:
    if not cfg["output_dir"]:
        raise ConfigError("output_dir: required (set in config or pass --out)")
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, cfg: dict, command: str) -> None:
    manifest = {"artifact_version": __version__, "command": command, "config": cfg}
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _prepare_data(cfg: dict):
    """Corpus (already split) plus the probe/gallery evaluation split."""
    if cfg["corpus"]["path"]:
        tracklets = load_tracklets(cfg["corpus"]["path"])
        probe_path = cfg["eval"]["probe_path"]
        gallery_path = cfg["eval"]["gallery_path"]
        if not probe_path or not gallery_path:
            raise ConfigError(
                "eval.probe_path: required (with eval.gallery_path) when corpus.path is set"
            )
        split = EvalSplit(
            probe=load_tracklets(probe_path), gallery=load_tracklets(gallery_path)
        )
        split.validate()
    else:
        raw, split = generate_synthetic_corpus(
            generator_config(cfg), cfg["seeds"]["corpus"]
        )
        tracklets = raw.tracklets
    corpus = one_shot_split(
        tracklets,
        mode=cfg["split"]["mode"],
        q=cfg["split"]["q"] if cfg["split"]["mode"] == "fraction" else None,
        seed=split_seed(cfg),
    )
    return corpus, split


def _write_metrics_csv(path: Path, steps) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in steps:
            writer.writerow(
                [
                    _fmt(row.step), _fmt(row.t), _fmt(row.n_t), _fmt(row.churn),
                    _fmt(row.label_acc_dp), _fmt(row.label_acc_du),
                    _fmt(row.ce_labeled), _fmt(row.ce_pseudo),
                    _fmt(row.intra), _fmt(row.inter), _fmt(row.total),
                    _fmt(row.rank1), _fmt(row.rank5), _fmt(row.rank20), _fmt(row.map),
                ]
            )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load_config_with_overrides(args)
    if getattr(args, "seed", None) is not None:
        cfg["seeds"]["corpus"] = args.seed
    out = _out_dir(cfg)
    gen = generator_config(cfg)
    corpus, split = generate_synthetic_corpus(gen, cfg["seeds"]["corpus"])
    save_tracklets(out / "corpus.jsonl", corpus.tracklets)
    save_tracklets(out / "probe.jsonl", split.probe)
    save_tracklets(out / "gallery.jsonl", split.gallery)
    _write_manifest(out, cfg, "generate")
    print(
        f"generated corpus: M={gen.identities} identities, C={gen.cameras} cameras, "
        f"|D|={len(corpus.tracklets)} tracklets, d_in={gen.d_in}"
    )
    print(f"eval split: {len(split.probe)} probes, {len(split.gallery)} gallery")
    print(f"wrote {out}/corpus.jsonl, probe.jsonl, gallery.jsonl")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config_with_overrides(args)
    out = _out_dir(cfg)
    corpus, split = _prepare_data(cfg)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    settings = train_settings(cfg, checkpoint_dir=ckpt_dir)
    result = run_tcpl(corpus, split, settings)
    _write_metrics_csv(out / "metrics.csv", result.steps)
    _write_manifest(out, cfg, "train")
    print(
        f"variant={settings.variant} p={settings.p}: best step {result.best_step} "
        f"rank1={result.best_rank1:.4f} map={result.best_map:.4f} "
        f"final_label_acc={'' if result.final_label_acc is None else f'{result.final_label_acc:.4f}'}"
    )
    if result.skipped_short or result.skipped_negative:
        print(
            f"skipped consistency terms: {result.skipped_short} short tracklets, "
            f"{result.skipped_negative} windows below the rank range"
        )
    print(f"wrote {out}/metrics.csv and {len(result.steps)} checkpoints")
    return 0


def cmd_evaluate(args) -> int:
    encoder, _, _ = load_checkpoint(args.checkpoint)
    split = EvalSplit(
        probe=load_tracklets(args.probe), gallery=load_tracklets(args.gallery)
    )
    split.validate()
    report = evaluate_split(encoder, split)
    print(
        f"rank1={report.rank1:.4f} rank5={report.rank5:.4f} "
        f"rank20={report.rank20:.4f} map={report.map:.4f}"
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "rank1": report.rank1, "rank5": report.rank5,
            "rank20": report.rank20, "map": report.map,
        }
        (out / "evaluation.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"wrote {out}/evaluation.json")
    return 0


def _sweep_run(task) -> dict:
    """One sweep cell; failures are captured, not raised."""
    cfg, axis, value, seed, run_dir = task
    row = {
        "axis": axis, "value": value, "seed": seed, "status": "ok",
        "best_step": None, "rank1": None, "rank5": None,
        "rank20": None, "map": None, "label_acc": None,
    }
    try:
        corpus, split = _prepare_data(cfg)
        settings = train_settings(cfg)
        result = run_tcpl(corpus, split, settings)
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        _write_metrics_csv(Path(run_dir) / "metrics.csv", result.steps)
        _write_manifest(Path(run_dir), cfg, "sweep-run")
        row.update(
            best_step=result.best_step,
            rank1=result.best_rank1,
            rank5=result.steps[result.best_step - 1].rank5,
            rank20=result.steps[result.best_step - 1].rank20,
            map=result.best_map,
            label_acc=result.final_label_acc,
        )
    except Exception as exc:  # recorded, sweep continues
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
    return row


def _sweep_tasks(cfg: dict, axis: str, values, seeds, out: Path):
    tasks = []
    for value in values:
        for seed in seeds:
            run_cfg = json.loads(json.dumps(cfg))
            run_cfg["seeds"]["train"] = seed
            if axis == "p":
                run_cfg["schedule"]["p"] = value
            elif axis == "lambda":
                run_cfg["loss"]["lambda"] = value
                run_cfg["loss"]["variant"] = "full"
            elif axis == "r":
                run_cfg["sampler"]["r"] = int(value)
                run_cfg["loss"]["variant"] = "inter"
            run_cfg = resolve_config(run_cfg)
            run_dir = out / f"run_{axis}_{value}_seed_{seed}"
            run_cfg["output_dir"] = str(run_dir)
            tasks.append((run_cfg, axis, value, seed, str(run_dir)))
    return tasks


def _worker_count() -> int:
    raw = os.environ.get("TCPL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TCPL_THREADS: must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("TCPL_THREADS: must be >= 1")
    return n


def cmd_sweep(args) -> int:
    cfg = _load_config_with_overrides(args)
    out = _out_dir(cfg)
    axis = args.axis
    try:
        values = [float(v) if axis != "r" else int(v) for v in args.values.split(",") if v]
        seeds = [int(s) for s in args.seeds.split(",") if s]
    except ValueError as exc:
        raise ConfigError(f"arguments: {exc}") from None
    if not values or not seeds:
        raise ConfigError("arguments: --values and --seeds must be non-empty")

    tasks = _sweep_tasks(cfg, axis, values, seeds, out)
    workers = _worker_count()
    if workers == 1:
        rows = [_sweep_run(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_run, tasks))

    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])
        for value in values:
            ok = [
                r for r in rows
                if r["value"] == value and r["status"] == "ok" and r["rank1"] is not None
            ]
            for stat, fn in (("mean", _mean), ("std", _std)):
                writer.writerow(
                    [
                        _fmt(axis), _fmt(value), stat, f"agg({len(ok)})", "",
                        _fmt(fn([r["rank1"] for r in ok])),
                        _fmt(fn([r["rank5"] for r in ok])),
                        _fmt(fn([r["rank20"] for r in ok])),
                        _fmt(fn([r["map"] for r in ok])),
                        _fmt(fn([r["label_acc"] for r in ok if r["label_acc"] is not None])),
                    ]
                )
    _write_manifest(out, cfg, f"sweep --axis {axis}")
    failures = sum(1 for r in rows if r["status"] != "ok")
    print(f"sweep complete: {len(rows)} runs, {failures} failed; wrote {out}/sweep.csv")
    return 0


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def _std(xs):
    if not xs:
        return None
    m = _mean(xs)
    return (sum((x - m) ** 2 for x in xs) / len(xs)) ** 0.5


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tcpl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="JSON config path")
    common.add_argument("--out", type=str, default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="seed override")

    gen = sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    gen.set_defaults(fn=cmd_generate)

    train = sub.add_parser("train", parents=[common], help="run the training loop")
    train.add_argument(
        "--variant", choices=["full", "intra", "inter", "ce-only", "exclusive"],
        default=None, help="loss variant override",
    )
    train.set_defaults(fn=cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on a probe/gallery split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--probe", required=True)
    ev.add_argument("--gallery", required=True)
    ev.add_argument("--out", type=str, default=None)
    ev.set_defaults(fn=cmd_evaluate)

    sweep = sub.add_parser("sweep", parents=[common], help="run an axis x seeds grid")
    sweep.add_argument("--axis", choices=["p", "lambda", "r"], required=True)
    sweep.add_argument("--values", required=True, help="comma-separated axis values")
    sweep.add_argument("--seeds", required=True, help="comma-separated training seeds")
    sweep.add_argument(
        "--variant", choices=["full", "intra", "inter", "ce-only", "exclusive"],
        default=None, help="loss variant for p sweeps (lambda/r sweeps force their own)",
    )
    sweep.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (ConfigError, InvalidConfig) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime/numeric failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
