"""Command line front-end: ``omsi run``, ``omsi sweep``, ``omsi verify``."""

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig, apply_overrides, load_config
from .errors import ConfigError
from .metrics import RunRecord, to_percent
from .streams import (Dataset, load_idx, make_synthetic_blobs, split_by_classes,
                      subsample_per_class)
from .strategies import run_stream

log = logging.getLogger("omsi")

SWEEP_AXES = {"alpha": float, "k_inner": int, "fraction": float}


# -- single runs -------------------------------------------------------------

def _load_data(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    if cfg.dataset == "synthetic":
        full = make_synthetic_blobs(cfg.synthetic_classes,
                                    cfg.synthetic_per_class + cfg.synthetic_test_per_class,
                                    cfg.synthetic_dim, cfg.synthetic_separation, cfg.data_seed)
        rows = np.arange(len(full)) % (cfg.synthetic_per_class + cfg.synthetic_test_per_class)
        train_rows = rows < cfg.synthetic_per_class
        return full.subset(train_rows), full.subset(~train_rows)
    train = load_idx(cfg.train_images, cfg.train_labels)
    test = load_idx(cfg.test_images, cfg.test_labels)
    return train, test


def execute(cfg: ExperimentConfig, rep: int, data=None) -> RunRecord:
    """Run repetition ``rep`` of an experiment (all seeds offset by ``rep``)."""
    train, test = data if data is not None else _load_data(cfg)
    seeds = cfg.seeds(rep)
    if cfg.per_class:
        train = subsample_per_class(train, cfg.per_class, seeds["data"])
    spec = split_by_classes(
        train, test, cfg.classes_per_exp,
        seeds["class_order"] if cfg.shuffle_classes else None,
        batch_size=cfg.batch_size, passes=cfg.passes, shuffle_seed=seeds["shuffle"],
        n_experiences=cfg.n_experiences or None,
    )
    record = run_stream(
        spec, cfg.noise_spec(rep), cfg.strategy, cfg.omsi_config(), hidden=cfg.hidden,
        buffer_capacity=cfg.buffer_capacity, clean_buffer=cfg.clean_buffer,
        model_seed=seeds["model"], buffer_seed=seeds["buffer"],
        sampling_seed=seeds["sampling"], record_traces=cfg.trace,
    )
    record.seeds = seeds
    return record


def _job(args):
    cfg, rep = args
    return execute(cfg, rep)


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("OMSI_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def execute_many(jobs: Sequence[Tuple[ExperimentConfig, int]]) -> List[RunRecord]:
    """Run jobs, in worker processes when more than one worker is allowed; order preserved."""
    workers = worker_count(len(jobs))
    if workers == 1:
        cache: Dict[tuple, tuple] = {}
        out = []
        for cfg, rep in jobs:
            key = (cfg.dataset, cfg.train_images, cfg.test_images, cfg.data_seed)
            if key not in cache:
                cache[key] = _load_data(cfg)
            out.append(execute(cfg, rep, cache[key]))
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


# -- output ------------------------------------------------------------------

def results_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run_id", "experience", "LA", "RA"])
    for run_id, rec in enumerate(records):
        for r in rec.per_experience:
            writer.writerow([run_id, r.experience, to_percent(r.la), to_percent(r.ra)])
    return buf.getvalue()


def _stats(values: Sequence[float]) -> Dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std}


def summarize_csv(text: str) -> Dict:
    """Mean and sample std (N-1) over runs, recomputed from ``results.csv`` rows.

    Per run: average LA over experiences and RA after the last experience,
    both in percent as written to the CSV.
    """
    runs: Dict[int, List[Tuple[int, float, float]]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        runs.setdefault(int(row["run_id"]), []).append(
            (int(row["experience"]), float(row["LA"]), float(row["RA"])))
    avg_la, final_ra = [], []
    for run_id in sorted(runs):
        rows = sorted(runs[run_id])
        avg_la.append(float(np.mean([r[1] for r in rows])))
        final_ra.append(rows[-1][2])
    return {"runs": len(avg_la), "avg_learning_acc": _stats(avg_la),
            "retained_acc": _stats(final_ra), "per_run_avg_la": avg_la,
            "per_run_final_ra": final_ra}


def write_outputs(cfg: ExperimentConfig, records: Sequence[RunRecord], out_dir: Path) -> Dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = results_csv(records)
    (out_dir / "results.csv").write_text(text)
    summary = summarize_csv(text)
    summary["strategy"] = cfg.strategy
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out_dir / "config.txt").write_text(cfg.dumps())
    if cfg.trace:
        with open(out_dir / "weights.jsonl", "w") as f:
            for run_id, rec in enumerate(records):
                for t in rec.step_traces:
                    f.write(json.dumps({"run": run_id, **t.to_json()}) + "\n")
    return summary


# -- commands ----------------------------------------------------------------

def cmd_run(cfg: ExperimentConfig, out_dir=None) -> Dict:
    cfg.validate()
    out_dir = Path(out_dir or cfg.output_dir)
    records = execute_many([(cfg, rep) for rep in range(cfg.repetitions)])
    return write_outputs(cfg, records, out_dir)


def parse_values(axis: str, values: str) -> List:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    try:
        return [SWEEP_AXES[axis](v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {values!r} for axis {axis}") from None


def _point_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    key = "noise_fraction" if axis == "fraction" else axis
    return cfg.replace(**{key: value})


def cmd_sweep(cfg: ExperimentConfig, axis: str, values: Sequence, out_dir=None) -> List[Dict]:
    """Run the experiment once per axis value; write ``sweep.csv`` plus per-point results."""
    out_dir = Path(out_dir or cfg.output_dir)
    points = [_point_config(cfg, axis, v) for v in values]
    for p in points:
        p.validate()
    jobs = [(p, rep) for p in points for rep in range(p.repetitions)]
    records = execute_many(jobs)

    rows, pos = [], 0
    for value, p in zip(values, points):
        recs = records[pos:pos + p.repetitions]
        pos += p.repetitions
        summary = write_outputs(p, recs, out_dir / f"{axis}={value}")
        rows.append({"value": value, **summary})

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([axis, "LA_mean", "LA_std", "RA_mean", "RA_std"])
    for r in rows:
        la, ra = r["avg_learning_acc"], r["retained_acc"]
        writer.writerow([r["value"], f"{la['mean']:.2f}", f"{la['std']:.2f}",
                         f"{ra['mean']:.2f}", f"{ra['std']:.2f}"])
    (out_dir / "sweep.csv").write_text(buf.getvalue())
    return rows


def best_point(rows: Sequence[Dict]):
    """Grid-search selection: the sweep value with the highest mean RA (first on ties)."""
    return max(rows, key=lambda r: r["retained_acc"]["mean"])["value"]


def cmd_verify(instances: int = 100, seed: int = 0) -> int:
    from .verify import run_verification

    results = run_verification(instances, seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omsi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment for all repetitions")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="override output_dir")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key (repeatable)")

    sweep = sub.add_parser("sweep", help="repeat an experiment over one axis")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sweep.add_argument("--values", required=True, help="comma-separated list")
    sweep.add_argument("--out", help="override output_dir")
    sweep.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    verify = sub.add_parser("verify", help="check analytic gradients against finite differences")
    verify.add_argument("--instances", type=int, default=100)
    verify.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "verify":
            if args.instances < 1:
                raise ConfigError("--instances must be >= 1")
            return cmd_verify(args.instances, args.seed)
        cfg = apply_overrides(load_config(args.config), args.set)
        if args.command == "run":
            summary = cmd_run(cfg, args.out)
            la, ra = summary["avg_learning_acc"], summary["retained_acc"]
            print(f"{cfg.strategy}: LA {la['mean']:.1f} ± {la['std']:.1f}  "
                  f"RA {ra['mean']:.1f} ± {ra['std']:.1f}  ({summary['runs']} runs)")
        else:
            rows = cmd_sweep(cfg, args.axis, parse_values(args.axis, args.values), args.out)
            for r in rows:
                print(f"{args.axis}={r['value']}: LA {r['avg_learning_acc']['mean']:.1f}  "
                      f"RA {r['retained_acc']['mean']:.1f}")
            print(f"best {args.axis} by mean RA: {best_point(rows)}")
    except ConfigError as exc:
        print(f"omsi: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"omsi: I/O error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"omsi: invalid data: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
