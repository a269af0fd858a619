"""Command-line harness: dataset generation, protocol runs, reports, selftest.

Exit codes: 0 success, 1 selftest failure, 2 usage/validation problems,
3 pool exhaustion during a run.  The environment variable SHIFTBENCH_SEED
overrides the config's master seed; the --seed flag overrides both.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .classifier import loss_and_grad
from .core import BinaryDataset, PoolExhaustionError, StarDataset
from .datagen import (
    filter_reviews,
    generate_mixture,
    load_cluster_specs,
    load_reviews_jsonl,
    reviews_to_dataset,
)
from .evaluation import read_records_csv, write_records_csv
from .protocols import PROTOCOLS, ProtocolConfig, count_records, run_protocol
from .quantifiers import (
    PACC,
    SMM,
    fit_evidence,
    mixture_fit_alpha,
    PosteriorHistogram,
)
from .reporting import render_markdown, render_plotdata, render_table_csv

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_EXHAUSTED = 3

_CLI_PROTOCOLS = {p.replace("_", "-"): p for p in PROTOCOLS}


@dataclasses.dataclass
class RunManifest:
    """Provenance of one protocol run, written next to records.csv."""

    config_hash: str
    master_seed: int
    methods: list[str]
    protocol: str
    started: str
    finished: str
    record_count: int
    artifacts: dict[str, str]

    def write(self, path: Path):
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def _fail(message: str, code: int = EXIT_USAGE) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_gen_data(args) -> int:
    try:
        specs = load_cluster_specs(args.spec)
        dataset = generate_mixture(specs, args.n, args.seed)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"cannot generate dataset: {exc}")
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(dataset)):
            row = {"features": [float(v) for v in dataset.x[i]]}
            if isinstance(dataset, StarDataset):
                row["stars"] = int(dataset.stars[i])
            else:
                row["label"] = int(dataset.labels[i])
            row["category"] = str(dataset.category[i])
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(dataset)} datapoints to {args.out}")
    for cat in ("A", "B"):
        share = float((dataset.category == cat).mean())
        if share:
            print(f"  category {cat}: {share:.3f}")
    if isinstance(dataset, StarDataset):
        for s in (1, 2, 3, 4, 5):
            print(f"  {s} stars: {float((dataset.stars == s).mean()):.3f}")
    else:
        print(f"  positive prevalence: {dataset.prevalence:.3f}")
    return EXIT_OK


def _load_dataset(path: str):
    """Sniff a JSONL dataset: reviews (text), star vectors, or binary vectors."""
    with open(path, encoding="utf-8") as fh:
        first = ""
        for line in fh:
            if line.strip():
                first = line
                break
    if not first:
        raise ValueError(f"{path}: empty dataset")
    probe = json.loads(first)
    if "text" in probe:
        reviews = filter_reviews(load_reviews_jsonl(path))
        if not reviews:
            raise ValueError(f"{path}: every review was filtered out")
        return reviews_to_dataset(reviews)
    rows = [json.loads(line) for line in open(path, encoding="utf-8") if line.strip()]
    x = np.array([r["features"] for r in rows], dtype=float)
    category = np.array([r.get("category", "A") for r in rows])
    if "stars" in probe:
        return StarDataset(x, np.array([r["stars"] for r in rows]), category)
    return BinaryDataset(x, np.array([r["label"] for r in rows]), category)


def cmd_run(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"cannot read config: {exc}")
    dataset_path = raw.pop("dataset", None)
    if dataset_path is None:
        return _fail("config must name a 'dataset' file")
    raw["protocol"] = _CLI_PROTOCOLS[args.protocol]
    if args.methods:
        raw["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    try:
        cfg = ProtocolConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        return _fail(f"bad config: {exc}")
    if os.environ.get("SHIFTBENCH_SEED"):
        try:
            cfg.master_seed = int(os.environ["SHIFTBENCH_SEED"])
        except ValueError:
            return _fail(
                f"SHIFTBENCH_SEED must be an integer, got {os.environ['SHIFTBENCH_SEED']!r}"
            )
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.desk:
        cfg = cfg.desk()

    dataset_file = Path(dataset_path)
    if not dataset_file.is_absolute():
        dataset_file = Path(args.config).parent / dataset_file
    try:
        dataset = _load_dataset(dataset_file)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"cannot load dataset: {exc}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _timestamp()
    try:
        records = run_protocol(cfg, dataset, jobs=args.jobs)
    except PoolExhaustionError as exc:
        return _fail(str(exc), EXIT_EXHAUSTED)
    except (TypeError, ValueError) as exc:
        return _fail(str(exc))
    records_path = out_dir / "records.csv"
    n = write_records_csv(records, records_path)
    expected = count_records(cfg)
    if n != expected:
        return _fail(f"internal error: wrote {n} records, expected {expected}", EXIT_FAIL)
    cfg_digest = hashlib.sha256(
        json.dumps({**cfg.to_dict(), "dataset": str(dataset_path)}, sort_keys=True).encode()
    ).hexdigest()
    RunManifest(
        config_hash=cfg_digest,
        master_seed=cfg.master_seed,
        methods=list(cfg.methods),
        protocol=cfg.protocol,
        started=started,
        finished=_timestamp(),
        record_count=n,
        artifacts={"records": str(records_path)},
    ).write(out_dir / "manifest.json")
    print(f"wrote {n} records to {records_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        records = read_records_csv(args.records)
    except (OSError, ValueError) as exc:
        return _fail(f"cannot read records: {exc}")
    if not records:
        return _fail("records file holds no rows")
    renderers = {
        "markdown": render_markdown,
        "csv": render_table_csv,
        "plotdata": render_plotdata,
    }
    text = renderers[args.format](records)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote report to {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def _selftest_instance(seed: int):
    """A small fitted evidence stack on noisy two-cluster data."""
    rng = np.random.default_rng(seed)
    n = 400
    labels = (rng.random(n) < 0.5).astype(int)
    x = rng.standard_normal((n, 2)) + np.where(labels[:, None] == 1, 1.0, -1.0)
    evidence = fit_evidence(x, labels, C=10.0, folds=5, seed=seed)
    test = rng.standard_normal((200, 2)) + np.where(
        (rng.random(200) < 0.3)[:, None], 1.0, -1.0
    )
    return evidence, test


def cmd_selftest(args) -> int:
    failures = 0

    # 1. mean matching agrees with the probabilistic adjusted count
    worst = 0.0
    for seed in range(10):
        evidence, test = _selftest_instance(seed)
        pacc = PACC().fit_evidence(evidence)
        smm = SMM().fit_evidence(evidence)
        if args.inject_fault == "pacc-rates":
            pacc.rates_ = type(pacc.rates_)(pacc.rates_.fpr, pacc.rates_.tpr)
        worst = max(worst, abs(pacc.quantify(test) - smm.quantify(test)))
    ok = worst <= 1e-9
    failures += not ok
    print(f"[{'PASS' if ok else 'FAIL'}] mean-matching equals adjusted posterior count "
          f"(max gap {worst:.2e})")

    # 2. hellinger mixture search agrees with a direct fine-grid scan
    worst = 0.0
    rng = np.random.default_rng(7)
    for _ in range(10):
        pos = PosteriorHistogram.from_scores(rng.beta(4, 2, 300), 10)
        neg = PosteriorHistogram.from_scores(rng.beta(2, 4, 300), 10)
        true_alpha = rng.uniform(0.1, 0.9)
        mix = true_alpha * pos.masses + (1 - true_alpha) * neg.masses
        test_h = PosteriorHistogram(mix / mix.sum())
        found = mixture_fit_alpha(pos, neg, test_h, "hellinger")
        grid = np.linspace(0, 1, 200001)
        mixes = grid[:, None] * pos.masses + (1 - grid)[:, None] * neg.masses
        direct = grid[
            int(np.argmin(np.sqrt(((np.sqrt(mixes) - np.sqrt(test_h.masses)) ** 2).sum(1)) ))
        ]
        worst = max(worst, abs(found - direct))
    ok = worst <= 1e-4
    failures += not ok
    print(f"[{'PASS' if ok else 'FAIL'}] hellinger mixture search matches direct scan "
          f"(max gap {worst:.2e})")

    # 3. analytic gradient agrees with central finite differences
    rng = np.random.default_rng(3)
    x = rng.standard_normal((60, 4))
    labels = (rng.random(60) < 0.5).astype(float)
    from .classifier import item_weights

    omega = item_weights(labels.astype(int), None)
    worst = 0.0
    for _ in range(10):
        params = rng.standard_normal(5)
        _, grad = loss_and_grad(params, x, labels, 1.0, omega)
        fd = np.empty_like(grad)
        h = 1e-6
        for j in range(len(params)):
            up, down = params.copy(), params.copy()
            up[j] += h
            down[j] -= h
            fd[j] = (
                loss_and_grad(up, x, labels, 1.0, omega)[0]
                - loss_and_grad(down, x, labels, 1.0, omega)[0]
            ) / (2 * h)
        worst = max(worst, np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-12))
    ok = worst <= 1e-4
    failures += not ok
    print(f"[{'PASS' if ok else 'FAIL'}] analytic gradient matches finite differences "
          f"(max rel err {worst:.2e})")

    return EXIT_OK if failures == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftbench",
        description="Binary quantification benchmark under controlled dataset shift",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--spec", required=True, help="JSON list of Gaussian cluster specs")
    p.add_argument("--out", required=True, help="output JSONL dataset path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=20000, help="number of datapoints")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run a shift protocol and write records.csv")
    p.add_argument("protocol", choices=sorted(_CLI_PROTOCOLS))
    p.add_argument("--config", required=True, help="JSON protocol configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel repetitions")
    p.add_argument("--desk", action="store_true",
                   help="desk-scale preset: 2 repetitions, 5 samples per config")
    p.add_argument("--methods", default=None, help="comma-separated method names")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render tables or plot data from records.csv")
    p.add_argument("records", help="records.csv from a run")
    p.add_argument("--format", choices=("markdown", "csv", "plotdata"),
                   default="markdown")
    p.add_argument("--out", default=None, help="write to a file instead of stdout")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run the built-in consistency checks")
    p.add_argument("--inject-fault", choices=("none", "pacc-rates"), default="none",
                   help="deliberately corrupt a check (for testing the selftest)")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
