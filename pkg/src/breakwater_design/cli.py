"""Command-line entry point.

Commands::

    optimize            one or more optimization runs
    compare             approach x seed comparison with a summary report
    surrogate dataset   sample random designs and save oracle records
    surrogate train     fit surrogate and assistant from a saved dataset
    surrogate eval      regression metrics, scatter and TPR/TNR tables

Every flag can also be set through an environment variable named
``BREAKWATER_<FLAG>`` (upper case, dashes as underscores), e.g.
``BREAKWATER_BUDGET=300``. Command-line values win over the environment.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .assistant import (
    AssistantConfig,
    AssistantModel,
    SingleClassError,
    calibrate_threshold,
    label_dataset,
    rates,
    roc_auc,
    stratified_split,
    train_assistant,
)
from .environment import DomainConfig, DomainError, load_domain, synthetic_case
from .evolution.operators import random_system
from .evolution.optimizer import (
    APPROACHES,
    ConfigError,
    EAConfig,
    ExternalOracle,
    Individual,
    RunTrace,
    optimize,
    write_archive_csv,
    write_geometry,
)
from .metrics import QUANTILES, efficiency, hypervolume, quantile_trace, reference_point
from .report import Band, write_band_svg
from .surrogate import (
    DatasetTooSmall,
    SurrogateConfig,
    SurrogateModel,
    TrainingDataset,
    TrainingRecord,
    masks_for,
    regression_metrics,
    train,
)
from .wavesim import ExternalAdapterConfig, WaveModelError, simulate, wave_height_at_targets

log = logging.getLogger("breakwater_design")

ENV_PREFIX = "BREAKWATER_"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument types


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0,2,5"`` or an inclusive range ``"0-4"``."""
    seeds: list[int] = []
    try:
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError(f"seed list {text!r} must name non-negative seeds")
    return list(dict.fromkeys(seeds))


def parse_approaches(text: str) -> list[str]:
    names = [a.strip() for a in str(text).split(",") if a.strip()]
    bad = [a for a in names if a not in APPROACHES]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown approach {', '.join(bad) or repr(text)}; choose from {', '.join(APPROACHES)}"
        )
    return list(dict.fromkeys(names))


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _rate(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"rate must lie in [0, 1], got {v}")
    return v


def _flag(parser, *names, default=None, **kwargs):
    """Add an option whose default can come from ``BREAKWATER_<NAME>``."""
    long = next(n for n in names if n.startswith("--"))
    env = ENV_PREFIX + long[2:].upper().replace("-", "_")
    if env in os.environ:
        # argparse runs string defaults through ``type``, so bad values are usage errors
        default = os.environ[env]
    help_text = kwargs.pop("help", "")
    parser.add_argument(*names, default=default, help=f"{help_text} [env {env}]".strip(), **kwargs)


def _ea_flags(p, approach_default: str, seeds_default: str) -> None:
    d = EAConfig()
    _flag(p, "--domain", default="synthetic", help="'synthetic' or a domain YAML file")
    _flag(p, "--approach", default=approach_default, type=parse_approaches,
          help=f"comma-separated subset of {','.join(APPROACHES)}")
    _flag(p, "--seeds", "--seed", dest="seeds", default=seeds_default, type=parse_seeds,
          help="seed, list '0,2' or range '0-4'")
    _flag(p, "--budget", default=d.budget, type=_positive_int, help="real-model evaluations per run")
    _flag(p, "--init-size", default=d.init_size, type=_positive_int, help="initial population size")
    _flag(p, "--pop-size", default=d.pop_size, type=_positive_int, help="population size")
    _flag(p, "--arch-size", default=d.archive_size, type=_positive_int, help="archive size")
    _flag(p, "--mutation-rate", default=d.mutation_rate, type=_rate, help="per-child mutation probability")
    _flag(p, "--threads", default=1, type=_positive_int, help="worker processes")
    _flag(p, "--external-model-cmd", default=None, help="external wave model command (replaces the built-in oracle)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="breakwater-design", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", help="run optimizations and write traces, archives and geometry")
    _ea_flags(p, "proposed", "0")
    _flag(p, "--out", default="runs", help="output directory")

    p = sub.add_parser("compare", help="compare approaches over several seeds")
    _ea_flags(p, ",".join(APPROACHES), "0-4")
    _flag(p, "--out", default="compare", help="output directory")

    p = sub.add_parser("surrogate", help="offline surrogate and assistant tools")
    ssub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)

    q = ssub.add_parser("dataset", help="sample random feasible designs and evaluate them")
    _flag(q, "--domain", default="synthetic", help="'synthetic' or a domain YAML file")
    _flag(q, "--n-records", default=200, type=_positive_int, help="number of records")
    _flag(q, "--seeds", "--seed", dest="seeds", default="0", type=parse_seeds, help="sampling seed")
    _flag(q, "--out", default="dataset.npz", help="dataset file to write")

    q = ssub.add_parser("train", help="train surrogate and assistant from a dataset file")
    q.add_argument("dataset", help="dataset .npz written by 'surrogate dataset'")
    _flag(q, "--domain", default="synthetic", help="'synthetic' or a domain YAML file")
    _flag(q, "--seeds", "--seed", dest="seeds", default="0", type=parse_seeds, help="training seed")
    _flag(q, "--epochs", default=None, type=_positive_int, help="surrogate epochs")
    _flag(q, "--assistant-epochs", default=None, type=_positive_int, help="assistant epochs")
    _flag(q, "--assistant-fraction", default=0.5, type=_rate,
          help="share of records held back from the surrogate to label the assistant")
    _flag(q, "--out", default="model", help="checkpoint directory")

    q = ssub.add_parser("eval", help="evaluate a checkpoint directory")
    q.add_argument("checkpoint", help="directory written by 'surrogate train'")
    _flag(q, "--domain", default="synthetic", help="'synthetic' or a domain YAML file")
    _flag(q, "--out", default=None, help="report directory (defaults to the checkpoint directory)")
    return parser


# ---------------------------------------------------------------------------
# helpers


def load_domain_arg(text: str) -> DomainConfig:
    if text == "synthetic":
        return synthetic_case()
    if text.startswith("synthetic:"):
        return synthetic_case(int(text.split(":", 1)[1]))
    return load_domain(text)


def ea_config(args, approach: str, seed: int) -> EAConfig:
    return EAConfig(
        init_size=args.init_size,
        pop_size=args.pop_size,
        archive_size=args.arch_size,
        mutation_rate=args.mutation_rate,
        budget=args.budget,
        seed=seed,
        approach=approach,
    )


@dataclass
class RunJob:
    domain: str
    cfg: EAConfig
    out_dir: Path
    external_cmd: str | None


@dataclass
class RunResult:
    approach: str
    seed: int
    out_dir: Path
    archive: list[Individual]
    trace: RunTrace


def run_job(job: RunJob) -> RunResult:
    """One optimization; writes ``trace.csv``, ``archive.csv`` and ``geometry.txt``."""
    dom = load_domain_arg(job.domain)
    job.out_dir.mkdir(parents=True, exist_ok=True)
    oracle = None
    if job.external_cmd:
        oracle = ExternalOracle(ExternalAdapterConfig(job.external_cmd, job.out_dir / "exchange"))
    archive, trace = optimize(dom, job.cfg, oracle=oracle)
    trace.to_csv(job.out_dir / "trace.csv")
    write_archive_csv(job.out_dir / "archive.csv", archive)
    write_geometry(job.out_dir / "geometry.txt", archive)
    info = {k: v for k, v in trace.info.items() if isinstance(v, (int, float, str, dict, type(None)))}
    (job.out_dir / "run_info.json").write_text(json.dumps(info, indent=2, default=float) + "\n")
    log.info(
        "%s seed %d: %d real / %d surrogate evals, %d archive members, %.1f s",
        job.cfg.approach, job.cfg.seed, trace.info.get("real_evals", 0),
        trace.info.get("surrogate_evals", 0), len(archive), trace.info.get("seconds", 0.0),
    )
    return RunResult(job.cfg.approach, job.cfg.seed, job.out_dir, archive, trace)


def run_jobs(jobs: Sequence[RunJob], workers: int) -> list[RunResult]:
    """Run jobs in a bounded process pool; results keep the job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(run_job, jobs))


def make_jobs(args, seeds: Sequence[int], out: Path, nested: bool) -> list[RunJob]:
    load_domain_arg(args.domain)  # fail early on a bad domain
    jobs = []
    for approach in args.approach:
        for seed in seeds:
            cfg = ea_config(args, approach, seed)
            cfg.validate()
            run_dir = out / approach / f"seed_{seed}" if nested else out
            jobs.append(RunJob(args.domain, cfg, run_dir, args.external_model_cmd))
    return jobs


# ---------------------------------------------------------------------------
# commands


def cmd_optimize(args) -> int:
    out = Path(args.out)
    nested = len(args.approach) * len(args.seeds) > 1
    jobs = make_jobs(args, args.seeds, out, nested)
    # a single run uses the threads for its own evaluations
    if len(jobs) == 1:
        jobs[0].cfg.threads = args.threads
    results = run_jobs(jobs, args.threads)
    for r in results:
        print(f"{r.approach} seed {r.seed}: {len(r.archive)} archive members -> {r.out_dir}")
    return EXIT_OK


def hv_series(trace: RunTrace, reference) -> tuple[np.ndarray, np.ndarray]:
    """Archive hypervolume per generation under a common reference."""
    evals = np.array([r.real_evals for r in trace.records], dtype=np.float64)
    hv = np.array([hypervolume(np.array(r.archive).reshape(-1, 2), reference) for r in trace.records])
    return evals, hv


def write_compare_report(results: Sequence[RunResult], out: Path, approaches: Sequence[str]) -> dict:
    """Common-reference hypervolumes, efficiency summary, quantile traces and plot."""
    reference = reference_point([np.array(r.trace.evaluated).reshape(-1, 2) for r in results])
    series = {(r.approach, r.seed): hv_series(r.trace, reference) for r in results}
    seeds = sorted({r.seed for r in results})
    base_name = "baseline" if "baseline" in approaches else approaches[0]
    by_key = {(r.approach, r.seed): r for r in results}

    rows = []
    for r in results:
        base = by_key.get((base_name, r.seed))
        eff = efficiency(
            [a.objectives for a in r.archive], [a.objectives for a in base.archive]
        ) if base is not None else {"cost_pct": float("nan"), "wh_pct": float("nan")}
        if r.approach == base_name:
            eff = {"cost_pct": 0.0, "wh_pct": 0.0}
        rows.append({
            "approach": r.approach,
            "seed": r.seed,
            "final_hv": float(series[(r.approach, r.seed)][1][-1]),
            "real_evals": r.trace.records[-1].real_evals,
            "surrogate_evals": r.trace.records[-1].surrogate_evals,
            "archive_size": len(r.archive),
            "min_cost": min(a.cost for a in r.archive),
            "min_wh": min(a.wh for a in r.archive),
            **eff,
        })
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in row.items()} for row in rows)

    summary = []
    for approach in approaches:
        mine = [row for row in rows if row["approach"] == approach]
        hv = np.array([row["final_hv"] for row in mine])
        cost_pct = np.array([row["cost_pct"] for row in mine])
        wh_pct = np.array([row["wh_pct"] for row in mine])
        summary.append({
            "approach": approach,
            "n_seeds": len(mine),
            "hv_median": float(np.median(hv)),
            "hv_q25": float(np.quantile(hv, 0.25, method="inverted_cdf")),
            "hv_q75": float(np.quantile(hv, 0.75, method="inverted_cdf")),
            "cost_pct": float(np.median(cost_pct)),
            "wh_pct": float(np.median(wh_pct)),
            "seeds_both_better": int(np.sum((cost_pct < 0) & (wh_pct < 0))),
        })
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in row.items()} for row in summary)

    bands = []
    with open(out / "hv_convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["approach", "real_evals"] + [f"q{int(q * 100)}" for q in QUANTILES])
        for approach in approaches:
            traces = [series[(approach, s)] for s in seeds if (approach, s) in series]
            grid, q = quantile_trace(traces, QUANTILES)
            with open(out / f"quantiles_{approach}.csv", "w", newline="") as qf:
                qw = csv.writer(qf, lineterminator="\n")
                qw.writerow(["real_evals"] + [f"q{int(v * 100)}" for v in QUANTILES])
                for j, x in enumerate(grid):
                    qw.writerow([int(x)] + [repr(float(v)) for v in q[:, j]])
            for j, x in enumerate(grid):
                w.writerow([approach, int(x)] + [repr(float(v)) for v in q[:, j]])
            bands.append(Band(approach, grid, q[0], q[1], q[2]))
    write_band_svg(
        out / "hv_convergence.svg", bands, title="Archive hypervolume (median, 25-75% band)",
        xlabel="real-model evaluations", ylabel="hypervolume",
    )
    with open(out / "reference.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cost_ref", "wh_ref"])
        w.writerow([repr(float(reference[0])), repr(float(reference[1]))])
    return {"reference": reference, "summary": summary, "runs": rows}


def cmd_compare(args) -> int:
    if len(args.approach) < 2:
        raise UsageError("compare needs at least two approaches")
    out = Path(args.out)
    jobs = make_jobs(args, args.seeds, out, nested=True)
    t0 = time.perf_counter()
    results = run_jobs(jobs, args.threads)
    report = write_compare_report(results, out, args.approach)
    for row in report["summary"]:
        print(
            f"{row['approach']:<14} hv {row['hv_median']:.4f}  cost {row['cost_pct']:+.1f}%  "
            f"wh {row['wh_pct']:+.1f}%  both better in {row['seeds_both_better']}/{row['n_seeds']} seeds"
        )
    print(f"{len(results)} runs in {time.perf_counter() - t0:.1f} s -> {out}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    dom = load_domain_arg(args.domain)
    seed = args.seeds[0]
    rng = np.random.default_rng(seed)
    ds = TrainingDataset()
    for i in range(args.n_records):
        g = random_system(dom, rng)
        f = simulate(g, dom)
        ds.append(TrainingRecord(g, f.heights, wave_height_at_targets(f, dom), seed=seed * 1_000_003 + i))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ds.save(args.out)
    print(f"{len(ds)} records -> {args.out}")
    return EXIT_OK


ASSISTANT_SPLIT = "assistant"


def split_for_assistant(ds: TrainingDataset, fraction: float, seed: int) -> None:
    """Tag a ``fraction`` of records for the assistant; the rest train the surrogate."""
    n = len(ds)
    order = np.random.default_rng(seed).permutation(n)
    n_asst = int(round(fraction * n))
    for rank, idx in enumerate(order):
        ds.records[idx].split = ASSISTANT_SPLIT if rank < n_asst else "train"


def cmd_train(args) -> int:
    dom = load_domain_arg(args.domain)
    path = Path(args.dataset)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    ds = TrainingDataset.load(path)
    seed = args.seeds[0]
    split_for_assistant(ds, args.assistant_fraction, seed)
    sur_part = TrainingDataset([r for r in ds.records if r.split != ASSISTANT_SPLIT])
    model = SurrogateModel(dom, SurrogateConfig(min_records=2), seed=seed)

    def on_epoch(epoch: int, loss: float) -> None:
        print(f"surrogate epoch {epoch + 1} loss {loss:.6f}", flush=True)

    metrics = train(model, sur_part, dom, epochs=args.epochs, seed=seed, on_epoch=on_epoch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "surrogate.npz")
    for split in ("train", "test"):
        if split in metrics:
            m = metrics[split]
            print(f"surrogate {split}: MAPE {m['mape']:.2f}%  MAE {m['mae']:.4f}  (n={m['n']})")
    print(f"surrogate state: {model.state}")

    asst_records = [r for r in ds.records if r.split == ASSISTANT_SPLIT]
    if asst_records:
        ready = model.state
        model.state = "ready"  # labels are wanted even for a surrogate below readiness
        labeled = label_dataset(model, asst_records, dom, AssistantConfig().err_threshold)
        model.state = ready
        try:
            asst, auc = train_assistant(labeled, dom, AssistantConfig(), seed=seed,
                                        epochs=args.assistant_epochs, surrogate=model)
            asst.metrics["seed"] = seed
            asst.save(out / "assistant.npz")
            print(f"assistant: ROC-AUC {auc:.3f}  threshold {asst.threshold:.4f}")
        except SingleClassError as exc:
            print(f"assistant not trained: {exc}")
    ds.save(out / "dataset.npz")
    print(f"checkpoint -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dom = load_domain_arg(args.domain)
    ckpt = Path(args.checkpoint)
    for name in ("surrogate.npz", "dataset.npz"):
        if not (ckpt / name).exists():
            raise FileNotFoundError(f"{ckpt / name} does not exist")
    out = Path(args.out) if args.out else ckpt
    out.mkdir(parents=True, exist_ok=True)
    model = SurrogateModel.load(ckpt / "surrogate.npz")
    ds = TrainingDataset.load(ckpt / "dataset.npz")
    test = ds.subset("test") or ds.subset("train")
    pred = model.raw_target_predictions(masks_for(test, dom))
    truth = np.stack([r.target_heights for r in test])
    m = regression_metrics(pred, truth)
    print(f"MAPE {m['mape']:.3f}%")
    print(f"MAE {m['mae']:.5f}")
    with open(out / "scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "target", "real", "predicted"])
        for k, (p, t) in enumerate(zip(pred, truth)):
            for j in range(len(t)):
                w.writerow([k, j, repr(float(t[j])), repr(float(p[j]))])

    if not (ckpt / "assistant.npz").exists():
        print("no assistant checkpoint; TPR/TNR table skipped")
        return EXIT_OK
    asst = AssistantModel.load(ckpt / "assistant.npz")
    records = ds.subset(ASSISTANT_SPLIT)
    state = model.state
    model.state = "ready"
    labeled = label_dataset(model, records, dom, asst.config.err_threshold)
    model.state = state
    labels = np.array([r.label for r in labeled])
    # same held-out part the assistant was calibrated on
    _, test_idx = stratified_split(labels, asst.config.train_fraction, int(asst.metrics.get("seed", 0)))
    scores = asst.scores(masks_for([labeled[i].record for i in test_idx], dom))
    try:
        auc = roc_auc(scores, labels[test_idx])
        cal = calibrate_threshold(scores, labels[test_idx], asst.config.offset)
    except SingleClassError as exc:
        print(f"TPR/TNR table skipped: {exc}")
        return EXIT_OK
    cal.write_csv(out / "tpr_tnr.csv")
    tpr, _ = rates(scores, labels[test_idx], np.array([cal.threshold, cal.crossing]))
    print(f"ROC-AUC {auc:.4f}")
    print(f"threshold {cal.threshold:.4f} (crossing {cal.crossing:.4f}); TPR {tpr[0]:.3f} vs {tpr[1]:.3f}")
    return EXIT_OK


def cmd_surrogate(args) -> int:
    return {"dataset": cmd_dataset, "train": cmd_train, "eval": cmd_eval}[args.action](args)


COMMANDS = {"optimize": cmd_optimize, "compare": cmd_compare, "surrogate": cmd_surrogate}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"breakwater-design: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, WaveModelError, DatasetTooSmall, OSError, ValueError, RuntimeError) as exc:
        print(f"breakwater-design: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
