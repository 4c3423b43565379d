"""Three-stage surrogate-assisted optimizer and its comparison variants.

Stage 1 samples a large feasible population and evaluates it with the real
wave model. Stage 2 trains the surrogate on those records while evolution
continues on the real model for a preparation window; the assistant is then
fitted on records the surrogate has not seen. Stage 3 evolves with the
surrogate, routing uncertain candidates to the real model and re-evaluating
every archive candidate with it before it may enter the archive.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..assistant import (
    USE_REAL,
    AssistantConfig,
    AssistantModel,
    SingleClassError,
    label_dataset,
    train_assistant,
)
from ..environment import DomainConfig
from ..geometry import BreakwaterSystem, cost
from ..metrics import hypervolume, nondominated_mask
from ..surrogate import (
    DatasetTooSmall,
    SurrogateConfig,
    SurrogateModel,
    TrainingDataset,
    TrainingRecord,
    encode,
    noise_seed,
    train,
)
from ..wavesim import (
    DEFAULT_PARAMS,
    ExternalAdapterConfig,
    WaveField,
    WaveModelParams,
    aggregate_heights,
    boundary_height,
    external_simulate,
    simulate,
    wave_height_at_targets,
)
from .operators import DEFAULT_OPERATORS, OperatorConfig, crossover, mutate, random_system
from .spea2 import environmental_selection, spea2_fitness

log = logging.getLogger(__name__)

APPROACHES = ("proposed", "no_surrogate", "baseline", "random_search")
REAL = "real"
SURROGATE = "surrogate"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# data types


@dataclass
class Individual:
    genotype: BreakwaterSystem
    cost: float
    wh: float
    provenance: str
    id: int
    target_heights: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    fitness: float = float("nan")

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.cost, self.wh)


@dataclass
class EAConfig:
    init_size: int = 200
    pop_size: int = 40
    archive_size: int = 20
    mutation_rate: float = 0.35
    budget: int = 400
    seed: int = 0
    approach: str = "proposed"
    offspring_cap: int | None = None  # defaults to pop_size
    prep_evals: int = 160  # real-model evaluations run while the surrogate is prepared
    max_generations: int = 200
    mating: str = "tournament"  # or "uniform"
    use_surrogate: bool = True
    hv_guard: bool = True
    reference: tuple[float, float] | None = None
    retrain_every: int = 100
    threads: int = 1
    operators: OperatorConfig = field(default_factory=lambda: DEFAULT_OPERATORS)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    assistant: AssistantConfig = field(default_factory=AssistantConfig)

    @property
    def n_offspring(self) -> int:
        return self.offspring_cap or self.pop_size

    def validate(self) -> None:
        if self.approach not in APPROACHES:
            raise ConfigError(f"unknown approach {self.approach!r}; choose from {', '.join(APPROACHES)}")
        if min(self.init_size, self.pop_size, self.archive_size, self.budget) < 1:
            raise ConfigError("sizes and budget must be positive")
        if not (self.archive_size <= self.pop_size <= self.init_size):
            raise ConfigError("need archive_size <= pop_size <= init_size")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ConfigError("mutation_rate must lie in [0, 1]")
        if self.approach in ("proposed", "no_surrogate") and self.budget <= self.init_size:
            raise ConfigError(f"budget {self.budget} must exceed init_size {self.init_size}")
        if self.approach == "baseline" and self.budget < self.pop_size:
            raise ConfigError(f"budget {self.budget} is smaller than pop_size {self.pop_size}")
        if self.mating not in ("tournament", "uniform"):
            raise ConfigError(f"unknown mating scheme {self.mating!r}")
        if self.prep_evals < 0 or self.threads < 1:
            raise ConfigError("prep_evals must be >= 0 and threads >= 1")


@dataclass
class GenerationRecord:
    gen: int
    phase: str
    real_evals: int
    surrogate_evals: int
    hv: float
    archive: list[tuple[float, float]]


@dataclass
class RunTrace:
    approach: str
    seed: int
    reference: tuple[float, float]
    records: list[GenerationRecord] = field(default_factory=list)
    evaluated: list[tuple[float, float]] = field(default_factory=list)  # every real objective pair
    info: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gen", "phase", "real_evals", "surrogate_evals", "hv", "archive"])
            for r in self.records:
                pairs = ";".join(f"{c!r}:{h!r}" for c, h in r.archive)
                w.writerow([r.gen, r.phase, r.real_evals, r.surrogate_evals, repr(r.hv), pairs])

    @staticmethod
    def read_csv(path: str | Path) -> list[GenerationRecord]:
        out = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                pairs = [tuple(float(v) for v in p.split(":")) for p in row["archive"].split(";") if p]
                out.append(
                    GenerationRecord(
                        int(row["gen"]), row["phase"], int(row["real_evals"]),
                        int(row["surrogate_evals"]), float(row["hv"]), pairs,
                    )
                )
        return out


# ---------------------------------------------------------------------------
# oracles and evaluation


@dataclass(frozen=True)
class BuiltinOracle:
    params: WaveModelParams = DEFAULT_PARAMS

    def __call__(self, sys: BreakwaterSystem, dom: DomainConfig) -> WaveField:
        return simulate(sys, dom, self.params)


@dataclass(frozen=True)
class ExternalOracle:
    adapter: ExternalAdapterConfig

    def __call__(self, sys: BreakwaterSystem, dom: DomainConfig) -> WaveField:
        return external_simulate(sys, dom, self.adapter)


def _run_oracle(args):
    oracle, sys, dom = args
    return oracle(sys, dom).heights


class BudgetExceeded(RuntimeError):
    pass


class Evaluator:
    """Real-model calls with budget accounting and an optional worker pool."""

    def __init__(self, dom: DomainConfig, budget: int, oracle: Callable | None = None, threads: int = 1):
        self.dom = dom
        self.budget = budget
        self.oracle = oracle or BuiltinOracle()
        self.threads = threads
        self.real_evals = 0
        self.surrogate_evals = 0
        self._pool = None
        if threads > 1 and not isinstance(self.oracle, ExternalOracle):
            self._pool = ProcessPoolExecutor(max_workers=threads)

    @property
    def remaining(self) -> int:
        return self.budget - self.real_evals

    def fields(self, genotypes: Sequence[BreakwaterSystem]) -> list[np.ndarray]:
        if len(genotypes) > self.remaining:
            raise BudgetExceeded(f"{len(genotypes)} evaluations requested, {self.remaining} left")
        jobs = [(self.oracle, g, self.dom) for g in genotypes]
        if self._pool is not None and len(jobs) > 1:
            out = list(self._pool.map(_run_oracle, jobs, chunksize=max(1, len(jobs) // (4 * self.threads))))
        else:
            out = [_run_oracle(j) for j in jobs]
        self.real_evals += len(genotypes)
        return out

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def default_reference(dom: DomainConfig, cfg: EAConfig, params: WaveModelParams = DEFAULT_PARAMS) -> tuple[float, float]:
    """Fixed per-run reference point bounding every reachable objective pair.

    Each segment lies inside the domain, so cost is at most the number of
    segments times the diagonal; built-in heights never exceed the boundary
    height.
    """
    ops = cfg.operators
    cost_ref = 1.05 * ops.max_breakwaters * (ops.max_nodes - 1) * dom.diagonal
    wh_ref = 1.05 * max(len(dom.targets), 1) * boundary_height(dom, params)
    return (float(cost_ref), float(wh_ref))


# ---------------------------------------------------------------------------
# population operators


def init_population(
    dom: DomainConfig,
    size: int,
    seed: int | np.random.Generator = 0,
    cfg: OperatorConfig = DEFAULT_OPERATORS,
) -> list[BreakwaterSystem]:
    """``size`` feasible random systems (rejection sampled)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [random_system(dom, rng, cfg) for _ in range(size)]


def reproduce(
    parents: Sequence[BreakwaterSystem],
    rate: float,
    offspring_cap: int,
    dom: DomainConfig,
    rng: np.random.Generator,
    cfg: OperatorConfig = DEFAULT_OPERATORS,
    fitness: Sequence[float] | None = None,
) -> list[BreakwaterSystem]:
    """Exactly ``offspring_cap`` children, each a crossover then a mutation.

    Parents of each ordered pair are drawn uniformly, or by binary
    tournament on ``fitness`` (lower wins) when it is given.
    """
    if not parents:
        raise ValueError("cannot reproduce from an empty population")
    n = len(parents)
    fit = None if fitness is None else np.asarray(fitness, dtype=np.float64)

    def pick() -> int:
        i = int(rng.integers(n))
        if fit is None:
            return i
        j = int(rng.integers(n))
        return i if fit[i] <= fit[j] else j

    children = []
    for _ in range(offspring_cap):
        i = pick()
        j = pick()
        child = crossover(parents[i], parents[j], dom, rng, cfg)
        children.append(mutate(child, dom, rate, rng, cfg))
    return children


def _objectives(inds: Sequence[Individual]) -> np.ndarray:
    return np.array([i.objectives for i in inds], dtype=np.float64).reshape(-1, 2)


def _dedupe(inds: Sequence[Individual]) -> list[Individual]:
    seen, out = set(), []
    for ind in inds:
        if ind.id not in seen:
            seen.add(ind.id)
            out.append(ind)
    return out


def select(inds: Sequence[Individual], size: int) -> list[Individual]:
    """SPEA2 environmental selection; stores the fitness on each individual."""
    inds = list(inds)
    if not inds:
        return []
    fit = spea2_fitness(_objectives(inds))
    for ind, f in zip(inds, fit):
        ind.fitness = float(f)
    return [inds[i] for i in environmental_selection(_objectives(inds), fit, size)]


# ---------------------------------------------------------------------------
# optimizer


class _Run:
    def __init__(self, dom: DomainConfig, cfg: EAConfig, oracle, params: WaveModelParams):
        self.dom, self.cfg, self.params = dom, cfg, params
        ss = np.random.SeedSequence(cfg.seed)
        ea_ss, model_ss = ss.spawn(2)
        self.rng = np.random.default_rng(ea_ss)
        self.model_seed = int(model_ss.generate_state(1)[0] % (2**31))
        self.evaluator = Evaluator(dom, cfg.budget, oracle or BuiltinOracle(params), cfg.threads)
        self.dataset = TrainingDataset()
        self.next_id = 0
        self.reference = cfg.reference or default_reference(dom, cfg, params)
        self.trace = RunTrace(cfg.approach, cfg.seed, tuple(self.reference))
        self.archive: list[Individual] = []
        self.surrogate: SurrogateModel | None = None
        self.assistant: AssistantModel | None = None
        self.route_all: str | None = None
        self.surrogate_active = False
        self.n_surrogate_train = 0
        self.last_train_size = 0
        # identical genotypes are the same individual: never pay twice
        self.known: dict[BreakwaterSystem, Individual] = {}
        self.predicted: dict[BreakwaterSystem, Individual] = {}

    # evaluation --------------------------------------------------------

    def _new_id(self) -> int:
        self.next_id += 1
        return self.next_id - 1

    def _noise(self, ind_id: int) -> int:
        return noise_seed(self.cfg.seed, ind_id)

    def evaluate_real(self, genotypes: Sequence[BreakwaterSystem], ids: Sequence[int] | None = None) -> list[Individual]:
        """Real-model objectives; ``genotypes`` must be distinct and not yet known."""
        ids = list(ids) if ids is not None else [self._new_id() for _ in genotypes]
        fields = self.evaluator.fields(genotypes)
        out = []
        for g, i, heights in zip(genotypes, ids, fields):
            th = wave_height_at_targets(heights, self.dom)
            wh = aggregate_heights(th, self.params.aggregate)
            self.dataset.append(TrainingRecord(g, heights, th, seed=self._noise(i)))
            self.trace.evaluated.append((cost(g), wh))
            ind = Individual(g, cost(g), wh, REAL, i, th)
            self.known[g] = ind
            out.append(ind)
        return out

    def evaluate_surrogate(self, genotypes: Sequence[BreakwaterSystem], ids: Sequence[int], masks: np.ndarray) -> list[Individual]:
        targets = self.surrogate.predict_targets(masks)
        self.evaluator.surrogate_evals += len(genotypes)
        out = []
        for g, i, t in zip(genotypes, ids, targets):
            ind = Individual(g, cost(g), aggregate_heights(t, self.params.aggregate), SURROGATE, i, t)
            self.predicted[g] = ind
            out.append(ind)
        return out

    def evaluate_offspring(self, genotypes: list[BreakwaterSystem]) -> list[Individual]:
        """Objectives for a generation; already-known genotypes are reused."""
        fresh = []
        for g in genotypes:
            if g not in self.known and g not in self.predicted and g not in fresh:
                fresh.append(g)
        if not self.surrogate_active:
            self.evaluate_real(fresh[: self.evaluator.remaining])
        elif fresh:
            ids = [self._new_id() for _ in fresh]
            masks = np.stack([encode(g, self.dom, self._noise(i)) for g, i in zip(fresh, ids)])
            if self.route_all is not None:
                routes = [self.route_all] * len(fresh)
            else:
                routes = self.assistant.route_batch(masks)
            real_idx = [k for k, r in enumerate(routes) if r == USE_REAL][: self.evaluator.remaining]
            sur_idx = [k for k, r in enumerate(routes) if r != USE_REAL]
            if real_idx:
                self.evaluate_real([fresh[k] for k in real_idx], [ids[k] for k in real_idx])
            if sur_idx:
                self.evaluate_surrogate([fresh[k] for k in sur_idx], [ids[k] for k in sur_idx], masks[sur_idx])
        out = []
        for g in genotypes:
            ind = self.known.get(g) or self.predicted.get(g)
            if ind is not None:
                out.append(ind)
        return out

    # archive -----------------------------------------------------------

    def hv(self, inds: Sequence[Individual]) -> float:
        return hypervolume(_objectives(inds), self.reference)

    def update_archive(self, candidates: list[Individual]) -> None:
        new = select(candidates, self.cfg.archive_size)
        if self.cfg.hv_guard and self.archive and self.hv(new) < self.hv(self.archive):
            log.debug("archive update rejected: hypervolume would drop")
            return
        self.archive = new

    def verify(self, candidates: list[Individual]) -> list[Individual]:
        """Re-evaluate surrogate-scored candidates with the real model."""
        pending = [c for c in candidates if c.provenance != REAL]
        pending = sorted(pending, key=lambda c: c.fitness)[: self.evaluator.remaining]
        if pending:
            for old, new in zip(pending, self.evaluate_real([c.genotype for c in pending], [c.id for c in pending])):
                old.cost, old.wh, old.provenance, old.target_heights = new.cost, new.wh, REAL, new.target_heights
                self.known[old.genotype] = old
                self.predicted.pop(old.genotype, None)
        return [c for c in candidates if c.provenance == REAL]

    def record(self, gen: int, phase: str) -> None:
        self.trace.records.append(
            GenerationRecord(
                gen, phase, self.evaluator.real_evals, self.evaluator.surrogate_evals,
                self.hv(self.archive), [a.objectives for a in sorted(self.archive, key=lambda a: a.objectives)],
            )
        )

    # surrogate preparation --------------------------------------------

    def train_surrogate(self) -> None:
        cfg = self.cfg
        t0 = time.perf_counter()
        model = SurrogateModel(self.dom, cfg.surrogate, seed=self.model_seed)
        data = TrainingDataset(list(self.dataset.records))
        try:
            metrics = train(model, data, self.dom, seed=self.model_seed)
        except DatasetTooSmall as exc:
            log.info("surrogate not trained: %s", exc)
            return
        self.surrogate = model
        self.n_surrogate_train = len(data)
        self.last_train_size = len(self.dataset)
        self.held_out = {id(r) for r in data.subset("test")}
        self.trace.info["surrogate_test"] = metrics.get("test")
        self.trace.info["surrogate_state"] = model.state
        self.trace.info["surrogate_seconds"] = time.perf_counter() - t0
        log.info("surrogate trained on %d records: %s (%s)", len(data), model.state, metrics.get("test"))

    def prepare_assistant(self) -> None:
        """Fit the assistant on records the surrogate did not train on."""
        t0 = time.perf_counter()
        unseen = [r for k, r in enumerate(self.dataset.records) if k >= self.n_surrogate_train or id(r) in self.held_out]
        labeled = label_dataset(self.surrogate, unseen, self.dom, self.cfg.assistant.err_threshold)
        labels = [r.label for r in labeled]
        try:
            self.assistant, auc = train_assistant(
                labeled, self.dom, self.cfg.assistant, seed=self.model_seed, surrogate=self.surrogate
            )
            self.trace.info["assistant_auc"] = auc
            self.trace.info["assistant_threshold"] = self.assistant.threshold
        except SingleClassError:
            # every unseen record falls on one side of the error threshold
            self.route_all = USE_REAL if labels and labels[0] == 1 else "use_surrogate"
            self.trace.info["assistant_route_all"] = self.route_all
        self.trace.info["assistant_seconds"] = time.perf_counter() - t0
        self.trace.info["surrogate_active_from"] = self.evaluator.real_evals
        self.surrogate_active = True

    def maybe_activate(self, ready_at: int) -> None:
        if self.surrogate_active or not self.cfg.use_surrogate:
            return
        if self.surrogate is None or self.surrogate.state != "ready":
            if len(self.dataset) - self.last_train_size >= self.cfg.retrain_every:
                self.train_surrogate()
            return
        if self.evaluator.real_evals >= ready_at:
            self.prepare_assistant()

    # main loops --------------------------------------------------------

    def run_random_search(self) -> None:
        cfg, ev = self.cfg, self.evaluator
        gen = 0
        while ev.remaining > 0 and gen < cfg.max_generations + 1:
            n = min(cfg.pop_size, ev.remaining)
            batch = self.evaluate_offspring(init_population(self.dom, n, self.rng, cfg.operators))
            pool = _dedupe(self.archive + batch)
            front = [p for p, keep in zip(pool, nondominated_mask(_objectives(pool))) if keep]
            self.update_archive(front)
            self.record(gen, "random")
            gen += 1

    def run_evolution(self) -> None:
        cfg, ev = self.cfg, self.evaluator
        init_n = cfg.pop_size if cfg.approach == "baseline" else cfg.init_size
        pop = self.evaluate_offspring(init_population(self.dom, init_n, self.rng, cfg.operators))
        pop = select(_dedupe(pop), cfg.pop_size)
        self.update_archive(pop)
        self.record(0, "init")
        ready_at = ev.real_evals + cfg.prep_evals
        if cfg.approach == "proposed" and cfg.use_surrogate:
            self.last_train_size = len(self.dataset)
            self.train_surrogate()
        gen = 1
        while ev.remaining > 0 and gen <= cfg.max_generations:
            if cfg.approach == "proposed":
                self.maybe_activate(ready_at)
            union = _dedupe(pop + self.archive)
            if self.surrogate_active:
                fit = spea2_fitness(_objectives(union))
                for ind, f in zip(union, fit):
                    ind.fitness = float(f)
                cands = [union[i] for i in environmental_selection(_objectives(union), fit, cfg.archive_size)]
                verified = self.verify(cands)
                self.update_archive(_dedupe(self.archive + verified))
                phase = "surrogate"
            else:
                self.update_archive(union)
                phase = "real"
            fit = spea2_fitness(_objectives(union)) if cfg.mating == "tournament" else None
            children = reproduce(
                [u.genotype for u in union], cfg.mutation_rate, cfg.n_offspring, self.dom, self.rng, cfg.operators, fit
            )
            if ev.remaining <= 0:
                self.record(gen, phase)
                break
            pop = self.evaluate_offspring(children)
            self.record(gen, phase)
            gen += 1
        # last offspring: only real-evaluated ones may enter the archive
        final = [p for p in pop if p.provenance == REAL]
        self.update_archive(_dedupe(self.archive + final))
        self.record(gen, "final")

    def run(self) -> tuple[list[Individual], RunTrace]:
        t0 = time.perf_counter()
        try:
            if self.cfg.approach == "random_search":
                self.run_random_search()
            else:
                self.run_evolution()
        finally:
            self.evaluator.close()
        self.trace.info["seconds"] = time.perf_counter() - t0
        self.trace.info["real_evals"] = self.evaluator.real_evals
        self.trace.info["surrogate_evals"] = self.evaluator.surrogate_evals
        return sorted(self.archive, key=lambda a: a.objectives), self.trace


def optimize(
    dom: DomainConfig,
    cfg: EAConfig,
    oracle: Callable[[BreakwaterSystem, DomainConfig], WaveField] | None = None,
    params: WaveModelParams = DEFAULT_PARAMS,
) -> tuple[list[Individual], RunTrace]:
    """Run one optimization; returns the final archive and its trace."""
    cfg.validate()
    return _Run(dom, cfg, oracle, params).run()


# ---------------------------------------------------------------------------
# output files


def write_archive_csv(path: str | Path, archive: Sequence[Individual]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cost", "wh", "provenance", "n_breakwaters", "genotype"])
        for ind in archive:
            w.writerow(
                [ind.id, repr(ind.cost), repr(ind.wh), ind.provenance, len(ind.genotype),
                 json.dumps(ind.genotype.to_lists())]
            )


def read_archive_csv(path: str | Path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        return [(float(r["cost"]), float(r["wh"])) for r in csv.DictReader(fh)]


def write_geometry(path: str | Path, archive: Sequence[Individual]) -> None:
    """Plain-text geometry: one ``x y`` node per line, blank line between breakwaters."""
    lines = []
    for ind in archive:
        lines.append(f"# individual {ind.id} cost {ind.cost!r} wh {ind.wh!r}")
        for k, bw in enumerate(ind.genotype.breakwaters):
            lines.append(f"breakwater {k}")
            lines.extend(f"{x!r} {y!r}" for x, y in bw)
            lines.append("")
    Path(path).write_text("\n".join(lines) + "\n")
