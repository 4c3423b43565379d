"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

The full comparison runs twice (ordering, then determinism), so this module
takes roughly a quarter of an hour on one core.
"""

import csv
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from breakwater_design import cli
from breakwater_design.assistant import AssistantConfig, label_dataset, rates, stratified_split, train_assistant
from breakwater_design.evolution import RunTrace, random_system, reproduce
from breakwater_design.evolution.optimizer import REAL
from breakwater_design.geometry import BreakwaterSystem, check_constraints, cost, is_feasible
from breakwater_design.metrics import dominates, hypervolume, hypervolume_mc
from breakwater_design.surrogate import (
    SurrogateConfig,
    SurrogateModel,
    TrainingDataset,
    TrainingRecord,
    encode,
    masks_for,
    train,
)
from breakwater_design.wavesim import simulate, wave_height_at_targets

from helpers import GRADCHECK_SPECS, gradient_check

APPROACH_ORDER = ["proposed", "no_surrogate", "baseline", "random_search"]
PROPERTY_CASES = 1000
TIME_LIMIT_S = 15 * 60


def record(log, number, ok, detail):
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}"
    log.append(line)
    print(line)
    return ok


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def compare_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("compare") / "first"
    start = time.perf_counter()
    code = cli.main(["compare", "--out", str(out)])
    return out, code, time.perf_counter() - start


def oracle_dataset(dom, n, seed):
    rng = np.random.default_rng(seed)
    ds = TrainingDataset()
    for i in range(n):
        g = random_system(dom, rng)
        f = simulate(g, dom)
        ds.append(TrainingRecord(g, f.heights, wave_height_at_targets(f, dom), seed=seed * 1_000_003 + i))
    return ds


@pytest.fixture(scope="session")
def trained_surrogate(dom):
    ds = oracle_dataset(dom, 200, seed=11)
    model = SurrogateModel(dom, SurrogateConfig(), seed=0)
    metrics = train(model, ds, dom, seed=0)
    return model, ds, metrics


# 1 -------------------------------------------------------------------------


def test_criterion_1_ordering(compare_run, acceptance_log):
    out, code, elapsed = compare_run
    assert code == 0
    summary = {r["approach"]: r for r in read_rows(out / "summary.csv")}
    hv = {a: float(summary[a]["hv_median"]) for a in APPROACH_ORDER}
    ordered = all(hv[a] >= hv[b] for a, b in zip(APPROACH_ORDER, APPROACH_ORDER[1:]))
    strict = hv["proposed"] > hv["baseline"]
    both = int(summary["proposed"]["seeds_both_better"])
    ok = ordered and strict and both >= 3 and elapsed <= TIME_LIMIT_S
    hv_text = " ".join(f"{a}={hv[a]:.2f}" for a in APPROACH_ORDER)
    record(acceptance_log, 1, ok,
           f"median HV {hv_text}; seeds with cost_pct<0 and wh_pct<0: {both}/5; wall {elapsed:.0f} s")
    assert ordered, hv
    assert strict, hv
    assert both >= 3
    assert elapsed <= TIME_LIMIT_S


# 2 -------------------------------------------------------------------------


def test_criterion_2_surrogate_quality(trained_surrogate, acceptance_log):
    _, ds, metrics = trained_surrogate
    test = metrics["test"]
    mean_height = float(np.mean([r.target_heights for r in ds.subset("test")]))
    ok = test["mape"] <= 10.0 and test["mae"] <= 0.1 * mean_height
    record(acceptance_log, 2, ok,
           f"n_test={test['n']} MAPE {test['mape']:.2f}% (<= 10%), MAE {test['mae']:.4f} (<= {0.1 * mean_height:.4f})")
    assert test["mape"] <= 10.0
    assert test["mae"] <= 0.1 * mean_height


# 3 -------------------------------------------------------------------------


def test_criterion_3_assistant_quality(dom, trained_surrogate, acceptance_log):
    model, _, _ = trained_surrogate
    # labels come from records the surrogate never saw
    fresh = oracle_dataset(dom, 200, seed=12).records
    state = model.state
    model.state = "ready"
    cfg = AssistantConfig()
    labeled = label_dataset(model, fresh, dom, cfg.err_threshold)
    model.state = state
    asst, auc = train_assistant(labeled, dom, cfg, seed=0, surrogate=model)

    labels = np.array([r.label for r in labeled])
    _, test_idx = stratified_split(labels, cfg.train_fraction, 0)
    scores = asst.scores(masks_for([labeled[i].record for i in test_idx], dom))
    cal = asst.calibration
    tpr, _ = rates(scores, labels[test_idx], np.array([cal.threshold, cal.crossing]))
    ok = auc >= 0.65 and tpr[0] >= tpr[1]
    record(acceptance_log, 3, ok,
           f"ROC-AUC {auc:.3f} (>= 0.65), positives {labels.mean():.2f}, "
           f"TPR(t={cal.threshold:.3f}) {tpr[0]:.3f} >= TPR(t*={cal.crossing:.3f}) {tpr[1]:.3f}")
    assert auc >= 0.65
    assert tpr[0] >= tpr[1]


# 4 -------------------------------------------------------------------------


def test_criterion_4_gradients(acceptance_log):
    start = time.perf_counter()
    worst = {name: gradient_check(spec, seed=7) for name, spec in GRADCHECK_SPECS.items()}
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-3 and elapsed < 10.0
    record(acceptance_log, 4, ok, f"worst relative error {max(worst.values()):.2e} (< 1e-3) in {elapsed:.2f} s (< 10 s)")
    assert max(worst.values()) < 1e-3, worst
    assert elapsed < 10.0


# 5 -------------------------------------------------------------------------


def test_criterion_5_hypervolume(acceptance_log):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        pts = rng.uniform(0.0, 10.0, size=(int(rng.integers(1, 30)), 2))
        ref = (11.0, 11.0)
        exact = hypervolume(pts, ref)
        mc = hypervolume_mc(pts, ref, n_samples=1_000_000, seed=int(rng.integers(1 << 31)))
        worst = max(worst, abs(exact - mc) / exact)
    a = hypervolume([(1.0, 1.0)], (2.0, 2.0))
    b = hypervolume([(1.0, 2.0), (2.0, 1.0)], (3.0, 3.0))
    ok = worst <= 0.01 and a == 1.0 and b == 3.0
    record(acceptance_log, 5, ok, f"worst MC deviation {100 * worst:.3f}% (<= 1%) over 20 sets; hand values {a}, {b}")
    assert worst <= 0.01
    assert a == 1.0 and b == 3.0


# 6 -------------------------------------------------------------------------

objective = st.tuples(st.integers(0, 6), st.integers(0, 6)).map(lambda t: (float(t[0]), float(t[1])))
coord = st.floats(0.0, 60.0, allow_nan=False, allow_infinity=False)


@st.composite
def polylines(draw):
    n = draw(st.integers(2, 5))
    nodes = draw(st.lists(st.tuples(coord, coord), min_size=n, max_size=n))
    for a, b in zip(nodes, nodes[1:]):
        if a == b:
            nodes = [(x + 0.5 * i, y) for i, (x, y) in enumerate(nodes)]
            break
    return nodes


systems = st.lists(polylines(), min_size=0, max_size=4)


@settings(max_examples=PROPERTY_CASES, database=None)
@given(objective, objective, objective)
def prop_dominance_laws(a, b, c):
    assert not dominates(a, a)
    assert not (dominates(a, b) and dominates(b, a))
    if dominates(a, b) and dominates(b, c):
        assert dominates(a, c)


@settings(max_examples=PROPERTY_CASES, database=None)
@given(systems, systems, st.randoms(use_true_random=False))
def prop_cost_additive_and_permutation_invariant(a, b, rnd):
    sa, sb = BreakwaterSystem.from_lists(a), BreakwaterSystem.from_lists(b)
    joined = BreakwaterSystem.from_lists(a + b)
    assert cost(joined) == pytest.approx(cost(sa) + cost(sb), rel=1e-12, abs=1e-12)
    shuffled = list(a + b)
    rnd.shuffle(shuffled)
    assert cost(BreakwaterSystem.from_lists(shuffled)) == pytest.approx(cost(joined), rel=1e-12, abs=1e-12)


@pytest.fixture(scope="module")
def feasibility_pool(dom):
    rng = np.random.default_rng(21)
    return [random_system(dom, rng) for _ in range(64)]


@settings(max_examples=PROPERTY_CASES, database=None)
@given(systems, st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def prop_constraints_monotone_in_epsilon(dom, lines, e1, e2):
    lo, hi = sorted((e1, e2))
    sys = BreakwaterSystem.from_lists(lines)
    if check_constraints(sys, dom, epsilon=hi).feasible:
        assert check_constraints(sys, dom, epsilon=lo).feasible


@settings(max_examples=PROPERTY_CASES, database=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0), st.integers(1, 12))
def prop_reproduce_always_feasible(dom, feasibility_pool, seed, rate, cap):
    rng = np.random.default_rng(seed)
    parents = [feasibility_pool[i] for i in rng.choice(len(feasibility_pool), size=6, replace=False)]
    kids = reproduce(parents, rate, cap, dom, rng, fitness=rng.random(6) if seed % 2 else None)
    assert len(kids) == cap
    assert all(is_feasible(k, dom) for k in kids)


def test_criterion_6_invariants(dom, feasibility_pool, compare_run, acceptance_log):
    props = {
        "dominance laws": lambda: prop_dominance_laws(),
        "cost additivity": lambda: prop_cost_additive_and_permutation_invariant(),
        "epsilon monotonicity": lambda: prop_constraints_monotone_in_epsilon(dom),
        "reproduce feasibility": lambda: prop_reproduce_always_feasible(dom, feasibility_pool),
    }
    failed = []
    for name, run in props.items():
        try:
            run()
        except Exception as exc:  # noqa: BLE001
            failed.append(f"{name}: {type(exc).__name__}")

    out, code, _ = compare_run
    assert code == 0
    runs = sorted((out / "proposed").glob("seed_*"))
    drops, non_real, members = 0, 0, 0
    for run in runs:
        hv = [row.hv for row in RunTrace.read_csv(run / "trace.csv")]
        drops += int(np.sum(np.diff(hv) < -1e-9 * max(1.0, max(hv))))
        archive = read_rows(run / "archive.csv")
        members += len(archive)
        non_real += sum(1 for row in archive if row["provenance"] != REAL)
    ok = not failed and len(runs) == 5 and drops == 0 and non_real == 0
    record(acceptance_log, 6, ok,
           f"{len(props) - len(failed)}/{len(props)} property suites x {PROPERTY_CASES} cases; "
           f"{len(runs)} runs with {drops} HV drops; {members - non_real}/{members} archive members real")
    assert not failed, failed
    assert len(runs) == 5
    assert drops == 0
    assert non_real == 0


# 7 -------------------------------------------------------------------------


def test_criterion_7_determinism(compare_run, tmp_path, acceptance_log):
    first, code, _ = compare_run
    assert code == 0
    second = tmp_path / "second"
    assert cli.main(["compare", "--out", str(second)]) == 0
    names = sorted(p.relative_to(first) for p in first.rglob("*.csv"))
    assert names == sorted(p.relative_to(second) for p in second.rglob("*.csv"))
    differ = [str(n) for n in names if (first / n).read_bytes() != (second / n).read_bytes()]
    record(acceptance_log, 7, not differ, f"{len(names) - len(differ)}/{len(names)} CSV files byte-identical")
    assert not differ, differ


# 8 -------------------------------------------------------------------------


def test_criterion_8_speed(dom, trained_surrogate, acceptance_log):
    model, _, _ = trained_surrogate
    state = model.state
    model.state = "ready"
    rng = np.random.default_rng(8)
    designs = [random_system(dom, rng) for _ in range(100)]

    def median_ms(fn, items):
        times = []
        for i, item in enumerate(items):
            t0 = time.perf_counter()
            fn(i, item)
            times.append(time.perf_counter() - t0)
        return 1e3 * float(np.median(times))

    masks = [encode(g, dom, i)[None] for i, g in enumerate(designs)]
    sim = median_ms(lambda i, g: simulate(g, dom), designs)
    enc = median_ms(lambda i, g: encode(g, dom, i), designs)
    inf = median_ms(lambda i, m: model.predict_targets(m), masks)
    model.state = state
    ratio = sim / inf
    end_to_end = sim / (enc + inf)
    record(acceptance_log, 8, ratio >= 20.0,
           f"median simulate {sim:.2f} ms, surrogate inference {inf:.3f} ms, "
           f"ratio {ratio:.1f} (>= 20); with input encoding {end_to_end:.1f}")
    assert ratio >= 20.0
