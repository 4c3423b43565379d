"""Random sampling and genetic operators for breakwater systems.

All operators keep systems feasible by construction: a candidate is redrawn
until it passes the domain constraints, with a fallback when the retry cap is
hit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..environment import DomainConfig
from ..geometry import BreakwaterSystem, Polyline, is_feasible


class InfeasibleDomainError(RuntimeError):
    """Raised when no feasible breakwater system can be sampled."""


@dataclass(frozen=True)
class OperatorConfig:
    max_breakwaters: int = 3
    max_nodes: int = 5
    init_max_segments: int = 4
    min_segment_length: float = 1.0
    max_segment_length: float | None = None  # defaults to a quarter of the short side
    shift_sigma: float = 0.05  # fraction of the domain diagonal
    insert_jitter: float = 0.02  # fraction of the domain diagonal
    retry_cap: int = 100
    init_retry_cap: int = 10_000

    def segment_length_range(self, dom: DomainConfig) -> tuple[float, float]:
        hi = self.max_segment_length or 0.25 * min(dom.width, dom.height)
        return self.min_segment_length, max(hi, self.min_segment_length)


DEFAULT_OPERATORS = OperatorConfig()


def _search_cells(dom: DomainConfig) -> np.ndarray:
    return np.flatnonzero(dom.search_mask)


def _in_search_area(dom: DomainConfig, x: float, y: float) -> bool:
    if not (0.0 <= x < dom.width and 0.0 <= y < dom.height):
        return False
    return bool(dom.search_mask[int(y), int(x)])


def random_breakwater(
    dom: DomainConfig,
    rng: np.random.Generator,
    n_segments: int,
    cfg: OperatorConfig = DEFAULT_OPERATORS,
    node_tries: int = 20,
) -> Polyline | None:
    """Random-walk polyline whose nodes lie in the search area.

    The first node is uniform over the search area; each next node is drawn
    at a uniform angle and a uniform length within the configured segment
    range. Returns ``None`` if a node cannot be placed.
    """
    cells = _search_cells(dom)
    if len(cells) == 0:
        return None
    c = cells[rng.integers(len(cells))]
    y0, x0 = divmod(int(c), dom.width)
    nodes = [(x0 + rng.random(), y0 + rng.random())]
    lo, hi = cfg.segment_length_range(dom)
    for _ in range(n_segments):
        for _ in range(node_tries):
            ang = rng.uniform(0.0, 2.0 * math.pi)
            length = rng.uniform(lo, hi)
            x = nodes[-1][0] + length * math.cos(ang)
            y = nodes[-1][1] + length * math.sin(ang)
            if not _in_search_area(dom, x, y):
                continue
            candidate = BreakwaterSystem(((nodes[-1], (x, y)),))
            if is_feasible(candidate, dom):
                nodes.append((x, y))
                break
        else:
            return None
    return tuple(nodes)


def random_system(
    dom: DomainConfig, rng: np.random.Generator, cfg: OperatorConfig = DEFAULT_OPERATORS
) -> BreakwaterSystem:
    """Feasible system with 1..max_breakwaters breakwaters of 1..init_max_segments segments."""
    if len(_search_cells(dom)) == 0:
        raise InfeasibleDomainError("the domain has no cell where a breakwater may be placed")
    for _ in range(cfg.init_retry_cap):
        n_bw = int(rng.integers(1, cfg.max_breakwaters + 1))
        lines = []
        for _ in range(n_bw):
            n_seg = int(rng.integers(1, min(cfg.init_max_segments, cfg.max_nodes - 1) + 1))
            line = random_breakwater(dom, rng, n_seg, cfg)
            if line is None:
                break
            lines.append(line)
        else:
            sys = BreakwaterSystem(tuple(lines))
            if is_feasible(sys, dom):
                return sys
    raise InfeasibleDomainError(
        f"no feasible breakwater system found within {cfg.init_retry_cap} attempts"
    )


# ---------------------------------------------------------------------------
# mutation


def _shift_node(sys, dom, rng, cfg):
    j = int(rng.integers(len(sys.breakwaters)))
    line = list(sys.breakwaters[j])
    i = int(rng.integers(len(line)))
    sigma = cfg.shift_sigma * dom.diagonal
    x, y = line[i]
    line[i] = (x + rng.normal(0.0, sigma), y + rng.normal(0.0, sigma))
    return _replace_line(sys, j, line)


def _insert_node(sys, dom, rng, cfg):
    choices = [j for j, b in enumerate(sys.breakwaters) if len(b) < cfg.max_nodes]
    j = choices[int(rng.integers(len(choices)))]
    line = list(sys.breakwaters[j])
    i = int(rng.integers(len(line) - 1))
    sigma = cfg.insert_jitter * dom.diagonal
    mx = 0.5 * (line[i][0] + line[i + 1][0]) + rng.normal(0.0, sigma)
    my = 0.5 * (line[i][1] + line[i + 1][1]) + rng.normal(0.0, sigma)
    line.insert(i + 1, (mx, my))
    return _replace_line(sys, j, line)


def _delete_node(sys, dom, rng, cfg):
    choices = [j for j, b in enumerate(sys.breakwaters) if len(b) > 2]
    j = choices[int(rng.integers(len(choices)))]
    line = list(sys.breakwaters[j])
    del line[int(rng.integers(1, len(line) - 1))]
    return _replace_line(sys, j, line)


def _add_breakwater(sys, dom, rng, cfg):
    line = random_breakwater(dom, rng, int(rng.integers(1, 3)), cfg)
    if line is None:
        return None
    return BreakwaterSystem(sys.breakwaters + (line,))


def _delete_breakwater(sys, dom, rng, cfg):
    j = int(rng.integers(len(sys.breakwaters)))
    return BreakwaterSystem(sys.breakwaters[:j] + sys.breakwaters[j + 1 :])


def _replace_line(sys, j, line):
    for a, b in zip(line, line[1:]):
        if a == b:
            return None
    return BreakwaterSystem(sys.breakwaters[:j] + (tuple(line),) + sys.breakwaters[j + 1 :])


MUTATIONS = {
    "shift_node": _shift_node,
    "insert_node": _insert_node,
    "delete_node": _delete_node,
    "add_breakwater": _add_breakwater,
    "delete_breakwater": _delete_breakwater,
}


def applicable_mutations(sys: BreakwaterSystem, cfg: OperatorConfig = DEFAULT_OPERATORS) -> list[str]:
    ops = []
    if len(sys.breakwaters):
        ops.append("shift_node")
    if any(len(b) < cfg.max_nodes for b in sys.breakwaters):
        ops.append("insert_node")
    if any(len(b) > 2 for b in sys.breakwaters):
        ops.append("delete_node")
    if len(sys.breakwaters) < cfg.max_breakwaters:
        ops.append("add_breakwater")
    if len(sys.breakwaters) > 1:
        ops.append("delete_breakwater")
    return ops


def apply_mutation(
    sys: BreakwaterSystem,
    op: str,
    dom: DomainConfig,
    rng: np.random.Generator,
    cfg: OperatorConfig = DEFAULT_OPERATORS,
) -> BreakwaterSystem:
    """Apply one named operator, retrying until the result is feasible.

    Returns ``sys`` unchanged when ``cfg.retry_cap`` draws all fail.
    """
    if op not in applicable_mutations(sys, cfg):
        raise ValueError(f"mutation {op!r} is not applicable to this system")
    fn = MUTATIONS[op]
    for _ in range(cfg.retry_cap):
        out = fn(sys, dom, rng, cfg)
        if out is not None and is_feasible(out, dom):
            return out
    return sys


def mutate(
    sys: BreakwaterSystem,
    dom: DomainConfig,
    rate: float,
    rng: np.random.Generator,
    cfg: OperatorConfig = DEFAULT_OPERATORS,
) -> BreakwaterSystem:
    """With probability ``rate`` apply one uniformly chosen applicable operator."""
    if rate <= 0 or rng.random() >= rate:
        return sys
    for _ in range(cfg.retry_cap):
        ops = applicable_mutations(sys, cfg)
        op = ops[int(rng.integers(len(ops)))]
        out = MUTATIONS[op](sys, dom, rng, cfg)
        if out is not None and is_feasible(out, dom):
            return out
    return sys


# ---------------------------------------------------------------------------
# crossover


def crossover(
    a: BreakwaterSystem,
    b: BreakwaterSystem,
    dom: DomainConfig,
    rng: np.random.Generator,
    cfg: OperatorConfig = DEFAULT_OPERATORS,
) -> BreakwaterSystem:
    """Child made of a non-empty subset of ``a``'s breakwaters plus a subset of ``b``'s."""
    for _ in range(cfg.retry_cap):
        keep_a = rng.random(len(a.breakwaters)) < 0.5
        if not keep_a.any():
            keep_a[int(rng.integers(len(keep_a)))] = True
        keep_b = rng.random(len(b.breakwaters)) < 0.5
        lines: list[Polyline] = []
        for line in [l for l, k in zip(a.breakwaters, keep_a) if k] + [
            l for l, k in zip(b.breakwaters, keep_b) if k
        ]:
            if line not in lines:
                lines.append(line)
        if len(lines) > cfg.max_breakwaters:
            continue
        child = BreakwaterSystem(tuple(lines))
        if is_feasible(child, dom):
            return child
    return a
