"""Round-based execution engine: run an algorithm over a communication pattern,
record the trajectory, and compare measured convergence against the worst-case
round bounds.

Rounds are 1-based: configuration t is the state after round t, configuration 0
is the initial one. Every round is a full gather/update step for all agents,
driven by snapshots (all messages of round t carry state from round t-1).
"""

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .algorithms import (
    AgentState,
    AlgorithmKind,
    amortize,
    claimed_alpha,
    effective_period,
    format_kind,
    init_state,
    make_message,
    validate_kind,
)
from .graphs import CommGraph, CommPattern, NetworkModelKind, in_neighbors, is_nonsplit, is_rooted

# component ranges at or below this are treated as already collapsed
RANGE_FLOOR = 1e-30


class UnsupportedScenarioError(RuntimeError):
    """No worst-case bound is on file for this algorithm/network pairing."""


@dataclass(frozen=True)
class Configuration:
    """Positions of all agents after a given round; row p is agent p."""

    positions: np.ndarray
    round: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2:
            raise ValueError(f"positions must be (n, d), got shape {pos.shape}")
        if not np.isfinite(pos).all():
            raise ValueError("positions must be finite")
        if self.round < 0:
            raise ValueError(f"round must be >= 0, got {self.round}")
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


@dataclass
class RunSpec:
    n: int
    d: int
    algorithm: AlgorithmKind
    pattern: CommPattern
    epsilon: float
    initial: Optional[np.ndarray] = None  # None: seeded uniform draw from the unit box
    max_rounds: int = 100_000
    seed: int = 0


@dataclass
class Metrics:
    t_eps: Optional[int]  # first round with all active components within epsilon, None if never hit
    converged: bool
    empirical_rate: float  # worst per-round contraction factor over active components
    bound_t: Optional[int]  # worst-case round bound, None when no theorem applies


@dataclass
class RunTrace:
    spec: RunSpec
    positions: np.ndarray  # (T+1, n, d), row t is the configuration after round t
    deltas: np.ndarray  # (T+1, d) per-component ranges
    margins: np.ndarray  # (T, n) realized per-round safety margins, NaN when vacuous
    metrics: Metrics

    def configuration(self, t: int) -> Configuration:
        return Configuration(self.positions[t], t)


def delta_components(positions: np.ndarray) -> np.ndarray:
    """Per-component range max_p x_p^k - min_p x_p^k."""
    positions = np.asarray(positions, dtype=float)
    return positions.max(axis=0) - positions.min(axis=0)


def step(config: Configuration, g: CommGraph, states: List[AgentState],
         algorithm: AlgorithmKind, tie_seed: int = 0) -> Tuple[Configuration, List[AgentState]]:
    """Advance one round. All messages are built from `states` before any agent
    updates, so the result does not depend on agent iteration order."""
    n = config.n
    if g.n != n or len(states) != n:
        raise ValueError(f"size mismatch: {n} positions, graph on {g.n} nodes, {len(states)} states")
    t = config.round + 1
    period = effective_period(algorithm, n)
    msgs = [make_message(algorithm, states[q], q) for q in range(n)]
    new_states = []
    for p in range(n):
        received = [msgs[q] for q in sorted(in_neighbors(g, p))]
        rng = None
        if algorithm.tie_break == "random":
            rng = np.random.default_rng(np.random.SeedSequence((tie_seed, t, p)))
        new_states.append(amortize(algorithm, states[p], received, t, period=period, rng=rng))
    positions = np.stack([s.x for s in new_states])
    return Configuration(positions, t), new_states


def _validate_spec(spec: RunSpec) -> np.ndarray:
    if spec.n < 1:
        raise ValueError(f"need n >= 1, got {spec.n}")
    if spec.d < 1:
        raise ValueError(f"need d >= 1, got {spec.d}")
    if not (spec.epsilon > 0 and math.isfinite(spec.epsilon)):
        raise ValueError(f"epsilon must be positive and finite, got {spec.epsilon}")
    if spec.max_rounds < 1:
        raise ValueError(f"need max_rounds >= 1, got {spec.max_rounds}")
    if spec.pattern.n != spec.n:
        raise ValueError(f"pattern is built for n={spec.pattern.n}, spec has n={spec.n}")
    if spec.seed < 0:
        raise ValueError(f"seed must be >= 0, got {spec.seed}")
    validate_kind(spec.algorithm, spec.n, spec.d)
    if spec.initial is None:
        rng = np.random.default_rng(spec.seed)
        return rng.uniform(0.0, 1.0, (spec.n, spec.d))
    initial = np.asarray(spec.initial, dtype=float)
    if initial.shape != (spec.n, spec.d):
        raise ValueError(f"initial positions must have shape {(spec.n, spec.d)}, got {initial.shape}")
    if not np.isfinite(initial).all():
        raise ValueError("initial positions must be finite")
    return initial.copy()


def _margin_row(prev: np.ndarray, g: CommGraph, new: np.ndarray) -> np.ndarray:
    """Realized relative margin of each agent against its received range this
    round; NaN when every component range had already collapsed."""
    n = len(prev)
    row = np.full(n, np.nan)
    for p in range(n):
        pts = prev[sorted(in_neighbors(g, p))]
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        span = hi - lo
        live = span > RANGE_FLOOR
        if live.any():
            gap = np.minimum(new[p] - lo, hi - new[p])
            row[p] = float((gap[live] / span[live]).min())
    return row


def run(spec: RunSpec) -> RunTrace:
    initial = _validate_spec(spec)
    delta0 = delta_components(initial)
    active = delta0 > 0.0
    positions = [initial]
    deltas = [delta0]
    margins: List[np.ndarray] = []
    t_eps: Optional[int] = None

    if not active.any():
        t_eps = 0
    else:
        config = Configuration(initial, 0)
        states = [init_state(spec.algorithm, initial[p], spec.d) for p in range(spec.n)]
        for t in range(1, spec.max_rounds + 1):
            g = spec.pattern.graph(t)
            prev = config.positions
            config, states = step(config, g, states, spec.algorithm, tie_seed=spec.seed)
            positions.append(config.positions)
            deltas.append(delta_components(config.positions))
            margins.append(_margin_row(prev, g, config.positions))
            if (deltas[-1][active] <= spec.epsilon * delta0[active]).all():
                t_eps = t
                break

    pos_arr = np.stack(positions)
    delta_arr = np.stack(deltas)
    margin_arr = np.stack(margins) if margins else np.empty((0, spec.n))
    rounds_run = len(positions) - 1
    if rounds_run == 0:
        rate = 0.0
    else:
        final = delta_arr[-1]
        rate = 0.0
        for k in np.flatnonzero(active):
            if final[k] > 0.0:
                rate = max(rate, float((final[k] / delta0[k]) ** (1.0 / rounds_run)))
    try:
        bound = theorem_bound(spec)
    except UnsupportedScenarioError:
        bound = None
    metrics = Metrics(t_eps=t_eps, converged=t_eps is not None,
                      empirical_rate=rate, bound_t=bound)
    return RunTrace(spec, pos_arr, delta_arr, margin_arr, metrics)


def measure_contraction(trace: RunTrace, macro_period: int) -> np.ndarray:
    """Per-component contraction ratios delta(s*P) / delta((s-1)*P) across
    consecutive macro-rounds of length P. Ratios with a denominator at or
    below the collapse floor are reported as 0."""
    if macro_period < 1:
        raise ValueError(f"need macro_period >= 1, got {macro_period}")
    deltas = trace.deltas
    total = len(deltas) - 1
    blocks = total // macro_period
    out = np.zeros((blocks, deltas.shape[1]))
    for s in range(1, blocks + 1):
        prev = deltas[(s - 1) * macro_period]
        cur = deltas[s * macro_period]
        live = prev > RANGE_FLOOR
        out[s - 1, live] = cur[live] / prev[live]
    return out


def _ceil_log(ratio: float, base: float) -> int:
    if ratio <= 1.0:
        return 0
    if base == 2.0:
        r = math.log2(ratio)
    else:
        r = math.log(ratio) / math.log(base)
    # guard against ratios that are exact powers landing a hair above an integer
    return max(0, math.ceil(r - 1e-12))


def _pattern_classes(pattern: CommPattern) -> Tuple[bool, bool]:
    """(every round nonsplit, every round rooted) as far as the pattern family
    guarantees it."""
    kind = pattern.kind
    if kind == NetworkModelKind.NONSPLIT:
        return True, True
    if kind == NetworkModelKind.ROOTED:
        return False, True
    if kind == NetworkModelKind.FIXED_GRAPH:
        g = pattern.graph(1)
        nonsplit = is_nonsplit(g)
        return nonsplit, nonsplit or is_rooted(g)
    return False, False


def theorem_bound(spec: RunSpec, delta0: Optional[np.ndarray] = None) -> int:
    """Worst-case number of rounds until every component range has shrunk by
    the factor epsilon. The convergence criterion is relative, so delta0 is
    accepted for interface compatibility but does not change the count.

    Covered pairings: any non-amortized rule on always-nonsplit patterns, and
    the amortized rules at period n-1 on always-rooted patterns. Anything else
    raises UnsupportedScenarioError.
    """
    validate_kind(spec.algorithm, spec.n, spec.d)
    if not (spec.epsilon > 0 and math.isfinite(spec.epsilon)):
        raise ValueError(f"epsilon must be positive and finite, got {spec.epsilon}")
    ratio = 1.0 / spec.epsilon
    period = effective_period(spec.algorithm, spec.n)
    nonsplit, rooted = _pattern_classes(spec.pattern)
    if period == 1 and nonsplit:
        alpha = claimed_alpha(spec.algorithm, spec.n, spec.d)
        return _ceil_log(ratio, 1.0 / (1.0 - alpha))
    if (spec.algorithm.amortized and period == max(1, spec.n - 1) and rooted):
        tag = spec.algorithm.tag
        if tag == "midpoint":
            base = 2.0
        elif tag == "extreme-point":
            base = (2.0 * spec.d) / (2.0 * spec.d - 1.0)
        elif tag == "centroid":
            base = (spec.d + 1.0) / spec.d
        else:
            raise UnsupportedScenarioError(
                f"no amortized round bound on file for {tag!r}")
        return period * _ceil_log(ratio, base)
    raise UnsupportedScenarioError(
        f"no round bound on file for {format_kind(spec.algorithm)} at period {period}"
        f" over pattern {spec.pattern.name!r}")


# ---------------------------------------------------------------------------
# trace serialization: repr() keeps float round-trips bit-exact


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trace_csv(trace: RunTrace, path) -> None:
    d = trace.positions.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "agent"] + [f"comp_{k}" for k in range(d)])
        for t in range(len(trace.positions)):
            for p in range(trace.positions.shape[1]):
                w.writerow([t, p] + [_fmt(v) for v in trace.positions[t, p]])


def read_trace_csv(path) -> Tuple[List[int], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[:2] != ["round", "agent"] or any(not c.startswith("comp_") for c in header[2:]):
        raise ValueError(f"not a trace file: header {header}")
    d = len(header) - 2
    records = [(int(r[0]), int(r[1]), [float(v) for v in r[2:]]) for r in rows[1:]]
    if not records:
        raise ValueError("trace file has no rows")
    n = max(r[1] for r in records) + 1
    t_max = max(r[0] for r in records)
    positions = np.full((t_max + 1, n, d), np.nan)
    for t, p, vals in records:
        positions[t, p] = vals
    if np.isnan(positions).any():
        raise ValueError("trace file is missing (round, agent) rows")
    return list(range(t_max + 1)), positions


def write_deltas_csv(trace: RunTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "k", "delta_k"])
        for t in range(len(trace.deltas)):
            for k in range(trace.deltas.shape[1]):
                w.writerow([t, k, _fmt(trace.deltas[t, k])])


def write_margins_csv(trace: RunTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "agent", "alpha_hat"])
        for i in range(len(trace.margins)):
            for p in range(trace.margins.shape[1]):
                w.writerow([i + 1, p, _fmt(trace.margins[i, p])])
