"""Per-agent consensus update rules and the macro-round gather/average state machine.

Five update rules: equal-neighbor mean, range midpoint (1-D), component-wise
midpoint, extreme-point averaging, hull centroid. Every rule runs through the
same state machine: agents accumulate gather memory each round and apply their
base update whenever the 1-based round index hits a multiple of the period
(period 1 is the plain per-round algorithm; the amortized variants default the
period to n-1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import geometry

TAGS = ("equal-neighbor", "midpoint", "component-midpoint", "extreme-point", "centroid")


class ProtocolError(ValueError):
    """Message payload does not match the algorithm's wire format."""


@dataclass(frozen=True)
class AlgorithmKind:
    """Update-rule identity plus amortization and behavior flags.

    tie_break applies to extreme-point only ("index": lowest sender then
    lexicographic point; "random": seeded uniform choice among tied candidates).
    frame_reduction applies to centroid gathering (drop non-extreme points).
    allow_unsafe_dim permits component-midpoint at d >= 3 for demonstrations
    only: there the output can leave the hull of the inputs.
    """

    tag: str
    amortized: bool = False
    amortization_period: Optional[int] = None
    tie_break: str = "index"
    frame_reduction: bool = True
    allow_unsafe_dim: bool = False


@dataclass
class AgentState:
    """Position plus gather memory; round_in_macro counts rounds since averaging."""

    x: np.ndarray
    gather: object
    round_in_macro: int = 0


@dataclass(frozen=True)
class Message:
    sender: int
    payload: object


def parse_kind(s: str) -> AlgorithmKind:
    """Parse "tag[+amortized[:period]]" config strings."""
    parts = s.split("+")
    tag = parts[0]
    if tag not in TAGS:
        raise ValueError(f"unknown algorithm {tag!r}; expected one of {TAGS}")
    if len(parts) == 1:
        return AlgorithmKind(tag)
    if len(parts) > 2:
        raise ValueError(f"malformed algorithm string {s!r}")
    suffix = parts[1]
    if suffix == "amortized":
        return AlgorithmKind(tag, amortized=True)
    if suffix.startswith("amortized:"):
        try:
            period = int(suffix.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"malformed amortization period in {s!r}") from None
        if period < 1:
            raise ValueError(f"amortization period must be >= 1, got {period}")
        return AlgorithmKind(tag, amortized=True, amortization_period=period)
    raise ValueError(f"malformed algorithm string {s!r}")


def format_kind(kind: AlgorithmKind) -> str:
    if not kind.amortized:
        return kind.tag
    if kind.amortization_period is None:
        return f"{kind.tag}+amortized"
    return f"{kind.tag}+amortized:{kind.amortization_period}"


def validate_kind(kind: AlgorithmKind, n: int, d: int) -> None:
    """Reject rule/dimension combinations that cannot run safely."""
    if kind.tag not in TAGS:
        raise ValueError(f"unknown algorithm {kind.tag!r}; expected one of {TAGS}")
    if kind.tag == "midpoint" and d != 1:
        raise ValueError(f"midpoint operates on scalar values; got d={d} (use component-midpoint"
                         " for d=2 or extreme-point/centroid for higher d)")
    if kind.tag == "component-midpoint" and d >= 3 and not kind.allow_unsafe_dim:
        raise ValueError(
            f"component-midpoint at d={d} can move outside the hull of the received positions"
            " (the box center of a simplex in R^3 already escapes); set allow_unsafe_dim"
            " only to demonstrate that failure")
    if kind.tag == "equal-neighbor" and kind.amortized:
        raise ValueError("equal-neighbor keeps no gather memory; amortization is unsupported")
    if kind.amortization_period is not None and kind.amortization_period < 1:
        raise ValueError(f"amortization period must be >= 1, got {kind.amortization_period}")
    if kind.tie_break not in ("index", "random"):
        raise ValueError(f"unknown tie_break {kind.tie_break!r}")


def effective_period(kind: AlgorithmKind, n: int) -> int:
    if not kind.amortized:
        return 1
    if kind.amortization_period is not None:
        return kind.amortization_period
    return max(1, n - 1)


def claimed_alpha(kind: AlgorithmKind, n: int, d: int) -> float:
    """Per-round safety constant of the base rule: the relative margin each
    update keeps from both ends of its in-neighbors' per-component range."""
    if kind.tag in ("midpoint", "component-midpoint"):
        return 0.5
    if kind.tag == "extreme-point":
        return 1 / (2 * d)
    if kind.tag == "centroid":
        return 1 / (d + 1)
    if kind.tag == "equal-neighbor":
        return 1 / n
    raise ValueError(f"unknown algorithm {kind.tag!r}")


# ---------------------------------------------------------------------------
# base update rules


def equal_neighbor_update(received: np.ndarray) -> np.ndarray:
    """Arithmetic mean with weight 1/k per received position (multiset: duplicates count)."""
    arr = np.asarray(received, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one received position")
    return arr.mean(axis=0)


def midpoint_update_1d(m: float, M: float) -> float:
    if m > M:
        raise ValueError(f"need m <= M, got ({m}, {M})")
    return (m + M) / 2


def component_midpoint_update(received: np.ndarray) -> np.ndarray:
    arr = np.asarray(received, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one received position")
    return (arr.min(axis=0) + arr.max(axis=0)) / 2


def _select_extreme(points: np.ndarray, senders: Sequence[int], comp: int,
                    maximize: bool, rng: Optional[np.random.Generator]) -> np.ndarray:
    coords = points[:, comp]
    target = coords.max() if maximize else coords.min()
    ties = np.nonzero(coords == target)[0]
    if len(ties) == 1:
        return points[ties[0]]
    if rng is not None:
        return points[int(rng.choice(ties))]
    best = None
    for i in ties:
        key = (senders[i], tuple(points[i]))
        if best is None or key < best[0]:
            best = (key, int(i))
    return points[best[1]]


def extreme_point_update(received: np.ndarray, d: int,
                         senders: Optional[Sequence[int]] = None,
                         rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Average of 2d selected positions: per component one minimal and one maximal.

    Ties are broken by lowest sender id then lexicographic point order (sender
    ids default to list positions), or uniformly at random when rng is given.
    """
    arr = np.asarray(received, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one received position")
    arr = arr.reshape(len(arr), d)
    if senders is None:
        senders = list(range(len(arr)))
    total = np.zeros(d)
    for i in range(d):
        total += _select_extreme(arr, senders, i, False, rng)
        total += _select_extreme(arr, senders, i, True, rng)
    return total / (2 * d)


def centroid_update(received: np.ndarray) -> np.ndarray:
    """Centroid of the hull of the received positions (multiplicities irrelevant)."""
    arr = np.asarray(received, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one received position")
    return geometry.centroid(geometry.convex_hull(arr)).centroid


# ---------------------------------------------------------------------------
# gather/average state machine


def _reset_gather(kind: AlgorithmKind, x: np.ndarray, d: int):
    if kind.tag == "midpoint":
        return np.array([x[0], x[0]])
    if kind.tag == "component-midpoint":
        return np.vstack([x, x])
    if kind.tag == "extreme-point":
        return np.tile(x, (2 * d, 1))
    if kind.tag == "centroid":
        return x.reshape(1, d)
    if kind.tag == "equal-neighbor":
        return x.reshape(1, d)
    raise ValueError(f"unknown algorithm {kind.tag!r}")


def init_state(kind: AlgorithmKind, x, d: Optional[int] = None) -> AgentState:
    x = np.asarray(x, dtype=float).reshape(-1)
    if d is None:
        d = len(x)
    if len(x) != d:
        raise ValueError(f"position has dimension {len(x)}, expected {d}")
    return AgentState(x.copy(), _reset_gather(kind, x, d), 0)


def make_message(kind: AlgorithmKind, state: AgentState, sender: int) -> Message:
    if kind.tag == "equal-neighbor":
        return Message(sender, state.x.copy())
    gather = state.gather
    return Message(sender, gather.copy() if isinstance(gather, np.ndarray) else gather)


def _check_payload(kind: AlgorithmKind, payload, d: int) -> np.ndarray:
    arr = np.asarray(payload, dtype=float)
    if kind.tag == "midpoint":
        ok = arr.shape == (2,) and arr[0] <= arr[1]
    elif kind.tag == "component-midpoint":
        ok = arr.shape == (2, d)
    elif kind.tag == "extreme-point":
        ok = arr.shape == (2 * d, d)
    elif kind.tag == "centroid":
        ok = arr.ndim == 2 and arr.shape[0] >= 1 and arr.shape[1] == d
    elif kind.tag == "equal-neighbor":
        ok = arr.shape == (d,)
    else:
        raise ValueError(f"unknown algorithm {kind.tag!r}")
    if not ok or not np.isfinite(arr).all():
        raise ProtocolError(f"malformed {kind.tag} payload with shape {arr.shape}")
    return arr


def _merge(kind: AlgorithmKind, payloads: List[np.ndarray], senders: List[int],
           d: int, rng: Optional[np.random.Generator]):
    if kind.tag == "midpoint":
        stack = np.array(payloads)
        return np.array([stack[:, 0].min(), stack[:, 1].max()])
    if kind.tag == "component-midpoint":
        stack = np.vstack(payloads)
        return np.vstack([stack.min(axis=0), stack.max(axis=0)])
    if kind.tag == "extreme-point":
        # candidates carry the id of whoever sent them this round
        pts = np.vstack(payloads)
        ids = [s for s, payload in zip(senders, payloads) for _ in range(len(payload))]
        merged = np.empty((2 * d, d))
        for i in range(d):
            merged[i] = _select_extreme(pts, ids, i, False, rng)
            merged[d + i] = _select_extreme(pts, ids, i, True, rng)
        return merged
    if kind.tag in ("centroid", "equal-neighbor"):
        stack = np.vstack(payloads)
        if kind.tag == "centroid":
            if kind.frame_reduction:
                return geometry.convex_hull(stack).vertices.copy()
            extent = float((stack.max(axis=0) - stack.min(axis=0)).max())
            return _dedup_rows(stack, geometry.DUP_TOL * extent)
        return stack
    raise ValueError(f"unknown algorithm {kind.tag!r}")


def _dedup_rows(arr: np.ndarray, tol: float) -> np.ndarray:
    keep = [0]
    for i in range(1, len(arr)):
        if np.linalg.norm(arr[keep] - arr[i], axis=1).min() > tol:
            keep.append(i)
    return arr[keep]


def _average(kind: AlgorithmKind, gather, d: int) -> np.ndarray:
    if kind.tag == "midpoint":
        return np.array([midpoint_update_1d(float(gather[0]), float(gather[1]))])
    if kind.tag == "component-midpoint":
        return (gather[0] + gather[1]) / 2
    if kind.tag == "extreme-point":
        return gather.mean(axis=0)
    if kind.tag == "centroid":
        return geometry.centroid(geometry.convex_hull(gather)).centroid
    if kind.tag == "equal-neighbor":
        return gather.mean(axis=0)
    raise ValueError(f"unknown algorithm {kind.tag!r}")


def amortize(kind: AlgorithmKind, state: AgentState, received: List[Message],
             round: int, *, period: int, rng: Optional[np.random.Generator] = None) -> AgentState:
    """One round of the gather/average state machine for a single agent.

    Gathering rounds merge the incoming memories; when the 1-based round index
    is a multiple of `period` the base update is applied to the gathered memory
    and the memory resets to the new position. Messages must all come from the
    current round (rounds are communication closed).
    """
    if period < 1:
        raise ValueError(f"need period >= 1, got {period}")
    if not received:
        raise ProtocolError("no messages received; self-loops guarantee at least one")
    if kind.tag == "equal-neighbor" and period != 1:
        raise ProtocolError("equal-neighbor cannot gather across rounds")
    d = len(state.x)
    payloads = [_check_payload(kind, m.payload, d) for m in received]
    senders = [m.sender for m in received]
    tie_rng = rng if kind.tie_break == "random" else None
    gather = _merge(kind, payloads, senders, d, tie_rng)
    if round % period == 0:
        x = _average(kind, gather, d)
        return AgentState(x, _reset_gather(kind, x, d), 0)
    return AgentState(state.x.copy(), gather, round % period)
