"""Distributed averaging as a linear iteration over a lifted chain.

Every node splits its initial value evenly over its states; the values then
evolve as ``y(t+1) = P^T y(t)``.  With a doubly stochastic chain the node
estimate is simply the sum of its states (``run_pa1``).  Otherwise a second,
weight vector evolves alongside and the estimate is the ratio of the two
sums (``run_pa2``), which cancels the non-uniform stationary distribution.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from .lifting import BASELINE, COLLAPSED, GRID_LADA, LADA, LADA_U, LiftedChain

WEIGHT_FLOOR = 1e-15


class DegenerateWeightError(FloatingPointError):
    def __init__(self, node: int, t: int, value: float):
        super().__init__(f"node {node} weight sum {value:.3e} at t={t}; the chain is malformed")
        self.node, self.t = node, t


@dataclass
class ConsensusRun:
    """State and traces of one averaging run.

    ``error_trace[t]`` is the relative l1 deviation at iteration t (entry 0
    is the initial error).  ``mass_trace``/``weight_trace`` hold the
    multiplicity-weighted totals of y and w at every iteration.
    """

    chain: Optional[LiftedChain]
    x0: np.ndarray
    x_ave: float
    y: np.ndarray
    x: np.ndarray
    w: Optional[np.ndarray] = None
    t: int = 0
    converged: bool = False
    eps: float = 0.0
    error_trace: list = field(default_factory=list)
    mass_trace: list = field(default_factory=list)
    weight_trace: list = field(default_factory=list)
    message_trace: Optional[np.ndarray] = None
    algorithm: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def t_ave(self) -> Optional[int]:
        return averaging_time(self, self.eps)


def relative_error(x: np.ndarray, x_ave: float, norm0: float) -> float:
    return float(np.abs(x - x_ave).sum() / norm0)


def _validate_x0(x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < 0):
        raise ValueError("initial values must be nonnegative")
    if not np.any(x0 > 0):
        raise ValueError("initial values must not all be zero")
    return x0


def iterate(
    step: Callable[[np.ndarray], np.ndarray],
    estimate: Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray],
    y: np.ndarray,
    w: Optional[np.ndarray],
    x0: np.ndarray,
    eps: float,
    max_iter: int,
    multiplicity: Optional[np.ndarray] = None,
    run: Optional[ConsensusRun] = None,
    observer: Optional[Callable[[int, np.ndarray, Optional[np.ndarray]], None]] = None,
) -> ConsensusRun:
    """Generic halting loop shared by all algorithms.

    ``step`` advances a state vector by one iteration, ``estimate`` maps
    (y, w) to per-node estimates.  The loop stops at the first t whose
    relative l1 error is at most ``eps``, or after ``max_iter`` iterations.
    """
    x_ave = float(x0.mean())
    norm0 = float(np.abs(x0).sum())
    m = np.ones_like(y) if multiplicity is None else multiplicity
    if run is None:
        run = ConsensusRun(None, x0, x_ave, y, x0.copy(), w)
    run.eps = eps
    t = 0
    while True:
        x = estimate(y, w)
        err = relative_error(x, x_ave, norm0)
        run.error_trace.append(err)
        run.mass_trace.append(float(m @ y))
        if w is not None:
            run.weight_trace.append(float(m @ w))
        if observer is not None:
            observer(t, y, w)
        if err <= eps:
            run.converged = True
            break
        if t >= max_iter:
            break
        y = step(y)
        if w is not None:
            w = step(w)
        t += 1
    run.y, run.w, run.x, run.t = y, w, x, t
    return run


def _spread(chain: LiftedChain, x0: np.ndarray):
    """Even split of each node's value over its states, plus the per-node state counts."""
    counts = np.bincount(chain.collapse_map, minlength=len(x0)).astype(float)
    return x0[chain.collapse_map] / counts[chain.collapse_map], counts


def _node_sums(chain: LiftedChain, n: int):
    fmap = chain.collapse_map
    return lambda v: np.bincount(fmap, weights=v, minlength=n)


def run_pa1(chain: LiftedChain, x0, eps: float = 1e-3, max_iter: int = 10_000, observer=None) -> ConsensusRun:
    """Sum-of-copies estimator; needs a chain whose collapsed chain is uniform."""
    if chain.tag not in (GRID_LADA, LADA_U, BASELINE):
        raise ValueError(f"sum-of-copies averaging needs a doubly stochastic chain, got {chain.tag}")
    x0 = _validate_x0(x0)
    y0, _ = _spread(chain, x0)
    PT = chain.P.T.tocsr()
    sums = _node_sums(chain, len(x0))
    run = ConsensusRun(chain, x0, float(x0.mean()), y0, x0.copy(), algorithm=chain.tag)
    return iterate(lambda v: PT @ v, lambda y, w: sums(y), y0, None, x0, eps, max_iter, run=run, observer=observer)


def run_pa2(chain: LiftedChain, x0, eps: float = 1e-3, max_iter: int = 10_000, observer=None) -> ConsensusRun:
    """Ratio estimator with weight variables; works for any ergodic lifted chain."""
    if chain.tag not in (LADA, LADA_U, COLLAPSED, GRID_LADA, BASELINE):
        raise ValueError(f"unsupported chain tag {chain.tag}")
    x0 = _validate_x0(x0)
    y0, counts = _spread(chain, x0)
    w0 = 1.0 / counts[chain.collapse_map]
    PT = chain.P.T.tocsr()
    sums = _node_sums(chain, len(x0))
    state = {"t": 0}

    def estimate(y, w):
        ws = sums(w)
        bad = np.flatnonzero(ws <= WEIGHT_FLOOR)
        if len(bad):
            raise DegenerateWeightError(int(bad[0]), state["t"], float(ws[bad[0]]))
        state["t"] += 1
        return sums(y) / ws

    run = ConsensusRun(chain, x0, float(x0.mean()), y0, x0.copy(), w0, algorithm=chain.tag)
    return iterate(lambda v: PT @ v, estimate, y0, w0, x0, eps, max_iter, run=run, observer=observer)


def averaging_time(run: ConsensusRun, eps: float) -> Optional[int]:
    """First iteration whose recorded error is at most ``eps``; None if never reached."""
    for t, e in enumerate(run.error_trace):
        if e <= eps:
            return t
    return None


def worst_case_error_trace(chain: LiftedChain, eps: float, max_iter: int = 10_000) -> np.ndarray:
    """Worst relative error over all nonnegative starts, per iteration.

    The relative error is convex over the simplex of starts, so the n
    point-mass starts (advanced together) bound every start.  The trace
    stops at the first entry <= ``eps`` or after ``max_iter`` steps.
    """
    n = chain.n_nodes
    F = chain.node_sum_matrix()
    counts = np.asarray(F.sum(axis=0)).ravel()
    Y = F.toarray() / counts  # states x starts
    PT = chain.P.T.tocsr()
    FT = F.T.tocsr()
    trace = []
    for t in range(max_iter + 1):
        X = FT @ Y  # nodes x starts, each column sums to 1 with x_ave = 1/n
        trace.append(float(np.abs(X - 1.0 / n).sum(axis=0).max()))
        if trace[-1] <= eps:
            break
        Y = PT @ Y
    return np.array(trace)


def worst_case_averaging_time(chain: LiftedChain, eps: float, max_iter: int = 10_000) -> Optional[int]:
    """First t at which every nonnegative start is within ``eps`` (sum-of-copies estimator)."""
    trace = worst_case_error_trace(chain, eps, max_iter)
    return len(trace) - 1 if trace[-1] <= eps else None


def first_below(trace, eps: float) -> Optional[int]:
    hits = np.flatnonzero(np.asarray(trace) <= eps)
    return int(hits[0]) if len(hits) else None


# -- message accounting ---------------------------------------------------------


def per_iteration_messages(scheme: str, n: int = 0, clustering=None) -> tuple[int, int]:
    """(initialization messages, messages per iteration) for a scheme."""
    if scheme == "lada":
        return 0, n
    if clustering is None:
        raise ValueError(f"scheme {scheme!r} needs a clustering")
    K = clustering.K
    pairs = len(clustering.gateways)
    if scheme == "clada":
        gateway_nodes = len({v for e in clustering.gateways.values() for v in e})
        return 0, 2 * pairs + gateway_nodes + K
    if scheme == "centralized-grid":
        return int(len(clustering.assignment)), 2 * pairs + K
    raise ValueError(f"unknown message scheme {scheme!r}")


def count_messages(run: ConsensusRun, scheme: str = "lada", clustering=None) -> np.ndarray:
    """Messages sent at each step of ``run``: entry 0 is the one-off
    initialization cost, entry t >= 1 the cost of iteration t."""
    init, per = per_iteration_messages(scheme, len(run.x0), clustering)
    trace = np.full(run.t + 1, per, dtype=np.int64)
    trace[0] = init
    run.message_trace = trace
    return trace


def run_to_csv(run: ConsensusRun, metadata: Optional[dict] = None) -> str:
    """CSV with columns t, l1_error, messages_cumulative; metadata as ``#`` header lines."""
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}: {value}\n")
    msgs = run.message_trace if run.message_trace is not None else np.zeros(len(run.error_trace), dtype=np.int64)
    cum = np.cumsum(msgs)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "l1_error", "messages_cumulative"])
    for t, e in enumerate(run.error_trace):
        writer.writerow([t, repr(float(e)), int(cum[min(t, len(cum) - 1)])])
    return buf.getvalue()
