"""Chain mixing metrics: mixing time, fill time, conductance, scaling fits."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .lifting import Distribution, LiftedChain, stationary

STATE_CAP = 4096
CHUNK = 512  # starting states advanced together in min_power_entry


class ChainTooLargeError(ValueError):
    pass


class NoAdmissibleCutError(ValueError):
    pass


def _first_passing_power(chain: LiftedChain, t_max: int, test, state_cap: int) -> Optional[int]:
    """Smallest t <= t_max such that ``test`` holds for every row of P^t.

    Rows of P^t are kept as columns of a dense (states x states) array and
    advanced together, so memory is quadratic in the state count.  Both
    properties tested here are preserved by further steps once they hold
    for every row, so the first passing t is the answer.
    """
    S = chain.n_states
    if S > state_cap:
        raise ChainTooLargeError(
            f"{S} states exceeds the dense cap of {state_cap}; use averaging runs or raise state_cap"
        )
    PT = chain.P.T.tocsr()
    M = np.eye(S)
    for t in range(t_max + 1):
        if test(M).all():
            return t
        if t < t_max:
            M = PT @ M
    return None


def _default_budget(chain: LiftedChain) -> int:
    params = chain.params or {}
    if "k" in params:
        return 20 * 4 * params["k"]
    if "p" in params:
        return int(20 * 4 / (2 * params["p"]))
    return 20 * 4 * int(math.ceil(math.sqrt(chain.n_nodes)))


def mixing_time(
    chain: LiftedChain,
    eps: float,
    t_max: Optional[int] = None,
    pi: Optional[Distribution] = None,
    state_cap: int = STATE_CAP,
) -> Optional[int]:
    """Smallest t with max_i TV(P^t(i, .), pi) <= eps, or None beyond ``t_max``."""
    pi = stationary(chain) if pi is None else pi
    t_max = _default_budget(chain) if t_max is None else t_max
    target = pi.p[:, None]
    return _first_passing_power(chain, t_max, lambda M: 0.5 * np.abs(M - target).sum(axis=0) <= eps, state_cap)


def fill_time(
    chain: LiftedChain,
    c: float,
    t_max: Optional[int] = None,
    pi: Optional[Distribution] = None,
    state_cap: int = STATE_CAP,
) -> Optional[int]:
    """Smallest t with P^t(i, j) > (1 - c) pi_j for every pair, or None beyond ``t_max``."""
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    pi = stationary(chain) if pi is None else pi
    t_max = _default_budget(chain) if t_max is None else t_max
    floor = (1 - c) * pi.p[:, None]
    return _first_passing_power(chain, t_max, lambda M: (M > floor).all(axis=0), state_cap)


def min_power_entry(chain: LiftedChain, t: int) -> float:
    """min over (i, j) of P^t(i, j)."""
    lo_all = math.inf
    PT = chain.P.T.tocsr()
    S = chain.n_states
    for lo in range(0, S, CHUNK):
        hi = min(S, lo + CHUNK)
        M = np.zeros((S, hi - lo))
        M[np.arange(lo, hi), np.arange(hi - lo)] = 1.0
        for _ in range(t):
            M = PT @ M
        lo_all = min(lo_all, float(M.min()))
    return lo_all


def fill_mix_bound(eps: float, c: float, t_fill: int) -> float:
    return (math.log(1 / eps) / math.log(1 / c) + 1) * t_fill


def check_fill_mix_bound(chain: LiftedChain, eps: float, c: float, t_max: Optional[int] = None) -> bool:
    """T_mix(eps) <= (log(1/eps)/log(1/c) + 1) * T_fill(c)."""
    pi = stationary(chain)
    t_fill = fill_time(chain, c, t_max, pi)
    t_mix = mixing_time(chain, eps, t_max, pi)
    if t_fill is None or t_mix is None:
        return False
    return t_mix <= fill_mix_bound(eps, c, t_fill)


def node_flows(chain: LiftedChain, pi: Distribution):
    """Node-level stationary masses and edge flows Q_uv = sum of pi_s P_st over lifted states."""
    F = chain.node_sum_matrix()
    Q = (F.T @ sp.diags(pi.p) @ chain.P @ F).tocoo()
    return F.T @ pi.p, Q


def axis_cut_conductance(chain: LiftedChain, positions, pi: Distribution, min_mass: float = 0.25) -> float:
    """Smallest Q(S, S^c) / (pi(S) pi(S^c)) over half-plane cuts parallel to the axes.

    Only cuts leaving at least ``min_mass`` of stationary mass on both sides
    are considered.  This is an upper bound on the conductance.
    """
    positions = np.asarray(positions, dtype=float)
    node_pi, Q = node_flows(chain, pi)
    best = math.inf
    for axis in (0, 1):
        coord = positions[:, axis]
        levels = np.unique(coord)
        if len(levels) < 2:
            continue
        rank = np.searchsorted(levels, coord)
        # cut c puts nodes with rank <= c on the low side
        mass = np.cumsum(np.bincount(rank, weights=node_pi, minlength=len(levels)))[:-1]
        a, b = rank[Q.row], rank[Q.col]
        up = a < b
        diff = np.zeros(len(levels))
        np.add.at(diff, a[up], Q.data[up])
        np.add.at(diff, b[up], -Q.data[up])
        cross = np.cumsum(diff)[:-1]
        admissible = (mass >= min_mass) & (1 - mass >= min_mass)
        if admissible.any():
            vals = cross[admissible] / (mass[admissible] * (1 - mass[admissible]))
            best = min(best, float(vals.min()))
    if not math.isfinite(best):
        raise NoAdmissibleCutError("no axis-parallel cut leaves enough stationary mass on both sides")
    return best


def brute_force_conductance(chain: LiftedChain, pi: Distribution, max_nodes: int = 16) -> float:
    """Exact min over every nonempty proper node subset (2^n enumeration)."""
    node_pi, Q = node_flows(chain, pi)
    n = len(node_pi)
    if n > max_nodes:
        raise ChainTooLargeError(f"brute-force conductance limited to {max_nodes} nodes, got {n}")
    Qd = Q.toarray()
    masks = np.array(list(itertools.product((0.0, 1.0), repeat=n)))[1:-1]
    inside = masks @ node_pi
    cross = ((masks @ Qd) * (1 - masks)).sum(axis=1)
    return float((cross / (inside * (1 - inside))).min())


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    r2: float


def scaling_fit(points) -> ScalingFit:
    """Least-squares line through (log x, log y)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise ValueError("need at least 3 (scale, time) points")
    if np.any(pts <= 0):
        raise ValueError("scaling fit needs positive values")
    res = stats.linregress(np.log(pts[:, 0]), np.log(pts[:, 1]))
    return ScalingFit(float(res.slope), float(res.intercept), float(res.rvalue**2))


@dataclass
class MetricsReport:
    t_mix: Optional[int] = None
    t_fill: Optional[int] = None
    conductance_upper: Optional[float] = None
    conductance_exact: Optional[float] = None
    stationary_stats: dict = field(default_factory=dict)
    scaling: Optional[ScalingFit] = None

    @property
    def resistance_lower(self) -> Optional[float]:
        phi = self.conductance_exact if self.conductance_exact is not None else self.conductance_upper
        return None if not phi else 1.0 / phi

    def to_json(self) -> str:
        doc = asdict(self)
        doc["resistance_lower"] = self.resistance_lower
        return json.dumps(doc, indent=2)


def report(
    chain: LiftedChain,
    positions=None,
    eps: float = 1e-3,
    c: float = 0.5,
    t_max: Optional[int] = None,
    state_cap: int = STATE_CAP,
) -> MetricsReport:
    pi = stationary(chain)
    rep = MetricsReport(stationary_stats=pi.stats())
    if chain.n_states <= state_cap:
        rep.t_mix = mixing_time(chain, eps, t_max, pi, state_cap)
        rep.t_fill = fill_time(chain, c, t_max, pi, state_cap)
    if positions is not None:
        rep.conductance_upper = axis_cut_conductance(chain, positions, pi)
        if chain.n_nodes <= 16:
            rep.conductance_exact = brute_force_conductance(chain, pi)
    return rep
