"""Lifted nonreversible chains over (node, direction) states.

State ``4*v + l`` is node v holding its direction-l value (0 east, 1 north,
2 west, 3 south).  All constructions share one movement rule: a walker in
state (j, l) keeps moving in direction l with probability 1 - p and turns
left or right with probability p/2 each; the mass sent in direction l' is
split among the direction-l' neighbors of j.  Physical and mismatch-virtual
neighbors receive it in their direction-l' state, match-virtual neighbors
(mirror images across the direction-l' boundary) receive it in the opposite
state, which is the boundary bounce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import gcd
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import spsolve

from .topology import DirectionalNeighborhood, Network, make_grid

GRID_LADA = "GridLADA"
LADA = "LADA"
LADA_U = "LADAU"
COLLAPSED = "Collapsed"
BASELINE = "Baseline"

ROW_TOL = 1e-12


class StationaryError(RuntimeError):
    def __init__(self, residual: float):
        super().__init__(f"stationary solve did not reach tolerance (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class LiftedChain:
    """Sparse row-stochastic transition matrix with a state -> node map."""

    P: sp.csr_matrix
    collapse_map: np.ndarray
    tag: str
    params: Optional[dict] = None

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_nodes(self) -> int:
        return int(self.collapse_map.max()) + 1

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.P.sum(axis=1)).ravel()

    def col_sums(self) -> np.ndarray:
        return np.asarray(self.P.sum(axis=0)).ravel()

    def is_row_stochastic(self, tol: float = ROW_TOL) -> bool:
        return bool(np.all(np.abs(self.row_sums() - 1) <= tol)) and self.P.data.min(initial=0) >= 0

    def is_doubly_stochastic(self, tol: float = ROW_TOL) -> bool:
        return self.is_row_stochastic(tol) and bool(np.all(np.abs(self.col_sums() - 1) <= tol))

    def is_irreducible(self) -> bool:
        ncomp, _ = connected_components(self.P, directed=True, connection="strong")
        return ncomp == 1

    def period(self) -> int:
        """Period of the support graph (1 means aperiodic); assumes irreducibility.

        Uses BFS levels from state 0: the period is the gcd of
        level(u) + 1 - level(v) over all transitions u -> v.
        """
        order, pred = breadth_first_order(self.P, 0, directed=True, return_predecessors=True)
        level = np.full(self.n_states, -1, dtype=np.int64)
        level[0] = 0
        for s in order[1:]:
            level[s] = level[pred[s]] + 1
        coo = self.P.tocoo()
        diffs = np.abs(level[coo.row] + 1 - level[coo.col])
        g = 0
        for d in np.unique(diffs):
            g = gcd(g, int(d))
            if g == 1:
                break
        return g

    def is_ergodic(self) -> bool:
        return self.is_irreducible() and self.period() == 1

    def node_sum_matrix(self) -> sp.csr_matrix:
        """Indicator matrix F with F[s, f(s)] = 1."""
        S = self.n_states
        return sp.csr_matrix((np.ones(S), (np.arange(S), self.collapse_map)), shape=(S, self.n_nodes))

    def to_triplets(self) -> str:
        """Sparse (row, col, value) text with a header naming tag, size and collapse map."""
        coo = self.P.tocoo()
        lines = [
            f"# tag {self.tag}",
            f"# stateCount {self.n_states}",
            "# collapseMap " + " ".join(map(str, self.collapse_map.tolist())),
        ]
        lines += [f"{i} {j} {v!r}" for i, j, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_triplets(cls, text: str) -> "LiftedChain":
        tag, S, fmap, rows, cols, vals = None, None, None, [], [], []
        for line in text.splitlines():
            if line.startswith("# tag "):
                tag = line[6:].strip()
            elif line.startswith("# stateCount "):
                S = int(line.split()[2])
            elif line.startswith("# collapseMap"):
                fmap = np.array([int(t) for t in line.split()[2:]], dtype=np.int64)
            elif line.strip() and not line.startswith("#"):
                i, j, v = line.split()
                rows.append(int(i))
                cols.append(int(j))
                vals.append(float(v))
        P = sp.csr_matrix((vals, (rows, cols)), shape=(S, S))
        return cls(P, fmap, tag)


@dataclass(frozen=True)
class Distribution:
    p: np.ndarray
    tol: float = 1e-10
    residual: float = 0.0

    def __post_init__(self):
        if np.any(self.p < 0) or abs(self.p.sum() - 1) > 1e-10:
            raise ValueError("not a probability vector")

    def stats(self) -> dict:
        lo, hi = float(self.p.min()), float(self.p.max())
        return {"min": lo, "max": hi, "ratio": hi / lo if lo > 0 else math.inf}


def _finalize(rows, cols, vals, S, collapse_map, tag, params=None) -> LiftedChain:
    P = sp.coo_matrix((vals, (rows, cols)), shape=(S, S)).tocsr()
    P.sum_duplicates()
    P.sort_indices()
    return LiftedChain(P, collapse_map, tag, params)


def _lifted_map(n: int) -> np.ndarray:
    return np.repeat(np.arange(n, dtype=np.int64), 4)


def directional_triplets(nbrs: DirectionalNeighborhood, p: float, source_weight=None, denominators=None):
    """COO triplets of the directional movement rule.

    ``denominators[j, l]`` divides the direction-l mass of node j among its
    direction-l neighbors (defaults to the neighbor counts) and
    ``source_weight[j]`` scales every transition out of j (defaults to 1).
    The cluster-level iteration uses member counts for both.
    """
    n = nbrs.n
    denom = nbrs.degree if denominators is None else denominators
    rows, cols, vals = [], [], []
    for j in range(n):
        sw = 1.0 if source_weight is None else float(source_weight[j])
        for l in range(4):
            src = 4 * j + l
            for lp, branch in ((l, 1 - p), ((l + 1) % 4, p / 2), ((l + 3) % 4, p / 2)):
                if branch == 0:
                    continue
                w = sw * branch / denom[j, lp]
                fwd = nbrs.forward(j, lp)
                bounce = nbrs.match[lp][j]
                rows.extend([src] * (len(fwd) + len(bounce)))
                cols.extend((4 * fwd + lp).tolist())
                cols.extend((4 * bounce + (lp + 2) % 4).tolist())
                vals.extend([w] * (len(fwd) + len(bounce)))
    return rows, cols, vals


def grid_neighborhood(k: int) -> DirectionalNeighborhood:
    """Lattice directions as a DirectionalNeighborhood.

    A border node is its own match-virtual neighbor in the direction that
    leaves the grid, which reproduces the bounce of the grid update rule.
    """
    n = k * k
    empty = np.array([], dtype=np.int64)
    phys = [[empty] * n for _ in range(4)]
    match = [[empty] * n for _ in range(4)]
    steps = {0: (1, 0), 1: (0, 1), 2: (-1, 0), 3: (0, -1)}
    for y in range(k):
        for x in range(k):
            i = x + k * y
            for l, (dx, dy) in steps.items():
                xx, yy = x + dx, y + dy
                if 0 <= xx < k and 0 <= yy < k:
                    phys[l][i] = np.array([xx + k * yy], dtype=np.int64)
                else:
                    match[l][i] = np.array([i], dtype=np.int64)
    mism = tuple(tuple([empty] * n) for _ in range(4))
    degree = np.ones((n, 4), dtype=np.int64)
    return DirectionalNeighborhood(tuple(map(tuple, phys)), tuple(map(tuple, match)), mism, degree)


def build_grid_chain(k: int) -> LiftedChain:
    """LADA chain on the k x k grid: keep direction w.p. 1 - 1/k, turn w.p. 1/(2k) each side."""
    if k < 2:
        raise ValueError(f"grid side must be >= 2, got k={k}")
    rows, cols, vals = directional_triplets(grid_neighborhood(k), 1.0 / k)
    return _finalize(rows, cols, vals, 4 * k * k, _lifted_map(k * k), GRID_LADA, {"k": k})


def grid_state(k: int, x: int, y: int, l: int) -> int:
    return 4 * (x + k * y) + l


def _check_turn(p: float):
    if not 0 < p < 1:
        raise ValueError(f"turning probability must lie in (0, 1), got {p}")


def build_lada_chain(net: Network, nbrs: DirectionalNeighborhood, p: float) -> LiftedChain:
    """Distributed LADA chain: forward mass (1-p)/d_j^l per direction-l neighbor, p/2 per turn."""
    _check_turn(p)
    nbrs.check()
    rows, cols, vals = directional_triplets(nbrs, p)
    return _finalize(rows, cols, vals, 4 * net.n, _lifted_map(net.n), LADA, {"p": p})


def build_ladau_chain(net: Network, nbrs: DirectionalNeighborhood, p: float) -> LiftedChain:
    """LADA-U chain, doubly stochastic by construction.

    Out of (i, l): p/2 to each of (i, l+1) and (i, l+3); (1-p)/d_max to each
    direction-l neighbor (opposite state for match-virtual ones); the
    remaining (1-p)(1 - d_i^l/d_max) to (i, l+2).
    """
    _check_turn(p)
    nbrs.check()
    d_max = nbrs.d_max
    rows, cols, vals = [], [], []
    for i in range(net.n):
        for l in range(4):
            src = 4 * i + l
            fwd = nbrs.forward(i, l)
            bounce = nbrs.match[l][i]
            rows += [src] * (len(fwd) + len(bounce) + 3)
            cols += (4 * fwd + l).tolist() + (4 * bounce + (l + 2) % 4).tolist()
            vals += [(1 - p) / d_max] * (len(fwd) + len(bounce))
            cols += [4 * i + (l + 1) % 4, 4 * i + (l + 3) % 4, 4 * i + (l + 2) % 4]
            vals += [p / 2, p / 2, (1 - p) * (1 - nbrs.degree[i, l] / d_max)]
    return _finalize(rows, cols, vals, 4 * net.n, _lifted_map(net.n), LADA_U, {"p": p, "d_max": d_max})


def build_baseline_chain(net: Network) -> LiftedChain:
    """Lazy Metropolis-Hastings walk targeting the uniform distribution (reversible)."""
    deg = net.degrees()
    rows, cols, vals = [], [], []
    for i, nbrs in enumerate(net.adjacency):
        if len(nbrs) == 0:
            continue
        w = 0.5 * np.minimum(1.0 / deg[i], 1.0 / deg[nbrs])
        rows += [i] * len(nbrs)
        cols += nbrs.tolist()
        vals += w.tolist()
    P = sp.coo_matrix((vals, (rows, cols)), shape=(net.n, net.n)).tocsr()
    off = np.asarray(P.sum(axis=1)).ravel()
    P = (P + sp.diags(1.0 - off)).tocsr()
    P.sum_duplicates()
    P.sort_indices()
    return LiftedChain(P, np.arange(net.n, dtype=np.int64), BASELINE)


def turning_probability(r: float, rule: str = "half-r") -> float:
    """Turning-probability presets: ``half-r`` gives r/2, ``mu-alpha`` gives 1/ceil(1/mu)
    where mu = 4 sqrt(2) r / (3 pi) is the mean forward step length."""
    if rule == "half-r":
        return r / 2
    if rule == "mu-alpha":
        mu = 4 * math.sqrt(2) * r / (3 * math.pi)
        return 1.0 / math.ceil(1.0 / mu)
    raise ValueError(f"unknown p-rule {rule!r}")


def stationary(chain: LiftedChain, tol: float = 1e-10, max_iter: int = 100_000) -> Distribution:
    """Stationary distribution via a direct sparse solve, power iteration as fallback."""
    P = chain.P
    S = chain.n_states
    # pin the last entry to 1 and solve the remaining (sparse) rows of (P^T - I) pi = 0
    A = (P.T - sp.identity(S, format="csr")).tocsc()
    pi = None
    with np.errstate(all="ignore"):
        try:
            head = spsolve(A[:-1, :-1], -A[:-1, -1].toarray().ravel())
            pi = np.append(head, 1.0)
        except Exception:  # singular factorisation: fall through to power iteration
            pi = None
    if pi is not None and np.all(np.isfinite(pi)):
        pi = np.clip(pi, 0, None)
        pi /= pi.sum()
        res = float(np.abs(P.T @ pi - pi).sum())
        if res <= tol:
            return Distribution(pi, tol, res)
    # lazy power iteration is immune to periodicity
    PT = P.T.tocsr()
    pi = np.full(S, 1.0 / S)
    for _ in range(max_iter):
        nxt = 0.5 * (pi + PT @ pi)
        res = float(np.abs(nxt - pi).sum()) * 2
        pi = nxt
        if res <= tol:
            pi /= pi.sum()
            return Distribution(pi, tol, float(np.abs(PT @ pi - pi).sum()))
    raise StationaryError(res)


def collapse(chain: LiftedChain, pi: Distribution) -> LiftedChain:
    """Node-level chain with P_uv = sum over lifted states of (pi_s / pi_u) P_st."""
    F = chain.node_sum_matrix()
    node_pi = F.T @ pi.p
    if np.any(node_pi <= 0):
        bad = int(np.argmin(node_pi))
        raise ValueError(f"node {bad} has zero stationary mass; chain is not irreducible")
    flow = F.T @ sp.diags(pi.p) @ chain.P @ F
    P = (sp.diags(1.0 / node_pi) @ flow).tocsr()
    P.sum_duplicates()
    P.sort_indices()
    return LiftedChain(P, np.arange(len(node_pi), dtype=np.int64), COLLAPSED, {"from": chain.tag})


def node_marginal(chain: LiftedChain, pi: Distribution) -> Distribution:
    return Distribution(chain.node_sum_matrix().T @ pi.p, pi.tol)


def validate_lifting(
    lifted: LiftedChain,
    collapsed: LiftedChain,
    pi_lifted: Distribution,
    pi_collapsed: Distribution,
    tol: float = 1e-9,
) -> bool:
    """Check both lifting relations: node marginals of pi_lifted equal pi_collapsed,
    and the pi-weighted aggregate of the lifted transitions equals the collapsed chain."""
    n = collapsed.n_states
    if lifted.n_nodes != n or len(pi_lifted.p) != lifted.n_states or len(pi_collapsed.p) != n:
        return False
    F = lifted.node_sum_matrix()
    if np.max(np.abs(F.T @ pi_lifted.p - pi_collapsed.p)) > tol:
        return False
    if np.any(pi_collapsed.p <= 0):
        return False
    flow = (F.T @ sp.diags(pi_lifted.p) @ lifted.P @ F).toarray()
    expected = flow / pi_collapsed.p[:, None]
    return bool(np.max(np.abs(expected - collapsed.P.toarray())) <= tol)


def is_conformant(chain: LiftedChain, net: Network) -> bool:
    """True when node-level mass moves only along network edges or stays put."""
    coo = chain.P.tocoo()
    keep = coo.data > 0
    a = chain.collapse_map[coo.row[keep]]
    b = chain.collapse_map[coo.col[keep]]
    moved = a != b
    allowed = {(int(i), int(j)) for i, j in net.edges()}
    return all((min(i, j), max(i, j)) in allowed for i, j in zip(a[moved].tolist(), b[moved].tolist()))


__all__ = [
    "LiftedChain",
    "Distribution",
    "StationaryError",
    "build_grid_chain",
    "build_lada_chain",
    "build_ladau_chain",
    "build_baseline_chain",
    "grid_neighborhood",
    "grid_state",
    "directional_triplets",
    "turning_probability",
    "stationary",
    "collapse",
    "node_marginal",
    "validate_lifting",
    "is_conformant",
]
