"""Clustering of geometric networks and the cluster-level averaging schemes.

Two clusterings are provided.  ``tessellation_clusters`` cuts the unit
square into a k x k grid of cells (a central controller is assumed) and
``distributed_clustering`` elects cluster-heads with local timers.  The
induced cluster graph supports two iterations: the grid LADA chain run by
the cell heads, and C-LADA, which runs the directional LADA rule between
cluster-heads with member counts as weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .engine import ConsensusRun, _validate_x0, count_messages, iterate
from .lifting import GRID_LADA, LiftedChain, build_grid_chain, directional_triplets, grid_neighborhood
from .topology import (
    DirectionalNeighborhood,
    EmptyDirectionError,
    Network,
    classify_directions,
    sample_geometric,
)


RESAMPLE_STRIDE = 1_000_003


class EmptyCellError(ValueError):
    def __init__(self, cells):
        super().__init__(f"{len(cells)} empty tessellation cell(s), first {cells[0]}; resample the network")
        self.cells = cells


@dataclass(eq=False)
class Clustering:
    """Node-to-cluster assignment plus the induced cluster graph.

    ``gateways`` maps each adjacent cluster pair ``(a, b)`` with ``a < b`` to
    the single active link ``(i, j)`` joining them (``i < j`` as node ids).
    ``directions`` is filled by :func:`build_induced_graph` (or directly by
    the tessellation) and classifies neighboring clusters by direction.
    """

    assignment: np.ndarray
    heads: np.ndarray
    member_count: np.ndarray
    gateways: dict = field(default_factory=dict)
    directions: Optional[DirectionalNeighborhood] = None
    kind: str = "distributed"
    grid_k: Optional[int] = None

    @property
    def K(self) -> int:
        return len(self.heads)

    @property
    def d_hat(self) -> np.ndarray:
        """Total members of the type-l neighboring clusters, shape (K, 4)."""
        out = np.zeros((self.K, 4))
        dirs = self.directions
        for m in range(self.K):
            for l in range(4):
                members = np.concatenate([dirs.physical[l][m], dirs.match[l][m], dirs.mismatch[l][m]])
                out[m, l] = self.member_count[members].sum()
        return out

    def neighbor_counts(self) -> np.ndarray:
        """Number of physically adjacent clusters per cluster."""
        deg = np.zeros(self.K, dtype=np.int64)
        for a, b in self.gateways:
            deg[a] += 1
            deg[b] += 1
        return deg

    def directional_degree(self) -> np.ndarray:
        """d_m = sum over l of d_m^l, virtual neighbors included."""
        return self.directions.degree.sum(axis=1)

    def members(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == m)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "assignment": self.assignment.tolist(),
            "heads": self.heads.tolist(),
            "gateways": [list(map(int, self.gateways[key])) for key in sorted(self.gateways)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _cluster_adjacency(net: Network, assignment: np.ndarray) -> dict:
    """Lexicographically smallest cross-cluster edge for every adjacent cluster pair."""
    e = net.edge_array()
    a, b = assignment[e[:, 0]], assignment[e[:, 1]]
    cross = a != b
    e, lo, hi = e[cross], np.minimum(a, b)[cross], np.maximum(a, b)[cross]
    # edges are already sorted, so the first edge seen per pair is the smallest
    _, first = np.unique(np.c_[lo, hi], axis=0, return_index=True)
    return {(int(lo[f]), int(hi[f])): (int(e[f, 0]), int(e[f, 1])) for f in sorted(first)}


def tessellation_clusters(net: Network, r: float) -> Clustering:
    """Cells of side 1/k with k = ceil(sqrt(5)/r); heads are the lowest member ids."""
    if net.kind != "geometric":
        raise ValueError("tessellation needs a geometric network")
    k = math.ceil(math.sqrt(5) / r)
    cells = np.minimum(np.floor(net.positions * k).astype(np.int64), k - 1)
    assignment = cells[:, 0] + k * cells[:, 1]
    counts = np.bincount(assignment, minlength=k * k)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise EmptyCellError([(int(m % k), int(m // k)) for m in empty])
    heads = np.array([np.flatnonzero(assignment == m)[0] for m in range(k * k)], dtype=np.int64)
    # only 4-neighbor squares are adjacent; any two nodes in such squares are in range
    gateways = {
        key: edge
        for key, edge in _cluster_adjacency(net, assignment).items()
        if (key[1] - key[0] == 1 and key[0] % k != k - 1) or key[1] - key[0] == k
    }
    dirs = grid_neighborhood(k) if k >= 2 else None
    return Clustering(assignment, heads, counts, gateways, dirs, kind="tessellation", grid_k=k)


def distributed_clustering(net: Network, seeds=None, rng_seed: int = 0) -> Clustering:
    """Timer-based head election.

    Every node counts down from its seed; a node whose timer expires while
    still undecided becomes a head and every undecided neighbor joins it.  A
    node reached by several heads in the same round joins one of them
    uniformly at random.  Clusters are numbered in order of election (ties
    by node id).
    """
    n = net.n
    seed_stream, tie_stream = np.random.SeedSequence(int(rng_seed)).spawn(2)
    if seeds is None:
        seeds = np.random.Generator(np.random.Philox(seed_stream)).permutation(n) + 1
    seeds = np.asarray(seeds, dtype=np.int64)
    if len(seeds) != n or np.any(seeds < 1):
        raise ValueError("need one positive timer per node")
    tie_rng = np.random.Generator(np.random.Philox(tie_stream))

    assignment = np.full(n, -1, dtype=np.int64)
    heads = []
    order = np.argsort(seeds, kind="stable")
    pos = 0
    while pos < n:
        fire_time = seeds[order[pos]]
        firing = []
        while pos < n and seeds[order[pos]] == fire_time:
            i = int(order[pos])
            if assignment[i] < 0:
                firing.append(i)
            pos += 1
        firing.sort()
        offers = {}
        for i in firing:
            assignment[i] = len(heads)
            heads.append(i)
        for i in firing:
            for j in net.adjacency[i].tolist():
                if assignment[j] < 0:
                    offers.setdefault(j, []).append(assignment[i])
        for j in sorted(offers):
            choices = offers[j]
            assignment[j] = choices[0] if len(choices) == 1 else choices[int(tie_rng.integers(len(choices)))]
    heads = np.array(heads, dtype=np.int64)
    counts = np.bincount(assignment, minlength=len(heads))
    return Clustering(assignment, heads, counts, _cluster_adjacency(net, assignment))


def build_induced_graph(net: Network, cl: Clustering, r: float, strict: bool = True) -> Clustering:
    """Classify neighboring clusters by the sector of their head positions.

    Boundary clusters get virtual neighbors: heads of adjacent clusters (and
    the cluster itself) whose mirror image across the square's border lies
    within 3r of the head.  With ``strict`` a direction without any
    neighboring cluster raises :class:`EmptyDirectionError`.
    """
    K = cl.K
    adjacency = [[] for _ in range(K)]
    for a, b in cl.gateways:
        adjacency[a].append(b)
        adjacency[b].append(a)
    adjacency = [np.array(sorted(a), dtype=np.int64) for a in adjacency]
    head_pos = net.positions[cl.heads]
    dirs = classify_directions(head_pos, adjacency, 3 * r)
    if strict:
        zero = np.argwhere(dirs.degree == 0)
        if len(zero):
            raise EmptyDirectionError(int(zero[0][0]), int(zero[0][1]), what="cluster")
    cl.directions = dirs
    return cl


def sample_clustered(n: int, r: float, seed: int = 0, max_resample: int = 100):
    """Geometric network plus distributed clustering with every d_m^l >= 1.

    Attempt a uses seed ``seed + a * RESAMPLE_STRIDE`` so retries never
    collide with neighboring seeds of a sweep.  Returns ``(net, cl, attempts)``.
    """
    last = None
    for attempt in range(max_resample + 1):
        s = seed + attempt * RESAMPLE_STRIDE
        net = sample_geometric(n, r, seed=s, max_resample=max_resample)
        cl = distributed_clustering(net, rng_seed=s)
        try:
            return net, build_induced_graph(net, cl, r), attempt
        except EmptyDirectionError as exc:
            last = exc
    raise last


def node_level_directions(cl: Clustering) -> DirectionalNeighborhood:
    """Directional neighborhoods of the member graph of a clustering.

    Node i's type-l neighbors (per category) are all members of the type-l
    neighboring clusters of its own cluster; running LADA on this graph is
    what C-LADA does per cluster.
    """
    dirs = cl.directions
    n = len(cl.assignment)
    members = [cl.members(m) for m in range(cl.K)]

    def expand(cat):
        per_cluster = [
            [np.sort(np.concatenate([members[m2] for m2 in cat[l][m]] or [np.array([], dtype=np.int64)])) for m in range(cl.K)]
            for l in range(4)
        ]
        return tuple(tuple(per_cluster[l][cl.assignment[i]] for i in range(n)) for l in range(4))

    degree = cl.d_hat[cl.assignment].astype(np.int64)
    return DirectionalNeighborhood(expand(dirs.physical), expand(dirs.match), expand(dirs.mismatch), degree)


def node_level_network(net: Network, cl: Clustering) -> Network:
    """Graph joining every pair of nodes whose clusters are adjacent."""
    K = cl.K
    members = [cl.members(m) for m in range(K)]
    nbr_clusters = [set() for _ in range(K)]
    for a, b in cl.gateways:
        nbr_clusters[a].add(b)
        nbr_clusters[b].add(a)
    adjacency = []
    for i in range(net.n):
        m = cl.assignment[i]
        parts = [members[m2] for m2 in sorted(nbr_clusters[m])]
        adjacency.append(np.sort(np.concatenate(parts)) if parts else np.array([], dtype=np.int64))
    return Network("geometric", net.positions, tuple(adjacency), r=net.r, seed=net.seed, resamples=net.resamples)


def clada_operator(cl: Clustering, p: float) -> sp.csr_matrix:
    """Cluster-level transition operator A with y(t+1) = A^T y(t).

    Entry ((m', l), (m, l')) carries n_{m'} / d_hat_{m'}^{l'} times the
    branch weight (1-p straight, p/2 per turn); it is not stochastic, but
    the member-weighted sums of y and w are preserved.
    """
    dirs = cl.directions
    if dirs is None:
        raise ValueError("build the induced graph first")
    d_hat = cl.d_hat
    zero = np.argwhere(d_hat == 0)
    if len(zero):
        raise EmptyDirectionError(int(zero[0][0]), int(zero[0][1]), what="cluster")
    rows, cols, vals = directional_triplets(dirs, p, source_weight=cl.member_count, denominators=d_hat)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(4 * cl.K, 4 * cl.K)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def run_clada(
    net: Network,
    cl: Clustering,
    x0,
    p: float,
    eps: float = 1e-3,
    max_iter: int = 10_000,
    observer=None,
) -> ConsensusRun:
    """C-LADA: heads iterate (y, w) pairs; members read off the head's ratio estimate."""
    x0 = _validate_x0(x0)
    A = clada_operator(cl, p)
    AT = A.T.tocsr()
    K = cl.K
    fmap = np.repeat(np.arange(K), 4)
    sums = np.bincount(cl.assignment, weights=x0, minlength=K)
    y0 = np.repeat(sums / (4 * cl.member_count), 4)
    w0 = np.full(4 * K, 0.25)
    mult = np.repeat(cl.member_count, 4).astype(float)

    def estimate(y, w):
        est = np.bincount(fmap, weights=y, minlength=K) / np.bincount(fmap, weights=w, minlength=K)
        return est[cl.assignment]

    run = ConsensusRun(None, x0, float(x0.mean()), y0, x0.copy(), w0, algorithm="clada", meta={"p": p, "K": K})
    iterate(lambda v: AT @ v, estimate, y0, w0, x0, eps, max_iter, multiplicity=mult, run=run, observer=observer)
    count_messages(run, "clada", cl)
    return run


def run_centralized_grid(
    net: Network,
    cl: Clustering,
    x0,
    eps: float = 1e-3,
    max_iter: int = 10_000,
    observer=None,
) -> ConsensusRun:
    """Cell heads run the grid LADA chain on cell sums; nodes read (k^2/n) times the head's total."""
    if cl.kind != "tessellation":
        raise ValueError("the centralized scheme runs on a tessellation clustering")
    x0 = _validate_x0(x0)
    k = cl.grid_k
    n = len(x0)
    if k >= 2:
        chain = build_grid_chain(k)
    else:
        chain = LiftedChain(sp.identity(4, format="csr"), np.zeros(4, dtype=np.int64), GRID_LADA, {"k": 1})
    PT = chain.P.T.tocsr()
    sums = np.bincount(cl.assignment, weights=x0, minlength=k * k)
    y0 = np.repeat(sums / 4, 4)
    fmap = chain.collapse_map

    def estimate(y, w):
        cell = np.bincount(fmap, weights=y, minlength=k * k)
        return (k * k / n) * cell[cl.assignment]

    run = ConsensusRun(chain, x0, float(x0.mean()), y0, x0.copy(), algorithm="centralized-grid", meta={"k": k})
    iterate(lambda v: PT @ v, estimate, y0, None, x0, eps, max_iter, run=run, observer=observer)
    count_messages(run, "centralized-grid", cl)
    return run
