"""Network generation and directional neighbor classification.

Two network families are supported: the k x k lattice and the geometric
random graph G(n, r) on the unit square.  For geometric networks every
neighbor is assigned to one of four 90-degree sectors (east, north, west,
south), and nodes close to the border of the square receive *virtual*
neighbors obtained by mirroring their neighborhood across the border.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

EAST, NORTH, WEST, SOUTH = 0, 1, 2, 3
DIRECTIONS = ("east", "north", "west", "south")

# Unit-square boundaries: outward direction -> (axis, wall coordinate).
_WALLS = {EAST: (0, 1.0), NORTH: (1, 1.0), WEST: (0, 0.0), SOUTH: (1, 0.0)}
_CORNERS = ((EAST, NORTH), (NORTH, WEST), (WEST, SOUTH), (SOUTH, EAST))


class DisconnectedNetworkError(RuntimeError):
    """Raised when no connected sample was found within the resample budget."""

    def __init__(self, n: int, r: float, attempts: int):
        super().__init__(
            f"G(n={n}, r={r:.6g}) still disconnected after {attempts} attempts; "
            f"r is probably below the connectivity threshold "
            f"sqrt(2 log n / n) = {math.sqrt(2 * math.log(n) / n):.6g}"
        )
        self.attempts = attempts


class EmptyDirectionError(ValueError):
    """Raised when some node (or cluster) has no neighbor in some direction."""

    def __init__(self, node: int, direction: int, what: str = "node"):
        super().__init__(
            f"{what} {node} has no {DIRECTIONS[direction]} neighbors (d[{node}][{direction}] = 0)"
        )
        self.node = node
        self.direction = direction


def make_rng(seed: int) -> np.random.Generator:
    """Philox-4x64 generator keyed from ``seed`` through numpy's SeedSequence.

    Philox is counter based and its stream for a given key is fixed by
    numpy's documented bit-level algorithm, so samples replay across platforms.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


@dataclass(frozen=True, eq=False)
class Network:
    """An undirected network with node coordinates.

    ``kind`` is ``"grid"`` (integer lattice coordinates, 4-connectivity) or
    ``"geometric"`` (points in the unit square joined when within range ``r``).
    """

    kind: str
    positions: np.ndarray
    adjacency: tuple
    k: Optional[int] = None
    r: Optional[float] = None
    seed: Optional[int] = None
    resamples: int = 0

    @property
    def n(self) -> int:
        return len(self.positions)

    def edges(self) -> list[tuple[int, int]]:
        return [tuple(e) for e in self.edge_array().tolist()]

    def edge_array(self) -> np.ndarray:
        """(m, 2) array of edges i < j, sorted lexicographically."""
        if self.n == 0:
            return np.zeros((0, 2), dtype=np.int64)
        src = np.repeat(np.arange(self.n), [len(a) for a in self.adjacency])
        dst = np.concatenate(self.adjacency).astype(np.int64) if src.size else np.zeros(0, dtype=np.int64)
        keep = src < dst
        return np.c_[src[keep], dst[keep]]

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency])

    def to_dict(self) -> dict:
        doc = {"kind": self.kind}
        if self.kind == "grid":
            doc["k"] = self.k
        else:
            doc.update(n=self.n, r=self.r, seed=self.seed, resamples=self.resamples)
        doc["positions"] = self.positions.tolist()
        doc["edges"] = [list(e) for e in self.edges()]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        positions = np.asarray(doc["positions"], dtype=float).reshape(-1, 2)
        adjacency = _adjacency_from_edges(len(positions), doc["edges"])
        if doc["kind"] == "grid":
            return cls("grid", positions, adjacency, k=int(doc["k"]))
        return cls(
            "geometric",
            positions,
            adjacency,
            r=float(doc["r"]),
            seed=doc.get("seed"),
            resamples=int(doc.get("resamples", 0)),
        )


def _adjacency_from_edges(n: int, edges) -> tuple:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    return tuple(np.split(dst, np.searchsorted(src, np.arange(1, n))))


def make_grid(k: int) -> Network:
    """k x k lattice; node id ``x + k*y`` sits at integer coordinates (x, y)."""
    if k < 2:
        raise ValueError(f"grid side must be >= 2, got k={k}")
    xs, ys = np.meshgrid(np.arange(k), np.arange(k))
    positions = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
    edges = []
    for y in range(k):
        for x in range(k):
            i = x + k * y
            if x + 1 < k:
                edges.append((i, i + 1))
            if y + 1 < k:
                edges.append((i, i + k))
    return Network("grid", positions, _adjacency_from_edges(k * k, edges), k=k)


def geometric_network(positions: np.ndarray, r: float, seed: Optional[int] = None, resamples: int = 0) -> Network:
    """Build the geometric graph on given points (edges at distance in (0, r])."""
    positions = np.asarray(positions, dtype=float)
    pairs = cKDTree(positions).query_pairs(r, output_type="ndarray")
    if len(pairs):
        d = np.linalg.norm(positions[pairs[:, 0]] - positions[pairs[:, 1]], axis=1)
        pairs = pairs[d > 0]
    return Network("geometric", positions, _adjacency_from_edges(len(positions), pairs), r=float(r), seed=seed, resamples=resamples)


def _draw_positions(n: int, rng: np.random.Generator) -> np.ndarray:
    pos = rng.random((n, 2))
    # coincident points leave the sector undefined; redraw the later one
    while True:
        _, first = np.unique(pos, axis=0, return_index=True)
        if len(first) == n:
            return pos
        dup = np.setdiff1d(np.arange(n), first)
        pos[dup] = rng.random((len(dup), 2))


def sample_geometric(n: int, r: float, seed: int = 0, max_resample: int = 100) -> Network:
    """Sample a connected G(n, r), redrawing with seed+1, seed+2, ... if needed."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if not 0 < r <= math.sqrt(2):
        raise ValueError(f"range must satisfy 0 < r <= sqrt(2), got {r}")
    for attempt in range(max_resample + 1):
        used = seed + attempt
        net = geometric_network(_draw_positions(n, make_rng(used)), r, seed=used, resamples=attempt)
        if is_connected(net):
            return net
    raise DisconnectedNetworkError(n, r, max_resample + 1)


def is_connected(net: Network) -> bool:
    n = net.n
    if n <= 1:
        return True
    rows = np.concatenate([np.full(len(a), i) for i, a in enumerate(net.adjacency)])
    cols = np.concatenate(net.adjacency)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, _ = connected_components(graph, directed=False)
    return ncomp == 1


def sector(dx, dy):
    """Direction sector of the displacement (dx, dy), vectorised.

    Sector l covers angles in (l*pi/2 - pi/4, l*pi/2 + pi/4].  The test is
    done with coordinate comparisons instead of atan2, so negating the
    displacement maps sector l to l+2 exactly, including on sector edges.
    """
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    out = np.full(np.broadcast(dx, dy).shape, -1, dtype=np.int64)
    out[(dx > 0) & (-dx < dy) & (dy <= dx)] = EAST
    out[(dy > 0) & (-dy <= dx) & (dx < dy)] = NORTH
    out[(dx < 0) & (dx <= dy) & (dy < -dx)] = WEST
    out[(dy < 0) & (dy < dx) & (dx <= -dy)] = SOUTH
    return out


@dataclass(frozen=True, eq=False)
class DirectionalNeighborhood:
    """Per-node, per-direction neighbor lists.

    ``physical[l][i]`` holds the type-l neighbors of node i.  ``match[l][i]``
    holds virtual type-l neighbors produced by a reflection across the
    direction-l boundary itself (their values bounce back), ``mismatch[l][i]``
    the virtual type-l neighbors produced by any other reflection.  Virtual
    lists are multisets: a node reached through two different mirror images
    appears twice.  ``degree[i, l]`` counts all three lists.
    """

    physical: tuple
    match: tuple
    mismatch: tuple
    degree: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.degree.shape[0]

    @property
    def d_max(self) -> int:
        return int(self.degree.max())

    @property
    def d_min(self) -> int:
        return int(self.degree.min())

    def forward(self, i: int, l: int) -> np.ndarray:
        """Neighbors whose direction-l state continues in direction l."""
        return np.concatenate([self.physical[l][i], self.mismatch[l][i]])

    def check(self) -> None:
        """Raise EmptyDirectionError for the first (node, direction) with no neighbor."""
        zero = np.argwhere(self.degree == 0)
        if len(zero):
            i, l = zero[0]
            raise EmptyDirectionError(int(i), int(l))


def _freeze(buckets) -> tuple:
    return tuple(
        tuple(np.array(sorted(b), dtype=np.int64) for b in per_dir) for per_dir in buckets
    )


def _reflect(points: np.ndarray, walls) -> np.ndarray:
    out = points.copy()
    for b in walls:
        axis, c = _WALLS[b]
        out[..., axis] = 2 * c - out[..., axis]
    return out


def _sector_under_reflection(l: np.ndarray, walls) -> np.ndarray:
    """Sector seen from the partner node for a pair joined through ``walls``."""
    if len(walls) == 2:
        return l  # point reflection: both displacements coincide
    if walls[0] in (EAST, WEST):
        return (-l) % 4  # y-flip swaps north and south
    return (2 - l) % 4  # x-flip swaps east and west


def virtual_pairs(positions: np.ndarray, reach: float, candidates=None):
    """Enumerate mirrored neighbor relations within distance ``reach``.

    Yields ``(walls, i, j, sector_i, sector_j)`` arrays where the image of j
    across ``walls`` lies in sector ``sector_i`` of i and the image of i lies in
    sector ``sector_j`` of j.  ``candidates`` restricts j to a given list of
    partners per i (self pairs are always considered); by default every pair
    within range is a candidate.  Each unordered pair is classified once and
    the partner's sector derived from the reflection, so the resulting
    relation is exactly symmetric.
    """
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if candidates is None:
        tree = cKDTree(positions)
        cand_pairs = tree.query_pairs(2 * reach, output_type="ndarray")
    else:
        cand_pairs = np.array(
            [(i, int(j)) for i, js in enumerate(candidates) for j in js if i < j], dtype=np.int64
        ).reshape(-1, 2)
    self_pairs = np.column_stack([np.arange(n), np.arange(n)])
    pairs = np.concatenate([self_pairs, cand_pairs])
    families = [(b,) for b in (EAST, NORTH, WEST, SOUTH)] + list(_CORNERS)
    for walls in families:
        # image of j across the walls, as seen from i
        disp = _reflect(positions[pairs[:, 1]], walls) - positions[pairs[:, 0]]
        dist = np.hypot(disp[:, 0], disp[:, 1])
        keep = (dist <= reach) & (dist > 0)
        if not keep.any():
            continue
        p = pairs[keep]
        li = sector(disp[keep, 0], disp[keep, 1])
        lj = _sector_under_reflection(li, walls)
        yield walls, p[:, 0], p[:, 1], li, lj


def classify_directions(positions: np.ndarray, adjacency, reach: float) -> DirectionalNeighborhood:
    """Sector classification plus boundary mirror images, for any point set.

    ``adjacency`` lists the physical neighbors; virtual neighbors are drawn
    from the same lists (plus the node itself) and must have a mirror image
    within ``reach``.
    """
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    phys = [[[] for _ in range(n)] for _ in range(4)]
    match = [[[] for _ in range(n)] for _ in range(4)]
    mism = [[[] for _ in range(n)] for _ in range(4)]

    for i, nbrs in enumerate(adjacency):
        nbrs = np.asarray(nbrs, dtype=np.int64)
        if len(nbrs) == 0:
            continue
        d = positions[nbrs] - positions[i]
        for j, l in zip(nbrs.tolist(), sector(d[:, 0], d[:, 1]).tolist()):
            phys[l][i].append(j)

    for walls, ii, jj, li, lj in virtual_pairs(positions, reach, candidates=adjacency):
        for i, j, a, b in zip(ii.tolist(), jj.tolist(), li.tolist(), lj.tolist()):
            (match if a in walls else mism)[a][i].append(j)
            if i != j:
                (match if b in walls else mism)[b][j].append(i)

    degree = np.zeros((n, 4), dtype=np.int64)
    for l in range(4):
        for i in range(n):
            degree[i, l] = len(phys[l][i]) + len(match[l][i]) + len(mism[l][i])
    return DirectionalNeighborhood(_freeze(phys), _freeze(match), _freeze(mism), degree)


def classify_neighbors(net: Network, strict: bool = True) -> DirectionalNeighborhood:
    """Directional neighbor classification of a geometric network.

    With ``strict`` (the default) a node lacking neighbors in some direction
    raises :class:`EmptyDirectionError`, because the lifted chain is undefined
    there.
    """
    if net.kind != "geometric":
        raise ValueError("classify_neighbors expects a geometric network; grids use lattice directions")
    nbrs = classify_directions(net.positions, net.adjacency, net.r)
    if strict:
        nbrs.check()
    return nbrs


def connectivity_radius(n: int) -> float:
    """sqrt(2 log n / n), the usual connectivity threshold of G(n, r)."""
    return math.sqrt(2 * math.log(n) / n)


def default_radius(n: int) -> float:
    """2 sqrt(log n / n), the operating range used throughout the experiments."""
    return 2 * math.sqrt(math.log(n) / n)
