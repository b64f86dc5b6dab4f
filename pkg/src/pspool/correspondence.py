"""Geodesic correspondence sets between adjacent hierarchy levels.

Each coarse node gathers a fixed-size set of fine nodes, found as the
k nearest fine vertices in graph-geodesic distance from the coarse
node's seed vertex. Weights are inverse geodesic distances. After
augmentation (k_aug candidates per coarse node) the relation and its
transpose are truncated so that both directions respect the k_S cap,
then orphaned nodes are repaired so that pooling and unpooling stay
total maps.

The pool view and the unpool view are exact transposes of one relation
at every step; truncation and repair edit both views together.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DisconnectedSeed
from .mesh import Mesh

WEIGHT_EPSILON = 1e-3  # of canonical scale (canonical meshes have scale 1)


def weight_fn(distance: float, epsilon: float = WEIGHT_EPSILON) -> float:
    """Inverse-distance weight 1 / (epsilon + distance).

    Strictly positive and monotone decreasing; distance 0 maps to
    1/epsilon.
    """
    if distance < 0:
        raise DataError(f"negative distance {distance}")
    return 1.0 / (epsilon + distance)


def vertex_adjacency(mesh: Mesh) -> list[list[tuple[int, float]]]:
    """Neighbor lists with Euclidean edge lengths, sorted by neighbor index."""
    adj: list[list[tuple[int, float]]] = [[] for _ in range(mesh.n_vertices)]
    verts = mesh.vertices
    for u, v in mesh.edges.tolist():
        length = float(np.linalg.norm(verts[u] - verts[v]))
        adj[u].append((v, length))
        adj[v].append((u, length))
    for lst in adj:
        lst.sort()
    return adj


def _dijkstra(adj, source: int, cutoff: float, max_settled: int):
    # Ties in distance settle the lower vertex index first.
    dist = {source: 0.0}
    settled: list[tuple[int, float]] = []
    done = set()
    heap = [(0.0, source)]
    while heap and len(settled) < max_settled:
        d, u = heapq.heappop(heap)
        if u in done or d > cutoff:
            continue
        done.add(u)
        settled.append((u, d))
        for v, w in adj[u]:
            nd = d + w
            if nd <= cutoff and nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return settled


def geodesic_distances(mesh: Mesh, source: int,
                       cutoff: float = math.inf) -> dict[int, float]:
    """Single-source shortest-path distances over the edge graph.

    Edges are weighted by Euclidean length. Vertices farther than
    ``cutoff`` (and vertices in other components) are omitted.

    Parameters
    ----------
    mesh : Mesh
    source : int
        Source vertex index.
    cutoff : float
        Maximum distance to report; must be positive.
    """
    if not 0 <= source < mesh.n_vertices:
        raise DataError(f"source {source} out of range")
    if cutoff <= 0:
        raise DataError(f"cutoff must be positive, got {cutoff}")
    adj = vertex_adjacency(mesh)
    return dict(_dijkstra(adj, source, cutoff, mesh.n_vertices))


def k_nearest_geodesic(adj, source: int, k: int) -> list[tuple[int, float]]:
    """The k geodesically nearest vertices to ``source`` (itself included).

    Returns (vertex, distance) pairs in settle order: increasing
    distance, ties by lower vertex index. Fewer than k pairs come back
    when the source's component is smaller than k.
    """
    return _dijkstra(adj, source, math.inf, k)


def nearest_seed_labels(adj, seeds: list[int], positions: np.ndarray):
    """Label every vertex with the nearest seed (multi-source Dijkstra).

    Vertices in components that contain no seed fall back to the
    Euclidean-nearest seed. Ties break toward the lower seed list index.

    Returns
    -------
    owner : ndarray int64
        Index into ``seeds`` per vertex.
    dist : ndarray float64
        Geodesic distance to the owning seed (Euclidean for fallback
        vertices).
    """
    n = len(adj)
    owner = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, math.inf)
    heap = []
    for si, s in enumerate(seeds):
        # Duplicate seed vertices: the lower seed index wins.
        if owner[s] == -1:
            dist[s] = 0.0
            owner[s] = si
            heap.append((0.0, s, si))
    heapq.heapify(heap)
    done = [False] * n
    while heap:
        d, u, si = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        owner[u] = si
        dist[u] = d
        for v, w in adj[u]:
            nd = d + w
            if not done[v] and nd < dist[v]:
                dist[v] = nd
                owner[v] = si
                heapq.heappush(heap, (nd, v, si))
    unreached = np.flatnonzero(~np.asarray(done))
    if unreached.size:
        seed_pos = positions[np.asarray(seeds)]
        for v in unreached:
            d2 = ((seed_pos - positions[v]) ** 2).sum(axis=1)
            owner[v] = int(np.argmin(d2))
            dist[v] = float(math.sqrt(d2[owner[v]]))
    return owner, dist


@dataclass(frozen=True)
class CorrespondenceSet:
    """Balanced relation between one coarse level and its fine level.

    ``pool_sets[i]`` lists (fine index, weight) pairs for coarse node i;
    ``unpool_sets[j]`` lists (coarse index, weight) pairs for fine node
    j. The two views are exact transposes. ``repaired`` records (coarse,
    fine) pairs added by orphan repair; those may exceed the geodesic
    candidate radius.
    """

    pool_sets: tuple
    unpool_sets: tuple
    k_S: int
    k_aug: int
    repaired: tuple = field(default_factory=tuple)

    @property
    def n_coarse(self) -> int:
        return len(self.pool_sets)

    @property
    def n_fine(self) -> int:
        return len(self.unpool_sets)

    def __post_init__(self):
        if self.k_S < 1 or self.k_aug < self.k_S:
            raise DataError("need k_aug >= k_S >= 1")
        forward = {
            (i, j) for i, s in enumerate(self.pool_sets) for j, _ in s
        }
        backward = {
            (i, j) for j, s in enumerate(self.unpool_sets) for i, _ in s
        }
        if forward != backward:
            raise DataError("pool and unpool views are not transposes")
        for name, sets in (("pool", self.pool_sets), ("unpool", self.unpool_sets)):
            for idx, s in enumerate(sets):
                if len(s) == 0:
                    raise DataError(f"{name} set {idx} is empty")
                if len(s) > self.k_S:
                    raise DataError(f"{name} set {idx} exceeds k_S")
                if any(not math.isfinite(w) or w < 0 for _, w in s):
                    raise DataError(f"{name} set {idx} has a bad weight")
                if not any(w > 0 for _, w in s):
                    raise DataError(f"{name} set {idx} has no positive weight")


def _truncate(entries, k_S):
    # Keep the k_S largest weights; ties prefer the lower node index.
    if len(entries) <= k_S:
        return entries
    return sorted(entries, key=lambda t: (-t[1], t[0]))[:k_S]


def build_correspondence(fine: Mesh, coarse: Mesh, seed_map: np.ndarray,
                         k_S: int = 8, k_aug: int | None = None,
                         epsilon: float = WEIGHT_EPSILON) -> CorrespondenceSet:
    """Build the support-balanced correspondence for one level pair.

    Steps: (a) per coarse node, collect its ``k_aug`` geodesically
    nearest fine nodes from the seed vertex, weighted by inverse
    distance; (b) form the transpose; (c) truncate every fine node's
    parent list to its ``k_S`` largest weights; (d) truncate every
    coarse node's fine list likewise; (e) repair nodes orphaned by
    truncation.

    Repair attaches an orphaned fine node to its nearest coarse node.
    When that coarse node's set is full, the lowest-weight entry whose
    fine node keeps another parent is evicted, so repairs never create
    new orphans.

    Raises
    ------
    DisconnectedSeed
        A geodesic search returned no vertices (corrupted input).
    DataError
        Capacity k_S * n_coarse < n_fine, which no balanced relation
        can cover, or invalid seed_map.
    """
    if k_aug is None:
        k_aug = 2 * k_S
    if k_S < 1 or k_aug < k_S:
        raise DataError("need k_aug >= k_S >= 1")
    n_fine, n_coarse = fine.n_vertices, coarse.n_vertices
    seed_map = np.asarray(seed_map, dtype=np.int64)
    if len(seed_map) != n_coarse:
        raise DataError("seed_map length must equal coarse vertex count")
    if n_fine and (seed_map.min() < 0 or seed_map.max() >= n_fine):
        raise DataError("seed_map indexes out of range")
    if n_fine > k_S * n_coarse:
        raise DataError(
            f"k_S={k_S} cannot cover {n_fine} fine nodes with {n_coarse} coarse nodes"
        )

    adj = vertex_adjacency(fine)

    # (a) augmented candidate sets, one early-exit Dijkstra per coarse node
    pool: list[dict[int, float]] = []
    for i in range(n_coarse):
        found = k_nearest_geodesic(adj, int(seed_map[i]), k_aug)
        if not found:
            raise DisconnectedSeed(f"coarse node {i}: empty geodesic search")
        pool.append({j: weight_fn(d, epsilon) for j, d in found})

    # (b) transpose
    unpool: list[dict[int, float]] = [dict() for _ in range(n_fine)]
    for i, s in enumerate(pool):
        for j, w in s.items():
            unpool[j][i] = w

    def drop(i, j):
        del pool[i][j]
        del unpool[j][i]

    # (c) fine-side truncation
    for j in range(n_fine):
        keep = _truncate(sorted(unpool[j].items()), k_S)
        for i in list(unpool[j]):
            if all(i != ki for ki, _ in keep):
                drop(i, j)

    # (d) coarse-side truncation
    for i in range(n_coarse):
        keep = _truncate(sorted(pool[i].items()), k_S)
        for j in list(pool[i]):
            if all(j != kj for kj, _ in keep):
                drop(i, j)

    repaired: list[tuple[int, int]] = []

    def attach(i, j, w):
        pool[i][j] = w
        unpool[j][i] = w
        repaired.append((i, j))

    def evictable(i):
        # Entries of coarse i whose fine node keeps >= 2 parents,
        # cheapest (lowest weight, then lowest index) first.
        cands = [(w, j) for j, w in pool[i].items() if len(unpool[j]) >= 2]
        return min(cands) if cands else None

    # (e1) coarse nodes emptied by fine-side truncation readopt their seed
    for i in range(n_coarse):
        if pool[i]:
            continue
        j = int(seed_map[i])
        w = weight_fn(0.0, epsilon)
        if len(unpool[j]) >= k_S:
            # Make room: drop j's weakest parent that keeps other children.
            cands = [(pw, pi) for pi, pw in unpool[j].items() if len(pool[pi]) >= 2]
            if not cands:
                raise DataError(f"cannot rebalance coarse node {i}")
            _, pi = min(cands)
            drop(pi, j)
        attach(i, j, w)

    # (e2) orphaned fine nodes reattach to their nearest coarse node
    orphans = [j for j in range(n_fine) if not unpool[j]]
    if orphans:
        owner, dist = nearest_seed_labels(adj, seed_map.tolist(), fine.vertices)
        for j in orphans:
            candidates = [int(owner[j])]
            d2 = ((coarse.vertices - fine.vertices[j]) ** 2).sum(axis=1)
            by_euclid = np.lexsort((np.arange(n_coarse), d2))
            candidates += [int(c) for c in by_euclid if int(c) != candidates[0]]
            placed = False
            for i in candidates:
                d = float(dist[j]) if i == int(owner[j]) else float(math.sqrt(d2[i]))
                w = weight_fn(d, epsilon)
                if len(pool[i]) < k_S:
                    attach(i, j, w)
                    placed = True
                    break
                evict = evictable(i)
                if evict is not None:
                    drop(i, evict[1])
                    attach(i, j, w)
                    placed = True
                    break
            if not placed:
                raise DataError(f"cannot place fine node {j} under k_S={k_S}")

    pool_sets = tuple(tuple(sorted(s.items())) for s in pool)
    unpool_sets = tuple(tuple(sorted(s.items())) for s in unpool)
    return CorrespondenceSet(pool_sets, unpool_sets, k_S, k_aug,
                             tuple(sorted(repaired)))
