"""Independent brute-force oracles shared across test modules.

Everything here is written the slow, obvious way (explicit loops,
dense matrices) so the fast library paths are checked against a second
derivation, not against themselves.
"""

import math

import numpy as np

from pspool.correspondence import CorrespondenceSet


def dense_pool_matrices(corr):
    """Dense (P_norm, P_raw) built entry by entry from the pool sets."""
    raw = np.zeros((corr.n_coarse, corr.n_fine))
    for i, s in enumerate(corr.pool_sets):
        for j, w in s:
            raw[i, j] = w
    norm = np.zeros_like(raw)
    for i in range(corr.n_coarse):
        norm[i] = raw[i] / raw[i].sum()
    return norm, raw


def dense_unpool_matrix(raw):
    """Row-normalized dense transpose of a dense raw pooling matrix."""
    t = raw.T.copy()
    out = np.zeros_like(t)
    for j in range(t.shape[0]):
        out[j] = t[j] / t[j].sum()
    return out


def brute_max(corr, X):
    """Per-set exhaustive channel maximum."""
    out = np.full((corr.n_coarse, X.shape[1]), -np.inf)
    for i, s in enumerate(corr.pool_sets):
        for j, _ in s:
            for c in range(X.shape[1]):
                if X[j, c] > out[i, c]:
                    out[i, c] = X[j, c]
    return out


def bellman_ford(mesh, source):
    """O(V * E) shortest paths on the edge-length-weighted vertex graph."""
    n = mesh.n_vertices
    arcs = []
    for u, v in mesh.edges.tolist():
        w = float(np.linalg.norm(mesh.vertices[u] - mesh.vertices[v]))
        arcs.append((u, v, w))
        arcs.append((v, u, w))
    dist = [math.inf] * n
    dist[source] = 0.0
    for _ in range(n - 1):
        changed = False
        for u, v, w in arcs:
            if dist[u] + w < dist[v]:
                dist[v] = dist[u] + w
                changed = True
        if not changed:
            break
    return dist


def random_correspondence(rng, n_coarse, n_fine, k_S):
    """Random relation satisfying the balanced-correspondence invariants.

    Every fine node gets at least one parent, every coarse node at least
    one child, and both directions respect the k_S cap.
    """
    assert n_fine <= k_S * n_coarse and n_coarse <= k_S * n_fine
    pool = [dict() for _ in range(n_coarse)]
    unpool = [dict() for _ in range(n_fine)]

    def attach(i, j):
        w = float(rng.uniform(0.1, 10.0))
        pool[i][j] = w
        unpool[j][i] = w

    # Pass 1: one random parent per fine node, respecting the coarse cap.
    for j in range(n_fine):
        capable = [i for i in range(n_coarse) if len(pool[i]) < k_S]
        attach(int(rng.choice(capable)), j)
    # Pass 2: childless coarse nodes adopt a fine node with spare capacity.
    for i in range(n_coarse):
        if not pool[i]:
            open_fine = [j for j in range(n_fine) if len(unpool[j]) < k_S]
            attach(i, int(rng.choice(open_fine)))
    # Pass 3: random extra pairs wherever both caps allow.
    if k_S > 1:
        for _ in range(int(rng.integers(0, 2 * n_fine))):
            i = int(rng.integers(n_coarse))
            j = int(rng.integers(n_fine))
            if len(pool[i]) < k_S and len(unpool[j]) < k_S and j not in pool[i]:
                attach(i, j)
    pool_sets = tuple(tuple(sorted(s.items())) for s in pool)
    unpool_sets = tuple(tuple(sorted(s.items())) for s in unpool)
    return CorrespondenceSet(pool_sets, unpool_sets, k_S, k_S)


def central_difference_gradient(f, x, step=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        keep = flat[idx]
        flat[idx] = keep + step
        hi = f(x)
        flat[idx] = keep - step
        lo = f(x)
        flat[idx] = keep
        gflat[idx] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(a, b):
    """max |a-b| / max(1, |a|, |b|) — scale-aware gradient comparison."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(1.0, float(np.abs(a).max(initial=0.0)),
                float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / denom
