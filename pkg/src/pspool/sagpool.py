"""Selection-based pooling baseline: keep top-scored nodes, zero-fill on unpool.

The coarse graph is the induced subgraph on the kept nodes, so connectivity
can degrade arbitrarily (a cycle pooled at ratio 0.5 with alternating scores
keeps no edges at all). Discarded nodes are restored as zero rows. Both
behaviors are intentional: this module exists as the contrast case for the
structure-preserving operators in :mod:`pspool.operators`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import EmptySelection, ShapeMismatch
from .layers import AttentionStructure, gat_forward, init_gat

__all__ = [
    "SelectionPlan",
    "init_scorer",
    "top_k_indices",
    "induced_edges",
    "sag_pool",
    "sag_unpool",
]


@dataclass(frozen=True)
class SelectionPlan:
    """Record of one selection pass: scores, kept node ids, and the ratio.

    Attributes
    ----------
    scores : ndarray, shape (n_nodes,)
        Scalar score per input node.
    kept_indices : ndarray, shape (n_kept,)
        Strictly increasing original indices of the retained nodes. They are
        the top ``ceil(ratio * n_nodes)`` nodes by score, ties resolved
        toward the lower index.
    ratio : float
        Fraction of nodes retained, in (0, 1].
    n_nodes : int
        Size of the graph the selection was made on.
    """

    scores: np.ndarray
    kept_indices: np.ndarray
    ratio: float
    n_nodes: int

    def __post_init__(self):
        kept = np.asarray(self.kept_indices, dtype=np.int64)
        object.__setattr__(self, "kept_indices", kept)
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        if self.scores.shape != (self.n_nodes,):
            raise ShapeMismatch("scores length does not match node count")
        if kept.size < 1:
            raise EmptySelection("selection kept no nodes")
        if kept.size > self.n_nodes or kept[0] < 0 or kept[-1] >= self.n_nodes:
            raise ShapeMismatch("kept indices out of range")
        if kept.size > 1 and not np.all(np.diff(kept) > 0):
            raise ShapeMismatch("kept indices must be strictly increasing")
        if not 0.0 < self.ratio <= 1.0:
            raise ShapeMismatch(f"ratio {self.ratio} outside (0, 1]")


def init_scorer(rng: np.random.Generator, d_in: int, prefix: str = "score_",
                dtype=np.float64) -> dict:
    """Parameters for the scoring pass: one single-head attention layer
    projecting to a scalar per node."""
    return init_gat(rng, d_in, 1, heads=1, prefix=prefix, dtype=dtype)


def top_k_indices(scores: np.ndarray, n_keep: int) -> np.ndarray:
    """Indices of the n_keep largest scores, ties to lower index, sorted."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if n_keep < 1:
        raise EmptySelection("selection would keep no nodes")
    if n_keep > scores.size:
        raise ShapeMismatch(f"cannot keep {n_keep} of {scores.size} nodes")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:n_keep])


def induced_edges(edges: np.ndarray, kept: np.ndarray, n_nodes: int) -> np.ndarray:
    """Edges with both endpoints kept, re-labeled to kept-local indices."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    mask = np.zeros(n_nodes, dtype=bool)
    mask[kept] = True
    inside = mask[edges[:, 0]] & mask[edges[:, 1]]
    remap = np.full(n_nodes, -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    return remap[edges[inside]]


def sag_pool(params: dict, x: Var, edges: np.ndarray, ratio: float,
             prefix: str = "score_", n_keep: int | None = None,
             ) -> tuple[Var, np.ndarray, SelectionPlan]:
    """Score nodes with one attention pass, keep the top fraction.

    Kept features are gated by tanh of their score; everything else is
    dropped. Returns the gated features of the kept nodes, the induced
    edge list on them, and the `SelectionPlan` needed to unpool.

    Parameters
    ----------
    params : dict of str -> Var
        Scorer parameters from `init_scorer`, keyed with `prefix`.
    x : Var, shape (n_nodes, d)
    edges : ndarray, shape (m, 2)
        Undirected edge list on the input graph.
    ratio : float
        Keep ceil(ratio * n_nodes) nodes. Must lie in (0, 1).
    n_keep : int, optional
        Exact number of nodes to keep, overriding the ratio-derived count.
        Used to pin coarse sizes to a reference hierarchy level for
        like-for-like comparisons.

    Raises
    ------
    EmptySelection
        If the selection would keep no nodes.
    """
    n = x.value.shape[0]
    if n == 0:
        raise EmptySelection("cannot pool an empty graph")
    if not 0.0 < ratio < 1.0:
        raise ShapeMismatch(f"ratio {ratio} outside (0, 1)")
    if n_keep is None:
        n_keep = math.ceil(ratio * n)
    att = AttentionStructure.from_edges(edges, n)
    score_col = gat_forward(params, x, att, heads=1, prefix=prefix)
    scores = score_col.value.ravel()
    kept = top_k_indices(scores, n_keep)
    plan = SelectionPlan(scores=scores, kept_indices=kept,
                         ratio=n_keep / n, n_nodes=n)
    gate = ad.tanh(ad.rows(score_col, kept))
    x_kept = ad.mul(ad.rows(x, kept), gate)
    return x_kept, induced_edges(edges, kept, n), plan


def sag_unpool(x_kept: Var, plan: SelectionPlan) -> Var:
    """Scatter kept rows back to their original positions; zero elsewhere."""
    if x_kept.value.shape[0] != plan.kept_indices.size:
        raise ShapeMismatch(
            f"{x_kept.value.shape[0]} rows for {plan.kept_indices.size} kept nodes"
        )
    return ad.scatter_rows(x_kept, plan.kept_indices, plan.n_nodes)
