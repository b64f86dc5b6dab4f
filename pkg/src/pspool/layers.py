"""Graph attention building blocks on top of the autodiff tape.

Parameters live in flat name->array dicts so checkpoints are plain
named tensors. Forward functions take the same dict with values
wrapped as tape Vars, plus a key prefix, so one dict can hold a whole
model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import EmptyGraph, ShapeMismatch

LEAKY_SLOPE = 0.2
DEFAULT_HEADS = 4


@dataclass(frozen=True)
class AttentionStructure:
    """Directed attention edges grouped by destination node.

    Built from an undirected edge list: both directions plus one self
    loop per node, sorted by (destination, source). ``src_indices`` and
    ``dst_indices`` run in that order; ``dst_indptr`` bounds each
    destination's segment.
    """

    n_nodes: int
    dst_indptr: np.ndarray
    src_indices: np.ndarray
    dst_indices: np.ndarray

    @classmethod
    def from_edges(cls, edges: np.ndarray, n_nodes: int) -> "AttentionStructure":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        loops = np.arange(n_nodes, dtype=np.int64)
        src = np.concatenate([edges[:, 0], edges[:, 1], loops])
        dst = np.concatenate([edges[:, 1], edges[:, 0], loops])
        order = np.lexsort((src, dst))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=n_nodes), out=indptr[1:])
        return cls(n_nodes, indptr, src, dst)


def glorot(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    """Glorot-uniform initialization."""
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(dtype)


# ---------------------------------------------------------------------------
# GAT layer


def init_gat(rng, d_in: int, d_out: int, heads: int = DEFAULT_HEADS,
             prefix: str = "", dtype=np.float64) -> dict:
    """Parameters for one multi-head GAT layer (features concatenated)."""
    if d_out % heads != 0:
        raise ShapeMismatch(f"d_out {d_out} not divisible by {heads} heads")
    d_head = d_out // heads
    params = {}
    for h in range(heads):
        params[f"{prefix}W{h}"] = glorot(rng, (d_in, d_head), dtype)
        params[f"{prefix}a_src{h}"] = glorot(rng, (d_head, 1), dtype)
        params[f"{prefix}a_dst{h}"] = glorot(rng, (d_head, 1), dtype)
    params[f"{prefix}bias"] = np.zeros(d_out, dtype=dtype)
    return params


def gat_forward(p: dict, x: Var, att: AttentionStructure,
                heads: int = DEFAULT_HEADS, prefix: str = "",
                slope: float = LEAKY_SLOPE) -> Var:
    """Multi-head graph attention: out_i = ||_h sum_j alpha_ij W_h x_j.

    Attention softmax runs over each node's in-neighborhood including
    its self loop. Heads are concatenated and a shared bias added; no
    output activation (callers compose one).
    """
    if x.value.shape[0] != att.n_nodes:
        raise ShapeMismatch(
            f"features for {x.value.shape[0]} nodes, structure has {att.n_nodes}"
        )
    nnz = len(att.src_indices)
    head_outputs = []
    for h in range(heads):
        hproj = ad.matmul(x, p[f"{prefix}W{h}"])
        s_src = ad.matmul(hproj, p[f"{prefix}a_src{h}"])
        s_dst = ad.matmul(hproj, p[f"{prefix}a_dst{h}"])
        e = ad.add(ad.rows(s_src, att.src_indices),
                   ad.rows(s_dst, att.dst_indices))
        e = ad.leaky_relu(e, slope)
        alpha = ad.segment_softmax(ad.reshape(e, (nnz,)), att.dst_indptr)
        msg = ad.mul(ad.reshape(alpha, (nnz, 1)), ad.rows(hproj, att.src_indices))
        head_outputs.append(ad.segment_sum(msg, att.dst_indptr))
    out = head_outputs[0] if heads == 1 else ad.concat(head_outputs, axis=1)
    return ad.add(out, p[f"{prefix}bias"])


def gat_attention_weights(p: dict, x_value: np.ndarray, att: AttentionStructure,
                          heads: int = DEFAULT_HEADS, prefix: str = "",
                          slope: float = LEAKY_SLOPE) -> np.ndarray:
    """Forward-only per-edge attention coefficients, one column per head."""
    from .autodiff import Tape

    tape = Tape()
    x = tape.leaf(x_value)
    cols = []
    for h in range(heads):
        hproj = ad.matmul(x, tape.leaf(p[f"{prefix}W{h}"]))
        s_src = ad.matmul(hproj, tape.leaf(p[f"{prefix}a_src{h}"]))
        s_dst = ad.matmul(hproj, tape.leaf(p[f"{prefix}a_dst{h}"]))
        e = ad.add(ad.rows(s_src, att.src_indices),
                   ad.rows(s_dst, att.dst_indices))
        e = ad.leaky_relu(e, slope)
        alpha = ad.segment_softmax(ad.reshape(e, (len(att.src_indices),)),
                                   att.dst_indptr)
        cols.append(alpha.value)
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# MLP


def init_mlp(rng, dims: list[int], prefix: str = "", dtype=np.float64) -> dict:
    """Parameters for an affine chain dims[0] -> ... -> dims[-1]."""
    params = {}
    for i in range(len(dims) - 1):
        params[f"{prefix}W{i}"] = glorot(rng, (dims[i], dims[i + 1]), dtype)
        params[f"{prefix}b{i}"] = np.zeros(dims[i + 1], dtype=dtype)
    return params


def mlp_forward(p: dict, x: Var, n_layers: int, prefix: str = "") -> Var:
    """ELU between layers, linear final layer."""
    out = x
    for i in range(n_layers):
        out = ad.add(ad.matmul(out, p[f"{prefix}W{i}"]), p[f"{prefix}b{i}"])
        if i < n_layers - 1:
            out = ad.elu(out)
    return out


# ---------------------------------------------------------------------------
# Global attention readout


def init_readout(rng, d_in: int, d_out: int, prefix: str = "",
                 dtype=np.float64) -> dict:
    """Gate MLP (node score) and transform map for attention readout."""
    gate_hidden = max(d_in // 2, 4)
    params = init_mlp(rng, [d_in, gate_hidden, 1], prefix=f"{prefix}gate_", dtype=dtype)
    params.update(init_mlp(rng, [d_in, d_out], prefix=f"{prefix}tr_", dtype=dtype))
    return params


def global_attention_readout(p: dict, x: Var, prefix: str = "") -> Var:
    """Attention-weighted sum g = sum_i softmax_i(gate(x_i)) transform(x_i)."""
    n = x.value.shape[0]
    if n < 1:
        raise EmptyGraph("readout needs at least one node")
    scores = mlp_forward(p, x, 2, prefix=f"{prefix}gate_")
    alpha = ad.segment_softmax(ad.reshape(scores, (n,)),
                               np.array([0, n], dtype=np.int64))
    transformed = mlp_forward(p, x, 1, prefix=f"{prefix}tr_")
    weighted = ad.mul(ad.reshape(alpha, (n, 1)), transformed)
    return ad.sum_axis0(weighted)


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Standard Adam (beta1=0.9, beta2=0.999, eps=1e-8), in-place updates."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        """Apply one update; params with a None or missing gradient stay put."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in self.params:
            g = grads.get(k)
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            self.params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
