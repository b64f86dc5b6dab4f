"""Autoencoder and classifier assembly over a pooled mesh-graph hierarchy.

The encoder runs a two-layer attention stack on the finest graph, then
``pooling_depth`` stages of [pool -> two attention layers]. A learned linear
projection of the coarsest node features provides a 2-dim auxiliary matrix,
and a global attention readout produces the latent vector. The decoder tiles
the latent over the coarsest nodes, concatenates the auxiliary features,
mirrors the encoder with [two attention layers -> unpool] stages, and maps
the finest features to coordinates with a four-layer MLP.

Pooling variants share this skeleton and differ only in the pool/unpool
pair: ``ps_mean`` and ``ps_max`` use the precomputed sparse operators,
``sag`` scores and selects nodes on the fly (keep counts pinned to the same
hierarchy level sizes so all variants compare at equal coarse resolution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .correspondence import CorrespondenceSet
from .errors import OperatorMismatch, ShapeMismatch
from .layers import (
    AttentionStructure,
    gat_forward,
    global_attention_readout,
    init_gat,
    init_mlp,
    init_readout,
    mlp_forward,
)
from .operators import SparseOperator
from .sagpool import init_scorer, sag_pool, sag_unpool

__all__ = [
    "SIZE_TABLE",
    "POOLING_KINDS",
    "ModelConfig",
    "GraphBundle",
    "init_autoencoder",
    "init_classifier_head",
    "encode",
    "decode",
    "reconstruction_loss",
    "autoencoder_forward",
    "classifier_forward",
]

# size tag -> (pooling depth, bottleneck, per-stage widths)
SIZE_TABLE = {
    "S": (2, 256, (64, 128, 256)),
    "M": (2, 512, (128, 256, 512)),
    "L": (3, 1024, (128, 256, 512, 1024)),
}
POOLING_KINDS = ("ps_mean", "ps_max", "sag")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description for one autoencoder instance.

    Attributes
    ----------
    size_tag : {'S', 'M', 'L'}
    pooling_kind : {'ps_mean', 'ps_max', 'sag'}
    pooling_depth : int
        Number of pool stages: 2 for S and M, 3 for L.
    bottleneck : int
        Latent width: 256 / 512 / 1024 for S / M / L.
    stage_widths : tuple of int
        Node feature widths; entry 0 after the initial attention stack,
        entry i after pool stage i. The last entry equals the bottleneck.
    k_S, k_aug : int
        Correspondence support caps the operators were built with.
    heads : int
        Attention heads per layer (every width must divide by it).
    aux_dim : int
        Width of the auxiliary per-node matrix extracted before readout.
        Fixed at 2.
    input_dim : int
        Per-vertex input features: position and normal, 3 + 3.
    """

    size_tag: str
    pooling_kind: str
    pooling_depth: int
    bottleneck: int
    stage_widths: tuple
    k_S: int = 8
    k_aug: int = 16
    heads: int = 4
    aux_dim: int = 2
    input_dim: int = 6

    def __post_init__(self):
        if self.size_tag not in SIZE_TABLE:
            raise ShapeMismatch(f"unknown size tag {self.size_tag!r}")
        depth, bottleneck, widths = SIZE_TABLE[self.size_tag]
        if (self.pooling_depth, self.bottleneck) != (depth, bottleneck):
            raise ShapeMismatch(
                f"size {self.size_tag} requires depth {depth} and "
                f"bottleneck {bottleneck}, got {self.pooling_depth} "
                f"and {self.bottleneck}"
            )
        if tuple(self.stage_widths) != widths:
            raise ShapeMismatch(f"size {self.size_tag} requires widths {widths}")
        if self.pooling_kind not in POOLING_KINDS:
            raise ShapeMismatch(f"unknown pooling kind {self.pooling_kind!r}")
        if self.aux_dim != 2:
            raise ShapeMismatch("aux_dim is fixed at 2")
        if any(w % self.heads for w in self.stage_widths):
            raise ShapeMismatch("stage widths must divide by head count")
        if not 1 <= self.k_S <= self.k_aug:
            raise ShapeMismatch("need 1 <= k_S <= k_aug")

    @classmethod
    def for_size(cls, size_tag: str, pooling_kind: str, k_S: int = 8,
                 k_aug: int | None = None) -> "ModelConfig":
        if size_tag not in SIZE_TABLE:
            raise ShapeMismatch(f"unknown size tag {size_tag!r}")
        depth, bottleneck, widths = SIZE_TABLE[size_tag]
        return cls(
            size_tag=size_tag,
            pooling_kind=pooling_kind,
            pooling_depth=depth,
            bottleneck=bottleneck,
            stage_widths=widths,
            k_S=k_S,
            k_aug=2 * k_S if k_aug is None else k_aug,
        )


@dataclass(frozen=True)
class GraphBundle:
    """One sample: features, targets, and its precomputed hierarchy.

    ``edges[l]`` is the undirected edge list of hierarchy level ``l``;
    ``pool_norm[s]`` / ``unpool[s]`` map level ``s`` to ``s+1`` and back.
    ``corr`` carries the raw correspondence sets (needed for max pooling);
    it may be ``None`` for variants that do not use them.
    """

    features: np.ndarray
    target: np.ndarray
    level_sizes: tuple
    edges: tuple
    pool_norm: tuple
    unpool: tuple
    corr: tuple | None = None
    label: int | None = None
    name: str = ""

    def __post_init__(self):
        ls = tuple(int(n) for n in self.level_sizes)
        object.__setattr__(self, "level_sizes", ls)
        depth = len(ls) - 1
        if depth < 1:
            raise OperatorMismatch("bundle needs at least two hierarchy levels")
        if self.features.ndim != 2 or self.features.shape[0] != ls[0]:
            raise OperatorMismatch(
                f"{self.features.shape[0]} feature rows for {ls[0]} finest nodes"
            )
        if self.target.shape != (ls[0], 3):
            raise OperatorMismatch(
                f"target shape {self.target.shape}, expected ({ls[0]}, 3)"
            )
        if len(self.edges) != depth + 1:
            raise OperatorMismatch("need one edge list per hierarchy level")
        if len(self.pool_norm) != depth or len(self.unpool) != depth:
            raise OperatorMismatch("need one pool and unpool operator per stage")
        for s in range(depth):
            if self.pool_norm[s].shape != (ls[s + 1], ls[s]):
                raise OperatorMismatch(
                    f"pool operator {s} shape {self.pool_norm[s].shape}, "
                    f"expected ({ls[s + 1]}, {ls[s]})"
                )
            if self.unpool[s].shape != (ls[s], ls[s + 1]):
                raise OperatorMismatch(
                    f"unpool operator {s} shape {self.unpool[s].shape}, "
                    f"expected ({ls[s]}, {ls[s + 1]})"
                )
        if self.corr is not None:
            if len(self.corr) != depth:
                raise OperatorMismatch("need one correspondence set per stage")
            for s, c in enumerate(self.corr):
                if len(c.pool_sets) != ls[s + 1]:
                    raise OperatorMismatch(
                        f"correspondence {s} has {len(c.pool_sets)} coarse "
                        f"sets for {ls[s + 1]} nodes"
                    )

    @property
    def depth(self) -> int:
        return len(self.level_sizes) - 1


# ---------------------------------------------------------------------------
# Initialization


def init_autoencoder(rng: np.random.Generator, config: ModelConfig,
                     dtype=np.float64) -> dict:
    """Seeded Glorot-uniform weights and zero biases for all stages."""
    w = config.stage_widths
    depth = config.pooling_depth
    heads = config.heads
    p = {}
    p.update(init_gat(rng, config.input_dim, w[0], heads, "enc_in0_", dtype))
    p.update(init_gat(rng, w[0], w[0], heads, "enc_in1_", dtype))
    for s in range(depth):
        if config.pooling_kind == "sag":
            p.update(init_scorer(rng, w[s], prefix=f"enc_s{s}score_", dtype=dtype))
        p.update(init_gat(rng, w[s], w[s + 1], heads, f"enc_s{s}a_", dtype))
        p.update(init_gat(rng, w[s + 1], w[s + 1], heads, f"enc_s{s}b_", dtype))
    p.update(init_mlp(rng, [w[depth], config.aux_dim], "aux_", dtype))
    p.update(init_readout(rng, w[depth], config.bottleneck, "ro_", dtype))

    d_in = config.bottleneck + config.aux_dim
    for i in range(depth):
        w_out = w[depth - 1 - i]
        p.update(init_gat(rng, d_in, w_out, heads, f"dec_s{i}a_", dtype))
        p.update(init_gat(rng, w_out, w_out, heads, f"dec_s{i}b_", dtype))
        d_in = w_out
    mlp_dims = [w[0], w[0], w[0] // 2, max(w[0] // 4, 8), 3]
    p.update(init_mlp(rng, mlp_dims, "dec_mlp_", dtype))
    return p


def init_classifier_head(rng: np.random.Generator, config: ModelConfig,
                         n_classes: int, dtype=np.float64) -> dict:
    """Single linear layer from the latent to class logits."""
    if n_classes < 2:
        raise ShapeMismatch("need at least two classes")
    return init_mlp(rng, [config.bottleneck, n_classes], "head_", dtype)


def _as_vars(tape: Tape, params: dict) -> dict:
    return {k: tape.leaf(v) for k, v in params.items()}


def _check_bundle(config: ModelConfig, bundle: GraphBundle) -> None:
    if bundle.depth != config.pooling_depth:
        raise OperatorMismatch(
            f"bundle has {bundle.depth} pool stages, model expects "
            f"{config.pooling_depth}"
        )
    if bundle.features.shape[1] != config.input_dim:
        raise ShapeMismatch(
            f"{bundle.features.shape[1]} input features, expected "
            f"{config.input_dim}"
        )
    if config.pooling_kind == "ps_max" and bundle.corr is None:
        raise OperatorMismatch("max pooling needs correspondence sets")


# ---------------------------------------------------------------------------
# Forward passes


def encode(pv: dict, config: ModelConfig, bundle: GraphBundle, tape: Tape,
           ) -> tuple[Var, Var, dict]:
    """Features -> (latent vector, auxiliary matrix, per-stage caches).

    The caches hold the attention structure used at every level and, for
    the selection baseline, the per-stage selection plans; `decode` needs
    both to mirror the encoder.
    """
    _check_bundle(config, bundle)
    dtype = pv["enc_in0_bias"].value.dtype
    ls = bundle.level_sizes
    depth = config.pooling_depth
    heads = config.heads

    x = tape.leaf(np.ascontiguousarray(bundle.features, dtype=dtype))
    att = AttentionStructure.from_edges(bundle.edges[0], ls[0])
    atts = [att]
    x = ad.elu(gat_forward(pv, x, att, heads, "enc_in0_"))
    x = ad.elu(gat_forward(pv, x, att, heads, "enc_in1_"))

    plans = []
    sag_edges = bundle.edges[0]
    for s in range(depth):
        if config.pooling_kind == "ps_mean":
            x = ad.spmm_var(bundle.pool_norm[s], x)
            att = AttentionStructure.from_edges(bundle.edges[s + 1], ls[s + 1])
        elif config.pooling_kind == "ps_max":
            x = ad.pool_max_var(bundle.corr[s], x)
            att = AttentionStructure.from_edges(bundle.edges[s + 1], ls[s + 1])
        else:
            x, sag_edges, plan = sag_pool(
                pv, x, sag_edges, ls[s + 1] / ls[s],
                prefix=f"enc_s{s}score_", n_keep=ls[s + 1],
            )
            plans.append(plan)
            att = AttentionStructure.from_edges(sag_edges, ls[s + 1])
        atts.append(att)
        x = ad.elu(gat_forward(pv, x, att, heads, f"enc_s{s}a_"))
        x = ad.elu(gat_forward(pv, x, att, heads, f"enc_s{s}b_"))

    aux = mlp_forward(pv, x, 1, "aux_")
    latent = global_attention_readout(pv, x, "ro_")
    return latent, aux, {"atts": atts, "plans": plans}


def decode(pv: dict, config: ModelConfig, bundle: GraphBundle, latent: Var,
           aux: Var, caches: dict, tape: Tape) -> Var:
    """(latent, aux) -> predicted coordinates on the finest level."""
    _check_bundle(config, bundle)
    ls = bundle.level_sizes
    depth = config.pooling_depth
    heads = config.heads
    atts = caches["atts"]

    if aux.value.shape != (ls[depth], config.aux_dim):
        raise OperatorMismatch(
            f"aux shape {aux.value.shape}, expected ({ls[depth]}, "
            f"{config.aux_dim})"
        )
    x = ad.concat([ad.broadcast_row(latent, ls[depth]), aux], axis=1)
    for i in range(depth):
        level = depth - i
        if x.value.shape[0] != ls[level]:
            raise OperatorMismatch(
                f"decoder stage {i} got {x.value.shape[0]} nodes, "
                f"expected {ls[level]}"
            )
        att = atts[level]
        x = ad.elu(gat_forward(pv, x, att, heads, f"dec_s{i}a_"))
        x = ad.elu(gat_forward(pv, x, att, heads, f"dec_s{i}b_"))
        if config.pooling_kind == "sag":
            x = sag_unpool(x, caches["plans"][level - 1])
        else:
            x = ad.spmm_var(bundle.unpool[level - 1], x)
    return mlp_forward(pv, x, 4, "dec_mlp_")


def reconstruction_loss(pred: Var, target: np.ndarray) -> Var:
    """Mean squared per-vertex Euclidean error against fixed connectivity."""
    return ad.mse_rows(pred, target)


def autoencoder_forward(params: dict, config: ModelConfig,
                        bundle: GraphBundle,
                        ) -> tuple[Tape, dict, Var, Var]:
    """One full pass: fresh tape, encode, decode, loss against the target."""
    tape = Tape()
    pv = _as_vars(tape, params)
    latent, aux, caches = encode(pv, config, bundle, tape)
    pred = decode(pv, config, bundle, latent, aux, caches, tape)
    dtype = pred.value.dtype
    loss = reconstruction_loss(pred, np.asarray(bundle.target, dtype=dtype))
    return tape, pv, pred, loss


def classifier_forward(enc_params: dict, head_params: dict,
                       config: ModelConfig, bundle: GraphBundle,
                       frozen: bool = True,
                       ) -> tuple[Tape, dict, dict | None, Var]:
    """Class logits from the encoder latent.

    With ``frozen=True`` the latent is detached: backward reaches only the
    head parameters and the returned encoder-vars dict is ``None``.
    """
    tape = Tape()
    pv_enc = _as_vars(tape, enc_params)
    latent, _, _ = encode(pv_enc, config, bundle, tape)
    if frozen:
        latent = tape.leaf(latent.value.copy())
        pv_enc = None
    pv_head = _as_vars(tape, head_params)
    row = ad.reshape(latent, (1, config.bottleneck))
    logits = mlp_forward(pv_head, row, 1, "head_")
    n_classes = head_params["head_b0"].shape[0]
    return tape, pv_head, pv_enc, ad.reshape(logits, (n_classes,))
