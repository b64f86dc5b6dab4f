"""Tape-based reverse-mode differentiation over a fixed op vocabulary.

Ops append their output to the tape in creation order, which is a
topological order by construction, so ``Tape.backward`` is a single
reverse sweep. The vocabulary is exactly what the pooling autoencoder
needs: dense affine algebra, pointwise activations, gathers and
segment reductions for attention, the sparse pool/unpool operators,
and two fused losses. Every op here has a finite-difference test.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch, TapeExhausted
from .operators import SparseOperator, pool_max_with_arg, spmm


class Var:
    """A tape-tracked array with an accumulated gradient."""

    __slots__ = ("value", "grad", "_backward", "tape")

    def __init__(self, value, tape, backward=None):
        self.value = np.asarray(value)
        self.grad = None
        self.tape = tape
        self._backward = backward
        if backward is not None and tape is not None:
            tape._ops.append(self)

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Records op outputs; one backward sweep per tape."""

    def __init__(self):
        self._ops: list[Var] = []
        self._spent = False

    def leaf(self, value) -> Var:
        """Wrap an input or parameter; gradients accumulate on it."""
        return Var(value, self)

    def backward(self, loss: Var) -> None:
        """Reverse sweep seeding d(loss)/d(loss) = 1.

        Raises
        ------
        TapeExhausted
            backward was already called on this tape.
        """
        if self._spent:
            raise TapeExhausted("backward already ran on this tape")
        self._spent = True
        if loss.value.shape != ():
            raise ShapeMismatch(f"loss must be scalar, got {loss.value.shape}")
        loss.grad = np.asarray(1.0, dtype=loss.value.dtype)
        for v in reversed(self._ops):
            if v.grad is not None and v._backward is not None:
                v._backward(v.grad)


def _accum(var: Var, g) -> None:
    if var.grad is None:
        var.grad = np.array(g, dtype=var.value.dtype)
    else:
        var.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gdim, sdim) in enumerate(zip(g.shape, shape)):
        if sdim == 1 and gdim != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _same_tape(*vars_: Var) -> Tape:
    tapes = {v.tape for v in vars_}
    if len(tapes) != 1:
        raise ShapeMismatch("operands recorded on different tapes")
    return tapes.pop()


# ---------------------------------------------------------------------------
# Arithmetic


def add(a: Var, b: Var) -> Var:
    out_val = a.value + b.value

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return Var(out_val, _same_tape(a, b), backward)


def sub(a: Var, b: Var) -> Var:
    out_val = a.value - b.value

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return Var(out_val, _same_tape(a, b), backward)


def mul(a: Var, b: Var) -> Var:
    out_val = a.value * b.value

    def backward(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return Var(out_val, _same_tape(a, b), backward)


def scale(a: Var, c: float) -> Var:
    def backward(g):
        _accum(a, g * c)

    return Var(a.value * c, a.tape, backward)


def matmul(a: Var, b: Var) -> Var:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul {a.value.shape} x {b.value.shape}")
    out_val = a.value @ b.value

    def backward(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return Var(out_val, _same_tape(a, b), backward)


def reshape(a: Var, shape) -> Var:
    def backward(g):
        _accum(a, g.reshape(a.value.shape))

    return Var(a.value.reshape(shape), a.tape, backward)


def concat(parts: list[Var], axis: int = 1) -> Var:
    out_val = np.concatenate([p.value for p in parts], axis=axis)
    splits = np.cumsum([p.value.shape[axis] for p in parts])[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, piece)

    return Var(out_val, _same_tape(*parts), backward)


def broadcast_row(a: Var, n: int) -> Var:
    """Tile a (d,) vector into an (n, d) matrix."""
    if a.value.ndim != 1:
        raise ShapeMismatch(f"broadcast_row needs a vector, got {a.value.shape}")
    out_val = np.broadcast_to(a.value, (n, len(a.value))).copy()

    def backward(g):
        _accum(a, g.sum(axis=0))

    return Var(out_val, a.tape, backward)


def sum_all(a: Var) -> Var:
    def backward(g):
        _accum(a, np.full_like(a.value, g))

    return Var(a.value.sum(), a.tape, backward)


def sum_axis0(a: Var) -> Var:
    if a.value.ndim != 2:
        raise ShapeMismatch(f"sum_axis0 needs a matrix, got {a.value.shape}")
    out_val = a.value.sum(axis=0)

    def backward(g):
        _accum(a, np.broadcast_to(g, a.value.shape))

    return Var(out_val, a.tape, backward)


# ---------------------------------------------------------------------------
# Activations


def elu(a: Var) -> Var:
    neg = np.exp(np.minimum(a.value, 0.0)) - 1.0
    out_val = np.where(a.value > 0, a.value, neg)

    def backward(g):
        _accum(a, g * np.where(a.value > 0, 1.0, neg + 1.0))

    return Var(out_val, a.tape, backward)


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    out_val = np.where(a.value > 0, a.value, slope * a.value)

    def backward(g):
        _accum(a, g * np.where(a.value > 0, 1.0, slope))

    return Var(out_val, a.tape, backward)


def tanh(a: Var) -> Var:
    out_val = np.tanh(a.value)

    def backward(g):
        _accum(a, g * (1.0 - out_val * out_val))

    return Var(out_val, a.tape, backward)


# ---------------------------------------------------------------------------
# Gather / segment ops


def rows(a: Var, idx: np.ndarray) -> Var:
    """Gather rows a[idx]; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)
    out_val = a.value[idx]

    def backward(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return Var(out_val, a.tape, backward)


def scatter_rows(a: Var, idx: np.ndarray, n_rows: int) -> Var:
    """Place row i of `a` at position idx[i] in an n_rows output; rest zero.

    Indices must be unique. Inverse gather on the backward pass.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if a.value.ndim != 2 or len(idx) != a.value.shape[0]:
        raise ShapeMismatch("scatter_rows index count does not match input rows")
    out_val = np.zeros((n_rows, a.value.shape[1]), dtype=a.value.dtype)
    out_val[idx] = a.value

    def backward(g):
        _accum(a, g[idx])

    return Var(out_val, a.tape, backward)


def _segment_lengths(indptr: np.ndarray) -> np.ndarray:
    return np.diff(indptr)


def segment_sum(a: Var, indptr: np.ndarray) -> Var:
    """Sum consecutive row blocks: out[k] = sum of a[indptr[k]:indptr[k+1]]."""
    indptr = np.asarray(indptr, dtype=np.int64)
    if a.value.ndim != 2 or indptr[-1] != a.value.shape[0]:
        raise ShapeMismatch("segment_sum bounds do not cover the input rows")
    lens = _segment_lengths(indptr)
    out_val = np.zeros((len(lens), a.value.shape[1]), dtype=a.value.dtype)
    nonzero = np.flatnonzero(lens)
    if nonzero.size:
        out_val[nonzero] = np.add.reduceat(a.value, indptr[:-1][nonzero], axis=0)

    def backward(g):
        _accum(a, np.repeat(g, lens, axis=0))

    return Var(out_val, a.tape, backward)


def segment_softmax(a: Var, indptr: np.ndarray) -> Var:
    """Softmax within consecutive blocks of a 1-D score vector."""
    indptr = np.asarray(indptr, dtype=np.int64)
    if a.value.ndim != 1 or indptr[-1] != a.value.shape[0]:
        raise ShapeMismatch("segment_softmax bounds do not cover the input")
    lens = _segment_lengths(indptr)
    if (lens == 0).any():
        raise ShapeMismatch("segment_softmax got an empty segment")
    starts = indptr[:-1]
    seg_max = np.maximum.reduceat(a.value, starts)
    shifted = np.exp(a.value - np.repeat(seg_max, lens))
    denom = np.add.reduceat(shifted, starts)
    out_val = shifted / np.repeat(denom, lens)

    def backward(g):
        inner = np.add.reduceat(out_val * g, starts)
        _accum(a, out_val * (g - np.repeat(inner, lens)))

    return Var(out_val, a.tape, backward)


# ---------------------------------------------------------------------------
# Sparse pooling ops


def spmm_var(op: SparseOperator, x: Var, jobs: int = 1) -> Var:
    """Differentiable sparse-times-dense; backward applies the cached
    operator transpose to the upstream gradient."""
    out_val = spmm(op, x.value, jobs=jobs)

    def backward(g):
        _accum(x, spmm(op.T, g, jobs=jobs))

    return Var(out_val, x.tape, backward)


def pool_max_var(corr, x: Var) -> Var:
    """Differentiable max pooling; the gradient routes to the argmax
    entry of each (set, channel), ties to the lowest fine index."""
    out_val, arg = pool_max_with_arg(corr, x.value)
    cols = np.broadcast_to(np.arange(out_val.shape[1]), arg.shape)

    def backward(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx, (arg, cols), g)
        _accum(x, gx)

    return Var(out_val, x.tape, backward)


# ---------------------------------------------------------------------------
# Fused losses


def mse_rows(pred: Var, target: np.ndarray) -> Var:
    """Mean over rows of the squared Euclidean row error."""
    target = np.asarray(target)
    if pred.value.shape != target.shape:
        raise ShapeMismatch(f"loss shapes {pred.value.shape} vs {target.shape}")
    diff = pred.value - target
    n = pred.value.shape[0]
    out_val = (diff * diff).sum() / n

    def backward(g):
        _accum(pred, (2.0 / n) * diff * g)

    return Var(out_val, pred.tape, backward)


def softmax_cross_entropy(logits: Var, label: int) -> Var:
    """Stable fused log-softmax negative log-likelihood for one sample."""
    z = logits.value
    if z.ndim != 1:
        raise ShapeMismatch(f"logits must be a vector, got {z.shape}")
    if not 0 <= label < len(z):
        raise ShapeMismatch(f"label {label} outside {len(z)} classes")
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    out_val = lse - z[label]
    prob = np.exp(z - lse)

    def backward(g):
        gz = prob.copy()
        gz[label] -= 1.0
        _accum(logits, gz * g)

    return Var(np.asarray(out_val), logits.tape, backward)
