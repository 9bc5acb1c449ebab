"""Dense float64 tensors with reverse-mode gradient accumulation.

Every operation records its parent tensors together with a closure that
maps the output gradient to parent gradients. ``backward`` replays that
recording in reverse topological order, so each node is visited only
after all of its consumers. Gradients accumulate into the ``grad`` slot
of leaf tensors created with ``requires_grad=True``; calling ``backward``
twice without resetting adds the two gradient fields together.

Only the operations needed by the encoder, the GNN layers, and the loss
are provided. Broadcasting is deliberately restricted to row-wise bias
addition; everything else requires exact shape agreement.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError

Array = np.ndarray

_GradFn = Callable[[Array], list[tuple["Tensor", Array]]]


class Tensor:
    """A dense float64 array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.data: Array = np.array(values, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: _GradFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar. Constants (floats, lists, ndarrays) are wrapped on the fly.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_coerce(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(_coerce(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: Array, parents: Sequence[Tensor], backward: _GradFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        # Constant subgraphs are pruned so non-participating parameters
        # receive exactly zero gradient.
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def parameter(values, rng: np.random.Generator | None = None) -> Tensor:
    """Wrap ``values`` as a trainable leaf tensor."""
    return Tensor(values, requires_grad=True)


def uniform_param(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    """Leaf tensor initialised uniformly in +-1/sqrt(fan_in)."""
    if fan_in < 1:
        raise ContractError(f"fan_in must be >= 1, got {fan_in}")
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


# ---------------------------------------------------------------------------
# Primitive operations.


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        def back(g):
            return [(a, g), (b, g)]
        return _result(ad + bd, (a, b), back)
    if ad.ndim == 2 and bd.ndim == 1 and bd.shape[0] == ad.shape[1]:
        # Row-wise bias addition, the only supported broadcast.
        def back(g):
            return [(a, g), (b, g.sum(axis=0))]
        return _result(ad + bd, (a, b), back)
    raise ContractError(f"add: incompatible shapes {ad.shape} and {bd.shape}")


def scale(a, factor: float) -> Tensor:
    a = _coerce(a)
    factor = float(factor)

    def back(g):
        return [(a, g * factor)]

    return _result(a.data * factor, (a,), back)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ContractError(f"mul: incompatible shapes {ad.shape} and {bd.shape}")

    def back(g):
        return [(a, g * bd), (b, g * ad)]

    return _result(ad * bd, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ContractError(f"matmul: only 1-D/2-D operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ContractError(f"matmul: inner dimensions disagree, {ad.shape} vs {bd.shape}")

    def back(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return [(a, g @ bd.T), (b, ad.T @ g)]
        if ad.ndim == 2 and bd.ndim == 1:
            return [(a, np.outer(g, bd)), (b, ad.T @ g)]
        if ad.ndim == 1 and bd.ndim == 2:
            return [(a, bd @ g), (b, np.outer(ad, g))]
        return [(a, g * bd), (b, g * ad)]

    return _result(ad @ bd, (a, b), back)


def transpose(a) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ContractError(f"transpose: expected 2-D tensor, got shape {a.data.shape}")

    def back(g):
        return [(a, g.T)]

    return _result(a.data.T.copy(), (a,), back)


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0  # gradient at exactly 0 is 0

    def back(g):
        return [(a, g * mask)]

    return _result(np.where(mask, a.data, 0.0), (a,), back)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _coerce(a)
    pos = a.data > 0

    def back(g):
        return [(a, g * np.where(pos, 1.0, slope))]

    return _result(np.where(pos, a.data, slope * a.data), (a,), back)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = _coerce(a)
    pos = a.data > 0
    neg_part = alpha * np.expm1(a.data)
    out = np.where(pos, a.data, neg_part)

    def back(g):
        return [(a, g * np.where(pos, 1.0, neg_part + alpha))]

    return _result(out, (a,), back)


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0):
        raise ContractError("log: input must be strictly positive")

    def back(g):
        return [(a, g / a.data)]

    return _result(np.log(a.data), (a,), back)


def clip_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); clipped entries get zero gradient."""
    a = _coerce(a)
    keep = a.data > floor

    def back(g):
        return [(a, g * keep)]

    return _result(np.maximum(a.data, floor), (a,), back)


def powf(a, exponent: float) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0):
        raise ContractError("powf: input must be strictly positive")
    out = a.data ** exponent

    def back(g):
        return [(a, g * exponent * a.data ** (exponent - 1.0))]

    return _result(out, (a,), back)


def tsum(a) -> Tensor:
    a = _coerce(a)

    def back(g):
        return [(a, np.full(a.data.shape, float(g)))]

    return _result(np.asarray(a.data.sum()), (a,), back)


def row_sum(a) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ContractError(f"row_sum: expected 2-D tensor, got shape {a.data.shape}")

    def back(g):
        return [(a, np.repeat(g[:, None], a.data.shape[1], axis=1))]

    return _result(a.data.sum(axis=1), (a,), back)


def flatten(a) -> Tensor:
    a = _coerce(a)
    shape = a.data.shape

    def back(g):
        return [(a, g.reshape(shape))]

    return _result(a.data.reshape(-1).copy(), (a,), back)


def slice_vec(a, start: int, stop: int) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 1:
        raise ContractError(f"slice_vec: expected 1-D tensor, got shape {a.data.shape}")

    def back(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return [(a, full)]

    return _result(a.data[start:stop].copy(), (a,), back)


def pairwise_sum(u, v) -> Tensor:
    """out[i, j] = u[i] + v[j] for two vectors of equal length."""
    u, v = _coerce(u), _coerce(v)
    if u.data.ndim != 1 or v.data.ndim != 1 or u.data.shape != v.data.shape:
        raise ContractError(f"pairwise_sum: expected equal-length vectors, got {u.data.shape} and {v.data.shape}")

    def back(g):
        return [(u, g.sum(axis=1)), (v, g.sum(axis=0))]

    return _result(u.data[:, None] + v.data[None, :], (u, v), back)


def scale_rows(a, u) -> Tensor:
    """out[i, j] = a[i, j] * u[i]."""
    a, u = _coerce(a), _coerce(u)
    if a.data.ndim != 2 or u.data.shape != (a.data.shape[0],):
        raise ContractError(f"scale_rows: incompatible shapes {a.data.shape} and {u.data.shape}")

    def back(g):
        return [(a, g * u.data[:, None]), (u, (g * a.data).sum(axis=1))]

    return _result(a.data * u.data[:, None], (a, u), back)


def scale_cols(a, v) -> Tensor:
    """out[i, j] = a[i, j] * v[j]."""
    a, v = _coerce(a), _coerce(v)
    if a.data.ndim != 2 or v.data.shape != (a.data.shape[1],):
        raise ContractError(f"scale_cols: incompatible shapes {a.data.shape} and {v.data.shape}")

    def back(g):
        return [(a, g * v.data[None, :]), (v, (g * a.data).sum(axis=0))]

    return _result(a.data * v.data[None, :], (a, v), back)


def concat_cols(parts: Sequence) -> Tensor:
    tensors = [_coerce(p) for p in parts]
    if not tensors:
        raise ContractError("concat_cols: need at least one tensor")
    rows = tensors[0].data.shape[0]
    for t in tensors:
        if t.data.ndim != 2 or t.data.shape[0] != rows:
            raise ContractError("concat_cols: all parts must be 2-D with equal row counts")
    widths = [t.data.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def back(g):
        return [(t, g[:, offsets[i]:offsets[i + 1]]) for i, t in enumerate(tensors)]

    return _result(np.concatenate([t.data for t in tensors], axis=1), tensors, back)


def softmax(a) -> Tensor:
    """Softmax over the last axis of a vector or over each row of a matrix."""
    a = _coerce(a)
    if a.data.ndim not in (1, 2):
        raise ContractError(f"softmax: expected 1-D or 2-D input, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return [(a, (g - dot) * out)]

    return _result(out, (a,), back)


def masked_softmax(a, mask: Array) -> Tensor:
    """Row softmax restricted to ``mask``; masked positions are exactly zero.

    The row maximum is taken over unmasked entries only, so values at
    masked positions never influence the result, not even at the level
    of floating-point rounding.
    """
    a = _coerce(a)
    mask = np.asarray(mask, dtype=bool)
    if a.data.ndim != 2 or mask.shape != a.data.shape:
        raise ContractError(f"masked_softmax: mask shape {mask.shape} does not match input {a.data.shape}")
    if not mask.any(axis=1).all():
        raise ContractError("masked_softmax: every row needs at least one unmasked entry")
    neg_inf = np.float64(-np.inf)
    masked_vals = np.where(mask, a.data, neg_inf)
    shifted = masked_vals - masked_vals.max(axis=1, keepdims=True)
    e = np.exp(shifted)  # exp(-inf) == 0 at masked positions
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return [(a, (g - dot) * out)]

    return _result(out, (a,), back)


def layer_norm(a, gain, shift, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean and unit variance, then affine-map."""
    a, gain, shift = _coerce(a), _coerce(gain), _coerce(shift)
    if a.data.ndim != 2:
        raise ContractError(f"layer_norm: expected 2-D input, got shape {a.data.shape}")
    width = a.data.shape[1]
    if gain.data.shape != (width,) or shift.data.shape != (width,):
        raise ContractError("layer_norm: gain/shift must match the row width")
    mean = a.data.mean(axis=1, keepdims=True)
    var = ((a.data - mean) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mean) * inv
    out = xhat * gain.data + shift.data

    def back(g):
        h = g * gain.data
        dx = inv * (h - h.mean(axis=1, keepdims=True) - xhat * (h * xhat).mean(axis=1, keepdims=True))
        return [(a, dx), (gain, (g * xhat).sum(axis=0)), (shift, g.sum(axis=0))]

    return _result(out, (a, gain, shift), back)


def l1_norm(a) -> Tensor:
    """Elementwise L1 norm; the subgradient at 0 is taken to be 0."""
    a = _coerce(a)

    def back(g):
        return [(a, float(g) * np.sign(a.data))]

    return _result(np.asarray(np.abs(a.data).sum()), (a,), back)


def l2_norm(a) -> Tensor:
    """Frobenius norm; the subgradient at the origin is taken to be 0."""
    a = _coerce(a)
    nrm = float(np.sqrt((a.data ** 2).sum()))

    def back(g):
        if nrm == 0.0:
            return [(a, np.zeros_like(a.data))]
        return [(a, float(g) * a.data / nrm)]

    return _result(np.asarray(nrm), (a,), back)


# ---------------------------------------------------------------------------
# Reverse pass.


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, Array]:
    """Accumulate d(loss)/d(leaf) into every participating leaf tensor.

    Returns a map from leaf parameter to its (accumulated) gradient.
    Raises if ``loss`` is not a scalar.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward: loss must be a Tensor")
    if loss.data.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    order = _topological_order(loss)
    flows: dict[int, Array] = {id(loss): np.asarray(1.0)}
    leaf_grads: dict[Tensor, Array] = {}
    for node in reversed(order):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise ContractError(
                        f"backward: gradient shape {pg.shape} does not match tensor {parent.data.shape}")
                buf = flows.get(id(parent))
                flows[id(parent)] = pg if buf is None else buf + pg
        elif node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaf_grads[node] = node.grad
    return leaf_grads
