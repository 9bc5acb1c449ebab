"""Graph attention / graph convolution layers and the classification head.

Layers operate on the whole supergraph at once; with a block-diagonal
adjacency, message passing stays inside each timestep's block, which is
exactly the limitation mending removes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .tensor import (Tensor, add, concat_cols, elu, flatten, leaky_relu, log,
                     masked_softmax, matmul, pairwise_sum, powf, relu, row_sum,
                     scale, scale_cols, scale_rows, slice_vec, softmax,
                     uniform_param)

_ACTIVATIONS = {
    "elu": elu,
    "relu": relu,
    "identity": lambda t: t,
}


def _activate(name: str, t: Tensor) -> Tensor:
    if name not in _ACTIVATIONS:
        raise ContractError(f"unknown activation: {name!r}")
    return _ACTIVATIONS[name](t)


@dataclass
class GATLayerParams:
    """Per-head weight matrices and attention vectors, plus the combine
    mode: hidden layers concatenate head outputs, the final layer
    averages them."""

    weights: list[Tensor]        # (d_in, d_out) per head
    attention: list[Tensor]      # (2 * d_out,) per head
    leaky_slope: float = 0.2
    combine: str = "concat"      # concat | average
    activation: str = "elu"

    @property
    def heads(self) -> int:
        return len(self.weights)

    @property
    def out_dim(self) -> int:
        d = self.weights[0].data.shape[1]
        return d * self.heads if self.combine == "concat" else d


def init_gat_layer(d_in: int, d_out: int, heads: int, rng: np.random.Generator,
                   combine: str = "concat", activation: str = "elu",
                   leaky_slope: float = 0.2) -> GATLayerParams:
    if combine not in ("concat", "average"):
        raise ContractError(f"combine must be concat or average, got {combine!r}")
    return GATLayerParams(
        weights=[uniform_param(rng, (d_in, d_out), d_in) for _ in range(heads)],
        attention=[uniform_param(rng, (2 * d_out,), 2 * d_out) for _ in range(heads)],
        leaky_slope=leaky_slope, combine=combine, activation=activation,
    )


def gat_layer(x: Tensor, adjacency: Tensor, params: GATLayerParams,
              weighted_logits: bool = False) -> Tensor:
    """One attention layer over the support of ``adjacency``.

    Neighborhoods are {j: A[i][j] > 0} plus a self-loop. Logits are
    LeakyReLU(a^T [W h_i || W h_j]); attention is a softmax restricted
    to each neighborhood. Edge weights influence the result only through
    the support, unless ``weighted_logits`` adds log(weight) to the
    logits (which also makes the layer differentiable in the adjacency).
    """
    m = x.data.shape[0]
    if adjacency.data.shape != (m, m):
        raise ContractError(f"gat_layer: adjacency {adjacency.data.shape} does not match features ({m}, ...)")
    eye = np.eye(m)
    mask = (adjacency.data > 0) | np.eye(m, dtype=bool)
    log_weights = None
    if weighted_logits:
        # Self-loops carry weight 1 (log 0); off-support entries are masked
        # out of the softmax, so their huge negative logs never contribute.
        log_weights = log(add(add(adjacency, Tensor(eye)), Tensor(np.full((m, m), 1e-30))))
    head_outputs = []
    d_out = params.weights[0].data.shape[1]
    for w, a_vec in zip(params.weights, params.attention):
        h = matmul(x, w)
        src = matmul(h, slice_vec(a_vec, 0, d_out))
        dst = matmul(h, slice_vec(a_vec, d_out, 2 * d_out))
        logits = leaky_relu(pairwise_sum(src, dst), params.leaky_slope)
        if log_weights is not None:
            logits = add(logits, log_weights)
        alpha = masked_softmax(logits, mask)
        head_outputs.append(matmul(alpha, h))
    if params.combine == "concat":
        return concat_cols([_activate(params.activation, o) for o in head_outputs])
    total = head_outputs[0]
    for o in head_outputs[1:]:
        total = add(total, o)
    return _activate(params.activation, scale(total, 1.0 / len(head_outputs)))


def gat_attention(x: Tensor, adjacency: Tensor, params: GATLayerParams, head: int = 0) -> np.ndarray:
    """Attention coefficients of one head (for inspection and tests)."""
    m = x.data.shape[0]
    mask = (adjacency.data > 0) | np.eye(m, dtype=bool)
    d_out = params.weights[head].data.shape[1]
    h = matmul(x, params.weights[head])
    src = matmul(h, slice_vec(params.attention[head], 0, d_out))
    dst = matmul(h, slice_vec(params.attention[head], d_out, 2 * d_out))
    logits = leaky_relu(pairwise_sum(src, dst), params.leaky_slope)
    return masked_softmax(logits, mask).data


def gcn_layer(x: Tensor, adjacency: Tensor, w: Tensor, activation: str = "elu") -> Tensor:
    """Symmetric-normalised propagation sigma(D^-1/2 (A + I) D^-1/2 X W).

    The added self-loop guarantees every degree is at least 1, so
    isolated nodes are well-defined. Fully differentiable in the
    adjacency values."""
    m = x.data.shape[0]
    if adjacency.data.shape != (m, m):
        raise ContractError(f"gcn_layer: adjacency {adjacency.data.shape} does not match features ({m}, ...)")
    with_loops = add(adjacency, Tensor(np.eye(m)))
    inv_sqrt_deg = powf(row_sum(with_loops), -0.5)
    propagated = scale_cols(scale_rows(with_loops, inv_sqrt_deg), inv_sqrt_deg)
    return _activate(activation, matmul(matmul(propagated, x), w))


class GATNetwork:
    """Stack of attention layers sharing one adjacency."""

    def __init__(self, layers: list[GATLayerParams], weighted_logits: bool = False):
        self.layers = layers
        self.weighted_logits = weighted_logits

    def forward(self, x: Tensor, adjacency: Tensor) -> Tensor:
        out = x
        for layer in self.layers:
            out = gat_layer(out, adjacency, layer, weighted_logits=self.weighted_logits)
        return out

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for li, layer in enumerate(self.layers):
            for h in range(layer.heads):
                out[f"gnn.layer{li}.head{h}.weight"] = layer.weights[h]
                out[f"gnn.layer{li}.head{h}.attention"] = layer.attention[h]
        return out


def build_gat_network(d_in: int, hidden: int, out_dim: int, heads: int,
                      rng: np.random.Generator, leaky_slope: float = 0.2,
                      weighted_logits: bool = False) -> GATNetwork:
    """Two attention layers: multi-head concat, then a single averaged head."""
    first = init_gat_layer(d_in, hidden, heads, rng, combine="concat",
                           activation="elu", leaky_slope=leaky_slope)
    second = init_gat_layer(hidden * heads, out_dim, 1, rng, combine="average",
                            activation="elu", leaky_slope=leaky_slope)
    return GATNetwork([first, second], weighted_logits=weighted_logits)


class GCNNetwork:
    def __init__(self, weights: list[Tensor], activation: str = "elu"):
        self.weights = weights
        self.activation = activation

    def forward(self, x: Tensor, adjacency: Tensor) -> Tensor:
        out = x
        for w in self.weights:
            out = gcn_layer(out, adjacency, w, activation=self.activation)
        return out

    @property
    def out_dim(self) -> int:
        return self.weights[-1].data.shape[1]

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"gnn.layer{i}.weight": w for i, w in enumerate(self.weights)}


def build_gcn_network(d_in: int, hidden: int, out_dim: int, rng: np.random.Generator) -> GCNNetwork:
    return GCNNetwork([
        uniform_param(rng, (d_in, hidden), d_in),
        uniform_param(rng, (hidden, out_dim), hidden),
    ])


@dataclass
class ReadoutParams:
    """Flatten-then-linear head over the fixed-size node representation."""

    w_g: Tensor  # (total_nodes * d_out, classes)
    b_g: Tensor  # (classes,)

    @property
    def class_count(self) -> int:
        return self.b_g.data.shape[0]

    def named_parameters(self) -> dict[str, Tensor]:
        return {"readout.w_g": self.w_g, "readout.b_g": self.b_g}


def init_readout(total_nodes: int, d_out: int, classes: int, rng: np.random.Generator) -> ReadoutParams:
    fan = total_nodes * d_out
    return ReadoutParams(w_g=uniform_param(rng, (fan, classes), fan),
                         b_g=uniform_param(rng, (classes,), fan))


def readout(z: Tensor, params: ReadoutParams) -> Tensor:
    """Row-major flatten, affine map, softmax. Returns class probabilities."""
    flat = flatten(z)
    if flat.data.shape[0] != params.w_g.data.shape[0]:
        raise ContractError(
            f"readout: flattened size {flat.data.shape[0]} does not match head {params.w_g.data.shape}")
    return softmax(add(matmul(flat, params.w_g), params.b_g))
