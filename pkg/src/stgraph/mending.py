"""Temporal edge mending: turn a block-diagonal supergraph adjacency
into a better-connected one.

The learnable path runs the adjacency rows (augmented with projected
node features) through a self-attention encoder and reinforces the
original spatial edges with a rectified symmetric skip connection. The
non-learnable baselines add fixed aligned edges or random cross-step
edges. Every path returns a symmetric, nonnegative matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError
from .supergraph import SuperGraph, within_block_mask
from .tensor import (Tensor, add, concat_cols, layer_norm, matmul, mul, relu,
                     scale, softmax, transpose, uniform_param)


@dataclass
class MendedAdjacency:
    """Output of a mending pass.

    ``final`` is the symmetric nonnegative matrix handed to the GNN.
    For the encoder path, ``augmented`` is the feature-augmented
    adjacency before the encoder and ``encoder_output`` is the raw
    (generally asymmetric) encoder output before symmetrisation, kept
    separate because the sparsity penalty reads it.
    """

    final: Tensor
    augmented: Tensor | None = None
    encoder_output: Tensor | None = None

    @property
    def adjacency(self) -> np.ndarray:
        return self.final.data


@dataclass
class EncoderLayerParams:
    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_1: Tensor
    b_1: Tensor
    w_2: Tensor
    b_2: Tensor
    ln1_gain: Tensor
    ln1_shift: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor


@dataclass
class EncoderParams:
    """Projection + encoder stack sized for a fixed token count (nT)."""

    w_p: Tensor
    layers: list[EncoderLayerParams]
    heads: int
    tokens: int
    feature_dim: int

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"encoder.w_p": self.w_p}
        for li, layer in enumerate(self.layers):
            for h in range(self.heads):
                out[f"encoder.layer{li}.head{h}.w_q"] = layer.w_q[h]
                out[f"encoder.layer{li}.head{h}.w_k"] = layer.w_k[h]
                out[f"encoder.layer{li}.head{h}.w_v"] = layer.w_v[h]
            out[f"encoder.layer{li}.w_1"] = layer.w_1
            out[f"encoder.layer{li}.b_1"] = layer.b_1
            out[f"encoder.layer{li}.w_2"] = layer.w_2
            out[f"encoder.layer{li}.b_2"] = layer.b_2
            out[f"encoder.layer{li}.ln1_gain"] = layer.ln1_gain
            out[f"encoder.layer{li}.ln1_shift"] = layer.ln1_shift
            out[f"encoder.layer{li}.ln2_gain"] = layer.ln2_gain
            out[f"encoder.layer{li}.ln2_shift"] = layer.ln2_shift
        return out


def init_encoder_params(feature_dim: int, tokens: int, heads: int = 1, layers: int = 1,
                        ffn_multiplier: int = 2, rng: np.random.Generator | None = None) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, layer norm gain 1 shift 0."""
    if heads < 1 or tokens % heads != 0:
        raise ContractError(f"token count {tokens} must be divisible by head count {heads}")
    if layers < 1:
        raise ContractError(f"need at least one encoder layer, got {layers}")
    rng = rng or np.random.default_rng(0)
    head_dim = tokens // heads
    d_ff = ffn_multiplier * tokens
    layer_list = []
    for _ in range(layers):
        layer_list.append(EncoderLayerParams(
            w_q=[uniform_param(rng, (tokens, head_dim), tokens) for _ in range(heads)],
            w_k=[uniform_param(rng, (tokens, head_dim), tokens) for _ in range(heads)],
            w_v=[uniform_param(rng, (tokens, head_dim), tokens) for _ in range(heads)],
            w_1=uniform_param(rng, (tokens, d_ff), tokens),
            b_1=uniform_param(rng, (d_ff,), tokens),
            w_2=uniform_param(rng, (d_ff, tokens), d_ff),
            b_2=uniform_param(rng, (tokens,), d_ff),
            ln1_gain=Tensor(np.ones(tokens), requires_grad=True),
            ln1_shift=Tensor(np.zeros(tokens), requires_grad=True),
            ln2_gain=Tensor(np.ones(tokens), requires_grad=True),
            ln2_shift=Tensor(np.zeros(tokens), requires_grad=True),
        ))
    return EncoderParams(
        w_p=uniform_param(rng, (feature_dim, tokens), feature_dim),
        layers=layer_list, heads=heads, tokens=tokens, feature_dim=feature_dim,
    )


def _check_stage(t: Tensor, stage: str) -> None:
    if not np.isfinite(t.data).all():
        raise NumericError(f"encoder produced non-finite values at stage: {stage}")


def encode(sg: SuperGraph, params: EncoderParams, temporal_only: bool = False) -> MendedAdjacency:
    """Learnable mending pass.

    Pipeline: augment the adjacency with projected features, run the
    rows as tokens through the encoder stack (multi-head self-attention
    with 1/sqrt(head_dim) scaling, residual + layer norm, position-wise
    ReLU feed-forward, residual + layer norm), then symmetrise the
    output and rectify it on top of the original adjacency so spatial
    edges are reinforced. With ``temporal_only`` the within-block part
    of the encoder output is zeroed before the skip connection, so
    spatial structure comes solely from the original adjacency.
    """
    n_tokens = sg.total_nodes
    if params.tokens != n_tokens or params.feature_dim != sg.feature_dim:
        raise ContractError(
            f"encoder sized for (tokens={params.tokens}, d={params.feature_dim}) "
            f"but supergraph has (tokens={n_tokens}, d={sg.feature_dim})")
    head_dim = params.tokens // params.heads
    inv_scale = 1.0 / math.sqrt(head_dim)

    base = Tensor(sg.block_adjacency)
    feats = Tensor(sg.features)
    augmented = add(base, matmul(feats, params.w_p))
    _check_stage(augmented, "feature projection")

    tokens = augmented
    for layer in params.layers:
        heads_out = []
        for wq, wk, wv in zip(layer.w_q, layer.w_k, layer.w_v):
            q = matmul(tokens, wq)
            k = matmul(tokens, wk)
            v = matmul(tokens, wv)
            scores = scale(matmul(q, transpose(k)), inv_scale)
            heads_out.append(matmul(softmax(scores), v))
        attended = heads_out[0] if len(heads_out) == 1 else concat_cols(heads_out)
        _check_stage(attended, "self-attention")
        tokens = layer_norm(add(tokens, attended), layer.ln1_gain, layer.ln1_shift)
        hidden = relu(add(matmul(tokens, layer.w_1), layer.b_1))
        ff = add(matmul(hidden, layer.w_2), layer.b_2)
        _check_stage(ff, "feed-forward")
        tokens = layer_norm(add(tokens, ff), layer.ln2_gain, layer.ln2_shift)

    encoder_output = tokens
    if temporal_only:
        cross = ~within_block_mask(sg.timesteps, sg.nodes_per_step)
        encoder_output = mul(encoder_output, Tensor(cross.astype(np.float64)))
    symmetric = scale(add(encoder_output, transpose(encoder_output)), 0.5)
    final = relu(add(base, symmetric))
    _check_stage(final, "adjacency reinforcement")
    return MendedAdjacency(final=final, augmented=augmented, encoder_output=encoder_output)


def mask_to_temporal(mended: MendedAdjacency, sg: SuperGraph) -> MendedAdjacency:
    """Zero the within-block part of an encoder output and rebuild the
    final matrix, leaving spatial structure to the original adjacency.
    Masking an already-masked output is a no-op."""
    if mended.encoder_output is None:
        raise ContractError("mask_to_temporal: mending has no encoder output to mask")
    if mended.encoder_output.data.shape != (sg.total_nodes, sg.total_nodes):
        raise ContractError("mask_to_temporal: encoder output does not match supergraph size")
    cross = ~within_block_mask(sg.timesteps, sg.nodes_per_step)
    masked = mul(mended.encoder_output, Tensor(cross.astype(np.float64)))
    symmetric = scale(add(masked, transpose(masked)), 0.5)
    final = relu(add(Tensor(sg.block_adjacency), symmetric))
    return MendedAdjacency(final=final, augmented=mended.augmented, encoder_output=masked)


def identity_mending(sg: SuperGraph) -> MendedAdjacency:
    """No mending: the block-diagonal adjacency itself."""
    return MendedAdjacency(final=Tensor(sg.block_adjacency.copy()))


def fixed_temporal(sg: SuperGraph, k: int = 1) -> MendedAdjacency:
    """Unit edges between nodes at the same spatial index in adjacent
    timesteps; for k > 1 each node additionally connects to its k nearest
    same-step-indexed neighbours by superpixel centroid distance."""
    if k < 1:
        raise ContractError(f"fixed_temporal: k must be >= 1, got {k}")
    n, t = sg.nodes_per_step, sg.timesteps
    adj = sg.block_adjacency.copy()
    for step in range(t - 1):
        lo, hi = step * n, (step + 1) * n
        for i in range(n):
            adj[lo + i, hi + i] = 1.0
            adj[hi + i, lo + i] = 1.0
        if k > 1:
            if sg.positions is None:
                raise ContractError("fixed_temporal: k > 1 requires superpixel centroids")
            pos_next = sg.positions[hi:hi + n]
            valid = ~np.isnan(pos_next).any(axis=1)
            for i in range(n):
                p = sg.positions[lo + i]
                if np.isnan(p).any():
                    continue
                dist = np.sqrt(((pos_next - p) ** 2).sum(axis=1))
                dist[~valid] = np.inf
                dist[i] = np.inf  # same-index edge already added
                order = np.argsort(dist, kind="stable")[:k - 1]
                for j in order:
                    if np.isfinite(dist[j]):
                        adj[lo + i, hi + j] = 1.0
                        adj[hi + j, lo + i] = 1.0
    return MendedAdjacency(final=Tensor(adj))


def random_mending(sg: SuperGraph, mode: str, edges_per_node: int = 1, seed: int = 0) -> MendedAdjacency:
    """For each node in block t, add edges to uniformly sampled nodes in
    block t+1; weights are Uniform(0, 1] in weighted mode and 1 in binary
    mode. The result is symmetrised with elementwise max."""
    if mode not in ("weighted", "binary"):
        raise ContractError(f"random_mending: mode must be weighted or binary, got {mode!r}")
    if edges_per_node < 1:
        raise ContractError(f"random_mending: edges_per_node must be >= 1, got {edges_per_node}")
    n, t = sg.nodes_per_step, sg.timesteps
    if edges_per_node > n:
        raise ContractError(f"random_mending: edges_per_node {edges_per_node} exceeds block size {n}")
    rng = np.random.default_rng(seed)
    extra = np.zeros_like(sg.block_adjacency)
    for step in range(t - 1):
        lo, hi = step * n, (step + 1) * n
        for i in range(n):
            targets = rng.choice(n, size=edges_per_node, replace=False)
            for j in targets:
                weight = 1.0 - rng.random() if mode == "weighted" else 1.0  # (0, 1]
                extra[lo + i, hi + j] = weight
    extra = np.maximum(extra, extra.T)
    return MendedAdjacency(final=Tensor(np.maximum(sg.block_adjacency, extra)))
