"""Per-timestep graphs and their block-adjacency supergraph.

Each frame yields a graph (adjacency, features, optional centroids); a
sequence of frames is normalised to a shared node count and stacked
into one block-diagonal adjacency with row-stacked features. Before any
mending the blocks are disconnected, so the supergraph Laplacian has at
least one zero eigenvalue per timestep.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

_SYMMETRY_TOL = 1e-12


def _check_adjacency(adj: np.ndarray, name: str = "adjacency") -> None:
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ContractError(f"{name} must be square, got shape {adj.shape}")
    scale = max(1.0, float(np.abs(adj).max())) if adj.size else 1.0
    if np.abs(adj - adj.T).max(initial=0.0) > _SYMMETRY_TOL * scale:
        raise ContractError(f"{name} must be symmetric")
    if adj.size and adj.min() < 0:
        raise ContractError(f"{name} must be nonnegative")
    if np.abs(np.diag(adj)).max(initial=0.0) != 0.0:
        raise ContractError(f"{name} must have a zero diagonal")


@dataclass
class TimestepGraph:
    """One frame's graph: square adjacency, per-node features, optional
    (row, col) centroids, and a padding mask for nodes added to reach a
    shared node budget."""

    adjacency: np.ndarray
    features: np.ndarray
    positions: np.ndarray | None = None
    padded: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        _check_adjacency(self.adjacency)
        if self.features.ndim != 2 or self.features.shape[0] != self.adjacency.shape[0]:
            raise ContractError(
                f"features must be (n, d) with n={self.adjacency.shape[0]}, got {self.features.shape}")
        if self.positions is not None:
            self.positions = np.asarray(self.positions, dtype=np.float64)
            if self.positions.shape != (self.node_count, 2):
                raise ContractError(f"positions must be (n, 2), got {self.positions.shape}")
        if self.padded is None:
            self.padded = np.zeros(self.node_count, dtype=bool)
        else:
            self.padded = np.asarray(self.padded, dtype=bool)

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class SuperGraph:
    """Block-diagonal stack of T graphs with n nodes each."""

    timesteps: int
    nodes_per_step: int
    block_adjacency: np.ndarray
    features: np.ndarray
    padded: np.ndarray
    positions: np.ndarray | None = None

    @property
    def total_nodes(self) -> int:
        return self.timesteps * self.nodes_per_step

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def block(self, t: int) -> TimestepGraph:
        """Slice out timestep t."""
        n = self.nodes_per_step
        lo, hi = t * n, (t + 1) * n
        pos = None if self.positions is None else self.positions[lo:hi]
        return TimestepGraph(
            adjacency=self.block_adjacency[lo:hi, lo:hi].copy(),
            features=self.features[lo:hi].copy(),
            positions=pos,
            padded=self.padded[lo:hi].copy(),
        )


def normalize_node_count(g: TimestepGraph, n: int) -> TimestepGraph:
    """Bring a graph to exactly n nodes.

    Too few nodes: append isolated nodes with zero feature rows (zero
    padding). Too many: repeatedly merge the adjacent pair with the
    smallest combined degree, summing adjacency rows clipped to binary
    and averaging features (node dilation). A fully disconnected graph
    falls back to merging the two lowest-degree nodes.
    """
    if n < 1:
        raise ContractError(f"target node count must be >= 1, got {n}")
    if g.node_count == n:
        return g
    if g.node_count < n:
        return _pad(g, n)
    adj = g.adjacency.copy()
    feats = g.features.copy()
    pos = None if g.positions is None else g.positions.copy()
    padded = g.padded.copy()
    while adj.shape[0] > n:
        i, j = _cheapest_pair(adj)
        adj, feats, pos, padded = _merge_pair(adj, feats, pos, padded, i, j)
    return TimestepGraph(adjacency=adj, features=feats, positions=pos, padded=padded)


def _pad(g: TimestepGraph, n: int) -> TimestepGraph:
    extra = n - g.node_count
    adj = np.zeros((n, n), dtype=np.float64)
    adj[:g.node_count, :g.node_count] = g.adjacency
    feats = np.zeros((n, g.feature_dim), dtype=np.float64)
    feats[:g.node_count] = g.features
    pos = None
    if g.positions is not None:
        pos = np.full((n, 2), np.nan)
        pos[:g.node_count] = g.positions
    padded = np.concatenate([g.padded, np.ones(extra, dtype=bool)])
    return TimestepGraph(adjacency=adj, features=feats, positions=pos, padded=padded)


def _cheapest_pair(adj: np.ndarray) -> tuple[int, int]:
    deg = adj.sum(axis=1)
    rows, cols = np.nonzero(np.triu(adj, k=1))
    if rows.size == 0:
        order = np.argsort(deg, kind="stable")
        return int(min(order[0], order[1])), int(max(order[0], order[1]))
    combined = deg[rows] + deg[cols]
    # Ties resolved lexicographically on (i, j) for determinism.
    best = np.lexsort((cols, rows, combined))[0]
    return int(rows[best]), int(cols[best])


def _merge_pair(adj, feats, pos, padded, i, j):
    keep = [k for k in range(adj.shape[0]) if k != j]
    merged_row = np.minimum(adj[i] + adj[j], 1.0)
    adj = adj.copy()
    adj[i] = merged_row
    adj[:, i] = merged_row
    adj[i, i] = 0.0
    adj = adj[np.ix_(keep, keep)]
    feats = feats.copy()
    feats[i] = 0.5 * (feats[i] + feats[j])
    feats = feats[keep]
    if pos is not None:
        pos = pos.copy()
        pos[i] = 0.5 * (pos[i] + pos[j])
        pos = pos[keep]
    padded = padded.copy()
    padded[i] = padded[i] and padded[j]
    padded = padded[keep]
    return adj, feats, pos, padded


def assemble(graphs: list[TimestepGraph], n: int) -> SuperGraph:
    """Normalise every graph to n nodes and concatenate adjacencies
    diagonally; features are row-stacked in timestep order."""
    if not graphs:
        raise ContractError("assemble: need at least one timestep graph")
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise ContractError(f"assemble: feature dimensions differ across timesteps: {sorted(dims)}")
    norm = [normalize_node_count(g, n) for g in graphs]
    t = len(norm)
    block = np.zeros((t * n, t * n), dtype=np.float64)
    for k, g in enumerate(norm):
        block[k * n:(k + 1) * n, k * n:(k + 1) * n] = g.adjacency
    feats = np.concatenate([g.features for g in norm], axis=0)
    padded = np.concatenate([g.padded for g in norm])
    if all(g.positions is not None for g in norm):
        positions = np.concatenate([g.positions for g in norm], axis=0)
    else:
        positions = None
    return SuperGraph(timesteps=t, nodes_per_step=n, block_adjacency=block,
                      features=feats, padded=padded, positions=positions)


def laplacian(weights: np.ndarray) -> np.ndarray:
    """Graph Laplacian D - W for a symmetric nonnegative weight matrix."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ContractError(f"laplacian: matrix must be square, got {w.shape}")
    scale = max(1.0, float(np.abs(w).max())) if w.size else 1.0
    if np.abs(w - w.T).max(initial=0.0) > _SYMMETRY_TOL * scale:
        raise ContractError("laplacian: matrix must be symmetric")
    if w.size and w.min() < 0:
        raise ContractError("laplacian: matrix must be nonnegative")
    return np.diag(w.sum(axis=1)) - w


def within_block_mask(timesteps: int, nodes_per_step: int) -> np.ndarray:
    """Boolean (nT, nT) mask that is True inside the diagonal blocks."""
    block = np.arange(timesteps * nodes_per_step) // nodes_per_step
    return block[:, None] == block[None, :]
