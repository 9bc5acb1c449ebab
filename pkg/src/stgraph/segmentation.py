"""Superpixel segmentation and per-frame graph extraction.

A frame is turned into a superpixel partition with SLIC, the partition
into a region adjacency matrix, and the regions into feature rows by
pooling per-pixel features (RGB, optionally a fixed filter bank) over
each segment.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

NEIGHBOR_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))  # 4-connectivity throughout


class Frame:
    """An RGB image with float values in [0, 1], at least 2x2 pixels."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ContractError(f"frame must be HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 2 or arr.shape[1] < 2:
            raise ContractError(f"frame must be at least 2x2 pixels, got {arr.shape[0]}x{arr.shape[1]}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ContractError("frame values must lie in [0, 1]")
        self.pixels = arr

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class Segmentation:
    """Per-pixel segment ids in [0, segment_count), each segment 4-connected."""

    labels: np.ndarray
    segment_count: int


@dataclass
class FeatureExtractor:
    """Node feature recipe: per-segment pooled color, optionally enriched
    with responses of a fixed 3x3 filter bank applied to the luminance."""

    kind: str = "mean-color"  # mean-color | mean-color+filter-bank | external-file
    filters: np.ndarray | None = None  # (count, 3, 3) when a bank is used
    pool: str = "mean"  # mean | sum

    def __post_init__(self):
        if self.kind not in ("mean-color", "mean-color+filter-bank", "external-file"):
            raise ContractError(f"unknown feature extractor kind: {self.kind}")
        if self.pool not in ("mean", "sum"):
            raise ContractError(f"unknown pooling mode: {self.pool}")
        if self.kind != "mean-color":
            if self.filters is None:
                raise ContractError(f"{self.kind} extractor requires a filter bank")
            f = np.asarray(self.filters, dtype=np.float64)
            if f.ndim != 3 or f.shape[1:] != (3, 3):
                raise ContractError(f"filter bank must be (count, 3, 3), got {f.shape}")
            self.filters = f

    @property
    def dim(self) -> int:
        if self.kind == "mean-color":
            return 3
        return 3 + self.filters.shape[0]


def make_filter_bank(count: int = 16, seed: int = 0) -> np.ndarray:
    """A fixed, seeded random 3x3 filter bank (zero-mean, unit L2 per filter)."""
    rng = np.random.default_rng(seed)
    bank = rng.standard_normal((count, 3, 3))
    bank -= bank.mean(axis=(1, 2), keepdims=True)
    bank /= np.sqrt((bank ** 2).sum(axis=(1, 2), keepdims=True))
    return bank


# ---------------------------------------------------------------------------
# SLIC


def slic(frame: Frame, n_segments: int, compactness: float = 10.0, max_iters: int = 10) -> Segmentation:
    """Simple Linear Iterative Clustering over (color, x, y).

    K-means-style clustering with the joint distance
    D = sqrt(d_color^2 + (compactness * d_xy / S)^2), S = sqrt(H*W/n),
    followed by a connectivity pass that merges orphan fragments into
    their dominant adjacent segment. Deterministic: centers start on a
    regular grid, perturbed to the lowest-gradient pixel in a 3x3
    neighborhood. The result has at most ``n_segments`` segments.
    """
    h, w = frame.height, frame.width
    if not 1 <= n_segments <= h * w:
        raise ContractError(f"n_segments must be in [1, {h * w}], got {n_segments}")
    if compactness <= 0:
        raise ContractError(f"compactness must be positive, got {compactness}")
    img = frame.pixels
    step = np.sqrt(h * w / n_segments)

    centers = _initial_centers(img, h, w, step, n_segments)
    spatial_weight = compactness / step

    ys, xs = np.mgrid[0:h, 0:w]
    labels = np.zeros((h, w), dtype=np.int64)
    window = int(np.ceil(2 * step))
    for _ in range(max_iters):
        dist = np.full((h, w), np.inf)
        for ci, (cy, cx, color) in enumerate(centers):
            y0, y1 = max(0, int(cy) - window), min(h, int(cy) + window + 1)
            x0, x1 = max(0, int(cx) - window), min(w, int(cx) + window + 1)
            patch = img[y0:y1, x0:x1]
            d_color = ((patch - color) ** 2).sum(axis=2)
            d_xy = (ys[y0:y1, x0:x1] - cy) ** 2 + (xs[y0:y1, x0:x1] - cx) ** 2
            d = d_color + (spatial_weight ** 2) * d_xy
            local = dist[y0:y1, x0:x1]
            better = d < local
            local[better] = d[better]
            labels[y0:y1, x0:x1][better] = ci
        new_centers = []
        moved = 0.0
        for ci, old in enumerate(centers):
            sel = labels == ci
            if not sel.any():
                new_centers.append(old)
                continue
            cy = ys[sel].mean()
            cx = xs[sel].mean()
            color = img[sel].mean(axis=0)
            moved += abs(cy - old[0]) + abs(cx - old[1])
            new_centers.append((cy, cx, color))
        centers = new_centers
        if moved == 0.0:
            break

    labels = _enforce_connectivity(labels, len(centers))
    return Segmentation(labels=labels, segment_count=int(labels.max()) + 1)


def _initial_centers(img, h, w, step, n_segments):
    ny = max(1, int(round(h / step)))
    nx = max(1, int(round(w / step)))
    grad = _gradient_magnitude(img)
    centers = []
    for gy in range(ny):
        for gx in range(nx):
            cy = int(round((gy + 0.5) * h / ny))
            cx = int(round((gx + 0.5) * w / nx))
            cy = min(max(cy, 0), h - 1)
            cx = min(max(cx, 0), w - 1)
            cy, cx = _lowest_gradient_neighbor(grad, cy, cx, h, w)
            centers.append((float(cy), float(cx), img[cy, cx].copy()))
    # The grid may overshoot the requested count; keep the first n in scan order.
    return centers[:n_segments]


def _gradient_magnitude(img):
    pad = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gy = pad[2:, 1:-1] - pad[:-2, 1:-1]
    gx = pad[1:-1, 2:] - pad[1:-1, :-2]
    return (gy ** 2).sum(axis=2) + (gx ** 2).sum(axis=2)


def _lowest_gradient_neighbor(grad, cy, cx, h, w):
    best = (grad[cy, cx], cy, cx)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            y, x = cy + dy, cx + dx
            if 0 <= y < h and 0 <= x < w and grad[y, x] < best[0]:
                best = (grad[y, x], y, x)
    return best[1], best[2]


def _enforce_connectivity(labels, n_labels):
    """Keep the largest fragment of every label; merge every other fragment
    into the adjacent segment it shares the longest border with."""
    h, w = labels.shape
    comp, count = _component_map(labels)
    # Largest component per label, ties broken by smallest component id.
    keep = {}
    sizes = np.bincount(comp.ravel(), minlength=count)
    for cid in range(count):
        lab = labels[comp == cid].flat[0]
        if lab not in keep or sizes[cid] > sizes[keep[lab]]:
            keep[lab] = cid
    kept_components = set(keep.values())

    labels = labels.copy()
    finalized = np.isin(comp, sorted(kept_components))
    pending = [cid for cid in range(count) if cid not in kept_components]
    while pending:
        deferred = []
        for cid in pending:
            sel = comp == cid
            border_counts: dict[int, int] = {}
            ys, xs = np.nonzero(sel)
            for y, x in zip(ys, xs):
                for dy, dx in NEIGHBOR_OFFSETS:
                    ny, nx = y + dy, x + dx
                    # Only finalized pixels count, so the fragment stays attached
                    # to the surviving body of whichever segment absorbs it.
                    if 0 <= ny < h and 0 <= nx < w and finalized[ny, nx]:
                        neighbor = int(labels[ny, nx])
                        border_counts[neighbor] = border_counts.get(neighbor, 0) + 1
            if not border_counts:
                deferred.append(cid)
                continue
            dominant = max(border_counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]
            labels[sel] = dominant
            finalized[sel] = True
        if len(deferred) == len(pending):
            break  # isolated ring of fragments; cannot happen on a grid image
        pending = deferred
    return _relabel_consecutive(labels)


def _component_map(labels):
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    count = 0
    for sy in range(h):
        for sx in range(w):
            if comp[sy, sx] >= 0:
                continue
            lab = labels[sy, sx]
            queue = deque([(sy, sx)])
            comp[sy, sx] = count
            while queue:
                y, x = queue.popleft()
                for dy, dx in NEIGHBOR_OFFSETS:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and comp[ny, nx] < 0 and labels[ny, nx] == lab:
                        comp[ny, nx] = count
                        queue.append((ny, nx))
            count += 1
    return comp, count


def _relabel_consecutive(labels):
    flat = labels.ravel()
    remap = np.empty(int(flat.max()) + 1, dtype=np.int64)
    seen = np.zeros(int(flat.max()) + 1, dtype=bool)
    next_id = 0
    for lab in flat:  # first-appearance order keeps the relabeling deterministic
        if not seen[lab]:
            seen[lab] = True
            remap[lab] = next_id
            next_id += 1
    return remap[flat].reshape(labels.shape)


# ---------------------------------------------------------------------------
# Region adjacency and node features


def region_adjacency(seg: Segmentation) -> np.ndarray:
    """Symmetric binary matrix; segments are adjacent when they share a
    4-neighbor pixel border. Zero diagonal."""
    labels = seg.labels
    n = seg.segment_count
    adj = np.zeros((n, n), dtype=np.float64)
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        a = a.ravel()
        b = b.ravel()
        differ = a != b
        adj[a[differ], b[differ]] = 1.0
        adj[b[differ], a[differ]] = 1.0
    np.fill_diagonal(adj, 0.0)
    return adj


def node_features(frame: Frame, seg: Segmentation, fx: FeatureExtractor, expected_dim: int | None = None) -> np.ndarray:
    """Pool per-pixel features over each segment (row i = segment i)."""
    if seg.labels.shape != (frame.height, frame.width):
        raise ContractError("segmentation does not match frame dimensions")
    if expected_dim is not None and fx.dim != expected_dim:
        raise ContractError(f"feature extractor dimension {fx.dim} does not match configured {expected_dim}")
    maps = [frame.pixels[:, :, c] for c in range(3)]
    if fx.kind != "mean-color":
        luma = frame.pixels.mean(axis=2)
        for kernel in fx.filters:
            maps.append(_convolve3x3(luma, kernel))
    labels = seg.labels.ravel()
    n = seg.segment_count
    counts = np.bincount(labels, minlength=n).astype(np.float64)
    out = np.empty((n, len(maps)), dtype=np.float64)
    for j, m in enumerate(maps):
        sums = np.bincount(labels, weights=m.ravel(), minlength=n)
        out[:, j] = sums / counts if fx.pool == "mean" else sums
    return out


def _convolve3x3(image, kernel):
    pad = np.pad(image, 1, mode="edge")  # replicate-border policy
    out = np.zeros_like(image)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * pad[dy:dy + image.shape[0], dx:dx + image.shape[1]]
    return out


def segment_centroids(seg: Segmentation) -> np.ndarray:
    """Per-segment (row, col) centroid, shape (n, 2)."""
    labels = seg.labels
    n = seg.segment_count
    ys, xs = np.mgrid[0:labels.shape[0], 0:labels.shape[1]]
    counts = np.bincount(labels.ravel(), minlength=n).astype(np.float64)
    cy = np.bincount(labels.ravel(), weights=ys.ravel(), minlength=n) / counts
    cx = np.bincount(labels.ravel(), weights=xs.ravel(), minlength=n) / counts
    return np.stack([cy, cx], axis=1)
