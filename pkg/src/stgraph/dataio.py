"""Frame ingestion, synthetic dataset generation, and serialization.

Frames are binary PPM (P6, the canonical format here) or 8-bit RGB
non-interlaced PNG. Manifests are a line-oriented text format with a
versioned header. Checkpoints are a binary container with the magic
string "STBAM1", a key=value config echo, and named float64
little-endian tensors; every format round-trips bitwise.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError
from .segmentation import Frame

MANIFEST_MAGIC = "stbam-manifest 1"
CHECKPOINT_MAGIC = b"STBAM1"


# ---------------------------------------------------------------------------
# PPM (P6)


def write_ppm(path, pixels: np.ndarray) -> None:
    """Write an HxWx3 float [0,1] array as binary PPM with maxval 255."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"write_ppm: expected HxWx3 array, got {arr.shape}")
    data = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P6"):
        raise DataError(f"{path}: not a binary PPM (P6) file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise DataError(f"{path}: malformed PPM header")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 PPM supported, got {maxval}")
    expected = w * h * 3
    raw = blob[pos:pos + expected]
    if len(raw) != expected:
        raise DataError(f"{path}: truncated PPM pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# PNG (8-bit RGB, non-interlaced)


def read_png(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != b"\x89PNG\r\n\x1a\n":
        raise DataError(f"{path}: not a PNG file")
    pos = 8
    width = height = None
    idat = b""
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise DataError(f"{path}: truncated PNG chunk header")
        length, ctype = struct.unpack(">I4s", blob[pos:pos + 8])
        body = blob[pos + 8:pos + 8 + length]
        if len(body) != length:
            raise DataError(f"{path}: truncated PNG chunk body")
        pos += 12 + length  # header + body + crc
        if ctype == b"IHDR":
            width, height, depth, color, _, _, interlace = struct.unpack(">IIBBBBB", body)
            if depth != 8 or color != 2:
                raise DataError(f"{path}: only 8-bit RGB PNG supported (depth={depth}, color type={color})")
            if interlace != 0:
                raise DataError(f"{path}: interlaced PNG not supported")
        elif ctype == b"IDAT":
            idat += body
        elif ctype == b"IEND":
            break
    if width is None:
        raise DataError(f"{path}: missing IHDR chunk")
    try:
        raw = zlib.decompress(idat)
    except zlib.error as exc:
        raise DataError(f"{path}: corrupt PNG pixel stream ({exc})") from exc
    stride = width * 3
    if len(raw) != height * (stride + 1):
        raise DataError(f"{path}: PNG pixel stream has wrong length")
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int64)
    for y in range(height):
        flt = raw[y * (stride + 1)]
        line = np.frombuffer(raw, dtype=np.uint8,
                             count=stride, offset=y * (stride + 1) + 1).astype(np.int64)
        out[y] = _unfilter_scanline(flt, line, prev, bpp=3, path=path)
        prev = out[y].astype(np.int64)
    return out.reshape(height, width, 3).astype(np.float64) / 255.0


def _unfilter_scanline(flt, line, prev, bpp, path):
    if flt == 0:
        return (line % 256).astype(np.uint8)
    cur = np.zeros_like(line)
    if flt == 2:  # Up
        return ((line + prev) % 256).astype(np.uint8)
    for i in range(line.shape[0]):
        left = cur[i - bpp] if i >= bpp else 0
        up = prev[i]
        up_left = prev[i - bpp] if i >= bpp else 0
        if flt == 1:  # Sub
            cur[i] = (line[i] + left) % 256
        elif flt == 3:  # Average
            cur[i] = (line[i] + (left + up) // 2) % 256
        elif flt == 4:  # Paeth
            p = left + up - up_left
            pa, pb, pc = abs(p - left), abs(p - up), abs(p - up_left)
            pred = left if (pa <= pb and pa <= pc) else (up if pb <= pc else up_left)
            cur[i] = (line[i] + pred) % 256
        else:
            raise DataError(f"{path}: unknown PNG filter type {flt}")
    return cur.astype(np.uint8)


def load_frame(path, expected_size: tuple[int, int] | None = None) -> Frame:
    """Decode one frame; ``expected_size`` is (width, height) from the manifest."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: frame file does not exist")
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"\x89PNG"):
        pixels = read_png(path)
    elif head.startswith(b"P6"):
        pixels = read_ppm(path)
    else:
        raise DataError(f"{path}: unsupported image format (need PPM P6 or PNG)")
    if expected_size is not None:
        w, h = expected_size
        if pixels.shape[1] != w or pixels.shape[0] != h:
            raise DataError(
                f"{path}: frame is {pixels.shape[1]}x{pixels.shape[0]}, manifest says {w}x{h}")
    return Frame(pixels)


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class ManifestEntry:
    sample_id: str
    label: str
    split: str  # train | val | test
    frame_paths: list[str]


@dataclass
class Manifest:
    classes: list[str]
    timesteps: int
    image_width: int
    image_height: int
    entries: list[ManifestEntry]

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def label_index(self, label: str) -> int:
        return self.classes.index(label)


def write_manifest(path, manifest: Manifest) -> None:
    lines = [
        MANIFEST_MAGIC,
        "classes " + " ".join(manifest.classes),
        f"timesteps {manifest.timesteps}",
        f"image_size {manifest.image_width} {manifest.image_height}",
        f"samples {len(manifest.entries)}",
        "",
    ]
    for e in manifest.entries:
        lines.append(",".join([e.sample_id, e.label, e.split] + list(e.frame_paths)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: manifest does not exist")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise DataError(f"{path}: not a version-1 manifest")
    header: dict[str, list[str]] = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line == "":
            body_start = i + 1
            break
        key, *rest = line.split(" ")
        header[key] = rest
    if body_start is None or "classes" not in header or "timesteps" not in header or "image_size" not in header:
        raise DataError(f"{path}: malformed manifest header")
    timesteps = int(header["timesteps"][0])
    width, height = int(header["image_size"][0]), int(header["image_size"][1])
    classes = header["classes"]
    entries = []
    for line in lines[body_start:]:
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3 + timesteps:
            raise DataError(f"{path}: sample line has {len(parts)} fields, expected {3 + timesteps}")
        sid, label, split = parts[:3]
        if label not in classes:
            raise DataError(f"{path}: sample {sid} has unknown label {label!r}")
        if split not in ("train", "val", "test"):
            raise DataError(f"{path}: sample {sid} has unknown split {split!r}")
        entries.append(ManifestEntry(sample_id=sid, label=label, split=split, frame_paths=parts[3:]))
    declared = int(header.get("samples", [len(entries)])[0])
    if declared != len(entries):
        raise DataError(f"{path}: header declares {declared} samples, found {len(entries)}")
    return Manifest(classes=classes, timesteps=timesteps, image_width=width,
                    image_height=height, entries=entries)


def load_sequence(manifest: Manifest, entry: ManifestEntry, root) -> list[Frame]:
    """Decode the ordered frames of one sample; paths are manifest-relative."""
    root = Path(root)
    frames = []
    for rel in entry.frame_paths:
        frames.append(load_frame(root / rel, expected_size=(manifest.image_width, manifest.image_height)))
    return frames


# ---------------------------------------------------------------------------
# Synthetic dataset


@dataclass
class SyntheticSpec:
    """Grow-vs-shrink squares with an equal per-frame brightness budget.

    Each sample renders one filled square whose side strictly increases
    (grow) or decreases (shrink) by a fixed step per frame. The square is
    anchored at a per-sample random corner, so each step sweeps two of
    the four boundaries by the full growth step and the next frame's
    footprint strictly contains the previous one when growing.

    Several design choices make any single frame close to uninformative
    about the class. The fill value scales inversely with the square's
    area (equal expected brightness budget per frame) and is jittered by
    an independent per-frame multiplier, so neither totals nor
    value-level statistics identify the square's size. The square wraps
    around the frame edges with its anchor uniform over the whole frame,
    so every pixel's expected brightness is one constant for both
    classes in every frame and fixed linear statistics carry no class
    signal. Finally, ``clutter`` distractor squares are drawn afresh in
    every frame from the same size and value distributions and composed
    by elementwise maximum; within one frame the class-carrying square
    is exchangeable with the distractors, so per-frame statistics such
    as bright-cell counts cannot isolate it. What identifies the class
    is the one location whose square changes size in a consistent
    direction across all frames, a comparison that requires relating
    frames to each other. The containment statement above concerns the
    class-carrying square; render with clutter=0 to observe it directly.
    """

    classes: tuple[str, str] = ("grow", "shrink")
    samples_per_class: int = 140
    image_size: tuple[int, int] = (32, 32)  # (width, height)
    timesteps: int = 3
    noise: float = 0.05
    seed: int = 0

    # Rendering constants, scaled off a 32-pixel reference frame.
    background: float = 0.25
    background_jitter: float = 0.0  # per-frame uniform shift of the background level
    growth_step: float = 1.0      # side change per frame, pixels
    min_side_frac: float = 0.25   # smallest starting side / min(W, H)
    max_side_frac: float = 0.44   # largest starting side / min(W, H)
    peak_value: float = 0.62      # mean fill value of the smallest square
    value_jitter: float = 0.50    # relative spread of the per-frame fill value
    clutter: int = 2              # distractor squares, redrawn every frame
    clutter_spread: float = 1.3  # distractor size range extends this far past the main range
    value_cap: float = 0.68       # fill values are clipped here

    def __post_init__(self):
        if tuple(self.classes) != ("grow", "shrink"):
            raise ContractError("synthetic classes must be exactly (grow, shrink)")
        if self.timesteps < 2:
            raise ContractError(f"timesteps must be >= 2, got {self.timesteps}")
        if self.samples_per_class < 1:
            raise ContractError("samples_per_class must be >= 1")
        if self.noise < 0:
            raise ContractError("noise level must be >= 0")
        if self.growth_step <= 0:
            raise ContractError("growth_step must be positive")
        if self.clutter < 0:
            raise ContractError("clutter must be >= 0")


def _coverage_1d(extent, start, side):
    """Per-cell covered length of the interval [start, start+side) on a
    circle of circumference ``extent``; requires side <= extent."""
    xs = np.arange(extent)
    start = start % extent
    cov = np.clip(np.minimum(xs + 1, start + side) - np.maximum(xs, start), 0.0, 1.0)
    wrapped = start + side - extent
    if wrapped > 0:
        cov += np.clip(np.minimum(xs + 1, wrapped) - xs, 0.0, 1.0)
    return cov


def _render_square(width, height, x0, y0, side, value):
    """Anti-aliased axis-aligned square with real-valued top-left corner
    (x0, y0), wrapping around the frame edges; pixel gets value *
    (covered area fraction). The rendered total brightness is exactly
    value * side^2."""
    cov_x = _coverage_1d(width, x0, side)
    cov_y = _coverage_1d(height, y0, side)
    return value * cov_y[:, None] * cov_x[None, :]


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Manifest:
    """Render the dataset to ``out_dir`` (frames/ plus manifest.txt).

    Splits are balanced per class at 5/7 train, 1/7 val, 1/7 test, which
    for the default 140 samples per class yields 200/40/40 overall."""
    out_dir = Path(out_dir)
    width, height = spec.image_size
    m = min(width, height)
    smin = spec.min_side_frac * m
    smax = spec.max_side_frac * m
    largest = smax + (spec.timesteps - 1) * spec.growth_step
    if largest > m:
        raise ContractError(
            f"square cannot fit: largest side {largest:.1f} exceeds frame size {m}")
    budget = spec.peak_value * smin * smin

    rng = np.random.default_rng(spec.seed)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)

    per_class = spec.samples_per_class
    n_val = per_class // 7
    n_test = per_class // 7
    n_train = per_class - n_val - n_test

    main_hi = smax + (spec.timesteps - 1) * spec.growth_step
    side_lo = smin / spec.clutter_spread
    side_hi = min(0.66 * m, main_hi * spec.clutter_spread)
    # Distractor fill values reach below the main square's dimmest possible
    # value, so per-frame extreme statistics read distractors rather than
    # the class-carrying square; a dim bias keeps them from overwriting it.
    value_lo = 0.9 * (1.0 - spec.value_jitter) * budget / (main_hi * main_hi)
    value_hi = min(1.1 * (1.0 + spec.value_jitter) * spec.peak_value, spec.value_cap)
    value_mid = 0.8 * spec.peak_value

    def jittered_value(side):
        jitter = rng.uniform(1.0 - spec.value_jitter, 1.0 + spec.value_jitter)
        return min(jitter * budget / (side * side), spec.value_cap)

    entries = []
    index = 0
    for label in spec.classes:
        for k in range(per_class):
            base_side = rng.uniform(smin, smax)
            sides = base_side + spec.growth_step * np.arange(spec.timesteps, dtype=np.float64)
            if label == "shrink":
                sides = sides[::-1]
            # Anchor corner: the square grows away from a fixed point, so
            # two boundaries sweep a full growth_step per frame.
            ax = rng.uniform(0.0, width)
            ay = rng.uniform(0.0, height)
            sx = float(rng.integers(0, 2))
            sy = float(rng.integers(0, 2))
            # Each blinker occupies exactly one frame, alternating between the
            # first and last frame, so statistics comparing those frames see
            # object-scale noise while no spurious persistent object exists.
            blinkers = []
            for b in range(spec.clutter):
                blinkers.append({
                    "frame": (0, spec.timesteps - 1, spec.timesteps // 2)[b % 3] if spec.timesteps > 2 else b % 2,
                    "x": rng.uniform(0.0, width), "y": rng.uniform(0.0, height),
                    "side": rng.uniform(side_lo, side_hi),
                    "value": rng.uniform(value_lo, value_hi if rng.random() < 0.25 else value_mid),
                })
            split = "train" if k < n_train else ("val" if k < n_train + n_val else "test")
            sid = f"{index:04d}"
            paths = []
            for t, side in enumerate(sides):
                level = spec.background + rng.uniform(-spec.background_jitter,
                                                      spec.background_jitter)
                gray = _render_square(width, height, ax - sx * side, ay - sy * side,
                                      side, jittered_value(side))
                for blink in blinkers:
                    if blink["frame"] == t:
                        d_field = _render_square(width, height, blink["x"], blink["y"],
                                                 blink["side"], blink["value"])
                        gray = np.maximum(gray, d_field)
                gray = level + gray
                pixels = np.repeat(gray[:, :, None], 3, axis=2)
                if spec.noise > 0:
                    pixels = pixels + rng.normal(0.0, spec.noise, size=pixels.shape)
                pixels = np.clip(pixels, 0.0, 1.0)
                rel = f"frames/{sid}_t{t}.ppm"
                write_ppm(out_dir / rel, pixels)
                paths.append(rel)
            entries.append(ManifestEntry(sample_id=sid, label=label, split=split, frame_paths=paths))
            index += 1
    manifest = Manifest(classes=list(spec.classes), timesteps=spec.timesteps,
                        image_width=width, image_height=height, entries=entries)
    write_manifest(out_dir / "manifest.txt", manifest)
    return manifest


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, config_echo: dict[str, str], tensors: dict[str, np.ndarray]) -> None:
    """Binary container: magic, config echo, named float64 LE tensors."""
    config_blob = "\n".join(f"{k}={config_echo[k]}" for k in sorted(config_echo)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: checkpoint does not exist")
    blob = path.read_bytes()
    if blob[:6] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an STBAM checkpoint")
    pos = 6

    def take(count, what):
        nonlocal pos
        if pos + count > len(blob):
            raise DataError(f"{path}: truncated checkpoint while reading {what}")
        chunk = blob[pos:pos + count]
        pos += count
        return chunk

    (config_len,) = struct.unpack("<I", take(4, "config length"))
    config_blob = take(config_len, "config echo").decode("utf-8")
    config = {}
    for line in config_blob.splitlines():
        if line:
            key, _, value = line.partition("=")
            config[key] = value
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "tensor name length"))
        name = take(name_len, "tensor name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "tensor rank"))
        shape = tuple(struct.unpack("<I", take(4, "tensor shape"))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        raw = take(8 * size, f"tensor {name!r} values")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if pos != len(blob):
        raise DataError(f"{path}: trailing bytes after checkpoint payload")
    return config, tensors
