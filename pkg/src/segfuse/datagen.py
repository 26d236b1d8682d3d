"""Seedable synthetic scenes with exactly known boundaries, plus PPM/PGM
and manifest I/O.

Randomness is fully specified so datasets reproduce bit for bit: a
splitmix64 stream derives one substream per (seed, sample index, tag),
shape parameters come from the shape substream, and pixel noise is
standard Box-Muller Gaussian driven by the noise substream.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .labels import DEFAULT_IGNORE, LabelMap

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

SHAPE_KINDS = ("rectangle", "circle", "stripe")

# Fixed palette, pairwise distinct by >= 0.1 in max-norm; index = class id.
DEFAULT_COLORS = (
    (0.15, 0.15, 0.15),
    (0.85, 0.25, 0.25),
    (0.25, 0.70, 0.30),
    (0.25, 0.35, 0.85),
    (0.85, 0.75, 0.25),
    (0.70, 0.30, 0.80),
    (0.30, 0.80, 0.80),
    (0.90, 0.55, 0.20),
)


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class SplitMix64:
    """The splitmix64 sequence: output i is mix(seed + (i+1)*golden)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix64(self.state)

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return self.next_u64() % n

    def block_u64(self, count: int) -> np.ndarray:
        """The next ``count`` outputs, computed in one vectorized pass."""
        idx = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + np.uint64(_GOLDEN) * idx
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + _GOLDEN * count) & _MASK64
        return z

    def normal_block(self, count: int) -> np.ndarray:
        """``count`` standard normals via Box-Muller over uniform pairs."""
        pairs = (count + 1) // 2
        u = (self.block_u64(2 * pairs) >> np.uint64(11)).astype(np.float64)
        u = (u + 1.0) * 2.0**-53  # (0, 1], safe for log
        u1 = u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * math.pi * u2)
        out[1::2] = r * np.sin(2.0 * math.pi * u2)
        return out[:count]


def substream(seed: int, index: int, tag: int) -> SplitMix64:
    base = _mix64(seed + (index + 1) * _GOLDEN)
    return SplitMix64(_mix64(base + (tag + 1) * _GOLDEN))


@dataclass
class SceneSpec:
    height: int = 128
    width: int = 128
    num_classes: int = 4
    shapes_min: int = 3
    shapes_max: int = 6
    shape_kinds: tuple = SHAPE_KINDS
    colors: tuple = ()
    noise_sigma: float = 0.10
    seed: int = 0
    ignore_index: int = DEFAULT_IGNORE

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ValueError("scene must be at least 4x4")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2 (class 0 is background)")
        if not 0 <= self.shapes_min <= self.shapes_max:
            raise ValueError("need 0 <= shapes_min <= shapes_max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        kinds = tuple(self.shape_kinds)
        if not kinds or any(k not in SHAPE_KINDS for k in kinds):
            raise ValueError(f"shape kinds must be a non-empty subset of {SHAPE_KINDS}")
        self.shape_kinds = kinds
        colors = tuple(tuple(c) for c in (self.colors or DEFAULT_COLORS))
        if self.num_classes > len(colors):
            raise ValueError(f"{self.num_classes} classes exceed the {len(colors)}-entry color table")
        for i in range(self.num_classes):
            for j in range(i + 1, self.num_classes):
                gap = max(abs(a - b) for a, b in zip(colors[i], colors[j]))
                if gap < 0.1:
                    raise ValueError(f"colors {i} and {j} closer than 0.1 in max-norm")
        self.colors = colors

    def digest(self) -> str:
        parts = [
            f"height={self.height}", f"width={self.width}",
            f"num_classes={self.num_classes}",
            f"shapes_min={self.shapes_min}", f"shapes_max={self.shapes_max}",
            f"shape_kinds={','.join(self.shape_kinds)}",
            f"colors={self.colors!r}",
            f"noise_sigma={self.noise_sigma!r}",
            f"seed={self.seed}",
        ]
        return hashlib.sha256(";".join(parts).encode()).hexdigest()


@dataclass
class Sample:
    image: np.ndarray  # [3,H,W] float64 in [0,1]
    label: LabelMap


def _paint_shape(label: np.ndarray, rng: SplitMix64, spec: SceneSpec) -> None:
    h, w = label.shape
    kind = spec.shape_kinds[rng.below(len(spec.shape_kinds))]
    cls = 1 + rng.below(spec.num_classes - 1)
    if kind == "rectangle":
        rw = max(2, int(w * (0.15 + 0.35 * rng.uniform())))
        rh = max(2, int(h * (0.15 + 0.35 * rng.uniform())))
        rw, rh = min(rw, w - 1), min(rh, h - 1)
        x0 = rng.below(w - rw + 1)
        y0 = rng.below(h - rh + 1)
        label[y0 : y0 + rh, x0 : x0 + rw] = cls
    elif kind == "circle":
        r = max(2, int(min(h, w) * (0.08 + 0.17 * rng.uniform())))
        r = min(r, (min(h, w) - 1) // 2)
        cy = r + rng.below(h - 2 * r)
        cx = r + rng.below(w - 2 * r)
        yy, xx = np.ogrid[:h, :w]
        label[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = cls
    else:  # stripe
        horizontal = rng.below(2) == 0
        extent = h if horizontal else w
        t = max(2, int(extent * (0.06 + 0.14 * rng.uniform())))
        t = min(t, extent - 1)
        off = rng.below(extent - t + 1)
        if horizontal:
            label[off : off + t, :] = cls
        else:
            label[:, off : off + t] = cls


def generate_sample(spec: SceneSpec, index: int) -> Sample:
    """One sample, fully determined by (spec.seed, index)."""
    shapes_rng = substream(spec.seed, index, 0)
    noise_rng = substream(spec.seed, index, 1)
    h, w = spec.height, spec.width
    for _ in range(100):
        label = np.zeros((h, w), dtype=np.int64)
        span = spec.shapes_max - spec.shapes_min + 1
        n_shapes = spec.shapes_min + shapes_rng.below(span)
        for _ in range(n_shapes):
            _paint_shape(label, shapes_rng, spec)
        if np.any(label == 0):
            break
    else:
        raise RuntimeError("could not draw a scene keeping background visible")

    palette = np.asarray(spec.colors[: spec.num_classes])
    image = palette[label].transpose(2, 0, 1).copy()  # [3,H,W]
    if spec.noise_sigma > 0:
        noise = noise_rng.normal_block(3 * h * w).reshape(3, h, w)
        image = image + spec.noise_sigma * noise
    image = np.clip(image, 0.0, 1.0)
    return Sample(image=image, label=LabelMap(label, spec.num_classes, spec.ignore_index))


def generate(spec: SceneSpec, count: int) -> list[Sample]:
    if count < 1:
        raise ValueError("count must be >= 1")
    return [generate_sample(spec, i) for i in range(count)]


# ---------------------------------------------------------------------------
# PPM / PGM files


def save_image_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6, maxval 255); [0,1] values round half-up to bytes."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must be [3,H,W], got shape {image.shape}")
    _, h, w = image.shape
    data = np.floor(image * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.transpose(1, 2, 0).tobytes())


def save_label_pgm(path, label: LabelMap) -> None:
    """Binary PGM (P5, maxval 255) with the class id per pixel."""
    arr = label.labels
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("label values must fit in one byte")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(arr.astype(np.uint8).tobytes())


def _parse_netpbm_header(blob: bytes, magic: bytes):
    if blob[:2] != magic:
        raise ValueError(f"malformed header: expected {magic.decode()} file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise ValueError("malformed header: non-numeric field")
        fields.append(int(token))
    if pos >= len(blob):
        raise ValueError("malformed header: missing payload")
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval} (must be 255)")
    if w < 1 or h < 1:
        raise ValueError("malformed header: non-positive extents")
    return w, h, pos


def load_image_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    w, h, pos = _parse_netpbm_header(blob, b"P6")
    need = 3 * w * h
    payload = blob[pos : pos + need]
    if len(payload) < need:
        raise ValueError("truncated payload")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return data.transpose(2, 0, 1).astype(np.float64) / 255.0


def load_label_pgm(path, num_classes: int, ignore_index: int = DEFAULT_IGNORE) -> LabelMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    w, h, pos = _parse_netpbm_header(blob, b"P5")
    need = w * h
    payload = blob[pos : pos + need]
    if len(payload) < need:
        raise ValueError("truncated payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.int64)
    return LabelMap(arr, num_classes, ignore_index)


# ---------------------------------------------------------------------------
# Manifest


def write_dataset(spec: SceneSpec, count: int, out_dir) -> Path:
    """Generate ``count`` samples under ``out_dir`` and return the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    lines = [f"digest={spec.digest()}"]
    for i in range(count):
        sample = generate_sample(spec, i)
        img_rel = f"images/img_{i:05d}.ppm"
        lab_rel = f"labels/lab_{i:05d}.pgm"
        save_image_ppm(out_dir / img_rel, sample.image)
        save_label_pgm(out_dir / lab_rel, sample.label)
        lines.append(f"{img_rel} {lab_rel}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path) -> tuple[str, list[tuple[Path, Path]]]:
    """Parse a manifest into (digest, [(image path, label path), ...])."""
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("digest="):
        raise ValueError("manifest missing digest header line")
    digest = lines[0].split("=", 1)[1]
    pairs = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"manifest line is not a path pair: {ln!r}")
        pairs.append((path.parent / parts[0], path.parent / parts[1]))
    if not pairs:
        raise ValueError("manifest lists no samples")
    return digest, pairs


def load_dataset(manifest_path, num_classes: int,
                 ignore_index: int = DEFAULT_IGNORE) -> list[Sample]:
    _, pairs = read_manifest(manifest_path)
    out = []
    for img_path, lab_path in pairs:
        image = load_image_ppm(img_path)
        label = load_label_pgm(lab_path, num_classes, ignore_index)
        out.append(Sample(image=image, label=label))
    return out
