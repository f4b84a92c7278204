"""Dataset plumbing: binary PGM images, manifests, point tables, and the
two synthetic generators used for desk-scale experiments.

Images are 8-bit grayscale P5 rasters normalized to [0,1] on load. A
manifest is a text file of `relative/path,label` lines; image paths resolve
relative to the manifest's directory. The moons generator emits 2-D points,
the blob generator emits disk images whose malignant-like class grows thin
radial spikes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .rng import Rng


class PgmError(ValueError):
    """Malformed PGM content; the message names the offending field."""


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int


@dataclass(frozen=True)
class Manifest:
    records: tuple[ManifestRecord, ...]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str
    per_class: int
    noise: float
    side: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("moons", "blob_images"):
            raise ValueError(f"kind must be 'moons' or 'blob_images', got {self.kind!r}")
        if self.per_class < 1:
            raise ValueError(f"per_class must be at least 1, got {self.per_class}")
        if self.noise < 0:
            raise ValueError(f"noise must be nonnegative, got {self.noise}")
        if self.side % 4 != 0 or self.side < 4:
            raise ValueError(f"side must be a positive multiple of 4, got {self.side}")


@dataclass
class Dataset:
    """Sample array plus integer labels; x is (N, 2) points or (N, 1, S, S)
    images depending on provenance."""
    x: np.ndarray
    y: np.ndarray


def read_pgm(path) -> np.ndarray:
    """Parse a binary (P5) PGM into a (1, H, W) float array in [0, 1]."""
    with open(path, "rb") as f:
        raw = f.read()
    fields, offset = _header_fields(raw)
    if fields[0] != b"P5":
        raise PgmError(f"bad magic: expected P5, got {fields[0].decode('latin1')!r}")
    try:
        width, height, maxval = (int(v) for v in fields[1:4])
    except ValueError:
        raise PgmError("bad header: width/height/maxval must be integers") from None
    if width < 1 or height < 1:
        raise PgmError(f"bad dimensions: {width}x{height}")
    if maxval != 255:
        raise PgmError(f"bad maxval: expected 255, got {maxval}")
    payload = raw[offset:offset + width * height]
    if len(payload) < width * height:
        raise PgmError(f"truncated payload: expected {width * height} bytes, got {len(payload)}")
    img = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return img.reshape(1, height, width)


def _header_fields(raw: bytes):
    """First four whitespace-separated header tokens, skipping '#' comments;
    returns the tokens and the payload offset (one whitespace past maxval)."""
    fields = []
    i = 0
    while len(fields) < 4:
        if i >= len(raw):
            raise PgmError("truncated header: fewer than 4 fields")
        c = raw[i:i + 1]
        if c == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            start = i
            while i < len(raw) and not raw[i:i + 1].isspace() and raw[i:i + 1] != b"#":
                i += 1
            fields.append(raw[start:i])
    if i >= len(raw) or not raw[i:i + 1].isspace():
        raise PgmError("bad header: missing whitespace before payload")
    return fields, i + 1


def write_pgm(pixels, path) -> None:
    """Write a (1, H, W) or (H, W) array of [0, 1] values as binary PGM.

    Bytes are round(255*v) with halves rounding up, so 0.5 maps to 128.
    """
    a = np.asarray(pixels, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"write_pgm expects (1, H, W) or (H, W), got shape {a.shape}")
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError("write_pgm values must lie in [0, 1]; clamp before writing")
    b = np.floor(255.0 * a + 0.5).astype(np.uint8)
    h, w = b.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(b.tobytes())


def load_manifest(path) -> Manifest:
    records = []
    seen = set()
    with open(path, "r") as f:
        for ln, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.rsplit(",", 1)
            if len(parts) != 2:
                raise ValueError(f"{path}:{ln}: expected 'relative/path,label'")
            rel, lab = parts[0].strip(), parts[1].strip()
            if lab not in ("0", "1"):
                raise ValueError(f"{path}:{ln}: label must be 0 or 1, got {lab!r}")
            if rel in seen:
                raise ValueError(f"{path}:{ln}: duplicate path {rel!r}")
            seen.add(rel)
            records.append(ManifestRecord(rel, int(lab)))
    return Manifest(tuple(records))


def write_manifest(path, records) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(f"{rec.path},{rec.label}\n")


def load_image_dataset(manifest_path) -> Dataset:
    """Load every manifest entry; images must share one shape with sides
    divisible by 4 (two pooling stages each halve them)."""
    manifest = load_manifest(manifest_path)
    if len(manifest) == 0:
        raise ValueError(f"no samples: manifest {manifest_path} is empty")
    base = os.path.dirname(os.fspath(manifest_path))
    images, labels = [], []
    for rec in manifest.records:
        full = os.path.join(base, rec.path)
        if not os.path.exists(full):
            raise FileNotFoundError(f"manifest entry {rec.path!r}: no file at {full}")
        images.append(read_pgm(full))
        labels.append(rec.label)
    shape = images[0].shape
    for rec, img in zip(manifest.records, images):
        if img.shape != shape:
            raise ValueError(f"manifest entry {rec.path!r}: shape {img.shape[1:]} "
                             f"differs from first image {shape[1:]}")
    if shape[1] % 4 or shape[2] % 4:
        raise ValueError(f"image sides must be divisible by 4, got {shape[1]}x{shape[2]}")
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64))


def save_points(path, ds: Dataset) -> None:
    """Numeric text table: one `x,y,label` row per sample, full precision."""
    with open(path, "w") as f:
        for (px, py), label in zip(ds.x, ds.y):
            f.write(f"{float(px)!r},{float(py)!r},{int(label)}\n")


def load_points(path) -> Dataset:
    xs, ys = [], []
    with open(path, "r") as f:
        for ln, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected 'x,y,label'")
            try:
                xs.append([float(parts[0]), float(parts[1])])
                lab = int(parts[2])
            except ValueError:
                raise ValueError(f"{path}:{ln}: malformed numeric row") from None
            if lab not in (0, 1):
                raise ValueError(f"{path}:{ln}: label must be 0 or 1, got {lab}")
            ys.append(lab)
    if not xs:
        raise ValueError(f"no samples: points table {path} is empty")
    return Dataset(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.int64))


def gen_moons(spec: SyntheticSpec) -> Dataset:
    """Two interleaved half circles: class 0 runs along (cos t, sin t) and
    class 1 along (1 - cos t, 0.5 - sin t) for t in [0, pi]."""
    if spec.kind != "moons":
        raise ValueError(f"gen_moons got spec kind {spec.kind!r}")
    rng = Rng(spec.seed)
    n = spec.per_class
    t0 = rng.uniform(0.0, np.pi, (n,))
    t1 = rng.uniform(0.0, np.pi, (n,))
    pts = np.concatenate([
        np.stack([np.cos(t0), np.sin(t0)], axis=1),
        np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1),
    ])
    pts = pts + rng.normal(pts.shape) * spec.noise
    labels = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)])
    return Dataset(pts, labels)


def gen_blob_images(spec: SyntheticSpec) -> Dataset:
    """Disk images on a 0.2 background: radius uniform in [S/8, S/6], center
    jittered up to S/8 from the grid center, foreground 0.8. Class 1 adds 8
    one-pixel-wide radial spikes of length S/8 at equally spaced angles."""
    if spec.kind != "blob_images":
        raise ValueError(f"gen_blob_images got spec kind {spec.kind!r}")
    rng = Rng(spec.seed)
    S = spec.side
    images = []
    for cls in (0, 1):
        for _ in range(spec.per_class):
            radius = float(rng.uniform(S / 8.0, S / 6.0, ()))
            cx = (S - 1) / 2.0 + float(rng.uniform(-S / 8.0, S / 8.0, ()))
            cy = (S - 1) / 2.0 + float(rng.uniform(-S / 8.0, S / 8.0, ()))
            images.append(_render_blob(S, radius, cx, cy, spikes=(cls == 1)))
    x = np.stack(images).reshape(2 * spec.per_class, 1, S, S)
    x = np.clip(x + rng.normal(x.shape) * spec.noise, 0.0, 1.0)
    labels = np.concatenate([np.zeros(spec.per_class, dtype=np.int64),
                             np.ones(spec.per_class, dtype=np.int64)])
    return Dataset(x, labels)


BLOB_FG = 0.8
BLOB_BG = 0.2


def _render_blob(side: int, radius: float, cx: float, cy: float, spikes: bool) -> np.ndarray:
    rows, cols = np.ogrid[0:side, 0:side]
    img = np.full((side, side), BLOB_BG)
    img[(rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2] = BLOB_FG
    if spikes:
        length = side / 8.0
        for k in range(8):
            ang = 2.0 * np.pi * k / 8.0
            # stamp the nearest pixel along the ray in quarter-pixel steps
            for r in np.arange(radius, radius + length, 0.25):
                px = int(round(cx + r * np.cos(ang)))
                py = int(round(cy + r * np.sin(ang)))
                if 0 <= px < side and 0 <= py < side:
                    img[py, px] = BLOB_FG
    return img


def generate(spec: SyntheticSpec) -> Dataset:
    if spec.kind == "moons":
        return gen_moons(spec)
    return gen_blob_images(spec)
