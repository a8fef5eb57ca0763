"""Dataset ingestion, splitting, patch tiling and synthetic fixtures.

Images are float32 in [0, 1], shaped (N, 1, H, W).  IDX files (big-endian,
magic 0x00000803 for images and 0x00000801 for labels) carry the image
datasets; PGM (P5, maxval 255) carries video frames, patches and
reconstruction grids.
"""

from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from alps.errors import IngestionError, ProtocolError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# synthetic blob fixture
BLOB_SIZE = 32
BLOB_SIGMA = 3.0
BLOB_JITTER = 2.0
BLOB_INLIER_CENTER = (9.0, 9.0)
BLOB_OUTLIER_CENTER = (23.0, 23.0)
NOISE_AMPLITUDE = 0.05
BLOB_PEAK = (0.7, 1.0)
RECT_SIDE = (6, 13)
INLIER, OPPOSITE_BLOB, RECTANGLE = 0, 1, 2

# synthetic video fixture
FRAME_SHAPE = (240, 360)
PATCH = 30
VIDEO_BACKGROUND = 0.3
PEDESTRIAN_SIGMA = (6.0, 2.5)
PEDESTRIAN_GAIN = 0.35
VEHICLE_VALUE = 0.95


class IdxError(IngestionError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


class PgmError(IngestionError):
    pass


@dataclass
class LabeledImageSet:
    images: np.ndarray
    labels: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise IngestionError(f"images must be (N, 1, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise IngestionError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise IngestionError("pixel values outside [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> LabeledImageSet:
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledImageSet(self.images[idx], self.labels[idx], self.provenance)


def _open(path: str | os.PathLike, mode: str = "rb"):
    return gzip.open(path, mode) if str(path).endswith(".gz") else open(path, mode)


def _read_bytes(path) -> bytes:
    try:
        with _open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc


def read_idx(path: str | os.PathLike, expected_magic: int) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise IdxTruncatedError(f"{path}: payload has {len(raw) - header} bytes, dimensions need {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path: str | os.PathLike, array: np.ndarray) -> None:
    """Write a uint8 array; rank 3 gets the image magic, rank 1 the label magic."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("IDX writer only supports unsigned bytes")
    magic = 0x00000800 | arr.ndim
    with _open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_idx(images_path, labels_path, provenance: str = "idx") -> LabeledImageSet:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise IdxCountMismatchError(f"{len(images)} images in {images_path} but {len(labels)} labels in {labels_path}")
    return LabeledImageSet((images.astype(np.float32) / 255.0)[:, None], labels.astype(np.int64), provenance)


def to_bytes(images: np.ndarray) -> np.ndarray:
    return np.round(np.clip(images, 0, 1) * 255).astype(np.uint8)


def save_idx(images_path, labels_path, data: LabeledImageSet) -> None:
    write_idx(images_path, to_bytes(data.images[:, 0]))
    write_idx(labels_path, data.labels.astype(np.uint8))


# --------------------------------------------------------------------- PGM


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Binary PGM (P5, maxval <= 255) as float32 in [0, 1]."""
    raw = _read_bytes(path)
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.find(b"\n", pos) + 1 or len(raw)
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PgmError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise PgmError(f"{path}: expected a grayscale P5 image, got {tokens[0].decode(errors='replace')}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PgmError(f"{path}: malformed PGM header") from None
    if not 0 < maxval <= 255:
        raise PgmError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    pos += 1
    payload = raw[pos:pos + width * height]
    if len(payload) < width * height:
        raise PgmError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float32) / maxval


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a 2-d image; floats are taken as [0, 1] and quantised with round(255 v)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-d image, got shape {img.shape}")
    pixels = img if img.dtype == np.uint8 else to_bytes(img)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


# ------------------------------------------------------------------ resizing


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) linear interpolation weights with corner-aligned sampling."""
    m = np.zeros((dst, src))
    if src == 1 or dst == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(dst) * (src - 1) / (dst - 1)
    lo = np.minimum(np.floor(pos).astype(int), src - 2)
    frac = pos - lo
    m[np.arange(dst), lo] = 1 - frac
    m[np.arange(dst), lo + 1] += frac
    return m


def resize_bilinear(image: np.ndarray, target: int | tuple[int, int]) -> np.ndarray:
    """Bilinear resize over the last two axes; output corners coincide with input corners."""
    img = np.asarray(image, dtype=np.float64)
    th, tw = (target, target) if isinstance(target, int) else target
    h, w = img.shape[-2:]
    if (h, w) == (th, tw):
        return img.astype(np.float32)
    rows, cols = _interp_matrix(h, th), _interp_matrix(w, tw)
    out = rows @ img @ cols.T
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def to_model_input(images: np.ndarray, resolution: int) -> np.ndarray:
    """(N, H, W) or (N, 1, H, W) in [0, 1] -> (N, 1, resolution, resolution)."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 4:
        arr = arr[:, 0]
    return resize_bilinear(arr, resolution)[:, None]


# -------------------------------------------------------------------- splits


@dataclass
class SplitPlan:
    inlier_class: int
    seed: int
    train: np.ndarray
    val_inliers: np.ndarray
    val_outliers: np.ndarray
    test: np.ndarray

    @property
    def validation(self) -> np.ndarray:
        return np.concatenate([self.val_inliers, self.val_outliers])

    @property
    def validation_labels(self) -> np.ndarray:
        return np.concatenate([np.zeros(len(self.val_inliers), np.int64), np.ones(len(self.val_outliers), np.int64)])

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "role"])
            for role, idx in (("train", self.train), ("val_inlier", self.val_inliers),
                              ("val_outlier", self.val_outliers), ("test", self.test)):
                w.writerows((int(i), role) for i in idx)


def make_split(data: LabeledImageSet, inlier_class: int, seed: int, n_val_inliers: int = 150,
               n_val_outliers: int = 150, test_size: int = 0) -> SplitPlan:
    """Carve a labelled validation split out of a training corpus.

    Validation outliers are balanced across the non-inlier classes (any
    remainder goes to classes in a seeded order; a class that runs short
    hands its quota to the others).  Train = remaining inliers only.  The
    test corpus is separate and left untouched (``test_size`` indices).
    """
    rng = np.random.default_rng([seed, 17])
    labels = data.labels
    inliers = np.flatnonzero(labels == inlier_class)
    if inliers.size == 0:
        raise ProtocolError(f"inlier class {inlier_class} does not occur in the training corpus")
    if inliers.size < n_val_inliers:
        raise ProtocolError(f"need {n_val_inliers} validation inliers, class {inlier_class} has {inliers.size}")
    outlier_classes = [c for c in np.unique(labels) if c != inlier_class]
    pools = {c: rng.permutation(np.flatnonzero(labels == c)) for c in outlier_classes}
    available = sum(p.size for p in pools.values())
    if available < n_val_outliers:
        raise ProtocolError(f"need {n_val_outliers} validation outliers, corpus has {available}")

    shuffled = rng.permutation(inliers)
    val_in = np.sort(shuffled[:n_val_inliers])
    train = np.sort(shuffled[n_val_inliers:])

    quota = {c: 0 for c in outlier_classes}
    remaining = n_val_outliers
    open_classes = [outlier_classes[i] for i in rng.permutation(len(outlier_classes))]
    while remaining and open_classes:
        share, extra = divmod(remaining, len(open_classes))
        for i, c in enumerate(list(open_classes)):
            take = min(share + (i < extra), pools[c].size - quota[c])
            quota[c] += take
            remaining -= take
        open_classes = [c for c in open_classes if quota[c] < pools[c].size]
    val_out = np.sort(np.concatenate([pools[c][:quota[c]] for c in outlier_classes] or [np.zeros(0, np.int64)]))
    return SplitPlan(inlier_class, seed, train, val_in, val_out.astype(np.int64), np.arange(test_size))


# ------------------------------------------------------------------- patches


def patch_grid(shape: tuple[int, int], patch: int = PATCH) -> tuple[int, int]:
    h, w = shape
    if h < patch or w < patch:
        raise IngestionError(f"frame {h}x{w} is smaller than the {patch}x{patch} patch size")
    return h // patch, w // patch


def extract_patches(frame: np.ndarray, patch: int = PATCH) -> np.ndarray:
    """Non-overlapping row-major tiles (k, patch, patch); partial edge tiles are dropped."""
    frame = np.asarray(frame)
    rows, cols = patch_grid(frame.shape, patch)
    cropped = frame[:rows * patch, :cols * patch]
    return cropped.reshape(rows, patch, cols, patch).transpose(0, 2, 1, 3).reshape(rows * cols, patch, patch)


def assemble_patches(patches: np.ndarray, rows: int, cols: int) -> np.ndarray:
    k, p, _ = patches.shape
    return patches.reshape(rows, cols, p, p).transpose(0, 2, 1, 3).reshape(rows * p, cols * p)


@dataclass
class FrameSet:
    frames: np.ndarray  # (F, H, W) in [0, 1]
    labels: np.ndarray  # 1 = abnormal frame
    names: list[str]

    def __len__(self) -> int:
        return len(self.labels)


def load_frame_dir(path: str | os.PathLike) -> FrameSet:
    """PGM frames in sorted filename order; labels from ``labels.csv`` (filename,label) when present."""
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"frame directory {root} does not exist")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() == ".pgm")
    if not files:
        raise IngestionError(f"no .pgm frames in {root}")
    images = [read_pgm(f) for f in files]
    if len({im.shape for im in images}) != 1:
        raise IngestionError(f"frames in {root} do not share one size")
    frames = np.stack(images)
    label_file = root / "labels.csv"
    if label_file.exists():
        with open(label_file, newline="") as fh:
            table = {row["filename"]: int(row["label"]) for row in csv.DictReader(fh)}
        missing = [f.name for f in files if f.name not in table]
        if missing:
            raise IngestionError(f"labels.csv lacks entries for {missing[:3]}")
        labels = np.array([table[f.name] for f in files], dtype=np.int64)
    else:
        labels = np.zeros(len(files), dtype=np.int64)
    return FrameSet(frames, labels, [f.name for f in files])


def save_frame_dir(path: str | os.PathLike, frames: FrameSet) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for name, frame in zip(frames.names, frames.frames):
        write_pgm(root / name, frame)
    with open(root / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["filename", "label"])
        w.writerows(zip(frames.names, (int(v) for v in frames.labels)))


def load_image_dir(path: str | os.PathLike) -> tuple[list[np.ndarray], list[str]]:
    root = Path(path)
    files = sorted(p for p in root.iterdir() if p.suffix.lower() == ".pgm") if root.is_dir() else []
    if not files:
        raise IngestionError(f"no .pgm images in {root}")
    images = [read_pgm(f) for f in files]
    return images, [f.name for f in files]


# ----------------------------------------------------------------- synthetic


def _quantise(img: np.ndarray) -> np.ndarray:
    # on the 1/255 grid so that IDX/PGM round trips are exact
    return (np.round(np.clip(img, 0, 1) * 255) / 255).astype(np.float32)


def _gaussian(shape, center, sigma) -> np.ndarray:
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    sy, sx = (sigma, sigma) if np.isscalar(sigma) else sigma
    return np.exp(-((yy - center[0]) ** 2 / (2 * sy ** 2) + (xx - center[1]) ** 2 / (2 * sx ** 2)))


def _blob_image(rng: np.random.Generator, kind: int) -> np.ndarray:
    size = BLOB_SIZE
    img = np.zeros((size, size))
    if kind == RECTANGLE:
        hh, ww = rng.integers(RECT_SIDE[0], RECT_SIDE[1] + 1, size=2)
        cy = rng.uniform(size / 2, size - hh / 2 - 1)
        cx = rng.uniform(ww / 2 + 1, size - ww / 2 - 1)
        top, left = int(round(cy - hh / 2)), int(round(cx - ww / 2))
        img[top:top + hh, left:left + ww] = rng.uniform(*BLOB_PEAK)
    else:
        base = BLOB_INLIER_CENTER if kind == INLIER else BLOB_OUTLIER_CENTER
        center = np.asarray(base) + rng.uniform(-BLOB_JITTER, BLOB_JITTER, size=2)
        img = rng.uniform(*BLOB_PEAK) * _gaussian((size, size), center, BLOB_SIGMA)
    img = img + rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=img.shape)
    return _quantise(img)


def gen_blobs(seed: int, counts: dict[int, int]) -> LabeledImageSet:
    """32x32 blob images.  Class 0: Gaussian blob near the top-left quadrant centre (the inliers);
    class 1: the same blob in the bottom-right quadrant; class 2: a filled rectangle in the lower half."""
    rng = np.random.default_rng([seed, 101])
    kinds = np.concatenate([np.full(n, c, dtype=np.int64) for c, n in sorted(counts.items())])
    kinds = kinds[rng.permutation(kinds.size)]
    images = np.stack([_blob_image(rng, int(k)) for k in kinds]) if kinds.size else np.zeros((0, BLOB_SIZE, BLOB_SIZE))
    return LabeledImageSet(images[:, None], kinds, f"synthetic-blobs(seed={seed})")


def _normal_cell(rng: np.random.Generator, patch: int) -> np.ndarray:
    cell = np.full((patch, patch), VIDEO_BACKGROUND)
    if rng.random() < 0.6:
        center = rng.uniform(0.3 * patch, 0.7 * patch, size=2)
        cell += PEDESTRIAN_GAIN * _gaussian((patch, patch), center, PEDESTRIAN_SIGMA)
    return cell


def _abnormal_cell(rng: np.random.Generator, patch: int) -> np.ndarray:
    cell = np.full((patch, patch), VIDEO_BACKGROUND)
    hh = int(rng.integers(patch // 3, patch // 2 + 1))
    ww = int(rng.integers(2 * patch // 3, patch - 1))
    top = int(rng.integers(0, patch - hh + 1))
    left = int(rng.integers(0, patch - ww + 1))
    cell[top:top + hh, left:left + ww] = VEHICLE_VALUE
    return cell


def gen_video(seed: int, n_normal: int, n_abnormal: int, frame_shape: tuple[int, int] = FRAME_SHAPE,
              patch: int = PATCH) -> FrameSet:
    """Frames tiled with pedestrian-like cells; each abnormal frame has exactly one vehicle-like cell."""
    rng = np.random.default_rng([seed, 202])
    rows, cols = patch_grid(frame_shape, patch)
    labels = np.concatenate([np.zeros(n_normal, np.int64), np.ones(n_abnormal, np.int64)])
    labels = labels[rng.permutation(labels.size)]
    frames = np.full((labels.size, *frame_shape), VIDEO_BACKGROUND)
    for f, label in enumerate(labels):
        odd = int(rng.integers(rows * cols)) if label else -1
        for k in range(rows * cols):
            r, c = divmod(k, cols)
            cell = _abnormal_cell(rng, patch) if k == odd else _normal_cell(rng, patch)
            frames[f, r * patch:(r + 1) * patch, c * patch:(c + 1) * patch] = cell
        frames[f] += rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=frame_shape)
    names = [f"frame_{i:04d}.pgm" for i in range(labels.size)]
    return FrameSet(_quantise(frames), labels, names)


def gen_synthetic(kind: str, seed: int, counts) -> LabeledImageSet | FrameSet:
    """``blobs``: ``counts`` maps class id -> count.  ``video``: ``counts`` is (normal, abnormal) frames."""
    if kind == "blobs":
        return gen_blobs(seed, dict(counts))
    if kind == "video":
        n_normal, n_abnormal = counts
        return gen_video(seed, n_normal, n_abnormal)
    raise ValueError(f"unknown synthetic kind {kind!r}")


def blob_corpus(seed: int, inliers: int, outliers: int) -> LabeledImageSet:
    """Inliers of class 0 plus ``outliers`` split evenly between classes 1 and 2."""
    return gen_blobs(seed, {INLIER: inliers, OPPOSITE_BLOB: outliers - outliers // 2, RECTANGLE: outliers // 2})
