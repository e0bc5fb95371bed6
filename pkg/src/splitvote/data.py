"""Datasets, federated partitioners, and the rotated-image transform.

Synthetic generators and partitioners are deterministic given their seed;
sub-streams are derived with SeedSequence spawn keys so results do not
depend on call order.
"""

from __future__ import annotations

import csv
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import IngestError, UsageError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def child_rng(seed: int, *tags) -> np.random.Generator:
    """Named deterministic random stream derived from the experiment seed."""
    key = tuple(
        zlib.crc32(t.encode()) if isinstance(t, str) else int(t) for t in tags
    )
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class Dataset:
    """Dense features (n, d), integer labels, and the class count."""

    x: np.ndarray
    y: np.ndarray
    classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] == 0:
            raise UsageError("dataset needs a nonempty (n, d) feature matrix")
        if self.y.shape != (self.x.shape[0],):
            raise UsageError("labels must align with feature rows")
        if self.y.min() < 0 or self.y.max() >= self.classes:
            raise UsageError(f"labels must lie in [0, {self.classes})")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.classes)


@dataclass
class PartitionPlan:
    """client id -> sample indices; assignments are disjoint."""

    assignment: dict
    scheme: str

    def client_ids(self):
        return sorted(self.assignment)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["client_id", "sample_index"])
            for cid in self.client_ids():
                for idx in self.assignment[cid]:
                    writer.writerow([cid, int(idx)])


def partition_iid(data: Dataset, m: int, seed: int) -> PartitionPlan:
    """Uniform random equal-size shards; tail samples beyond n - n % m are dropped."""
    if m < 1 or m > data.n:
        raise UsageError(f"cannot split {data.n} samples across {m} clients")
    rng = child_rng(seed, "partition", "iid")
    order = rng.permutation(data.n)
    per = data.n // m
    assignment = {
        cid: np.sort(order[cid * per : (cid + 1) * per]) for cid in range(m)
    }
    return PartitionPlan(assignment=assignment, scheme=f"iid(m={m})")


def partition_shard_noniid(data: Dataset, shard_count: int, shard_size: int,
                           shards_per_client: int, seed: int) -> PartitionPlan:
    """Label-sorted consecutive shards dealt randomly, few classes per client.

    Stable-sorts indices by label, cuts the first shard_count * shard_size of
    them into consecutive shards, then deals shards_per_client shards to each
    of shard_count // shards_per_client clients without replacement.
    """
    need = shard_count * shard_size
    if need > data.n:
        raise UsageError(
            f"{shard_count} shards of {shard_size} need {need} samples, have {data.n}"
        )
    if shards_per_client < 1 or shards_per_client > shard_count:
        raise UsageError("shards_per_client out of range")
    order = np.argsort(data.y, kind="stable")[:need]
    shards = order.reshape(shard_count, shard_size)
    rng = child_rng(seed, "partition", "shard")
    deal = rng.permutation(shard_count)
    m = shard_count // shards_per_client
    assignment = {}
    for cid in range(m):
        picked = deal[cid * shards_per_client : (cid + 1) * shards_per_client]
        assignment[cid] = np.sort(np.concatenate([shards[s] for s in picked]))
    return PartitionPlan(
        assignment=assignment,
        scheme=f"shard({shard_count}x{shard_size},{shards_per_client}/client)",
    )


def _read_idx_header(blob: bytes, path, magic_want: int, dims_want: int):
    if len(blob) < 4:
        raise IngestError(f"{path}: truncated before magic (offset 0)")
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic != magic_want:
        raise IngestError(
            f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{magic_want:08x}"
        )
    if len(blob) < 4 + 4 * dims_want:
        raise IngestError(f"{path}: truncated dimension table (offset 4)")
    dims = struct.unpack_from(f">{dims_want}I", blob, 4)
    return dims, 4 + 4 * dims_want


def load_idx(images_path, labels_path) -> Dataset:
    """Load the big-endian IDX image/label pair; features scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        img_blob = fh.read()
    with open(labels_path, "rb") as fh:
        lab_blob = fh.read()
    (n_img, rows, cols), img_off = _read_idx_header(
        img_blob, images_path, IDX_IMAGES_MAGIC, 3
    )
    (n_lab,), lab_off = _read_idx_header(lab_blob, labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise IngestError(
            f"{images_path}: {n_img} images but {labels_path} has {n_lab} labels"
        )
    want = n_img * rows * cols
    if len(img_blob) - img_off != want:
        raise IngestError(
            f"{images_path}: pixel block has {len(img_blob) - img_off} bytes "
            f"at offset {img_off}, expected {want}"
        )
    if len(lab_blob) - lab_off != n_lab:
        raise IngestError(
            f"{labels_path}: label block has {len(lab_blob) - lab_off} bytes "
            f"at offset {lab_off}, expected {n_lab}"
        )
    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=img_off)
    labels = np.frombuffer(lab_blob, dtype=np.uint8, offset=lab_off)
    x = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    return Dataset(x=x, y=labels.astype(np.int64), classes=int(labels.max()) + 1)


def synth_blobs(classes: int, per_class: int, dim: int, spread: float,
                seed: int, center_scale: float = 1.0) -> Dataset:
    """Gaussian clusters at seeded random centers; spread 0 collapses to centers."""
    if classes < 1 or per_class < 1 or dim < 1:
        raise UsageError("classes, per_class, and dim must be positive")
    rng = child_rng(seed, "blobs")
    centers = rng.normal(0.0, center_scale, size=(classes, dim))
    y = np.repeat(np.arange(classes), per_class)
    x = centers[y] + spread * rng.normal(size=(y.size, dim))
    return Dataset(x=x, y=y, classes=classes)


def synth_image_blobs(classes: int, per_class: int, side: int, spread: float,
                      seed: int, ring_amp: float = 3.0,
                      pattern_amp: float = 3.0) -> Dataset:
    """Gaussian clusters whose centers are side x side images.

    Each class center is a radial ring bump (invariant under 90-degree grid
    rotation) plus a fixed random pixel pattern (scrambled by rotation), so
    rotating the samples keeps part of the class signal and destroys the rest.
    """
    if side < 2:
        raise UsageError("image blobs need side >= 2")
    rng = child_rng(seed, "image_blobs")
    grid = np.arange(side, dtype=np.float64)
    c0 = (side - 1) / 2.0
    rr = np.sqrt((grid[:, None] - c0) ** 2 + (grid[None, :] - c0) ** 2)
    max_r = rr.max()
    centers = np.zeros((classes, side * side))
    for cls in range(classes):
        radius = max_r * (cls + 0.5) / classes
        ring = np.exp(-((rr - radius) ** 2) / (2 * 0.6**2))
        pattern = rng.normal(0.0, 1.0, size=(side, side))
        centers[cls] = (ring_amp * ring + pattern_amp * pattern).ravel()
    y = np.repeat(np.arange(classes), per_class)
    x = centers[y] + spread * rng.normal(size=(y.size, side * side))
    return Dataset(x=x, y=y, classes=classes)


def rotate_images(data: Dataset, angle_degrees: float) -> Dataset:
    """Rotate each row (viewed as a square image) by nearest-neighbor resampling.

    Multiples of 90 degrees are exact permutations of the pixels; other
    angles resample about the image center and fill uncovered pixels with 0.
    Labels are unchanged.
    """
    side = int(round(np.sqrt(data.dim)))
    if side * side != data.dim:
        raise UsageError(f"features of width {data.dim} are not square images")
    imgs = data.x.reshape(data.n, side, side)
    quarter = angle_degrees / 90.0
    if float(quarter).is_integer():
        out = np.rot90(imgs, k=int(quarter) % 4, axes=(1, 2))
        return Dataset(out.reshape(data.n, -1).copy(), data.y.copy(), data.classes)
    theta = np.deg2rad(angle_degrees)
    c0 = (side - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    # inverse map: rotate output coordinates by -theta around the center
    dr = rows - c0
    dc = cols - c0
    src_r = np.round(np.cos(theta) * dr + np.sin(theta) * dc + c0).astype(np.int64)
    src_c = np.round(-np.sin(theta) * dr + np.cos(theta) * dc + c0).astype(np.int64)
    valid = (src_r >= 0) & (src_r < side) & (src_c >= 0) & (src_c < side)
    out = np.zeros_like(imgs)
    out[:, valid] = imgs[:, src_r[valid], src_c[valid]]
    return Dataset(out.reshape(data.n, -1), data.y.copy(), data.classes)


def train_test_split(data: Dataset, test_fraction: float, seed: int):
    """Deterministic shuffled split; returns (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise UsageError("test_fraction must be in (0, 1)")
    rng = child_rng(seed, "split")
    order = rng.permutation(data.n)
    n_test = max(1, int(round(data.n * test_fraction)))
    if n_test >= data.n:
        raise UsageError("test fraction leaves no training data")
    return data.subset(order[n_test:]), data.subset(order[:n_test])
