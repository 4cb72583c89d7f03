"""Domain-shift datasets, IDX ingestion, sample weighting and batching."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingView:
    """What training code is allowed to see: no target labels."""

    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    num_classes: int

    @property
    def n_source(self) -> int:
        return len(self.source_x)

    @property
    def n_target(self) -> int:
        return len(self.target_x)


@dataclass(frozen=True)
class DomainDataset:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    num_classes: int
    target_y: np.ndarray | None = None  # evaluation only

    def __post_init__(self):
        for name in ("source_x", "target_x"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or len(arr) == 0:
                raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.source_x.shape[1] != self.target_x.shape[1]:
            raise ValueError(f"feature widths differ: {self.source_x.shape[1]} vs "
                             f"{self.target_x.shape[1]}")
        for name, rows in (("source_y", len(self.source_x)), ("target_y", len(self.target_x))):
            lab = getattr(self, name)
            if lab is None:
                continue
            lab = np.asarray(lab, dtype=np.int64)
            if lab.shape != (rows,):
                raise ValueError(f"{name} has shape {lab.shape}, expected ({rows},)")
            if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
                raise ValueError(f"{name} outside [0, {self.num_classes})")
            lab.setflags(write=False)
            object.__setattr__(self, name, lab)

    @property
    def n_source(self) -> int:
        return len(self.source_x)

    @property
    def n_target(self) -> int:
        return len(self.target_x)

    @property
    def input_dim(self) -> int:
        return self.source_x.shape[1]

    def training_view(self) -> TrainingView:
        return TrainingView(self.source_x, self.source_y, self.target_x, self.num_classes)

    def to_csv(self, path, include_target_labels: bool = False) -> None:
        """Write ``domain,label,f0..f{d-1}``; target labels blank unless asked for."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["domain", "label"] + [f"f{i}" for i in range(self.input_dim)])
            for x, y in zip(self.source_x, self.source_y):
                w.writerow(["source", int(y)] + [repr(float(v)) for v in x])
            for i, x in enumerate(self.target_x):
                label = ""
                if include_target_labels and self.target_y is not None:
                    label = int(self.target_y[i])
                w.writerow(["target", label] + [repr(float(v)) for v in x])


# -- synthetic ------------------------------------------------------------------

def two_moons(n: int, noise: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    outer = np.column_stack([np.cos(t0), np.sin(t0)])
    inner = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([outer, inner])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        x = x + rng.normal(0.0, noise, x.shape)
    return x, y


def rotate_translate(x: np.ndarray, degrees: float, translation=(0.0, 0.0)) -> np.ndarray:
    th = np.deg2rad(degrees)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    return x @ rot.T + np.asarray(translation, dtype=np.float64)


def make_two_moons_shift(n_source: int = 400, n_target: int = 400, rotation: float = 30.0,
                         translation=(0.0, 0.0), noise: float = 0.1,
                         seed: int = 0) -> DomainDataset:
    """Two-moons source; target drawn the same way then rotated about the origin and shifted."""
    if n_source < 4 or n_target < 4:
        raise ValueError(f"need at least 2 samples per class, got n_source={n_source}, "
                         f"n_target={n_target}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    src_seq, tgt_seq = np.random.SeedSequence(seed).spawn(2)
    xs, ys = two_moons(n_source, noise, np.random.default_rng(src_seq))
    xt, yt = two_moons(n_target, noise, np.random.default_rng(tgt_seq))
    xt = rotate_translate(xt, rotation, translation)
    return DomainDataset(xs, ys, xt, num_classes=2, target_y=yt)


# -- IDX ------------------------------------------------------------------------

def _read_idx(path, expected_magic: int, what: str) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} for {what} "
                             f"(expected 0x{expected_magic:08x})")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    body = raw[header_len:]
    need = int(np.prod(dims))
    if len(body) < need:
        raise IdxFormatError(f"{path}: truncated data ({len(body)} of {need} bytes)")
    return dims, body[:need]


def load_idx(images_path, labels_path, max_count: int | None = None
             ) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label pair (unsigned-byte payload) into ``[n, rows*cols]`` in [0, 1]."""
    idims, ibody = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    ldims, lbody = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if idims[0] != ldims[0]:
        raise IdxFormatError(f"count mismatch: {idims[0]} images vs {ldims[0]} labels")
    count = idims[0] if max_count is None else min(idims[0], int(max_count))
    width = int(np.prod(idims[1:]))
    images = np.frombuffer(ibody, dtype=np.uint8).reshape(idims[0], width)[:count]
    labels = np.frombuffer(lbody, dtype=np.uint8)[:count]
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Inverse of :func:`load_idx` for ``uint8`` arrays shaped ``[n, rows, cols]``."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols)
                                  + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels))
                                  + labels.tobytes())


# -- sample weighting and batching --------------------------------------------------

def weight_samples(n_source: int, n_target: int, a: float = 0.5) -> tuple[float, float]:
    """Per-domain input scales ``a(1 + n_t/n_s)`` and ``a(1 + n_s/n_t)``."""
    if not 0.0 < a <= 1.0:
        raise ValueError(f"a must lie in (0, 1], got {a}")
    if n_source < 1 or n_target < 1:
        raise ValueError(f"domain sizes must be >= 1, got {n_source}, {n_target}")
    return a * (1.0 + n_target / n_source), a * (1.0 + n_source / n_target)


@dataclass(frozen=True)
class WeightedBatch:
    source_x: np.ndarray  # already scaled by w_source
    source_y: np.ndarray
    target_x: np.ndarray  # already scaled by w_target
    w_source: float
    w_target: float


def _index_stream(n: int, total: int, rng: np.random.Generator) -> np.ndarray:
    reps = math.ceil(total / n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:total]


def batches_per_epoch(n_source: int, n_target: int, batch_size: int) -> int:
    return math.ceil(max(n_source, n_target) / batch_size)


def iter_batches(data: TrainingView | DomainDataset, batch_size: int,
                 rng: np.random.Generator, weights: tuple[float, float] = (1.0, 1.0)
                 ) -> Iterator[WeightedBatch]:
    """One epoch of paired source/target mini-batches.

    The epoch covers the larger domain once; the smaller one is re-shuffled and
    cycled so both sides of a batch have the same size.  A domain smaller than
    ``batch_size`` contributes its full set to every batch.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    if isinstance(data, DomainDataset):
        data = data.training_view()
    ns, nt = data.n_source, data.n_target
    total = max(ns, nt)
    nb = batches_per_epoch(ns, nt, batch_size)
    src_idx = _index_stream(ns, nb * batch_size, rng)
    tgt_idx = _index_stream(nt, nb * batch_size, rng)
    ws, wt = weights
    for k in range(nb):
        size = min(batch_size, total - k * batch_size)
        lo = k * batch_size
        si = src_idx[lo:lo + min(size, ns)] if ns >= batch_size else np.arange(ns)
        ti = tgt_idx[lo:lo + min(size, nt)] if nt >= batch_size else np.arange(nt)
        yield WeightedBatch(
            source_x=data.source_x[si] * ws,
            source_y=data.source_y[si],
            target_x=data.target_x[ti] * wt,
            w_source=ws,
            w_target=wt,
        )


def batch_iter(data: TrainingView | DomainDataset, batch_size: int, a: float = 0.5,
               seed: int = 0, epochs: int = 1) -> Iterator[WeightedBatch]:
    """Seeded stream of weighted batches over ``epochs`` passes."""
    weights = weight_samples(data.n_source, data.n_target, a)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        yield from iter_batches(data, batch_size, rng, weights)
