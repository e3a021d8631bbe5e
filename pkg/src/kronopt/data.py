"""Dataset ingestion: synthetic task generators and the IDX binary format.

Samples are columns; every generator is a pure function of (kind, n, seed)
so runs are reproducible byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import linalg

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SYNTH_KINDS = ("xor", "gaussian-blobs", "random-autoencoder")


@dataclass
class Dataset:
    x: np.ndarray  # features x n
    y: np.ndarray  # targets x n
    loss: str  # "mse" | "softmax_cross_entropy"
    kind: str = "synthetic"

    @property
    def n(self) -> int:
        return self.x.shape[1]


XOR_POINTS = np.array([[0.0, 0.0, 1.0, 1.0], [0.0, 1.0, 0.0, 1.0]])
XOR_TARGETS = np.array([[0.0, 1.0, 1.0, 0.0]])


def synth_dataset(kind: str, n: int, seed: int, **params) -> Dataset:
    if kind == "xor":
        reps = max(1, -(-n // 4))
        x = np.tile(XOR_POINTS, reps)[:, :max(n, 4)]
        y = np.tile(XOR_TARGETS, reps)[:, :max(n, 4)]
        return Dataset(x=x, y=y, loss="mse", kind=kind)
    rng = linalg.make_rng(seed)
    if kind == "gaussian-blobs":
        dim = int(params.get("dim", 8))
        classes = int(params.get("classes", 3))
        scale = float(params.get("scale", 4.0))
        sigma = float(params.get("sigma", 1.0))
        means = scale * rng.standard_normal((dim, classes))
        labels = rng.integers(0, classes, size=n)
        x = means[:, labels] + sigma * rng.standard_normal((dim, n))
        y = np.zeros((classes, n))
        y[labels, np.arange(n)] = 1.0
        return Dataset(x=x, y=y, loss="softmax_cross_entropy", kind=kind)
    if kind == "random-autoencoder":
        dim = int(params.get("dim", 32))
        rank = int(params.get("rank", 4))
        offset = float(params.get("offset", 2.0))
        noise = float(params.get("noise", 0.05))
        mixing = rng.standard_normal((dim, rank))
        latent = rng.standard_normal((rank, n))
        center = offset * rng.standard_normal(dim)
        x = mixing @ latent + center[:, None] + noise * rng.standard_normal((dim, n))
        return Dataset(x=x, y=x.copy(), loss="mse", kind=kind)
    raise ValueError(f"unknown synthetic dataset {kind!r}")


def load_idx(path: str) -> np.ndarray:
    """Read an IDX file: images come back as (rows*cols) x n in [0, 1],
    labels as a 1 x n float array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES_MAGIC:
        if len(raw) < 16:
            raise ValueError(f"{path}: truncated IDX image dims")
        n, rows, cols = struct.unpack(">III", raw[4:16])
        body = raw[16:]
        if len(body) != n * rows * cols:
            raise ValueError(f"{path}: expected {n * rows * cols} pixels, got {len(body)}")
        pixels = np.frombuffer(body, dtype=np.uint8).astype(np.float64) / 255.0
        return np.ascontiguousarray(pixels.reshape(n, rows * cols).T)
    if magic == IDX_LABELS_MAGIC:
        (n,) = struct.unpack(">I", raw[4:8])
        body = raw[8:]
        if len(body) != n:
            raise ValueError(f"{path}: expected {n} labels, got {len(body)}")
        return np.frombuffer(body, dtype=np.uint8).astype(np.float64)[None, :]
    raise ValueError(f"{path}: bad IDX magic 0x{magic:08x}")


def idx_dataset(images_path: str, labels_path: str) -> Dataset:
    x = load_idx(images_path)
    labels = load_idx(labels_path)
    if labels.shape[0] != 1:
        raise ValueError(f"{labels_path} is not a labels file")
    if x.shape[0] == 1:
        raise ValueError(f"{images_path} is not an images file")
    lab = labels[0].astype(int)
    if x.shape[1] != lab.shape[0]:
        raise ValueError("image/label counts differ")
    classes = int(lab.max()) + 1
    y = np.zeros((classes, lab.shape[0]))
    y[lab, np.arange(lab.shape[0])] = 1.0
    return Dataset(x=x, y=y, loss="softmax_cross_entropy", kind="idx")


def shard_dataset(ds: Dataset, n_workers: int, seed: int) -> list[Dataset]:
    """Deterministic round-robin split after a seeded shuffle."""
    if n_workers < 1:
        raise ValueError("need at least one worker")
    perm = linalg.make_rng(seed).permutation(ds.n)
    shards = []
    for w in range(n_workers):
        idx = perm[w::n_workers]
        if idx.size == 0:
            raise ValueError(f"shard {w} is empty (n={ds.n}, workers={n_workers})")
        shards.append(
            Dataset(
                x=np.ascontiguousarray(ds.x[:, idx]),
                y=np.ascontiguousarray(ds.y[:, idx]),
                loss=ds.loss,
                kind=ds.kind,
            )
        )
    return shards


def batch_slice(shard: Dataset, iteration: int, batch: int) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic contiguous batch for a 1-based iteration index."""
    n = shard.n
    b = min(batch, n)
    start = ((iteration - 1) * b) % n
    idx = (start + np.arange(b)) % n
    return shard.x[:, idx], shard.y[:, idx]
