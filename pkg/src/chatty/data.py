"""Synthetic source/target domain pairs and minibatch sampling.

Two generators are provided: Gaussian blobs on a circle, shifted by a rotation
and translation, and the two-moons problem rotated about its centroid. Both
standardize features with source statistics only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError

BLOB_RADIUS = 4.0
MOONS_CENTROID = np.array([0.5, 0.25])


@dataclass
class DomainPair:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    # held out: evaluation only, never read on the training path
    target_y: np.ndarray
    n_classes: int
    shift_spec: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.source_x.shape[1]


@dataclass
class BatchPair:
    src_x: np.ndarray
    src_y: np.ndarray
    tgt_x: np.ndarray


def _rotation(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def _rotate_first_two(x: np.ndarray, degrees: float, center) -> np.ndarray:
    out = x.copy()
    c = np.asarray(center, dtype=np.float64)
    out[:, :2] = (x[:, :2] - c) @ _rotation(degrees).T + c
    return out


def standardize(pair: DomainPair) -> DomainPair:
    """Scale both domains to zero mean / unit variance using source statistics."""
    mu = pair.source_x.mean(axis=0)
    sd = pair.source_x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return DomainPair((pair.source_x - mu) / sd, pair.source_y, (pair.target_x - mu) / sd,
                      pair.target_y, pair.n_classes, dict(pair.shift_spec))


def _sample_blobs(rng, c, n_per_class, d, noise):
    angles = 2 * np.pi * np.arange(c) / c
    centers = np.zeros((c, d))
    centers[:, 0] = BLOB_RADIUS * np.cos(angles)
    centers[:, 1] = BLOB_RADIUS * np.sin(angles)
    y = np.repeat(np.arange(c), n_per_class)
    x = centers[y] + noise * rng.standard_normal((c * n_per_class, d))
    return x, y


def gen_blobs(c: int = 3, n_per_class: int = 200, d: int = 2, *, rotation: float = 0.0,
              translation: Optional[Sequence[float]] = None, noise: float = 0.5, seed: int = 0,
              standardized: bool = True) -> DomainPair:
    """Gaussian blobs centred on a radius-4 circle in the first two dimensions.

    The target is a fresh sample of the same mixture, rotated about the origin
    by ``rotation`` degrees and then translated.
    """
    if c < 2 or d < 2 or n_per_class < 2:
        raise ParameterError(f"need c >= 2, d >= 2 and n_per_class >= 2 (got {c}, {d}, {n_per_class})")
    if noise < 0:
        raise ParameterError("noise must be non-negative")
    shift = np.zeros(d) if translation is None else np.asarray(translation, dtype=np.float64)
    if shift.shape != (d,):
        raise ParameterError(f"translation must have length {d}, got {shift.shape}")
    src_rng, tgt_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    sx, sy = _sample_blobs(src_rng, c, n_per_class, d, noise)
    tx, ty = _sample_blobs(tgt_rng, c, n_per_class, d, noise)
    tx = _rotate_first_two(tx, rotation, (0.0, 0.0)) + shift
    spec = {"generator": "blobs", "c": c, "n_per_class": n_per_class, "d": d,
            "rotation": float(rotation), "translation": shift.tolist(), "noise": float(noise),
            "seed": seed}
    pair = DomainPair(sx, sy, tx, ty, c, spec)
    return standardize(pair) if standardized else pair


def _sample_moons(rng, n, noise):
    n0 = n - n // 2
    n1 = n // 2
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    return x, y


def gen_moons(rotation: float = 30.0, noise: float = 0.1, n: int = 600, seed: int = 0,
              standardized: bool = True) -> DomainPair:
    """Interleaved half-moons; the target is rotated about the moons' centroid.

    ``n`` is the per-domain sample count, split evenly between the two classes
    (the first class takes the extra sample when ``n`` is odd).
    """
    if n < 4:
        raise ParameterError(f"gen_moons needs n >= 4, got {n}")
    src_rng, tgt_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    sx, sy = _sample_moons(src_rng, n, noise)
    tx, ty = _sample_moons(tgt_rng, n, noise)
    tx = _rotate_first_two(tx, rotation, MOONS_CENTROID)
    spec = {"generator": "moons", "n": n, "rotation": float(rotation), "noise": float(noise),
            "seed": seed}
    pair = DomainPair(sx, sy, tx, ty, 2, spec)
    return standardize(pair) if standardized else pair


class _Stream:
    """Endless sequence of indices: a fresh permutation of ``range(n)`` per epoch."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n <= 0:
            raise ParameterError("cannot sample batches from an empty dataset")
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0
        self.epoch = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
                self.epoch += 1
            step = min(k, self.n - self.pos)
            out.append(self.order[self.pos:self.pos + step])
            self.pos += step
            k -= step
        return np.concatenate(out)


class BatchSampler:
    """Independent shuffled streams over the source and target sets.

    Only ``source_x``, ``source_y`` and ``target_x`` are ever read.
    """

    def __init__(self, pair: DomainPair, batch_size: int = 16, seed: int = 0):
        if batch_size < 1:
            raise ParameterError("batch_size must be positive")
        self.batch_size = batch_size
        self._sx, self._sy, self._tx = pair.source_x, pair.source_y, pair.target_x
        src_rng, tgt_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        self.source = _Stream(len(self._sx), src_rng)
        self.target = _Stream(len(self._tx), tgt_rng)

    def next_batch(self) -> BatchPair:
        si = self.source.take(self.batch_size)
        ti = self.target.take(self.batch_size)
        return BatchPair(self._sx[si], self._sy[si], self._tx[ti])

    __next__ = next_batch

    def __iter__(self):
        return self


def next_batch(sampler: BatchSampler) -> BatchPair:
    return sampler.next_batch()


def to_csv(pair: DomainPair, path) -> None:
    """Write both domains to one CSV with header ``x0..x{d-1},y,domain``."""
    d = pair.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d)] + ["y", "domain"])
        for dom, xs, ys in (("source", pair.source_x, pair.source_y),
                            ("target", pair.target_x, pair.target_y)):
            for row, label in zip(xs, ys):
                w.writerow([repr(float(v)) for v in row] + [int(label), dom])


def from_csv(path, n_classes: Optional[int] = None) -> DomainPair:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[-2:] != ["y", "domain"] or header[:-2] != [f"x{i}" for i in range(len(header) - 2)]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = {"source": ([], []), "target": ([], [])}
        for lineno, rec in enumerate(r, start=2):
            if rec[-1] not in rows:
                raise ValueError(f"{path}:{lineno}: domain must be 'source' or 'target', got {rec[-1]!r}")
            xs, ys = rows[rec[-1]]
            xs.append([float(v) for v in rec[:-2]])
            ys.append(int(rec[-2]))
    d = len(header) - 2
    sx = np.array(rows["source"][0], dtype=np.float64).reshape(-1, d)
    tx = np.array(rows["target"][0], dtype=np.float64).reshape(-1, d)
    sy = np.array(rows["source"][1], dtype=int)
    ty = np.array(rows["target"][1], dtype=int)
    c = n_classes if n_classes is not None else int(max(sy.max(initial=0), ty.max(initial=0))) + 1
    return DomainPair(sx, sy, tx, ty, c, {"generator": "csv", "path": str(path)})
