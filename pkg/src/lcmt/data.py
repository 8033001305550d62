"""Synthetic datasets, CSV ingestion, labeled/unlabeled split, batching and input noise."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np


class CsvError(ValueError):
    pass


class CsvFileNotFound(CsvError, FileNotFoundError):
    pass


class MalformedNumber(CsvError):
    pass


class RaggedRow(CsvError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    labeled_mask: np.ndarray
    K: int

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],) or self.labeled_mask.shape != self.y.shape:
            raise ValueError("Dataset arrays have inconsistent shapes")

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_l(self) -> int:
        return int(self.labeled_mask.sum())

    @property
    def n_u(self) -> int:
        return self.N - self.n_l

    @property
    def labeled_idx(self) -> np.ndarray:
        return np.flatnonzero(self.labeled_mask)

    @property
    def unlabeled_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.labeled_mask)

    def labels_of(self, idx: np.ndarray) -> np.ndarray:
        """Labels for labeled rows only."""
        idx = np.asarray(idx)
        if not self.labeled_mask[idx].all():
            raise PermissionError("requested labels of unlabeled rows")
        return self.y[idx]


def _dataset(X, y, K) -> Dataset:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    return Dataset(X=X, y=y, labeled_mask=np.zeros(len(y), dtype=bool), K=K)


def _class_sizes(n: int, k: int) -> list[int]:
    return [n // k + (1 if c < n % k else 0) for c in range(k)]


def gen_two_moons(n: int, noise_sigma: float, seed: int) -> Dataset:
    """Two interleaved unit half-circles with isotropic Gaussian noise."""
    if n < 2:
        raise ValueError("two moons needs n >= 2")
    rng = np.random.default_rng(seed)
    n0, n1 = _class_sizes(n, 2)
    t0 = rng.uniform(0.0, math.pi, n0)
    t1 = rng.uniform(0.0, math.pi, n1)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    X = np.concatenate([upper, lower])
    if noise_sigma > 0:
        X = X + rng.normal(0.0, noise_sigma, X.shape)
    y = np.repeat([0, 1], [n0, n1])
    perm = rng.permutation(n)
    return _dataset(X[perm], y[perm], 2)


def blob_centers(k: int, radius: float = 3.0) -> np.ndarray:
    angle = 2 * math.pi * np.arange(k) / k
    return radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)


def gen_blobs(n: int, centers, sigma: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs; ``centers`` is a count (placed on a circle) or a k x d array."""
    centers = blob_centers(centers) if np.isscalar(centers) else np.asarray(centers, dtype=float)
    k = centers.shape[0]
    if n < k:
        raise ValueError("blobs needs at least one point per center")
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(k), _class_sizes(n, k))
    X = centers[y]
    if sigma > 0:
        X = X + rng.normal(0.0, sigma, X.shape)
    perm = rng.permutation(n)
    return _dataset(X[perm], y[perm], k)


def gen_circles(n: int, noise: float, seed: int, radii: tuple[float, float] = (1.0, 0.5)) -> Dataset:
    """Concentric circles, class 0 on the outer radius."""
    if n < 2:
        raise ValueError("circles needs n >= 2")
    rng = np.random.default_rng(seed)
    sizes = _class_sizes(n, 2)
    y = np.repeat([0, 1], sizes)
    t = rng.uniform(0.0, 2 * math.pi, n)
    r = np.asarray(radii, dtype=float)[y]
    X = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    if noise > 0:
        X = X + rng.normal(0.0, noise, X.shape)
    perm = rng.permutation(n)
    return _dataset(X[perm], y[perm], 2)


def split_labeled(ds: Dataset, n_l: int, seed: int) -> Dataset:
    """Stratified choice of ``n_l`` labeled rows; the rest become unlabeled."""
    if n_l < ds.K:
        raise ValueError(f"n_l={n_l} is smaller than the class count {ds.K}")
    if n_l > ds.N:
        raise ValueError(f"n_l={n_l} exceeds dataset size {ds.N}")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(ds.y == c) for c in range(ds.K)]
    # the n_l % K remainder goes to randomly chosen classes
    quota = [int(q) for q in np.asarray(_class_sizes(n_l, ds.K))[rng.permutation(ds.K)]]
    for c in range(ds.K):
        if quota[c] > len(by_class[c]):
            raise ValueError(f"class {c} has only {len(by_class[c])} rows, needs {quota[c]} labels")
    mask = np.zeros(ds.N, dtype=bool)
    for c in range(ds.K):
        mask[rng.choice(by_class[c], size=quota[c], replace=False)] = True
    return replace(ds, labeled_mask=mask)


@dataclass(frozen=True)
class PerturbSpec:
    gaussian_sigma: float = 0.0
    jitter: float = 0.0

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.jitter < 0:
            raise ValueError("perturbation magnitudes must be non-negative")


def perturb(X: np.ndarray, spec: PerturbSpec, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of X: additive Gaussian noise plus optional uniform offset."""
    out = np.array(X, dtype=np.float64)
    if spec.gaussian_sigma > 0:
        out += rng.normal(0.0, spec.gaussian_sigma, out.shape)
    if spec.jitter > 0:
        out += rng.uniform(-spec.jitter, spec.jitter, out.shape)
    return out


@dataclass(frozen=True)
class BatchSpec:
    b_l: int
    b_u: int

    def __post_init__(self):
        if self.b_l < 1 or self.b_u < 1:
            raise ValueError("batch sizes must be >= 1")


@dataclass
class Batch:
    """Labeled rows carry labels; unlabeled rows do not."""

    x_l: np.ndarray
    y_l: np.ndarray
    x_u: np.ndarray
    idx_l: np.ndarray
    idx_u: np.ndarray


@dataclass
class BatchSampler:
    """Two independent index streams over the labeled and unlabeled partitions.

    The unlabeled stream defines the epoch (``n_u // b_u`` batches, reshuffled
    each epoch). The labeled stream is drawn without replacement and
    reshuffled whenever fewer than ``b_l`` indices remain.
    """

    ds: Dataset
    spec: BatchSpec
    rng: np.random.Generator
    _lab_queue: list = field(default_factory=list)
    _unl_queue: list = field(default_factory=list)

    def __post_init__(self):
        if self.spec.b_l > self.ds.n_l:
            raise ValueError(f"labeled batch {self.spec.b_l} exceeds labeled partition {self.ds.n_l}")
        if self.spec.b_u > self.ds.n_u:
            raise ValueError(f"unlabeled batch {self.spec.b_u} exceeds unlabeled partition {self.ds.n_u}")

    @property
    def batches_per_epoch(self) -> int:
        return self.ds.n_u // self.spec.b_u

    def start_epoch(self) -> None:
        self._unl_queue = [int(i) for i in self.rng.permutation(self.ds.unlabeled_idx)]

    def next_indices(self) -> tuple[np.ndarray, np.ndarray]:
        b_l, b_u = self.spec.b_l, self.spec.b_u
        if len(self._lab_queue) < b_l:
            self._lab_queue = [int(i) for i in self.rng.permutation(self.ds.labeled_idx)]
        if len(self._unl_queue) < b_u:
            self.start_epoch()
        li, self._lab_queue = self._lab_queue[:b_l], self._lab_queue[b_l:]
        ui, self._unl_queue = self._unl_queue[:b_u], self._unl_queue[b_u:]
        return np.array(li, dtype=np.int64), np.array(ui, dtype=np.int64)

    def next_batch(self) -> Batch:
        li, ui = self.next_indices()
        return Batch(x_l=self.ds.X[li], y_l=self.ds.labels_of(li), x_u=self.ds.X[ui], idx_l=li, idx_u=ui)

    def state(self) -> dict:
        return {"lab": list(self._lab_queue), "unl": list(self._unl_queue)}

    def restore(self, state: dict) -> None:
        self._lab_queue = [int(i) for i in state["lab"]]
        self._unl_queue = [int(i) for i in state["unl"]]


def load_csv(path) -> Dataset:
    """Read ``f0..f{d-1},label``. Errors name the 1-based data row."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise CsvFileNotFound(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise CsvError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        if header[-1] != "label" or len(header) < 2:
            raise CsvError(f"{path}: last column must be 'label', got header {header}")
        width = len(header)
        feats, labels = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise RaggedRow(f"{path}: row {row_no} has {len(row)} fields, expected {width}")
            try:
                feats.append([float(v) for v in row[:-1]])
            except ValueError as exc:
                raise MalformedNumber(f"{path}: row {row_no}: {exc}") from None
            try:
                labels.append(int(row[-1]))
            except ValueError:
                raise MalformedNumber(f"{path}: row {row_no}: bad label {row[-1]!r}") from None
    if not feats:
        raise CsvError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    if y.min() < 0:
        raise CsvError(f"{path}: negative label")
    return _dataset(np.asarray(feats), y, int(y.max()) + 1)


def write_csv(path, ds: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(ds.d)] + ["label"])
        for x, y in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
