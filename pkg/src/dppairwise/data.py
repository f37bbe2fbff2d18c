"""Samples, datasets, parameter vectors and pair enumeration."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

PathLike = Union[str, Path]


class DatasetParseError(ValueError):
    """A CSV row could not be turned into a finite sample."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class BoundsError(ValueError):
    """A sample violates the declared feature/label bounds."""

    def __init__(self, index: int, message: str):
        super().__init__(f"sample {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class Bounds:
    """Declared data domain: feature dimension and norm/label bounds."""

    d: int
    x_max: float = 1.0
    y_max: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not (self.x_max > 0 and self.y_max > 0):
            raise ValueError("bounds must be positive")


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).reshape(-1)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))
        if not (np.all(np.isfinite(x)) and math.isfinite(self.y)):
            raise ValueError("sample entries must be finite")

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return self.y == other.y and np.array_equal(self.x, other.x)

    __hash__ = None


class Dataset:
    """An immutable, ordered collection of ``n >= 2`` samples.

    Stored column-wise (``X`` of shape ``(n, d)``, ``y`` of shape ``(n,)``) so
    the risk code can vectorize over pairs; :meth:`__getitem__` returns
    :class:`Sample` views for per-record access.
    """

    def __init__(
        self,
        X: np.ndarray,
        y: np.ndarray,
        bounds: Optional[Bounds] = None,
        seed: Optional[int] = None,
        tol: float = 1e-12,
    ):
        X = np.array(X, dtype=np.float64)
        y = np.array(y, dtype=np.float64).reshape(-1)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different lengths")
        if X.shape[0] < 2:
            raise ValueError("a pairwise dataset needs n >= 2 samples")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            bad = int(np.flatnonzero(~(np.isfinite(X).all(axis=1) & np.isfinite(y)))[0])
            raise BoundsError(bad, "non-finite entry")
        if bounds is None:
            bounds = Bounds(d=X.shape[1], x_max=math.inf, y_max=math.inf)
        if bounds.d != X.shape[1]:
            raise ValueError(f"expected d={bounds.d} features, got {X.shape[1]}")
        norms = np.linalg.norm(X, axis=1)
        over = np.flatnonzero(norms > bounds.x_max * (1 + tol))
        if over.size:
            i = int(over[0])
            raise BoundsError(i, f"||x||_2 = {norms[i]!r} exceeds x_max = {bounds.x_max!r}")
        over = np.flatnonzero(np.abs(y) > bounds.y_max * (1 + tol))
        if over.size:
            i = int(over[0])
            raise BoundsError(i, f"|y| = {abs(y[i])!r} exceeds y_max = {bounds.y_max!r}")
        X.setflags(write=False)
        y.setflags(write=False)
        self._X = X
        self._y = y
        self.bounds = bounds
        self.seed = seed

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], bounds: Optional[Bounds] = None, seed=None):
        X = np.stack([s.x for s in samples])
        y = np.array([s.y for s in samples])
        return cls(X, y, bounds=bounds, seed=seed)

    @property
    def X(self) -> np.ndarray:
        return self._X

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def n(self) -> int:
        return self._X.shape[0]

    @property
    def d(self) -> int:
        return self._X.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i: int) -> Sample:
        return Sample(self._X[i], self._y[i])

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(self.n))

    @property
    def samples(self) -> list:
        return list(self)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self._X, other._X) and np.array_equal(self._y, other._y)

    __hash__ = None

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d}, bounds={self.bounds})"

    def without(self, i: int) -> "Dataset":
        """The leave-one-out dataset with sample ``i`` removed."""
        if not 0 <= i < self.n:
            raise IndexError(i)
        keep = np.arange(self.n) != i
        return Dataset(self._X[keep], self._y[keep], bounds=self.bounds)

    def replace(self, i: int, sample: Sample) -> "Dataset":
        """The adjacent dataset with sample ``i`` swapped for ``sample``."""
        if not 0 <= i < self.n:
            raise IndexError(i)
        X = self._X.copy()
        y = self._y.copy()
        X[i] = sample.x
        y[i] = sample.y
        return Dataset(X, y, bounds=self.bounds)


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus its layout tag.

    ``layout`` is ``"vector"`` (p = d) or ``"matrix"`` (a d x d matrix stored
    row-major, p = d**2).
    """

    theta: np.ndarray
    layout: str = "vector"
    radius: Optional[float] = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameters must be finite")
        if self.layout not in ("vector", "matrix"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.layout == "matrix":
            d = math.isqrt(theta.size)
            if d * d != theta.size:
                raise ValueError("matrix layout needs a square number of entries")
        if self.radius is not None and np.linalg.norm(theta) > self.radius * (1 + 1e-12):
            raise ValueError(f"parameter norm exceeds the attached radius {self.radius!r}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def p(self) -> int:
        return self.theta.size

    def as_matrix(self) -> np.ndarray:
        d = math.isqrt(self.p)
        return self.theta.reshape(d, d)

    def __array__(self, dtype=None, copy=None):
        return self.theta if dtype is None else self.theta.astype(dtype)


def pair_stream(D: Union[Dataset, int]) -> Iterator[tuple]:
    """Ordered pairs ``(i, j)``, ``i != j``: i ascending, then j ascending."""
    n = D if isinstance(D, int) else D.n
    for i in range(n):
        for j in range(n):
            if j != i:
                yield (i, j)


def pair_indices(n: int) -> tuple:
    """Arrays ``(I, J)`` with the same order as :func:`pair_stream`."""
    I, J = np.divmod(np.arange(n * n), n)
    keep = I != J
    return I[keep], J[keep]


# -- synthetic data ---------------------------------------------------------

def uniform_ball(rng: np.random.Generator, m: int, d: int, radius: float = 1.0) -> np.ndarray:
    """``m`` points uniform in the d-dimensional ball of the given radius."""
    v = rng.standard_normal((m, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    r = radius * rng.random((m, 1)) ** (1.0 / d)
    return v / norms * r


@dataclass(frozen=True)
class SyntheticDistribution:
    """Generative model behind :func:`gen_synthetic`.

    Features are uniform in the unit ball. A hidden unit vector ``w`` (drawn
    from ``dist_seed``, so it is shared by every dataset from this
    distribution) defines the labels: ranking uses
    ``clip(w.x + label_noise * N(0,1), -1, 1)``, metric uses ``sign(w.x)``
    (ties go to +1).
    """

    kind: str
    d: int
    dist_seed: int = 0
    label_noise: float = 0.1
    w: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("ranking", "metric"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        w = np.random.default_rng([self.dist_seed, self.d, 0x5EED]).standard_normal(self.d)
        w /= np.linalg.norm(w)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def bounds(self) -> Bounds:
        return Bounds(d=self.d, x_max=1.0, y_max=1.0)

    def labels(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        score = X @ self.w
        if self.kind == "ranking":
            return np.clip(score + self.label_noise * rng.standard_normal(len(X)), -1.0, 1.0)
        return np.where(score >= 0, 1.0, -1.0)

    def draw(self, m: int, rng: np.random.Generator) -> tuple:
        X = uniform_ball(rng, m, self.d)
        return X, self.labels(X, rng)

    def sample(self, n: int, rng: np.random.Generator, seed=None) -> Dataset:
        X, y = self.draw(n, rng)
        return Dataset(X, y, bounds=self.bounds, seed=seed)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "dist_seed": self.dist_seed,
            "label_noise": self.label_noise,
            "features": "uniform in unit ball",
            "labels": (
                "clip(w.x + label_noise*N(0,1), -1, 1)" if self.kind == "ranking" else "sign(w.x)"
            ),
        }


def gen_synthetic(kind: str, n: int, d: int, seed: int, dist_seed: int = 0) -> Dataset:
    """Draw ``n`` i.i.d. samples; identical arguments give identical datasets."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if d < 1:
        raise ValueError("d must be >= 1")
    dist = SyntheticDistribution(kind, d, dist_seed=dist_seed)
    return dist.sample(n, np.random.default_rng(seed), seed=seed)


def with_outlier(D: Dataset, dist: SyntheticDistribution, index: int = 0, shrink: float = 0.5) -> Dataset:
    """Contaminate ``D`` with one extreme, label-flipped sample.

    Every other feature vector is shrunk by ``shrink`` and sample ``index``
    becomes ``x = -w`` (unit norm) carrying the label ``+1`` that the hidden
    model would assign to ``+w``. The result stays inside the unit bounds.
    """
    X = np.array(D.X) * shrink
    y = np.array(D.y)
    if dist.kind == "ranking":
        y = dist.labels(X, np.random.default_rng(D.seed))
    X[index] = -dist.w
    y[index] = 1.0
    return Dataset(X, y, bounds=D.bounds)


# -- CSV I/O ----------------------------------------------------------------

def save_dataset(D: Dataset, path: PathLike) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{k}" for k in range(D.d)] + ["y"])
        for x, y in zip(D.X, D.y):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def load_dataset(path: PathLike, descriptor: Bounds) -> Dataset:
    """Parse a ``x0,...,x{d-1},y`` CSV file and validate it against ``descriptor``.

    Row indices in errors count data rows from 0 (the header is not counted).
    """
    path = Path(path)
    d = descriptor.d
    expected = [f"x{k}" for k in range(d)] + ["y"]
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(-1, "empty file") from None
        if [h.strip() for h in header] != expected:
            raise DatasetParseError(-1, f"header must be {','.join(expected)}")
        for r, row in enumerate(reader):
            if len(row) != d + 1:
                raise DatasetParseError(r, f"expected {d + 1} columns, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise DatasetParseError(r, str(exc)) from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetParseError(r, "non-finite value")
            rows.append(vals)
    if len(rows) < 2:
        raise DatasetParseError(len(rows), "a pairwise dataset needs at least 2 rows")
    arr = np.array(rows, dtype=np.float64)
    return Dataset(arr[:, :d], arr[:, d], bounds=descriptor)
