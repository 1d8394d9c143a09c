"""Shared domain types: losses, datasets, CSV round-tripping, seeded randomness.

Conventions used everywhere else in the package:

* labels are binary ints in ``{0, 1}``;
* model predictions are probabilities in ``[0, 1]``; the hard label is
  ``round(prediction)`` with 0.5 rounding up to 1;
* feature vectors are 1-D float64 numpy arrays (discrete symbols travel as
  their integer codes);
* random streams come from :class:`Rng`, a thin wrapper over the Philox4x64
  counter-based generator, so equal seeds reproduce equal streams on every
  platform.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np

PRED_CLAMP = 1e-12

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15  # splitmix64 increment


class MisalignError(Exception):
    """Base class for package errors."""


class ValidationError(MisalignError):
    """Bad inputs, bad configuration, or violated preconditions."""


class NumericalError(MisalignError):
    """Non-finite values encountered where finite math was required."""


class LossKind(enum.Enum):
    ZERO_ONE = "zero_one"
    LOGISTIC = "logistic"


def hard_label(prediction: float) -> int:
    """Hard label of a probability: round, with 0.5 going to 1."""
    return 1 if prediction >= 0.5 else 0


def _check_label(y: int) -> int:
    if y not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {y!r}")
    return int(y)


def loss(kind: LossKind, prediction: float, y: int) -> float:
    """Per-sample loss of a probabilistic prediction against a binary label.

    ``ZERO_ONE`` returns 1.0 iff the hard label disagrees with ``y``.
    ``LOGISTIC`` returns the negative log likelihood with the prediction
    clamped to ``[PRED_CLAMP, 1 - PRED_CLAMP]``.
    """
    prediction = float(prediction)
    if math.isnan(prediction) or not 0.0 <= prediction <= 1.0:
        raise ValidationError(f"prediction must lie in [0, 1], got {prediction!r}")
    y = _check_label(y)
    if kind is LossKind.ZERO_ONE:
        return float(hard_label(prediction) != y)
    if kind is LossKind.LOGISTIC:
        p = min(max(prediction, PRED_CLAMP), 1.0 - PRED_CLAMP)
        return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))
    raise ValidationError(f"unknown loss kind {kind!r}")


def logistic_loss_vec(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized clamped logistic loss; inputs are 1-D arrays of equal length."""
    p = np.clip(np.asarray(predictions, dtype=float), PRED_CLAMP, 1.0 - PRED_CLAMP)
    yv = np.asarray(labels, dtype=float)
    return -(yv * np.log(p) + (1.0 - yv) * np.log(1.0 - p))


def empirical_risk(predictions, labels, kind: LossKind) -> float:
    """Mean per-sample loss over parallel prediction/label sequences."""
    preds = list(predictions)
    labs = list(labels)
    if len(preds) != len(labs):
        raise ValidationError(
            f"length mismatch: {len(preds)} predictions vs {len(labs)} labels"
        )
    if not preds:
        raise ValidationError("empirical risk of an empty sample set is undefined")
    return sum(loss(kind, p, y) for p, y in zip(preds, labs)) / len(preds)


def zero_one_error(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Vectorized zero-one risk of probabilistic predictions."""
    hard = (np.asarray(predictions, dtype=float) >= 0.5).astype(np.int64)
    labs = np.asarray(labels, dtype=np.int64)
    if hard.shape != labs.shape:
        raise ValidationError("prediction/label shape mismatch")
    if hard.size == 0:
        raise ValidationError("empirical risk of an empty sample set is undefined")
    return float(np.mean(hard != labs))


class Rng:
    """Seeded deterministic random stream.

    Backed by numpy's Philox4x64 counter-based bit generator seeded through
    ``SeedSequence(seed)``; both algorithms are published, so equal seeds
    and call sequences give identical value streams across platforms.
    ``derive(i)`` opens an independent child stream whose seed is the
    splitmix64 hash of ``seed XOR (i + 1) * 0x9E3779B97F4A7C15``; it is used
    for per-split, per-seed, and per-sample sub-streams so that results do
    not depend on scheduling.
    """

    def __init__(self, seed: int):
        if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
            raise ValidationError(f"seed must be an integer, got {seed!r}")
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))

    @staticmethod
    def _splitmix64(z: int) -> int:
        z = (z + _GOLDEN) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def derive(self, index: int) -> "Rng":
        """Independent child stream for worker/split ``index``."""
        if index < 0:
            raise ValidationError("derive index must be nonnegative")
        mixed = self.seed ^ (((index + 1) * _GOLDEN) & _MASK64)
        return Rng(self._splitmix64(mixed))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Rng(seed={self.seed})"


@dataclass(frozen=True)
class Sample:
    """One labeled observation; ``group``/``aux`` are optional annotations."""

    x: np.ndarray
    y: int
    group: int | None = None
    aux: int | None = None


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable column-oriented dataset.

    ``X`` is (n, p) float64, ``y`` is (n,) int8; ``group`` and ``aux`` are
    optional (n,) int arrays. ``origin`` tags which distribution the samples
    came from and never changes after construction.
    """

    X: np.ndarray
    y: np.ndarray
    origin: str
    group: np.ndarray | None = None
    aux: np.ndarray | None = None

    def __post_init__(self):
        if self.origin not in ("source", "target"):
            raise ValidationError(f"origin must be 'source' or 'target', got {self.origin!r}")
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValidationError("X must be a 2-D (n, p) array")
        if not np.isfinite(X).all():
            raise NumericalError("dataset features contain NaN or Inf")
        y = np.asarray(self.y, dtype=np.int8)
        if y.shape != (X.shape[0],):
            raise ValidationError("y must be a 1-D array with one label per row of X")
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValidationError("labels must all be 0 or 1")
        object.__setattr__(self, "X", _freeze(X))
        object.__setattr__(self, "y", _freeze(y))
        for name in ("group", "aux"):
            col = getattr(self, name)
            if col is None:
                continue
            col = np.asarray(col, dtype=np.int64)
            if col.shape != (X.shape[0],):
                raise ValidationError(f"{name} must have one entry per sample")
            if name == "aux" and col.size and not np.isin(col, (0, 1)).all():
                raise ValidationError("aux annotations must be 0 or 1")
            if name == "group" and col.size and (col < 0).any():
                raise ValidationError("group ids must be nonnegative")
            object.__setattr__(self, name, _freeze(col))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def sample(self, i: int) -> Sample:
        return Sample(
            x=self.X[i],
            y=int(self.y[i]),
            group=None if self.group is None else int(self.group[i]),
            aux=None if self.aux is None else int(self.aux[i]),
        )

    def samples(self):
        return [self.sample(i) for i in range(self.n)]

    def take(self, indices, origin: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            X=self.X[idx],
            y=self.y[idx],
            origin=self.origin if origin is None else origin,
            group=None if self.group is None else self.group[idx],
            aux=None if self.aux is None else self.aux[idx],
        )

    def with_origin(self, origin: str) -> "Dataset":
        return Dataset(X=self.X, y=self.y, origin=origin, group=self.group, aux=self.aux)

    # -- CSV format: header f0,...,f{p-1},y[,group][,aux]; UTF-8, LF --------

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            self.write_csv(fh)

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        header = [f"f{j}" for j in range(self.p)] + ["y"]
        if self.group is not None:
            header.append("group")
        if self.aux is not None:
            header.append("aux")
        writer.writerow(header)
        for i in range(self.n):
            row = [repr(float(v)) for v in self.X[i]] + [str(int(self.y[i]))]
            if self.group is not None:
                row.append(str(int(self.group[i])))
            if self.aux is not None:
                row.append(str(int(self.aux[i])))
            writer.writerow(row)

    @classmethod
    def from_csv(cls, path, origin: str = "source") -> "Dataset":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return cls.read_csv(fh, origin=origin)

    @classmethod
    def read_csv(cls, fh, origin: str = "source") -> "Dataset":
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("empty CSV: missing header") from None
        p = sum(1 for name in header if name.startswith("f"))
        expected = [f"f{j}" for j in range(p)] + ["y"]
        has_group = "group" in header
        has_aux = "aux" in header
        if has_group:
            expected.append("group")
        if has_aux:
            expected.append("aux")
        if header != expected:
            raise ValidationError(f"unexpected CSV header {header!r}")
        X, y, group, aux = [], [], [], []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"CSV row width {len(row)} != header width {len(header)}")
            X.append([float(v) for v in row[:p]])
            y.append(int(row[p]))
            k = p + 1
            if has_group:
                group.append(int(row[k]))
                k += 1
            if has_aux:
                aux.append(int(row[k]))
        if not X:
            raise ValidationError("CSV contains no samples")
        return cls(
            X=np.asarray(X, dtype=np.float64),
            y=np.asarray(y, dtype=np.int8),
            origin=origin,
            group=np.asarray(group, dtype=np.int64) if has_group else None,
            aux=np.asarray(aux, dtype=np.int64) if has_aux else None,
        )

    def csv_bytes(self) -> bytes:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue().encode("utf-8")


def split_dataset(d: Dataset, fractions, rng: Rng) -> list[Dataset]:
    """Disjoint shuffled cover of ``d`` with sizes proportional to ``fractions``.

    Sizes are assigned by largest remainder so they sum to ``d.n`` exactly;
    the shuffle is deterministic given the rng's seed.
    """
    fractions = [float(f) for f in fractions]
    if d.n == 0:
        raise ValidationError("cannot split an empty dataset")
    if not fractions or any(f <= 0 for f in fractions):
        raise ValidationError("fractions must all be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must sum to 1, got {sum(fractions)!r}")
    perm = rng.permutation(d.n)
    base = [int(math.floor(f * d.n)) for f in fractions]
    short = d.n - sum(base)
    remainders = sorted(
        range(len(fractions)),
        key=lambda i: (-(fractions[i] * d.n - base[i]), i),
    )
    for i in remainders[:short]:
        base[i] += 1
    parts = []
    start = 0
    for size in base:
        parts.append(d.take(perm[start : start + size]))
        start += size
    return parts
