"""Exact per-sample quantities on enumerable discrete feature spaces.

For a labeling function f and a point x this module computes, by brute
force over the full domain:

* the active set A(f, x): the agreement indices of the minimizer z-hat that
  keeps f's label while matching x on as few coordinates as possible
  (ties broken toward the lexicographically smallest symbol-code tuple, so
  results are deterministic and reproducible across implementations);
* the function difference d(theta, f, x): the maximum disagreement between
  theta and f over all z that match x on A(f, x);
* the dependence term r(theta, A, x, y): whether sweeping the active-set
  coordinates (all other coordinates pinned to x) can move theta's output
  away from the label y;
* the perturbation set Q(x): all vectors obtained from x by sweeping the
  misaligned active set A(f_m, x).

Everything here is discrete-only and capped at 2^20 enumerable points;
search-based estimators for continuous inputs live in ``attacks``.

A known edge: for non-monotone f (parity-like functions) the minimizer can
share zero coordinates with x, producing an empty active set even though f
reads those coordinates. The definition is implemented literally; worlds
where this occurs are surfaced via :func:`degenerate_active_sets`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import ValidationError

DOMAIN_CAP = 1 << 20
EXACT_CACHE_CAP = 1 << 10  # dense D x D masks; plenty for toy worlds


@dataclass(frozen=True)
class DiscreteDomain:
    """Finite product space with per-coordinate alphabets {0..size-1}.

    Enumeration order is row-major over coordinates with coordinate 0
    fastest: point index = sum_i x_i * prod_{j<i} |alphabet_j|.
    """

    alphabet_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.alphabet_sizes)
        if not sizes or any(s < 2 for s in sizes):
            raise ValidationError("every coordinate needs an alphabet of size >= 2")
        object.__setattr__(self, "alphabet_sizes", sizes)
        if self.size > DOMAIN_CAP:
            raise ValidationError(f"domain size {self.size} exceeds cap {DOMAIN_CAP}")

    @property
    def p(self) -> int:
        return len(self.alphabet_sizes)

    @cached_property
    def size(self) -> int:
        out = 1
        for s in self.alphabet_sizes:
            out *= s
        return out

    @cached_property
    def strides(self) -> tuple[int, ...]:
        strides = []
        acc = 1
        for s in self.alphabet_sizes:
            strides.append(acc)
            acc *= s
        return tuple(strides)

    @cached_property
    def matrix(self) -> np.ndarray:
        """All points as an (size, p) int16 array in enumeration order."""
        idx = np.arange(self.size)
        cols = [
            ((idx // stride) % s).astype(np.int16)
            for stride, s in zip(self.strides, self.alphabet_sizes)
        ]
        out = np.stack(cols, axis=1)
        out.setflags(write=False)
        return out

    def check_point(self, x) -> np.ndarray:
        arr = np.asarray(x)
        if arr.shape != (self.p,):
            raise ValidationError(f"expected a length-{self.p} vector, got shape {arr.shape}")
        codes = np.rint(arr).astype(np.int64)
        if np.abs(arr - codes).max(initial=0.0) > 1e-9:
            raise ValidationError("discrete point has non-integer coordinates")
        for i, (c, s) in enumerate(zip(codes, self.alphabet_sizes)):
            if not 0 <= c < s:
                raise ValidationError(f"coordinate {i} value {c} outside alphabet of size {s}")
        return codes

    def index_of(self, x) -> int:
        codes = self.check_point(x)
        return int(sum(int(c) * st for c, st in zip(codes, self.strides)))

    def indices_of(self, X) -> np.ndarray:
        """Vectorized index lookup for an (n, p) array of points."""
        codes = np.rint(np.asarray(X)).astype(np.int64)
        return codes @ np.asarray(self.strides, dtype=np.int64)

    def vector_of(self, index: int) -> np.ndarray:
        if not 0 <= index < self.size:
            raise ValidationError(f"domain index {index} out of range")
        return self.matrix[index].astype(np.int64)


@dataclass(frozen=True)
class LabelingFn:
    """Total deterministic map from domain points to binary labels.

    Stored as a truth table over the enumeration order, so evaluation is a
    table lookup and exhaustive operations are vector operations.
    """

    domain: DiscreteDomain
    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.uint8)
        if table.shape != (self.domain.size,):
            raise ValidationError(
                f"truth table must have {self.domain.size} entries, got {table.shape}"
            )
        if table.size and not np.isin(table, (0, 1)).all():
            raise ValidationError("truth table entries must be 0 or 1")
        table = table.copy()
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @classmethod
    def from_callable(cls, domain: DiscreteDomain, fn) -> "LabelingFn":
        vals = [int(fn(row.astype(np.int64))) for row in domain.matrix]
        return cls(domain=domain, table=np.asarray(vals, dtype=np.uint8))

    def __call__(self, x) -> int:
        return int(self.table[self.domain.index_of(x)])

    def complement(self) -> "LabelingFn":
        return LabelingFn(domain=self.domain, table=1 - self.table)

    def depends_only_on(self, block) -> bool:
        """True iff the table is invariant to coordinates outside ``block``."""
        block = sorted(int(i) for i in block)
        M = self.domain.matrix
        key = np.zeros(self.domain.size, dtype=np.int64)
        acc = 1
        for i in block:
            key += M[:, i].astype(np.int64) * acc
            acc *= self.domain.alphabet_sizes[i]
        order = np.argsort(key, kind="stable")
        ks, vs = key[order], self.table[order]
        same_group = np.diff(ks) == 0
        return not np.any(same_group & (np.diff(vs.astype(np.int8)) != 0))


@dataclass(frozen=True)
class ActiveSet:
    """Minimum feature set f needs to map x to its label, plus the witness."""

    indices: tuple[int, ...]
    witness: np.ndarray


def predictor_values(theta, Z: np.ndarray) -> np.ndarray:
    """Hard labels of any predictor over an (n, p) array of points."""
    if isinstance(theta, LabelingFn):
        return theta.table[theta.domain.indices_of(Z)]
    if hasattr(theta, "batch"):
        vals = np.asarray(theta.batch(np.asarray(Z, dtype=np.float64)), dtype=np.int64)
    else:
        vals = np.asarray([int(theta(z)) for z in Z], dtype=np.int64)
    if vals.size and not np.isin(vals, (0, 1)).all():
        raise ValidationError("predictor returned a value outside {0, 1}")
    return vals.astype(np.uint8)


def predictor_table(domain: DiscreteDomain, theta) -> np.ndarray:
    """Truth table of a predictor over the whole enumerated domain."""
    if isinstance(theta, LabelingFn):
        if theta.domain is not domain and theta.domain != domain:
            raise ValidationError("labeling function domain mismatch")
        return theta.table
    return predictor_values(theta, domain.matrix)


def active_set(f: LabelingFn, x) -> ActiveSet:
    """Active set A(f, x) by exhaustive minimization.

    Among all z with f(z) = f(x), finds one matching x on the fewest
    coordinates; ties resolve to the lexicographically smallest z as a
    symbol-code tuple. The active set is the witness's agreement indices.
    """
    dom = f.domain
    codes = dom.check_point(x)
    fx = f(codes)
    M = dom.matrix
    same_label = np.nonzero(f.table == fx)[0]
    agrees = (M[same_label] == codes).sum(axis=1)
    best = agrees.min()
    ties = same_label[agrees == best]
    if ties.size == 1:
        widx = int(ties[0])
    else:
        tied = M[ties]
        order = np.lexsort(tuple(tied[:, j] for j in range(dom.p - 1, -1, -1)))
        widx = int(ties[order[0]])
    witness = M[widx].astype(np.int64)
    indices = tuple(int(i) for i in np.nonzero(witness == codes)[0])
    return ActiveSet(indices=indices, witness=witness)


def fn_difference(theta, f: LabelingFn, x) -> int:
    """d(theta, f, x): max disagreement over z matching x on A(f, x).

    Asymmetric: the active set comes from the second argument. theta's
    output is rounded to a hard label before comparison.
    """
    dom = f.domain
    codes = dom.check_point(x)
    a = active_set(f, codes)
    M = dom.matrix
    if a.indices:
        mask = (M[:, list(a.indices)] == codes[list(a.indices)]).all(axis=1)
    else:
        mask = np.ones(dom.size, dtype=bool)
    t_vals = predictor_values(theta, M[mask])
    return int((t_vals != f.table[mask]).any())


def _sweep_candidates(dom: DiscreteDomain, codes: np.ndarray, indices) -> np.ndarray:
    """(k, p) matrix of points obtained from x by sweeping ``indices``."""
    indices = sorted(int(i) for i in indices)
    count = 1
    for i in indices:
        count *= dom.alphabet_sizes[i]
        if count > DOMAIN_CAP:
            raise ValidationError("active-set sweep too large to enumerate")
    Z = np.tile(codes, (count, 1))
    for row, combo in enumerate(
        itertools.product(*(range(dom.alphabet_sizes[i]) for i in indices))
    ):
        for i, v in zip(indices, combo):
            Z[row, i] = v
    return Z


def dependence_r(theta, a: ActiveSet, x, y: int, domain: DiscreteDomain) -> int:
    """r(theta, A, x, y): 1 iff sweeping A's coordinates can move theta off y.

    Coordinates outside the active set stay pinned to x; y is the label of
    the original sample.
    """
    if y not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {y!r}")
    codes = domain.check_point(x)
    Z = _sweep_candidates(domain, codes, a.indices)
    vals = predictor_values(theta, Z)
    return int((vals != y).any())


def perturbation_set(world: "World", x):
    """Iterator over Q(x): x with its misaligned active set swept.

    Yields every z agreeing with x outside A(f_m, x), including x itself,
    in deterministic enumeration order.
    """
    codes = world.domain.check_point(x)
    a = active_set(world.f_m, codes)
    for row in _sweep_candidates(world.domain, codes, a.indices):
        yield row.astype(np.int64)


@dataclass(frozen=True)
class World:
    """Fully enumerable discrete feature space with paired labeling functions.

    By construction f_h reads only ``aligned_block`` and f_m only
    ``misaligned_block`` (disjoint), and the two agree exactly on
    ``support`` (domain indices of the source support). Ground-truth labels
    everywhere are f_h.
    """

    domain: DiscreteDomain
    f_h: LabelingFn
    f_m: LabelingFn
    aligned_block: tuple[int, ...]
    misaligned_block: tuple[int, ...]
    support: np.ndarray

    def __post_init__(self):
        aligned = tuple(sorted(int(i) for i in self.aligned_block))
        mis = tuple(sorted(int(i) for i in self.misaligned_block))
        object.__setattr__(self, "aligned_block", aligned)
        object.__setattr__(self, "misaligned_block", mis)
        p = self.domain.p
        all_idx = aligned + mis
        if len(set(all_idx)) != len(all_idx):
            raise ValidationError("aligned and misaligned blocks must be disjoint")
        if any(not 0 <= i < p for i in all_idx):
            raise ValidationError("block indices out of range")
        for fn, name in ((self.f_h, "f_h"), (self.f_m, "f_m")):
            if fn.domain != self.domain:
                raise ValidationError(f"{name} is defined over a different domain")
        support = np.unique(np.asarray(self.support, dtype=np.int64))
        if support.size == 0:
            raise ValidationError("source support is empty")
        if support.min() < 0 or support.max() >= self.domain.size:
            raise ValidationError("support indices out of range")
        support.setflags(write=False)
        object.__setattr__(self, "support", support)
        agreement = np.nonzero(self.f_h.table == self.f_m.table)[0]
        if not np.array_equal(support, agreement):
            raise ValidationError(
                "support must be exactly the f_h = f_m agreement set "
                f"(stored {support.size} points, derived {agreement.size})"
            )
        if not self.f_h.depends_only_on(aligned):
            raise ValidationError("f_h depends on coordinates outside the aligned block")
        if not self.f_m.depends_only_on(mis):
            raise ValidationError("f_m depends on coordinates outside the misaligned block")

    @property
    def p(self) -> int:
        return self.domain.p

    def support_points(self) -> np.ndarray:
        return self.domain.matrix[self.support].astype(np.int64)

    def labels_of(self, X) -> np.ndarray:
        return self.f_h.table[self.domain.indices_of(X)]


def degenerate_active_sets(world: World) -> list[int]:
    """Support indices whose misaligned active set is empty (non-monotone f_m)."""
    out = []
    for idx in world.support:
        x = world.domain.vector_of(int(idx))
        if not active_set(world.f_m, x).indices:
            out.append(int(idx))
    return out


class ExactCache:
    """Dense per-point masks enabling vectorized exhaustive checks.

    For every domain point x_i and each labeling function f, precomputes the
    slice mask S_f[i] (z matching x_i on A(f, x_i)) and the sweep mask
    Q_f[i] (z differing from x_i only inside A(f, x_i)). Member truth
    tables then turn into d/r/correctness matrices via boolean algebra.
    """

    def __init__(self, world: World):
        if world.domain.size > EXACT_CACHE_CAP:
            raise ValidationError(
                f"exhaustive cache supports at most {EXACT_CACHE_CAP} points, "
                f"got {world.domain.size}"
            )
        self.world = world
        dom = world.domain
        D = dom.size
        M = dom.matrix
        self.labels = world.f_h.table.astype(np.uint8)
        self.active_h: list[tuple[int, ...]] = []
        self.active_m: list[tuple[int, ...]] = []
        S_h = np.zeros((D, D), dtype=bool)
        S_m = np.zeros((D, D), dtype=bool)
        Q_h = np.zeros((D, D), dtype=bool)
        Q_m = np.zeros((D, D), dtype=bool)
        for i in range(D):
            x = M[i].astype(np.int64)
            for fn, act_list, S, Q in (
                (world.f_h, self.active_h, S_h, Q_h),
                (world.f_m, self.active_m, S_m, Q_m),
            ):
                a = active_set(fn, x)
                act_list.append(a.indices)
                inside = list(a.indices)
                outside = [j for j in range(dom.p) if j not in a.indices]
                S[i] = (M[:, inside] == x[inside]).all(axis=1) if inside else True
                Q[i] = (M[:, outside] == x[outside]).all(axis=1) if outside else True
        self.S_h, self.S_m, self.Q_h, self.Q_m = S_h, S_m, Q_h, Q_m

    def _masks(self, which: str):
        if which == "f_h":
            return self.S_h, self.Q_h, self.world.f_h.table
        if which == "f_m":
            return self.S_m, self.Q_m, self.world.f_m.table
        raise ValidationError(f"unknown labeling function {which!r}")

    @staticmethod
    def _tables(tables) -> np.ndarray:
        T = np.atleast_2d(np.asarray(tables, dtype=np.int32))
        return T

    def correct(self, tables) -> np.ndarray:
        """(m, D) matrix: member output equals the ground-truth label."""
        T = self._tables(tables)
        return T == self.labels[None, :].astype(np.int32)

    def d_matrix(self, tables, which: str) -> np.ndarray:
        """(m, D) matrix of d(theta, f, x_i) over all members and points."""
        S, _, f_table = self._masks(which)
        T = self._tables(tables)
        disagree = (T != f_table[None, :].astype(np.int32)).astype(np.int32)
        return (disagree @ S.T.astype(np.int32)) > 0

    def r_matrix(self, tables, which: str) -> np.ndarray:
        """(m, D) matrix of r(theta, A(f, x_i), x_i, y_i)."""
        _, Q, _ = self._masks(which)
        T = self._tables(tables)
        zeros = (T == 0).astype(np.int32) @ Q.T.astype(np.int32)
        ones = (T == 1).astype(np.int32) @ Q.T.astype(np.int32)
        y_row = self.labels[None, :]
        return np.where(y_row == 1, zeros > 0, ones > 0)


def verify_support_agreement(world: World) -> None:
    """A2: labeling functions agree on the source support; raises otherwise."""
    bad = np.nonzero(world.f_h.table[world.support] != world.f_m.table[world.support])[0]
    if bad.size:
        raise ValidationError(
            f"A2 violated: f_h != f_m at support point index {int(world.support[bad[0]])}"
        )


def verify_feature_separability(world: World, cache: ExactCache | None = None) -> None:
    """A4-1: active sets of f_h and f_m are disjoint at every point."""
    cache = cache or ExactCache(world)
    for i, (ah, am) in enumerate(zip(cache.active_h, cache.active_m)):
        if set(ah) & set(am):
            raise ValidationError(f"A4-1 violated at domain index {i}: {ah} meets {am}")


def realized_hypothesis_violations(world: World, tables, names=None, cache: ExactCache | None = None):
    """All (member, support index) pairs violating the realized-hypothesis assumption.

    A member violates A3 at a support point x when it is non-constant,
    classifies x correctly, and still differs from both labeling functions
    somewhere on their slices (d(theta, f_h, x) = d(theta, f_m, x) = 1).
    """
    cache = cache or ExactCache(world)
    T = np.atleast_2d(np.asarray(tables, dtype=np.uint8))
    names = list(names) if names is not None else [f"theta_{i}" for i in range(T.shape[0])]
    nonconst = T.min(axis=1) != T.max(axis=1)
    correct = cache.correct(T)
    bad = correct & cache.d_matrix(T, "f_h") & cache.d_matrix(T, "f_m")
    support_mask = np.zeros(world.domain.size, dtype=bool)
    support_mask[world.support] = True
    bad &= support_mask[None, :]
    bad &= nonconst[:, None]
    out = []
    for m, i in zip(*np.nonzero(bad)):
        out.append((names[int(m)], int(i)))
    return out


def verify_realized_hypothesis(world: World, tables, names=None, cache: ExactCache | None = None) -> None:
    violations = realized_hypothesis_violations(world, tables, names, cache)
    if violations:
        name, idx = violations[0]
        raise ValidationError(
            f"A3 violated by member {name} at domain index {idx} "
            f"({len(violations)} violations in total)"
        )


# -- world file format --------------------------------------------------------
#
# Line-oriented UTF-8 text with LF endings:
#
#   misalign-world 1
#   p=<int>
#   alphabets=<s0>,<s1>,...
#   aligned=<i>,<j>,...          (may be empty)
#   misaligned=<i>,<j>,...
#   f_h=<D-char bitstring>       (enumeration order, coordinate 0 fastest)
#   f_m=<D-char bitstring>
#   support=<D-char membership bitmask>
#   theta <name>=<D-char bitstring>   (zero or more; optional stored class)

WORLD_FORMAT_HEADER = "misalign-world 1"


def _bits(arr: np.ndarray) -> str:
    return "".join("1" if v else "0" for v in arr)


def _parse_bits(text: str, expected: int, what: str) -> np.ndarray:
    if len(text) != expected or set(text) - {"0", "1"}:
        raise ValidationError(f"{what} must be a {expected}-character bitstring")
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")


def save_world(path, world: World, class_tables=None, class_names=None) -> None:
    mask = np.zeros(world.domain.size, dtype=np.uint8)
    mask[world.support] = 1
    lines = [
        WORLD_FORMAT_HEADER,
        f"p={world.p}",
        "alphabets=" + ",".join(str(s) for s in world.domain.alphabet_sizes),
        "aligned=" + ",".join(str(i) for i in world.aligned_block),
        "misaligned=" + ",".join(str(i) for i in world.misaligned_block),
        "f_h=" + _bits(world.f_h.table),
        "f_m=" + _bits(world.f_m.table),
        "support=" + _bits(mask),
    ]
    if class_tables is not None:
        T = np.atleast_2d(np.asarray(class_tables, dtype=np.uint8))
        names = list(class_names) if class_names else [f"theta_{i}" for i in range(T.shape[0])]
        for name, row in zip(names, T):
            lines.append(f"theta {name}=" + _bits(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_world(path):
    """Read a world file; returns (World, class_tables | None, class_names)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != WORLD_FORMAT_HEADER:
        raise ValidationError("not a misalign world file (bad header)")
    fields = {}
    thetas, names = [], []
    for ln in lines[1:]:
        if "=" not in ln:
            raise ValidationError(f"malformed world line {ln!r}")
        key, value = ln.split("=", 1)
        if key.startswith("theta "):
            names.append(key[len("theta "):])
            thetas.append(value)
        elif key in fields:
            raise ValidationError(f"duplicate world field {key!r}")
        else:
            fields[key] = value
    required = {"p", "alphabets", "aligned", "misaligned", "f_h", "f_m", "support"}
    missing = required - fields.keys()
    if missing:
        raise ValidationError(f"world file missing fields: {sorted(missing)}")
    unknown = fields.keys() - required
    if unknown:
        raise ValidationError(f"world file has unknown fields: {sorted(unknown)}")
    p = int(fields["p"])
    sizes = tuple(int(s) for s in fields["alphabets"].split(","))
    if len(sizes) != p:
        raise ValidationError("alphabet count does not match p")
    domain = DiscreteDomain(alphabet_sizes=sizes)

    def _idx_list(text):
        return tuple(int(i) for i in text.split(",")) if text else ()

    f_h = LabelingFn(domain, _parse_bits(fields["f_h"], domain.size, "f_h table"))
    f_m = LabelingFn(domain, _parse_bits(fields["f_m"], domain.size, "f_m table"))
    support = np.nonzero(_parse_bits(fields["support"], domain.size, "support mask"))[0]
    world = World(
        domain=domain,
        f_h=f_h,
        f_m=f_m,
        aligned_block=_idx_list(fields["aligned"]),
        misaligned_block=_idx_list(fields["misaligned"]),
        support=support,
    )
    if thetas:
        tables = np.stack([_parse_bits(t, domain.size, "theta table") for t in thetas])
        return world, tables, names
    return world, None, []
