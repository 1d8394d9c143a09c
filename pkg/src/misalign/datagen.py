"""Data sources: synthetic spurious-correlation data, toy worlds, IDX digits.

The synthetic generator follows the spurious-correlation protocol: the
first quarter of the features drives the label through two random effect
vectors and a pair of Bernoulli draws, the middle half is pure noise, and
the last quarter is shifted toward +1/-1 in agreement with the label for a
rho fraction of train/validation samples while staying standard normal in
the test split.

Toy worlds are fully enumerable binary feature spaces with one labeling
function per coordinate block and an enumerated hypothesis class on which
the bound theorems can be checked exhaustively.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .activeset import (
    DiscreteDomain,
    ExactCache,
    LabelingFn,
    World,
    realized_hypothesis_violations,
    verify_support_agreement,
    verify_realized_hypothesis,
    verify_feature_separability,
)
from .bounds import FiniteHypothesisClass
from .core import Dataset, Rng, ValidationError

_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class SyntheticConfig:
    """Shape of the synthetic spurious-correlation dataset.

    ``rho`` is the per-sample probability that the spurious block is shifted
    toward the label; ``per_coordinate_rho`` applies that coin independently
    per spurious coordinate instead (off by default).
    """

    n: int
    p: int
    rho: float
    seed: int
    per_coordinate_rho: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if self.p < 4 or self.p % 4 != 0:
            raise ValidationError("p must be a positive multiple of 4")
        if not 0.0 <= self.rho <= 1.0:
            raise ValidationError("rho must lie in [0, 1]")


def spurious_indices(p: int) -> tuple[int, ...]:
    """Coordinates of the spurious block: the last quarter of the features."""
    return tuple(range(3 * p // 4, p))


def label_indices(p: int) -> tuple[int, ...]:
    """Coordinates the label generator reads: the first quarter."""
    return tuple(range(p // 4))


@dataclass(frozen=True)
class EffectSizes:
    """The two standard-normal effect vectors shared by every split."""

    beta1: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        b1 = np.asarray(self.beta1, dtype=np.float64)
        b2 = np.asarray(self.beta2, dtype=np.float64)
        if b1.ndim != 1 or b1.shape != b2.shape:
            raise ValidationError("effect vectors must be 1-D and equally sized")
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)

    @classmethod
    def sample(cls, p: int, rng: Rng) -> "EffectSizes":
        k = p // 4
        return cls(beta1=rng.normal(size=k), beta2=rng.normal(size=k))


def _inv_logit(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def gen_synthetic(cfg: SyntheticConfig, effects: EffectSizes, split: str) -> Dataset:
    """One split of the synthetic dataset; byte-reproducible given (cfg, effects).

    Draw order per split (each split uses an independent derived stream):
    base features, the two label Bernoullis, the spurious-branch coin(s)
    (train/val only), then the spurious-block noise. The label is fixed
    before the spurious block so the block can condition on it.
    """
    if split not in _SPLIT_CODES:
        raise ValidationError(f"split must be one of {sorted(_SPLIT_CODES)}, got {split!r}")
    k = cfg.p // 4
    if effects.beta1.shape != (k,):
        raise ValidationError(f"effect vectors must have length p/4 = {k}")
    rng = Rng(cfg.seed).derive(_SPLIT_CODES[split])
    n = cfg.n
    base = rng.normal(size=(n, 3 * k))
    c1 = base[:, :k] @ effects.beta1
    c2 = base[:, :k] @ effects.beta2
    r1 = rng.random(n) < _inv_logit(c1)
    r2 = rng.random(n) < _inv_logit(c2)
    y = (r1 == r2).astype(np.int8)
    shift = (2.0 * y - 1.0)[:, None]
    if split == "test":
        branch = np.zeros((n, k), dtype=bool)
        group = np.zeros(n, dtype=np.int64)
    elif cfg.per_coordinate_rho:
        branch = rng.random((n, k)) < cfg.rho
        group = branch.any(axis=1).astype(np.int64)
    else:
        fired = rng.random(n) < cfg.rho
        branch = np.repeat(fired[:, None], k, axis=1)
        group = fired.astype(np.int64)
    spur = rng.normal(size=(n, k)) + branch * shift
    X = np.hstack([base, spur])
    origin = "target" if split == "test" else "source"
    return Dataset(X=X, y=y, origin=origin, group=group, aux=group.copy())


# -- toy worlds ----------------------------------------------------------------


@dataclass(frozen=True)
class ToyWorldConfig:
    """Binary toy-world shape: one block per labeling function.

    Block sizes are capped at 3 so the per-block function classes
    (2^(2^k) members) stay enumerable. The source distribution is uniform
    over the agreement support, the target uniform over the full domain.
    """

    aligned_size: int = 2
    misaligned_size: int = 2

    def __post_init__(self):
        for name, v in (("aligned_size", self.aligned_size),
                        ("misaligned_size", self.misaligned_size)):
            if not 1 <= v <= 3:
                raise ValidationError(f"{name} must be between 1 and 3, got {v}")
        if self.p > 10:
            raise ValidationError("toy worlds are capped at 10 coordinates")

    @property
    def p(self) -> int:
        return self.aligned_size + self.misaligned_size


def _block_tables(block_size: int) -> np.ndarray:
    """All 2^(2^k) truth tables over a k-bit block, indexed by code."""
    patterns = 1 << block_size
    codes = np.arange(1 << patterns, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(patterns)[None, :]) & 1
    return bits.astype(np.uint8)


@lru_cache(maxsize=None)
def _sweep_sensitive_codes(block_size: int) -> tuple[int, ...]:
    """Codes of block functions whose active-set sweep flips them everywhere.

    A function qualifies when, at every block pattern, sweeping its active
    set (all other coordinates pinned) reaches the opposite label. The
    labeling functions of constructed worlds are sampled from this family;
    outside it the dependence term can miss the function's own features
    (an AND-shaped level set is insensitive to any single zero), which
    breaks the implication lemma under the literal sweep semantics.
    """
    from .activeset import active_set, dependence_r

    dom = DiscreteDomain(alphabet_sizes=(2,) * block_size)
    tab = _block_tables(block_size)
    good = []
    for code in range(1, tab.shape[0] - 1):  # constants can never qualify
        f = LabelingFn(dom, tab[code])
        ok = True
        for i in range(dom.size):
            u = dom.vector_of(i)
            a = active_set(f, u)
            if dependence_r(f, a, u, int(f.table[i]), dom) != 1:
                ok = False
                break
        if ok:
            good.append(code)
    return tuple(good)


def _lift_block_table(domain: DiscreteDomain, block, block_table: np.ndarray) -> np.ndarray:
    """Expand a block-pattern table to a full-domain table."""
    key = np.zeros(domain.size, dtype=np.int64)
    for j, coord in enumerate(sorted(block)):
        key += domain.matrix[:, coord].astype(np.int64) << j
    return block_table[key]


def enumerate_class_for_world(world: World, cache: ExactCache | None = None) -> FiniteHypothesisClass:
    """Enumerated hypothesis class of a binary block world.

    All functions of either block plus the two constants, deduplicated,
    then filtered down to the members consistent with the realized-
    hypothesis assumption on the support (non-constant members must realize
    one labeling function wherever they classify a support point
    correctly). Both labeling functions and the complement of f_h always
    survive the filter.
    """
    if any(s != 2 for s in world.domain.alphabet_sizes):
        raise ValidationError("class enumeration expects binary toy worlds")
    tables, names = [], []
    seen = set()
    for prefix, block in (("a", world.aligned_block), ("m", world.misaligned_block)):
        if len(block) > 3:
            raise ValidationError("block too large to enumerate its function class")
        tab = _block_tables(len(block))
        last = tab.shape[0] - 1
        for code in range(tab.shape[0]):
            full = _lift_block_table(world.domain, block, tab[code])
            key = full.tobytes()
            if key in seen:
                continue
            seen.add(key)
            if code == 0:
                name = "const0"
            elif code == last:
                name = "const1"
            else:
                name = f"{prefix}{code}"
            tables.append(full)
            names.append(name)
    tables = np.stack(tables)
    cache = cache or ExactCache(world)
    violators = {name for name, _ in realized_hypothesis_violations(world, tables, names, cache)}
    keep = [i for i, name in enumerate(names) if name not in violators]
    return FiniteHypothesisClass(
        domain_size=world.domain.size,
        tables=tables[keep],
        names=tuple(names[i] for i in keep),
    )


def make_toy_world(cfg: ToyWorldConfig, rng: Rng):
    """Construct a world plus its enumerated hypothesis class.

    Labeling functions are sampled uniformly from the non-constant,
    everywhere-sweep-sensitive functions of their blocks (see
    ``_sweep_sensitive_codes``); construction retries while the agreement
    support comes out empty. Support agreement, feature separability, the
    realized-hypothesis assumption, and the implication lemma are
    re-verified exhaustively before returning.
    """
    from .bounds import implication_sweep

    domain = DiscreteDomain(alphabet_sizes=(2,) * cfg.p)
    aligned = tuple(range(cfg.aligned_size))
    mis = tuple(range(cfg.aligned_size, cfg.p))
    tab_a = _block_tables(cfg.aligned_size)
    tab_m = _block_tables(cfg.misaligned_size)
    codes_a = _sweep_sensitive_codes(cfg.aligned_size)
    codes_m = _sweep_sensitive_codes(cfg.misaligned_size)
    for _ in range(50):
        code_h = codes_a[int(rng.integers(0, len(codes_a)))]
        code_m = codes_m[int(rng.integers(0, len(codes_m)))]
        f_h_table = _lift_block_table(domain, aligned, tab_a[code_h])
        f_m_table = _lift_block_table(domain, mis, tab_m[code_m])
        support = np.nonzero(f_h_table == f_m_table)[0]
        if support.size == 0:
            continue
        world = World(
            domain=domain,
            f_h=LabelingFn(domain, f_h_table),
            f_m=LabelingFn(domain, f_m_table),
            aligned_block=aligned,
            misaligned_block=mis,
            support=support,
        )
        cache = ExactCache(world)
        cls = enumerate_class_for_world(world, cache)
        # the theorem premises must survive the consistency filter
        for required in (f_h_table, 1 - f_h_table, f_m_table):
            if cls.index_of_table(required) is None:
                raise ValidationError("labeling functions were filtered out of the class")
        if implication_sweep(world, cls, cache=cache).counterexamples:
            continue
        verify_support_agreement(world)
        verify_feature_separability(world, cache)
        verify_realized_hypothesis(world, cls.tables, cls.names, cache)
        return world, cls
    raise ValidationError("world regeneration budget exhausted "
                          "(empty support or lemma-incompatible draw 50 times)")


def sample_source_dataset(world: World, n: int, rng: Rng) -> Dataset:
    """n i.i.d. uniform draws from the support, labeled by f_h."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    pick = np.asarray(rng.integers(0, world.support.size, n), dtype=np.int64)
    idx = world.support[pick]
    X = world.domain.matrix[idx].astype(np.float64)
    return Dataset(X=X, y=world.f_h.table[idx], origin="source")


def sample_target_dataset(world: World, n: int, rng: Rng) -> Dataset:
    """n i.i.d. uniform draws from the full domain, labeled by f_h."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    idx = np.asarray(rng.integers(0, world.domain.size, n), dtype=np.int64)
    X = world.domain.matrix[idx].astype(np.float64)
    return Dataset(X=X, y=world.f_h.table[idx], origin="target")


def mirror_target_dataset(world: World, src: Dataset, rng: Rng) -> Dataset:
    """Target set satisfying sample sufficiency by construction.

    Each target sample keeps its source progenitor's aligned coordinates
    (hence its whole f_h active set) and redraws the misaligned block
    uniformly; labels follow f_h.
    """
    X = np.array(src.X, copy=True)
    mis = list(world.misaligned_block)
    sizes = [world.domain.alphabet_sizes[j] for j in mis]
    for i in range(X.shape[0]):
        r = rng.derive(i)
        for j, s in zip(mis, sizes):
            X[i, j] = float(r.integers(0, s))
    y = world.labels_of(X)
    return Dataset(X=X, y=y, origin="target")


# -- IDX ingestion ---------------------------------------------------------------

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def load_idx(images_path, labels_path) -> Dataset:
    """Binary-digit dataset from an IDX image/label file pair.

    Pixels are scaled to [0, 1]; only digit-0 and digit-1 samples are kept,
    in file order, labeled 0/1.
    """
    with open(images_path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValidationError("IDX image file truncated in header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise ValidationError(f"bad IDX image magic 0x{magic:08x}")
        pixels = fh.read()
    if len(pixels) != count * rows * cols:
        raise ValidationError("IDX image file truncated or oversized")
    with open(labels_path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValidationError("IDX label file truncated in header")
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise ValidationError(f"bad IDX label magic 0x{magic:08x}")
        raw_labels = fh.read()
    if len(raw_labels) != label_count:
        raise ValidationError("IDX label file truncated or oversized")
    if count != label_count:
        raise ValidationError(f"image count {count} != label count {label_count}")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8)
    keep = np.nonzero((labels == 0) | (labels == 1))[0]
    if keep.size == 0:
        raise ValidationError("no digit-0 or digit-1 samples in the IDX files")
    X = images[keep].astype(np.float64) / 255.0
    y = labels[keep].astype(np.int8)
    return Dataset(X=X, y=y, origin="source")
