"""Generalization-bound quantities and their exhaustive verifiers.

Computes, exactly on enumerable worlds or by search elsewhere:

* the discrepancy c(theta): fraction of source samples predicted correctly
  while the prediction can be flipped by sweeping the misaligned active set;
* its target-set analogue q(theta);
* the dataset-distinguishability term D over the symmetric-difference class
  (exhaustively, or via a trained discriminator);
* the finite-class deviation term phi;

and runs the two bound theorems plus the implication lemma as exhaustive
checkers over enumerated hypothesis classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import models
from .activeset import (
    ExactCache,
    LabelingFn,
    World,
    active_set,
    dependence_r,
    predictor_table,
    verify_support_agreement,
    verify_realized_hypothesis,
    verify_feature_separability,
)
from .core import Dataset, NumericalError, Rng, ValidationError

BOUND_CSV_HEADER = [
    "method", "seed", "train_err", "test_err", "c", "q",
    "d_theta", "phi", "bound_c", "bound_d",
]

_TOL = 1e-12


@dataclass(frozen=True)
class BoundReport:
    """The four comparable quantities of the bar reports plus components.

    ``bound_c = train_err + c + phi`` and ``bound_d = train_err + d_theta``
    are stored explicitly and revalidated against their definitions.
    """

    train_err: float
    test_err: float
    c: float
    q: float
    d_theta: float
    phi: float
    delta: float
    bound_c: float
    bound_d: float

    def __post_init__(self):
        for name in ("train_err", "test_err", "c", "q", "d_theta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v!r} outside [0, 1]")
        if self.phi < 0.0:
            raise ValidationError("phi must be nonnegative")
        if not 0.0 < self.delta <= 1.0:
            raise ValidationError("delta must lie in (0, 1]")
        if abs(self.bound_c - (self.train_err + self.c + self.phi)) > 1e-9:
            raise ValidationError("bound_c must equal train_err + c + phi")
        if abs(self.bound_d - (self.train_err + self.d_theta)) > 1e-9:
            raise ValidationError("bound_d must equal train_err + d_theta")

    @classmethod
    def assemble(cls, train_err, test_err, c, q, d_theta, phi, delta) -> "BoundReport":
        return cls(
            train_err=train_err, test_err=test_err, c=c, q=q,
            d_theta=d_theta, phi=phi, delta=delta,
            bound_c=train_err + c + phi, bound_d=train_err + d_theta,
        )

    def to_row(self, method: str, seed: int) -> list[str]:
        vals = [self.train_err, self.test_err, self.c, self.q,
                self.d_theta, self.phi, self.bound_c, self.bound_d]
        return [method, str(seed)] + [repr(float(v)) for v in vals]


@dataclass(frozen=True)
class FiniteHypothesisClass:
    """Enumerable predictor class over a world's domain, stored as truth tables."""

    domain_size: int
    tables: np.ndarray  # (m, D) uint8
    names: tuple[str, ...]

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.tables, dtype=np.uint8))
        if T.shape[0] > (1 << 16):
            raise ValidationError("hypothesis class too large for exhaustive checks")
        if T.shape[1] != self.domain_size:
            raise ValidationError("member tables do not cover the domain")
        if T.size and not np.isin(T, (0, 1)).all():
            raise ValidationError("member tables must be binary")
        T = T.copy()
        T.setflags(write=False)
        object.__setattr__(self, "tables", T)
        names = tuple(self.names)
        if len(names) != T.shape[0]:
            raise ValidationError("one name per member required")
        object.__setattr__(self, "names", names)

    @property
    def size(self) -> int:
        return self.tables.shape[0]

    def index_of_table(self, table: np.ndarray) -> int | None:
        table = np.asarray(table, dtype=np.uint8)
        hits = np.nonzero((self.tables == table[None, :]).all(axis=1))[0]
        return int(hits[0]) if hits.size else None

    def member(self, i: int, domain) -> LabelingFn:
        return LabelingFn(domain=domain, table=self.tables[i])


def _dataset_indices(world: World, data: Dataset, require_support: bool) -> np.ndarray:
    if data.n == 0:
        raise ValidationError("empty dataset")
    if data.p != world.p:
        raise ValidationError("dataset dimension does not match the world")
    idx = np.empty(data.n, dtype=np.int64)
    support = set(int(i) for i in world.support)
    for i in range(data.n):
        j = world.domain.index_of(data.X[i])
        if require_support and j not in support:
            raise ValidationError(f"sample {i} lies outside the source support")
        idx[i] = j
    return idx


def _discrepancy_sum(theta, world: World, idx: np.ndarray, y: np.ndarray) -> float:
    """(1/n) * sum_i 1[theta(x_i)=y_i] * r(theta, A(f_m, x_i))."""
    table = predictor_table(world.domain, theta)
    theta_fn = LabelingFn(domain=world.domain, table=table)
    total = 0
    for j, label in zip(idx, y):
        if int(table[j]) != int(label):
            continue
        x = world.domain.vector_of(int(j))
        a = active_set(world.f_m, x)
        total += dependence_r(theta_fn, a, x, int(label), world.domain)
    return total / len(idx)


def compute_c(theta, data: Dataset, world: World) -> float:
    """Exact discrepancy of ``theta`` over a source dataset.

    Every sample must lie in the world's source support; the active sets
    and dependence terms come from exhaustive enumeration.
    """
    idx = _dataset_indices(world, data, require_support=True)
    return _discrepancy_sum(theta, world, idx, data.y)


def compute_q(theta, target_data: Dataset, world: World) -> float:
    """Target-set analogue of the discrepancy (samples may leave the support)."""
    idx = _dataset_indices(world, target_data, require_support=False)
    return _discrepancy_sum(theta, world, idx, target_data.y)


def dependence_upper_bound(theta, data: Dataset, world: World) -> float:
    """(1/n) * sum_i r(theta, A(f_m, x_i)): the correctness-free upper bound on c."""
    idx = _dataset_indices(world, data, require_support=False)
    table = predictor_table(world.domain, theta)
    theta_fn = LabelingFn(domain=world.domain, table=table)
    total = 0
    for j, label in zip(idx, data.y):
        x = world.domain.vector_of(int(j))
        a = active_set(world.f_m, x)
        total += dependence_r(theta_fn, a, x, int(label), world.domain)
    return total / len(idx)


def estimate_c_by_search(theta, data: Dataset, searcher, budget: int) -> float:
    """Search-based discrepancy estimate.

    For each correctly predicted sample, draws up to ``budget`` candidate
    perturbations from ``searcher(theta, x, y, sample_index)`` and counts
    the sample as soon as one flips the prediction (then stops searching
    that sample). The searcher must only perturb misaligned features.
    """
    if budget < 1:
        raise ValidationError("search budget must be >= 1")
    if data.n == 0:
        raise ValidationError("empty dataset")
    flipped = 0
    for i in range(data.n):
        x = data.X[i]
        y = int(data.y[i])
        if int(theta(x)) != y:
            continue
        for step, z in enumerate(searcher(theta, x, y, i)):
            if step >= budget:
                break
            if int(theta(z)) != y:
                flipped += 1
                break
    return flipped / data.n


def phi_finite(class_size: int, n: int, delta: float) -> float:
    """Finite-class deviation term sqrt((ln|class| + ln(1/delta)) / 2n)."""
    if class_size < 1:
        raise ValidationError("class_size must be >= 1")
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not 0.0 < delta <= 1.0:
        raise ValidationError("delta must lie in (0, 1]")
    return math.sqrt((math.log(class_size) + math.log(1.0 / delta)) / (2.0 * n))


# -- dataset-distinguishability -----------------------------------------------


def _check_equal_n(src: Dataset, tgt: Dataset) -> int:
    if src.n != tgt.n:
        raise ValidationError(
            f"equal dataset sizes required (shared 1/n), got {src.n} vs {tgt.n}"
        )
    return src.n


def h_divergence_exhaustive(cls: FiniteHypothesisClass, src: Dataset, tgt: Dataset,
                            world: World) -> float:
    """Exact distinguishability over the symmetric-difference class.

    Evaluates 1 - min over pairwise-XOR members g of
    (#{x in src : g(x)=0} + #{x in tgt : g(x)=1}) / n.
    """
    n = _check_equal_n(src, tgt)
    src_idx = _dataset_indices(world, src, require_support=False)
    tgt_idx = _dataset_indices(world, tgt, require_support=False)
    T = np.unique(cls.tables, axis=0)
    m = T.shape[0]
    if m * m * T.shape[1] > (1 << 26):
        raise ValidationError("class too large for exhaustive symmetric differences")
    G = np.unique((T[:, None, :] ^ T[None, :, :]).reshape(m * m, -1), axis=0)
    src_zero = (G[:, src_idx] == 0).sum(axis=1)
    tgt_one = (G[:, tgt_idx] == 1).sum(axis=1)
    bracket = (src_zero + tgt_one) / n
    return float(1.0 - bracket.min())


def h_divergence_discriminator(src: Dataset, tgt: Dataset, arch: models.Architecture,
                               epochs: int = 200, learning_rate: float = 0.1,
                               seed: int = 0, restarts: int = 1,
                               batch_size: int | None = None) -> float:
    """Discriminator estimate of the distinguishability term.

    Trains a fresh model on the merged data (src labeled 0, tgt labeled 1)
    by seeded gradient descent on the smooth surrogate of the bracketed sum
    (indicators replaced by probabilities; full-batch by default,
    mini-batch when ``batch_size`` is set), then reports 1 minus the best
    hard-indicator bracket achieved across ``restarts`` seeded
    initializations, clamped to [0, 1]. Deterministic given the seed.
    """
    n = _check_equal_n(src, tgt)
    if src.p != tgt.p or src.p != arch.input_dim:
        raise ValidationError("discriminator architecture does not match the data")
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    X = np.vstack([src.X, tgt.X])
    # d(bracket)/d(params) = (1/n) [sum_tgt grad p - sum_src grad p]
    sign = np.concatenate([-np.ones(n), np.ones(n)]) * 2.0
    root = Rng(seed)
    best_bracket = np.inf
    for restart in range(int(restarts)):
        params = models.init_params(arch, root.derive(restart))
        order = root.derive(100 + restart)
        for _ in range(int(epochs)):
            if batch_size is None:
                steps = [np.arange(2 * n)]
            else:
                perm = order.permutation(2 * n)
                steps = [perm[i : i + batch_size] for i in range(0, 2 * n, batch_size)]
            for idx in steps:
                g = models.weighted_prediction_grad(arch, params, X[idx], sign[idx])
                params = params - learning_rate * g
            if not np.isfinite(params).all():
                raise NumericalError("discriminator training diverged (non-finite parameters)")
        preds, _ = models.forward_batch(arch, params, X)
        hard = preds >= 0.5
        bracket = float(((~hard[:n]).sum() + hard[n:].sum()) / n)
        best_bracket = min(best_bracket, bracket)
    return float(min(1.0, max(0.0, 1.0 - best_bracket)))


# -- exhaustive theorem checkers ----------------------------------------------


@dataclass
class BoundCheckReport:
    """Outcome of the generalization-bound check on one world."""

    class_size: int
    trials: int
    n_per_trial: int
    delta: float
    phi: float
    checks: int
    violations: int
    allowance: float
    worst_slack: float
    examples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations <= self.allowance

    def to_dict(self) -> dict:
        return asdict(self)


def verify_generalization_bound(world: World, cls: FiniteHypothesisClass, trials: int,
                       rng: Rng, n_per_trial: int = 24, delta: float = 0.1,
                       cache: ExactCache | None = None) -> BoundCheckReport:
    """Check target-risk <= source-risk + c + phi over sampled source datasets.

    The target risk is the exact full-domain expectation under the uniform
    target distribution; source datasets are sampled uniformly (with
    replacement) from the support. Violations are counted per (trial,
    member) against the probabilistic allowance delta * trials * |class|.
    """
    if trials < 1 or n_per_trial < 1:
        raise ValidationError("trials and n_per_trial must be >= 1")
    cache = cache or ExactCache(world)
    verify_support_agreement(world)
    verify_feature_separability(world, cache)
    verify_realized_hypothesis(world, cls.tables, cls.names, cache)
    T = cls.tables.astype(np.int32)
    labels = cache.labels.astype(np.int32)
    eps_t = (T != labels[None, :]).mean(axis=1)
    correct = cache.correct(T)
    r_m = cache.r_matrix(T, "f_m")
    phi = phi_finite(cls.size, n_per_trial, delta)
    violations = 0
    worst = -math.inf
    examples = []
    for trial in range(trials):
        pick = rng.integers(0, world.support.size, n_per_trial)
        idx = world.support[np.asarray(pick, dtype=np.int64)]
        y = labels[idx]
        errs = (T[:, idx] != y[None, :]).mean(axis=1)
        c_vals = (correct[:, idx] & r_m[:, idx]).mean(axis=1)
        slack = eps_t - (errs + c_vals + phi)
        worst = max(worst, float(slack.max()))
        bad = np.nonzero(slack > _TOL)[0]
        violations += bad.size
        for m in bad[:3]:
            examples.append({
                "trial": trial,
                "member": cls.names[int(m)],
                "target_risk": float(eps_t[m]),
                "source_risk": float(errs[m]),
                "c": float(c_vals[m]),
                "phi": phi,
            })
    checks = trials * cls.size
    return BoundCheckReport(
        class_size=cls.size, trials=trials, n_per_trial=n_per_trial, delta=delta,
        phi=phi, checks=checks, violations=violations,
        allowance=delta * checks, worst_slack=worst, examples=examples[:10],
    )


@dataclass
class ComparisonReport:
    """Outcome of the c <= D + q comparison on one world."""

    class_size: int
    n: int
    d_theta: float
    checks: int
    violations: int
    worst_slack: float
    examples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return asdict(self)


def verify_bound_comparison(world: World, cls: FiniteHypothesisClass, src: Dataset,
                       tgt: Dataset, cache: ExactCache | None = None) -> ComparisonReport:
    """Check c(theta) <= D + q(theta) for every member.

    Premises enforced up front: the complement of f_h is a member, the
    datasets share one n, every target sample matches some source sample on
    that sample's f_h active set (sample sufficiency), and target labels
    follow f_h.
    """
    cache = cache or ExactCache(world)
    verify_support_agreement(world)
    if cls.index_of_table(1 - world.f_h.table) is None:
        raise ValidationError("premise violated: 1 - f_h is not in the hypothesis class")
    n = _check_equal_n(src, tgt)
    src_idx = _dataset_indices(world, src, require_support=True)
    tgt_idx = _dataset_indices(world, tgt, require_support=False)
    if not np.array_equal(np.asarray(tgt.y, dtype=np.uint8), cache.labels[tgt_idx]):
        raise ValidationError("target labels must follow the human-aligned labeling function")
    # sample sufficiency: each target point inside some source point's f_h slice
    for i, ti in enumerate(tgt_idx):
        if not cache.S_h[src_idx, int(ti)].any():
            raise ValidationError(
                f"sample sufficiency violated: target sample {i} matches no "
                "source sample on its f_h active set"
            )
    d_val = h_divergence_exhaustive(cls, src, tgt, world)
    T = cls.tables.astype(np.int32)
    correct = cache.correct(T)
    r_m = cache.r_matrix(T, "f_m")
    c_vals = (correct[:, src_idx] & r_m[:, src_idx]).mean(axis=1)
    q_vals = (correct[:, tgt_idx] & r_m[:, tgt_idx]).mean(axis=1)
    slack = c_vals - (d_val + q_vals)
    bad = np.nonzero(slack > _TOL)[0]
    examples = [
        {"member": cls.names[int(m)], "c": float(c_vals[m]), "q": float(q_vals[m]),
         "d_theta": d_val}
        for m in bad[:10]
    ]
    return ComparisonReport(
        class_size=cls.size, n=n, d_theta=d_val, checks=cls.size,
        violations=int(bad.size), worst_slack=float(slack.max()), examples=examples,
    )


@dataclass
class ImplicationReport:
    """Outcome of the implication sweep d(theta,f1,x)=1 => r(theta,A(f2,x))=1."""

    class_size: int
    support_size: int
    checks: int
    counterexamples: int
    examples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.counterexamples == 0

    def to_dict(self) -> dict:
        return asdict(self)


def implication_sweep(world: World, cls: FiniteHypothesisClass,
                   cache: ExactCache | None = None) -> ImplicationReport:
    """Exhaustive check of the implication lemma over all members and support points.

    For every non-constant member correct at a support point, a maximal
    disagreement with one labeling function must force dependence on the
    other one's active set; both orientations are swept.
    """
    cache = cache or ExactCache(world)
    verify_realized_hypothesis(world, cls.tables, cls.names, cache)
    T = cls.tables.astype(np.int32)
    nonconst = (T.min(axis=1) != T.max(axis=1))[:, None]
    support_mask = np.zeros(world.domain.size, dtype=bool)
    support_mask[world.support] = True
    premise = cache.correct(T) & nonconst & support_mask[None, :]
    d_h = cache.d_matrix(T, "f_h")
    d_m = cache.d_matrix(T, "f_m")
    r_h = cache.r_matrix(T, "f_h")
    r_m = cache.r_matrix(T, "f_m")
    bad_hm = premise & d_h & ~r_m  # f1=f_h, f2=f_m
    bad_mh = premise & d_m & ~r_h  # f1=f_m, f2=f_h
    examples = []
    for name, bad in (("f_h->f_m", bad_hm), ("f_m->f_h", bad_mh)):
        for m, i in zip(*np.nonzero(bad)):
            if len(examples) < 10:
                examples.append({"orientation": name, "member": cls.names[int(m)],
                                 "domain_index": int(i)})
    checks = int(premise.sum()) * 2
    return ImplicationReport(
        class_size=cls.size, support_size=int(world.support.size), checks=checks,
        counterexamples=int(bad_hm.sum() + bad_mh.sum()), examples=examples,
    )
