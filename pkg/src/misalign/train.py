"""Training methods induced by the discrepancy bound.

Five families: plain empirical risk minimization; worst-case augmentation
(each gradient step sees the loss-maximizing member of the sample's
perturbation set); weighted risk minimization under three weight schemes
(adversary-model weights, biased-model relative difficulty, per-group
softmax of losses); representation regularization against a side model;
and the combined per-sample heuristic that uses augmented-vs-clean as the
side model's annotation.

Every run is a deterministic function of (data, architecture, config).
The seed fans out into fixed sub-streams: derive(0) parameter init,
derive(1) batch order, derive(2) perturber draws, derive(3) scheme and
side-model internals. Runs are single-threaded; parallelism across seeds
or methods is the caller's business.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models
from .core import (
    Dataset,
    NumericalError,
    Rng,
    ValidationError,
    logistic_loss_vec,
    zero_one_error,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float
    batch_size: int = 32
    seed: int = 0
    reg_balance: float = 1.0
    early_stop_patience: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.reg_balance < 0:
            raise ValidationError("reg_balance must be nonnegative")
        if self.early_stop_patience < 0:
            raise ValidationError("early_stop_patience must be nonnegative")


@dataclass
class TrainResult:
    params: np.ndarray
    trace: list[dict] = field(default_factory=list)
    side_params: np.ndarray | None = None

    @property
    def trace_columns(self) -> list[str]:
        if not self.trace:
            return []
        return list(self.trace[0].keys())


def _check_data(data: Dataset):
    if data.n < 1:
        raise ValidationError("cannot train on an empty dataset")


def _check_finite(params: np.ndarray, epoch: int, step: int):
    if not np.isfinite(params).all():
        raise NumericalError(
            f"non-finite parameters at epoch {epoch}, step {step}; "
            "lower the learning rate"
        )


def _batches(n: int, batch_size: int, rng: Rng):
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _losses(arch, params, X, y) -> np.ndarray:
    preds, _ = models.forward_batch(arch, params, X)
    return logistic_loss_vec(preds, y)


def worst_group_error(preds: np.ndarray, y: np.ndarray, group: np.ndarray) -> float:
    errs = []
    for g in np.unique(group):
        idx = group == g
        errs.append(zero_one_error(preds[idx], y[idx]))
    return float(max(errs))


def _trace_row(epoch, arch, params, data, side=None, side_params=None, target=None):
    preds, reps = models.forward_batch(arch, params, data.X)
    row = {
        "epoch": epoch,
        "train_loss": float(logistic_loss_vec(preds, data.y).mean()),
        "train_err": zero_one_error(preds, data.y),
    }
    if data.group is not None:
        row["worst_group_err"] = worst_group_error(preds, data.y, data.group)
    if side is not None:
        side_preds, _ = models.forward_batch(side.arch, side_params, reps)
        row["side_loss"] = float(logistic_loss_vec(side_preds, target).mean())
    return row


class _EarlyStop:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.stale = 0

    def should_stop(self, value: float) -> bool:
        if self.patience == 0:
            return False
        if value < self.best - 1e-12:
            self.best = value
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def train_erm(data: Dataset, arch: models.Architecture, cfg: TrainConfig) -> TrainResult:
    """Seeded mini-batch gradient descent on the mean logistic loss."""
    _check_data(data)
    root = Rng(cfg.seed)
    params = models.init_params(arch, root.derive(0))
    order_rng = root.derive(1)
    stop = _EarlyStop(cfg.early_stop_patience)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        for step, idx in enumerate(_batches(data.n, cfg.batch_size, order_rng)):
            g = models.grad_batch(arch, params, data.X[idx], data.y[idx])
            params = params - cfg.learning_rate * g
            _check_finite(params, epoch, step)
        row = _trace_row(epoch, arch, params, data)
        trace.append(row)
        if stop.should_stop(row["train_loss"]):
            break
    return TrainResult(params=params, trace=trace)


def train_worst_case(data: Dataset, arch: models.Architecture, cfg: TrainConfig,
                     perturber) -> TrainResult:
    """Gradient descent where each sample is replaced by its worst perturbation.

    ``perturber(arch, params, X, y, rng) -> Z`` must return, per sample, a
    loss-maximizing member of the sample's perturbation set; the candidate
    set always contains the sample itself, so the inner loss never drops
    below the clean loss. With the identity perturber this is bitwise
    train_erm.
    """
    _check_data(data)
    root = Rng(cfg.seed)
    params = models.init_params(arch, root.derive(0))
    order_rng = root.derive(1)
    perturb_rng = root.derive(2)
    stop = _EarlyStop(cfg.early_stop_patience)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        for step, idx in enumerate(_batches(data.n, cfg.batch_size, order_rng)):
            Z = perturber(arch, params, data.X[idx], data.y[idx], perturb_rng)
            g = models.grad_batch(arch, params, Z, data.y[idx])
            params = params - cfg.learning_rate * g
            _check_finite(params, epoch, step)
        row = _trace_row(epoch, arch, params, data)
        trace.append(row)
        if stop.should_stop(row["train_loss"]):
            break
    return TrainResult(params=params, trace=trace)


# -- weight schemes ------------------------------------------------------------


class WeightScheme:
    """Per-sample weight source for weighted risk minimization.

    ``weights`` first advances any side state (the adversary or biased
    model takes its own step), then emits the weights for the current
    batch. All weights are finite and nonnegative.
    """

    kind = "base"

    def weights(self, X, y, group, arch, params) -> np.ndarray:
        raise NotImplementedError


class UniformScheme(WeightScheme):
    """Degenerate scheme: every weight is 1; recovers plain training bitwise."""

    kind = "uniform"

    def weights(self, X, y, group, arch, params) -> np.ndarray:
        return np.ones(len(y))


class ArlScheme(WeightScheme):
    """Adversary-model weights 1 + n * phi(x) / sum(phi).

    The adversary is a logistic model over (x, y) concatenated; each step
    it ascends the weighted-loss objective before the weights are read.
    """

    kind = "arl"

    def __init__(self, input_dim: int, rng: Rng, learning_rate: float = 0.1):
        self.arch = models.Architecture(kind="logistic", input_dim=input_dim + 1)
        self.params = models.init_params(self.arch, rng)
        self.learning_rate = learning_rate

    def weights(self, X, y, group, arch, params) -> np.ndarray:
        n = len(y)
        losses = _losses(arch, params, X, y)
        Xy = np.hstack([X, np.asarray(y, dtype=np.float64)[:, None]])
        phi, _ = models.forward_batch(self.arch, self.params, Xy)
        total = phi.sum()
        # d/dphi_k of n * sum(phi * loss) / sum(phi)
        d_phi = n * (losses * total - (phi * losses).sum()) / total**2
        g = models.weighted_prediction_grad(self.arch, self.params, Xy, d_phi)
        self.params = self.params + self.learning_rate * g
        phi, _ = models.forward_batch(self.arch, self.params, Xy)
        return 1.0 + n * phi / phi.sum()


class LffScheme(WeightScheme):
    """Relative-difficulty weights from a biased twin of the main model.

    The biased model takes a plain gradient step first; each sample is then
    weighted by biased_loss / (biased_loss + main_loss), with vanished
    denominators resolved to 1/2.
    """

    kind = "lff"

    def __init__(self, arch: models.Architecture, rng: Rng, learning_rate: float = 0.1):
        self.arch = arch
        self.params = models.init_params(arch, rng)
        self.learning_rate = learning_rate

    def weights(self, X, y, group, arch, params) -> np.ndarray:
        g = models.grad_batch(self.arch, self.params, X, y)
        self.params = self.params - self.learning_rate * g
        biased = _losses(self.arch, self.params, X, y)
        main = _losses(arch, params, X, y)
        denom = biased + main
        safe = np.where(denom > 0, denom, 1.0)
        return np.where(denom > 0, biased / safe, 0.5)


class GroupDroScheme(WeightScheme):
    """Within-group softmax of current losses; weights in a group sum to 1."""

    kind = "groupdro"

    def weights(self, X, y, group, arch, params) -> np.ndarray:
        if group is None:
            raise ValidationError("group ids are required for the group scheme")
        losses = _losses(arch, params, X, y)
        lam = np.empty(len(y))
        for g in np.unique(group):
            idx = np.nonzero(group == g)[0]
            shifted = np.exp(losses[idx] - losses[idx].max())
            lam[idx] = shifted / shifted.sum()
        return lam


def wrm_weights(scheme: WeightScheme, batch, theta) -> np.ndarray:
    """Advance the scheme's side state and emit weights for one batch.

    ``batch`` is (X, y, group-or-None); ``theta`` is the current
    (architecture, params) pair.
    """
    X, y, group = batch
    arch, params = theta
    lam = np.asarray(scheme.weights(X, y, group, arch, params), dtype=np.float64)
    if not np.isfinite(lam).all() or (lam < 0).any():
        raise NumericalError("weight scheme produced a negative or non-finite weight")
    return lam


def train_wrm(data: Dataset, arch: models.Architecture, cfg: TrainConfig,
              scheme: WeightScheme) -> TrainResult:
    """Gradient descent on the per-sample-weighted mean loss."""
    _check_data(data)
    if scheme.kind == "groupdro" and data.group is None:
        raise ValidationError("group scheme needs group ids on every sample")
    root = Rng(cfg.seed)
    params = models.init_params(arch, root.derive(0))
    order_rng = root.derive(1)
    stop = _EarlyStop(cfg.early_stop_patience)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        for step, idx in enumerate(_batches(data.n, cfg.batch_size, order_rng)):
            group = None if data.group is None else data.group[idx]
            lam = wrm_weights(scheme, (data.X[idx], data.y[idx], group), (arch, params))
            g = models.grad_batch(arch, params, data.X[idx], data.y[idx], weights=lam)
            params = params - cfg.learning_rate * g
            _check_finite(params, epoch, step)
        row = _trace_row(epoch, arch, params, data)
        trace.append(row)
        if stop.should_stop(row["train_loss"]):
            break
    return TrainResult(params=params, trace=trace)


# -- representation regularization ----------------------------------------------


def _side_targets(data: Dataset, side: models.SideModel) -> np.ndarray:
    if side.target == "label":
        return np.asarray(data.y, dtype=np.int64)
    if data.aux is None:
        raise ValidationError("annotation-target side model needs aux on every sample")
    return np.asarray(data.aux, dtype=np.int64)


def _regularized_step(arch, params, side_arch, side_params, X, y, t, lr, rb):
    """One alternating update: side model first, then the main model.

    The main gradient is grad of mean main loss minus rb times the side
    loss chained through the encoder only (the side model is frozen during
    the main step).
    """
    _, reps = models.forward_batch(arch, params, X)
    sg = models.grad_batch(side_arch, side_params, reps, t)
    side_params = side_params - lr * sg
    g = models.grad_batch(arch, params, X, y)
    if rb != 0.0:
        d_rep = models.input_gradient_batch(side_arch, side_params, reps, t)
        g = g - rb * models.encoder_grad_from_rep(arch, params, X, d_rep)
    params = params - lr * g
    return params, side_params


def train_regularized(data: Dataset, arch: models.Architecture, cfg: TrainConfig,
                      side: models.SideModel) -> TrainResult:
    """Alternating updates: the side model fits the representations, the
    main model descends its loss minus the side model's (weighted by
    reg_balance).

    With a logistic main model the encoder is the identity, so the
    regularizer has no parameter to push on and the method reduces to plain
    training; use the perceptron when the regularizer should bite.
    """
    _check_data(data)
    if side.arch.input_dim != arch.rep_dim:
        raise ValidationError("side model input dim must match the encoder output dim")
    targets = _side_targets(data, side)
    root = Rng(cfg.seed)
    params = models.init_params(arch, root.derive(0))
    order_rng = root.derive(1)
    side_params = np.array(side.params, copy=True)
    stop = _EarlyStop(cfg.early_stop_patience)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        for step, idx in enumerate(_batches(data.n, cfg.batch_size, order_rng)):
            params, side_params = _regularized_step(
                arch, params, side.arch, side_params,
                data.X[idx], data.y[idx], targets[idx],
                cfg.learning_rate, cfg.reg_balance,
            )
            _check_finite(params, epoch, step)
            _check_finite(side_params, epoch, step)
        row = _trace_row(epoch, arch, params, data, side, side_params, targets)
        trace.append(row)
        if stop.should_stop(row["train_loss"]):
            break
    return TrainResult(params=params, trace=trace, side_params=side_params)


def train_wr(data: Dataset, arch: models.Architecture, cfg: TrainConfig,
             perturber, side: models.SideModel) -> TrainResult:
    """Worst-case training with a regularized hypothesis space, per sample.

    For each sample: tag the clean point 0; generate the loss-maximizing
    perturbation and tag it 1; update the side model on the two tagged
    representations; update the main model on the clean point, then again
    on the perturbed point, both times against the label with the side
    model's label loss subtracted (scaled by reg_balance). The two main
    updates are full separate steps, so one epoch applies twice as many
    updates as a batch-size-1 plain run.
    """
    _check_data(data)
    if side.target != "annotation":
        raise ValidationError("the combined heuristic needs an annotation-target side model")
    if side.arch.input_dim != arch.rep_dim:
        raise ValidationError("side model input dim must match the encoder output dim")
    root = Rng(cfg.seed)
    params = models.init_params(arch, root.derive(0))
    order_rng = root.derive(1)
    perturb_rng = root.derive(2)
    side_params = np.array(side.params, copy=True)
    lr, rb = cfg.learning_rate, cfg.reg_balance
    tags = np.array([0, 1])
    stop = _EarlyStop(cfg.early_stop_patience)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        for step, i in enumerate(order_rng.permutation(data.n)):
            x = data.X[i : i + 1]
            yv = data.y[i : i + 1]
            z = perturber(arch, params, x, yv, perturb_rng)
            _, reps = models.forward_batch(arch, params, np.vstack([x, z]))
            sg = models.grad_batch(side.arch, side_params, reps, tags)
            side_params = side_params - lr * sg
            for point in (x, z):
                g = models.grad_batch(arch, params, point, yv)
                if rb != 0.0:
                    _, rep = models.forward_batch(arch, params, point)
                    d_rep = models.input_gradient_batch(side.arch, side_params, rep, yv)
                    g = g - rb * models.encoder_grad_from_rep(arch, params, point, d_rep)
                params = params - lr * g
            _check_finite(params, epoch, step)
            _check_finite(side_params, epoch, step)
        aux_view = _wr_trace_targets(data)
        row = _trace_row(epoch, arch, params, data, side, side_params, aux_view)
        trace.append(row)
        if stop.should_stop(row["train_loss"]):
            break
    return TrainResult(params=params, trace=trace, side_params=side_params)


def _wr_trace_targets(data: Dataset) -> np.ndarray:
    # clean training points all carry tag 0 in the combined heuristic
    return np.zeros(data.n, dtype=np.int64)
