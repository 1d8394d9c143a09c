"""Perturbation searchers: adversarial test-set builders and flip search.

These serve two roles: building out-of-distribution test sets by attacking
a trained victim (the binary-digit protocol), and acting as the search
procedure that estimates the dependence term on inputs too large to
enumerate. A found flip is always re-verified with a fresh forward pass
before being reported.

Attack kinds: ``fgsm`` (single signed-gradient step), ``salt_pepper``
(random extreme-value flips, best of several draws), ``single_pixel``
(exhaustive one-coordinate change), and ``resample`` (masked coordinates
redrawn from a standard normal; the oracle perturbation for the synthetic
spurious-correlation protocol, whose non-spurious marginals are N(0,1)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .activeset import World, perturbation_set
from .core import Dataset, Rng, ValidationError, logistic_loss_vec

ATTACK_KINDS = ("fgsm", "salt_pepper", "single_pixel", "resample")


@dataclass(frozen=True)
class PerturbSpec:
    """What a searcher may change and how hard it may push.

    ``mask`` lists the coordinates allowed to change (None means all);
    ``lo``/``hi`` give the per-coordinate clamp box (scalars broadcast);
    ``epsilon`` is the max-norm radius for the gradient attack, ``rate``
    the flip fraction for salt-and-pepper, and ``steps`` the iteration
    budget for search loops.
    """

    mask: tuple[int, ...] | None = None
    lo: float | tuple[float, ...] | None = None
    hi: float | tuple[float, ...] | None = None
    epsilon: float = 0.0
    rate: float = 0.0
    steps: int = 1

    def __post_init__(self):
        if self.mask is not None:
            mask = tuple(sorted(int(i) for i in self.mask))
            if any(i < 0 for i in mask) or len(set(mask)) != len(mask):
                raise ValidationError("mask must be a set of nonnegative indices")
            object.__setattr__(self, "mask", mask)
        if self.epsilon < 0:
            raise ValidationError("epsilon must be nonnegative")
        if not 0.0 <= self.rate <= 1.0:
            raise ValidationError("rate must lie in [0, 1]")
        if self.steps < 0:
            raise ValidationError("steps must be nonnegative")
        if (self.lo is None) != (self.hi is None):
            raise ValidationError("box needs both lo and hi")

    def mask_indices(self, p: int) -> np.ndarray:
        if self.mask is None:
            return np.arange(p)
        if self.mask and self.mask[-1] >= p:
            raise ValidationError(f"mask index {self.mask[-1]} out of range for p={p}")
        return np.asarray(self.mask, dtype=np.int64)

    def box_arrays(self, p: int):
        if self.lo is None:
            return None
        lo = np.broadcast_to(np.asarray(self.lo, dtype=np.float64), (p,)).copy()
        hi = np.broadcast_to(np.asarray(self.hi, dtype=np.float64), (p,)).copy()
        if (lo > hi).any():
            raise ValidationError("box must satisfy lo <= hi per coordinate")
        return lo, hi


def _model_pair(model):
    arch, params = model
    return arch, np.asarray(params, dtype=np.float64)


def _loss_of(model, X, y) -> np.ndarray:
    arch, params = _model_pair(model)
    preds, _ = models.forward_batch(arch, params, np.atleast_2d(X))
    yv = np.full(preds.shape, y) if np.isscalar(y) else np.asarray(y)
    return logistic_loss_vec(preds, yv)


def _predict_one(model, x) -> int:
    arch, params = _model_pair(model)
    pred, _ = models.forward(arch, params, x)
    return 1 if pred >= 0.5 else 0


def fgsm(model, x, y, spec: PerturbSpec) -> np.ndarray:
    """One signed-gradient step of size epsilon on the masked coordinates."""
    arch, params = _model_pair(model)
    x = np.asarray(x, dtype=np.float64)
    idx = spec.mask_indices(x.size)
    g = models.input_gradient(arch, params, x, y)
    out = x.copy()
    if idx.size:
        out[idx] = x[idx] + spec.epsilon * np.sign(g[idx])
        box = spec.box_arrays(x.size)
        if box is not None:
            lo, hi = box
            out[idx] = np.clip(out[idx], lo[idx], hi[idx])
    return out


def _salt_pepper_draw(x, idx, lo, hi, rate, rng: Rng) -> np.ndarray:
    out = x.copy()
    flips = rng.random(idx.size) < rate
    coins = rng.random(idx.size) < 0.5
    vals = np.where(coins, hi[idx], lo[idx])
    out[idx[flips]] = vals[flips]
    return out


def salt_pepper(model, x, y, spec: PerturbSpec, rng: Rng) -> np.ndarray:
    """Random extreme-value corruption; best of ``steps`` seeded draws.

    Each masked coordinate is independently reset to the box floor or
    ceiling (fair coin) with probability ``rate``; the draw with the
    highest loss wins.
    """
    if spec.steps < 1:
        raise ValidationError("salt-and-pepper needs at least one draw")
    box = spec.box_arrays(np.asarray(x).size)
    if box is None:
        raise ValidationError("salt-and-pepper needs a clamp box")
    lo, hi = box
    x = np.asarray(x, dtype=np.float64)
    idx = spec.mask_indices(x.size)
    best, best_loss = None, -np.inf
    for _ in range(spec.steps):
        cand = _salt_pepper_draw(x, idx, lo, hi, spec.rate, rng)
        cand_loss = float(_loss_of(model, cand[None, :], y)[0])
        if cand_loss > best_loss:
            best, best_loss = cand, cand_loss
    return best


def single_pixel(model, x, y, spec: PerturbSpec) -> np.ndarray:
    """Best single-coordinate change to a box extreme; x if nothing helps."""
    box = spec.box_arrays(np.asarray(x).size)
    if box is None:
        raise ValidationError("single-pixel needs a clamp box")
    lo, hi = box
    x = np.asarray(x, dtype=np.float64)
    idx = spec.mask_indices(x.size)
    base_loss = float(_loss_of(model, x[None, :], y)[0])
    best, best_loss = x.copy(), base_loss
    for i in idx:
        for v in (lo[i], hi[i]):
            if v == x[i]:
                continue
            cand = x.copy()
            cand[i] = v
            cand_loss = float(_loss_of(model, cand[None, :], y)[0])
            if cand_loss > best_loss:
                best, best_loss = cand, cand_loss
    return best


def proposal_stream(model, x, y, spec: PerturbSpec, rng: Rng, kind: str):
    """Candidate perturbations of x, one at a time, for flip search."""
    x = np.asarray(x, dtype=np.float64)
    idx = spec.mask_indices(x.size)
    if kind == "fgsm":
        yield fgsm(model, x, y, spec)
        return
    if kind == "single_pixel":
        box = spec.box_arrays(x.size)
        if box is None:
            raise ValidationError("single-pixel needs a clamp box")
        lo, hi = box
        for i in idx:
            for v in (lo[i], hi[i]):
                if v == x[i]:
                    continue
                cand = x.copy()
                cand[i] = v
                yield cand
        return
    if kind == "salt_pepper":
        box = spec.box_arrays(x.size)
        if box is None:
            raise ValidationError("salt-and-pepper needs a clamp box")
        lo, hi = box
        while True:
            yield _salt_pepper_draw(x, idx, lo, hi, spec.rate, rng)
    elif kind == "resample":
        box = spec.box_arrays(x.size)
        while True:
            cand = x.copy()
            cand[idx] = rng.normal(size=idx.size)
            if box is not None:
                lo, hi = box
                cand[idx] = np.clip(cand[idx], lo[idx], hi[idx])
            yield cand
    else:
        raise ValidationError(f"unknown attack kind {kind!r}")


def flip_search(model, x, y, spec: PerturbSpec, rng: Rng, kind: str = "salt_pepper"):
    """Search for a prediction flip; the sampled estimator of the dependence term.

    Tries up to ``spec.steps`` proposals; on the first candidate whose
    prediction differs from y, re-checks it with a fresh forward pass and
    returns (True, witness). Returns (False, None) when the budget runs out.
    """
    if int(y) not in (0, 1):
        raise ValidationError("label must be 0 or 1")
    stream = proposal_stream(model, x, y, spec, rng, kind)
    for step, z in enumerate(stream):
        if step >= spec.steps:
            break
        if _predict_one(model, z) != y:
            if _predict_one(model, np.array(z, copy=True)) != y:
                return True, z
    return False, None


def build_adversarial_testset(model, clean: Dataset, kind: str, spec: PerturbSpec,
                              rng: Rng) -> Dataset:
    """Attack every clean sample against the victim; labels are preserved.

    Per-sample derived rng streams keep the result independent of any
    parallel scheduling.
    """
    if kind not in ATTACK_KINDS:
        raise ValidationError(f"unknown attack kind {kind!r}")
    rows = []
    for i in range(clean.n):
        x, y = clean.X[i], int(clean.y[i])
        r = rng.derive(i)
        if kind == "fgsm":
            rows.append(fgsm(model, x, y, spec))
        elif kind == "salt_pepper":
            rows.append(salt_pepper(model, x, y, spec, r))
        elif kind == "single_pixel":
            rows.append(single_pixel(model, x, y, spec))
        else:  # resample: masked coordinates redrawn once
            rows.append(next(proposal_stream(model, x, y, spec, r, "resample")))
    return Dataset(X=np.vstack(rows), y=clean.y, origin="target",
                   group=clean.group, aux=clean.aux)


# -- searchers for the discrepancy estimator -----------------------------------


def exhaustive_searcher(world: World):
    """Searcher enumerating the full perturbation set Q(x) of each sample.

    With a budget covering every candidate, the search-based discrepancy
    estimate equals the exact computation bit for bit.
    """

    def searcher(theta, x, y, index):
        return perturbation_set(world, x)

    return searcher


def spec_searcher(spec: PerturbSpec, kind: str, base_rng: Rng, model=None):
    """Searcher proposing attack candidates under a perturbation spec.

    ``model`` is required for gradient-based proposals; otherwise it is
    taken from the predictor when available. Each sample gets its own
    derived stream (base seed XOR sample index derivation).
    """

    def searcher(theta, x, y, index):
        mdl = model
        if mdl is None and hasattr(theta, "arch"):
            mdl = (theta.arch, theta.params)
        if mdl is None and kind in ("fgsm", "salt_pepper", "single_pixel"):
            raise ValidationError(f"attack kind {kind!r} needs a differentiable model")
        return proposal_stream(mdl, x, y, spec, base_rng.derive(index), kind)

    return searcher


# -- worst-case perturbers for training -----------------------------------------


def identity_perturber():
    """Degenerate perturber: Q(x) = {x}; worst-case training reduces to plain training."""

    def perturb(arch, params, X, y, rng):
        return np.array(X, copy=True)

    return perturb


def exhaustive_perturber(world: World):
    """Per-sample exact inner maximization over the enumerated Q(x)."""

    def perturb(arch, params, X, y, rng):
        out = np.array(X, copy=True, dtype=np.float64)
        for i in range(out.shape[0]):
            cands = np.asarray(list(perturbation_set(world, out[i])), dtype=np.float64)
            losses = _loss_of((arch, params), cands, int(y[i]))
            out[i] = cands[int(np.argmax(losses))]
        return out

    return perturb


def resample_perturber(mask, draws: int = 8):
    """Loss-maximizing choice among x and ``draws`` Gaussian resamples of the mask."""
    if draws < 1:
        raise ValidationError("resample perturber needs at least one draw")
    mask = np.asarray(sorted(int(i) for i in mask), dtype=np.int64)

    def perturb(arch, params, X, y, rng):
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape
        cands = np.repeat(X[:, None, :], draws + 1, axis=1)  # (n, draws+1, p)
        noise = rng.normal(size=(n, draws, mask.size))
        cands[:, 1:, :][:, :, mask] = noise
        flat = cands.reshape(n * (draws + 1), p)
        preds, _ = models.forward_batch(arch, params, flat)
        losses = logistic_loss_vec(preds, np.repeat(y, draws + 1)).reshape(n, draws + 1)
        pick = np.argmax(losses, axis=1)
        return cands[np.arange(n), pick]

    return perturb


def attack_perturber(kind: str, spec: PerturbSpec):
    """Worst of {x, attack(x)} under the current model; vectorized for fgsm."""
    if kind not in ATTACK_KINDS:
        raise ValidationError(f"unknown attack kind {kind!r}")

    def perturb(arch, params, X, y, rng):
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape
        if kind == "fgsm":
            idx = spec.mask_indices(p)
            g = models.input_gradient_batch(arch, params, X, y)
            adv = X.copy()
            adv[:, idx] = X[:, idx] + spec.epsilon * np.sign(g[:, idx])
            box = spec.box_arrays(p)
            if box is not None:
                lo, hi = box
                adv[:, idx] = np.clip(adv[:, idx], lo[idx], hi[idx])
        else:
            advs = []
            for i in range(n):
                if kind == "salt_pepper":
                    advs.append(salt_pepper((arch, params), X[i], int(y[i]), spec, rng))
                elif kind == "single_pixel":
                    advs.append(single_pixel((arch, params), X[i], int(y[i]), spec))
                else:
                    advs.append(next(proposal_stream(None, X[i], int(y[i]), spec, rng,
                                                     "resample")))
            adv = np.vstack(advs)
        preds_x, _ = models.forward_batch(arch, params, X)
        preds_a, _ = models.forward_batch(arch, params, adv)
        worse = logistic_loss_vec(preds_a, y) >= logistic_loss_vec(preds_x, y)
        out = np.where(worse[:, None], adv, X)
        return out

    return perturb
