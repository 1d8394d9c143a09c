"""Parametric predictors with analytic gradients and binary checkpoints.

Two architectures: logistic regression and a one-hidden-layer perceptron
with tanh hidden units and a sigmoid output. Both expose an encoder/decoder
split: the encoder of the perceptron is its hidden layer, the encoder of
logistic regression is the identity (so representation-space machinery
degenerates to input space for it).

Parameter layout (flat float64 vector, weights then biases, layer by layer):

* logistic: ``[w_0..w_{p-1}, b]``
* mlp:      ``[W1 row-major (hidden x p), b1 (hidden), w2 (hidden), b2]``

Checkpoint file format (little-endian): magic ``HARM``, u32 version (=1),
u8 arch kind (0 logistic / 1 mlp), u32 input dim, u32 hidden dim (0 for
logistic), u64 parameter count, then the parameters as f64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import NumericalError, Rng, ValidationError

CHECKPOINT_MAGIC = b"HARM"
CHECKPOINT_VERSION = 1

_KIND_CODES = {"logistic": 0, "mlp": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class Architecture:
    """Immutable shape of a predictor."""

    kind: str
    input_dim: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValidationError(f"unknown architecture kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValidationError("input_dim must be >= 1")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise ValidationError("mlp needs hidden_dim >= 1")
        if self.kind == "logistic" and self.hidden_dim != 0:
            raise ValidationError("logistic architecture has no hidden layer")

    @property
    def param_count(self) -> int:
        if self.kind == "logistic":
            return self.input_dim + 1
        h, p = self.hidden_dim, self.input_dim
        return h * p + h + h + 1

    @property
    def rep_dim(self) -> int:
        """Dimension of the encoder output."""
        return self.input_dim if self.kind == "logistic" else self.hidden_dim


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _check_params(arch: Architecture, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (arch.param_count,):
        raise ValidationError(
            f"expected {arch.param_count} parameters for {arch.kind}, got shape {params.shape}"
        )
    if not np.isfinite(params).all():
        raise NumericalError("parameters contain NaN or Inf")
    return params


def _unpack_mlp(arch: Architecture, params: np.ndarray):
    h, p = arch.hidden_dim, arch.input_dim
    W1 = params[: h * p].reshape(h, p)
    b1 = params[h * p : h * p + h]
    w2 = params[h * p + h : h * p + 2 * h]
    b2 = params[-1]
    return W1, b1, w2, b2


def init_params(arch: Architecture, rng: Rng) -> np.ndarray:
    """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] weights, zero biases."""
    if arch.kind == "logistic":
        bound = 1.0 / np.sqrt(arch.input_dim)
        w = rng.uniform(-bound, bound, arch.input_dim)
        return np.concatenate([w, [0.0]])
    h, p = arch.hidden_dim, arch.input_dim
    b1 = 1.0 / np.sqrt(p)
    W1 = rng.uniform(-b1, b1, (h, p)).ravel()
    b2 = 1.0 / np.sqrt(h)
    w2 = rng.uniform(-b2, b2, h)
    return np.concatenate([W1, np.zeros(h), w2, [0.0]])


def forward(arch: Architecture, params: np.ndarray, x: np.ndarray):
    """Probability and encoder output for one feature vector."""
    pred, rep = forward_batch(arch, params, np.asarray(x, dtype=np.float64)[None, :])
    return float(pred[0]), rep[0]


def forward_batch(arch: Architecture, params: np.ndarray, X: np.ndarray):
    """Vectorized forward pass: (n,) probabilities and (n, rep_dim) representations."""
    params = _check_params(arch, params)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ValidationError(f"expected (n, {arch.input_dim}) inputs, got {X.shape}")
    if not np.isfinite(X).all():
        raise NumericalError("inputs contain NaN or Inf")
    if arch.kind == "logistic":
        w, b = params[:-1], params[-1]
        return _sigmoid(X @ w + b), X
    W1, b1, w2, b2 = _unpack_mlp(arch, params)
    rep = np.tanh(X @ W1.T + b1)
    return _sigmoid(rep @ w2 + b2), rep


def decode(arch: Architecture, params: np.ndarray, rep: np.ndarray) -> np.ndarray:
    """Apply the decoder alone to (n, rep_dim) representations."""
    params = _check_params(arch, params)
    rep = np.atleast_2d(np.asarray(rep, dtype=np.float64))
    if arch.kind == "logistic":
        w, b = params[:-1], params[-1]
        return _sigmoid(rep @ w + b)
    _, _, w2, b2 = _unpack_mlp(arch, params)
    return _sigmoid(rep @ w2 + b2)


def grad_batch(arch, params, X, y, weights=None) -> np.ndarray:
    """Mean (optionally weighted) parameter gradient of the logistic loss.

    Returns (1/n) * sum_i weights_i * dloss_i/dparams with the same layout
    as ``params``. The analytic form uses dloss/dlogit = prediction - y,
    so no clamping enters the gradient.
    """
    params = _check_params(arch, params)
    X = np.asarray(X, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValidationError("gradient of an empty batch is undefined")
    w_s = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    preds, rep = forward_batch(arch, params, X)
    g_out = (preds - yv) * w_s  # (n,)
    if arch.kind == "logistic":
        gw = X.T @ g_out / n
        gb = g_out.sum() / n
        return np.concatenate([gw, [gb]])
    W1, b1, w2, b2 = _unpack_mlp(arch, params)
    g_w2 = rep.T @ g_out / n
    g_b2 = g_out.sum() / n
    g_hidden = np.outer(g_out, w2) * (1.0 - rep**2)  # (n, h)
    g_W1 = g_hidden.T @ X / n
    g_b1 = g_hidden.sum(axis=0) / n
    return np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])


def backward(arch, params, x, y, kind=None) -> np.ndarray:
    """Exact analytic gradient of the logistic loss at one sample.

    The zero-one loss is rejected: it has no usable gradient.
    """
    from .core import LossKind

    if kind is LossKind.ZERO_ONE:
        raise ValidationError("zero-one loss is not differentiable; use logistic")
    if y not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {y!r}")
    return grad_batch(arch, params, np.asarray(x, dtype=np.float64)[None, :], [y])


def input_gradient(arch, params, x, y) -> np.ndarray:
    """Gradient of the logistic loss with respect to the input vector."""
    return input_gradient_batch(arch, params, np.asarray(x, dtype=np.float64)[None, :], [y])[0]


def input_gradient_batch(arch, params, X, y) -> np.ndarray:
    params = _check_params(arch, params)
    X = np.asarray(X, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    preds, rep = forward_batch(arch, params, X)
    g_out = preds - yv
    if arch.kind == "logistic":
        w = params[:-1]
        return np.outer(g_out, w)
    W1, b1, w2, b2 = _unpack_mlp(arch, params)
    g_hidden = np.outer(g_out, w2) * (1.0 - rep**2)
    return g_hidden @ W1


def encoder_grad_from_rep(arch, params, X, d_rep) -> np.ndarray:
    """Parameter gradient of (1/n) * sum_i <d_rep_i, e(x_i)>.

    Chains an upstream representation gradient through the encoder only;
    decoder parameter slots come back zero. For logistic models the encoder
    is the identity and carries no parameters, so the result is all zeros.
    """
    params = _check_params(arch, params)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if arch.kind == "logistic":
        return np.zeros_like(params)
    W1, b1, w2, b2 = _unpack_mlp(arch, params)
    rep = np.tanh(X @ W1.T + b1)
    g_hidden = np.asarray(d_rep, dtype=np.float64) * (1.0 - rep**2)
    g_W1 = g_hidden.T @ X / n
    g_b1 = g_hidden.sum(axis=0) / n
    h = arch.hidden_dim
    return np.concatenate([g_W1.ravel(), g_b1, np.zeros(h), [0.0]])


def weighted_prediction_grad(arch, params, X, weights) -> np.ndarray:
    """Parameter gradient of (1/n) * sum_i weights_i * prediction_i."""
    params = _check_params(arch, params)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    w_s = np.asarray(weights, dtype=np.float64)
    preds, rep = forward_batch(arch, params, X)
    g_out = preds * (1.0 - preds) * w_s
    if arch.kind == "logistic":
        gw = X.T @ g_out / n
        return np.concatenate([gw, [g_out.sum() / n]])
    W1, b1, w2, b2 = _unpack_mlp(arch, params)
    g_w2 = rep.T @ g_out / n
    g_b2 = g_out.sum() / n
    g_hidden = np.outer(g_out, w2) * (1.0 - rep**2)
    g_W1 = g_hidden.T @ X / n
    g_b1 = g_hidden.sum(axis=0) / n
    return np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])


def predictor(arch: Architecture, params: np.ndarray):
    """Hard-label view of a model: callable x -> {0,1} with a .batch helper."""
    params = _check_params(arch, params)

    def fn(x):
        pred, _ = forward(arch, params, x)
        return 1 if pred >= 0.5 else 0

    def batch(X):
        preds, _ = forward_batch(arch, params, X)
        return (preds >= 0.5).astype(np.uint8)

    fn.batch = batch
    fn.arch = arch
    fn.params = params
    return fn


@dataclass(frozen=True)
class SideModel:
    """Auxiliary predictor over representation space.

    ``target`` selects what it is trained to predict from ``e(x)``:
    the label itself, or a separate binary annotation.
    """

    arch: Architecture
    params: np.ndarray
    target: str = "label"

    def __post_init__(self):
        if self.target not in ("label", "annotation"):
            raise ValidationError(f"side-model target must be label or annotation, got {self.target!r}")
        object.__setattr__(self, "params", _check_params(self.arch, self.params))

    @classmethod
    def for_encoder(cls, main_arch: Architecture, rng: Rng, target: str = "label",
                    kind: str = "logistic", hidden_dim: int = 0) -> "SideModel":
        arch = Architecture(kind=kind, input_dim=main_arch.rep_dim, hidden_dim=hidden_dim)
        return cls(arch=arch, params=init_params(arch, rng), target=target)


# -- checkpoints -------------------------------------------------------------

_HEADER = struct.Struct("<4sIBIIQ")


def save_checkpoint(arch: Architecture, params: np.ndarray, path) -> None:
    params = _check_params(arch, params)
    blob = _HEADER.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        _KIND_CODES[arch.kind],
        arch.input_dim,
        arch.hidden_dim,
        params.size,
    ) + params.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint back as (Architecture, params); bit-exact round trip."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValidationError("checkpoint truncated: missing header")
    magic, version, kind_code, input_dim, hidden_dim, count = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise ValidationError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    if kind_code not in _KIND_NAMES:
        raise ValidationError(f"unknown architecture code {kind_code}")
    expected = _HEADER.size + 8 * count
    if len(blob) != expected:
        raise ValidationError(f"checkpoint length {len(blob)} != expected {expected}")
    arch = Architecture(kind=_KIND_NAMES[kind_code], input_dim=input_dim, hidden_dim=hidden_dim)
    params = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    if params.size != arch.param_count:
        raise ValidationError("parameter count does not match the declared architecture")
    return arch, params
