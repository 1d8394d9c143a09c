import numpy as np
import pytest

from misalign.core import LossKind, NumericalError, Rng, ValidationError, loss
from misalign import models
from misalign.models import Architecture


LOGISTIC = Architecture(kind="logistic", input_dim=3)
MLP = Architecture(kind="mlp", input_dim=4, hidden_dim=5)


class TestArchitecture:
    def test_param_counts(self):
        assert LOGISTIC.param_count == 4
        assert MLP.param_count == 4 * 5 + 5 + 5 + 1 == 31

    def test_rep_dims(self):
        assert LOGISTIC.rep_dim == 3
        assert MLP.rep_dim == 5

    def test_validation(self):
        with pytest.raises(ValidationError):
            Architecture(kind="cnn", input_dim=3)
        with pytest.raises(ValidationError):
            Architecture(kind="mlp", input_dim=3, hidden_dim=0)
        with pytest.raises(ValidationError):
            Architecture(kind="logistic", input_dim=3, hidden_dim=2)


class TestInit:
    def test_deterministic(self):
        a = models.init_params(MLP, Rng(5))
        b = models.init_params(MLP, Rng(5))
        assert np.array_equal(a, b)

    def test_bounds_and_zero_biases(self):
        params = models.init_params(MLP, Rng(1))
        W1 = params[:20]
        assert np.abs(W1).max() <= 1 / np.sqrt(4)
        assert np.all(params[20:25] == 0.0)  # hidden biases
        assert params[-1] == 0.0


class TestForward:
    def test_zero_params_give_half(self):
        for arch in (LOGISTIC, MLP):
            pred, _ = models.forward(arch, np.zeros(arch.param_count), np.ones(arch.input_dim))
            assert pred == 0.5

    def test_representation_shapes(self):
        _, rep = models.forward(LOGISTIC, models.init_params(LOGISTIC, Rng(0)), np.ones(3))
        assert rep.shape == (3,)
        _, rep = models.forward(MLP, models.init_params(MLP, Rng(0)), np.ones(4))
        assert rep.shape == (5,)

    def test_dim_mismatch(self):
        with pytest.raises(ValidationError):
            models.forward(LOGISTIC, models.init_params(LOGISTIC, Rng(0)), np.ones(5))

    def test_nan_rejected(self):
        x = np.array([1.0, np.nan, 0.0])
        with pytest.raises(NumericalError):
            models.forward(LOGISTIC, models.init_params(LOGISTIC, Rng(0)), x)

    def test_decoder_composition(self):
        for arch in (LOGISTIC, MLP):
            params = models.init_params(arch, Rng(3))
            x = Rng(4).normal(size=arch.input_dim)
            pred, rep = models.forward(arch, params, x)
            assert models.decode(arch, params, rep[None, :])[0] == pytest.approx(pred, rel=1e-12)

    def test_deterministic(self):
        params = models.init_params(MLP, Rng(3))
        x = Rng(4).normal(size=4)
        a, _ = models.forward(MLP, params, x)
        b, _ = models.forward(MLP, params, x)
        assert a == b


def _loss_of(arch, params, x, y):
    pred, _ = models.forward(arch, params, x)
    return loss(LossKind.LOGISTIC, pred, y)


def _fd_param_grad(arch, params, x, y, h=1e-5):
    grad = np.zeros_like(params)
    for i in range(params.size):
        up, dn = params.copy(), params.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (_loss_of(arch, up, x, y) - _loss_of(arch, dn, x, y)) / (2 * h)
    return grad


def _fd_input_grad(arch, params, x, y, h=1e-5):
    grad = np.zeros_like(x)
    for i in range(x.size):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (_loss_of(arch, params, up, y) - _loss_of(arch, params, dn, y)) / (2 * h)
    return grad


def _rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


class TestGradients:
    def test_zero_one_rejected(self):
        with pytest.raises(ValidationError):
            models.backward(LOGISTIC, models.init_params(LOGISTIC, Rng(0)),
                            np.ones(3), 1, kind=LossKind.ZERO_ONE)

    def test_logistic_bias_gradient_is_residual(self):
        # hand derivation: d loss / d bias = prediction - y
        params = models.init_params(LOGISTIC, Rng(2))
        x = Rng(3).normal(size=3)
        pred, _ = models.forward(LOGISTIC, params, x)
        grad = models.backward(LOGISTIC, params, x, 1)
        assert grad[-1] == pytest.approx(pred - 1, rel=1e-12)

    @pytest.mark.parametrize("arch", [LOGISTIC, MLP], ids=["logistic", "mlp"])
    def test_param_gradient_matches_finite_differences(self, arch):
        rng = Rng(11)
        for _ in range(20):
            params = models.init_params(arch, rng.derive(int(rng.integers(0, 2**31))))
            x = rng.normal(size=arch.input_dim)
            y = int(rng.random() < 0.5)
            grad = models.backward(arch, params, x, y)
            assert _rel_err(grad, _fd_param_grad(arch, params, x, y)) < 1e-4

    @pytest.mark.parametrize("arch", [LOGISTIC, MLP], ids=["logistic", "mlp"])
    def test_input_gradient_matches_finite_differences(self, arch):
        rng = Rng(13)
        for _ in range(20):
            params = models.init_params(arch, rng.derive(int(rng.integers(0, 2**31))))
            x = rng.normal(size=arch.input_dim)
            y = int(rng.random() < 0.5)
            grad = models.input_gradient(arch, params, x, y)
            assert _rel_err(grad, _fd_input_grad(arch, params, x, y)) < 1e-4
            assert grad.shape == (arch.input_dim,)

    def test_zero_weight_logistic_has_zero_input_gradient(self):
        params = np.zeros(4)
        grad = models.input_gradient(LOGISTIC, params, np.ones(3), 1)
        assert np.all(grad == 0.0)

    def test_grad_batch_weights(self):
        params = models.init_params(MLP, Rng(1))
        X = Rng(2).normal(size=(6, 4))
        y = np.array([0, 1, 1, 0, 1, 0])
        base = models.grad_batch(MLP, params, X, y)
        doubled = models.grad_batch(MLP, params, X, y, weights=2 * np.ones(6))
        assert np.allclose(doubled, 2 * base)

    def test_encoder_grad_logistic_is_zero(self):
        params = models.init_params(LOGISTIC, Rng(1))
        X = Rng(2).normal(size=(4, 3))
        out = models.encoder_grad_from_rep(LOGISTIC, params, X, np.ones((4, 3)))
        assert np.all(out == 0.0)

    def test_encoder_grad_matches_finite_differences(self):
        # objective: (1/n) sum_i <d_rep_i, e(x_i)>
        params = models.init_params(MLP, Rng(7))
        X = Rng(8).normal(size=(5, 4))
        d_rep = Rng(9).normal(size=(5, 5))

        def objective(p):
            _, rep = models.forward_batch(MLP, p, X)
            return float((d_rep * rep).sum(axis=1).mean())

        grad = models.encoder_grad_from_rep(MLP, params, X, d_rep)
        fd = np.zeros_like(params)
        for i in range(params.size):
            up, dn = params.copy(), params.copy()
            up[i] += 1e-6
            dn[i] -= 1e-6
            fd[i] = (objective(up) - objective(dn)) / 2e-6
        assert _rel_err(grad, fd) < 1e-4

    def test_weighted_prediction_grad_matches_finite_differences(self):
        params = models.init_params(MLP, Rng(17))
        X = Rng(18).normal(size=(5, 4))
        w = Rng(19).normal(size=5)

        def objective(p):
            preds, _ = models.forward_batch(MLP, p, X)
            return float((w * preds).mean())

        grad = models.weighted_prediction_grad(MLP, params, X, w)
        fd = np.zeros_like(params)
        for i in range(params.size):
            up, dn = params.copy(), params.copy()
            up[i] += 1e-6
            dn[i] -= 1e-6
            fd[i] = (objective(up) - objective(dn)) / 2e-6
        assert _rel_err(grad, fd) < 1e-4


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        params = models.init_params(MLP, Rng(21))
        path = tmp_path / "model.ckpt"
        models.save_checkpoint(MLP, params, path)
        arch2, params2 = models.load_checkpoint(path)
        assert arch2 == MLP
        assert params2.tobytes() == params.tobytes()

    def test_corrupted_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        models.save_checkpoint(LOGISTIC, models.init_params(LOGISTIC, Rng(0)), path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(ValidationError):
            models.load_checkpoint(path)

    def test_version_gate(self, tmp_path):
        path = tmp_path / "model.ckpt"
        models.save_checkpoint(LOGISTIC, models.init_params(LOGISTIC, Rng(0)), path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (999).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(ValidationError):
            models.load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.ckpt"
        models.save_checkpoint(LOGISTIC, models.init_params(LOGISTIC, Rng(0)), path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ValidationError):
            models.load_checkpoint(path)


class TestSideModel:
    def test_for_encoder_dims(self):
        side = models.SideModel.for_encoder(MLP, Rng(0), target="annotation")
        assert side.arch.input_dim == MLP.rep_dim

    def test_target_validated(self):
        with pytest.raises(ValidationError):
            models.SideModel.for_encoder(MLP, Rng(0), target="wrong")

    def test_predictor_batch(self):
        params = models.init_params(MLP, Rng(4))
        pred = models.predictor(MLP, params)
        X = Rng(5).normal(size=(6, 4))
        batch = pred.batch(X)
        assert [pred(x) for x in X] == list(batch)
