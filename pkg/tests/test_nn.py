import numpy as np
import pytest

from edlkit.data import gaussian_blobs
from edlkit.losses import LossConfig, batch_loss_and_grad, total_loss
from edlkit.nn import (
    CHECKPOINT_VERSION,
    AdamState,
    Mlp,
    MlpSpec,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    train,
)


@pytest.fixture
def blobs():
    ds = gaussian_blobs(3, 40, dim=4, spread=0.5, seed=0)
    return ds.features, ds.labels


class TestSpec:
    def test_needs_hidden_layer(self):
        with pytest.raises(ValueError):
            MlpSpec((3, 2))

    def test_rejects_unknown_activation(self):
        with pytest.raises(ValueError):
            MlpSpec((3, 4, 2), "gelu")

    def test_rejects_zero_width(self):
        with pytest.raises(ValueError):
            MlpSpec((3, 0, 2))


class TestMlp:
    def test_shapes(self):
        net = Mlp(MlpSpec((5, 8, 6, 3)))
        assert net.param_shapes() == [(5, 8), (8,), (8, 6), (6,), (6, 3), (3,)]
        assert net.forward(np.zeros((7, 5))).shape == (7, 3)

    def test_init_is_seeded_and_bounded(self):
        a = Mlp(MlpSpec((4, 10, 2), init_seed=3))
        b = Mlp(MlpSpec((4, 10, 2), init_seed=3))
        c = Mlp(MlpSpec((4, 10, 2), init_seed=4))
        for p, q in zip(a.params, b.params):
            np.testing.assert_array_equal(p, q)
        assert not np.array_equal(a.params[0], c.params[0])
        assert np.abs(a.params[0]).max() <= np.sqrt(6 / 14)
        np.testing.assert_array_equal(a.params[1], 0.0)

    def test_input_shape_checked(self):
        with pytest.raises(ValueError):
            Mlp(MlpSpec((4, 5, 2))).forward(np.zeros((3, 5)))

    def test_backward_before_forward(self):
        with pytest.raises(RuntimeError):
            Mlp(MlpSpec((2, 3, 2))).backward(np.zeros((1, 2)))

    def test_params_shape_checked(self):
        with pytest.raises(ValueError):
            Mlp(MlpSpec((2, 3, 2)), [np.zeros((2, 3))])

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    @pytest.mark.parametrize("form", ["re_edl_mse", "edl_mse", "softmax_ce"])
    def test_backward_matches_finite_difference(self, activation, form):
        rng = np.random.default_rng(1)
        net = Mlp(MlpSpec((3, 6, 5, 3), activation, init_seed=2))
        x = rng.normal(size=(5, 3))
        y = np.eye(3)[rng.integers(3, size=5)]
        cfg = LossConfig(form=form, use_variance_term=True, kl_coefficient=0.5, kl_schedule="constant")
        _, g_logits = batch_loss_and_grad(net.forward(x), y, 0, cfg)
        grads = net.backward(g_logits)
        h = 1e-6
        for p, g in zip(net.params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = np.mean(total_loss(net.forward(x), y, 0, cfg))
                p[idx] = old - h
                down = np.mean(total_loss(net.forward(x), y, 0, cfg))
                p[idx] = old
                assert g[idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-7)

    def test_copy_is_independent(self):
        net = Mlp(MlpSpec((2, 3, 2)))
        clone = net.copy()
        clone.params[0][0, 0] += 1.0
        assert net.params[0][0, 0] != clone.params[0][0, 0]


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # bias correction makes the first update lr * sign(g)
        p = [np.array([1.0, -2.0, 0.5])]
        g = [np.array([0.3, -4.0, 1e-3])]
        adam_step(AdamState(lr=0.01), p, g)
        np.testing.assert_allclose(p[0], [0.99, -1.99, 0.49], atol=1e-6)

    def test_hand_computed_second_step(self):
        st = AdamState(lr=0.1, beta1=0.5, beta2=0.5, eps=0.0)
        p = [np.array([0.0])]
        adam_step(st, p, [np.array([1.0])])
        adam_step(st, p, [np.array([3.0])])
        m = (0.5 * 0.5 + 0.5 * 3.0) / (1 - 0.25)
        v = (0.5 * 0.5 + 0.5 * 9.0) / (1 - 0.25)
        assert p[0][0] == pytest.approx(-0.1 - 0.1 * m / np.sqrt(v))
        assert st.step == 2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(AdamState(), [np.zeros(2)], [np.zeros(3)])

    def test_minimises_quadratic(self):
        p = [np.array([5.0, -3.0])]
        st = AdamState(lr=0.1)
        for _ in range(500):
            adam_step(st, p, [2 * p[0]])
        assert np.abs(p[0]).max() < 1e-2


class TestTrain:
    @pytest.mark.parametrize("form", ["re_edl_mse", "edl_mse", "ce_projected", "softmax_mse", "softmax_ce"])
    def test_loss_decreases_and_fits(self, blobs, form):
        x, y = blobs
        cfg = LossConfig(form=form, use_variance_term=form == "edl_mse")
        net, log = train(Mlp(MlpSpec((4, 16, 3), init_seed=0)), x, y, cfg, epochs=30, batch_size=16, seed=0, lr=1e-2)
        assert len(log) == 30 and log[0]["epoch"] == 0
        assert log[-1]["loss"] < log[0]["loss"]
        assert log[-1]["accuracy"] > 0.9

    def test_evidence_columns(self, blobs):
        x, y = blobs
        _, log = train(Mlp(MlpSpec((4, 8, 3))), x, y, LossConfig(), epochs=2)
        assert log[-1]["mean_target_evidence"] >= 0
        _, log = train(Mlp(MlpSpec((4, 8, 3))), x, y, LossConfig(form="softmax_ce"), epochs=2)
        assert np.isnan(log[-1]["mean_target_evidence"])

    def test_deterministic(self, blobs):
        x, y = blobs
        runs = [train(Mlp(MlpSpec((4, 8, 3), init_seed=1)), x, y, LossConfig(), epochs=5, seed=2) for _ in range(2)]
        for p, q in zip(runs[0][0].params, runs[1][0].params):
            np.testing.assert_array_equal(p, q)
        assert runs[0][1] == runs[1][1]

    def test_label_shape_checked(self, blobs):
        x, y = blobs
        with pytest.raises(ValueError):
            train(Mlp(MlpSpec((4, 8, 2))), x, y, LossConfig(), epochs=1)

    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            train(Mlp(MlpSpec((2, 3, 2))), np.zeros((0, 2)), np.zeros((0, 2)), LossConfig(), epochs=1)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = Mlp(MlpSpec((3, 5, 2), "tanh", init_seed=9))
        path = tmp_path / "m.ckpt"
        save_checkpoint(net, path, {"note": "x"})
        loaded, header = load_checkpoint(path)
        assert header["format_version"] == CHECKPOINT_VERSION
        assert header["extra"] == {"note": "x"}
        assert loaded.spec == net.spec
        for p, q in zip(net.params, loaded.params):
            np.testing.assert_array_equal(p, q)

    def test_bytes_are_deterministic(self, tmp_path):
        net = Mlp(MlpSpec((3, 5, 2)))
        save_checkpoint(net, tmp_path / "a")
        save_checkpoint(net, tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "x").write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x")

    @pytest.mark.parametrize("keep", [11, 15, 40, -8])
    def test_rejects_truncated_file(self, tmp_path, keep):
        save_checkpoint(Mlp(MlpSpec((2, 3, 2))), tmp_path / "m")
        data = (tmp_path / "m").read_bytes()
        (tmp_path / "m").write_bytes(data[:keep])
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "m")

    def test_rejects_trailing_bytes(self, tmp_path):
        save_checkpoint(Mlp(MlpSpec((2, 3, 2))), tmp_path / "m")
        with open(tmp_path / "m", "ab") as fh:
            fh.write(b"\0" * 8)
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "m")
