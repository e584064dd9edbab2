import numpy as np
import pytest

from pcbd import nn
from pcbd.errors import (
    EmptyInput,
    LabelOutOfRange,
    ParseError,
    ShapeMismatch,
)
from pcbd.metrics import chamfer, sliced_wasserstein
from pcbd.nn import AdamState, LayerParams, Var, adam_step, grad_check


def make_bn_layer(c_in, c_out, seed):
    return nn.init_layer(c_in, c_out, np.random.default_rng(seed), with_bn=True)


class TestLayerBnRelu:
    def test_identity_composition(self):
        # W=I, b=0, gamma=1, beta=0, running stats equal to batch stats:
        # infer mode reproduces nonnegative inputs exactly
        x = np.abs(np.random.default_rng(0).normal(size=(20, 4))) + 0.1
        p = LayerParams(
            w=Var(np.eye(4)),
            b=Var(np.zeros(4)),
            bn_gamma=Var(np.ones(4)),
            bn_beta=Var(np.zeros(4)),
            bn_running_mean=x.mean(axis=0),
            bn_running_var=x.var(axis=0),
        )
        out = nn.layer_bn_relu(Var(x), p, "infer").value
        expect = (x - x.mean(0)) / np.sqrt(x.var(0) + nn.BN_EPS)
        np.testing.assert_allclose(out, np.maximum(expect, 0.0), atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients_match_finite_differences(self, seed):
        gen = np.random.default_rng(seed)
        p = make_bn_layer(5, 3, seed)
        x = Var(gen.normal(size=(8, 5)))
        for mode in ("train", "infer"):
            rep = grad_check(
                lambda: nn.mean_all(nn.layer_bn_relu(x, p, mode)),
                {"x": x, "w": p.w, "gamma": p.bn_gamma, "beta": p.bn_beta},
                tol=1e-4,
            )
            assert rep["ok"], (mode, rep)

    def test_infer_deterministic(self):
        p = make_bn_layer(4, 4, 3)
        x = np.random.default_rng(4).normal(size=(10, 4))
        a = nn.layer_bn_relu(Var(x), p, "infer").value
        b = nn.layer_bn_relu(Var(x), p, "infer").value
        np.testing.assert_array_equal(a, b)

    def test_train_mode_batch_statistics(self):
        # pre-affine normalized activations: zero mean, unit variance
        gen = np.random.default_rng(5)
        p = make_bn_layer(4, 6, 5)
        p.bn_gamma.value[:] = 1.0
        p.bn_beta.value[:] = 0.0
        x = gen.normal(2.0, 3.0, size=(50, 4))
        pre = nn.affine(Var(x), p.w, p.b)
        normed = nn.batchnorm(
            pre, p.bn_gamma, p.bn_beta, p.bn_running_mean, p.bn_running_var,
            mode="train", eps=1e-12,
        ).value
        assert np.abs(normed.mean(axis=0)).max() <= 1e-8
        assert np.abs(normed.var(axis=0) - 1.0).max() <= 1e-6

    def test_running_stats_update(self):
        p = make_bn_layer(3, 3, 6)
        x = np.random.default_rng(6).normal(size=(30, 3))
        pre_mean = p.bn_running_mean.copy()
        nn.layer_bn_relu(Var(x), p, "train")
        assert not np.array_equal(p.bn_running_mean, pre_mean)

    def test_shape_mismatch(self):
        p = make_bn_layer(5, 3, 7)
        with pytest.raises(ShapeMismatch):
            nn.layer_bn_relu(Var(np.zeros((4, 6))), p, "train")


class TestPlainLayers:
    def test_zero_weights_give_bias(self):
        gen = np.random.default_rng(8)
        b = gen.normal(size=4)
        p = LayerParams(w=Var(np.zeros((6, 4))), b=Var(b))
        x = gen.normal(size=(9, 6))
        np.testing.assert_allclose(nn.layer_linear(Var(x), p).value,
                                   np.tile(b, (9, 1)), atol=1e-15)
        np.testing.assert_allclose(nn.layer_relu(Var(x), p).value,
                                   np.tile(np.maximum(b, 0), (9, 1)), atol=1e-15)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients(self, seed):
        gen = np.random.default_rng(seed + 100)
        p = nn.init_layer(4, 5, gen)
        x = Var(gen.normal(size=(6, 4)))
        for layer in (nn.layer_relu, nn.layer_linear):
            rep = grad_check(
                lambda: nn.mean_all(layer(x, p)),
                {"x": x, "w": p.w, "b": p.b},
                tol=1e-4,
            )
            assert rep["ok"], rep

    def test_linear_is_affine(self):
        gen = np.random.default_rng(9)
        p = nn.init_layer(5, 3, gen)
        x, y = gen.normal(size=(7, 5)), gen.normal(size=(7, 5))
        alpha = 0.3
        mixed = nn.layer_linear(Var(alpha * x + (1 - alpha) * y), p).value
        combo = (alpha * nn.layer_linear(Var(x), p).value
                 + (1 - alpha) * nn.layer_linear(Var(y), p).value)
        np.testing.assert_allclose(mixed, combo, atol=1e-12)


class TestMaxpool:
    def test_single_row(self):
        x = np.random.default_rng(10).normal(size=(1, 5))
        np.testing.assert_array_equal(
            nn.maxpool_points(Var(x)).value, x[0]
        )

    def test_gradient_one_hot_at_argmax(self):
        gen = np.random.default_rng(11)
        xv = gen.normal(size=(6, 4))
        x = Var(xv)
        nn.mean_all(nn.maxpool_points(x)).backward()
        expected = np.zeros_like(xv)
        expected[xv.argmax(axis=0), np.arange(4)] = 0.25
        np.testing.assert_allclose(x.grad, expected, atol=1e-15)
        rep = grad_check(
            lambda: nn.mean_all(nn.maxpool_points(x)), {"x": x}, tol=1e-4
        )
        assert rep["ok"]

    def test_tie_routes_to_lowest_index(self):
        x = Var(np.array([[2.0], [2.0], [1.0]]))
        nn.mean_all(nn.maxpool_points(x)).backward()
        np.testing.assert_array_equal(x.grad, [[1.0], [0.0], [0.0]])

    def test_permutation_invariance(self):
        gen = np.random.default_rng(12)
        x = gen.normal(size=(20, 6))
        perm = gen.permutation(20)
        a = nn.maxpool_points(Var(x)).value
        b = nn.maxpool_points(Var(x[perm])).value
        np.testing.assert_array_equal(a, b)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            nn.maxpool_points(Var(np.zeros((0, 3))))


class TestConcatBroadcast:
    def test_shapes_and_slices(self):
        gen = np.random.default_rng(13)
        local = gen.normal(size=(9, 4))
        glob = gen.normal(size=6)
        out = nn.concat_broadcast(Var(local), Var(glob)).value
        assert out.shape == (9, 10)
        assert np.ptp(out[:, 4:], axis=0).max() == 0.0

    def test_global_gradient_is_row_sum(self):
        gen = np.random.default_rng(14)
        local = Var(gen.normal(size=(5, 3)))
        glob = Var(gen.normal(size=2))
        rep = grad_check(
            lambda: nn.mean_all(nn.concat_broadcast(local, glob)),
            {"local": local, "glob": glob},
            tol=1e-4,
        )
        assert rep["ok"]

    def test_concat_affine_equals_explicit_path(self):
        gen = np.random.default_rng(15)
        local = gen.normal(size=(2, 6, 4))
        glob = gen.normal(size=(2, 3))
        w, b = gen.normal(size=(7, 5)), gen.normal(size=5)
        fused = nn.concat_affine(Var(local), Var(glob), Var(w), Var(b)).value
        explicit = nn.affine(
            nn.concat_broadcast(Var(local), Var(glob)), Var(w), Var(b)
        ).value
        np.testing.assert_allclose(fused, explicit, atol=1e-12)


class TestEdgeFeatures:
    def test_matches_explicit_ops(self):
        gen = np.random.default_rng(16)
        x = gen.normal(size=(8, 3))
        idx = np.stack([gen.choice(8, 4, replace=False) for _ in range(8)])
        fused = nn.edge_features(Var(x), idx).value
        xi = nn.expand_point_axis(Var(x), 4)
        xj = nn.gather_rows(Var(x), idx)
        explicit = nn.concat_lastdim(xi, nn.sub(xj, xi)).value
        np.testing.assert_allclose(fused, explicit, atol=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    def test_gradients(self, seed):
        gen = np.random.default_rng(seed + 200)
        x = Var(gen.normal(size=(7, 3)))
        idx = np.stack([gen.choice(7, 3, replace=False) for _ in range(7)])
        rep = grad_check(
            lambda: nn.mean_all(nn.relu(nn.edge_features(x, idx))),
            {"x": x},
            tol=1e-4,
        )
        assert rep["ok"], rep


class TestSoftmaxXent:
    def test_uniform_logits(self):
        loss = nn.softmax_xent(Var(np.zeros(4)), np.asarray(2))
        assert loss.item() == pytest.approx(np.log(4.0), abs=1e-12)

    def test_gradient_sums_to_zero(self):
        gen = np.random.default_rng(17)
        logits = Var(gen.normal(size=6))
        nn.mean_all(nn.softmax_xent(logits, np.asarray(3))).backward()
        assert abs(logits.grad.sum()) <= 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_finite_differences(self, seed):
        gen = np.random.default_rng(seed + 300)
        logits = Var(gen.normal(size=(4, 5)))
        labels = gen.integers(0, 5, size=4)
        rep = grad_check(
            lambda: nn.mean_all(nn.softmax_xent(logits, labels)),
            {"logits": logits},
            tol=1e-5,
        )
        assert rep["ok"], rep

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRange):
            nn.softmax_xent(Var(np.zeros(3)), np.asarray(3))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Var(np.array([1.0, -2.0]))
        state = AdamState(lr=0.01)
        adam_step([p], state, grads=[np.zeros(2)])
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        assert state.step == 1

    def test_hand_computed_first_step(self):
        # m_hat = v_hat = 1 after one step on g=1, so the update is
        # -lr / (1 + eps)
        p = Var(np.array([0.0]))
        state = AdamState(lr=0.001)
        adam_step([p], state, grads=[np.array([1.0])])
        assert p.value[0] == pytest.approx(-0.001, abs=1e-6)

    def test_two_runs_identical(self):
        def run():
            gen = np.random.default_rng(18)
            p = Var(gen.normal(size=(4, 3)))
            state = AdamState(lr=0.05)
            for _ in range(25):
                adam_step([p], state, grads=[gen.normal(size=(4, 3))])
            return p.value

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch(self):
        p = Var(np.zeros(3))
        with pytest.raises(ShapeMismatch):
            adam_step([p], AdamState(), grads=[np.zeros(4)])


class TestGradCheck:
    def test_negative_control_detects_corruption(self):
        gen = np.random.default_rng(19)
        w = Var(gen.normal(size=(3, 2)))
        x = gen.normal(size=(5, 3))

        def forward():
            out = nn.affine(Var(x), w, Var(np.zeros(2)))
            bad = Var(out.value, parents=(w,))

            def backward(g):  # wrong by a factor of 2
                w.grad = (w.grad if w.grad is not None else 0) + 2.0 * (
                    x.T @ g
                )

            bad._backward = backward
            return nn.mean_all(bad)

        rep = grad_check(forward, {"w": w}, tol=1e-4)
        assert not rep["ok"]

    def test_report_deterministic(self):
        gen = np.random.default_rng(20)
        p = nn.init_layer(3, 3, gen)
        x = Var(gen.normal(size=(4, 3)))
        fwd = lambda: nn.mean_all(nn.layer_relu(x, p))
        a = grad_check(fwd, {"x": x, "w": p.w}, tol=1e-4)
        b = grad_check(fwd, {"x": x, "w": p.w}, tol=1e-4)
        assert a == b


class TestLossOps:
    def test_chamfer_loss_matches_metric(self):
        gen = np.random.default_rng(21)
        a = gen.normal(size=(10, 3))
        b = gen.normal(size=(10, 3))
        assert nn.chamfer_loss(Var(a), b).item() == pytest.approx(
            chamfer(a, b), rel=1e-12
        )

    def test_swd_loss_matches_metric(self):
        gen = np.random.default_rng(22)
        a = gen.normal(size=(12, 3))
        b = gen.normal(size=(12, 3))
        dirs = gen.normal(size=(16, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        assert nn.swd_loss(Var(a), b, dirs).item() == pytest.approx(
            sliced_wasserstein(a, b, directions=dirs), rel=1e-12
        )

    @pytest.mark.parametrize("seed", range(10))
    def test_loss_gradients(self, seed):
        gen = np.random.default_rng(seed + 400)
        r = Var(gen.normal(size=(2, 7, 3)))
        t = gen.normal(size=(2, 7, 3))
        dirs = gen.normal(size=(6, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for loss in (
            lambda: nn.mean_all(nn.chamfer_loss(r, t)),
            lambda: nn.mean_all(nn.swd_loss(r, t, dirs)),
        ):
            rep = grad_check(loss, {"r": r}, tol=1e-4)
            assert rep["ok"], rep


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        gen = np.random.default_rng(23)
        arrays = {"a": gen.normal(size=(3, 4)), "b": gen.normal(size=7)}
        path = tmp_path / "m.pcbd"
        nn.save_checkpoint(path, "demo", arrays, rng_seed=5, epoch=2,
                           extra={"note": "x"})
        arch, back, meta = nn.load_checkpoint(path)
        assert arch == "demo"
        assert meta["rng_seed"] == 5 and meta["epoch"] == 2
        for k in arrays:
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_byte_deterministic(self, tmp_path):
        arrays = {"a": np.arange(6.0).reshape(2, 3)}
        p1, p2 = tmp_path / "a.pcbd", tmp_path / "b.pcbd"
        nn.save_checkpoint(p1, "demo", arrays, rng_seed=1)
        nn.save_checkpoint(p2, "demo", arrays, rng_seed=1)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.pcbd"
        path.write_bytes(b"NOPE!\nmeta 2\n{}\n")
        with pytest.raises(ParseError):
            nn.load_checkpoint(path)
