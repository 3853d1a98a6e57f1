import math

import numpy as np
import pytest

from clothlab.errors import DimensionError, NumericError
from clothlab.nn import (
    ParamStore,
    Tape,
    adam_update,
    affine,
    core,
    finite_diff_check,
    gaussian_head,
    gru_cell,
    load_params,
    run_gradient_audit,
    save_params,
)


class TestAffine:
    def test_zero_weights_zero_output_and_grad(self):
        store = ParamStore()
        x = core.Tensor(np.ones((2, 3)), requires=True)
        w = store.get("l.w", (3, 4), init="zeros")
        b = store.get("l.b", (4,), init="zeros")
        with Tape() as tape:
            y = core.add(core.matmul(x, w), b)
            loss = core.total(y)
            tape.backward(loss)
        assert np.all(y.data == 0.0)
        assert np.all(x.grad == 0.0)

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError) as err:
            core.matmul(core.Tensor(np.ones((2, 3))), core.Tensor(np.ones((4, 5))))
        assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)

    def test_reused_parameter_shape_checked(self):
        store = ParamStore()
        store.get("w", (3, 4))
        with pytest.raises(DimensionError):
            store.get("w", (3, 5))


class TestActivations:
    def test_tanh_gradient_at_zero(self):
        x = core.Tensor(np.zeros(3), requires=True)
        with Tape() as tape:
            tape.backward(core.total(core.tanh(x)))
        assert np.allclose(x.grad, 1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            core.activation(core.Tensor(np.ones(2)), "relu6")

    @pytest.mark.parametrize("kind", ["tanh", "elu", "softplus", "sigmoid"])
    def test_finite_diff_each(self, kind):
        store = ParamStore(seed=4)
        x = np.random.default_rng(0).normal(size=(2, 3))

        def fn():
            return core.total(core.square(core.activation(affine(store, x, "l", 4), kind)))

        fn()
        assert finite_diff_check(fn, store) < 1e-6


class TestGruCell:
    def test_open_gates_give_candidate(self):
        store = ParamStore(seed=0)
        h = np.random.default_rng(1).normal(size=(1, 4))
        x = np.random.default_rng(2).normal(size=(1, 3))
        gru_cell(store, h, x, "g")  # create params
        # force both gates open with huge positive biases
        store.params["g.reset.b"].data[:] = 50.0
        store.params["g.update.b"].data[:] = 50.0
        out = gru_cell(store, h, x, "g")
        hx = np.concatenate([x, h], axis=1)
        cand = np.tanh(hx @ store.params["g.cand.w"].data + store.params["g.cand.b"].data)
        assert np.allclose(out.data, cand, atol=1e-12)

    def test_gradcheck_composite(self):
        store = ParamStore(seed=5)
        h0 = np.random.default_rng(3).normal(size=(2, 4))
        xs = np.random.default_rng(4).normal(size=(2, 2, 3))

        def fn():
            h = core.as_tensor(h0)
            for t in range(2):
                h = gru_cell(store, h, xs[:, t], "cell")
            return core.total(core.square(h))

        fn()
        assert finite_diff_check(fn, store) < 1e-4


class TestGaussianHead:
    def test_softplus_floor_value(self):
        store = ParamStore(seed=1)
        x = np.zeros((1, 3))
        mean, std = gaussian_head(store, x, "h", 2, min_std=0.1)
        # zero input keeps only the bias, which is zero: std = softplus(0) + 0.1
        assert np.allclose(std.data, math.log(2.0) + 0.1)
        assert std.data.min() >= 0.1

    def test_std_always_at_least_floor(self):
        store = ParamStore(seed=2)
        rng = np.random.default_rng(0)
        for _ in range(20):
            _, std = gaussian_head(store, rng.normal(size=(4, 3)) * 10, "h", 5, min_std=0.07)
            assert std.data.min() >= 0.07

    def test_mean_and_std_paths_disjoint(self):
        store = ParamStore(seed=3)
        x = np.random.default_rng(1).normal(size=(2, 3))
        with Tape() as tape:
            mean, std = gaussian_head(store, x, "h", 2, min_std=0.1)
            tape.backward(core.total(mean))
        assert store.params["h.rawstd.w"].grad is None
        store.zero_grads()
        with Tape() as tape:
            mean, std = gaussian_head(store, x, "h", 2, min_std=0.1)
            tape.backward(core.total(std))
        assert store.params["h.mean.w"].grad is None

    def test_min_std_must_be_positive(self):
        store = ParamStore()
        with pytest.raises(ValueError):
            gaussian_head(store, np.zeros((1, 2)), "h", 2, min_std=0.0)


class TestKl:
    def test_identical_is_zero(self):
        v = core.kl_diag_gaussians(np.ones(3), np.ones(3) * 0.5, np.ones(3), np.ones(3) * 0.5)
        assert v.item() == pytest.approx(0.0, abs=1e-15)

    def test_unit_shift(self):
        v = core.kl_diag_gaussians(np.array([1.0]), np.array([1.0]),
                                   np.array([0.0]), np.array([1.0]))
        assert v.item() == pytest.approx(0.5, abs=1e-10)

    def test_variance_ratio(self):
        v = core.kl_diag_gaussians(np.array([0.0]), np.array([2.0]),
                                   np.array([0.0]), np.array([1.0]))
        assert v.item() == pytest.approx(2.0 - 0.5 - math.log(2.0), abs=1e-10)

    def test_nonnegative_em_100k(self):
        rng = np.random.default_rng(0)
        mq, mp = rng.normal(size=(2, 100_000, 1))
        sq, sp = rng.uniform(0.05, 3.0, size=(2, 100_000, 1))
        rows = core.kl_diag_gaussians_per_row(mq, sq, mp, sp)
        assert rows.data.min() >= 0.0

    def test_nonpositive_std_rejected(self):
        with pytest.raises(NumericError):
            core.kl_diag_gaussians(np.zeros(2), np.zeros(2), np.zeros(2), np.ones(2))


class TestLikelihoods:
    def test_bernoulli_logit_zero(self):
        logits = np.zeros((3, 4))
        bits = np.random.default_rng(0).integers(0, 2, (3, 4)).astype(float)
        v = core.bernoulli_nll(core.Tensor(logits), bits)
        assert v.item() == pytest.approx(12 * math.log(2.0), abs=1e-12)

    def test_bernoulli_saturation(self):
        v = core.bernoulli_nll(core.Tensor(np.full((1, 4), 20.0)), np.ones((1, 4)))
        assert v.item() == pytest.approx(0.0, abs=1e-8)

    def test_gaussian_standard_normal_at_mean(self):
        v = core.gaussian_nll(np.zeros(1), np.ones(1), np.zeros(1))
        assert v.item() == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)
        assert v.item() == pytest.approx(0.9189, abs=1e-4)

    def test_row_weights_mask_rows(self):
        logits = core.Tensor(np.ones((2, 3)))
        bits = np.zeros((2, 3))
        full = core.bernoulli_nll(logits, bits).item()
        half = core.bernoulli_nll(logits, bits, row_weights=np.array([1.0, 0.0])).item()
        assert half == pytest.approx(full / 2)


class TestAdam:
    def test_zero_gradients_no_change(self):
        store = ParamStore(seed=0)
        p = store.get("p", (3,))
        before = p.data.copy()
        adam_update(store, {"p": np.zeros(3)}, lr=0.1)
        assert np.allclose(p.data, before)

    def test_constant_gradient_step_approaches_lr(self):
        store = ParamStore(seed=0)
        p = store.get("p", (1,))
        g = np.array([0.37])
        for _ in range(300):
            adam_update(store, {"p": g}, lr=0.01)
        last = p.data.copy()
        adam_update(store, {"p": g}, lr=0.01)
        assert abs(last[0] - p.data[0]) == pytest.approx(0.01, rel=1e-3)

    def test_bitwise_determinism(self):
        def run():
            store = ParamStore(seed=9)
            store.get("w", (4, 4))
            rng = np.random.default_rng(0)
            for _ in range(10):
                adam_update(store, {"w": rng.normal(size=(4, 4))}, lr=3e-3)
            return store.params["w"].data

        assert np.array_equal(run(), run())

    def test_shape_mismatch(self):
        store = ParamStore()
        store.get("p", (3,))
        with pytest.raises(DimensionError):
            adam_update(store, {"p": np.zeros(4)}, lr=0.1)


class TestFiniteDiff:
    def test_linear_function_near_exact(self):
        store = ParamStore(seed=0)
        x = np.random.default_rng(2).normal(size=(2, 3))

        def fn():
            return core.total(affine(store, x, "lin", 2))

        fn()
        assert finite_diff_check(fn, store) < 1e-8

    def test_two_layer_tanh_net(self):
        store = ParamStore(seed=1)
        x = np.random.default_rng(3).normal(size=(3, 4))
        t = np.random.default_rng(4).normal(size=(3, 2))

        def fn():
            h = core.tanh(affine(store, x, "l1", 5))
            y = core.tanh(affine(store, h, "l2", 2))
            return core.total(core.square(core.sub(y, t)))

        fn()
        assert finite_diff_check(fn, store, epsilon=1e-5) < 1e-4


class TestTapeInvariants:
    def test_backward_preserves_forward_values(self):
        store = ParamStore(seed=2)
        x = np.random.default_rng(5).normal(size=(2, 3))
        with Tape() as tape:
            y = core.tanh(affine(store, x, "l", 3))
            snapshot = y.data.copy()
            loss = core.total(core.square(y))
            tape.backward(loss)
        assert np.array_equal(y.data, snapshot)

    def test_no_nested_tapes(self):
        with Tape():
            with pytest.raises(RuntimeError):
                Tape().__enter__()
        assert core._ACTIVE_TAPE is None

    def test_detach_blocks_flow(self):
        store = ParamStore(seed=3)
        x = np.random.default_rng(6).normal(size=(1, 3))
        with Tape() as tape:
            y = affine(store, x, "l", 2)
            tape.backward(core.total(core.square(y.detach())))
        assert store.params["l.w"].grad is None


class TestGradientAudit:
    def test_full_audit_passes(self):
        results = run_gradient_audit(seed=0)
        assert results, "audit must cover at least one composition"
        assert max(results.values()) < 1e-4


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = {
            "enc.w": np.random.default_rng(0).normal(size=(7, 3)),
            "enc.b": np.zeros(3),
            "scalar": np.array(2.5),
        }
        path = tmp_path / "model.lgnn"
        save_params(params, path)
        loaded = load_params(path)
        assert set(loaded) == set(params)
        for k in params:
            assert np.array_equal(loaded[k], params[k])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.lgnn"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        from clothlab.errors import DatasetFormatError

        with pytest.raises(DatasetFormatError):
            load_params(path)

    def test_truncated(self, tmp_path):
        params = {"w": np.ones((4, 4))}
        path = tmp_path / "model.lgnn"
        save_params(params, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 10])
        from clothlab.errors import DatasetFormatError

        with pytest.raises(DatasetFormatError):
            load_params(path)
