import math

import numpy as np
import pytest

from hstgnn.diffengine import (
    AdamState,
    InitSpec,
    ParameterStore,
    Tensor,
    adam_step,
    backward,
    check_function,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)
from hstgnn.diffengine import ops
from hstgnn.errors import (
    CheckpointError,
    NonFiniteGradientError,
    RegistrationError,
    ShapeError,
)


class TestRegisterParam:
    def test_zero_init(self):
        store = ParameterStore()
        store.register("W0", (4, 4), InitSpec.zeros())
        assert np.all(store.values["W0"] == 0.0)
        assert np.all(store.grads["W0"] == 0.0)

    def test_duplicate_rejected(self):
        store = ParameterStore()
        store.register("W0", (4, 4), InitSpec.zeros())
        with pytest.raises(RegistrationError):
            store.register("W0", (4, 4), InitSpec.zeros())

    def test_nonpositive_shape_rejected(self):
        with pytest.raises(ShapeError):
            ParameterStore().register("W", (0, 3), InitSpec.zeros())

    def test_seeded_uniform_repeatable(self):
        a, b = ParameterStore(), ParameterStore()
        a.register("M1", (1024, 8), InitSpec.glorot(), np.random.default_rng(7))
        b.register("M1", (1024, 8), InitSpec.glorot(), np.random.default_rng(7))
        assert a.values["M1"].tobytes() == b.values["M1"].tobytes()
        bound = math.sqrt(6.0 / (1024 + 8))
        assert np.abs(a.values["M1"]).max() <= bound

    def test_lexicographic_order(self):
        store = ParameterStore()
        for n in ["b", "a", "c"]:
            store.register(n, (1,), InitSpec.zeros())
        assert list(store) == ["a", "b", "c"]


class TestBackward:
    def _store(self, value):
        store = ParameterStore()
        store.register("W", np.shape(value), InitSpec.zeros())
        store.values["W"][...] = value
        return store

    def test_sum_gives_ones(self):
        store = self._store(np.array([[1.0, -2.0], [3.0, 4.0]]))
        backward(store.tensor("W").sum())
        np.testing.assert_array_equal(store.grads["W"], np.ones((2, 2)))

    def test_square(self):
        store = self._store(np.array([[3.0, 0.0], [0.0, 0.0]]))
        w = store.tensor("W")
        backward((w * w).sum())
        np.testing.assert_array_equal(store.grads["W"], [[6.0, 0.0], [0.0, 0.0]])

    def test_two_class_softmax_cross_entropy(self):
        store = self._store(np.array([0.0, 0.0]))
        logits = store.tensor("W")
        loss = -ops.log_softmax(logits)[0]
        backward(loss)
        np.testing.assert_allclose(store.grads["W"], [-0.5, 0.5], atol=1e-15)

    def test_nonscalar_rejected(self):
        store = self._store(np.ones((2, 2)))
        with pytest.raises(ShapeError):
            backward(store.tensor("W") * 2.0)

    def test_double_backward_accumulates(self):
        rng = np.random.default_rng(0)
        store = self._store(rng.normal(size=(3, 3)))
        w = store.tensor("W")
        loss = (ops.tanh(w @ w) * w).sum()
        backward(loss)
        once = store.grads["W"].copy()
        backward(loss)
        np.testing.assert_allclose(store.grads["W"], 2 * once, rtol=0, atol=1e-15)

    def test_inputs_get_no_gradient(self):
        store = self._store(np.ones((2, 2)))
        x = Tensor(np.arange(4.0).reshape(2, 2))
        backward((store.tensor("W") @ x).sum())
        assert x.grad is None
        np.testing.assert_array_equal(store.grads["W"], [[1.0, 5.0], [1.0, 5.0]])

    def test_deterministic(self):
        def run():
            store = ParameterStore()
            store.register("W", (5, 5), InitSpec.glorot(), np.random.default_rng(3))
            w = store.tensor("W")
            loss = ops.softmax(w @ w.T).sum() + (ops.sigmoid(w) * w).sum()
            backward(loss)
            return loss.item(), store.grads["W"].tobytes()

        assert run() == run()


RNG = np.random.default_rng(2024)
SMOOTH_POINT = RNG.normal(size=(3, 4))
POSITIVE_POINT = RNG.uniform(0.5, 2.0, size=(3, 4))
OTHER = RNG.normal(size=(4, 5))
BATCHED = RNG.normal(size=(2, 4, 3))


@pytest.mark.parametrize("name,fn,point", [
    ("matmul_left", lambda x: x @ Tensor(OTHER), SMOOTH_POINT),
    ("matmul_right", lambda x: Tensor(SMOOTH_POINT) @ x, OTHER),
    ("matmul_batched_weight", lambda x: Tensor(BATCHED) @ x, SMOOTH_POINT),
    ("matvec", lambda x: x @ Tensor(OTHER[:, 0]), SMOOTH_POINT),
    ("vecmat", lambda x: x[0] @ Tensor(OTHER), SMOOTH_POINT),
    ("add_broadcast", lambda x: (x + x[0]) * Tensor(SMOOTH_POINT), SMOOTH_POINT),
    ("mul", lambda x: x * x * Tensor(SMOOTH_POINT), SMOOTH_POINT),
    ("div", lambda x: Tensor(SMOOTH_POINT) / x, POSITIVE_POINT),
    ("sub", lambda x: x - 3.0 * x.sum(axis=0, keepdims=True), SMOOTH_POINT),
    ("exp", ops.exp, SMOOTH_POINT),
    ("log", ops.log, POSITIVE_POINT),
    ("sqrt", ops.sqrt, POSITIVE_POINT),
    ("sigmoid", ops.sigmoid, SMOOTH_POINT * 3),
    ("tanh", ops.tanh, SMOOTH_POINT),
    ("softmax", lambda x: ops.softmax(x) * Tensor(SMOOTH_POINT), SMOOTH_POINT),
    ("softmax_axis0", lambda x: ops.softmax(x, axis=0) * Tensor(SMOOTH_POINT), SMOOTH_POINT),
    ("log_softmax", lambda x: ops.log_softmax(x) * Tensor(SMOOTH_POINT), SMOOTH_POINT),
    ("mean", lambda x: x.mean(axis=1) * x.mean(), SMOOTH_POINT),
    ("transpose", lambda x: ops.transpose(x.reshape(3, 2, 2), (2, 0, 1)) * Tensor(np.arange(12.0).reshape(2, 3, 2)), SMOOTH_POINT),
    ("concat", lambda x: ops.concat([x, x * x], axis=1) * Tensor(np.arange(24.0).reshape(3, 8)), SMOOTH_POINT),
    ("stack", lambda x: ops.stack([x[0], x[2] * x[1]]) * x[1], SMOOTH_POINT),
    ("fancy_index", lambda x: x[np.array([0, 0, 2])] * Tensor(SMOOTH_POINT), SMOOTH_POINT),
    ("swap", lambda x: x.T @ x, SMOOTH_POINT),
])
def test_primitive_matches_finite_differences(name, fn, point):
    assert check_function(fn, point) < 1e-6, name


def test_relu_away_from_kink():
    point = np.array([[-1.0, 0.5], [2.0, -0.3]])
    assert check_function(ops.relu, point) < 1e-9


class TestGradCheck:
    def test_square(self):
        assert check_function(lambda x: x * x, np.array([3.0]), eps=1e-5) < 1e-9

    def test_abs_kink_is_reported(self):
        # analytic subgradient 1 vs symmetric difference 0
        err = check_function(ops.abs_, np.array([0.0]))
        assert err == pytest.approx(1.0)

    def test_subsample_threshold(self):
        store = ParameterStore()
        store.register("big", (30, 30), InitSpec.glorot(), np.random.default_rng(0))
        report = grad_check(lambda: ops.tanh(store.tensor("big")).sum(), store)
        assert report.checked == 200
        assert report.max_rel_error < 1e-8

    def test_nonfinite_reported(self):
        from hstgnn.errors import GradCheckError
        store = ParameterStore()
        store.register("x", (1,), InitSpec.zeros())
        store.values["x"][0] = 1e-5
        with pytest.raises(GradCheckError, match=r"x\[0\]"):
            grad_check(lambda: ops.log(store.tensor("x")).sum(), store, eps=1e-5)


class TestAdam:
    def _store(self, value):
        store = ParameterStore()
        store.register("w", (1,), InitSpec.zeros())
        store.values["w"][...] = value
        return store

    def test_first_step_moves_by_lr(self):
        store = self._store(1.0)
        opt = AdamState.for_store(store, lr=0.001)
        store.grads["w"][...] = 2.0
        adam_step(store, opt)
        assert store.values["w"][0] == pytest.approx(1.0 - 0.001, abs=1e-10)
        assert opt.t == 1
        assert store.grads["w"][0] == 0.0

    def test_zero_gradient_keeps_value(self):
        store = self._store(0.25)
        opt = AdamState.for_store(store)
        adam_step(store, opt)
        assert store.values["w"][0] == 0.25

    def test_quadratic_decreases(self):
        store = self._store(2.0)
        opt = AdamState.for_store(store, lr=0.01)
        losses = []
        for _ in range(5):
            w = store.tensor("w")
            loss = (w * w).sum()
            losses.append(loss.item())
            backward(loss)
            adam_step(store, opt)
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_nonfinite_aborts(self):
        store = self._store(1.0)
        store.register("z", (2,), InitSpec.zeros())
        opt = AdamState.for_store(store)
        store.grads["z"][1] = np.nan
        store.grads["w"][0] = 1.0
        with pytest.raises(NonFiniteGradientError, match="'z'"):
            adam_step(store, opt)
        assert store.values["w"][0] == 1.0 and opt.t == 0


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        store = ParameterStore(seed=11)
        rng = np.random.default_rng(11)
        store.register("a.W", (3, 4), InitSpec.glorot(), rng)
        store.register("b", (5,), InitSpec.uniform(1e-3), rng)
        store.values["b"][0] = 1 / 3
        save_checkpoint(store, tmp_path / "c.npz", {"note": "x"})
        loaded, meta = load_checkpoint(tmp_path / "c.npz")
        assert loaded.equal(store)
        assert loaded.seed == 11
        assert meta == {"note": "x"}

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "none.npz")

    def test_garbage_rejected(self, tmp_path):
        p = tmp_path / "bad.npz"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(p)
