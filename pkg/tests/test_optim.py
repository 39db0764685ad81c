import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condensate.data import TargetSpec, generate_regression_data
from condensate.nn import MSE, DivergenceError, ParameterSet
from condensate.optim import (
    ADAM,
    GD,
    DropoutConfig,
    OptimizerSpec,
    dropout_masks,
    log_schedule,
    make_optimizer,
    relative_distance,
    train,
)
from condensate.rng import Stream

from conftest import make_net


@pytest.fixture
def toy():
    config, p = make_net((1, 8, 1), "tanh", std=0.5, seed=2)
    x, y = generate_regression_data(TargetSpec("tanh", (-2.0, 2.0), 20))
    return config, p, x, y


class TestRelativeDistance:
    @pytest.mark.parametrize("factor,expected", [(1.0, 0.0), (2.0, 1.0), (-1.0, 2.0)])
    def test_examples(self, factor, expected):
        t0 = np.array([0.3, -1.0, 2.5])
        assert relative_distance(factor * t0, t0) == pytest.approx(expected, abs=1e-15)

    def test_zero_init(self):
        with pytest.raises(ValueError):
            relative_distance([1.0, 2.0], [0.0, 0.0])

    @settings(max_examples=100)
    @given(seed=st.integers(0, 10**6), c=st.floats(1e-3, 1e3), sign=st.sampled_from([-1.0, 1.0]))
    def test_scale_free(self, seed, c, sign):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=5), rng.normal(size=5)
        assert relative_distance(sign * c * a, sign * c * b) == pytest.approx(relative_distance(a, b), rel=1e-12)


def test_log_schedule():
    s = log_schedule(1000)
    assert s[:11] == list(range(11))
    assert s[11:] == [20, 30, 40, 50, 60, 70, 80, 90, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000]
    assert log_schedule(1234)[-1] == 1234


class TestTrain:
    def test_zero_learning_rate(self, toy):
        config, p, x, y = toy
        tr = train(config, p, MSE, x, y, OptimizerSpec(GD, 0.0), max_epochs=30)
        assert np.all(tr.rds == 0.0)
        assert np.all(tr.losses == tr.losses[0])

    def test_epochs_increasing_and_finite(self, toy):
        config, p, x, y = toy
        tr = train(config, p, MSE, x, y, OptimizerSpec(GD, 0.1), max_epochs=200)
        assert all(b > a for a, b in zip(tr.epochs, tr.epochs[1:]))
        assert np.all(np.isfinite(tr.losses))
        assert tr.losses[-1] < tr.losses[0]

    def test_checkpoint_is_state_after_t_updates(self, toy):
        config, p, x, y = toy
        tr = train(config, p, MSE, x, y, OptimizerSpec(GD, 0.05), max_epochs=3, schedule=[0, 3], snapshots=True)
        q = p.copy()
        from condensate.nn import loss_and_gradient
        for _ in range(3):
            _, g = loss_and_gradient(q, config, MSE, x, y)
            q = q.unflatten(q.flatten() - 0.05 * g.flatten())
        np.testing.assert_allclose(tr.at(3).snapshot.flatten(), q.flatten(), rtol=1e-13)
        assert tr.at(0).snapshot.flatten().tolist() == p.flatten().tolist()

    def test_does_not_mutate_input(self, toy):
        config, p, x, y = toy
        before = p.flatten()
        train(config, p, MSE, x, y, OptimizerSpec(GD, 0.1), max_epochs=5)
        assert np.array_equal(before, p.flatten())

    def test_deterministic(self, toy):
        config, p, x, y = toy
        spec = OptimizerSpec(ADAM, 0.01, batch_size=7)
        a = train(config, p, MSE, x, y, spec, DropoutConfig(0.8), max_epochs=20, seed=5)
        b = train(config, p, MSE, x, y, spec, DropoutConfig(0.8), max_epochs=20, seed=5)
        assert np.array_equal(a.final_params.flatten(), b.final_params.flatten())
        c = train(config, p, MSE, x, y, spec, DropoutConfig(0.8), max_epochs=20, seed=6)
        assert not np.array_equal(a.final_params.flatten(), c.final_params.flatten())

    def test_keep_one_is_bit_identical(self, toy):
        config, p, x, y = toy
        a = train(config, p, MSE, x, y, OptimizerSpec(GD, 0.1), DropoutConfig(1.0), max_epochs=50)
        b = train(config, p, MSE, x, y, OptimizerSpec(GD, 0.1), None, max_epochs=50)
        assert a.final_params.flatten().tobytes() == b.final_params.flatten().tobytes()
        assert a.losses.tobytes() == b.losses.tobytes()

    def test_loss_threshold_stops(self, toy):
        config, p, x, y = toy
        tr = train(config, p, MSE, x, y, OptimizerSpec(GD, 0.1), max_epochs=10_000, loss_threshold=1e-2)
        assert tr.stop_reason == "loss_threshold"
        assert tr.losses[-1] < 1e-2
        assert tr.final_epoch < 10_000

    def test_small_step_monotone_on_smooth_net(self, toy):
        config, p, x, y = toy
        tr = train(config, p, MSE, x, y, OptimizerSpec(GD, 1e-3), max_epochs=100, record_losses=True)
        assert np.all(np.diff(tr.epoch_losses) <= 0)

    def test_divergence_keeps_partial_trace(self, toy):
        config, p, x, y = toy
        with pytest.raises(DivergenceError) as info:
            with np.errstate(all="ignore"):
                train(config, p, MSE, x, 1e6 * y, OptimizerSpec(GD, 1e3), max_epochs=500)
        trace = info.value.trace
        assert trace.stop_reason == "diverged"
        assert trace.checkpoints and np.all(np.isfinite(trace.losses))

    def test_schedule_bounds(self, toy):
        config, p, x, y = toy
        with pytest.raises(ValueError):
            train(config, p, MSE, x, y, max_epochs=5, schedule=[0, 6])

    def test_jsonl(self, toy, tmp_path):
        config, p, x, y = toy
        tr = train(config, p, MSE, x, y, OptimizerSpec(GD, 0.1), max_epochs=20)
        lines = tr.to_jsonl(tmp_path / "t.jsonl").read_text().splitlines()
        assert [json.loads(s)["epoch"] for s in lines] == tr.epochs

    @pytest.mark.slow
    def test_relu_recipe_converges(self):
        # [DERIVED] m=100 ReLU, lr 0.1, init N(0, m^-4): loss below 1e-4 by 1e5 epochs
        config, p = make_net((1, 100, 1), "relu", std=1e-4, seed=0)
        x, y = generate_regression_data(TargetSpec())
        tr = train(config, p, MSE, x, y, OptimizerSpec(GD, 0.1), max_epochs=100_000,
                   schedule=[0, 100_000], loss_threshold=1e-4)
        assert tr.losses[-1] < 1e-4


class TestOptimizers:
    def test_adam_zero_gradient(self):
        p = ParameterSet([np.ones((2, 1)), np.ones((1, 2))], [np.ones(2), None])
        opt = make_optimizer(OptimizerSpec(ADAM, 0.1), p)
        arrays = p.arrays()
        before = [a.copy() for a in arrays]
        opt.step(arrays, [np.zeros_like(a) for a in arrays])
        assert all(np.array_equal(a, b) for a, b in zip(arrays, before))

    def test_adam_first_step_is_lr_times_sign(self):
        p = ParameterSet([np.zeros((1, 1)), np.zeros((1, 1))], [None, None])
        opt = make_optimizer(OptimizerSpec(ADAM, 0.1), p)
        arrays = p.arrays()
        opt.step(arrays, [np.array([[3.0]]), np.array([[-0.5]])])
        assert arrays[0][0, 0] == pytest.approx(-0.1, rel=1e-6)
        assert arrays[1][0, 0] == pytest.approx(0.1, rel=1e-6)

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            OptimizerSpec("sgdm")
        with pytest.raises(ValueError):
            DropoutConfig(0.0)


class TestDropoutMasks:
    def test_same_seed_same_masks(self):
        config, _ = make_net((1, 6, 1))
        a = dropout_masks(Stream(3, "dropout"), config, DropoutConfig(0.7), 4)
        b = dropout_masks(Stream(3, "dropout"), config, DropoutConfig(0.7), 4)
        assert np.array_equal(a[0], b[0])

    def test_inverted_scaling(self):
        config, _ = make_net((1, 200, 1))
        m = dropout_masks(Stream(0, "dropout"), config, DropoutConfig(0.8), 500)[0]
        assert set(np.unique(m)) <= {0.0, 1.0 / 0.8}
        assert abs(m.mean() - 1.0) < 0.01

    def test_disabled(self):
        config, _ = make_net((1, 6, 1))
        assert dropout_masks(Stream(0, "dropout"), config, DropoutConfig(1.0), 4) is None
