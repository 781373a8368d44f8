import importlib
import math

import numpy as np
import pytest

from fieldrefine import (
    AdamState,
    DisplacementField,
    InputError,
    LossBreakdown,
    LossWeights,
    NumericalError,
    TtrConfig,
    adam_step,
    hybrid_loss_grad,
    make_task,
    refine,
    warm_vs_cold_report,
)
from fieldrefine.experiments import noisy_init
from fieldrefine.refine import iterations_to_reach

# the package re-exports refine(), which shadows the submodule attribute
refine_mod = importlib.import_module("fieldrefine.refine")


def _adam_oracle(grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook scalar Adam, one parameter starting at 0."""
    x, m, v = 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(x)
    return out


@pytest.fixture(scope="module")
def task():
    return make_task(dims=12, seed=0)


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        f = DisplacementField.zeros((2, 2, 2))
        g = np.full(f.data.shape, 0.37)
        g[0, 0, 0] = [-5.0, 1e-3, 2.0]
        out = adam_step(AdamState.like(f), f, g, 0.1)
        assert np.allclose(out.data, -0.1 * np.sign(g), atol=1e-6)

    def test_two_steps_match_scalar_oracle(self):
        f = DisplacementField.zeros((1, 1, 1))
        state = AdamState.like(f)
        grads = [0.8, -0.3]
        expect = _adam_oracle(grads, 0.05)
        for g, e in zip(grads, expect):
            f = adam_step(state, f, np.full((1, 1, 1, 3), g), 0.05)
            assert f.data[0, 0, 0, 0] == pytest.approx(e, rel=1e-14)
        assert state.t == 2

    def test_zero_gradient_leaves_field(self):
        rng = np.random.default_rng(0)
        f = DisplacementField(rng.standard_normal((3, 3, 3, 3)))
        out = adam_step(AdamState.like(f), f, np.zeros(f.data.shape), 0.1)
        assert out == f

    def test_rejects_bad_inputs(self):
        f = DisplacementField.zeros((2, 2, 2))
        with pytest.raises(NumericalError):
            adam_step(AdamState.like(f), f, np.full(f.data.shape, np.nan), 0.1)
        with pytest.raises(InputError):
            adam_step(AdamState.like(f), f, np.zeros(f.data.shape), -1.0)
        with pytest.raises(InputError):
            adam_step(AdamState.like(f), f, np.zeros((2, 2, 3, 3)), 0.1)


class TestConfig:
    def test_presets(self):
        assert TtrConfig.preset("abdomen").lr == 0.1
        assert TtrConfig.preset("cardiac").lr == 0.025
        assert TtrConfig.preset("cardiac", lr=0.5).lr == 0.5
        cfg = TtrConfig()
        assert (cfg.max_iters, cfg.patience) == (10, 3)
        assert (cfg.weights.lambda_ncc, cfg.weights.lambda_ssim, cfg.weights.lambda_smooth) == (1, 2, 1)

    @pytest.mark.parametrize("kw", [{"max_iters": -1}, {"lr": -0.1}, {"lr": float("nan")}, {"patience": 0}])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            TtrConfig(**kw)

    def test_unknown_preset(self):
        with pytest.raises(InputError):
            TtrConfig.preset("brain")


class TestRefine:
    def test_lr_zero_stops_after_patience(self, task):
        init = noisy_init(task, 0.25, seed=1)
        res = refine(task.fixed, task.moving, init, TtrConfig(max_iters=50, lr=0.0))
        assert res.stop_reason == "early_stop"
        assert res.iters_run == 3
        assert len(res.loss_trace) == 4
        assert res.best_iter == 0
        assert res.field == init

    def test_identity_case_returns_zero_field(self, task):
        # pure SSIM has an exactly zero gradient at perfect alignment
        v = task.fixed
        zero = DisplacementField.zeros(v.dims)
        cfg = TtrConfig(max_iters=20, weights=LossWeights(0, 1, 0))
        res = refine(v, v, zero, cfg)
        assert res.loss_trace[0].total == 0.0
        assert res.field == zero
        assert res.stop_reason == "early_stop" and res.iters_run == 3

    def test_max_iters_zero(self, task):
        res = refine(task.fixed, task.moving, DisplacementField.zeros(task.fixed.dims), TtrConfig(max_iters=0))
        assert res.iters_run == 0 and len(res.loss_trace) == 1 and res.stop_reason == "max_iters"

    def test_returns_best_field(self, task):
        cfg = TtrConfig(max_iters=15, patience=None)
        res = refine(task.fixed, task.moving, DisplacementField.zeros(task.fixed.dims), cfg)
        totals = [bd.total for bd in res.loss_trace]
        assert res.stop_reason == "max_iters" and res.iters_run == 15
        assert res.best_loss.total == min(totals)
        assert res.best_iter == int(np.argmin(totals))
        again, _ = hybrid_loss_grad(task.fixed, task.moving, res.field, cfg.weights, cfg.loss_options)
        assert again == res.best_loss
        assert res.best_loss.total < totals[0]

    def test_callback_sees_every_iterate(self, task):
        seen = []
        res = refine(task.fixed, task.moving, DisplacementField.zeros(task.fixed.dims), TtrConfig(max_iters=4),
                     callback=lambda k, f, bd: seen.append((k, bd)))
        assert [k for k, _ in seen] == list(range(len(res.loss_trace)))
        assert [bd for _, bd in seen] == res.loss_trace

    def test_input_not_mutated(self, task):
        init = noisy_init(task, 0.25)
        before = init.data.copy()
        refine(task.fixed, task.moving, init, TtrConfig(max_iters=3))
        assert np.array_equal(init.data, before)

    def test_deterministic(self, task):
        init = noisy_init(task)
        a = refine(task.fixed, task.moving, init, TtrConfig(max_iters=5))
        b = refine(task.fixed, task.moving, init, TtrConfig(max_iters=5))
        assert a.loss_trace == b.loss_trace and a.field == b.field

    def test_non_finite_stop(self, task, monkeypatch):
        real = refine_mod.hybrid_loss_grad
        calls = []

        def flaky(*args, **kw):
            calls.append(1)
            bd, g = real(*args, **kw)
            if len(calls) == 3:
                return LossBreakdown(float("nan"), bd.ncc, bd.ssim, bd.smooth), g
            return bd, g

        monkeypatch.setattr(refine_mod, "hybrid_loss_grad", flaky)
        res = refine(task.fixed, task.moving, DisplacementField.zeros(task.fixed.dims), TtrConfig(max_iters=10))
        assert res.stop_reason == "non_finite"
        assert res.iters_run == 2
        assert math.isnan(res.loss_trace[-1].total)
        assert res.best_iter <= 1

    def test_non_finite_initial_loss_raises(self, task, monkeypatch):
        monkeypatch.setattr(refine_mod, "hybrid_loss_grad",
                            lambda *a, **k: (LossBreakdown(float("inf"), 0, 0, 0), np.zeros(task.gt_field.data.shape)))
        with pytest.raises(NumericalError):
            refine(task.fixed, task.moving, DisplacementField.zeros(task.fixed.dims))

    def test_dims_mismatch(self, task):
        with pytest.raises(InputError):
            refine(task.fixed, task.moving, DisplacementField.zeros((12, 12, 11)))


class TestWarmCold:
    def test_zero_init_identical_traces(self, task):
        rep = warm_vs_cold_report(task.fixed, task.moving, DisplacementField.zeros(task.fixed.dims),
                                  TtrConfig(max_iters=8))
        assert rep.warm.loss_trace == rep.cold.loss_trace
        assert rep.warm_iters == rep.cold_iters
        assert rep.warm_not_slower

    def test_exact_solution_best_at_zero(self, task):
        v = task.fixed
        rep = warm_vs_cold_report(v, v, DisplacementField.zeros(v.dims), TtrConfig(weights=LossWeights(0, 1, 0)))
        assert rep.warm.best_iter == 0 and rep.warm_iters == 0

    def test_noisy_gt_not_slower(self, task):
        rep = warm_vs_cold_report(task.fixed, task.moving, noisy_init(task, 0.25, seed=2),
                                  TtrConfig(max_iters=40, patience=3))
        assert rep.warm_not_slower
        d = rep.as_dict()
        assert d["warm_iters_to_target"] == rep.warm_iters
        assert d["target_loss"] == rep.warm.best_loss.total

    def test_iterations_to_reach(self):
        trace = [LossBreakdown(t, 0, 0, 0) for t in (3.0, 2.0, 2.5, 1.0)]
        assert iterations_to_reach(trace, 2.0) == 1
        assert iterations_to_reach(trace, 1.0) == 3
        assert iterations_to_reach(trace, 0.5) is None
