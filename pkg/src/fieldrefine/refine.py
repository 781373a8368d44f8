"""Test-time refinement of a displacement field with Adam.

The field is the only learnable parameter.  Every iteration warps the moving
image with the current field, evaluates the hybrid loss and its gradient,
and applies one Adam update per voxel component.  The best field seen so far
is kept and returned.

Iteration accounting: ``loss_trace[0]`` is the loss of the initial field
(before any update); ``loss_trace[k]`` is the loss after ``k`` updates.
Patience counts consecutive updates whose loss does not drop below
``best - improvement_eps``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from typing import Callable, List, Optional

import numpy as np

from .errors import InputError, NumericalError
from .losses import LossBreakdown, LossOptions, LossWeights, hybrid_loss_grad
from .volume import DisplacementField, Volume, check_same_dims

PRESET_LR = {"abdomen": 0.1, "cardiac": 0.025}


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, field: DisplacementField, **kw) -> "AdamState":
        return cls(np.zeros(field.data.shape), np.zeros(field.data.shape), **kw)


def adam_step(state: AdamState, field: DisplacementField, grad: np.ndarray, lr: float) -> DisplacementField:
    """One bias-corrected Adam update; ``state`` is updated in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != field.data.shape or state.m.shape != field.data.shape:
        raise InputError(f"shape mismatch: field {field.data.shape}, grad {grad.shape}, state {state.m.shape}")
    if not (np.isfinite(lr) and lr >= 0):
        raise InputError(f"learning rate must be finite and >= 0, got {lr}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient")

    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return DisplacementField(field.data - lr * m_hat / (np.sqrt(v_hat) + state.eps), field.spacing)


@dataclass(frozen=True)
class TtrConfig:
    max_iters: int = 10
    lr: float = 0.1
    patience: Optional[int] = 3
    weights: LossWeights = dc_field(default_factory=LossWeights)
    ncc_window: int = 9
    ssim_window: int = 7
    improvement_eps: float = 0.0

    def __post_init__(self):
        if not isinstance(self.max_iters, (int, np.integer)) or self.max_iters < 0:
            raise InputError(f"max_iters must be a non-negative integer, got {self.max_iters!r}")
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise InputError(f"lr must be finite and >= 0, got {self.lr}")
        if self.patience is not None and self.patience < 1:
            raise InputError(f"patience must be >= 1 or None, got {self.patience}")
        if not (np.isfinite(self.improvement_eps) and self.improvement_eps >= 0):
            raise InputError("improvement_eps must be finite and >= 0")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TtrConfig":
        if name not in PRESET_LR:
            raise InputError(f"unknown preset {name!r}")
        return cls(**{"lr": PRESET_LR[name], **overrides})

    @property
    def loss_options(self) -> LossOptions:
        return LossOptions(ncc_window=self.ncc_window, ssim_window=self.ssim_window)

    def as_dict(self) -> dict:
        return {
            "max_iters": int(self.max_iters),
            "lr": float(self.lr),
            "patience": self.patience,
            "lambda_ncc": float(self.weights.lambda_ncc),
            "lambda_ssim": float(self.weights.lambda_ssim),
            "lambda_smooth": float(self.weights.lambda_smooth),
            "ncc_window": int(self.ncc_window),
            "ssim_window": int(self.ssim_window),
            "improvement_eps": float(self.improvement_eps),
        }


@dataclass(frozen=True)
class RefineResult:
    field: DisplacementField
    loss_trace: List[LossBreakdown]
    stop_reason: str
    iters_run: int
    wall_time_s: float
    best_iter: int

    @property
    def best_loss(self) -> LossBreakdown:
        return self.loss_trace[self.best_iter]


# callback(iteration, field, breakdown) is invoked for every trace entry
Callback = Callable[[int, DisplacementField, LossBreakdown], None]


def refine(fixed: Volume, moving: Volume, init: DisplacementField, cfg: Optional[TtrConfig] = None,
           callback: Optional[Callback] = None) -> RefineResult:
    cfg = cfg or TtrConfig()
    check_same_dims(fixed, moving, init)
    opts = cfg.loss_options
    start = time.perf_counter()

    current = init.copy()
    breakdown, grad = hybrid_loss_grad(fixed, moving, current, cfg.weights, opts)
    if not np.isfinite(breakdown.total) or not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite loss at iteration 0")
    trace = [breakdown]
    if callback:
        callback(0, current, breakdown)

    best_total = breakdown.total
    best_field = current
    best_iter = 0
    stale = 0
    stop_reason = "max_iters"
    state = AdamState.like(current)
    iters = 0

    while iters < cfg.max_iters:
        current = adam_step(state, current, grad, cfg.lr)
        iters += 1
        breakdown, grad = hybrid_loss_grad(fixed, moving, current, cfg.weights, opts)
        trace.append(breakdown)
        if callback:
            callback(iters, current, breakdown)
        if not np.isfinite(breakdown.total) or not np.all(np.isfinite(grad)):
            stop_reason = "non_finite"
            break
        if breakdown.total < best_total - cfg.improvement_eps:
            best_total = breakdown.total
            best_field = current
            best_iter = iters
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                stop_reason = "early_stop"
                break

    return RefineResult(
        field=best_field.copy(),
        loss_trace=trace,
        stop_reason=stop_reason,
        iters_run=iters,
        wall_time_s=time.perf_counter() - start,
        best_iter=best_iter,
    )


def iterations_to_reach(trace: List[LossBreakdown], level: float) -> Optional[int]:
    """First trace index whose total is <= ``level``, or None."""
    for k, bd in enumerate(trace):
        if bd.total <= level:
            return k
    return None


@dataclass(frozen=True)
class WarmColdReport:
    warm: RefineResult
    cold: RefineResult
    target_loss: float
    warm_iters: int
    cold_iters: Optional[int]

    @property
    def warm_not_slower(self) -> bool:
        return self.cold_iters is None or self.warm_iters <= self.cold_iters

    def as_dict(self) -> dict:
        return {
            "target_loss": self.target_loss,
            "warm_iters_to_target": self.warm_iters,
            "cold_iters_to_target": self.cold_iters,
            "warm_initial_loss": self.warm.loss_trace[0].total,
            "cold_initial_loss": self.cold.loss_trace[0].total,
            "warm_best_loss": self.warm.best_loss.total,
            "cold_best_loss": self.cold.best_loss.total,
            "warm_iters_run": self.warm.iters_run,
            "cold_iters_run": self.cold.iters_run,
        }


def warm_vs_cold_report(fixed: Volume, moving: Volume, init: DisplacementField,
                        cfg: Optional[TtrConfig] = None) -> WarmColdReport:
    """Refine from ``init`` and from zero; count iterations to the warm run's best loss.

    ``cold_iters`` is None when the cold run never reaches that level.
    """
    cfg = cfg or TtrConfig()
    warm = refine(fixed, moving, init, cfg)
    cold = refine(fixed, moving, DisplacementField.zeros(init.dims, init.spacing), cfg)
    target = warm.best_loss.total
    return WarmColdReport(warm, cold, target, iterations_to_reach(warm.loss_trace, target),
                          iterations_to_reach(cold.loss_trace, target))
