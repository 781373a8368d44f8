"""Desk-scale refinement experiments on synthetic tasks with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .metrics import evaluate
from .refine import RefineResult, TtrConfig, refine
from .synth import SyntheticTask, philox
from .volume import DisplacementField


def noisy_init(task: SyntheticTask, noise: float = 0.25, seed: int = 0) -> DisplacementField:
    """Ground truth plus i.i.d. uniform noise in ``[-noise, noise]`` per component.

    Stands in for an imperfect stage-one prediction.
    """
    rng = philox(seed, stream=7)
    gt = task.gt_field
    return DisplacementField(gt.data + rng.uniform(-noise, noise, gt.data.shape), gt.spacing)


@dataclass(frozen=True)
class SweepRecord:
    iteration: int
    loss: float
    endpoint_error: float
    dice_mean: float


@dataclass(frozen=True)
class SweepResult:
    records: List[SweepRecord]
    result: RefineResult

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.endpoint_error for r in self.records])

    @property
    def best_error_iter(self) -> int:
        return int(np.argmin(self.errors))

    def as_dict(self) -> dict:
        return {
            "iterations": [r.iteration for r in self.records],
            "loss": [r.loss for r in self.records],
            "endpoint_error": [r.endpoint_error for r in self.records],
            "dice_mean": [r.dice_mean for r in self.records],
            "best_error_iter": self.best_error_iter,
            "best_loss_iter": self.result.best_iter,
            "stop_reason": self.result.stop_reason,
        }


def iteration_sweep(task: SyntheticTask, init: DisplacementField, cfg: Optional[TtrConfig] = None,
                    with_dice: bool = True) -> SweepResult:
    """Run refinement and score every iterate against the ground truth."""
    records = []

    def record(k, field, bd):
        d = evaluate(task.fixed_labels, task.moving_labels, field).dice_mean if with_dice else float("nan")
        records.append(SweepRecord(k, bd.total, task.endpoint_error(field), d))

    result = refine(task.fixed, task.moving, init, cfg, callback=record)
    return SweepResult(records, result)
