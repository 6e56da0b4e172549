"""
Progressive-masking attribution for privacy predictions.

A continuous mask in [0, 1] multiplies each unit (frame or patch feature).
Every round runs gradient ascent on the mask against the prediction loss of
the attacked class, then permanently zeroes the units whose mask moved the
most. Masking stops once the loss reaches the threshold.

Author: EgoLeak Team
Version: 1.0.0
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from config import Config
from utils.error_handling import ConfigurationError, TrainingError, ValidationError
from .heads import ClassifierHead

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskConfig:
    step_size: float = Config.MASK_STEP_SIZE
    steps_per_round: int = Config.MASK_STEPS_PER_ROUND

    def __post_init__(self):
        if self.step_size <= 0 or self.steps_per_round <= 0:
            raise ConfigurationError("mask step_size and steps_per_round must be positive")


@dataclass
class MaskTrace:
    """
    Result of progressive masking.

    ``losses[0]`` is the unmasked loss; ``losses[r]`` is the loss under the
    hard mask after round r.
    """
    units: List[int]
    losses: List[float]
    stop_round: int
    threshold: float
    reached: bool
    label: str = ""
    snapshots: List[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "units": list(self.units),
            "losses": [float(loss) for loss in self.losses],
            "stop_round": self.stop_round,
            "threshold": self.threshold,
            "reached": self.reached,
        }


def mask_loss_and_gradient(head: ClassifierHead, units: np.ndarray, label_index: int,
                           mask: np.ndarray) -> Tuple[float, np.ndarray]:
    """Prediction loss under a mask and its gradient w.r.t. every mask entry."""
    loss, _, d_effective = head.cross_entropy(units, label_index, mask)
    if not np.isfinite(loss):
        raise TrainingError("non-finite prediction loss during masking")
    return loss, np.einsum("td,td->t", d_effective, units)


def progressive_mask(head: ClassifierHead, units: np.ndarray, label: str, rounds: int, units_per_round: int,
                     threshold: float, config: MaskConfig = MaskConfig()) -> MaskTrace:
    """
    Find the units most responsible for predicting ``label``.

    Args:
        head: classifier under attack
        units: T x D unit features
        label: class whose prediction loss is driven up
        rounds: maximum masking rounds
        units_per_round: units zeroed per round
        threshold: stop once the hard-mask loss reaches it
        config: ascent step size and steps per round

    Returns:
        MaskTrace: zeroed units in masking order, with stop_round = rounds
            when the threshold was never reached

    Raises:
        ValidationError: units_per_round outside (0, T]
        TrainingError: non-finite loss
    """
    units = np.asarray(units, dtype=np.float64)
    n_units = units.shape[0]
    if not 0 < units_per_round <= n_units:
        raise ValidationError(f"units_per_round must lie in (0, {n_units}], got {units_per_round}")
    if rounds < 0:
        raise ValidationError(f"rounds must be nonnegative, got {rounds}")
    label_index = head.class_index(label)

    hard = np.ones(n_units)
    loss, _ = mask_loss_and_gradient(head, units, label_index, hard)
    trace = MaskTrace([], [loss], 0, threshold, loss >= threshold, label)
    if trace.reached:
        return trace

    for round_index in range(1, rounds + 1):
        survivors = np.flatnonzero(hard > 0)
        mask = hard.copy()
        for _ in range(config.steps_per_round):
            _, grad = mask_loss_and_gradient(head, units, label_index, mask)
            mask = np.clip(mask + config.step_size * grad, 0.0, 1.0)
            mask[hard == 0] = 0.0
        trace.snapshots.append(mask.copy())

        importance = 1.0 - mask[survivors]
        order = survivors[np.lexsort((survivors, -importance))]
        chosen = order[:units_per_round]
        hard[chosen] = 0.0
        trace.units.extend(int(unit) for unit in chosen)

        loss, _ = mask_loss_and_gradient(head, units, label_index, hard)
        trace.losses.append(loss)
        trace.stop_round = round_index
        logger.debug(f"mask round {round_index}: zeroed {chosen.tolist()} loss={loss:.4f}")
        if loss >= threshold:
            trace.reached = True
            break
        if not hard.any():
            break

    if not trace.reached:
        trace.stop_round = rounds
    return trace


def write_trace(trace: MaskTrace, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(trace.to_dict(), handle, sort_keys=True, indent=2)


def snapshot_frame(trace: MaskTrace) -> pd.DataFrame:
    """Long-format mask snapshots: one row per (round, unit)."""
    records = [
        {"round": round_index, "unit": unit, "mask": float(value)}
        for round_index, snapshot in enumerate(trace.snapshots, start=1)
        for unit, value in enumerate(snapshot)
    ]
    return pd.DataFrame(records, columns=["round", "unit", "mask"])


def write_snapshots(trace: MaskTrace, path: Union[str, Path]) -> None:
    snapshot_frame(trace).to_csv(path, index=False)
