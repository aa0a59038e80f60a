"""Alternating two-branch training schedule, checkpointing, fine-tuning.

Phase 1 interleaves branch updates table, table, column (2:1); once the
running losses of the two branches are comparable and the table loss is
trending down, training switches (monotonically) to a 1:1 alternation until
the iteration budget is exhausted. An iteration is one optimizer update of
one branch.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np
import torch

from .errors import ConfigError, TrainingDiverged
from .network import Network, branch_loss, save_checkpoint

TABLE = "table"
COLUMN = "column"


class Phase(Enum):
    RATIO_2_1 = "ratio_2_1"
    RATIO_1_1 = "ratio_1_1"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    phase1_table_steps: int = 2
    phase1_column_steps: int = 1
    phase_switch_iteration: int = 500
    phase_switch_loss_tolerance: float = 0.25  # relative gap of running losses
    total_iterations: int = 5000
    finetune_iterations: int = 3000
    validate_every: int = 200
    early_stop_patience: int = 10  # validations without F1 improvement
    pixel_threshold: float = 0.99
    seed: int = 0

    def __post_init__(self):
        for name in (
            "batch_size",
            "phase1_table_steps",
            "phase1_column_steps",
            "total_iterations",
            "validate_every",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.finetune_iterations < 0:
            raise ConfigError("finetune_iterations must be >= 0")

    def adam_params(self) -> dict:
        return {
            "lr": self.learning_rate,
            "betas": (self.adam_beta1, self.adam_beta2),
            "eps": self.adam_epsilon,
        }


@dataclass
class TrainState:
    iteration: int = 0
    phase: Phase = Phase.RATIO_2_1
    table_losses: list[float] = field(default_factory=list)
    column_losses: list[float] = field(default_factory=list)
    table_steps: int = 0
    column_steps: int = 0
    phase_switch_at: Optional[int] = None
    stuck_in_phase1: bool = False
    checkpoint_lineage: list[str] = field(default_factory=list)
    best_val_f1: float = -1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase"] = self.phase.value
        return d


class Trainer:
    """Owns a network exclusively; one Adam state per parameter group."""

    def __init__(self, net: Network, config: TrainConfig, log_path: str | Path | None = None):
        self.net = net
        self.config = config
        adam = config.adam_params()
        self.optimizers = {
            "shared": torch.optim.Adam(net.shared_parameters(), **adam),
            TABLE: torch.optim.Adam(net.branch_parameters(TABLE), **adam),
            COLUMN: torch.optim.Adam(net.branch_parameters(COLUMN), **adam),
        }
        self.state = TrainState()
        self._log_file = open(log_path, "a") if log_path else None

    def close(self) -> None:
        if self._log_file:
            self._log_file.close()
            self._log_file = None

    def _log(self, record: dict) -> None:
        if self._log_file:
            self._log_file.write(json.dumps(record) + "\n")
            self._log_file.flush()

    def train_step(self, batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor], branch: str) -> float:
        """One Adam update on the shared layers plus the selected branch."""
        images, table_masks, column_masks = batch
        target = table_masks if branch == TABLE else column_masks
        self.net.train()
        for opt in self.optimizers.values():
            opt.zero_grad(set_to_none=True)
        table_out, column_out = self.net(images)
        out = table_out if branch == TABLE else column_out
        loss = branch_loss(out, target)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(self.state.iteration)
        loss.backward()
        self.optimizers["shared"].step()
        self.optimizers[branch].step()
        self.state.iteration += 1
        if branch == TABLE:
            self.state.table_steps += 1
            self.state.table_losses.append(value)
        else:
            self.state.column_steps += 1
            self.state.column_losses.append(value)
        self._log(
            {
                "iter": self.state.iteration,
                "branch": branch,
                "loss": value,
                "phase": self.state.phase.value,
            }
        )
        return value


def _running_mean(values: list[float], window: int = 100) -> float:
    if not values:
        return math.inf
    return float(np.mean(values[-window:]))


def _decreasing_trend(values: list[float], window: int = 100) -> bool:
    """Table loss trend over the last `window` values: first half vs second."""
    if len(values) < window:
        return False
    recent = values[-window:]
    half = window // 2
    return float(np.mean(recent[half:])) < float(np.mean(recent[:half]))


def _ready_to_switch(state: TrainState, config: TrainConfig) -> bool:
    if state.iteration < config.phase_switch_iteration:
        return False
    lt = _running_mean(state.table_losses)
    lc = _running_mean(state.column_losses)
    if not (math.isfinite(lt) and math.isfinite(lc)):
        return False
    denom = max(lt, lc)
    if denom <= 0:
        return True
    gap = abs(lt - lc) / denom
    return gap <= config.phase_switch_loss_tolerance and _decreasing_trend(
        state.table_losses
    )


def pixel_f1(prob: np.ndarray, mask: np.ndarray, threshold: float) -> float:
    pred = prob >= threshold
    truth = mask.astype(bool)
    tp = float(np.logical_and(pred, truth).sum())
    fp = float(np.logical_and(pred, ~truth).sum())
    fn = float(np.logical_and(~pred, truth).sum())
    if tp == 0:
        return 1.0 if (fp == 0 and fn == 0) else 0.0
    p = tp / (tp + fp)
    r = tp / (tp + fn)
    return 2 * p * r / (p + r)


class BatchSource:
    """Deterministic shuffling batch iterator over preprocessed tuples.

    Samples are (image_tensor, table_mask, column_mask) with tensors already
    shaped (3, H, W) and (H, W).
    """

    def __init__(self, samples: list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]], batch_size: int, seed: int):
        if not samples:
            raise ConfigError("empty dataset")
        self.samples = samples
        self.batch_size = batch_size
        self.rng = random.Random(seed)
        self._order: list[int] = []

    def next_batch(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        idx = []
        while len(idx) < self.batch_size:
            if not self._order:
                self._order = list(range(len(self.samples)))
                self.rng.shuffle(self._order)
            idx.append(self._order.pop())
        images = torch.stack([self.samples[i][0] for i in idx])
        tmasks = torch.stack([self.samples[i][1] for i in idx])
        cmasks = torch.stack([self.samples[i][2] for i in idx])
        return images, tmasks, cmasks


def _phase1_cycle(config: TrainConfig) -> list[str]:
    return [TABLE] * config.phase1_table_steps + [COLUMN] * config.phase1_column_steps


def run_schedule(
    net: Network,
    data: BatchSource,
    config: TrainConfig,
    checkpoint_dir: str | Path,
    validate: Optional[Callable[[Network], tuple[float, float]]] = None,
    log_path: str | Path | None = None,
    trainer: Optional[Trainer] = None,
) -> TrainState:
    """Run the full 2:1 -> 1:1 schedule; writes checkpoints at validations
    and at the end. `validate` returns (table_f1, column_f1) on a held-out
    split; early-stops after `early_stop_patience` validations without
    improvement.
    """
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    trainer = trainer or Trainer(net, config, log_path=log_path)
    state = trainer.state
    torch.manual_seed(config.seed)
    no_improve = 0
    stop = False

    def maybe_validate_and_checkpoint() -> None:
        nonlocal no_improve, stop
        if state.iteration % config.validate_every != 0:
            return
        record = {"iter": state.iteration, "phase": state.phase.value}
        if validate is not None:
            f1_t, f1_c = validate(net)
            record.update({"val_f1_table": f1_t, "val_f1_column": f1_c})
            score = (f1_t + f1_c) / 2
            if score > state.best_val_f1 + 1e-9:
                state.best_val_f1 = score
                no_improve = 0
            else:
                no_improve += 1
                if no_improve >= config.early_stop_patience:
                    stop = True
        trainer._log(record)
        path = checkpoint_dir / f"iter_{state.iteration:07d}"
        save_checkpoint(net, path, extra={"train_state": state.to_dict()})
        state.checkpoint_lineage.append(str(path))

    while state.iteration < config.total_iterations and not stop:
        if state.phase == Phase.RATIO_2_1:
            for branch in _phase1_cycle(config):
                if state.iteration >= config.total_iterations:
                    break
                trainer.train_step(data.next_batch(), branch)
                maybe_validate_and_checkpoint()
                if stop:
                    break
            if _ready_to_switch(state, config):
                state.phase = Phase.RATIO_1_1
                state.phase_switch_at = state.iteration
        else:
            for branch in (TABLE, COLUMN):
                if state.iteration >= config.total_iterations or stop:
                    break
                trainer.train_step(data.next_batch(), branch)
                maybe_validate_and_checkpoint()

    if state.phase == Phase.RATIO_2_1:
        state.stuck_in_phase1 = True
    final = checkpoint_dir / "final"
    save_checkpoint(net, final, extra={"train_state": state.to_dict()})
    state.checkpoint_lineage.append(str(final))
    trainer.close()
    return state


def finetune(
    net: Network,
    data: BatchSource,
    config: TrainConfig,
    checkpoint_dir: str | Path,
    parent_checkpoint: str | None = None,
    log_path: str | Path | None = None,
) -> TrainState:
    """Continue training 1:1 for `finetune_iterations` with the same Adam
    settings; lineage records the parent checkpoint."""
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(net, config, log_path=log_path)
    state = trainer.state
    state.phase = Phase.RATIO_1_1
    if parent_checkpoint:
        state.checkpoint_lineage.append(parent_checkpoint)
    torch.manual_seed(config.seed)
    while state.iteration < config.finetune_iterations:
        for branch in (TABLE, COLUMN):
            if state.iteration >= config.finetune_iterations:
                break
            trainer.train_step(data.next_batch(), branch)
    final = checkpoint_dir / "final"
    save_checkpoint(net, final, extra={"train_state": state.to_dict()})
    state.checkpoint_lineage.append(str(final))
    trainer.close()
    return state
