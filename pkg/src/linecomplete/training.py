"""Training loop: Adam with weight-decay fix, linear warm-up, per-epoch decay.

The learning rate at epoch e (0-based, after warm-up) is base * decay^e; a
cosine schedule is available by flag. Multilingual batches are drawn from a
single language sampled uniformly per step. Divergence (NaN loss) aborts the
run and restores the last end-of-epoch snapshot.
"""

from __future__ import annotations

import copy
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

import torch

from .model import ModelError, TransformerLM, compute_loss

DECAY_MULTIPLICATIVE = "multiplicative"
DECAY_COSINE = "cosine"


@dataclass
class TrainSchedule:
    epochs: int = 10
    batch_size: int = 16
    base_lr: float = 6.25e-5
    warmup_epochs: int = 1
    decay: float = 0.98
    decay_kind: str = DECAY_MULTIPLICATIVE
    weight_decay: float = 0.01
    max_steps: int | None = None
    target_loss: float | None = None


@dataclass
class TrainResult:
    model: TransformerLM
    loss_history: list[float] = field(default_factory=list)
    diverged: bool = False
    steps: int = 0

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else math.nan


def epoch_lr(schedule: TrainSchedule, epoch_index: int) -> float:
    """Base learning rate for a 0-based epoch, ignoring warm-up ramping."""
    if schedule.decay_kind == DECAY_COSINE:
        span = max(schedule.epochs - 1, 1)
        return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch_index / span))
    return schedule.base_lr * (schedule.decay ** epoch_index)


def step_lr(
    schedule: TrainSchedule,
    epoch_index: int,
    global_step: int,
    steps_per_epoch: int,
) -> float:
    lr = epoch_lr(schedule, epoch_index)
    warmup_steps = schedule.warmup_epochs * steps_per_epoch
    if warmup_steps > 0 and global_step < warmup_steps:
        lr *= (global_step + 1) / warmup_steps
    return lr


def _chunk(ids: Sequence[int], n_ctx: int) -> list[list[int]]:
    ids = list(ids)
    return [ids[i : i + n_ctx] for i in range(0, len(ids), n_ctx)] or [[]]


def train(
    model: TransformerLM,
    samples: Sequence[tuple[Sequence[int], int | None]],
    schedule: TrainSchedule,
    seed: int = 0,
) -> TrainResult:
    """Train on (ids, lang) samples; sequences are chunked to fit n_ctx.

    Loss is recorded per optimizer step. Returns the trained model (restored
    to the last good epoch snapshot if the loss went NaN).
    """
    n_ctx = model.config.n_ctx
    pool: dict[int | None, list[tuple[list[int], int | None]]] = {}
    for ids, lang in samples:
        for chunk in _chunk(ids, n_ctx):
            if len(chunk) >= 2:
                pool.setdefault(lang, []).append((chunk, lang))
    if not pool:
        raise ModelError("no trainable sequences (all shorter than 2 ids)")

    rng = random.Random(seed)
    torch.manual_seed(seed)  # dropout masks, so runs reproduce per seed
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=schedule.base_lr, weight_decay=schedule.weight_decay
    )
    languages = sorted(pool, key=lambda k: (k is None, k))
    steps_per_epoch = max(
        1, sum(len(v) for v in pool.values()) // schedule.batch_size
    )

    result = TrainResult(model=model)
    snapshot = copy.deepcopy(model.state_dict())
    cursors = {lang: 0 for lang in languages}
    shuffled = {lang: list(pool[lang]) for lang in languages}
    for lang in languages:
        rng.shuffle(shuffled[lang])

    model.train()
    global_step = 0
    done = False
    for epoch in range(schedule.epochs):
        if done:
            break
        for _ in range(steps_per_epoch):
            if schedule.max_steps is not None and global_step >= schedule.max_steps:
                done = True
                break
            lang = languages[rng.randrange(len(languages))] if len(languages) > 1 else languages[0]
            batch: list[tuple[list[int], int | None]] = []
            for _ in range(schedule.batch_size):
                if cursors[lang] >= len(shuffled[lang]):
                    rng.shuffle(shuffled[lang])
                    cursors[lang] = 0
                batch.append(shuffled[lang][cursors[lang]])
                cursors[lang] += 1

            lr = step_lr(schedule, epoch, global_step, steps_per_epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad(set_to_none=True)
            loss = compute_loss(model, batch)
            if not torch.isfinite(loss):
                model.load_state_dict(snapshot)
                result.diverged = True
                model.eval()
                return result
            loss.backward()
            optimizer.step()
            result.loss_history.append(float(loss.detach()))
            global_step += 1
            result.steps = global_step
            if (
                schedule.target_loss is not None
                and result.loss_history[-1] <= schedule.target_loss
            ):
                done = True
                break
        snapshot = copy.deepcopy(model.state_dict())
    model.eval()
    return result
