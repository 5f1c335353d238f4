"""Step-based training loop: batched gradient accumulation in a fixed
order, adaptive-moment updates, CSV metric logging, and divergence
detection."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward
from .errors import DataError, NumericError
from .model import TransformerDecoderModel
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    base_lr: float = 0.05
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.997
    eps: float = 1e-9
    scope: str = "all_positions"
    checkpoint_every: int = 0  # 0: only at the end
    log_every: int = 50
    seed: int = 0


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)  # step, loss, lr

    @property
    def final_loss(self) -> float:
        return self.rows[-1][1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "learning_rate"])
            for step, loss, lr in self.rows:
                writer.writerow([step, f"{loss:.8f}", f"{lr:.8e}"])


def _index_stream(n: int, rng: np.random.Generator):
    """Epoch-shuffled example indices, refilled deterministically."""
    while True:
        yield from rng.permutation(n)


def train(
    model: TransformerDecoderModel,
    dataset: list[tuple[list[int], int]],
    config: TrainConfig,
    checkpoint_dir=None,
) -> TrainLog:
    """Iterate batches, accumulate per-example gradients in a fixed
    order, take one optimizer step per batch, and log (step, loss, lr).

    A non-finite loss aborts with a diagnostic naming the step.
    """
    if not dataset:
        raise DataError("train: empty dataset")
    state = AdamState(
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        base_lr=config.base_lr,
        warmup_steps=config.warmup_steps,
    )
    rng = np.random.default_rng(config.seed)
    indices = _index_stream(len(dataset), rng)
    train_log = TrainLog()
    scale = 1.0 / config.batch_size
    for step in range(1, config.steps + 1):
        model.zero_grad()
        batch_loss = 0.0
        try:
            for _ in range(config.batch_size):
                ids, n_input = dataset[next(indices)]
                example_loss = model.loss(ids, n_input, scope=config.scope)
                batch_loss += example_loss.item()
                backward(example_loss * scale)
        except NumericError as exc:
            raise NumericError(f"training diverged at step {step}: {exc}") from exc
        batch_loss *= scale
        if not np.isfinite(batch_loss):
            raise NumericError(f"training diverged at step {step}: loss is not finite")
        grads = {name: p.grad for name, p in model.params.items()}
        adam_step(model.params, grads, state)
        train_log.rows.append((step, batch_loss, state.current_lr()))
        if config.log_every and step % config.log_every == 0:
            log.info("step %d loss %.4f lr %.2e", step, batch_loss, state.current_lr())
        if checkpoint_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
            model.save(checkpoint_dir)
    if checkpoint_dir:
        model.save(checkpoint_dir)
    return train_log
