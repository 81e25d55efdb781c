"""Maximum-likelihood training with adaptive-moment gradient descent.

The trainer z-scores both series with the observational statistics, reserves
the trailing fraction of the aligned grid for validation, and then repeats:
draw a batch of pruned windows, evaluate the per-point Gaussian NLL of the
targets under teacher forcing, backpropagate, and apply an Adam update. A
fixed validation set (windows whose targets all live in the held-out tail)
is scored at a regular cadence and drives plateau-based early stopping.
Everything is deterministic given the seed.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as tf_model
from .autodiff import Tape, Tensor, backward
from .batching import BatchConfig, TrainingExample, make_batch
from .errors import ConfigError, DataError
from .model import ModelCheckpoint, ModelConfig
from .rng import substream
from .timeseries import NormStats, PairedDataset, align

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 500
    eval_interval: int = 100
    val_fraction: float = 0.1
    val_examples: int = 16
    plateau_patience: int = 10
    early_stop_nll: float | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.checkpoint_interval < 1 or self.eval_interval < 1:
            raise ConfigError("intervals must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in (0, 1)")
        if self.val_examples < 1:
            raise ConfigError("val_examples must be >= 1")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")


class Adam:
    """Standard adaptive-moment optimizer over a named parameter dict."""

    def __init__(
        self,
        params: dict[str, Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * grad**2
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            p.data = p.data - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class MetricsRow:
    step: int
    train_nll: float | None
    val_nll: float | None


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    metrics: list[MetricsRow]
    stop_reason: str
    aborted: bool = False
    interim_checkpoints: list = field(default_factory=list)


def write_metrics_csv(rows: list[MetricsRow], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("step,train_nll,val_nll\n")
        for row in rows:
            handle.write(
                "%d,%s,%s\n"
                % (
                    row.step,
                    "" if row.train_nll is None else repr(float(row.train_nll)),
                    "" if row.val_nll is None else repr(float(row.val_nll)),
                )
            )


def _batch_loss(params, batch: list[TrainingExample], config: ModelConfig):
    """Per-point mean NLL over all targets in the batch (as a Tensor)."""
    total = None
    n_points = 0
    for example in batch:
        mu, sigma = tf_model.forward(params, tf_model.embed(example, config), config)
        loss = tf_model.gaussian_nll(mu, sigma, example.tgt_v)
        weighted = loss * float(example.n_tgt)
        total = weighted if total is None else total + weighted
        n_points += example.n_tgt
    return total * (1.0 / n_points)


def evaluate_nll(
    params: dict[str, Tensor],
    examples: list[TrainingExample],
    config: ModelConfig,
) -> float:
    """Per-point mean NLL over fixed examples, without recording a tape."""
    total = 0.0
    n_points = 0
    for example in examples:
        mu, sigma = tf_model.forward(params, tf_model.embed(example, config), config)
        loss = tf_model.gaussian_nll(mu, sigma, example.tgt_v)
        total += float(loss.data) * example.n_tgt
        n_points += example.n_tgt
    return total / n_points


def batch_config_for(
    model_config: ModelConfig, train_config: TrainConfig, base: BatchConfig | None = None
) -> BatchConfig:
    """Batch settings with feature geometry taken from the model config."""
    base = base if base is not None else BatchConfig()
    return replace(
        base,
        batch_size=train_config.batch_size,
        feature_dim=model_config.feature_dim,
        t_max=model_config.t_max,
        delta_t=model_config.delta_t,
    )


def train(
    dataset: PairedDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    batch_config: BatchConfig | None = None,
    checkpoint_dir=None,
) -> TrainResult:
    """Fit the model on a paired dataset; see the module docstring.

    With ``checkpoint_dir`` set, an interim checkpoint is written every
    ``checkpoint_interval`` steps.
    """
    bcfg = batch_config_for(model_config, train_config, batch_config)
    stats = NormStats.from_series(dataset.obs)
    pairs_full = []
    for z in range(dataset.n_runs):
        pair = align(dataset, z)
        pairs_full.append(
            type(pair)(
                pair.times,
                (pair.obs_values - stats.mean) / stats.std,
                (pair.gcm_values - stats.mean) / stats.std,
            )
        )
    n = len(pairs_full[0])
    n_train = int(n * (1.0 - train_config.val_fraction))
    if n_train <= bcfg.window_max:
        raise DataError(
            "training split too short: %d points after reserving validation, "
            "need > %d" % (n_train, bcfg.window_max)
        )
    pairs_train = [pair.sliced(0, n_train) for pair in pairs_full]

    batch_rng = substream(train_config.seed, "batchgen")
    init_rng = substream(train_config.seed, "init")
    val_rng = substream(train_config.seed, "val")
    val_examples = make_batch(
        pairs_full,
        train_config.val_examples,
        val_rng,
        bcfg,
        min_prediction_index=n_train,
    )

    params = tf_model.init_params(model_config, init_rng)
    optimizer = Adam(
        params,
        learning_rate=train_config.learning_rate,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.eps,
    )

    def snapshot(meta_extra) -> ModelCheckpoint:
        meta = {
            "seed": train_config.seed,
            "ablate_gcm": bcfg.ablate_gcm,
            "n_train_points": n_train,
        }
        meta.update(meta_extra)
        return tf_model.checkpoint_from_params(model_config, params, stats, meta)

    rows: list[MetricsRow] = []
    interim: list = []
    best_val = float("inf")
    evals_since_best = 0
    stop_reason = "max_steps"
    aborted = False
    last_good = {name: np.array(p.data, copy=True) for name, p in params.items()}
    last_good_step = 0

    val0 = evaluate_nll(params, val_examples, model_config)
    rows.append(MetricsRow(step=0, train_nll=None, val_nll=val0))
    best_val = val0

    for step in range(1, train_config.steps + 1):
        batch = make_batch(pairs_train, train_config.batch_size, batch_rng, bcfg)
        optimizer.zero_grad()
        with Tape():
            loss = _batch_loss(params, batch, model_config)
            train_nll = float(loss.data)
            if not np.isfinite(train_nll):
                logger.warning(
                    "non-finite loss at step %d; aborting with last good "
                    "parameters from step %d",
                    step,
                    last_good_step,
                )
                for name, p in params.items():
                    p.data = last_good[name]
                stop_reason = "non_finite_loss"
                aborted = True
                break
            backward(loss)
        optimizer.step()
        last_good = {name: np.array(p.data, copy=True) for name, p in params.items()}
        last_good_step = step

        if (
            checkpoint_dir is not None
            and step % train_config.checkpoint_interval == 0
            and step != train_config.steps
        ):
            path = os.path.join(checkpoint_dir, "checkpoint_step%06d.json" % step)
            tf_model.save_checkpoint(
                snapshot({"steps_run": step, "stop_reason": "interval"}), path
            )
            interim.append(path)

        val_nll = None
        if step % train_config.eval_interval == 0 or step == train_config.steps:
            val_nll = evaluate_nll(params, val_examples, model_config)
            if val_nll < best_val:
                best_val = val_nll
                evals_since_best = 0
            else:
                evals_since_best += 1
        rows.append(MetricsRow(step=step, train_nll=train_nll, val_nll=val_nll))

        if (
            train_config.early_stop_nll is not None
            and val_nll is not None
            and val_nll <= train_config.early_stop_nll
        ):
            stop_reason = "nll_threshold"
            break
        if val_nll is not None and evals_since_best >= train_config.plateau_patience:
            stop_reason = "val_plateau"
            break

    checkpoint = snapshot(
        {"steps_run": rows[-1].step, "stop_reason": stop_reason, "best_val_nll": best_val}
    )
    return TrainResult(
        checkpoint=checkpoint,
        metrics=rows,
        stop_reason=stop_reason,
        aborted=aborted,
        interim_checkpoints=interim,
    )
