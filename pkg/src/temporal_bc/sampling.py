"""Autoregressive trajectory generation with a sliding conditioning window.

Generation starts on the day after the observational record ends. For each
day tau the model conditions on the trailing ``obs_window`` points of the
(partly generated) observation-side history plus all model-run points with
time in [tau - gcm_past, tau + gcm_future), predicts a Gaussian for tau,
draws a value (or takes the mean in deterministic mode), appends it to the
history, and slides forward one day. Work happens in normalized units and
trajectories are denormalized on the way out.

``predictive_nll`` runs the same windowing teacher-forced: every day is
predicted from the true observed history, which scores one-step-ahead
density forecasts on a held-out stretch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import model as tf_model
from .batching import BatchConfig, TrainingExample, compute_features
from .errors import ConfigError, DataError, NumericError
from .model import ModelCheckpoint
from .rng import substream
from .timeseries import OBS, PairedDataset, TimeSeries

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    obs_window: int = 60
    gcm_past: int = 60
    gcm_future: int = 120
    horizon: int = 1
    n_trajectories: int = 8
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        if self.obs_window < 1:
            raise ConfigError("obs_window must be >= 1")
        if self.gcm_past < 0 or self.gcm_future < 1:
            raise ConfigError("gcm_past must be >= 0 and gcm_future >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")


def _feature_config(ckpt: ModelCheckpoint) -> BatchConfig:
    cfg = ckpt.config
    return BatchConfig(
        feature_dim=cfg.feature_dim, t_max=cfg.t_max, delta_t=cfg.delta_t
    )


def build_inference_example(
    obs_t, obs_v, gcm_t, gcm_v, target_t: float, feature_config: BatchConfig
) -> TrainingExample:
    """Single-masked-target example from explicit conditioning arrays."""
    obs_t = np.asarray(obs_t, dtype=np.float64)
    obs_v = np.asarray(obs_v, dtype=np.float64)
    gcm_t = np.asarray(gcm_t, dtype=np.float64)
    gcm_v = np.asarray(gcm_v, dtype=np.float64)
    tgt_t = np.array([float(target_t)])
    features = compute_features(
        gcm_t, gcm_v, obs_t, obs_v, tgt_t, None, feature_config
    )
    return TrainingExample(
        run_id=-1,
        window=None,
        ctx_gcm_t=gcm_t,
        ctx_gcm_v=gcm_v,
        ctx_obs_t=obs_t,
        ctx_obs_v=obs_v,
        tgt_t=tgt_t,
        tgt_v=None,
        features=features,
    )


def _prepare(ckpt: ModelCheckpoint, dataset: PairedDataset, run_id: int, config):
    """Normalized conditioning arrays plus the generation start day."""
    if not 0 <= run_id < dataset.n_runs:
        raise DataError("run id %d out of range (0..%d)" % (run_id, dataset.n_runs - 1))
    stats = ckpt.norm_stats
    obs = dataset.obs
    run = dataset.runs[run_id]
    if len(obs) < config.obs_window:
        raise DataError(
            "need at least %d trailing observed days, have %d"
            % (config.obs_window, len(obs))
        )
    obs_t = np.array(obs.times)
    obs_v = (np.array(obs.values) - stats.mean) / stats.std
    gcm_t = np.array(run.times)
    gcm_v = (np.array(run.values) - stats.mean) / stats.std
    if ckpt.meta.get("ablate_gcm", False):
        gcm_v = np.zeros_like(gcm_v)
    start_t = float(obs_t[-1]) + 1.0
    last_t = start_t + config.horizon - 1
    if gcm_t[0] > start_t - config.gcm_past or gcm_t[-1] < last_t:
        raise DataError(
            "insufficient GCM coverage: need [%r, %r], run %d spans [%r, %r]"
            % (start_t - config.gcm_past, last_t, run_id, gcm_t[0], gcm_t[-1])
        )
    if gcm_t[-1] < last_t + config.gcm_future - 1:
        logger.warning(
            "GCM run %d ends at t=%r; the future window truncates near the "
            "end of the horizon",
            run_id,
            float(gcm_t[-1]),
        )
    return stats, obs_t, obs_v, gcm_t, gcm_v, start_t


def _predict_one(params, example, model_config):
    mu, sigma = tf_model.forward(
        params, tf_model.embed(example, model_config), model_config
    )
    m, s = float(mu.data[0, 0]), float(sigma.data[0, 0])
    if not (np.isfinite(m) and np.isfinite(s)):
        raise NumericError("model produced non-finite prediction during sampling")
    return m, s


def sample_trajectories(
    ckpt: ModelCheckpoint, dataset: PairedDataset, run_id: int, config: SamplerConfig
) -> list[TimeSeries]:
    """Generate ``n_trajectories`` independent series for one model run."""
    stats, obs_t, obs_v, gcm_t, gcm_v, start_t = _prepare(
        ckpt, dataset, run_id, config
    )
    params = tf_model.tensors_from_checkpoint(ckpt)
    fcfg = _feature_config(ckpt)
    out = []
    for traj in range(config.n_trajectories):
        rng = substream(config.seed, "trajectory", traj)
        hist_t = list(obs_t[-config.obs_window :])
        hist_v = list(obs_v[-config.obs_window :])
        values = np.empty(config.horizon)
        for step in range(config.horizon):
            tau = start_t + step
            sel = (gcm_t >= tau - config.gcm_past) & (gcm_t < tau + config.gcm_future)
            example = build_inference_example(
                hist_t[-config.obs_window :],
                hist_v[-config.obs_window :],
                gcm_t[sel],
                gcm_v[sel],
                tau,
                fcfg,
            )
            m, s = _predict_one(params, example, ckpt.config)
            value = m if config.deterministic else float(rng.normal(m, s))
            values[step] = value
            hist_t.append(tau)
            hist_v.append(value)
        times = start_t + np.arange(config.horizon, dtype=np.float64)
        out.append(TimeSeries(times, values * stats.std + stats.mean, OBS))
    return out


def sample_all_runs(
    ckpt: ModelCheckpoint, dataset: PairedDataset, config: SamplerConfig
) -> dict[int, list[TimeSeries]]:
    """Trajectories for every run; run z uses seed ``config.seed XOR z``."""
    result = {}
    for z in range(dataset.n_runs):
        run_config = replace(config, seed=config.seed ^ z)
        result[z] = sample_trajectories(ckpt, dataset, z, run_config)
    return result


@dataclass(frozen=True)
class PredictiveScore:
    """Teacher-forced one-step-ahead predictions over an evaluation stretch.

    Means and stds are in natural (denormalized) units; nll is the per-point
    negative log density of the true observations, mean_nll its average.
    """

    times: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    nll: np.ndarray

    @property
    def mean_nll(self) -> float:
        return float(np.mean(self.nll))


def predictive_nll(
    ckpt: ModelCheckpoint,
    dataset: PairedDataset,
    run_id: int,
    start_t: float,
    n_days: int,
    config: SamplerConfig | None = None,
) -> PredictiveScore:
    """Score one-step density forecasts for days start_t..start_t+n_days-1.

    The dataset's observation series must cover the evaluation stretch and
    the ``obs_window`` days before it.
    """
    config = config if config is not None else SamplerConfig()
    if n_days < 1:
        raise ConfigError("n_days must be >= 1")
    stats = ckpt.norm_stats
    obs = dataset.obs
    run = dataset.runs[run_id] if 0 <= run_id < dataset.n_runs else None
    if run is None:
        raise DataError("run id %d out of range" % run_id)
    obs_t = np.array(obs.times)
    obs_v = (np.array(obs.values) - stats.mean) / stats.std
    gcm_t = np.array(run.times)
    gcm_v = (np.array(run.values) - stats.mean) / stats.std
    if ckpt.meta.get("ablate_gcm", False):
        gcm_v = np.zeros_like(gcm_v)
    fcfg = _feature_config(ckpt)
    params = tf_model.tensors_from_checkpoint(ckpt)

    times = np.empty(n_days)
    means = np.empty(n_days)
    stds = np.empty(n_days)
    nll = np.empty(n_days)
    for i in range(n_days):
        tau = float(start_t) + i
        past = obs_t < tau
        if past.sum() < config.obs_window:
            raise DataError(
                "not enough observed history before t=%r (need %d days)"
                % (tau, config.obs_window)
            )
        at = np.flatnonzero(np.abs(obs_t - tau) < 1e-9)
        if len(at) != 1:
            raise DataError("no observation at evaluation day t=%r" % tau)
        ctx_t = obs_t[past][-config.obs_window :]
        ctx_v = obs_v[past][-config.obs_window :]
        sel = (gcm_t >= tau - config.gcm_past) & (gcm_t < tau + config.gcm_future)
        example = build_inference_example(ctx_t, ctx_v, gcm_t[sel], gcm_v[sel], tau, fcfg)
        m_norm, s_norm = _predict_one(params, example, ckpt.config)
        mean_c = m_norm * stats.std + stats.mean
        std_c = s_norm * stats.std
        truth = float(obs.values[at[0]])
        times[i] = tau
        means[i] = mean_c
        stds[i] = std_c
        nll[i] = (
            0.5 * tf_model.LOG_2PI
            + np.log(std_c)
            + (truth - mean_c) ** 2 / (2.0 * std_c**2)
        )
    return PredictiveScore(times=times, means=means, stds=stds, nll=nll)
