"""Training-example construction: window slicing, pruning, point features.

Windows are drawn in index space over the aligned (observation, model-run)
daily grid: a left edge k, a right edge h between 60 and 360 steps later,
and a prediction index j splitting observed context from targets, all
1-based inclusive. Points are then dropped at random ("pruning") so the
model cannot lean on a copy-yesterday shortcut, and per-point features are
computed on whatever irregular grid survives.

Features per point follow a local-expansion recipe around the nearest
already-available point n(i): value difference delta, signed time offset
dist, their ratio deriv (a finite-difference slope), the neighbour's value,
and sinusoidal positional features of both times. For observed points n(i)
is the nearest other point of the same series; for targets it is the latest
earlier point among observed context and preceding targets, never a later
target and never a model point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError
from .timeseries import AlignedPair, PairedDataset, align

_PRUNE_RETRIES = 100


@dataclass(frozen=True)
class BatchConfig:
    batch_size: int = 8
    retain_p: float = 0.5
    min_keep: int = 5
    window_min: int = 60
    window_max: int = 360
    margin: int = 5
    feature_dim: int = 32
    t_max: float = 10000.0
    delta_t: float = 1.0
    ablate_gcm: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.retain_p <= 1.0:
            raise ConfigError("retain_p must be in (0, 1], got %r" % self.retain_p)
        if self.min_keep < 1:
            raise ConfigError("min_keep must be >= 1")
        if self.margin < 1:
            raise ConfigError("margin must be >= 1")
        if self.window_min < 2 * self.margin:
            raise ConfigError("window_min must be at least 2 * margin")
        if self.window_max < self.window_min:
            raise ConfigError("window_max must be >= window_min")
        if self.feature_dim <= 0 or self.feature_dim % 2:
            raise ConfigError("feature_dim must be a positive even number")
        if self.t_max <= 0 or self.delta_t <= 0:
            raise ConfigError("t_max and delta_t must be positive")


@dataclass(frozen=True)
class WindowSpec:
    """1-based inclusive window [k, h] with prediction index j.

    Context runs over indices k..j, targets over j+1..h; the model block
    spans the full window k..h.
    """

    k: int
    h: int
    j: int


def draw_window(
    n: int,
    rng: np.random.Generator,
    window_min: int = 60,
    window_max: int = 360,
    margin: int = 5,
) -> WindowSpec:
    """Uniform window and prediction-index draw over a length-n series.

    k ~ U{1..n-window_max}, h ~ U{k+window_min..k+window_max},
    j ~ U{k+margin..h-margin}.
    """
    if n <= window_max:
        raise DataError(
            "series too short for window drawing: n=%d needs > %d points"
            % (n, window_max)
        )
    k = int(rng.integers(1, n - window_max + 1))
    h = k + int(rng.integers(window_min, window_max + 1))
    j = int(rng.integers(k + margin, h - margin + 1))
    return WindowSpec(k=k, h=h, j=j)


def positional_features(
    t, d: int, t_max: float = 10000.0, delta_t: float = 1.0
) -> np.ndarray:
    """Sinusoidal features of continuous time: sin at even slots, cos at odd.

    Slot pair l in 0..d/2-1 uses angle (t / delta_t) / (t_max / delta_t)^(2l/d).
    Accepts a scalar or array of times; output has shape (..., d) in [-1, 1].
    """
    if d <= 0 or d % 2:
        raise ConfigError("positional feature dim must be positive even, got %d" % d)
    if t_max <= 0 or delta_t <= 0:
        raise ConfigError("t_max and delta_t must be positive")
    t = np.asarray(t, dtype=np.float64)
    half = np.arange(d // 2)
    rates = (t_max / delta_t) ** (2.0 * half / d)
    angles = (t[..., None] / delta_t) / rates
    out = np.empty(t.shape + (d,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def closest_observed(target_t: float, observed_times, observed_values):
    """Index, value and time of the observed point nearest to ``target_t``.

    Equidistant neighbours resolve to the earlier time.
    """
    times = np.asarray(observed_times, dtype=np.float64)
    values = np.asarray(observed_values, dtype=np.float64)
    if len(times) == 0:
        raise DataError("no observed points to anchor on")
    dist = np.abs(times - float(target_t))
    i = int(np.lexsort((times, dist))[0])
    return i, float(values[i]), float(times[i])


def prune_indices(
    n: int, retain_p: float, min_keep: int, rng: np.random.Generator
) -> np.ndarray:
    """Sorted indices of the surviving points after independent thinning.

    Each index survives with probability retain_p; a draw keeping fewer than
    min(min_keep, n) points is redrawn (bounded, then the first points are
    kept deterministically).
    """
    if not 0.0 < retain_p <= 1.0:
        raise ConfigError("retain_p must be in (0, 1], got %r" % retain_p)
    if min_keep < 1:
        raise ConfigError("min_keep must be >= 1")
    floor_keep = min(min_keep, n)
    for _ in range(_PRUNE_RETRIES):
        keep = np.flatnonzero(rng.random(n) < retain_p)
        if len(keep) >= floor_keep:
            return keep
    return np.arange(floor_keep)


def prune(points, retain_p: float, min_keep: int, rng: np.random.Generator) -> list:
    """Thin a point list, preserving order; see :func:`prune_indices`."""
    keep = prune_indices(len(points), retain_p, min_keep, rng)
    return [points[i] for i in keep]


@dataclass(frozen=True)
class FeatureBlock:
    """Columnar per-point features in generalized order (GCM, OBS, targets).

    pos_enc / closest_pos_enc have shape (N, d); the rest are length-N:
    series_id (1=observation, 2=model), delta (value minus neighbour value),
    dist (time minus neighbour time, signed), deriv (delta/dist, 0 when the
    offset is 0), closest_value and closest_t (the neighbour itself).
    """

    pos_enc: np.ndarray
    series_id: np.ndarray
    delta: np.ndarray
    dist: np.ndarray
    deriv: np.ndarray
    closest_value: np.ndarray
    closest_t: np.ndarray
    closest_pos_enc: np.ndarray


@dataclass(frozen=True)
class TrainingExample:
    """One pruned window in generalized coordinates, ready for the model.

    ``tgt_v`` is None for inference-time examples (single masked target).
    """

    run_id: int
    window: WindowSpec | None
    ctx_gcm_t: np.ndarray
    ctx_gcm_v: np.ndarray
    ctx_obs_t: np.ndarray
    ctx_obs_v: np.ndarray
    tgt_t: np.ndarray
    tgt_v: np.ndarray | None
    features: FeatureBlock

    @property
    def n_gcm(self) -> int:
        return len(self.ctx_gcm_t)

    @property
    def n_obs(self) -> int:
        return len(self.ctx_obs_t)

    @property
    def n_tgt(self) -> int:
        return len(self.tgt_t)

    @property
    def n_points(self) -> int:
        return self.n_gcm + self.n_obs + self.n_tgt


def _nearest_within(times: np.ndarray, values: np.ndarray):
    """Closest-other-point features inside one fully observed series.

    Ties between the left and right neighbour go to the earlier one. A
    singleton series anchors on itself with zero offsets.
    """
    m = len(times)
    if m == 0:
        return (np.empty(0),) * 5
    if m == 1:
        zero = np.zeros(1)
        return zero, zero, zero, values.copy(), times.copy()
    left = np.empty(m)
    right = np.empty(m)
    left[0] = np.inf
    left[1:] = times[1:] - times[:-1]
    right[-1] = np.inf
    right[:-1] = times[1:] - times[:-1]
    take_left = left <= right
    neighbour = np.where(take_left, np.arange(m) - 1, np.arange(m) + 1)
    cv = values[neighbour]
    ct = times[neighbour]
    delta = values - cv
    dist = times - ct
    deriv = np.where(dist != 0.0, delta / np.where(dist != 0.0, dist, 1.0), 0.0)
    return delta, dist, deriv, cv, ct


def _target_features(tgt_t, tgt_v, ctx_obs_t, ctx_obs_v):
    """Anchor each target on the latest earlier available point.

    Candidates are the observed context and strictly earlier targets (whose
    true values are teacher-forced during training); since all candidates lie
    before the target, the nearest is simply the immediately preceding one.
    """
    n = len(tgt_t)
    if len(ctx_obs_t) == 0:
        raise DataError("targets need at least one observed context point")
    if tgt_v is None and n > 1:
        raise DataError("multi-target examples require target values")
    cv = np.empty(n)
    ct = np.empty(n)
    cv[0], ct[0] = ctx_obs_v[-1], ctx_obs_t[-1]
    if n > 1:
        cv[1:] = tgt_v[:-1]
        ct[1:] = tgt_t[:-1]
    vals = np.zeros(n) if tgt_v is None else tgt_v
    delta = vals - cv
    dist = tgt_t - ct
    deriv = np.where(dist != 0.0, delta / np.where(dist != 0.0, dist, 1.0), 0.0)
    return delta, dist, deriv, cv, ct


def compute_features(
    ctx_gcm_t,
    ctx_gcm_v,
    ctx_obs_t,
    ctx_obs_v,
    tgt_t,
    tgt_v,
    config: BatchConfig,
) -> FeatureBlock:
    """Per-point features over the generalized order (GCM, OBS, targets)."""
    g = _nearest_within(np.asarray(ctx_gcm_t, float), np.asarray(ctx_gcm_v, float))
    o = _nearest_within(np.asarray(ctx_obs_t, float), np.asarray(ctx_obs_v, float))
    t = _target_features(
        np.asarray(tgt_t, float),
        None if tgt_v is None else np.asarray(tgt_v, float),
        np.asarray(ctx_obs_t, float),
        np.asarray(ctx_obs_v, float),
    )
    delta, dist, deriv, cv, ct = (
        np.concatenate([g[i], o[i], t[i]]) for i in range(5)
    )
    all_t = np.concatenate([ctx_gcm_t, ctx_obs_t, tgt_t])
    series_id = np.concatenate(
        [
            np.full(len(ctx_gcm_t), 2, dtype=np.int64),
            np.full(len(ctx_obs_t) + len(tgt_t), 1, dtype=np.int64),
        ]
    )
    return FeatureBlock(
        pos_enc=positional_features(
            all_t, config.feature_dim, config.t_max, config.delta_t
        ),
        series_id=series_id,
        delta=delta,
        dist=dist,
        deriv=deriv,
        closest_value=cv,
        closest_t=ct,
        closest_pos_enc=positional_features(
            ct, config.feature_dim, config.t_max, config.delta_t
        ),
    )


def _example_from_window(
    pair: AlignedPair, run_id: int, window: WindowSpec, rng, config: BatchConfig
) -> TrainingExample:
    ctx = slice(window.k - 1, window.j)
    tgt = slice(window.j, window.h)
    obs_t = pair.times[ctx]
    obs_v = pair.obs_values[ctx]
    tgt_t = pair.times[tgt]
    tgt_v = pair.obs_values[tgt]
    gcm_t = pair.times[window.k - 1 : window.h]
    gcm_v = pair.gcm_values[window.k - 1 : window.h]
    keep_obs = prune_indices(len(obs_t), config.retain_p, config.min_keep, rng)
    keep_tgt = prune_indices(len(tgt_t), config.retain_p, config.min_keep, rng)
    keep_gcm = prune_indices(len(gcm_t), config.retain_p, config.min_keep, rng)
    obs_t, obs_v = obs_t[keep_obs], obs_v[keep_obs]
    tgt_t, tgt_v = tgt_t[keep_tgt], tgt_v[keep_tgt]
    gcm_t, gcm_v = gcm_t[keep_gcm], gcm_v[keep_gcm]
    if config.ablate_gcm:
        gcm_v = np.zeros_like(gcm_v)
    features = compute_features(gcm_t, gcm_v, obs_t, obs_v, tgt_t, tgt_v, config)
    return TrainingExample(
        run_id=run_id,
        window=window,
        ctx_gcm_t=gcm_t,
        ctx_gcm_v=gcm_v,
        ctx_obs_t=obs_t,
        ctx_obs_v=obs_v,
        tgt_t=tgt_t,
        tgt_v=tgt_v,
        features=features,
    )


def make_batch(
    dataset: PairedDataset | list[AlignedPair],
    batch_size: int,
    rng: np.random.Generator,
    config: BatchConfig,
    min_prediction_index: int | None = None,
) -> list[TrainingExample]:
    """Draw a batch of pruned window examples.

    Per example the randomness is consumed in a fixed order: run choice,
    window (k, h, j), then pruning of observed context, targets and the
    model block. ``min_prediction_index`` (1-based, applied to j) restricts
    targets to a held-out tail via bounded rejection.
    """
    if isinstance(dataset, PairedDataset):
        pairs = [align(dataset, z) for z in range(dataset.n_runs)]
    else:
        pairs = list(dataset)
    if not pairs:
        raise DataError("no aligned run data to draw from")
    examples = []
    for _ in range(batch_size):
        z = int(rng.integers(0, len(pairs)))
        pair = pairs[z]
        window = None
        for _ in range(10_000):
            candidate = draw_window(
                len(pair), rng, config.window_min, config.window_max, config.margin
            )
            if min_prediction_index is None or candidate.j >= min_prediction_index:
                window = candidate
                break
        if window is None:
            raise DataError(
                "could not draw a window with prediction index >= %d"
                % min_prediction_index
            )
        examples.append(_example_from_window(pair, z, window, rng, config))
    return examples
