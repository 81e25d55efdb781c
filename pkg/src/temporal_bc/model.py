"""Attention model over generalized (time, series) points, Gaussian head.

Two attention stacks run side by side. The main stack embeds each point's
local-expansion features into queries, keys and values with two-layer
perceptrons; later layers reuse the previous layer's output directly as
query, key and value, with a fresh output perceptron per layer. An auxiliary
stack builds queries and keys from positional features alone and its values
from the raw series value, so it can mix values across time guided purely by
position; its value map is shared across layers. Attention weights are a
masked softmax of plain query-key dot products (no scale factor), split over
heads along the feature axis.

Conditioning points (model block and observed context) attend freely to each
other; each target attends to the conditioning points and to strictly
earlier targets only, and nothing attends to a target from the conditioning
side, so a target's value can never reach its own prediction. The head maps
the concatenated outputs of both stacks to a per-target (mean, std); the
mean is an offset from the nearest earlier available value and the std goes
through a softplus plus a hard floor. The head's final layer starts at zero,
so an untrained model predicts exactly that nearest value.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .batching import TrainingExample
from .errors import ConfigError, DataError, NumericError
from .timeseries import NormStats

LOG_2PI = float(np.log(2.0 * np.pi))

_SERIES_CODES = (1, 2)  # one-hot slots: observation, model


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    model_dim: int = 64
    feature_dim: int = 32
    hidden_dim: int = 64
    sigma_floor: float = 1e-3
    t_max: float = 10000.0
    delta_t: float = 1.0

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.n_heads < 1:
            raise ConfigError("n_heads must be >= 1")
        if self.model_dim < 1 or self.model_dim % self.n_heads:
            raise ConfigError(
                "model_dim (%d) must be a positive multiple of n_heads (%d)"
                % (self.model_dim, self.n_heads)
            )
        if self.feature_dim <= 0 or self.feature_dim % 2:
            raise ConfigError("feature_dim must be positive and even")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if self.sigma_floor <= 0:
            raise ConfigError("sigma_floor must be positive")
        if self.t_max <= 0 or self.delta_t <= 0:
            raise ConfigError("t_max and delta_t must be positive")

    @property
    def point_dim(self) -> int:
        """Positional features plus the series one-hot."""
        return self.feature_dim + len(_SERIES_CODES)

    @property
    def qkv_in_dim(self) -> int:
        """point_dim + (delta, dist, deriv, closest_value) + closest point_dim."""
        return 2 * self.point_dim + 4


def _mlp_shapes(d_in: int, d_hidden: int, d_out: int) -> dict:
    return {
        "w1": (d_in, d_hidden),
        "b1": (d_hidden,),
        "w2": (d_hidden, d_out),
        "b2": (d_out,),
    }


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Name -> shape for every parameter the architecture declares."""
    shapes: dict[str, tuple] = {}

    def put(prefix: str, d_in: int, d_out: int):
        for name, shape in _mlp_shapes(d_in, config.hidden_dim, d_out).items():
            shapes["%s.%s" % (prefix, name)] = shape

    put("q", config.qkv_in_dim, config.model_dim)
    put("k", config.qkv_in_dim, config.model_dim)
    put("v", config.qkv_in_dim, config.model_dim)
    put("xq", config.point_dim, config.model_dim)
    put("xk", config.point_dim, config.model_dim)
    put("xv", 1, config.model_dim)
    for layer in range(config.n_layers):
        put("layer%d.out" % layer, config.model_dim, config.model_dim)
        put("layer%d.xout" % layer, config.model_dim, config.model_dim)
    put("head", 2 * config.model_dim, 2)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Scaled-normal weights, zero biases; the head's last layer is zeroed
    so the initial mean prediction equals the nearest-value anchor exactly."""
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(("b1", "b2")) or name.startswith("head.w2"):
            data = np.zeros(shape)
        else:
            scale = np.sqrt(2.0 / (shape[0] + shape[-1]))
            data = scale * rng.standard_normal(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def _mlp(x: Tensor, params: dict, prefix: str) -> Tensor:
    hidden = ad.tanh(x @ params[prefix + ".w1"] + params[prefix + ".b1"])
    return hidden @ params[prefix + ".w2"] + params[prefix + ".b2"]


@dataclass(frozen=True)
class EmbeddedExample:
    """Raw model inputs for one example (plain arrays, no gradients).

    ``blocked[i, j]`` is True when position i may NOT attend to position j.
    ``anchors`` holds the nearest earlier available value per target, the
    baseline the mean head predicts an offset from.
    """

    q_in: np.ndarray
    kv_in: np.ndarray
    xqk_in: np.ndarray
    xv_in: np.ndarray
    blocked: np.ndarray
    n_conditioning: int
    n_targets: int
    anchors: np.ndarray
    target_values: np.ndarray | None


def embed(example: TrainingExample, config: ModelConfig) -> EmbeddedExample:
    """Assemble per-point input vectors plus the attention mask.

    Key/value inputs concatenate positional features, the series one-hot,
    (delta, dist, deriv, closest_value) and the neighbour's positional
    features. Query inputs are identical except the value-bearing slots
    (delta and deriv) are zeroed: a query may know where it sits and where
    its anchor sits, but not what value it carries.
    """
    f = example.features
    if f is None:
        raise DataError("example has no features; build it via make_batch")
    if f.pos_enc.shape[1] != config.feature_dim:
        raise ConfigError(
            "example feature_dim %d does not match model feature_dim %d"
            % (f.pos_enc.shape[1], config.feature_dim)
        )
    n = len(f.series_id)
    n_tgt = example.n_tgt
    n_cond = n - n_tgt
    onehot = np.zeros((n, len(_SERIES_CODES)))
    for slot, code in enumerate(_SERIES_CODES):
        onehot[f.series_id == code, slot] = 1.0

    def stack(delta, deriv):
        # the neighbour n(i) is always same-series, so it reuses the one-hot
        return np.concatenate(
            [
                f.pos_enc,
                onehot,
                delta[:, None],
                f.dist[:, None],
                deriv[:, None],
                f.closest_value[:, None],
                f.closest_pos_enc,
                onehot,
            ],
            axis=1,
        )

    kv_in = stack(f.delta, f.deriv)
    q_in = stack(np.zeros(n), np.zeros(n))
    xqk_in = np.concatenate([f.pos_enc, onehot], axis=1)
    values = np.concatenate(
        [
            example.ctx_gcm_v,
            example.ctx_obs_v,
            np.zeros(n_tgt) if example.tgt_v is None else example.tgt_v,
        ]
    )
    xv_in = values[:, None]

    allowed = np.zeros((n, n), dtype=bool)
    allowed[:, :n_cond] = True
    for p in range(n_tgt):
        allowed[n_cond + p, n_cond : n_cond + p] = True
    return EmbeddedExample(
        q_in=q_in,
        kv_in=kv_in,
        xqk_in=xqk_in,
        xv_in=xv_in,
        blocked=~allowed,
        n_conditioning=n_cond,
        n_targets=n_tgt,
        anchors=f.closest_value[n_cond:][:, None].copy(),
        target_values=None if example.tgt_v is None else example.tgt_v[:, None].copy(),
    )


def _attention_layer(q, k, v, blocked, params, prefix, config) -> Tensor:
    """Head-split dot-product attention followed by the layer's output map."""
    d_head = config.model_dim // config.n_heads
    outs = []
    for h in range(config.n_heads):
        cols = slice(h * d_head, (h + 1) * d_head)
        qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        weights = ad.masked_softmax(qh @ ad.transpose_last_two(kh), blocked)
        outs.append(weights @ vh)
    return _mlp(ad.concat(outs, axis=-1), params, prefix)


def forward(
    params: dict[str, Tensor], emb: EmbeddedExample, config: ModelConfig
) -> tuple[Tensor, Tensor]:
    """Per-target (mu, sigma), each of shape (n_targets, 1)."""
    if emb.n_targets == 0:
        raise DataError("example has no targets")
    q = _mlp(Tensor(emb.q_in), params, "q")
    k = _mlp(Tensor(emb.kv_in), params, "k")
    v = _mlp(Tensor(emb.kv_in), params, "v")
    out = None
    for layer in range(config.n_layers):
        if layer > 0:
            q = k = v = out
        out = _attention_layer(q, k, v, emb.blocked, params, "layer%d.out" % layer, config)

    xq = _mlp(Tensor(emb.xqk_in), params, "xq")
    xk = _mlp(Tensor(emb.xqk_in), params, "xk")
    xv = _mlp(Tensor(emb.xv_in), params, "xv")
    xout = None
    for layer in range(config.n_layers):
        if layer > 0:
            xq = xk = xout
        xout = _attention_layer(
            xq, xk, xv, emb.blocked, params, "layer%d.xout" % layer, config
        )

    tail = emb.n_conditioning
    raw = _mlp(ad.concat([out[tail:], xout[tail:]], axis=-1), params, "head")
    mu = raw[:, 0:1] + Tensor(emb.anchors)
    sigma = ad.softplus(raw[:, 1:2]) + Tensor(np.array(config.sigma_floor))
    return mu, sigma


def gaussian_nll(mu: Tensor, sigma: Tensor, target_values: np.ndarray) -> Tensor:
    """Mean negative log density of the targets under N(mu, sigma^2)."""
    y = Tensor(np.asarray(target_values, dtype=np.float64).reshape(mu.shape))
    resid = y - mu
    per_point = (
        ad.log(sigma) + (resid * resid) / (sigma * sigma * 2.0) + 0.5 * LOG_2PI
    )
    return per_point.mean()


@dataclass(frozen=True)
class GaussianPrediction:
    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)):
            raise NumericError("non-finite prediction")
        if self.std <= 0:
            raise NumericError("predictive std must be positive")


def predict(
    example: TrainingExample, params: dict[str, Tensor], config: ModelConfig
) -> list[GaussianPrediction]:
    """Plain forward pass (no tape) returning per-target distributions."""
    mu, sigma = forward(params, embed(example, config), config)
    if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(sigma.data))):
        raise NumericError("model produced non-finite predictions")
    if np.any(sigma.data < config.sigma_floor):
        raise NumericError("predictive std fell below the configured floor")
    return [
        GaussianPrediction(float(m), float(s))
        for m, s in zip(mu.data[:, 0], sigma.data[:, 0])
    ]


def nll(
    predictions: list[GaussianPrediction], target_values, sigma_floor: float = 0.0
) -> float:
    """Mean negative log likelihood of values under per-point Gaussians."""
    targets = np.asarray(target_values, dtype=np.float64)
    if len(predictions) != len(targets):
        raise DataError(
            "got %d predictions for %d targets" % (len(predictions), len(targets))
        )
    if len(predictions) == 0:
        raise DataError("nll of zero predictions is undefined")
    mu = np.array([p.mean for p in predictions])
    sd = np.array([p.std for p in predictions])
    if np.any(sd < sigma_floor):
        raise NumericError("predictive std below floor %r" % sigma_floor)
    ll = -0.5 * LOG_2PI - np.log(sd) - (targets - mu) ** 2 / (2.0 * sd**2)
    return float(-np.mean(ll))


@dataclass
class ModelCheckpoint:
    """Everything needed to resume or apply a model: architecture config,
    parameter arrays, the normalization stats it was trained under, meta."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    norm_stats: NormStats
    meta: dict = field(default_factory=dict)


def checkpoint_from_params(
    config: ModelConfig,
    params: dict[str, Tensor],
    norm_stats: NormStats,
    meta: dict | None = None,
) -> ModelCheckpoint:
    return ModelCheckpoint(
        config=config,
        params={name: np.array(p.data, copy=True) for name, p in params.items()},
        norm_stats=norm_stats,
        meta=dict(meta or {}),
    )


def tensors_from_checkpoint(ckpt: ModelCheckpoint) -> dict[str, Tensor]:
    return {
        name: Tensor(np.array(arr, copy=True), requires_grad=True)
        for name, arr in ckpt.params.items()
    }


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    """JSON serialization; float64 round-trips bit-exactly through repr."""
    payload = {
        "config": asdict(ckpt.config),
        "norm_stats": {"mean": ckpt.norm_stats.mean, "std": ckpt.norm_stats.std},
        "params": {
            name: {"shape": list(arr.shape), "data": [float(x) for x in arr.ravel()]}
            for name, arr in sorted(ckpt.params.items())
        },
        "meta": ckpt.meta,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=1, sort_keys=True)
        handle.write("\n")


def load_checkpoint(path) -> ModelCheckpoint:
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise DataError("cannot open checkpoint %s: %s" % (path, exc))
    except json.JSONDecodeError as exc:
        raise DataError("checkpoint %s is not valid JSON: %s" % (path, exc))
    try:
        config = ModelConfig(**payload["config"])
        stats = NormStats(**payload["norm_stats"])
        raw_params = payload["params"]
        meta = payload.get("meta", {})
    except (KeyError, TypeError) as exc:
        raise DataError("checkpoint %s has malformed fields: %s" % (path, exc))
    expected = param_shapes(config)
    missing = sorted(set(expected) - set(raw_params))
    extra = sorted(set(raw_params) - set(expected))
    if missing or extra:
        raise DataError(
            "checkpoint %s parameter mismatch (missing=%s, unexpected=%s)"
            % (path, missing, extra)
        )
    params = {}
    for name, spec in raw_params.items():
        shape = tuple(spec["shape"])
        if shape != expected[name]:
            raise DataError(
                "checkpoint %s: %s has shape %r, architecture wants %r"
                % (path, name, shape, expected[name])
            )
        arr = np.array(spec["data"], dtype=np.float64).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise DataError("checkpoint %s: %s contains non-finite values" % (path, name))
        params[name] = arr
    return ModelCheckpoint(config=config, params=params, norm_stats=stats, meta=meta)
