"""Gaussian-process synthetic data: kernels, sampling, posterior conditioning.

This module builds the (pseudo-observation, pseudo-model) pairs used for
controlled experiments: both series come from one latent GP draw, with a
known constant bias, known temporal misalignment, and i.i.d. noise layered on
top. It also provides exact GP posterior conditioning for sanity studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .rng import substream
from .timeseries import GCM, OBS, TimeSeries

RBF = "rbf"
PERIODIC = "periodic"
RATIONAL_QUADRATIC = "rational_quadratic"
PRODUCT = "product"

_KINDS = (RBF, PERIODIC, RATIONAL_QUADRATIC, PRODUCT)

_JITTER_START = 1e-10
_JITTER_MAX = 1e-4


@dataclass(frozen=True)
class Kernel:
    """Stationary covariance function on the time axis.

    With r = |t - t'|, ``kind`` selects

    - rbf:                  exp(-r^2 / (2 l^2))
    - periodic:             exp(-0.5 (sin(pi r) / gamma)^2 / l^2)
    - rational_quadratic:   (1 + r^2 / (2 alpha l^2))^(-alpha)
    - product:              elementwise product of the operand kernels

    The periodic form keeps gamma under the sine as written in the source
    convention, so the function has unit period in r regardless of gamma;
    gamma and l jointly scale how sharply correlation dips between wraps.
    """

    kind: str
    lengthscale: float = 1.0
    period: float = 1.0
    alpha: float = 1.0
    operands: tuple["Kernel", ...] = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError("unknown kernel kind %r" % (self.kind,))
        if self.kind == PRODUCT:
            if len(self.operands) < 2:
                raise ConfigError("product kernel needs at least two operands")
        else:
            if self.operands:
                raise ConfigError("%s kernel takes no operands" % self.kind)
            if self.lengthscale <= 0:
                raise ConfigError("lengthscale must be positive")
            if self.kind == PERIODIC and self.period <= 0:
                raise ConfigError("period must be positive")
            if self.kind == RATIONAL_QUADRATIC and self.alpha <= 0:
                raise ConfigError("alpha must be positive")


def rbf(lengthscale: float = 1.0) -> Kernel:
    return Kernel(RBF, lengthscale=lengthscale)


def periodic(lengthscale: float = 1.0, period: float = 1.0) -> Kernel:
    return Kernel(PERIODIC, lengthscale=lengthscale, period=period)


def rational_quadratic(lengthscale: float = 1.0, alpha: float = 1.0) -> Kernel:
    return Kernel(RATIONAL_QUADRATIC, lengthscale=lengthscale, alpha=alpha)


def product(*kernels: Kernel) -> Kernel:
    return Kernel(PRODUCT, operands=tuple(kernels))


def gram(kernel: Kernel, times_a, times_b=None) -> np.ndarray:
    """Gram matrix K[i, j] = k(times_a[i], times_b[j])."""
    ta = np.asarray(times_a, dtype=np.float64)
    tb = ta if times_b is None else np.asarray(times_b, dtype=np.float64)
    if kernel.kind == PRODUCT:
        out = np.ones((len(ta), len(tb)))
        for op in kernel.operands:
            out *= gram(op, ta, tb)
        return out
    r = np.abs(ta[:, None] - tb[None, :])
    if kernel.kind == RBF:
        return np.exp(-(r**2) / (2.0 * kernel.lengthscale**2))
    if kernel.kind == PERIODIC:
        s = np.sin(np.pi * r) / kernel.period
        return np.exp(-0.5 * s**2 / kernel.lengthscale**2)
    # rational quadratic
    return (1.0 + r**2 / (2.0 * kernel.alpha * kernel.lengthscale**2)) ** (
        -kernel.alpha
    )


def _cholesky_with_jitter(k_matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with an escalating diagonal jitter.

    Starts at 1e-10 and multiplies by 10 until 1e-4; beyond that the matrix
    is treated as genuinely non-PSD.
    """
    eye = np.eye(len(k_matrix))
    jitter = _JITTER_START
    while jitter <= _JITTER_MAX:
        try:
            return np.linalg.cholesky(k_matrix + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericError(
        "Cholesky failed even with jitter %g; kernel matrix is not PSD" % _JITTER_MAX
    )


def sample_gp(kernel: Kernel, times, seed) -> np.ndarray:
    """One zero-mean draw of the GP at ``times``; deterministic per seed."""
    times = np.asarray(times, dtype=np.float64)
    if len(times) == 0:
        raise DataError("cannot sample a GP at zero points")
    rng = seed if isinstance(seed, np.random.Generator) else substream(int(seed), "gp")
    chol = _cholesky_with_jitter(gram(kernel, times))
    return chol @ rng.standard_normal(len(times))


@dataclass(frozen=True)
class SyntheticPair:
    """Pseudo-observation / pseudo-model pair built from one latent draw.

    Both series are stamped on the same canonical grid. The observation value
    at grid time t is the latent evaluated at t + true_time_shift (plus the
    constant bias and noise), so the two series are the same signal up to a
    bias, i.i.d. noise, and a temporal misalignment of true_time_shift days.
    """

    obs: TimeSeries
    gcm: TimeSeries
    true_mean_bias: float
    true_time_shift: float
    noise_std: float
    latent_times: np.ndarray
    latent_values: np.ndarray


def _latent_on_union(kernel, times, time_shift, seed):
    """Latent draw on the union of the grid and its shifted copy."""
    times = np.asarray(times, dtype=np.float64)
    if len(times) == 0:
        raise DataError("need at least one time stamp")
    shifted = times + time_shift
    if time_shift == 0.0:
        grid = times
        idx_base = idx_shift = np.arange(len(times))
    else:
        grid = np.union1d(times, shifted)
        idx_base = np.searchsorted(grid, times)
        idx_shift = np.searchsorted(grid, shifted)
    latent = sample_gp(kernel, grid, substream(int(seed), "latent"))
    return grid, latent, idx_base, idx_shift


def make_shifted_pair(
    kernel: Kernel,
    times,
    mean_bias: float = 0.0,
    time_shift: float = 0.0,
    noise_std: float = 0.0,
    seed: int = 0,
) -> SyntheticPair:
    """Draw one latent series and derive a biased, shifted, noisy pair."""
    if noise_std < 0:
        raise ConfigError("noise_std must be nonnegative")
    times = np.asarray(times, dtype=np.float64)
    grid, latent, idx_base, idx_shift = _latent_on_union(
        kernel, times, time_shift, seed
    )
    rng_gcm = substream(int(seed), "noise", "gcm")
    rng_obs = substream(int(seed), "noise", "obs")
    gcm_values = latent[idx_base] + noise_std * rng_gcm.standard_normal(len(times))
    obs_values = (
        latent[idx_shift]
        + mean_bias
        + noise_std * rng_obs.standard_normal(len(times))
    )
    return SyntheticPair(
        obs=TimeSeries(times, obs_values, OBS),
        gcm=TimeSeries(times, gcm_values, GCM),
        true_mean_bias=float(mean_bias),
        true_time_shift=float(time_shift),
        noise_std=float(noise_std),
        latent_times=grid,
        latent_values=latent,
    )


def make_run_ensemble(
    kernel: Kernel,
    times,
    mean_bias: float = 0.0,
    time_shift: float = 0.0,
    noise_std: float = 0.0,
    n_runs: int = 1,
    seed: int = 0,
) -> tuple[TimeSeries, list[TimeSeries]]:
    """Shared latent draw with one model-noise realization per run."""
    if n_runs < 1:
        raise ConfigError("n_runs must be at least 1")
    if noise_std < 0:
        raise ConfigError("noise_std must be nonnegative")
    times = np.asarray(times, dtype=np.float64)
    grid, latent, idx_base, idx_shift = _latent_on_union(
        kernel, times, time_shift, seed
    )
    rng_obs = substream(int(seed), "noise", "obs")
    obs = TimeSeries(
        times,
        latent[idx_shift] + mean_bias + noise_std * rng_obs.standard_normal(len(times)),
        OBS,
    )
    runs = []
    for z in range(n_runs):
        rng_z = substream(int(seed), "noise", "gcm", z)
        runs.append(
            TimeSeries(
                times,
                latent[idx_base] + noise_std * rng_z.standard_normal(len(times)),
                GCM,
            )
        )
    return obs, runs


def gp_posterior(
    kernel: Kernel, train_times, train_values, test_times, noise_var: float = 0.0
):
    """Exact Gaussian conditioning; returns (mean, covariance) at test times."""
    tr = np.asarray(train_times, dtype=np.float64)
    y = np.asarray(train_values, dtype=np.float64)
    te = np.asarray(test_times, dtype=np.float64)
    if len(tr) == 0:
        raise DataError("posterior needs at least one training point")
    if noise_var < 0:
        raise ConfigError("noise_var must be nonnegative")
    k_train = gram(kernel, tr) + noise_var * np.eye(len(tr))
    chol = _cholesky_with_jitter(k_train)
    k_cross = gram(kernel, tr, te)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
    mean = k_cross.T @ alpha
    v = np.linalg.solve(chol, k_cross)
    cov = gram(kernel, te) - v.T @ v
    return mean, cov
