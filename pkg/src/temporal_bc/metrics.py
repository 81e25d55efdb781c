"""Evaluation statistics: heatwave runs, QQ pairs, PACF, scores, trends.

A heatwave is a maximal run of at least three consecutive days strictly
above a threshold; counting requires a contiguous daily grid. The score
report mirrors the usual summary-table convention: MSE against the observed
series plus a Gaussian log likelihood whose variance is either supplied
per point (probabilistic candidates) or taken constant and equal to the MSE
(deterministic candidates).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .timeseries import TimeSeries

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))

_MSE_FLOOR = 1e-12
_DAYS_PER_YEAR = 365


@dataclass(frozen=True)
class HeatwaveStats:
    threshold: float
    count: int
    run_lengths: tuple[int, ...]

    def __post_init__(self):
        if any(r < 3 for r in self.run_lengths):
            raise DataError("heatwave runs must be at least 3 days")
        if self.count != len(self.run_lengths):
            raise DataError("count must equal the number of runs")


def heatwave_count(series: TimeSeries, threshold: float) -> HeatwaveStats:
    """Count maximal runs of >= 3 consecutive days strictly above threshold."""
    if len(series) == 0:
        raise DataError("cannot count heatwaves of an empty series")
    if not series.is_daily():
        raise DataError("heatwave counting needs a contiguous daily grid")
    above = np.concatenate([[False], series.values > threshold, [False]]).astype(int)
    edges = np.diff(above)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    lengths = tuple(int(l) for l in (ends - starts) if l >= 3)
    return HeatwaveStats(
        threshold=float(threshold), count=len(lengths), run_lengths=lengths
    )


def relative_heatwave_error(candidate_count: int, observed_count: int) -> float:
    """100 * |candidate - observed| / observed, in percent."""
    if observed_count <= 0:
        raise DataError("observed heatwave count must be positive")
    return 100.0 * abs(candidate_count - observed_count) / observed_count


def qq(series_a, series_b, n_quantiles: int = 101) -> np.ndarray:
    """Matched empirical quantiles at evenly spaced probabilities.

    Returns an (n_quantiles, 2) array of (quantile_a, quantile_b) pairs at
    probabilities linspace(0, 1, n_quantiles), linearly interpolated.
    """
    if n_quantiles < 2:
        raise ConfigError("n_quantiles must be >= 2")
    a = np.asarray(getattr(series_a, "values", series_a), dtype=np.float64)
    b = np.asarray(getattr(series_b, "values", series_b), dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise DataError("qq needs nonempty series")
    probs = np.linspace(0.0, 1.0, n_quantiles)
    return np.column_stack([np.quantile(a, probs), np.quantile(b, probs)])


def pacf(values, max_lag: int = 14) -> np.ndarray:
    """Partial autocorrelations at lags 1..max_lag via Durbin-Levinson.

    Works from the biased sample autocorrelation; the series must be longer
    than max_lag and non-constant.
    """
    x = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if max_lag < 1:
        raise ConfigError("max_lag must be >= 1")
    n = len(x)
    if n <= max_lag:
        raise DataError("series length %d must exceed max_lag %d" % (n, max_lag))
    centered = x - np.mean(x)
    denom = float(np.dot(centered, centered))
    if denom == 0.0:
        raise DataError("constant series has undefined partial autocorrelation")
    rho = np.empty(max_lag + 1)
    rho[0] = 1.0
    for k in range(1, max_lag + 1):
        rho[k] = float(np.dot(centered[:-k], centered[k:])) / denom

    out = np.empty(max_lag)
    phi_prev = np.zeros(0)
    for k in range(1, max_lag + 1):
        if k == 1:
            phi_kk = rho[1]
            phi = np.array([phi_kk])
        else:
            num = rho[k] - float(np.dot(phi_prev, rho[k - 1 : 0 : -1]))
            den = 1.0 - float(np.dot(phi_prev, rho[1:k]))
            phi_kk = num / den
            phi = np.empty(k)
            phi[:-1] = phi_prev - phi_kk * phi_prev[::-1]
            phi[-1] = phi_kk
        out[k - 1] = phi_kk
        phi_prev = phi
    return out


def five_year_means(series: TimeSeries) -> np.ndarray:
    """Means over consecutive five-year blocks (365-day years); a trailing
    partial block is dropped. Needs at least one full block."""
    block = 5 * _DAYS_PER_YEAR
    n_blocks = len(series) // block
    if n_blocks < 1:
        raise DataError(
            "need at least %d days for a five-year mean, have %d"
            % (block, len(series))
        )
    trimmed = series.values[: n_blocks * block]
    return trimmed.reshape(n_blocks, block).mean(axis=1)


@dataclass
class ScoreReport:
    """Headline comparison of a candidate series against observations."""

    mse: float
    loglik: float
    sigma2: float
    degenerate_variance: bool = False
    quantile_pairs: np.ndarray | None = None
    pacf_candidate: np.ndarray | None = None
    pacf_observed: np.ndarray | None = None
    five_year_candidate: np.ndarray | None = None
    five_year_observed: np.ndarray | None = None

    def to_dict(self) -> dict:
        def listify(arr):
            return None if arr is None else [float(x) for x in np.ravel(arr)]

        return {
            "mse": self.mse,
            "loglik": self.loglik,
            "sigma2": self.sigma2,
            "degenerate_variance": self.degenerate_variance,
            "quantile_pairs": None
            if self.quantile_pairs is None
            else [[float(a), float(b)] for a, b in self.quantile_pairs],
            "pacf_candidate": listify(self.pacf_candidate),
            "pacf_observed": listify(self.pacf_observed),
            "five_year_candidate": listify(self.five_year_candidate),
            "five_year_observed": listify(self.five_year_observed),
        }


def score(
    candidate,
    observed,
    predictive_std=None,
    n_quantiles: int = 101,
    max_lag: int = 14,
) -> ScoreReport:
    """MSE and Gaussian log likelihood of a candidate against observations.

    With ``predictive_std`` given (per-point), the log likelihood treats the
    candidate values as per-point means. Otherwise the variance is constant
    and equal to the MSE (floored at 1e-12 with a logged warning, since a
    perfect match makes the density degenerate).
    """
    c = np.asarray(getattr(candidate, "values", candidate), dtype=np.float64)
    o = np.asarray(getattr(observed, "values", observed), dtype=np.float64)
    if len(c) != len(o):
        raise DataError(
            "candidate has %d points, observed has %d" % (len(c), len(o))
        )
    if len(c) == 0:
        raise DataError("cannot score empty series")
    resid = o - c
    mse = float(np.mean(resid**2))
    degenerate = False
    if predictive_std is not None:
        sd = np.asarray(predictive_std, dtype=np.float64)
        if sd.shape != c.shape:
            raise DataError("predictive_std must match the candidate's shape")
        if np.any(sd <= 0):
            raise DataError("predictive_std must be positive")
        loglik = float(
            np.mean(-0.5 * LOG_2PI - np.log(sd) - resid**2 / (2.0 * sd**2))
        )
        sigma2 = float(np.mean(sd**2))
    else:
        sigma2 = mse
        if sigma2 < _MSE_FLOOR:
            sigma2 = _MSE_FLOOR
            degenerate = True
            logger.warning(
                "MSE %g below floor %g; log likelihood is degenerate", mse, _MSE_FLOOR
            )
        loglik = float(
            np.mean(-0.5 * LOG_2PI - 0.5 * np.log(sigma2) - resid**2 / (2.0 * sigma2))
        )
    report = ScoreReport(
        mse=mse, loglik=loglik, sigma2=sigma2, degenerate_variance=degenerate
    )
    report.quantile_pairs = qq(o, c, n_quantiles)
    if len(c) > max_lag and np.std(c) > 0 and np.std(o) > 0:
        report.pacf_candidate = pacf(c, max_lag)
        report.pacf_observed = pacf(o, max_lag)
    block = 5 * _DAYS_PER_YEAR
    if len(c) >= block:
        report.five_year_candidate = (
            c[: len(c) // block * block].reshape(-1, block).mean(axis=1)
        )
        report.five_year_observed = (
            o[: len(o) // block * block].reshape(-1, block).mean(axis=1)
        )
    return report
