"""Classical bias-correction baselines, applied per calendar month.

All four methods learn a monthly mapping on a reference period where the
observation and the model run overlap, then apply it to a projection stretch
of the same run:

- mean: shift each month by the reference mean difference (equivalently, the
  closed-form intercept of a slope-one regression from model to observation).
- meanvar: centre on the model's monthly mean, rescale by the ratio of
  monthly standard deviations, recentre on the observed monthly mean.
- eqm: empirical quantile mapping; each projected value maps to the sorted
  reference-observation value at the position of the first sorted
  reference-model value >= it, clamped at both ends.
- ecbc: eqm followed by a rank shuffle so the corrected month's rank order
  equals the observed reference month's rank order (ties broken by time).

Monthly grouping uses day indices against a caller-supplied epoch date;
``monthly=False`` treats the whole series as a single group.
"""

from __future__ import annotations

import datetime as dt
import logging

import numpy as np

from .errors import ConfigError, DataError
from .timeseries import TimeSeries, month_of

logger = logging.getLogger(__name__)

METHODS = ("mean", "meanvar", "eqm", "ecbc")


def _groups(times: np.ndarray, epoch: dt.date, monthly: bool) -> dict[int, np.ndarray]:
    """Month -> index array (whole series under key 0 when not monthly)."""
    if not monthly:
        return {0: np.arange(len(times))}
    keys = np.array([month_of(t, epoch) for t in times])
    return {int(m): np.flatnonzero(keys == m) for m in np.unique(keys)}


def _matched_groups(obs_ref, gcm_ref, gcm_proj, epoch, monthly):
    og = _groups(obs_ref.times, epoch, monthly)
    gg = _groups(gcm_ref.times, epoch, monthly)
    pg = _groups(gcm_proj.times, epoch, monthly)
    for m in sorted(pg):
        if m not in og or m not in gg:
            raise DataError(
                "projection month %d has no reference data "
                "(observed: %s, model: %s)" % (m, m in og, m in gg)
            )
    return og, gg, pg


def mean_shift(
    obs_ref: TimeSeries,
    gcm_ref: TimeSeries,
    gcm_proj: TimeSeries,
    epoch: dt.date,
    monthly: bool = True,
) -> TimeSeries:
    og, gg, pg = _matched_groups(obs_ref, gcm_ref, gcm_proj, epoch, monthly)
    out = np.array(gcm_proj.values)
    for m, idx in pg.items():
        shift = float(
            np.mean(obs_ref.values[og[m]]) - np.mean(gcm_ref.values[gg[m]])
        )
        out[idx] += shift
    return TimeSeries(gcm_proj.times, out, gcm_proj.source_tag)


def mean_var_shift(
    obs_ref: TimeSeries,
    gcm_ref: TimeSeries,
    gcm_proj: TimeSeries,
    epoch: dt.date,
    monthly: bool = True,
) -> TimeSeries:
    og, gg, pg = _matched_groups(obs_ref, gcm_ref, gcm_proj, epoch, monthly)
    out = np.array(gcm_proj.values)
    for m, idx in pg.items():
        mean_o = float(np.mean(obs_ref.values[og[m]]))
        mean_g = float(np.mean(gcm_ref.values[gg[m]]))
        std_o = float(np.std(obs_ref.values[og[m]]))
        std_g = float(np.std(gcm_ref.values[gg[m]]))
        if std_g == 0.0:
            raise DataError("reference model month %d has zero variance" % m)
        out[idx] = (out[idx] - mean_g) * (std_o / std_g) + mean_o
    return TimeSeries(gcm_proj.times, out, gcm_proj.source_tag)


def _eqm_values(obs_ref_v, gcm_ref_v, proj_v) -> np.ndarray:
    sorted_obs = np.sort(obs_ref_v)
    sorted_gcm = np.sort(gcm_ref_v)
    idx = np.searchsorted(sorted_gcm, proj_v, side="left")
    idx = np.minimum(idx, len(sorted_gcm) - 1)
    idx = np.minimum(idx, len(sorted_obs) - 1)
    return sorted_obs[idx]


def eqm(
    obs_ref: TimeSeries,
    gcm_ref: TimeSeries,
    gcm_proj: TimeSeries,
    epoch: dt.date,
    monthly: bool = True,
) -> TimeSeries:
    og, gg, pg = _matched_groups(obs_ref, gcm_ref, gcm_proj, epoch, monthly)
    out = np.array(gcm_proj.values)
    for m, idx in pg.items():
        out[idx] = _eqm_values(
            obs_ref.values[og[m]], gcm_ref.values[gg[m]], out[idx]
        )
    return TimeSeries(gcm_proj.times, out, gcm_proj.source_tag)


def _stable_ranks(values: np.ndarray) -> np.ndarray:
    """Rank of each element, ties resolved by position (time order)."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(len(values))
    return ranks


def ecbc(
    obs_ref: TimeSeries,
    gcm_ref: TimeSeries,
    gcm_proj: TimeSeries,
    epoch: dt.date,
    monthly: bool = True,
) -> TimeSeries:
    """Quantile-map, then reorder each month to the observed rank sequence.

    Needs equal per-month day counts between the observed reference and the
    projection; a mismatch is trimmed to the shorter count from the tail
    (with a logged warning), so the output may omit trailing surplus days.
    """
    base = eqm(obs_ref, gcm_ref, gcm_proj, epoch, monthly)
    og = _groups(obs_ref.times, epoch, monthly)
    pg = _groups(gcm_proj.times, epoch, monthly)
    out = np.full(len(gcm_proj), np.nan)
    keep = np.zeros(len(gcm_proj), dtype=bool)
    for m, idx in pg.items():
        template = obs_ref.values[og[m]]
        n = min(len(template), len(idx))
        if len(template) != len(idx):
            logger.warning(
                "month %d: %d observed reference days vs %d projection days; "
                "trimming to %d",
                m,
                len(template),
                len(idx),
                n,
            )
        idx_kept = idx[:n]
        ranks = _stable_ranks(template[:n])
        out[idx_kept] = np.sort(base.values[idx_kept])[ranks]
        keep[idx_kept] = True
    return TimeSeries(gcm_proj.times[keep], out[keep], gcm_proj.source_tag)


_DISPATCH = {
    "mean": mean_shift,
    "meanvar": mean_var_shift,
    "eqm": eqm,
    "ecbc": ecbc,
}


def correct(
    method: str,
    obs_ref: TimeSeries,
    gcm_ref: TimeSeries,
    gcm_proj: TimeSeries,
    epoch: dt.date,
    monthly: bool = True,
) -> TimeSeries:
    """Dispatch by method name; see the module docstring for the catalogue."""
    if method not in _DISPATCH:
        raise ConfigError("unknown baseline %r (choose from %s)" % (method, METHODS))
    for name, series in (("obs_ref", obs_ref), ("gcm_ref", gcm_ref), ("gcm_proj", gcm_proj)):
        if len(series) == 0:
            raise DataError("%s is empty" % name)
    return _DISPATCH[method](obs_ref, gcm_ref, gcm_proj, epoch, monthly)
