"""Command-line pipeline: synth, train, sample, baseline, eval, report.

Every command writes its artifacts plus a ``manifest.json`` recording the
resolved-settings hash, seeds, sha256 digests of the inputs and the relative
output paths, so identical invocations are byte-for-byte reproducible and
auditable. On failure, partially written outputs are removed.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import baselines as bl
from . import gp, metrics
from .batching import BatchConfig
from .errors import ConfigError, DataError, NumericError, ToolkitError
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .sampling import SamplerConfig, sample_all_runs, sample_trajectories
from .timeseries import (
    GCM,
    OBS,
    PairedDataset,
    TimeSeries,
    _fmt,
    load_csv,
    load_paired,
    write_gcm_csv,
    write_obs_csv,
)
from .training import TrainConfig, train, write_metrics_csv

__version__ = "0.1.0"

logger = logging.getLogger(__name__)

_DEFAULT_EPOCH = "1948-01-01"
_ENSEMBLE_STD_FLOOR = 1e-6


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, command, settings, seeds, inputs, outputs) -> None:
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(
            json.dumps(settings, sort_keys=True).encode()
        ).hexdigest(),
        "seeds": seeds,
        "inputs": {
            name: {"path": str(path), "sha256": _sha256(path)}
            for name, path in inputs.items()
        },
        "outputs": sorted(outputs),
        "version": __version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=1, sort_keys=True)
        handle.write("\n")


def _parse_epoch(raw: str) -> dt.date:
    try:
        return dt.date.fromisoformat(raw)
    except ValueError:
        raise ConfigError("epoch must be an ISO date (YYYY-MM-DD), got %r" % raw)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            cfg = json.load(handle)
    except OSError as exc:
        raise ConfigError("cannot open config %s: %s" % (path, exc))
    except json.JSONDecodeError as exc:
        raise ConfigError("config %s is not valid JSON: %s" % (path, exc))
    if not isinstance(cfg, dict):
        raise ConfigError("config %s must hold a JSON object" % path)
    return cfg


def _apply_section(default, section: dict | None, name: str):
    """Overlay a config-file section onto a dataclass of defaults."""
    if section is None:
        return default
    if not isinstance(section, dict):
        raise ConfigError("config section %r must be an object" % name)
    known = {f.name for f in dataclasses.fields(default)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError("config section %r has unknown keys %s" % (name, unknown))
    try:
        return dataclasses.replace(default, **section)
    except (TypeError, ValueError) as exc:
        raise ConfigError("config section %r is invalid: %s" % (name, exc))


def _ensure_out_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


_ACTIVE_OUTPUTS: list["_Outputs"] = []


class _Outputs:
    """Track files written by a command so failures can clean them up.

    ``keep = True`` marks outputs that must survive an error exit (for
    example the last good checkpoint of an aborted training run).
    """

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.names: list[str] = []
        self.keep = False
        _ACTIVE_OUTPUTS.append(self)

    def path(self, name: str) -> str:
        self.names.append(name)
        return os.path.join(self.out_dir, name)

    def discard_all(self) -> None:
        if self.keep:
            return
        for name in self.names + ["manifest.json"]:
            target = os.path.join(self.out_dir, name)
            if os.path.exists(target):
                os.remove(target)


def _build_kernel(args) -> gp.Kernel:
    if args.kernel == "rbf":
        return gp.rbf(args.lengthscale)
    if args.kernel == "periodic":
        return gp.periodic(args.lengthscale, args.period)
    if args.kernel == "rational_quadratic":
        return gp.rational_quadratic(args.lengthscale, args.alpha)
    raise ConfigError("unknown kernel %r" % args.kernel)


def _cmd_synth(args) -> int:
    out_dir = _ensure_out_dir(args.out_dir)
    outputs = _Outputs(out_dir)
    kernel = _build_kernel(args)
    if args.n_days < 2:
        raise ConfigError("n-days must be >= 2")
    times = args.start_day + np.arange(args.n_days, dtype=np.float64)
    obs, runs = gp.make_run_ensemble(
        kernel,
        times,
        mean_bias=args.mean_bias,
        time_shift=args.time_shift,
        noise_std=args.noise_std,
        n_runs=args.n_runs,
        seed=args.seed,
    )
    write_obs_csv(obs, outputs.path("obs.csv"))
    write_gcm_csv(runs, outputs.path("gcm.csv"))
    truth = {
        "kernel": args.kernel,
        "lengthscale": args.lengthscale,
        "period": args.period,
        "alpha": args.alpha,
        "mean_bias": args.mean_bias,
        "time_shift": args.time_shift,
        "noise_std": args.noise_std,
        "n_days": args.n_days,
        "n_runs": args.n_runs,
        "start_day": args.start_day,
        "seed": args.seed,
    }
    with open(outputs.path("truth.json"), "w", encoding="utf-8") as handle:
        json.dump(truth, handle, indent=1, sort_keys=True)
        handle.write("\n")
    _write_manifest(
        out_dir, "synth", truth, {"seed": args.seed}, {}, outputs.names
    )
    print("wrote %d-day pair with %d run(s) to %s" % (args.n_days, args.n_runs, out_dir))
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config_file(args.config)
    model_config = _apply_section(ModelConfig(), cfg.get("model"), "model")
    batch_config = _apply_section(BatchConfig(), cfg.get("batch"), "batch")
    train_config = _apply_section(TrainConfig(), cfg.get("train"), "train")
    overrides = {}
    for key in ("steps", "batch_size", "learning_rate", "seed"):
        flag = getattr(args, key)
        if flag is not None:
            overrides[key] = flag
    if overrides:
        train_config = dataclasses.replace(train_config, **overrides)
    if args.ablate_gcm:
        batch_config = dataclasses.replace(batch_config, ablate_gcm=True)

    dataset = load_paired(args.obs, args.gcm, location_id=args.location_id)
    out_dir = _ensure_out_dir(args.out_dir)
    outputs = _Outputs(out_dir)
    result = train(
        dataset, model_config, train_config, batch_config, checkpoint_dir=out_dir
    )
    for path in result.interim_checkpoints:
        outputs.names.append(os.path.basename(path))
    save_checkpoint(result.checkpoint, outputs.path("checkpoint.json"))
    write_metrics_csv(result.metrics, outputs.path("metrics.csv"))
    settings = {
        "model": dataclasses.asdict(model_config),
        "batch": dataclasses.asdict(batch_config),
        "train": dataclasses.asdict(train_config),
    }
    _write_manifest(
        out_dir,
        "train",
        settings,
        {"seed": train_config.seed},
        {"obs": args.obs, "gcm": args.gcm},
        outputs.names,
    )
    final = result.metrics[-1]
    print(
        "trained %d steps (%s); final train NLL %s, best val NLL %s"
        % (
            final.step,
            result.stop_reason,
            "n/a" if final.train_nll is None else "%.4f" % final.train_nll,
            "%.4f" % result.checkpoint.meta["best_val_nll"],
        )
    )
    if result.aborted:
        outputs.keep = True
        raise NumericError(
            "training aborted on non-finite loss; last good checkpoint saved"
        )
    return 0


def _parse_run(raw: str) -> int | None:
    if raw == "all":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError("--run must be an integer or 'all', got %r" % raw)


def _write_samples_csv(samples: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("run,trajectory,t,value\n")
        for run_id in sorted(samples):
            for traj_id, series in enumerate(samples[run_id]):
                for t, v in zip(series.times, series.values):
                    handle.write(
                        "%d,%d,%s,%s\n" % (run_id, traj_id, _fmt(t), _fmt(v))
                    )


def _cmd_sample(args) -> int:
    cfg = _load_config_file(args.config)
    sampler_config = _apply_section(SamplerConfig(), cfg.get("sampler"), "sampler")
    overrides = {"horizon": args.horizon}
    if args.n_trajectories is not None:
        overrides["n_trajectories"] = args.n_trajectories
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.deterministic:
        overrides["deterministic"] = True
    sampler_config = dataclasses.replace(sampler_config, **overrides)

    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_paired(args.obs, args.gcm)
    run_id = _parse_run(args.run)
    out_dir = _ensure_out_dir(args.out_dir)
    outputs = _Outputs(out_dir)
    if run_id is None:
        samples = sample_all_runs(ckpt, dataset, sampler_config)
    else:
        per_run = dataclasses.replace(
            sampler_config, seed=sampler_config.seed ^ run_id
        )
        samples = {run_id: sample_trajectories(ckpt, dataset, run_id, per_run)}
    _write_samples_csv(samples, outputs.path("samples.csv"))
    _write_manifest(
        out_dir,
        "sample",
        dataclasses.asdict(sampler_config),
        {"seed": sampler_config.seed},
        {"checkpoint": args.checkpoint, "obs": args.obs, "gcm": args.gcm},
        outputs.names,
    )
    n_series = sum(len(v) for v in samples.values())
    print(
        "sampled %d trajectories x %d days across %d run(s) into %s"
        % (n_series, sampler_config.horizon, len(samples), out_dir)
    )
    return 0


def _cmd_baseline(args) -> int:
    epoch = _parse_epoch(args.epoch)
    if args.ref_end < args.ref_start or args.proj_end < args.proj_start:
        raise ConfigError("period ends must not precede their starts")
    obs = load_csv(args.obs, OBS)
    runs = load_csv(args.gcm, GCM)
    monthly = not args.no_monthly
    out_dir = _ensure_out_dir(args.out_dir)
    outputs = _Outputs(out_dir)
    corrected = []
    for run in runs:
        obs_ref = obs.window(args.ref_start, args.ref_end)
        gcm_ref = run.window(args.ref_start, args.ref_end)
        gcm_proj = run.window(args.proj_start, args.proj_end)
        corrected.append(
            bl.correct(args.method, obs_ref, gcm_ref, gcm_proj, epoch, monthly)
        )
    # canonical run-file format, so the output feeds straight into `report`
    write_gcm_csv(corrected, outputs.path("corrected.csv"))
    settings = {
        "method": args.method,
        "ref_start": args.ref_start,
        "ref_end": args.ref_end,
        "proj_start": args.proj_start,
        "proj_end": args.proj_end,
        "epoch": args.epoch,
        "monthly": monthly,
    }
    _write_manifest(
        out_dir,
        "baseline",
        settings,
        {},
        {"obs": args.obs, "gcm": args.gcm},
        outputs.names,
    )
    print("wrote %s correction for %d run(s) to %s" % (args.method, len(runs), out_dir))
    return 0


def _common_values(a: TimeSeries, b: TimeSeries):
    """Values of both series on their common time grid."""
    common, ia, ib = np.intersect1d(a.times, b.times, return_indices=True)
    if len(common) == 0:
        raise DataError("series share no time stamps")
    return common, a.values[ia], b.values[ib]


def _cmd_eval(args) -> int:
    candidate = load_csv(args.candidate, OBS)
    observed = load_csv(args.observed, OBS)
    common, cand_v, obs_v = _common_values(candidate, observed)
    report = metrics.score(cand_v, obs_v)
    cand_series = TimeSeries(common, cand_v)
    obs_series = TimeSeries(common, obs_v)
    hw_cand = metrics.heatwave_count(cand_series, args.threshold)
    hw_obs = metrics.heatwave_count(obs_series, args.threshold)
    rel = (
        None
        if hw_obs.count == 0
        else metrics.relative_heatwave_error(hw_cand.count, hw_obs.count)
    )
    out_dir = _ensure_out_dir(args.out_dir)
    outputs = _Outputs(out_dir)
    payload = report.to_dict()
    payload.update(
        {
            "threshold": args.threshold,
            "n_days": len(common),
            "heatwave_candidate": hw_cand.count,
            "heatwave_observed": hw_obs.count,
            "relative_heatwave_error_pct": rel,
        }
    )
    with open(outputs.path("report.json"), "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=1, sort_keys=True)
        handle.write("\n")
    with open(outputs.path("qq.csv"), "w", encoding="utf-8") as handle:
        handle.write("prob,observed,candidate\n")
        probs = np.linspace(0.0, 1.0, len(report.quantile_pairs))
        for p, (qo, qc) in zip(probs, report.quantile_pairs):
            handle.write("%s,%s,%s\n" % (_fmt(p), _fmt(qo), _fmt(qc)))
    with open(outputs.path("pacf.csv"), "w", encoding="utf-8") as handle:
        handle.write("lag,observed,candidate\n")
        if report.pacf_candidate is not None:
            for lag, (po, pc) in enumerate(
                zip(report.pacf_observed, report.pacf_candidate), start=1
            ):
                handle.write("%d,%s,%s\n" % (lag, _fmt(po), _fmt(pc)))
    with open(outputs.path("heatwave.csv"), "w", encoding="utf-8") as handle:
        handle.write("series,run_length\n")
        for length in hw_obs.run_lengths:
            handle.write("observed,%d\n" % length)
        for length in hw_cand.run_lengths:
            handle.write("candidate,%d\n" % length)
    settings = {"threshold": args.threshold}
    _write_manifest(
        out_dir,
        "eval",
        settings,
        {},
        {"candidate": args.candidate, "observed": args.observed},
        outputs.names,
    )
    print(
        "eval over %d days: mse %.6g, loglik %.6g, heatwaves %d vs %d observed"
        % (len(common), report.mse, report.loglik, hw_cand.count, hw_obs.count)
    )
    return 0


def _read_samples_csv(path) -> dict[int, dict[int, TimeSeries]]:
    try:
        handle = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise DataError("cannot open %s: %s" % (path, exc))
    rows: dict[int, dict[int, list[tuple[float, float]]]] = {}
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["run", "trajectory", "t", "value"]:
            raise DataError("%s: expected header run,trajectory,t,value" % path)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError("%s:%d: expected 4 columns" % (path, line_no))
            try:
                run, traj = int(row[0]), int(row[1])
                t, v = float(row[2]), float(row[3])
            except ValueError:
                raise DataError("%s:%d: malformed row" % (path, line_no))
            rows.setdefault(run, {}).setdefault(traj, []).append((t, v))
    out: dict[int, dict[int, TimeSeries]] = {}
    for run, trajs in rows.items():
        out[run] = {}
        for traj, pairs in trajs.items():
            out[run][traj] = TimeSeries(
                np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]), OBS
            )
    return out


def _read_run_csv(path) -> dict[int, TimeSeries]:
    runs = load_csv(path, GCM)
    return {run_id: series for run_id, series in enumerate(runs)}


def _ensemble_stats(trajs: dict[int, TimeSeries]):
    """Common grid plus per-point ensemble mean and floored std."""
    times = None
    for series in trajs.values():
        times = series.times if times is None else np.intersect1d(times, series.times)
    if times is None or len(times) == 0:
        raise DataError("trajectories share no time stamps")
    stack = []
    for series in trajs.values():
        _, _, idx = np.intersect1d(times, series.times, return_indices=True)
        stack.append(series.values[idx])
    arr = np.vstack(stack)
    mean = arr.mean(axis=0)
    std = np.maximum(arr.std(axis=0), _ENSEMBLE_STD_FLOOR)
    return times, mean, std


def _cmd_report(args) -> int:
    observed = load_csv(args.observed, OBS)
    samples = _read_samples_csv(args.samples)
    baseline_series = {}
    for spec in args.baseline or []:
        if "=" not in spec:
            raise ConfigError("--baseline expects name=path, got %r" % spec)
        name, path = spec.split("=", 1)
        baseline_series[name] = (_read_run_csv(path), path)

    out_dir = _ensure_out_dir(args.out_dir)
    outputs = _Outputs(out_dir)
    count_rows: list[tuple[str, str, str, int]] = []
    summary: dict[str, dict] = {}

    def obs_on(times) -> TimeSeries:
        common, io, _ = np.intersect1d(observed.times, times, return_indices=True)
        if len(common) != len(times):
            raise DataError(
                "observed record does not cover the evaluation stretch "
                "(%d of %d days present)" % (len(common), len(times))
            )
        return TimeSeries(common, observed.values[io])

    model_runs = {}
    for run_id in sorted(samples):
        times, ens_mean, ens_std = _ensemble_stats(samples[run_id])
        obs_slice = obs_on(times)
        hw_obs = metrics.heatwave_count(obs_slice, args.threshold)
        traj_counts = {}
        rels = []
        for traj_id in sorted(samples[run_id]):
            hw = metrics.heatwave_count(samples[run_id][traj_id], args.threshold)
            traj_counts[traj_id] = hw.count
            count_rows.append(("model", str(run_id), str(traj_id), hw.count))
            if hw_obs.count > 0:
                rels.append(
                    metrics.relative_heatwave_error(hw.count, hw_obs.count)
                )
        rep = metrics.score(ens_mean, obs_slice.values, predictive_std=ens_std)
        model_runs[run_id] = {
            "mse": rep.mse,
            "loglik": rep.loglik,
            "trajectory_heatwave_counts": traj_counts,
            "observed_heatwave_count": hw_obs.count,
            "relative_heatwave_error_pct": None if not rels else float(np.mean(rels)),
        }
    summary["model"] = _summarize(model_runs)

    baseline_results = {}
    for name, (runs, _path) in baseline_series.items():
        per_run = {}
        for run_id, series in sorted(runs.items()):
            obs_slice = obs_on(series.times)
            hw_obs = metrics.heatwave_count(obs_slice, args.threshold)
            hw = metrics.heatwave_count(series, args.threshold)
            count_rows.append((name, str(run_id), "", hw.count))
            rep = metrics.score(series.values, obs_slice.values)
            per_run[run_id] = {
                "mse": rep.mse,
                "loglik": rep.loglik,
                "heatwave_count": hw.count,
                "observed_heatwave_count": hw_obs.count,
                "relative_heatwave_error_pct": None
                if hw_obs.count == 0
                else metrics.relative_heatwave_error(hw.count, hw_obs.count),
            }
        baseline_results[name] = per_run
        summary[name] = _summarize(per_run)

    payload = {
        "threshold": args.threshold,
        "model": {"per_run": {str(k): v for k, v in model_runs.items()}},
        "baselines": {
            name: {"per_run": {str(k): v for k, v in per.items()}}
            for name, per in baseline_results.items()
        },
        "summary": summary,
    }
    with open(outputs.path("report.json"), "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=1, sort_keys=True)
        handle.write("\n")
    with open(outputs.path("heatwave_counts.csv"), "w", encoding="utf-8") as handle:
        handle.write("method,run,trajectory,count\n")
        for method, run, traj, count in count_rows:
            handle.write("%s,%s,%s,%d\n" % (method, run, traj, count))
    with open(outputs.path("summary.csv"), "w", encoding="utf-8") as handle:
        handle.write("method,mse,loglik,relative_heatwave_error_pct\n")
        for method in summary:
            row = summary[method]
            handle.write(
                "%s,%s,%s,%s\n"
                % (
                    method,
                    _fmt(row["mse"]),
                    _fmt(row["loglik"]),
                    "" if row["relative_heatwave_error_pct"] is None
                    else _fmt(row["relative_heatwave_error_pct"]),
                )
            )
    inputs = {"observed": args.observed, "samples": args.samples}
    for name, (_runs, path) in baseline_series.items():
        inputs["baseline:%s" % name] = path
    _write_manifest(
        out_dir, "report", {"threshold": args.threshold}, {}, inputs, outputs.names
    )
    for method, row in summary.items():
        print(
            "%s: mse %.4f, loglik %.4f, heatwave rel err %s"
            % (
                method,
                row["mse"],
                row["loglik"],
                "n/a"
                if row["relative_heatwave_error_pct"] is None
                else "%.1f%%" % row["relative_heatwave_error_pct"],
            )
        )
    return 0


def _summarize(per_run: dict) -> dict:
    if not per_run:
        raise DataError("no runs to summarize")
    rels = [
        row["relative_heatwave_error_pct"]
        for row in per_run.values()
        if row["relative_heatwave_error_pct"] is not None
    ]
    return {
        "mse": float(np.mean([row["mse"] for row in per_run.values()])),
        "loglik": float(np.mean([row["loglik"] for row in per_run.values()])),
        "relative_heatwave_error_pct": None if not rels else float(np.mean(rels)),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="temporal-bc",
        description="Temporal stochastic bias correction of daily series",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic obs/model pair")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-days", type=int, default=1000)
    p.add_argument("--n-runs", type=int, default=1)
    p.add_argument("--start-day", type=float, default=0.0)
    p.add_argument(
        "--kernel",
        choices=("rbf", "periodic", "rational_quadratic"),
        default="rbf",
    )
    p.add_argument("--lengthscale", type=float, default=10.0)
    p.add_argument("--period", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--mean-bias", type=float, default=0.0)
    p.add_argument("--time-shift", type=float, default=0.0)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="fit the attention model to a paired dataset")
    p.add_argument("--obs", required=True)
    p.add_argument("--gcm", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--location-id", default="")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablate-gcm", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="generate corrected trajectories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--gcm", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--n-trajectories", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--run", default="all")
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("baseline", help="apply a classical correction method")
    p.add_argument("--method", choices=bl.METHODS, required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--gcm", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ref-start", type=float, required=True)
    p.add_argument("--ref-end", type=float, required=True)
    p.add_argument("--proj-start", type=float, required=True)
    p.add_argument("--proj-end", type=float, required=True)
    p.add_argument("--epoch", default=_DEFAULT_EPOCH)
    p.add_argument("--no-monthly", action="store_true")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("eval", help="score a corrected series against observations")
    p.add_argument("--candidate", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="summary table and heatwave distributions")
    p.add_argument("--observed", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--baseline", action="append", metavar="NAME=PATH")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        for outputs in _ACTIVE_OUTPUTS:
            outputs.discard_all()
        if isinstance(exc, ConfigError):
            print("config error: %s" % exc, file=sys.stderr)
            return 2
        if isinstance(exc, DataError):
            print("data error: %s" % exc, file=sys.stderr)
            return 3
        print("numeric error: %s" % exc, file=sys.stderr)
        return 4
    finally:
        _ACTIVE_OUTPUTS.clear()


if __name__ == "__main__":
    sys.exit(main())
