"""Acceptance suite: one test per headline guarantee, at its stated tolerance.

Every test prints a single summary line with the measured numbers (visible
with ``pytest -v -s``); the test name doubles as the criterion label. The two
tests that train models from scratch (04 and 05) take a few minutes of
single-core time each; everything else runs in seconds.
"""

import datetime as dt
import json
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from temporal_bc import autodiff as ad
from temporal_bc import baselines, gp, metrics, sampling
from temporal_bc.autodiff import Tensor
from temporal_bc.batching import BatchConfig, TrainingExample, compute_features, make_batch
from temporal_bc.cli import main as cli_main
from temporal_bc.model import ModelConfig, embed, forward, gaussian_nll, init_params
from temporal_bc.rng import substream
from temporal_bc.sampling import SamplerConfig
from temporal_bc.timeseries import (
    GCM,
    OBS,
    PairedDataset,
    TimeSeries,
    align,
    write_gcm_csv,
    write_obs_csv,
)
from temporal_bc.training import TrainConfig, train

DATA = os.path.join(os.path.dirname(__file__), "data")
EPOCH = dt.date(2001, 1, 1)


def _report(label: str, detail: str) -> None:
    print("\n[ACCEPT] %s: PASS — %s" % (label, detail))


# ---------------------------------------------------------------------------
# 1. gradient correctness


def _tiny_example():
    cfg = BatchConfig(window_min=10, window_max=20, margin=2, feature_dim=8)
    gcm_t = np.arange(6.0)
    gcm_v = np.array([0.3, -0.1, 0.4, 0.2, 0.0, 0.1])
    obs_t = np.array([0.0, 1.0, 3.0])
    obs_v = np.array([1.0, 2.0, 1.2])
    tgt_t = np.array([4.0, 5.0, 6.0])
    tgt_v = np.array([1.5, 2.5, 0.5])
    features = compute_features(gcm_t, gcm_v, obs_t, obs_v, tgt_t, tgt_v, cfg)
    return TrainingExample(
        run_id=0, window=None, ctx_gcm_t=gcm_t, ctx_gcm_v=gcm_v,
        ctx_obs_t=obs_t, ctx_obs_v=obs_v, tgt_t=tgt_t, tgt_v=tgt_v,
        features=features,
    )


def test_01_every_op_and_the_full_nll_pass_gradient_checks():
    t0 = time.time()
    rng = np.random.default_rng(0)

    def T(*shape):
        return Tensor(rng.standard_normal(shape))

    def Tpos(*shape):
        return Tensor(np.abs(rng.standard_normal(shape)) + 0.5)

    mask = rng.random((4, 6)) < 0.3
    mask[:, -1] = False
    w_fixed = Tensor(rng.standard_normal((4, 6)))
    fancy = np.array([0, 2, 2, 1])

    op_checks = [
        ("add", lambda x, y: (x + y).sum(), [T(3, 4), T(3, 4)]),
        ("sub", lambda x, y: (x - y).mean(), [T(3, 4), T(3, 4)]),
        ("mul", lambda x, y: (x * y).sum(), [T(3, 4), T(4)]),
        ("div", lambda x, y: (x / y).sum(), [T(3, 4), Tpos(4)]),
        ("matmul", lambda x, y: (x @ y).sum(), [T(3, 4), T(4, 2)]),
        ("matmul_batched", lambda x, y: (x @ y).sum(), [T(2, 3, 4), T(2, 4, 2)]),
        ("concat", lambda x, y, z: ad.concat([x, y, z], axis=-1).sum(),
         [T(2, 3), T(2, 1), T(2, 2)]),
        ("index_slice", lambda x: x[1:3, 0:2].sum(), [T(4, 5)]),
        ("index_fancy", lambda x: x[fancy].sum(), [T(3, 5)]),
        ("transpose_last_two",
         lambda x: (x @ ad.transpose_last_two(x)).sum(), [T(3, 4)]),
        ("reduce_sum", lambda x: x.sum(axis=0).sum(), [T(3, 4)]),
        ("reduce_mean", lambda x: x.mean(axis=-1).sum(), [T(3, 4)]),
        ("exp", lambda x: ad.exp(x).sum(), [T(3, 3)]),
        ("log", lambda x: ad.log(x).sum(), [Tpos(3, 3)]),
        ("tanh", lambda x: ad.tanh(x).sum(), [T(3, 3)]),
        ("softplus", lambda x: ad.softplus(x).sum(), [T(3, 3)]),
        ("masked_softmax",
         lambda x: (ad.masked_softmax(x, mask) * w_fixed).sum(), [T(4, 6)]),
    ]
    failures = []
    worst = 0.0
    for name, fn, tensors in op_checks:
        rep = ad.gradcheck(fn, tensors, tol=1e-4)
        worst = max(worst, rep.max_error)
        if not rep.passed:
            failures.append("%s (max rel err %g)" % (name, rep.max_error))
    assert not failures, "op gradient checks failed: %s" % ", ".join(failures)

    # full model: NLL of a small example w.r.t. every parameter
    config = ModelConfig(n_layers=2, n_heads=2, model_dim=8, feature_dim=8, hidden_dim=8)
    example = _tiny_example()
    emb = embed(example, config)
    params = init_params(config, np.random.default_rng(7))
    # nudge the head off its zero init so its gradient path is generic
    params["head.w2"] = Tensor(
        0.05 * np.random.default_rng(8).standard_normal(params["head.w2"].shape)
    )
    names = sorted(params)
    tensors = [params[n] for n in names]

    def loss_fn(*leaves):
        p = dict(zip(names, leaves))
        mu, sigma = forward(p, emb, config)
        return gaussian_nll(mu, sigma, emb.target_values)

    model_rep = ad.gradcheck(loss_fn, tensors, tol=1e-3)
    elapsed = time.time() - t0
    assert model_rep.passed, "full-model max rel err %g" % model_rep.max_error
    assert elapsed < 60.0, "gradient checks took %.1fs (budget 60s)" % elapsed
    _report(
        "gradient correctness",
        "%d ops ≤1e-4 (worst %.2e), full NLL ≤1e-3 (worst %.2e), %.1fs"
        % (len(op_checks), worst, model_rep.max_error, elapsed),
    )


# ---------------------------------------------------------------------------
# 2. baseline correction oracles


def test_02_baseline_corrections_match_oracles(tmp_path):
    rng = np.random.default_rng(42)

    # (a) mean shift equals the SSE-minimizing constant per month, to 1e-10
    t = np.arange(120.0)
    o = TimeSeries(t, 10.0 + rng.normal(size=120), OBS)
    g = TimeSeries(t, 7.0 + rng.normal(size=120), GCM)
    corrected = baselines.correct("mean", o, g, g, EPOCH, monthly=True)
    month = np.array([(EPOCH + dt.timedelta(days=int(d))).month for d in t])
    worst_mean = 0.0
    for m in np.unique(month):
        sel = month == m
        closed_form = np.mean(o.values[sel]) - np.mean(g.values[sel])
        applied = corrected.values[sel] - g.values[sel]
        worst_mean = max(worst_mean, float(np.max(np.abs(applied - closed_form))))
    assert worst_mean <= 1e-10

    # (b) mean+variance correction reproduces observed monthly moments to 1e-10
    corrected = baselines.correct("meanvar", o, g, g, EPOCH, monthly=True)
    worst_moment = 0.0
    for m in np.unique(month):
        sel = month == m
        worst_moment = max(
            worst_moment,
            abs(np.mean(corrected.values[sel]) - np.mean(o.values[sel])),
            abs(np.std(corrected.values[sel]) - np.std(o.values[sel])),
        )
    assert worst_moment <= 1e-10

    # (c) EQM and EC-BC reproduce the golden hand-trace files byte-exactly
    for method in ("eqm", "ecbc"):
        out = str(tmp_path / method)
        code = cli_main([
            "baseline", "--method", method,
            "--obs", os.path.join(DATA, "golden_obs.csv"),
            "--gcm", os.path.join(DATA, "golden_gcm.csv"),
            "--out-dir", out,
            "--ref-start", "0", "--ref-end", "58",
            "--proj-start", "365", "--proj-end", "423",
            "--epoch", "2001-01-01",
        ])
        assert code == 0
        got = open(os.path.join(out, "corrected.csv"), "rb").read()
        golden = open(
            os.path.join(DATA, "golden_%s_corrected.csv" % method), "rb"
        ).read()
        assert got == golden, "%s output differs from golden file" % method

    # (d) EC-BC output ranks equal the observation ranks exactly
    t31 = np.arange(31.0)
    o31 = TimeSeries(t31, rng.permutation(31).astype(float), OBS)
    g31 = TimeSeries(t31, np.sort(rng.normal(size=31)) * 3.0, GCM)
    out = baselines.correct("ecbc", o31, g31, g31, EPOCH, monthly=False)
    ranks = lambda v: np.argsort(np.argsort(v, kind="stable"), kind="stable")
    assert np.array_equal(ranks(out.values), ranks(o31.values))

    _report(
        "baseline oracles",
        "closed form %.1e, moments %.1e, eqm+ecbc golden bytes equal, ranks equal"
        % (worst_mean, worst_moment),
    )


# ---------------------------------------------------------------------------
# 3. climate metric oracles


def _brute_force_heatwaves(values, threshold):
    count, run = 0, 0
    for v in values:
        if v > threshold:
            run += 1
        else:
            if run >= 3:
                count += 1
            run = 0
    if run >= 3:
        count += 1
    return count


def _simulate_ar1(phi, n, seed, burn=500):
    rng = np.random.default_rng(seed)
    x = 0.0
    out = np.empty(n)
    for i in range(n + burn):
        x = phi * x + rng.standard_normal()
        if i >= burn:
            out[i - burn] = x
    return out


def test_03_climate_metrics_match_oracles():
    # heatwave counter vs brute-force scan on 10^4 random series
    rng = np.random.default_rng(3)
    n_series = 10_000
    disagreements = 0
    for _ in range(n_series):
        n = int(rng.integers(1, 80))
        # integer-valued series force plenty of exact threshold ties
        values = rng.integers(-3, 4, size=n).astype(float)
        threshold = float(rng.integers(-2, 3))
        t = np.arange(float(n))
        got = metrics.heatwave_count(TimeSeries(t, values), threshold).count
        if got != _brute_force_heatwaves(values, threshold):
            disagreements += 1
    assert disagreements == 0, "%d/%d series disagree" % (disagreements, n_series)

    # PACF on AR(1) recovers phi at lag 1 and ~0 beyond (index 0 is lag 1)
    x = _simulate_ar1(0.6, 20_000, seed=9)
    p = metrics.pacf(x, max_lag=14)
    assert abs(p[0] - 0.6) <= 0.05, "lag-1 PACF %.4f" % p[0]
    tail = float(np.max(np.abs(p[1:])))
    assert tail <= 0.05, "max |PACF| at lags 2..14 is %.4f" % tail

    # score() at mse == 1 reproduces the analytic constant-variance loglik
    observed = np.tile([1.0, -1.0], 50)
    rep = metrics.score(np.zeros(100), observed)
    assert rep.mse == 1.0
    assert rep.loglik == pytest.approx(-1.418939, abs=1e-6)

    _report(
        "metric oracles",
        "heatwaves %d/%d agree, pacf lag1 %.3f tail %.3f, loglik(mse=1) %.7f"
        % (n_series, n_series, p[0], tail, rep.loglik),
    )


# ---------------------------------------------------------------------------
# 4. synthetic end-to-end: learn a 2 °C bias and beat the mean-shift baseline


def test_04_synthetic_pipeline_beats_mean_shift_baseline():
    t0 = time.time()
    n_train, n_gen = 2000, 500
    times = np.arange(n_train + n_gen + 120, dtype=np.float64)
    pair = gp.make_shifted_pair(
        gp.rbf(lengthscale=2.0), times,
        mean_bias=2.0, time_shift=0.0, noise_std=0.3, seed=101,
    )
    obs_train = pair.obs.window(0, n_train - 1)
    dataset = PairedDataset(obs_train, [pair.gcm])

    model_config = ModelConfig(
        n_layers=2, n_heads=2, model_dim=32, feature_dim=16, hidden_dim=32
    )
    batch_config = BatchConfig(
        window_min=30, window_max=60, retain_p=0.8, feature_dim=16
    )
    train_config = TrainConfig(
        steps=800, batch_size=8, learning_rate=3e-3, seed=3,
        eval_interval=100, plateau_patience=49,
    )
    result = train(dataset, model_config, train_config, batch_config)
    steps_run = result.metrics[-1].step
    assert steps_run <= 5000

    # the sampler's per-step windows mirror the training geometry (a GCM span
    # wider than any training window dilutes the learned attention pattern)
    sampler = SamplerConfig(
        horizon=n_gen, n_trajectories=16, seed=11,
        obs_window=30, gcm_past=30, gcm_future=30,
    )
    trajectories = sampling.sample_trajectories(result.checkpoint, dataset, 0, sampler)
    ensemble = np.stack([traj.values for traj in trajectories])
    ens_mean = ensemble.mean(axis=0)
    truth = pair.obs.window(n_train, n_train + n_gen - 1).values
    bias = float(np.mean(ens_mean - truth))

    # held-out per-point NLL: the model under its own one-step predictive
    # distribution, the baseline under a Normal with constant variance = MSE
    predictive = sampling.predictive_nll(
        result.checkpoint,
        PairedDataset(pair.obs, [pair.gcm]),
        0,
        start_t=float(n_train),
        n_days=n_gen,
        config=replace(sampler, n_trajectories=1),
    )
    model_nll = predictive.mean_nll

    corrected = baselines.correct(
        "mean",
        obs_train,
        pair.gcm.window(0, n_train - 1),
        pair.gcm.window(n_train, n_train + n_gen - 1),
        EPOCH,
        monthly=True,
    )
    baseline_nll = -metrics.score(corrected.values, truth).loglik

    elapsed = time.time() - t0
    assert elapsed < 1800.0, "end-to-end run took %.0fs (budget 30 min)" % elapsed
    assert model_nll < baseline_nll, (
        "held-out NLL %.4f does not beat mean-shift baseline %.4f"
        % (model_nll, baseline_nll)
    )
    assert abs(bias) <= 0.5, "ensemble-mean bias %.3f °C over %d days" % (bias, n_gen)
    _report(
        "synthetic end-to-end",
        "held-out NLL %.4f < baseline %.4f, |bias| %.3f ≤ 0.5 °C, %d steps, %.0fs"
        % (model_nll, baseline_nll, abs(bias), steps_run, elapsed),
    )


# ---------------------------------------------------------------------------
# 5. asynchrony: a 1-day time shift still lets the model exploit the GCM


def test_05_shifted_pair_model_beats_its_gcm_ablated_twin():
    n_train, n_eval = 800, 100
    times = np.arange(1000, dtype=np.float64)
    pair = gp.make_shifted_pair(
        gp.rbf(lengthscale=1.5), times,
        mean_bias=1.0, time_shift=1.0, noise_std=0.1, seed=202,
    )
    train_ds = PairedDataset(pair.obs.window(0, n_train - 1), [pair.gcm])
    eval_ds = PairedDataset(pair.obs, [pair.gcm])

    model_config = ModelConfig(
        n_layers=2, n_heads=2, model_dim=32, feature_dim=16, hidden_dim=32
    )
    batch_config = BatchConfig(window_min=60, window_max=120, feature_dim=16)
    train_config = TrainConfig(
        steps=1000, batch_size=8, learning_rate=3e-3, seed=5,
        eval_interval=100, plateau_patience=10,
    )

    scores = {}
    for label, ablate in (("full", False), ("ablated", True)):
        result = train(
            train_ds, model_config, train_config,
            replace(batch_config, ablate_gcm=ablate),
        )
        scores[label] = sampling.predictive_nll(
            result.checkpoint, eval_ds, 0,
            start_t=float(n_train) + 10, n_days=n_eval,
        ).mean_nll

    assert scores["full"] < scores["ablated"], (
        "held-out NLL %.4f (with GCM) vs %.4f (ablated)"
        % (scores["full"], scores["ablated"])
    )
    _report(
        "asynchrony",
        "held-out NLL %.4f with GCM < %.4f ablated (1-day shift)"
        % (scores["full"], scores["ablated"]),
    )


# ---------------------------------------------------------------------------
# 6. determinism: identical seeds give byte-identical artefacts


PIPELINE_CONFIG = {
    "model": {
        "n_layers": 1, "n_heads": 2, "model_dim": 8,
        "feature_dim": 8, "hidden_dim": 8,
    },
    "batch": {
        "window_min": 10, "window_max": 20, "margin": 2, "min_keep": 3,
        "feature_dim": 8,
    },
    "train": {"steps": 40, "batch_size": 2, "val_examples": 2},
}

COMPARED_ARTEFACTS = (
    ("train", "metrics.csv"),
    ("train", "checkpoint.json"),
    ("samples", "samples.csv"),
    ("baseline", "corrected.csv"),
    ("report", "report.json"),
    ("report", "summary.csv"),
    ("report", "heatwave_counts.csv"),
)


def _run_pipeline(root, obs_train, obs_eval, gcm_path, config_path):
    dirs = {name: os.path.join(root, name) for name, _ in COMPARED_ARTEFACTS}
    assert cli_main([
        "train", "--obs", obs_train, "--gcm", gcm_path,
        "--out-dir", dirs["train"], "--config", config_path, "--seed", "3",
    ]) == 0
    ckpt = os.path.join(dirs["train"], "checkpoint.json")
    assert cli_main([
        "sample", "--checkpoint", ckpt, "--obs", obs_train, "--gcm", gcm_path,
        "--out-dir", dirs["samples"], "--horizon", "12",
        "--n-trajectories", "3", "--seed", "11",
    ]) == 0
    assert cli_main([
        "baseline", "--method", "eqm", "--obs", obs_train, "--gcm", gcm_path,
        "--out-dir", dirs["baseline"],
        "--ref-start", "0", "--ref-end", "449",
        "--proj-start", "450", "--proj-end", "461",
        "--epoch", "2001-01-01",
    ]) == 0
    assert cli_main([
        "report", "--observed", obs_eval,
        "--samples", os.path.join(dirs["samples"], "samples.csv"),
        "--baseline", "eqm=%s" % os.path.join(dirs["baseline"], "corrected.csv"),
        "--threshold", "18.0", "--out-dir", dirs["report"],
    ]) == 0
    return {
        (d, f): open(os.path.join(root, d, f), "rb").read()
        for d, f in COMPARED_ARTEFACTS
    }


def test_06_identical_seeds_give_byte_identical_artefacts(tmp_path):
    rng = np.random.default_rng(0)
    t = np.arange(480.0)
    base = 15.0 + 3.0 * np.sin(2 * np.pi * t / 40.0)
    obs = TimeSeries(t, base + 2.0 + 0.2 * rng.normal(size=480), OBS)
    run = TimeSeries(t, base + 0.2 * rng.normal(size=480), GCM)
    obs_train = str(tmp_path / "obs_train.csv")
    obs_eval = str(tmp_path / "obs_eval.csv")
    gcm_path = str(tmp_path / "gcm.csv")
    write_obs_csv(obs.window(0, 449), obs_train)
    write_obs_csv(obs.window(450, 461), obs_eval)
    write_gcm_csv([run], gcm_path)
    config_path = str(tmp_path / "config.json")
    with open(config_path, "w") as handle:
        json.dump(PIPELINE_CONFIG, handle)

    first = _run_pipeline(str(tmp_path / "a"), obs_train, obs_eval, gcm_path, config_path)
    second = _run_pipeline(str(tmp_path / "b"), obs_train, obs_eval, gcm_path, config_path)

    differing = [
        "%s/%s" % key for key in first if first[key] != second[key]
    ]
    assert not differing, "artefacts differ between executions: %s" % differing
    _report(
        "determinism",
        "%d artefacts byte-identical across two executions"
        % len(COMPARED_ARTEFACTS),
    )


# ---------------------------------------------------------------------------
# 7. batch pipeline invariants over 10^4 drawn examples


def test_07_training_examples_satisfy_window_invariants():
    rng_data = np.random.default_rng(1)
    n = 500
    t = np.arange(float(n))
    dataset = PairedDataset(
        TimeSeries(t, rng_data.normal(size=n), OBS),
        [TimeSeries(t, rng_data.normal(size=n), GCM)],
    )
    pair = align(dataset, 0)
    cfg = BatchConfig()  # default window geometry and pruning
    rng = substream(11, "batchgen")

    violations = []

    def check(cond, label, example_no):
        if not cond:
            violations.append("example %d: %s" % (example_no, label))

    total = 10_000
    drawn = 0
    for _ in range(100):
        for ex in make_batch([pair], 100, rng, cfg):
            i = drawn
            drawn += 1
            w = ex.window
            check(1 <= w.k <= n - cfg.window_max, "window start out of range", i)
            check(cfg.window_min <= w.h - w.k <= cfg.window_max, "window length", i)
            check(w.k + cfg.margin <= w.j <= w.h - cfg.margin, "prediction index", i)
            # retained points are ordered subsequences of their window slices
            for name, times_kept, lo, hi in (
                ("obs", ex.ctx_obs_t, w.k - 1, w.j),
                ("tgt", ex.tgt_t, w.j, w.h),
                ("gcm", ex.ctx_gcm_t, w.k - 1, w.h),
            ):
                check(np.all(np.diff(times_kept) > 0), name + " not increasing", i)
                check(np.all(np.isin(times_kept, t[lo:hi])), name + " outside window", i)
                check(
                    len(times_kept) >= min(cfg.min_keep, hi - lo),
                    name + " pruned below floor", i,
                )
            check(ex.n_tgt >= 1 and ex.n_obs >= 1, "empty block", i)
            check(ex.ctx_obs_t[-1] < ex.tgt_t[0], "targets precede context end", i)
            # teacher-forced anchor chain: last context point, then previous target
            anchor_t = ex.features.closest_t[-ex.n_tgt:]
            anchor_v = ex.features.closest_value[-ex.n_tgt:]
            check(anchor_t[0] == ex.ctx_obs_t[-1], "first anchor time", i)
            check(anchor_v[0] == ex.ctx_obs_v[-1], "first anchor value", i)
            check(np.array_equal(anchor_t[1:], ex.tgt_t[:-1]), "anchor chain times", i)
            check(np.array_equal(anchor_v[1:], ex.tgt_v[:-1]), "anchor chain values", i)

    assert drawn == total
    assert not violations, "%d violations, first: %s" % (
        len(violations), violations[0]
    )
    _report(
        "pipeline invariants",
        "%d examples drawn, 0 violations" % total,
    )
