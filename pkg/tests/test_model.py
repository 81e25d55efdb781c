import numpy as np
import pytest

from temporal_bc import autodiff as ad
from temporal_bc.autodiff import Tape, Tensor
from temporal_bc.batching import BatchConfig, TrainingExample, compute_features, make_batch
from temporal_bc.errors import ConfigError, DataError
from temporal_bc.model import (
    LOG_2PI,
    GaussianPrediction,
    ModelConfig,
    checkpoint_from_params,
    embed,
    forward,
    gaussian_nll,
    init_params,
    load_checkpoint,
    nll,
    param_shapes,
    predict,
    save_checkpoint,
    tensors_from_checkpoint,
)
from temporal_bc.timeseries import AlignedPair, NormStats

TINY = ModelConfig(
    n_layers=2, n_heads=2, model_dim=8, feature_dim=8, hidden_dim=8
)


def build_example(gcm_t, gcm_v, obs_t, obs_v, tgt_t, tgt_v, feature_dim=8):
    cfg = BatchConfig(
        window_min=10, window_max=20, margin=2, feature_dim=feature_dim
    )
    arrays = [np.asarray(a, dtype=float) for a in (gcm_t, gcm_v, obs_t, obs_v, tgt_t)]
    tv = None if tgt_v is None else np.asarray(tgt_v, dtype=float)
    features = compute_features(*arrays, tv, cfg)
    return TrainingExample(
        run_id=0,
        window=None,
        ctx_gcm_t=arrays[0],
        ctx_gcm_v=arrays[1],
        ctx_obs_t=arrays[2],
        ctx_obs_v=arrays[3],
        tgt_t=arrays[4],
        tgt_v=tv,
        features=features,
    )


def default_example(tgt_v=(1.5, 2.5, 0.5)):
    return build_example(
        gcm_t=[0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        gcm_v=[0.3, -0.1, 0.4, 0.2, 0.0, 0.1],
        obs_t=[0.0, 1.0, 3.0],
        obs_v=[1.0, 2.0, 1.2],
        tgt_t=[4.0, 5.0, 6.0],
        tgt_v=list(tgt_v),
    )


class TestEmbed:
    def test_query_input_hides_value_slots(self):
        emb = embed(default_example(), TINY)
        d = TINY.feature_dim
        # layout: pos(d), onehot(2), delta, dist, deriv, closest_value, ...
        delta_col, dist_col, deriv_col = d + 2, d + 3, d + 4
        assert np.all(emb.q_in[:, delta_col] == 0.0)
        assert np.all(emb.q_in[:, deriv_col] == 0.0)
        # everything else matches the key/value input
        keep = [c for c in range(emb.q_in.shape[1]) if c not in (delta_col, deriv_col)]
        assert np.array_equal(emb.q_in[:, keep], emb.kv_in[:, keep])
        assert emb.kv_in.shape[1] == TINY.qkv_in_dim
        assert np.any(emb.kv_in[:, delta_col] != 0.0)

    def test_mask_structure(self):
        ex = default_example()
        emb = embed(ex, TINY)
        n_cond, n_tgt = emb.n_conditioning, emb.n_targets
        allowed = ~emb.blocked
        # conditioning sees all conditioning, never any target
        assert np.all(allowed[:n_cond, :n_cond])
        assert not np.any(allowed[:n_cond, n_cond:])
        # target p sees conditioning plus strictly earlier targets
        for p in range(n_tgt):
            row = allowed[n_cond + p]
            assert np.all(row[:n_cond])
            assert np.all(row[n_cond : n_cond + p])
            assert not np.any(row[n_cond + p :])

    def test_anchors_are_teacher_forced_chain(self):
        ex = default_example(tgt_v=(1.5, 2.5, 0.5))
        emb = embed(ex, TINY)
        # first anchor: last observed value; then each previous target value
        assert list(emb.anchors[:, 0]) == [1.2, 1.5, 2.5]

    def test_feature_dim_mismatch_rejected(self):
        ex = default_example()
        with pytest.raises(ConfigError, match="feature_dim"):
            embed(ex, ModelConfig(n_layers=1, n_heads=2, model_dim=8, feature_dim=16))


class TestForward:
    def test_initial_mean_equals_anchor_exactly(self):
        ex = default_example()
        params = init_params(TINY, np.random.default_rng(0))
        emb = embed(ex, TINY)
        mu, sigma = forward(params, emb, TINY)
        assert np.array_equal(mu.data, emb.anchors)
        expected_sigma = np.log(2.0) + TINY.sigma_floor
        assert np.allclose(sigma.data, expected_sigma)

    def test_shapes(self):
        ex = default_example()
        params = init_params(TINY, np.random.default_rng(1))
        mu, sigma = forward(params, embed(ex, TINY), TINY)
        assert mu.shape == (3, 1)
        assert sigma.shape == (3, 1)

    def test_sigma_respects_floor(self):
        ex = default_example()
        params = init_params(TINY, np.random.default_rng(2))
        # force the raw std channel strongly negative
        params["head.w2"] = Tensor(np.zeros_like(params["head.w2"].data))
        b2 = np.array([0.0, -40.0])
        params["head.b2"] = Tensor(b2)
        _, sigma = forward(params, embed(ex, TINY), TINY)
        assert np.all(sigma.data >= TINY.sigma_floor)
        assert np.allclose(sigma.data, TINY.sigma_floor, atol=1e-12)


def trained_like_params(seed=3):
    """Random params with a non-zero head so predictions actually move."""
    params = init_params(TINY, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    params["head.w2"] = Tensor(0.3 * rng.standard_normal(params["head.w2"].shape))
    params["head.b2"] = Tensor(0.1 * rng.standard_normal(params["head.b2"].shape))
    return params


class TestCausality:
    def test_own_value_cannot_reach_own_prediction(self):
        params = trained_like_params()
        base = default_example(tgt_v=(1.5, 2.5, 0.5))
        bumped = default_example(tgt_v=(9.9, 2.5, 0.5))
        mu_a, sd_a = forward(params, embed(base, TINY), TINY)
        mu_b, sd_b = forward(params, embed(bumped, TINY), TINY)
        assert mu_a.data[0, 0] == mu_b.data[0, 0]
        assert sd_a.data[0, 0] == sd_b.data[0, 0]

    def test_earlier_targets_unaffected_by_later_values(self):
        params = trained_like_params()
        base = default_example(tgt_v=(1.5, 2.5, 0.5))
        bumped = default_example(tgt_v=(1.5, 2.5, 123.0))
        mu_a, _ = forward(params, embed(base, TINY), TINY)
        mu_b, _ = forward(params, embed(bumped, TINY), TINY)
        # last value feeds nothing: every prediction identical
        assert np.array_equal(mu_a.data, mu_b.data)

    def test_teacher_forcing_feeds_later_targets(self):
        params = trained_like_params()
        base = default_example(tgt_v=(1.5, 2.5, 0.5))
        bumped = default_example(tgt_v=(9.9, 2.5, 0.5))
        mu_a, _ = forward(params, embed(base, TINY), TINY)
        mu_b, _ = forward(params, embed(bumped, TINY), TINY)
        assert mu_a.data[1, 0] != mu_b.data[1, 0]

    def test_conditioning_reaches_all_targets(self):
        params = trained_like_params()
        a = default_example()
        b = build_example(
            gcm_t=[0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            gcm_v=[5.3, -0.1, 0.4, 0.2, 0.0, 0.1],
            obs_t=[0.0, 1.0, 3.0],
            obs_v=[1.0, 2.0, 1.2],
            tgt_t=[4.0, 5.0, 6.0],
            tgt_v=[1.5, 2.5, 0.5],
        )
        mu_a, _ = forward(params, embed(a, TINY), TINY)
        mu_b, _ = forward(params, embed(b, TINY), TINY)
        assert not np.array_equal(mu_a.data, mu_b.data)


class TestGradients:
    def test_full_model_gradcheck(self):
        ex = default_example()
        emb = embed(ex, TINY)
        params = init_params(TINY, np.random.default_rng(7))
        # nudge the head off its zero init so its gradient path is generic
        params["head.w2"] = Tensor(
            0.05 * np.random.default_rng(8).standard_normal(params["head.w2"].shape)
        )
        names = sorted(params)
        tensors = [params[n] for n in names]

        def loss_fn(*leaves):
            p = dict(zip(names, leaves))
            mu, sigma = forward(p, emb, TINY)
            return gaussian_nll(mu, sigma, emb.target_values)

        report = ad.gradcheck(loss_fn, tensors, tol=1e-3, step=1e-5)
        assert report.passed, "max grad error %g" % report.max_error


class TestLikelihood:
    def test_standard_normal_at_mode(self):
        with Tape():
            mu = Tensor(np.zeros((1, 1)))
            sigma = Tensor(np.ones((1, 1)))
            out = gaussian_nll(mu, sigma, np.zeros((1, 1)))
        assert out.data == pytest.approx(0.9189385332046727, abs=1e-9)

    def test_matches_closed_form(self):
        rng = np.random.default_rng(0)
        mu = rng.normal(size=(5, 1))
        sd = np.abs(rng.normal(size=(5, 1))) + 0.5
        y = rng.normal(size=(5, 1))
        out = gaussian_nll(Tensor(mu), Tensor(sd), y)
        expected = np.mean(
            0.5 * LOG_2PI + np.log(sd) + (y - mu) ** 2 / (2 * sd**2)
        )
        assert out.data == pytest.approx(expected, abs=1e-12)

    def test_nll_helper_agrees(self):
        preds = [GaussianPrediction(0.0, 1.0), GaussianPrediction(1.0, 2.0)]
        got = nll(preds, [0.0, 2.0])
        expected = np.mean(
            [
                0.5 * LOG_2PI,
                0.5 * LOG_2PI + np.log(2.0) + 1.0 / 8.0,
            ]
        )
        assert got == pytest.approx(expected, abs=1e-12)

    def test_nll_validates(self):
        with pytest.raises(DataError):
            nll([GaussianPrediction(0.0, 1.0)], [0.0, 1.0])
        with pytest.raises(DataError):
            nll([], [])


class TestPredict:
    def test_returns_distributions(self):
        ex = default_example()
        params = init_params(TINY, np.random.default_rng(5))
        preds = predict(ex, params, TINY)
        assert len(preds) == 3
        assert all(p.std >= TINY.sigma_floor for p in preds)

    def test_prediction_validation(self):
        with pytest.raises(Exception):
            GaussianPrediction(np.nan, 1.0)
        with pytest.raises(Exception):
            GaussianPrediction(0.0, 0.0)


class TestMakeBatchIntegration:
    def test_forward_on_sampled_batch(self):
        rng = np.random.default_rng(11)
        t = np.arange(64.0)
        pair = AlignedPair(t, rng.normal(size=64), rng.normal(size=64))
        cfg = BatchConfig(
            batch_size=2, window_min=10, window_max=20, margin=2,
            min_keep=3, feature_dim=TINY.feature_dim,
        )
        params = init_params(TINY, rng)
        for ex in make_batch([pair], 4, rng, cfg):
            mu, sigma = forward(params, embed(ex, TINY), TINY)
            assert mu.shape == (ex.n_tgt, 1)
            assert np.all(np.isfinite(mu.data))
            assert np.all(sigma.data >= TINY.sigma_floor)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_params(TINY, np.random.default_rng(13))
        stats = NormStats(mean=14.2578125, std=3.0000000000000004)
        ckpt = checkpoint_from_params(
            TINY, params, stats, meta={"seed": 3, "ablate_gcm": False}
        )
        path = tmp_path / "ckpt.json"
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)
        assert back.config == TINY
        assert back.norm_stats.mean == stats.mean
        assert back.norm_stats.std == stats.std
        assert back.meta == {"seed": 3, "ablate_gcm": False}
        assert sorted(back.params) == sorted(ckpt.params)
        for name in ckpt.params:
            assert np.array_equal(back.params[name], ckpt.params[name]), name

    def test_round_trip_preserves_predictions(self, tmp_path):
        ex = default_example()
        params = trained_like_params(seed=17)
        before = predict(ex, params, TINY)
        ckpt = checkpoint_from_params(TINY, params, NormStats(0.0, 1.0))
        save_checkpoint(ckpt, tmp_path / "c.json")
        back = tensors_from_checkpoint(load_checkpoint(tmp_path / "c.json"))
        after = predict(ex, back, TINY)
        for a, b in zip(before, after):
            assert a.mean == b.mean and a.std == b.std

    def test_missing_param_rejected(self, tmp_path):
        import json

        params = init_params(TINY, np.random.default_rng(0))
        ckpt = checkpoint_from_params(TINY, params, NormStats(0.0, 1.0))
        path = tmp_path / "c.json"
        save_checkpoint(ckpt, path)
        payload = json.loads(path.read_text())
        del payload["params"]["head.w2"]
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="missing"):
            load_checkpoint(path)

    def test_wrong_shape_rejected(self, tmp_path):
        import json

        params = init_params(TINY, np.random.default_rng(0))
        ckpt = checkpoint_from_params(TINY, params, NormStats(0.0, 1.0))
        path = tmp_path / "c.json"
        save_checkpoint(ckpt, path)
        payload = json.loads(path.read_text())
        payload["params"]["head.b2"]["shape"] = [3]
        payload["params"]["head.b2"]["data"] = [0.0, 0.0, 0.0]
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="shape"):
            load_checkpoint(path)

    def test_non_finite_rejected(self, tmp_path):
        import json

        params = init_params(TINY, np.random.default_rng(0))
        ckpt = checkpoint_from_params(TINY, params, NormStats(0.0, 1.0))
        path = tmp_path / "c.json"
        save_checkpoint(ckpt, path)
        payload = json.loads(path.read_text())
        payload["params"]["head.b2"]["data"] = [0.0, None]
        path.write_text(json.dumps(payload).replace("null", "NaN"))
        with pytest.raises(DataError, match="non-finite"):
            load_checkpoint(path)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("not json {")
        with pytest.raises(DataError, match="JSON"):
            load_checkpoint(path)
        with pytest.raises(DataError, match="cannot open"):
            load_checkpoint(tmp_path / "absent.json")


class TestConfigValidation:
    def test_head_divisibility(self):
        with pytest.raises(ConfigError, match="multiple"):
            ModelConfig(n_heads=3, model_dim=64)

    def test_param_shapes_cover_init(self):
        shapes = param_shapes(TINY)
        params = init_params(TINY, np.random.default_rng(0))
        assert set(shapes) == set(params)
        for name, tensor in params.items():
            assert tensor.shape == shapes[name]
