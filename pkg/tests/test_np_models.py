import numpy as np
import pytest

from mfhnp.exceptions import DatasetFormatError, EmptyContextError, PairingError, ShapeError, VariantError
from mfhnp.gaussian import VARIANCE_FLOOR, DiagGaussian
from mfhnp.np_models import (
    AGGREGATIONS,
    VARIANTS,
    ContextTargetBatch,
    MfhnpModel,
    decode,
    elbo,
    elbo_mfhnp,
    elbo_mfnp,
    elbo_sfnp,
    elbo_terms,
    encode_high,
    encode_low,
    load_model,
    low_summary,
    model_parameter_vector,
    predict,
    save_model,
)
from mfhnp.numerics import (
    Tape,
    assign_parameter_vector,
    backward,
    finite_difference_gradient,
    gradient_vector,
    parameter_vector,
)

# Plain numpy forward passes, kept apart from the tape code they check.


def np_softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def np_mlp(mlp, x):
    h = np.atleast_2d(x)
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w.value + b.value
        if i < len(mlp.weights) - 1:
            h = np.tanh(h) if mlp.activation == "tanh" else np.maximum(h, 0.0)
    return h


def np_log_prob(mean, variance, y):
    return -0.5 * np.sum(np.log(2 * np.pi * variance) + (y - mean) ** 2 / variance, axis=-1)


def np_kl(q, p):
    (mq, vq), (mp, vp) = q, p
    return 0.5 * np.sum(np.log(vp / vq) + (vq + (mq - mp) ** 2) / vp - 1.0)


def np_posterior(model, level, features):
    """(mean, variance) of the aggregated latent, BA or MA."""
    bundle, d_z = model.bundle(level), model.config.d_z
    r = np_mlp(bundle.encoder, features)
    if model.config.aggregation == "ma":
        out = np_mlp(bundle.latent_head, r.mean(axis=0))[0]
        return out[:d_z], np_softplus(out[d_z:]) + VARIANCE_FLOOR
    prior = model.ba_priors[level]
    mean0, var0 = prior.mean0.value, np_softplus(prior.raw_variance0.value) + VARIANCE_FLOOR
    out = np_mlp(bundle.observation_head, r)
    obs, obs_var = out[:, :d_z], np_softplus(out[:, d_z:]) + VARIANCE_FLOOR
    variance = 1.0 / (1.0 / var0 + np.sum(1.0 / obs_var, axis=0))
    return mean0 + variance * np.sum((obs - mean0) / obs_var, axis=0), variance


def np_decode(model, level, z, x, y_low=None):
    pieces = [np.repeat(z[None, :], len(x), axis=0), x]
    if y_low is not None:
        pieces.append(y_low)
    out = np_mlp(model.bundle(level).decoder, np.hstack(pieces))
    d_y = model.config.d_y(level)
    return out[:, :d_y], np_softplus(out[:, d_y:]) + VARIANCE_FLOOR


def np_expected_ll(model, level, z, batch):
    mean, variance = np_decode(model, level, z, batch.target_x, batch.target_y_low)
    return np.mean(np_log_prob(mean, variance, batch.target_y))


def make_batch(rng, fidelity, d_x, d_y, n_context, n_target, d_y_low=None):
    y_low = (lambda n: rng.standard_normal((n, d_y_low))) if d_y_low else (lambda n: None)
    return ContextTargetBatch(
        fidelity,
        rng.standard_normal((n_context, d_x)),
        rng.standard_normal((n_context, d_y)),
        rng.standard_normal((n_target, d_x)),
        rng.standard_normal((n_target, d_y)),
        y_low(n_context),
        y_low(n_target),
    )


def batches(rng, config, n_context=4, n_target=3):
    low = make_batch(rng, "low", config.d_x_low, config.d_y_low, n_context, n_target)
    d_y_low = config.d_y_low if config.variant == "mf" else None
    high = make_batch(rng, "high", config.d_x_high, config.d_y_high, n_context, n_target, d_y_low)
    return low, high


class TestNpConfig:
    def test_meanstd_summary_width(self, make_config):
        assert make_config("hnp-meanstd").summary_width == 6
        assert make_config("hnp-mean").summary_width == 3
        assert make_config("sf").summary_width == 0

    def test_ancestral_sampling_couples_draws(self, make_config):
        with pytest.raises(VariantError):
            make_config("hnp-as", k_samples=2, s_samples=3)

    def test_nested_monte_carlo_defaults(self):
        from mfhnp.np_models import DEFAULT_MC_SAMPLES, NpConfig

        config = NpConfig.for_variant("hnp-mc")
        assert config.k_samples == config.s_samples == DEFAULT_MC_SAMPLES

    def test_round_trip(self, make_config):
        from mfhnp.np_models import NpConfig

        config = make_config("mf", "ma")
        assert NpConfig.from_dict(config.to_dict()) == config


class TestModel:
    def test_only_hierarchical_variants_have_low_networks(self, make_config):
        assert MfhnpModel.initialize(make_config("sf")).low is None
        assert MfhnpModel.initialize(make_config("mf")).low is None
        assert MfhnpModel.initialize(make_config("hnp-as")).low is not None

    def test_high_encoder_widths(self, make_config):
        c = make_config("hnp-meanstd")
        assert MfhnpModel.initialize(c).high.encoder.in_dim == c.d_x_high + c.d_y_high + 2 * c.d_z
        c = make_config("mf")
        model = MfhnpModel.initialize(c)
        assert model.high.encoder.in_dim == c.d_x_high + c.d_y_low + c.d_y_high
        assert model.high.decoder.in_dim == c.d_z + c.d_x_high + c.d_y_low

    def test_decoders_never_see_the_other_level(self, make_config):
        c = make_config("hnp-mean")
        model = MfhnpModel.initialize(c)
        assert model.low.decoder.in_dim == c.d_z + c.d_x_low
        assert model.high.decoder.in_dim == c.d_z + c.d_x_high

    def test_priors_per_level_under_ba(self, make_config):
        assert sorted(MfhnpModel.initialize(make_config("hnp-mean")).ba_priors) == ["high", "low"]
        assert list(MfhnpModel.initialize(make_config("sf")).ba_priors) == ["high"]
        assert MfhnpModel.initialize(make_config("sf", "ma")).ba_priors == {}

    def test_initialization_is_seeded(self, make_config):
        a = MfhnpModel.initialize(make_config(), seed=3)
        b = MfhnpModel.initialize(make_config(), seed=3)
        np.testing.assert_array_equal(model_parameter_vector(a), model_parameter_vector(b))

    def test_save_and_load(self, tmp_path, make_config, rng):
        model = MfhnpModel.initialize(make_config("hnp-as", "ma"), seed=5)
        model.metadata = {"note": "kept"}
        path = str(tmp_path / "model.ckpt")
        save_model(path, model)
        restored = load_model(path)
        assert restored.config == model.config
        assert restored.metadata == {"note": "kept"}
        np.testing.assert_array_equal(model_parameter_vector(restored), model_parameter_vector(model))
        with open(path, "rb") as fp:
            first = fp.read()
        save_model(path, restored)
        with open(path, "rb") as fp:
            assert fp.read() == first

    def test_load_rejects_mismatched_arrays(self, tmp_path, make_config):
        from mfhnp.numerics import write_checkpoint

        path = str(tmp_path / "bad.ckpt")
        write_checkpoint(path, {"config": make_config("sf").to_dict()}, [np.zeros(3)])
        with pytest.raises(DatasetFormatError):
            load_model(path)


class TestBatch:
    def test_target_in_context(self, rng):
        x, y = rng.standard_normal((3, 2)), rng.standard_normal((3, 4))
        batch = ContextTargetBatch("high", x, y, x, y, target_in_context=True)
        np.testing.assert_array_equal(batch.points(True)[0], x)

    def test_points_stack_context_and_target(self, rng):
        batch = make_batch(rng, "low", 2, 3, 2, 3)
        x, y, y_low = batch.points(True)
        assert x.shape == (5, 2) and y.shape == (5, 3) and y_low is None

    def test_mismatched_counts(self, rng):
        with pytest.raises(ShapeError):
            ContextTargetBatch("low", np.zeros((2, 2)), np.zeros((3, 3)), np.zeros((1, 2)), np.zeros((1, 3)))


class TestEncoders:
    def test_ba_empty_context_is_prior(self, tiny_model):
        empty = ContextTargetBatch.context_only("low", np.zeros((0, 2)), np.zeros((0, 3)))
        q = encode_low(tiny_model, empty)
        prior = tiny_model.ba_priors["low"].distribution()
        np.testing.assert_array_equal(q.mean.value, prior.mean.value)
        np.testing.assert_array_equal(q.variance.value, prior.variance.value)

    def test_high_ba_empty_context_is_prior(self, tiny_model):
        empty = ContextTargetBatch.context_only("high", np.zeros((0, 2)), np.zeros((0, 4)))
        q = encode_high(tiny_model, np.zeros(3), empty)
        np.testing.assert_array_equal(q.mean.value, tiny_model.ba_priors["high"].mean0.value)

    def test_ma_duplicated_context(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("hnp-mean", "ma"), seed=2)
        x, y = rng.standard_normal((3, 2)), rng.standard_normal((3, 3))
        once = encode_low(model, ContextTargetBatch.context_only("low", x, y))
        twice = encode_low(model, ContextTargetBatch.context_only("low", np.vstack([x, x]), np.vstack([y, y])))
        np.testing.assert_allclose(twice.mean.value, once.mean.value, atol=1e-12)
        np.testing.assert_allclose(twice.variance.value, once.variance.value, atol=1e-12)

    @pytest.mark.parametrize("aggregation", ["ba", "ma"])
    def test_low_matches_manual_pipeline(self, rng, make_config, aggregation):
        model = MfhnpModel.initialize(make_config("hnp-mean", aggregation), seed=4)
        x, y = rng.standard_normal((5, 2)), rng.standard_normal((5, 3))
        q = encode_low(model, ContextTargetBatch.context_only("low", x, y))
        mean, variance = np_posterior(model, "low", np.hstack([x, y]))
        np.testing.assert_allclose(q.mean.value, mean, atol=1e-12)
        np.testing.assert_allclose(q.variance.value, variance, atol=1e-12)

    def test_meanstd_summary_width_is_enforced(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("hnp-meanstd"), seed=1)
        context = ContextTargetBatch.context_only("high", rng.standard_normal((2, 2)), rng.standard_normal((2, 4)))
        encode_high(model, np.zeros(6), context)
        with pytest.raises(VariantError):
            encode_high(model, np.zeros(3), context)

    def test_high_permutation_invariance(self, rng, tiny_model):
        x, y = rng.standard_normal((6, 2)), rng.standard_normal((6, 4))
        order = rng.permutation(6)
        summary = rng.standard_normal(3)
        a = encode_high(tiny_model, summary, ContextTargetBatch.context_only("high", x, y))
        b = encode_high(tiny_model, summary, ContextTargetBatch.context_only("high", x[order], y[order]))
        np.testing.assert_array_equal(a.mean.value, b.mean.value)
        np.testing.assert_array_equal(a.variance.value, b.variance.value)

    def test_mf_requires_pairs(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("mf"))
        context = ContextTargetBatch.context_only("high", rng.standard_normal((2, 2)), rng.standard_normal((2, 4)))
        with pytest.raises(PairingError):
            encode_high(model, None, context)

    def test_sf_rejects_summary(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("sf"))
        context = ContextTargetBatch.context_only("high", rng.standard_normal((2, 2)), rng.standard_normal((2, 4)))
        with pytest.raises(VariantError):
            encode_high(model, np.zeros(3), context)

    def test_ma_empty_context(self, make_config):
        model = MfhnpModel.initialize(make_config("sf", "ma"))
        with pytest.raises(EmptyContextError):
            encode_high(model, None, ContextTargetBatch.context_only("high", np.zeros((0, 2)), np.zeros((0, 4))))


class TestDecode:
    def test_matches_manual_forward(self, rng, tiny_model):
        z, x = rng.standard_normal(3), rng.standard_normal((4, 2))
        dist = decode(tiny_model, "high", z, x)
        mean, variance = np_decode(tiny_model, "high", z, x)
        np.testing.assert_allclose(dist.mean.value, mean, atol=1e-12)
        np.testing.assert_allclose(dist.variance.value, variance, atol=1e-12)

    def test_output_depends_on_x(self, rng, tiny_model):
        z = rng.standard_normal(3)
        a = decode(tiny_model, "low", z, rng.standard_normal(2))
        b = decode(tiny_model, "low", z, rng.standard_normal(2))
        assert a.mean.shape == (3,)
        assert not np.allclose(a.mean.value, b.mean.value)

    def test_variance_floor(self, rng, tiny_model):
        dist = decode(tiny_model, "high", 50.0 * rng.standard_normal(3), 50.0 * rng.standard_normal((10, 2)))
        assert np.all(dist.variance.value >= VARIANCE_FLOOR)

    def test_widths(self, rng, make_config, tiny_model):
        with pytest.raises(ShapeError):
            decode(tiny_model, "high", np.zeros(3), np.zeros((1, 5)))
        mf = MfhnpModel.initialize(make_config("mf"))
        with pytest.raises(PairingError):
            decode(mf, "high", np.zeros(3), np.zeros((1, 2)))
        with pytest.raises(ShapeError):
            decode(mf, "high", np.zeros(3), np.zeros((1, 2)), y_low=np.zeros((1, 2)))
        assert decode(mf, "high", np.zeros(3), np.zeros((1, 2)), y_low=np.zeros((1, 3))).mean.shape == (1, 4)


class TestSingleLevelElbo:
    @pytest.mark.parametrize("aggregation", ["ba", "ma"])
    def test_sf_term_by_term(self, make_config, aggregation):
        model = MfhnpModel.initialize(make_config("sf", aggregation), seed=8)
        _, batch = batches(np.random.default_rng(0), model.config)
        terms = elbo_sfnp(model, batch, np.random.default_rng(42))

        oracle_rng = np.random.default_rng(42)
        x, y, _ = batch.points(True)
        q_all = np_posterior(model, "high", np.hstack([x, y]))
        q_ctx = np_posterior(model, "high", np.hstack([batch.context_x, batch.context_y]))
        z = q_all[0] + np.sqrt(q_all[1]) * oracle_rng.standard_normal(3)
        ll = np_expected_ll(model, "high", z, batch)
        kl = np_kl(q_all, q_ctx)
        assert terms.high_ll.item() == pytest.approx(ll, abs=1e-8)
        assert terms.high_kl.item() == pytest.approx(kl, abs=1e-8)
        assert terms.loss.item() == pytest.approx(-(ll - kl / batch.n_target), abs=1e-8)

    def test_mf_term_by_term(self, make_config):
        model = MfhnpModel.initialize(make_config("mf"), seed=9)
        _, batch = batches(np.random.default_rng(1), model.config)
        terms = elbo_mfnp(model, batch, np.random.default_rng(7))

        oracle_rng = np.random.default_rng(7)
        x, y, y_low = batch.points(True)
        q_all = np_posterior(model, "high", np.hstack([x, y_low, y]))
        q_ctx = np_posterior(model, "high", np.hstack([batch.context_x, batch.context_y_low, batch.context_y]))
        z = q_all[0] + np.sqrt(q_all[1]) * oracle_rng.standard_normal(3)
        ll = np_expected_ll(model, "high", z, batch)
        assert terms.loss.item() == pytest.approx(-(ll - np_kl(q_all, q_ctx) / batch.n_target), abs=1e-8)

    def test_mf_rejects_unpaired_batch(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("mf"))
        batch = make_batch(rng, "high", 2, 4, 3, 2)
        with pytest.raises(PairingError):
            elbo_mfnp(model, batch, rng)

    def test_kl_vanishes_when_targets_are_in_context(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("sf"))
        x, y = rng.standard_normal((4, 2)), rng.standard_normal((4, 4))
        batch = ContextTargetBatch("high", x, y, x, y, target_in_context=True)
        assert elbo_sfnp(model, batch, rng).high_kl.item() == 0.0


class TestHierarchicalElbo:
    @pytest.mark.parametrize("variant", ["hnp-mean", "hnp-meanstd", "hnp-as", "hnp-mc"])
    @pytest.mark.parametrize("aggregation", ["ba", "ma"])
    def test_term_by_term(self, make_config, variant, aggregation):
        model = MfhnpModel.initialize(make_config(variant, aggregation), seed=13)
        low, high = batches(np.random.default_rng(5), model.config)
        terms = elbo_mfhnp(model, low, high, np.random.default_rng(17))

        oracle_rng = np.random.default_rng(17)
        lx, ly, _ = low.points(True)
        q_low_all = np_posterior(model, "low", np.hstack([lx, ly]))
        q_low_ctx = np_posterior(model, "low", np.hstack([low.context_x, low.context_y]))
        z_low = q_low_all[0] + np.sqrt(q_low_all[1]) * oracle_rng.standard_normal(3)
        low_ll = np_expected_ll(model, "low", z_low, low)
        low_kl = np_kl(q_low_all, q_low_ctx)

        if variant == "hnp-mean":
            summary = q_low_all[0]
        elif variant == "hnp-meanstd":
            summary = np.concatenate([q_low_all[0], np.sqrt(q_low_all[1])])
        else:
            summary = z_low
        hx, hy, _ = high.points(True)
        tile = lambda n: np.repeat(summary[None], n, axis=0)
        q_high_all = np_posterior(model, "high", np.hstack([hx, hy, tile(len(hx))]))
        q_high_ctx = np_posterior(model, "high", np.hstack([high.context_x, high.context_y, tile(high.n_context)]))
        z_high = q_high_all[0] + np.sqrt(q_high_all[1]) * oracle_rng.standard_normal(3)
        high_ll = np_expected_ll(model, "high", z_high, high)
        high_kl = np_kl(q_high_all, q_high_ctx)

        assert terms.low_ll.item() == pytest.approx(low_ll, abs=1e-8)
        assert terms.low_kl.item() == pytest.approx(low_kl, abs=1e-8)
        assert terms.high_ll.item() == pytest.approx(high_ll, abs=1e-8)
        assert terms.high_kl.item() == pytest.approx(high_kl, abs=1e-8)
        expected = -((low_ll - low_kl / low.n_target) + (high_ll - high_kl / high.n_target))
        assert terms.loss.item() == pytest.approx(expected, abs=1e-8)

    def test_kl_terms_vanish_with_targets_in_context(self, rng, tiny_model):
        lx, ly = rng.standard_normal((3, 2)), rng.standard_normal((3, 3))
        hx, hy = rng.standard_normal((3, 2)), rng.standard_normal((3, 4))
        low = ContextTargetBatch("low", lx, ly, lx, ly, target_in_context=True)
        high = ContextTargetBatch("high", hx, hy, hx, hy, target_in_context=True)
        terms = elbo_mfhnp(tiny_model, low, high, rng)
        assert terms.low_kl.item() == 0.0 and terms.high_kl.item() == 0.0
        assert terms.loss.item() == pytest.approx(-(terms.low_ll.item() + terms.high_ll.item()))

    def test_meanstd_differs_from_mean_only_through_extra_block(self, rng, make_config):
        mean_model = MfhnpModel.initialize(make_config("hnp-mean"), seed=21)
        std_model = MfhnpModel.initialize(make_config("hnp-meanstd"), seed=21)
        # copy every parameter, zeroing the rows of the encoder that read the std block
        for a, b in zip(mean_model.parameters(), std_model.parameters()):
            if a.shape == b.shape:
                b.value = a.value.copy()
        w_mean, w_std = mean_model.high.encoder.weights[0], std_model.high.encoder.weights[0]
        width = w_mean.shape[0]
        w_std.value = np.vstack([w_mean.value, np.zeros((3, w_std.shape[1]))])
        assert w_std.shape[0] == width + 3
        low, high = batches(rng, mean_model.config)
        a = elbo_mfhnp(mean_model, low, high, np.random.default_rng(1))
        b = elbo_mfhnp(std_model, low, high, np.random.default_rng(1))
        assert a.loss.item() == pytest.approx(b.loss.item(), abs=1e-10)

    def test_draw_order_is_deterministic(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("hnp-mc", k_samples=2, s_samples=3), seed=6)
        low, high = batches(rng, model.config)
        a = elbo_mfhnp(model, low, high, np.random.default_rng(9)).loss.item()
        b = elbo_mfhnp(model, low, high, np.random.default_rng(9)).loss.item()
        assert a == b

    def test_high_weight(self, rng, tiny_model):
        low, high = batches(rng, tiny_model.config)
        terms = elbo_mfhnp(tiny_model, low, high, np.random.default_rng(2), high_weight=0.0)
        assert terms.loss.item() == pytest.approx(-(terms.low_ll.item() - terms.low_kl.item() / low.n_target))

    def test_empty_targets(self, rng, tiny_model):
        low, high = batches(rng, tiny_model.config, n_target=0)
        with pytest.raises(EmptyContextError):
            elbo_mfhnp(tiny_model, low, high, rng)

    def test_dispatch(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("sf"))
        low, high = batches(rng, model.config)
        assert elbo(model, None, high, np.random.default_rng(0)).item() == pytest.approx(
            elbo_sfnp(model, high, np.random.default_rng(0)).loss.item()
        )
        hnp = MfhnpModel.initialize(make_config("hnp-as"))
        with pytest.raises(VariantError):
            elbo_terms(hnp, None, high, rng)

    def test_gradients_reach_every_parameter(self, rng, tiny_model):
        low, high = batches(rng, tiny_model.config)
        params = tiny_model.parameters()
        with Tape() as tape:
            tape.watch_all(params)
            loss = elbo(tiny_model, low, high, np.random.default_rng(0))
        grads = backward(loss)
        assert all(np.any(grads[p] != 0.0) for p in params)


class TestElboGradients:
    @pytest.mark.parametrize("aggregation", AGGREGATIONS)
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_matches_finite_differences(self, make_config, variant, aggregation):
        model = MfhnpModel.initialize(make_config(variant, aggregation, k_samples=2, s_samples=2), seed=11)
        low, high = batches(np.random.default_rng(5), model.config)
        params = model.parameters()
        start = parameter_vector(params)

        # a fresh generator per evaluation keeps the reparameterized noise fixed
        def loss_at(vector):
            assign_parameter_vector(params, vector)
            value = elbo(model, low, high, np.random.default_rng(0)).item()
            assign_parameter_vector(params, start)
            return value

        with Tape() as tape:
            tape.watch_all(params)
            loss = elbo(model, low, high, np.random.default_rng(0))
        analytic = gradient_vector(params, backward(loss))
        numeric = finite_difference_gradient(loss_at, start, step=1e-6)
        error = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        assert error < 1e-4


class TestPredict:
    def test_single_draw_is_the_decode(self, rng, tiny_model):
        low, high = batches(rng, tiny_model.config)
        x_targets = rng.standard_normal((5, 2))
        predictive = predict(tiny_model, low, high, x_targets, 1, np.random.default_rng(4))

        replay = np.random.default_rng(4)
        q_low = encode_low(tiny_model, low)
        q_high = encode_high(tiny_model, low_summary(tiny_model, q_low), high)
        z = q_high.mean.value + np.sqrt(q_high.variance.value) * replay.standard_normal(3)
        single = decode(tiny_model, "high", z, x_targets)
        np.testing.assert_allclose(predictive.mean.value, single.mean.value, atol=1e-12)
        np.testing.assert_allclose(predictive.variance.value, single.variance.value, atol=1e-12)

    def test_sf_ignores_low_context(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("sf"))
        low_a, high = batches(rng, model.config)
        low_b, _ = batches(rng, model.config)
        x = rng.standard_normal((3, 2))
        a = predict(model, low_a, high, x, 4, np.random.default_rng(0))
        b = predict(model, low_b, high, x, 4, np.random.default_rng(0))
        np.testing.assert_array_equal(a.mean.value, b.mean.value)
        np.testing.assert_array_equal(a.variance.value, b.variance.value)

    def test_mf_needs_target_pairs(self, rng, make_config):
        model = MfhnpModel.initialize(make_config("mf"))
        _, high = batches(rng, model.config)
        with pytest.raises(PairingError):
            predict(model, None, high, rng.standard_normal((2, 2)), 2, rng)

    def test_moments_match_ancestral_simulation(self, make_config):
        model = MfhnpModel.initialize(make_config("hnp-as"), seed=31)
        data_rng = np.random.default_rng(8)
        low, high = batches(data_rng, model.config)
        x = data_rng.standard_normal((1, 2))
        predictive = predict(model, low, high, x, 4000, np.random.default_rng(1))

        sim_rng = np.random.default_rng(2)
        q_low = np_posterior(model, "low", np.hstack([low.context_x, low.context_y]))
        tiled = lambda s: np.repeat(s[None], high.n_context, axis=0)
        draws = np.empty((4000, 4))
        for i in range(4000):
            z_low = q_low[0] + np.sqrt(q_low[1]) * sim_rng.standard_normal(3)
            q_high = np_posterior(model, "high", np.hstack([high.context_x, high.context_y, tiled(z_low)]))
            z_high = q_high[0] + np.sqrt(q_high[1]) * sim_rng.standard_normal(3)
            mean, variance = np_decode(model, "high", z_high, x)
            draws[i] = mean[0] + np.sqrt(variance[0]) * sim_rng.standard_normal(4)
        np.testing.assert_allclose(draws.mean(axis=0), predictive.mean.value[0], atol=0.1)
        np.testing.assert_allclose(draws.std(axis=0), np.sqrt(predictive.variance.value[0]), atol=0.1)

    def test_return_components(self, rng, tiny_model):
        low, high = batches(rng, tiny_model.config)
        predictive, components = predict(
            tiny_model, low, high, rng.standard_normal((2, 2)), 3, rng, return_components=True
        )
        assert len(components) == 3
        assert all(isinstance(c, DiagGaussian) for c in components)
        assert predictive.mean.shape == (2, 4)
