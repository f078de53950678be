import math

import numpy as np
import pandas as pd
import pytest

from mfhnp.datasets import FidelityDataset, Split, SplitSpec, make_split, sir_task, synth_task
from mfhnp.exceptions import ConfigError, EmptyContextError, NonFiniteLossError, PairingError, ShapeError
from mfhnp.experiment import (
    EvalReport,
    Predictions,
    TrainConfig,
    build_model,
    evaluate,
    export_tables,
    gaussian_nll,
    np_config_for,
    predict_split,
    predict_table,
    residual_table,
    summarize_reports,
    tables_to_xlsx,
    train,
    train_config_of,
    trajectory_table,
)
from mfhnp.np_models import VARIANTS, model_parameter_vector, save_model

SMALL_NETWORK = dict(d_z=3, d_r=5, encoder_hidden=(8,), decoder_hidden=(8,), activation="tanh", k_samples=1, s_samples=1)


def small_model(low, high, split, config, variant="hnp-mean", aggregation="ba"):
    np_config = np_config_for(variant, low, high, aggregation=aggregation, **SMALL_NETWORK)
    return build_model(np_config, low, high, split, config)


def shifted(dataset, offset=2.0):
    """A copy with outputs moved above -1, usable in log space."""
    return FidelityDataset(dataset.level, dataset.ids, dataset.x, dataset.y + offset, dataset.meta)


class TestTrainConfig:
    def test_preset_with_overrides(self):
        config = TrainConfig.preset("as-sir", max_epochs=5)
        assert config.log_space_outputs is True
        assert config.learning_rate == 1e-3 and config.max_epochs == 5

    @pytest.mark.parametrize(
        "settings",
        [{"learning_rate": 0.0}, {"batch_size": 0}, {"max_epochs": -1}, {"nll_mode": "median"}, {"eval_latent_samples": 0}],
    )
    def test_invalid(self, settings):
        with pytest.raises(ConfigError):
            TrainConfig(**settings)

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"learning_rate": 0.1, "momentum": 0.9})

    def test_stored_with_model(self, synth_pair, synth_split, quick_train_config):
        model = small_model(*synth_pair, synth_split, quick_train_config)
        assert train_config_of(model) == quick_train_config
        assert train_config_of(model, nll_mode="mixture").nll_mode == "mixture"
        assert len(model.metadata["config_digest"]) == 16


class TestBuildModel:
    def test_width_mismatch(self, synth_pair, synth_split, quick_train_config):
        low, high = synth_pair
        np_config = np_config_for("sf", low, high, d_y_high=3, **SMALL_NETWORK)
        with pytest.raises(ShapeError):
            build_model(np_config, low, high, synth_split, quick_train_config)

    def test_standardizers_fit_on_training_ids(self, synth_pair, synth_split, quick_train_config):
        low, high = synth_pair
        model = small_model(low, high, synth_split, quick_train_config)
        stored = model.metadata["standardizers"]["high"]
        train_x = high.x[high.rows(synth_split.high_train)]
        np.testing.assert_allclose(stored["mean"], train_x.mean(axis=0))


class TestTrain:
    def test_zero_epochs_is_a_no_op(self, synth_pair, synth_split, quick_train_config):
        config = TrainConfig(**{**quick_train_config.to_dict(), "max_epochs": 0})
        model = small_model(*synth_pair, synth_split, config)
        before = model_parameter_vector(model)
        trained, history = train(model, *synth_pair, synth_split, config)
        np.testing.assert_array_equal(model_parameter_vector(trained), before)
        assert history.empty
        assert list(history.columns) == ["epoch", "train_loss", "val_nll", "val_mae", "improved"]

    @pytest.mark.parametrize("variant", ["sf", "mf", "hnp-as", "hnp-meanstd"])
    def test_reproducible(self, synth_pair, synth_split, quick_train_config, variant):
        runs = []
        for _ in range(2):
            model = small_model(*synth_pair, synth_split, quick_train_config, variant=variant)
            trained, history = train(model, *synth_pair, synth_split, quick_train_config)
            runs.append((model_parameter_vector(trained), history))
        np.testing.assert_array_equal(runs[0][0], runs[1][0])
        pd.testing.assert_frame_equal(runs[0][1], runs[1][1])

    def test_history(self, synth_pair, synth_split, quick_train_config):
        model = small_model(*synth_pair, synth_split, quick_train_config)
        _, history = train(model, *synth_pair, synth_split, quick_train_config)
        assert 1 <= len(history) <= quick_train_config.max_epochs
        assert history["epoch"].tolist() == list(range(len(history)))
        assert np.all(np.isfinite(history["train_loss"]))
        assert bool(history["improved"].iloc[0])
        assert model.metadata["config_digest"] in history.name

    def test_restores_best_validation_parameters(self, synth_pair, synth_split, quick_train_config):
        model = small_model(*synth_pair, synth_split, quick_train_config)
        trained, history = train(model, *synth_pair, synth_split, quick_train_config)
        report = evaluate(trained, *synth_pair, synth_split, quick_train_config, part="val")
        assert report.nll == pytest.approx(history["val_nll"].min())

    def test_without_validation(self, synth_pair, quick_train_config):
        low, _ = synth_pair
        split = make_split(low.ids, SplitSpec(n_train_low=8, n_train_high=4, n_val=0, n_test=4))
        model = small_model(*synth_pair, split, quick_train_config)
        _, history = train(model, *synth_pair, split, quick_train_config)
        assert len(history) == quick_train_config.max_epochs
        assert not history["improved"].any()
        assert history["val_nll"].isna().all()

    def test_single_scenario_batches(self, synth_pair, quick_train_config):
        split = Split("nested", 0, ["s0000"], ["s0000"], ["s0001"], ["s0002"])
        model = small_model(*synth_pair, split, quick_train_config)
        _, history = train(model, *synth_pair, split, quick_train_config)
        assert np.all(np.isfinite(history["train_loss"]))

    def test_mf_needs_paired_training_ids(self, synth_pair, quick_train_config):
        low, _ = synth_pair
        split = make_split(low.ids, SplitSpec(mode="non_nested", n_train_low=6, n_train_high=4, n_val=2, n_test=2))
        model = small_model(*synth_pair, split, quick_train_config, variant="mf")
        with pytest.raises(PairingError):
            train(model, *synth_pair, split, quick_train_config)

    def test_needs_high_training_ids(self, synth_pair, quick_train_config):
        split = Split("nested", 0, ["s0000", "s0001"], [], ["s0002"], ["s0003"])
        model = small_model(*synth_pair, split, quick_train_config)
        with pytest.raises(EmptyContextError):
            train(model, *synth_pair, split, quick_train_config)

    def test_non_finite_loss_reports_position(self, synth_pair, synth_split, quick_train_config):
        model = small_model(*synth_pair, synth_split, quick_train_config)
        model.high.encoder.weights[0].value[:] = np.nan
        with pytest.raises(NonFiniteLossError) as info:
            train(model, *synth_pair, synth_split, quick_train_config)
        assert (info.value.epoch, info.value.batch) == (0, 0)

    def test_same_seed_writes_identical_checkpoints(self, tmp_path, synth_pair, synth_split, quick_train_config):
        paths = [str(tmp_path / f"run{i}.ckpt") for i in range(2)]
        for path in paths:
            model = small_model(*synth_pair, synth_split, quick_train_config, variant="hnp-mc")
            trained, _ = train(model, *synth_pair, synth_split, quick_train_config)
            save_model(path, trained)
        with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
            assert a.read() == b.read()

    @pytest.mark.slow
    def test_training_loss_falls_across_seeds(self, synth_pair):
        low, _ = synth_pair
        split = make_split(low.ids, SplitSpec(n_train_low=12, n_train_high=6, n_val=0, n_test=4))
        falls = 0
        for seed in range(20):
            config = TrainConfig(learning_rate=5e-3, batch_size=12, max_epochs=200, seed=seed, eval_latent_samples=2)
            _, history = train(small_model(*synth_pair, split, config), *synth_pair, split, config)
            falls += history["train_loss"].iloc[-1] < history["train_loss"].iloc[0]
        assert falls >= 19

    @pytest.mark.slow
    def test_training_improves_validation_nll(self, synth_pair, synth_split):
        config = TrainConfig(learning_rate=1e-2, batch_size=12, patience=50, max_epochs=150, seed=0, eval_latent_samples=8)
        model = small_model(*synth_pair, synth_split, config, variant="sf")
        before = evaluate(model, *synth_pair, synth_split, config, part="val").nll
        trained, _ = train(model, *synth_pair, synth_split, config)
        assert evaluate(trained, *synth_pair, synth_split, config, part="val").nll < before


class TestGaussianNll:
    def test_standard_normal_at_mean(self):
        assert gaussian_nll(np.zeros(1), np.zeros(1), np.ones(1))[0] == pytest.approx(0.918939, abs=1e-6)

    def test_perfect_predictor(self):
        variance = np.array([0.01, 0.5, 2.0])
        np.testing.assert_allclose(
            gaussian_nll(np.ones(3), np.ones(3), variance), 0.5 * (math.log(2 * math.pi) + np.log(variance))
        )

    def test_unit_shift(self):
        assert gaussian_nll(np.ones(1), np.zeros(1), np.ones(1))[0] == pytest.approx(0.918939 + 0.5, abs=1e-6)


class TestEvaluate:
    @pytest.fixture
    def model(self, synth_pair, synth_split, quick_train_config):
        return small_model(*synth_pair, synth_split, quick_train_config)

    def test_repeatable(self, model, synth_pair, synth_split, quick_train_config):
        a = evaluate(model, *synth_pair, synth_split, quick_train_config)
        b = evaluate(model, *synth_pair, synth_split, quick_train_config)
        assert a == b

    def test_headline_is_mean_of_scenarios(self, model, synth_pair, synth_split, quick_train_config):
        report = evaluate(model, *synth_pair, synth_split, quick_train_config)
        assert [row["scenario_id"] for row in report.per_scenario] == synth_split.test
        assert report.mae == pytest.approx(np.mean([row["mae"] for row in report.per_scenario]))
        assert report.nll == pytest.approx(np.mean([row["nll"] for row in report.per_scenario]))
        assert report.config_digest == model.metadata["config_digest"]

    def test_matches_predictions(self, model, synth_pair, synth_split, quick_train_config):
        _, high = synth_pair
        preds = predict_split(model, *synth_pair, synth_split, quick_train_config)
        report = evaluate(model, *synth_pair, synth_split, quick_train_config)
        truth = high.y[high.rows(synth_split.test)]
        expected_mae = np.abs(preds.mean[:, None, :] - truth).mean(axis=(1, 2)).mean()
        expected_nll = gaussian_nll(truth, preds.mean[:, None, :], preds.variance[:, None, :]).mean(axis=(1, 2)).mean()
        assert report.mae == pytest.approx(expected_mae)
        assert report.nll == pytest.approx(expected_nll)

    def test_log_space(self, synth_pair, synth_split, quick_train_config):
        low, high = (shifted(d) for d in synth_pair)
        config = TrainConfig(**{**quick_train_config.to_dict(), "log_space_outputs": True})
        model = small_model(low, high, synth_split, config)
        preds = predict_split(model, low, high, synth_split, config)
        report = evaluate(model, low, high, synth_split, config)
        truth = high.y[high.rows(synth_split.test)]
        mae = np.abs(np.expm1(preds.mean)[:, None, :] - truth).mean()
        nll = gaussian_nll(np.log1p(truth), preds.mean[:, None, :], preds.variance[:, None, :]).mean()
        assert report.mae == pytest.approx(mae)
        assert report.nll == pytest.approx(nll)

    def test_log_space_rejects_outputs_below_minus_one(self, synth_pair, synth_split, quick_train_config):
        low, high = (shifted(d, offset=-5.0) for d in synth_pair)
        config = TrainConfig(**{**quick_train_config.to_dict(), "log_space_outputs": True})
        model = small_model(low, high, synth_split, config)
        with pytest.raises(ConfigError):
            evaluate(model, low, high, synth_split, config)

    def test_mixture_equals_moment_for_one_draw(self, model, synth_pair, synth_split, quick_train_config):
        settings = {**quick_train_config.to_dict(), "eval_latent_samples": 1}
        moment = evaluate(model, *synth_pair, synth_split, TrainConfig(**settings))
        mixture = evaluate(model, *synth_pair, synth_split, TrainConfig(**{**settings, "nll_mode": "mixture"}))
        assert mixture.nll == pytest.approx(moment.nll, rel=1e-10)
        assert mixture.nll_mode == "mixture"

    def test_mf_prediction(self, synth_pair, synth_split, quick_train_config):
        model = small_model(*synth_pair, synth_split, quick_train_config, variant="mf")
        report = evaluate(model, *synth_pair, synth_split, quick_train_config, part="val")
        assert math.isfinite(report.nll) and report.variant == "mf"

    def test_empty_part(self, model, synth_pair, quick_train_config):
        split = Split("nested", 0, ["s0000"], ["s0000"], [], [])
        with pytest.raises(EmptyContextError):
            evaluate(model, *synth_pair, split, quick_train_config)

    def test_report_json(self, model, synth_pair, synth_split, quick_train_config):
        report = evaluate(model, *synth_pair, synth_split, quick_train_config)
        assert EvalReport.from_json(report.to_json()) == report
        frame = report.to_frame()
        assert list(frame.columns) == ["scenario_id", "mae", "nll"]
        assert len(frame) == len(synth_split.test)


class TestTables:
    @pytest.fixture
    def preds(self, synth_pair, synth_split, quick_train_config):
        model = small_model(*synth_pair, synth_split, quick_train_config)
        return predict_split(model, *synth_pair, synth_split, quick_train_config)

    def test_residuals(self, preds, synth_pair):
        _, high = synth_pair
        table = residual_table(preds, high)
        assert table.name == "Residuals"
        assert len(table) == len(preds.ids) * high.d_y
        first = table.iloc[0]
        expected = preds.truth[0, :, 0].mean() - preds.mean[0, 0]
        assert first["residual"] == pytest.approx(expected)

    def test_trajectories_single_group(self, preds, synth_pair):
        _, high = synth_pair
        table = trajectory_table(preds, high)
        assert set(table["age_group"]) == {0}
        assert np.all(table["pred_lower"] <= table["pred_mean"])
        assert np.all(table["pred_mean"] <= table["pred_upper"])
        np.testing.assert_allclose(table["pred_upper"] - table["pred_mean"], 2.0 * table["pred_std"])

    def test_trajectories_skip_unknown_groups(self, preds, synth_pair):
        _, high = synth_pair
        table = trajectory_table(preds, high, age_groups=[0, 40])
        assert set(table["age_group"]) == {0}

    def test_trajectories_by_age_group(self):
        ids = ["a", "b"]
        truth = np.arange(2 * 3 * 12, dtype=float).reshape(2, 3, 12)

        preds = Predictions(ids, truth, np.zeros((2, 12)), np.ones((2, 12)), [], False)
        dataset = FidelityDataset("high", ids, np.zeros((2, 1)), truth, {"task": "sir", "n_groups": "3"})
        table = trajectory_table(preds, dataset, age_groups=[2])
        assert len(table) == 2 * 4
        # day 1, group 2 is column 1 * 3 + 2
        row = table[(table["scenario_id"] == "a") & (table["day"] == 1)].iloc[0]
        assert row["truth_mean"] == pytest.approx(truth[0, :, 5].mean())

    def test_predict_table(self, preds):
        table = predict_table(preds)
        assert len(table) == preds.mean.size
        np.testing.assert_allclose(table["std"] ** 2, preds.variance.reshape(-1))

    def test_export(self, synth_pair, synth_split, quick_train_config):
        model = small_model(*synth_pair, synth_split, quick_train_config)
        tables = export_tables(model, *synth_pair, synth_split, quick_train_config, part="val")
        assert sorted(tables) == ["residuals", "trajectories"]
        assert tables_to_xlsx(tables)[:2] == b"PK"


class TestSummarize:
    def test_mean_and_std_per_label(self):
        reports = {
            "sf": [EvalReport(mae=1.0, nll=2.0, config_digest="a"), EvalReport(mae=3.0, nll=4.0, config_digest="a")],
            "hnp": [EvalReport(mae=0.5, nll=1.0, config_digest="b")],
        }
        table = summarize_reports(reports)
        assert table.name == "Summary"
        sf = table[table["label"] == "sf"].iloc[0]
        assert sf["runs"] == 2
        assert sf["MAE mean"] == 2.0
        assert sf["MAE std"] == pytest.approx(math.sqrt(2.0))
        hnp = table[table["label"] == "hnp"].iloc[0]
        assert hnp["NLL std"] == 0.0 and hnp["config_digest"] == "b"

    def test_skips_empty_labels(self):
        assert summarize_reports({"none": []}).empty


@pytest.mark.slow
class TestVariantComparison:
    def test_hierarchical_mean_beats_single_fidelity_on_synth(self):
        network = dict(d_z=8, d_r=16, encoder_hidden=(32,), decoder_hidden=(32,), activation="tanh")
        wins = 0
        for seed in range(5):
            low, high = synth_task(100, 40, n_samples=8, noise=0.05, seed=seed)
            spec = SplitSpec(n_train_low=64, n_train_high=6, n_val=8, n_test=20, seed=seed)
            split = make_split(low.ids, spec, low_ids=low.ids, high_ids=high.ids)
            config = TrainConfig(
                learning_rate=5e-3, batch_size=16, patience=30, max_epochs=150, seed=seed, eval_latent_samples=8
            )
            maes = {}
            for variant in ("sf", "hnp-mean"):
                np_config = np_config_for(variant, low, high, aggregation="ba", k_samples=1, s_samples=1, **network)
                trained, _ = train(build_model(np_config, low, high, split, config), low, high, split, config)
                maes[variant] = evaluate(trained, low, high, split, config).mae
            wins += maes["hnp-mean"] < maes["sf"]
        assert wins >= 4

    @pytest.mark.parametrize("mode", ["nested", "non_nested"])
    def test_miniature_sir_trains_every_variant(self, mode):
        low, high = sir_task(40, seed=3, n_groups_high=10, n_groups_low=4, horizon_days=20, n_samples=4)
        split = make_split(low.ids, SplitSpec(mode=mode, n_train_low=20, n_train_high=4, n_val=4, n_test=8, seed=1))
        config = TrainConfig.preset("as-sir", batch_size=8, patience=10, max_epochs=20, eval_latent_samples=4)
        for variant in VARIANTS:
            model = small_model(low, high, split, config, variant=variant)
            if variant == "mf" and mode == "non_nested":
                with pytest.raises(PairingError):
                    train(model, low, high, split, config)
                continue
            trained, history = train(model, low, high, split, config)
            assert np.all(np.isfinite(history["train_loss"]))
            report = evaluate(trained, low, high, split, config)
            assert math.isfinite(report.mae) and math.isfinite(report.nll)
