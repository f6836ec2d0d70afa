"""Tests for training, decomposition dispatch, and the ablation runner."""

import numpy as np
import pytest

from softlambert import net as network
from softlambert.inference import alternating_decompose
from softlambert.pipeline import (
    METRIC_COLUMNS,
    AblationConfig,
    AblationReport,
    TrainedModel,
    decompose,
    default_ablation_configs,
    evaluate_truth_against_itself,
    example_from_scene,
    linear_outputs,
    run_ablation,
    train,
)
from softlambert.synthdata import SceneSpec, make_dataset
from softlambert.tensor import to_log


def tiny_dataset(n=4, size=(8, 8), **spec_kw):
    template = SceneSpec(seed=0, size=size, albedo_cells=4,
                         shading_smoothness=2, **spec_kw)
    return make_dataset(n, 0, template)


def tiny_examples(ds):
    return [example_from_scene(ds.scene_by_id(sid)) for sid in ds.train_ids]


class TestAblationConfig:
    def test_defaults_are_valid(self):
        cfg = AblationConfig()
        assert cfg.loss == "distributional"
        assert cfg.inference == "soft_learned"

    def test_field_validation(self):
        with pytest.raises(ValueError):
            AblationConfig(loss="huber")
        with pytest.raises(ValueError):
            AblationConfig(inference="projective")
        with pytest.raises(ValueError):
            AblationConfig(family="cauchy")
        with pytest.raises(ValueError):
            AblationConfig(constraint_residual="mixed")
        with pytest.raises(ValueError):
            AblationConfig(lambda_reg=-1.0)
        with pytest.raises(ValueError):
            AblationConfig(lr=0.0)
        with pytest.raises(ValueError):
            AblationConfig(iterations=-1)
        with pytest.raises(ValueError):
            AblationConfig(batch_size=0)
        with pytest.raises(ValueError):
            AblationConfig(weight_decay=-0.1)

    def test_l2_with_learned_soft_inference_rejected(self):
        # The plain Euclidean loss trains no variance heads, so there are
        # no learned weights for the soft solver to use.
        with pytest.raises(ValueError):
            AblationConfig(loss="l2", inference="soft_learned")

    def test_training_key_ignores_inference_mode(self):
        a = AblationConfig(inference="none")
        b = AblationConfig(inference="hard")
        assert a.training_key() == b.training_key()
        assert a.label() == "distributional+none"
        assert b.label() == "distributional+hard"


class TestTrain:
    def test_zero_iterations_returns_initial_net(self):
        ds = tiny_dataset()
        model = train(tiny_examples(ds), AblationConfig(iterations=0, seed=3))
        fresh = network.init_net(3)
        assert model.loss_history == []
        for got, want in zip(model.net.weights, fresh.weights):
            assert np.array_equal(got, want)

    def test_deterministic(self):
        ds = tiny_dataset()
        cfg = AblationConfig(iterations=5, seed=1, batch_size=2)
        a = train(tiny_examples(ds), cfg)
        b = train(tiny_examples(ds), cfg)
        assert a.loss_history == b.loss_history
        for wa, wb in zip(a.net.weights, b.net.weights):
            assert np.array_equal(wa, wb)

    def test_loss_decreases(self):
        ds = tiny_dataset()
        cfg = AblationConfig(iterations=200, seed=0, batch_size=1, lr=1e-3)
        model = train(tiny_examples(ds), cfg)
        head = float(np.mean(model.loss_history[:20]))
        tail = float(np.mean(model.loss_history[-20:]))
        assert tail < head

    def test_l2_loss_trains_too(self):
        ds = tiny_dataset()
        cfg = AblationConfig(loss="l2", inference="none", iterations=100,
                             seed=0, batch_size=1, lr=1e-3)
        model = train(tiny_examples(ds), cfg)
        assert float(np.mean(model.loss_history[-10:])) < \
            float(np.mean(model.loss_history[:10]))

    def test_resume_is_reproducible(self):
        ds = tiny_dataset()
        examples = tiny_examples(ds)
        cfg = AblationConfig(iterations=4, seed=2, batch_size=2)
        first = train(examples, cfg)
        resumed_a = train(examples, cfg, initial_state=first.net)
        resumed_b = train(examples, cfg, initial_state=first.net)
        assert resumed_a.loss_history == resumed_b.loss_history
        for wa, wb in zip(resumed_a.net.weights, resumed_b.net.weights):
            assert np.array_equal(wa, wb)
        assert resumed_a.net.step_count == 8

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train([], AblationConfig(iterations=1))

    def test_history_length_enforced(self):
        state = network.init_net(0)
        with pytest.raises(ValueError):
            TrainedModel(state, AblationConfig(iterations=5), [1.0, 2.0])


class TestDecompose:
    def setup_method(self):
        self.ds = tiny_dataset()
        self.scene = self.ds.scene_by_id(self.ds.test_ids[0])

    def test_mode_none_returns_heads_verbatim(self):
        model = train(tiny_examples(self.ds),
                      AblationConfig(inference="none", iterations=0))
        result = decompose(model, self.scene.image)
        heads, _ = network.forward(model.net, to_log(self.scene.image))
        assert np.array_equal(result.A_log, heads.albedo_mean)
        assert np.array_equal(result.B_log, heads.shading_mean)
        assert np.array_equal(result.C_log, np.zeros(3))
        assert result.objective_trace == []

    def test_mode_hard_reconstructs_input(self):
        model = train(tiny_examples(self.ds),
                      AblationConfig(inference="hard", iterations=0))
        result = decompose(model, self.scene.image)
        _, _, recon = linear_outputs(result)
        np.testing.assert_allclose(recon, self.scene.image.array, atol=1e-8)

    def test_l2_hard_uses_unit_weights(self):
        model = train(tiny_examples(self.ds),
                      AblationConfig(loss="l2", inference="hard", iterations=0))
        result = decompose(model, self.scene.image)
        log_image = to_log(self.scene.image)
        heads, _ = network.forward(model.net, log_image)
        direct = alternating_decompose(heads, log_image.array, "hard",
                                       unit_weights=True)
        np.testing.assert_allclose(result.A_log, direct.A_log, atol=1e-12)
        np.testing.assert_allclose(result.C_log, direct.C_log, atol=1e-12)

    def test_soft_learned_uses_variance_heads(self):
        model = train(tiny_examples(self.ds),
                      AblationConfig(inference="soft_learned", iterations=0))
        result = decompose(model, self.scene.image)
        log_image = to_log(self.scene.image)
        heads, _ = network.forward(model.net, log_image)
        direct = alternating_decompose(heads, log_image.array, "soft")
        np.testing.assert_allclose(result.A_log, direct.A_log, atol=1e-12)

    def test_linear_outputs_consistency(self):
        model = train(tiny_examples(self.ds),
                      AblationConfig(inference="soft_learned", iterations=0))
        result = decompose(model, self.scene.image)
        albedo, shading, recon = linear_outputs(result)
        np.testing.assert_allclose(albedo, np.exp(result.A_log), rtol=1e-12)
        np.testing.assert_allclose(
            shading, np.exp(result.B_log + result.C_log[None, None, :]),
            rtol=1e-12)
        np.testing.assert_allclose(recon, albedo * shading, rtol=1e-12)


class TestAblation:
    def test_default_grid(self):
        configs = default_ablation_configs(iterations=7, seed=5)
        assert [c.label() for c in configs] == [
            "l2+none", "l2+hard", "distributional+none",
            "distributional+hard", "distributional+soft_learned"]
        assert all(c.iterations == 7 and c.seed == 5 for c in configs)

    def test_run_ablation_shape_and_finiteness(self):
        ds = tiny_dataset()
        train_scenes = [(sid, ds.scene_by_id(sid)) for sid in ds.train_ids]
        test_scenes = [(sid, ds.scene_by_id(sid)) for sid in ds.test_ids]
        report = run_ablation(train_scenes, test_scenes,
                              default_ablation_configs(iterations=2))
        assert report.columns == METRIC_COLUMNS
        assert len(report.rows) == 5
        for _, vals in report.rows:
            assert len(vals) == len(METRIC_COLUMNS)
            assert all(np.isfinite(v) and v >= 0.0 for v in vals)

    def test_avg_column_is_mean_of_outputs(self):
        ds = tiny_dataset()
        train_scenes = [(sid, ds.scene_by_id(sid)) for sid in ds.train_ids]
        test_scenes = [(sid, ds.scene_by_id(sid)) for sid in ds.test_ids]
        report = run_ablation(train_scenes, test_scenes,
                              [AblationConfig(iterations=1)])
        for m in ("mse", "lmse", "dssim"):
            avg = report.cell("distributional+soft_learned", f"{m}_avg")
            a = report.cell("distributional+soft_learned", f"{m}_albedo")
            s = report.cell("distributional+soft_learned", f"{m}_shading")
            assert avg == pytest.approx(0.5 * (a + s), rel=1e-12)

    def test_overlapping_split_rejected(self):
        ds = tiny_dataset()
        scenes = [(sid, ds.scene_by_id(sid)) for sid in ds.train_ids]
        with pytest.raises(ValueError):
            run_ablation(scenes, scenes, [AblationConfig(iterations=1)])

    def test_report_rendering(self):
        report = AblationReport(("mse_avg",), [("rowA", (0.125,))])
        text = report.to_text()
        assert "config" in text and "rowA" in text and "0.125000" in text
        csv_text = report.to_csv()
        assert csv_text.splitlines()[0] == "config,mse_avg"
        assert report.cell("rowA", "mse_avg") == 0.125
        with pytest.raises(KeyError):
            report.cell("missing", "mse_avg")

    def test_truth_self_check_is_zero(self):
        ds = tiny_dataset()
        test_scenes = [(sid, ds.scene_by_id(sid)) for sid in ds.test_ids]
        scores = evaluate_truth_against_itself(test_scenes)
        for column, value in scores.items():
            assert value == pytest.approx(0.0, abs=1e-12), column
