import numpy as np
import pytest

from oodlab import autodiff as ad
from oodlab.autodiff import Tensor
from oodlab.data import DatasetSpec, OutlierPool, gen_gaussian_mixture, gen_ring, sample_few_shots
from oodlab.losses import LossWeights, proximity_term
from oodlab.nets import BoundaryGenerator, MlpClassifier
from oodlab.scoring import anomaly_scores
from oodlab.training import (
    AdamState,
    PipelineConfig,
    TrainSchedule,
    TrainingError,
    adam_step,
    run_pipeline,
    sample_latent,
    train_classifier,
    train_generator,
)


class TestAdam:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        state = AdamState.for_params([p], lr=0.1)
        adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert state.t == 1

    def test_first_step_magnitude_is_learning_rate(self):
        p = Tensor([0.0], requires_grad=True)
        state = AdamState.for_params([p], lr=0.01)
        adam_step([p], [np.array([3.7])], state)
        # bias-corrected first step is lr * g / (|g| + eps)
        assert abs(p.data[0]) == pytest.approx(0.01, rel=1e-6)
        assert p.data[0] < 0

    def test_quadratic_bowl_converges(self):
        x = Tensor([3.0], requires_grad=True)
        state = AdamState.for_params([x], lr=0.05)
        for _ in range(500):
            x.zero_grad()
            loss = ad.reduce_sum(ad.mul(x, x))
            ad.backward(loss)
            adam_step([x], [x.grad], state)
        assert abs(x.data[0]) < 1e-3

    def test_non_finite_gradient_aborts(self):
        p = Tensor([1.0], requires_grad=True)
        state = AdamState.for_params([p])
        with pytest.raises(TrainingError, match="non-finite gradient"):
            adam_step([p], [np.array([float("nan")])], state)


class TestSampleLatent:
    def test_same_seed_identical(self):
        a = sample_latent(42, 10, 3)
        b = sample_latent(42, 10, 3)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.seed == 42

    def test_sample_statistics(self):
        batch = sample_latent(7, 100_000, 1)
        assert -0.02 < batch.values.mean() < 0.02
        assert 0.97 < batch.values.var() < 1.03

    def test_needs_positive_size(self):
        with pytest.raises(ValueError):
            sample_latent(0, 0, 2)


def _two_blobs(seed=1, size=200):
    spec = DatasetSpec(
        kind="gaussian-mixture", dim=2, size=size, seed=seed, means=[[-1.0, 0.0], [1.0, 0.0]], cov_scale=0.2
    )
    return gen_gaussian_mixture(spec)


class TestTrainClassifier:
    def test_linearly_separable_reaches_high_accuracy(self):
        normals = _two_blobs()
        model = MlpClassifier([2, 16, 2], seed=3)
        schedule = TrainSchedule(phase_a_epochs=50, batch_n=32, master_seed=9)
        trace = train_classifier(model, normals, [], LossWeights(), schedule, phase="a")
        accuracy = (model.forward_array(normals.inputs).argmax(1) == normals.labels).mean()
        assert accuracy >= 0.95
        assert len(trace) == 50
        assert trace[-1] < trace[0]

    def test_zero_epochs_is_identity(self):
        normals = _two_blobs()
        model = MlpClassifier([2, 8, 2], seed=5)
        before = [p.data.copy() for p in model.parameters()]
        trace = train_classifier(model, normals, [], LossWeights(), TrainSchedule(), phase="a", epochs=0)
        assert trace == []
        for p, b in zip(model.parameters(), before):
            np.testing.assert_array_equal(p.data, b)

    def test_lambda_zero_equals_run_without_negatives(self):
        normals = _two_blobs()
        negatives = OutlierPool(np.random.default_rng(0).normal(size=(20, 2)), source="few-shot-oe")
        schedule = TrainSchedule(phase_a_epochs=5, batch_n=32, master_seed=4)
        m1 = MlpClassifier([2, 8, 2], seed=6)
        train_classifier(m1, normals, [negatives], LossWeights(lam=0.0), schedule, phase="a")
        m2 = MlpClassifier([2, 8, 2], seed=6)
        train_classifier(m2, normals, [], LossWeights(lam=0.0), schedule, phase="a")
        for a, b in zip(m1.parameters(), m2.parameters()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_non_finite_loss_names_batch(self):
        normals = _two_blobs()
        model = MlpClassifier([2, 8, 2], seed=5)
        model.weights[-1].data[0, 0] = float("nan")
        with pytest.raises(TrainingError, match="phase a, epoch 0, batch 0"):
            train_classifier(model, normals, [], LossWeights(), TrainSchedule(phase_a_epochs=1), phase="a")


class TestTrainGenerator:
    def _setup(self):
        normals = _two_blobs(seed=2)
        classifier = MlpClassifier([2, 16, 2], activation="tanh", seed=8)
        schedule = TrainSchedule(phase_a_epochs=30, phase_b_epochs=15, batch_n=32, latent_n=16, proximity_q=32, master_seed=5)
        train_classifier(classifier, normals, [], LossWeights(), schedule, phase="a")
        generator = BoundaryGenerator([2, 16, 2], activation="tanh", seed=9)
        return normals, classifier, generator, schedule

    def test_requires_frozen_classifier(self):
        normals, classifier, generator, schedule = self._setup()
        with pytest.raises(ValueError, match="frozen"):
            train_generator(generator, classifier, normals.inputs, LossWeights(), schedule)

    def test_classifier_is_bit_exact_after_training(self):
        normals, classifier, generator, schedule = self._setup()
        classifier.freeze()
        before = classifier.snapshot()
        trace = train_generator(generator, classifier, normals.inputs, LossWeights(nu=0.3), schedule)
        for p, b in zip(classifier.parameters(), before):
            np.testing.assert_array_equal(p.data, b)
        assert len(trace) == schedule.phase_b_epochs

    def test_training_suppresses_confidence_of_generated_samples(self):
        # start the generator confidently inside one blob: training must pull
        # the samples toward lower-confidence boundary regions
        normals, classifier, generator, schedule = self._setup()
        classifier.freeze()
        generator.weights[-1].data *= 0.05
        generator.biases[-1].data[...] = [1.0, 0.0]  # a blob center
        latents = sample_latent(77, 64, 2)
        score_before = anomaly_scores(classifier, generator.forward_array(latents.values)).mean()
        assert score_before > 0.9
        train_generator(generator, classifier, normals.inputs, LossWeights(mu=1.0, nu=0.3), schedule)
        score_after = anomaly_scores(classifier, generator.forward_array(latents.values)).mean()
        assert score_after < score_before

    def test_training_reduces_proximity_from_far_initialization(self):
        normals, classifier, generator, schedule = self._setup()
        classifier.freeze()
        generator.weights[-1].data *= 0.05
        generator.biases[-1].data[...] = [4.0, 4.0]  # far off the support
        latents = sample_latent(78, 64, 2)
        prox_before = proximity_term(Tensor(generator.forward_array(latents.values)), normals.inputs).item()
        train_generator(generator, classifier, normals.inputs, LossWeights(mu=1.0, nu=0.5), schedule)
        prox_after = proximity_term(Tensor(generator.forward_array(latents.values)), normals.inputs).item()
        assert prox_after < prox_before


def _pipeline_inputs(mode="iii", few_count=8, seed=1):
    normals = gen_gaussian_mixture(
        DatasetSpec(kind="gaussian-mixture", dim=2, size=150, seed=4, means=[[0.0, 0.6], [-0.5, -0.3], [0.5, -0.3]], cov_scale=0.1)
    )
    pool = gen_ring(DatasetSpec(kind="ring", dim=2, size=64, seed=5, r_inner=0.9, r_outer=1.2), source="few-shot-oe")
    few = sample_few_shots(pool, few_count, seed=(seed, 5))
    outlier = OutlierPool(np.random.default_rng(6).uniform(-1.4, 1.4, (64, 2)), source="outlier-dataset")
    schedule = TrainSchedule(
        phase_a_epochs=6, phase_b_epochs=4, phase_c_epochs=6, batch_n=32, batch_m=32, latent_n=16, proximity_q=32, master_seed=seed
    )
    return PipelineConfig(
        normals=normals,
        mode=mode,
        few_shot=few,
        outlier=outlier,
        classifier_sizes=[2, 16, 16, 3],
        classifier_activation="tanh",
        generator_sizes=[2, 16, 16, 2],
        generator_activation="tanh",
        weights=LossWeights(lam=1.0, mu=1.0, nu=0.3),
        schedule=schedule,
        seed=seed,
        boundary_pool_size=32,
    )


class TestPipeline:
    def test_mode_i_skips_generator_phases(self):
        cfg = _pipeline_inputs(mode="i")
        result = run_pipeline(cfg)
        assert result.generator is None
        assert result.boundary_pool is None
        assert set(result.traces) == {"phase_a"}

    def test_mode_iii_zero_shots_trains_on_boundary_alone(self):
        cfg = _pipeline_inputs(mode="iii", few_count=0)
        result = run_pipeline(cfg)
        assert result.boundary_pool is not None
        assert result.boundary_pool.source == "generated-boundary"
        assert len(result.boundary_pool) == 32
        assert set(result.traces) == {"phase_a", "phase_b", "phase_c"}

    def test_boundary_pool_size_default_rule(self):
        cfg = _pipeline_inputs(mode="iii", few_count=8)
        cfg.boundary_pool_size = None
        assert len(run_pipeline(cfg).boundary_pool) == 8  # few-shot count
        cfg0 = _pipeline_inputs(mode="iii", few_count=0)
        cfg0.boundary_pool_size = None
        assert len(run_pipeline(cfg0).boundary_pool) == cfg0.schedule.batch_m

    def test_mode_validation(self):
        cfg = _pipeline_inputs()
        with pytest.raises(ValueError, match="mode"):
            PipelineConfig(normals=cfg.normals, mode="v")
        with pytest.raises(ValueError, match="few-shot"):
            PipelineConfig(normals=cfg.normals, mode="ii", few_shot=None)
        with pytest.raises(ValueError, match="outlier"):
            PipelineConfig(normals=cfg.normals, mode="iv", few_shot=cfg.few_shot, outlier=None)

    def test_deterministic_given_seed(self):
        a = run_pipeline(_pipeline_inputs(seed=11))
        b = run_pipeline(_pipeline_inputs(seed=11))
        for x, y in zip(a.classifier.parameters(), b.classifier.parameters()):
            np.testing.assert_array_equal(x.data, y.data)
        for x, y in zip(a.generator.parameters(), b.generator.parameters()):
            np.testing.assert_array_equal(x.data, y.data)
        assert a.traces == b.traces
        np.testing.assert_array_equal(a.boundary_pool.inputs, b.boundary_pool.inputs)

    def test_phase_c_never_mutates_generator(self):
        # same seed, different phase-C lengths: the generator must be
        # bit-identical, proving phase C leaves it untouched
        cfg_short = _pipeline_inputs(seed=13)
        cfg_short.schedule = TrainSchedule(
            phase_a_epochs=6, phase_b_epochs=4, phase_c_epochs=0, batch_n=32, batch_m=32, latent_n=16, proximity_q=32, master_seed=13
        )
        cfg_long = _pipeline_inputs(seed=13)
        a = run_pipeline(cfg_short)
        b = run_pipeline(cfg_long)
        for x, y in zip(a.generator.parameters(), b.generator.parameters()):
            np.testing.assert_array_equal(x.data, y.data)

    def test_traces_are_finite(self):
        result = run_pipeline(_pipeline_inputs())
        for trace in result.traces.values():
            assert np.all(np.isfinite(trace))

    def test_full_pipeline_improves_over_classifier_only(self):
        # with zero few-shots the phase-A-only model has no negatives at all;
        # the boundary-trained model must separate the surrounding ring better
        ring_test = gen_ring(DatasetSpec(kind="ring", dim=2, size=128, seed=77, r_inner=0.9, r_outer=1.2))
        holdout = gen_gaussian_mixture(
            DatasetSpec(kind="gaussian-mixture", dim=2, size=128, seed=78, means=[[0.0, 0.6], [-0.5, -0.3], [0.5, -0.3]], cov_scale=0.1)
        )
        from oodlab.scoring import ScoreSet, auroc

        cfg_boundary = _pipeline_inputs(mode="iii", few_count=0, seed=21)
        cfg_boundary.schedule = TrainSchedule(
            phase_a_epochs=25, phase_b_epochs=20, phase_c_epochs=30, batch_n=32, batch_m=32, latent_n=32, proximity_q=32, master_seed=21
        )
        cfg_plain = _pipeline_inputs(mode="ii", few_count=0, seed=21)
        cfg_plain.schedule = cfg_boundary.schedule
        boundary = run_pipeline(cfg_boundary)
        plain = run_pipeline(cfg_plain)

        def ring_auroc(model):
            return auroc(
                ScoreSet(anomaly_scores(model, holdout.inputs), anomaly_scores(model, ring_test.inputs))
            )

        assert ring_auroc(boundary.classifier) > ring_auroc(plain.classifier)
