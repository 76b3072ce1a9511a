# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:
# pylint: disable=redefined-outer-name,protected-access
# Unit tests for trainer.py

import json
import math

import attr
import numpy as np
import pytest

from phasemap.decoder import LatentState
from phasemap.domain import PrototypeLibrary, QGrid, StickPattern
from phasemap.encoder import EncoderConfig, EncoderError
from phasemap.ndtape import Tensor
from phasemap.relax import ConstraintKind
from phasemap.synth import SynthSpec, generate
from phasemap.trainer import (
    LR_CHOICES,
    DivergenceError,
    StepRecord,
    ThresholdState,
    TrainConfig,
    Trainer,
    adjust_thresholds,
    adjust_weights,
    default_encoder,
    infer,
    mean_reconstruction,
    search_learning_rate,
    train,
    violation_report,
    write_training_log,
)

SMALL = {"hidden": (16, 16, 8), "amplitude_hidden": (8,)}


@pytest.fixture(scope="module")
def benchmark():
    spec = SynthSpec(phases=2, peaks=(2, 3), grid=QGrid(15.0, 40.0, 120), points_side=4, alloyed_fields=0, noise=0.0)
    return generate(spec, 0)


@pytest.fixture
def cfg():
    return TrainConfig(lr=0.005, steps=6, paths_per_step=2, path_len=4, pool_size=50, log_interval=2)


def encoder(benchmark):
    dataset, library, _ = benchmark
    return default_encoder(dataset, library, **SMALL)


def latent(p, alpha=None):
    size = len(p)
    return LatentState(p, np.ones(size) if alpha is None else alpha, np.full(size, 0.3), np.ones((size, 2)))


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.lr == 0.001
        assert cfg.steps == 2000
        assert cfg.rho == 1.5
        assert cfg.gamma == 0.9
        assert LR_CHOICES == (0.0001, 0.0005, 0.001)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"lr": 0.0},
            {"steps": -1},
            {"paths_per_step": 0},
            {"path_len": 1},
            {"lambda_ksparsity": -1.0},
            {"rho": 1.0},
            {"weight_cap": 0.5},
            {"gamma": 1.0},
            {"eps_active": 0.0},
            {"workers": 0},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ValueError):
            TrainConfig(**overrides)

    def test_initial_weights(self):
        cfg = TrainConfig(lambda_ksparsity=2.0, lambda_connectivity=0.5, lambda_shift=3.0)
        expected = {ConstraintKind.KSPARSITY: 2.0, ConstraintKind.CONNECTIVITY: 0.5, ConstraintKind.ALLOY_GATE: 3.0}
        assert cfg.initial_weights() == expected
        isolated = attr.evolve(cfg, isolated=True).initial_weights()
        assert isolated == {ConstraintKind.KSPARSITY: 2.0, ConstraintKind.CONNECTIVITY: 0.0, ConstraintKind.ALLOY_GATE: 0.0}


class TestThresholdState:
    def test_initial(self):
        state = ThresholdState.initial(4)
        assert np.allclose(state.c, math.log(3.0))
        assert state.k.tolist() == [3, 3, 3, 3]
        assert not state.alloyed_points.any()
        assert state.alloyed_edges == frozenset()

    def test_invalid(self):
        with pytest.raises(ValueError):
            ThresholdState(np.full(2, 1.0), np.full(3, 3))
        with pytest.raises(ValueError):
            ThresholdState(np.full(2, 2.0), np.full(2, 3))
        with pytest.raises(ValueError):
            ThresholdState(np.zeros(2), np.full(2, 3))
        with pytest.raises(ValueError):
            ThresholdState(np.full(2, 0.5), np.full(2, 4))

    def test_copy_is_independent(self):
        state = ThresholdState.initial(2)
        copy = state.copy()
        copy.c[0] = 0.1
        assert state.c[0] == pytest.approx(math.log(3.0))


class TestAdjustThresholds:
    def test_satisfied_is_unchanged(self):
        cfg = TrainConfig()
        state = adjust_thresholds(ThresholdState.initial(1), {0: latent([0.49, 0.49, 0.016, 0.004])}, cfg)
        assert state.c[0] == math.log(3.0)
        assert state.k[0] == 3

    def test_shrinks_when_entropy_is_within_but_too_many_active(self):
        cfg = TrainConfig()
        state = adjust_thresholds(ThresholdState.initial(1), {0: latent([0.7, 0.1, 0.1, 0.1])}, cfg)
        assert state.c[0] == pytest.approx(0.9 * math.log(3.0))
        again = adjust_thresholds(state, {0: latent([0.7, 0.1, 0.1, 0.1])}, cfg)
        assert again.c[0] == pytest.approx(0.81 * math.log(3.0))

    def test_entropy_above_threshold_is_left_to_the_penalty(self):
        cfg = TrainConfig()
        state = adjust_thresholds(ThresholdState.initial(1), {0: latent([0.4, 0.3, 0.2, 0.1])}, cfg)
        assert state.c[0] == math.log(3.0)

    def test_alloying_caps_threshold(self):
        cfg = TrainConfig()
        latents = {0: latent([0.6, 0.4, 0.0, 0.0], [1.000, 1.0, 1.0, 1.0]), 1: latent([0.6, 0.4, 0.0, 0.0], [1.002, 1.0, 1.0, 1.0])}
        state = adjust_thresholds(ThresholdState.initial(3), latents, cfg, [(1, 0)])
        assert state.alloyed_edges == frozenset({(0, 1)})
        assert state.k.tolist() == [2, 2, 3]
        assert state.c[0] == pytest.approx(math.log(2.0))
        assert state.c[1] == pytest.approx(math.log(2.0))
        assert state.c[2] == pytest.approx(math.log(3.0))
        assert state.alloyed_points.tolist() == [True, True, False]

    def test_alloying_is_sticky(self):
        cfg = TrainConfig()
        state = ThresholdState(np.full(2, math.log(2.0)), np.full(2, 2), {(0, 1)})
        latents = {0: latent([0.6, 0.4, 0.0, 0.0]), 1: latent([0.6, 0.4, 0.0, 0.0])}
        result = adjust_thresholds(state, latents, cfg, [(0, 1)])
        assert result.alloyed_edges == frozenset({(0, 1)})
        assert result.k.tolist() == [2, 2]

    def test_different_active_sets_are_not_alloying(self):
        cfg = TrainConfig()
        latents = {0: latent([0.6, 0.4, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]), 1: latent([0.6, 0.0, 0.4, 0.0], [1.01, 1.0, 1.0, 1.0])}
        state = adjust_thresholds(ThresholdState.initial(2), latents, cfg, [(0, 1)])
        assert state.alloyed_edges == frozenset()

    def test_too_many_shared_phases_are_not_alloying(self):
        cfg = TrainConfig()
        p = [0.3, 0.3, 0.2, 0.2]
        latents = {0: latent(p, [1.0] * 4), 1: latent(p, [1.01] * 4)}
        state = adjust_thresholds(ThresholdState.initial(2), latents, cfg, [(0, 1)])
        assert state.alloyed_edges == frozenset()

    def test_unobserved_edge_is_skipped(self):
        cfg = TrainConfig()
        state = adjust_thresholds(ThresholdState.initial(3), {0: latent([1.0, 0.0])}, cfg, [(0, 2)])
        assert state.alloyed_edges == frozenset()

    def test_never_increases(self):
        cfg = TrainConfig()
        state = ThresholdState(np.array([0.2, 0.5]), np.full(2, 3))
        result = adjust_thresholds(state, {0: latent([0.5, 0.5]), 1: latent([1.0, 0.0])}, cfg)
        assert result.c.tolist() == [0.2, 0.5]


class TestViolations:
    def test_report(self):
        cfg = TrainConfig()
        state = ThresholdState(np.array([1.0, 0.6, 1.0]), np.array([3, 2, 3]))
        latents = {
            0: latent([0.25, 0.25, 0.25, 0.25]),
            1: latent([0.4, 0.3, 0.3, 0.0]),
            2: latent([1.0, 0.0, 0.0, 0.0]),
        }
        report = violation_report([(0, 1, 2)], latents, state, cfg)
        assert report == {ConstraintKind.KSPARSITY: 2, ConstraintKind.CONNECTIVITY: 0, ConstraintKind.ALLOY_GATE: 1}

    def test_reentering_path(self):
        cfg = TrainConfig()
        latents = {0: latent([1.0, 0.0]), 1: latent([0.0, 1.0]), 2: latent([1.0, 0.0])}
        report = violation_report([(0, 1, 2), (0, 0, 1)], latents, ThresholdState.initial(3), cfg)
        assert report[ConstraintKind.CONNECTIVITY] == 1


class TestAdjustWeights:
    def setup_method(self):
        self.cfg = TrainConfig(rho=2.0, weight_cap=8.0)
        self.initial = {ConstraintKind.KSPARSITY: 1.0, ConstraintKind.CONNECTIVITY: 0.01}

    def test_no_violations(self):
        report = {ConstraintKind.KSPARSITY: 0, ConstraintKind.CONNECTIVITY: 0}
        assert adjust_weights(self.initial, report, self.cfg, self.initial) == self.initial

    def test_grows_until_cap(self):
        report = {ConstraintKind.KSPARSITY: 3, ConstraintKind.CONNECTIVITY: 0}
        weights = dict(self.initial)
        history = []
        for _ in range(5):
            weights = adjust_weights(weights, report, self.cfg, self.initial)
            history.append(weights[ConstraintKind.KSPARSITY])
        assert history == [2.0, 4.0, 8.0, 8.0, 8.0]
        assert weights[ConstraintKind.CONNECTIVITY] == 0.01

    def test_unknown_family_is_ignored(self):
        report = {ConstraintKind.ALLOY_GATE: 1}
        assert adjust_weights(self.initial, report, self.cfg, self.initial) == self.initial


class TestTrainer:
    def test_encoder_must_fit_data(self, benchmark, cfg):
        dataset, library, _ = benchmark
        with pytest.raises(ValueError):
            Trainer(dataset, library, cfg, EncoderConfig(d=5, m=2, **SMALL))

    def test_prototypes_must_fit_grid(self, benchmark, cfg):
        dataset, library, _ = benchmark
        outside = PrototypeLibrary([library.prototypes[0], StickPattern.create("far", [90.0], [1.0])])
        with pytest.raises(ValueError):
            Trainer(dataset, outside, cfg, default_encoder(dataset, outside, **SMALL))

    def test_terms(self, benchmark, cfg):
        dataset, library, _ = benchmark
        trainer = Trainer(dataset, library, cfg, encoder(benchmark))
        terms = trainer.terms([(0, 1, 2), (5,), (3, 4)])
        kinds = [term.kind for term in terms]
        assert kinds == [
            ConstraintKind.KSPARSITY,
            ConstraintKind.CONNECTIVITY,
            ConstraintKind.ALLOY_GATE,
            ConstraintKind.CONNECTIVITY,
            ConstraintKind.ALLOY_GATE,
        ]
        assert terms[0].scope == (0, 1, 2, 3, 4, 5)
        assert terms[3].scope == (4, 5)

    def test_isolated_mode(self, benchmark, cfg):
        dataset, library, _ = benchmark
        trainer = Trainer(dataset, library, attr.evolve(cfg, isolated=True), encoder(benchmark))
        paths = trainer.batch()
        assert all(len(path) == 1 for path in paths)
        assert [term.kind for term in trainer.terms([(0,), (1,)])] == [ConstraintKind.KSPARSITY]
        assert trainer.weights[ConstraintKind.CONNECTIVITY] == 0.0

    def test_step(self, benchmark, cfg):
        dataset, library, _ = benchmark
        trainer = Trainer(dataset, library, cfg, encoder(benchmark))
        before = trainer.store
        record = trainer.step()
        assert isinstance(record, StepRecord)
        assert record.step == 0
        assert trainer.completed == 1
        assert trainer.store.step == 1
        assert before.step == 0
        assert math.isfinite(record.loss)
        assert record.loss >= record.reconstruction - 1e-12
        assert set(record.penalties) == {"k-sparsity", "connectivity", "alloy-gate"}
        assert record.threshold_mean <= math.log(3.0) + 1e-12

    def test_run_is_deterministic(self, benchmark, cfg):
        dataset, library, _ = benchmark
        first = train(dataset, library, cfg, encoder(benchmark))
        second = train(dataset, library, cfg, encoder(benchmark))
        assert len(first.records) == cfg.steps
        assert first.records == second.records
        for name in first.store.params:
            assert np.array_equal(first.store.params[name], second.store.params[name])

    def test_seed_changes_run(self, benchmark, cfg):
        dataset, library, _ = benchmark
        first = train(dataset, library, cfg, encoder(benchmark))
        second = train(dataset, library, attr.evolve(cfg, seed=1), encoder(benchmark))
        assert first.records != second.records

    def test_zero_weights_is_pure_reconstruction(self, benchmark, cfg):
        dataset, library, _ = benchmark
        zero = attr.evolve(cfg, lambda_ksparsity=0.0, lambda_connectivity=0.0, lambda_shift=0.0, paths_per_step=1)
        result = train(dataset, library, zero, encoder(benchmark))
        for record in result.records:
            assert record.loss == record.reconstruction
            assert set(record.weights.values()) == {0.0}
            assert set(record.violations) == {"k-sparsity", "connectivity", "alloy-gate"}

    def test_zero_steps(self, benchmark, cfg):
        dataset, library, _ = benchmark
        result = train(dataset, library, attr.evolve(cfg, steps=0), encoder(benchmark))
        assert result.records == []
        assert result.store.step == 0
        assert result.alloyed_edges == []

    def test_training_reduces_reconstruction(self, benchmark, cfg):
        dataset, library, _ = benchmark
        longer = attr.evolve(cfg, steps=150, lr=0.01)
        before = mean_reconstruction(dataset, library, train(dataset, library, attr.evolve(longer, steps=0), encoder(benchmark)))
        after = mean_reconstruction(dataset, library, train(dataset, library, longer, encoder(benchmark)))
        assert after < before

    def test_encoder_failure_diverges(self, benchmark, cfg, monkeypatch):
        dataset, library, _ = benchmark
        trainer = Trainer(dataset, library, cfg, encoder(benchmark))
        trainer.step()
        store = trainer.store

        def broken(*_args, **_kwargs):
            raise EncoderError("Encoder head prob produced non-finite activations")

        monkeypatch.setattr("phasemap.trainer.forward", broken)
        with pytest.raises(DivergenceError, match="prob") as e:
            trainer.step()
        assert e.value.step == 1
        assert e.value.store is store
        assert trainer.completed == 1

    def test_non_finite_loss_diverges(self, benchmark, cfg, monkeypatch):
        dataset, library, _ = benchmark
        trainer = Trainer(dataset, library, cfg, encoder(benchmark))

        def broken(_self, _paths, _latents):
            return Tensor(float("nan")), {"reconstruction": float("nan"), "js": 0.0, "l2": 0.0}

        monkeypatch.setattr(Trainer, "loss", broken)
        with pytest.raises(DivergenceError, match="reconstruction") as e:
            trainer.step()
        assert e.value.step == 0
        assert e.value.store.step == 0


class TestInference:
    def test_infer(self, benchmark, cfg):
        dataset, library, _ = benchmark
        result = train(dataset, library, cfg, encoder(benchmark))
        latents = infer(dataset, result)
        assert len(latents) == dataset.size
        assert latents[0].p.shape == (len(library),)
        assert latents[0].b.shape == (len(library), library.max_peaks)

    def test_infer_with_workers(self, benchmark, cfg):
        dataset, library, _ = benchmark
        serial = train(dataset, library, cfg, encoder(benchmark))
        parallel = attr.evolve(serial, config=attr.evolve(cfg, workers=3))
        for first, second in zip(infer(dataset, serial), infer(dataset, parallel)):
            assert np.allclose(first.p, second.p)

    def test_search_learning_rate(self, benchmark, cfg):
        dataset, library, _ = benchmark
        rates = (0.001, 0.01)
        best = search_learning_rate(dataset, library, cfg, encoder(benchmark), rates)
        results = {rate: train(dataset, library, attr.evolve(cfg, lr=rate), encoder(benchmark)) for rate in rates}
        scores = {rate: mean_reconstruction(dataset, library, result) for rate, result in results.items()}
        assert best.config.lr in rates
        assert scores[best.config.lr] == min(scores.values())
        threaded = search_learning_rate(dataset, library, attr.evolve(cfg, workers=2), encoder(benchmark), rates)
        assert threaded.config.lr == best.config.lr

    def test_search_needs_rates(self, benchmark, cfg):
        dataset, library, _ = benchmark
        with pytest.raises(ValueError):
            search_learning_rate(dataset, library, cfg, encoder(benchmark), ())


class TestTrainingLog:
    def test_write(self, benchmark, cfg, tmp_path):
        dataset, library, _ = benchmark
        result = train(dataset, library, cfg, encoder(benchmark))
        path = str(tmp_path / "training.jsonl")
        write_training_log(result.records, path)
        with open(path, encoding="utf-8") as f:
            lines = [json.loads(line) for line in f]
        assert len(lines) == cfg.steps
        assert lines[0]["step"] == 0
        assert lines[-1]["step"] == cfg.steps - 1
        assert set(lines[0]["penalties"]) == {"k-sparsity", "connectivity", "alloy-gate"}
        assert lines[2]["loss"] == result.records[2].loss
