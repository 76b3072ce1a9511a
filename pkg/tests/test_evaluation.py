# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:
# pylint: disable=redefined-outer-name
# Unit tests for evaluation.py

import logging
import math

import numpy as np
import pytest

from phasemap.decoder import LatentState, reconstruct, render_phase
from phasemap.domain import PrototypeLibrary, QGrid, StickPattern, XrdDataset, build_graph, normalize_patterns
from phasemap.evaluation import (
    CUTOFF,
    MetricsReport,
    PhaseActivation,
    Solution,
    activation_accuracy,
    cutoff_activations,
    detect_alloyed_points,
    evaluate,
    fidelity_loss,
    metrics_rows,
    postprocess,
    read_solution,
    reconstruction_report,
    rule_report,
    write_metrics,
    write_solution,
)

GRID = QGrid(10.0, 40.0, 301)
LIBRARY = PrototypeLibrary(
    [
        StickPattern.create("A", [20.0, 30.0], [1.0, 0.5]),
        StickPattern.create("B", [24.0, 35.0], [1.0, 0.6]),
        StickPattern.create("C", [27.0], [1.0]),
        StickPattern.create("D", [16.0, 33.0], [1.0, 0.3]),
    ]
)


def chain(size):
    return build_graph(np.array([[1.0 - t, t, 0.0] for t in np.linspace(0.0, 1.0, size)]))


def latent(p, alpha=None):
    m = len(LIBRARY)
    return LatentState(p, np.ones(m) if alpha is None else alpha, np.full(m, 0.3), np.ones((m, 2)))


def dataset_for(latents):
    patterns = reconstruct(LIBRARY.peak_table(), latents, GRID)
    return XrdDataset(GRID, normalize_patterns(patterns), chain(len(latents)))


def solution_for(active, alpha=None):
    """Build a solution directly from active sets, with equal activations."""
    entries = []
    for point, phases in enumerate(active):
        for phase in phases:
            shift = 1.0 if alpha is None else alpha[point]
            entries.append(PhaseActivation(point, phase, 1.0 / len(phases), shift, 0.3, np.ones(2)))
    size = len(active)
    graph = chain(size)
    zeros = np.zeros(size)
    demixed = np.zeros((len(LIBRARY), GRID.d))
    solution = Solution(LIBRARY.phase_ids, GRID, graph.points, entries, demixed, [], [], zeros, zeros, zeros)
    return solution, graph


@pytest.fixture
def latents():
    return [
        latent([1.0, 0.0, 0.0, 0.0]),
        latent([0.6, 0.4, 0.0, 0.0]),
        latent([0.6, 0.4, 0.0, 0.0], [1.01, 0.99, 1.0, 1.0]),
        latent([0.0, 0.0, 1.0, 0.0]),
    ]


class TestCutoff:
    def test_small_activation_dropped(self):
        assert cutoff_activations([0.995, 0.005, 0.0]).tolist() == [[1.0, 0.0, 0.0]]

    def test_both_retained(self):
        assert cutoff_activations([0.5, 0.5]).tolist() == [[0.5, 0.5]]

    def test_boundary_is_kept(self):
        result = cutoff_activations([0.01, 0.99])
        assert result[0, 0] > 0.0

    def test_rows_sum_to_one(self):
        p = np.random.default_rng(0).dirichlet(np.full(6, 0.3), size=20)
        result = cutoff_activations(p)
        assert np.allclose(result.sum(axis=1), 1.0)
        assert np.all((result == 0.0) | (result >= CUTOFF))

    def test_idempotent(self):
        p = np.random.default_rng(1).dirichlet(np.full(6, 0.3), size=20)
        once = cutoff_activations(p)
        assert np.allclose(cutoff_activations(once), once)

    def test_everything_below_cutoff(self, caplog):
        with caplog.at_level(logging.WARNING, logger="phasemap.evaluation"):
            result = cutoff_activations([0.2, 0.3, 0.25, 0.25], cutoff=0.4)
        assert result.tolist() == [[0.0, 1.0, 0.0, 0.0]]
        assert "below the cutoff" in caplog.text


class TestPostprocess:
    def test_entries(self, latents):
        solution = postprocess([latent([0.995, 0.005, 0.0, 0.0])] + latents[1:], dataset_for(latents), LIBRARY)
        assert solution.size == 4
        assert solution.active_sets == [{"A"}, {"A", "B"}, {"A", "B"}, {"C"}]
        assert solution.activations[0].tolist() == [1.0, 0.0, 0.0, 0.0]
        assert solution.activations[1].tolist() == pytest.approx([0.6, 0.4, 0.0, 0.0])
        assert solution.alpha[2].tolist() == pytest.approx([1.01, 0.99, 1.0, 1.0])
        assert solution.active_phases == ["A", "B", "C"]
        first = solution.entries[0]
        assert (first.point, first.phase, first.activation) == (0, "A", 1.0)
        assert first.amplitudes.tolist() == [1.0, 1.0]

    def test_fields(self, latents):
        solution = postprocess(latents, dataset_for(latents), LIBRARY)
        fields = {(field.phases, field.points) for field in solution.fields}
        assert fields == {(("A",), (0,)), (("A", "B"), (1, 2)), (("C",), (3,))}

    def test_reconstruction_is_exact(self, latents):
        solution = postprocess(latents, dataset_for(latents), LIBRARY)
        assert np.allclose(solution.l1, 0.0, atol=1e-6)
        assert np.allclose(solution.js, 0.0, atol=1e-4)

    def test_demixed(self, latents):
        solution = postprocess(latents, dataset_for(latents), LIBRARY)
        assert np.allclose(solution.demixed[2], render_phase(LIBRARY.prototypes[2], 1.0, 0.3, None, GRID).pattern)
        assert np.all(solution.demixed[3] == 0.0)
        shifted = render_phase(LIBRARY.prototypes[1], 0.99, 0.3, None, GRID).pattern
        plain = render_phase(LIBRARY.prototypes[1], 1.0, 0.3, None, GRID).pattern
        assert np.allclose(solution.demixed[1], (plain + shifted) / 2.0)

    def test_summaries(self, latents):
        solution = postprocess(latents, dataset_for(latents), LIBRARY)
        summary = {phase.phase: phase for phase in solution.phases}
        assert sorted(summary) == ["A", "B", "C"]
        assert summary["A"].points == 3
        assert summary["A"].alpha_min == 1.0
        assert summary["A"].alpha_max == pytest.approx(1.01)
        assert summary["C"].sigma_mean == pytest.approx(0.3)

    def test_rules(self, latents):
        solution = postprocess(latents, dataset_for(latents), LIBRARY)
        assert solution.rules.gibbs_rate == 1.0
        assert solution.rules.connectivity_rate == 1.0
        assert solution.rules.alloyed == [1, 2]

    def test_training_flags_are_kept(self, latents):
        solution = postprocess(latents, dataset_for(latents), LIBRARY, alloyed=[3, 0])
        assert solution.alloyed == [0, 3]
        assert 3 in solution.rules.alloyed

    def test_size_mismatch(self, latents):
        with pytest.raises(ValueError):
            postprocess(latents[:3], dataset_for(latents), LIBRARY)

    def test_latents_round_trip(self, latents):
        solution = postprocess(latents, dataset_for(latents), LIBRARY)
        restored = solution.latents(2)
        assert np.allclose(restored[1].p, [0.6, 0.4, 0.0, 0.0])
        assert np.allclose(restored[2].alpha, [1.01, 0.99, 1.0, 1.0])
        report = reconstruction_report(dataset_for(latents), solution, LIBRARY)
        assert np.allclose(report.l1, solution.l1)


class TestFidelity:
    def test_exact_render(self):
        pattern = render_phase(LIBRARY.prototypes[1], 1.01, 0.3, None, GRID).pattern
        report = fidelity_loss({"X": pattern}, LIBRARY, GRID)
        assert report.per_phase["X"] < 1e-4
        assert report.matches["X"] == "B"
        assert report.total == report.per_phase["X"]

    def test_spurious_peak(self):
        pattern = render_phase(LIBRARY.prototypes[0], 1.0, 0.3, None, GRID).pattern
        extra = pattern + 0.5 * render_phase(StickPattern.create("Z", [37.0], [1.0]), 1.0, 0.3, None, GRID).pattern
        clean = fidelity_loss({"X": pattern}, LIBRARY, GRID).per_phase["X"]
        noisy = fidelity_loss({"X": extra}, LIBRARY, GRID).per_phase["X"]
        assert noisy > clean

    def test_zero_pattern(self):
        report = fidelity_loss({"X": np.zeros(GRID.d)}, LIBRARY, GRID)
        assert math.isinf(report.per_phase["X"])
        assert report.matches["X"] == ""
        assert math.isinf(report.total)

    def test_reference_renders_shared_across_phases(self, monkeypatch):
        rendered = []

        def counting(prototype, alpha, sigma, b, grid):
            if b is None:
                rendered.append(prototype.phase_id)
            return render_phase(prototype, alpha, sigma, b, grid)

        demixed = {phase: render_phase(prototype, 1.0, 0.3, None, GRID).pattern for phase, prototype in zip("WXY", LIBRARY.prototypes)}
        monkeypatch.setattr("phasemap.evaluation.render_phase", counting)
        report = fidelity_loss(demixed, LIBRARY, GRID)
        assert sorted(rendered) == ["A", "B", "C", "D"]
        assert report.matches == {"W": "A", "X": "B", "Y": "C"}


class TestAccuracy:
    def test_identical(self):
        solution, _ = solution_for([("A",), ("A", "B"), ("C",)])
        assert activation_accuracy(solution, [{"A"}, {"A", "B"}, {"C"}]) == 1.0

    def test_one_mismatch_in_ten(self):
        solution, _ = solution_for([("A",)] * 10)
        truth = [{"A"}] * 9 + [{"A", "B"}]
        assert activation_accuracy(solution, truth) == pytest.approx(0.9)

    def test_size_mismatch(self):
        solution, _ = solution_for([("A",)] * 3)
        with pytest.raises(ValueError):
            activation_accuracy(solution, [{"A"}])


class TestRules:
    def test_single_phase(self):
        solution, graph = solution_for([("A",)] * 5)
        report = rule_report(solution, graph)
        assert (report.gibbs_rate, report.gibbs_alloy_rate, report.connectivity_rate) == (1.0, 1.0, 1.0)
        assert report.disconnected == []

    def test_gibbs(self):
        active = [("A",)] * 100
        active[40] = ("A", "B", "C", "D")
        solution, graph = solution_for(active)
        report = rule_report(solution, graph)
        assert report.gibbs_rate == pytest.approx(0.99)
        assert report.gibbs_violations == [40]

    def test_split_field(self):
        solution, graph = solution_for([("A",), ("A",), ("B",), ("A",), ("A",)])
        report = rule_report(solution, graph)
        assert report.connectivity_rate == 0.5
        assert report.disconnected == [["A"]]

    def test_alloy(self):
        active = [("A", "B", "C"), ("A", "B", "C"), ("D",)]
        solution, graph = solution_for(active, alpha=[1.0, 1.002, 1.0])
        assert detect_alloyed_points(solution, graph) == [0, 1]
        report = rule_report(solution, graph)
        assert report.alloyed == [0, 1]
        assert report.alloy_violations == [0, 1]
        assert report.gibbs_alloy_rate == pytest.approx(1.0 / 3.0)

    def test_size_mismatch(self):
        solution, _ = solution_for([("A",)] * 3)
        with pytest.raises(ValueError):
            rule_report(solution, chain(4))


class TestEvaluate:
    def test_with_truth(self, latents):
        dataset = dataset_for(latents)
        solution = postprocess(latents, dataset, LIBRARY)
        report = evaluate(solution, dataset, LIBRARY, [{"A"}, {"A", "B"}, {"A"}, {"C"}])
        assert isinstance(report, MetricsReport)
        assert report.accuracy == 0.75
        assert sorted(report.fidelity.per_phase) == ["A", "B", "C"]
        assert report.fidelity.per_phase["C"] < 1e-4
        assert report.reconstruction.summary()["l1_max"] < 1e-6

    def test_without_truth(self, latents, tmp_path):
        dataset = dataset_for(latents)
        report = evaluate(postprocess(latents, dataset, LIBRARY), dataset, LIBRARY)
        assert report.accuracy is None
        rows = dict(metrics_rows(report))
        assert rows["activation_accuracy"] == "N/A"
        assert "fidelity:A" in rows
        assert rows["gibbs_rate"] == "1.0"
        path = tmp_path / "metrics.csv"
        write_metrics(report, str(path))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "metric,value"
        assert lines[1].startswith("l1_mean,")
        assert lines[-1] == "activation_accuracy,N/A"


class TestSolutionFile:
    def test_round_trip(self, latents, tmp_path):
        solution = postprocess(latents, dataset_for(latents), LIBRARY, alloyed=[2])
        path = str(tmp_path / "solution.json")
        write_solution(solution, path)
        restored = read_solution(path)
        assert restored.phase_ids == solution.phase_ids
        assert restored.grid == solution.grid
        assert restored.active_sets == solution.active_sets
        assert np.array_equal(restored.activations, solution.activations)
        assert np.array_equal(restored.demixed, solution.demixed)
        assert restored.fields == solution.fields
        assert restored.phases == solution.phases
        assert restored.rules == solution.rules
        assert restored.alloyed == [2]

    def test_identical_bytes(self, latents, tmp_path):
        solution = postprocess(latents, dataset_for(latents), LIBRARY)
        first, second = tmp_path / "first.json", tmp_path / "second.json"
        write_solution(solution, str(first))
        write_solution(read_solution(str(first)), str(second))
        assert first.read_bytes() == second.read_bytes()
