# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Post-processing of trained latents into a solution, and the metrics used to judge one.

A solution keeps only activations at or above the cutoff, groups points into phase
fields, and carries one demixed pattern per phase: the activation-weighted mean of
that phase's renders over the points where it is active.

Attributes:
    CUTOFF(float): Activations below this value are dropped
    SHORTLIST(int): Number of candidate prototypes fitted per demixed pattern
    FIT_ITERATIONS(int): Maximum number of function evaluations per least squares fit
    SHIFT_SCAN(int): Number of shift ratios scanned before fitting
"""

from __future__ import annotations  # see: https://stackoverflow.com/a/33533514/2907667

import csv
import io
import json
import logging
import math
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Set, Tuple

import attr
import numpy as np
from scipy.optimize import least_squares

from .decoder import LatentState, jensen_shannon, l1_distance, l2_distance, mix_batch, render_phase, render_table
from .domain import CompositionGraph, PrototypeLibrary, QGrid, StickPattern, XrdDataset
from .encoder import EncoderConfig
from .ndtape import Tensor
from .relax import ALLOY_THRESHOLD, detect_alloying
from .util import CattrConverter, atomic_write, to_json

if TYPE_CHECKING:
    from .synth import GroundTruth

log = logging.getLogger(__name__)

CUTOFF = 0.01
SHORTLIST = 5
FIT_ITERATIONS = 200
SHIFT_SCAN = 21


@attr.s(frozen=True, eq=False)
class PhaseActivation:
    """
    One active phase at one point.

    Attributes:
        point(int): Composition point index
        phase(str): Phase id
        activation(float): Post-cutoff activation
        alpha(float): Shift ratio
        sigma(float): Peak width, in nm^-1
        amplitudes(np.ndarray): Amplitude factor per prototype peak
    """

    point = attr.ib(type=int)
    phase = attr.ib(type=str)
    activation = attr.ib(type=float)
    alpha = attr.ib(type=float)
    sigma = attr.ib(type=float)
    amplitudes = attr.ib(type=np.ndarray)


@attr.s(frozen=True)
class PhaseField:
    """A connected composition region that shares one set of active phases."""

    phases = attr.ib(type=Tuple[str, ...], converter=tuple)
    points = attr.ib(type=Tuple[int, ...], converter=tuple)


@attr.s(frozen=True)
class PhaseSummary:
    """Range of the modifications of one phase over the points where it is active."""

    phase = attr.ib(type=str)
    points = attr.ib(type=int)
    alpha_min = attr.ib(type=float)
    alpha_max = attr.ib(type=float)
    sigma_mean = attr.ib(type=float)


@attr.s(frozen=True)
class RuleReport:
    """
    Satisfaction of the thermodynamic rules.

    Attributes:
        gibbs_rate(float): Fraction of points with at most 3 active phases
        gibbs_alloy_rate(float): Fraction of points that are not alloyed or have at most 2 active phases
        connectivity_rate(float): Fraction of unique active sets whose points form one connected region
        gibbs_violations(List[int]): Points with more than 3 active phases
        alloy_violations(List[int]): Alloyed points with more than 2 active phases
        disconnected(List[List[str]]): Active sets split into more than one region
        alloyed(List[int]): Points detected or flagged as alloyed
    """

    gibbs_rate = attr.ib(type=float)
    gibbs_alloy_rate = attr.ib(type=float)
    connectivity_rate = attr.ib(type=float)
    gibbs_violations = attr.ib(type=List[int])
    alloy_violations = attr.ib(type=List[int])
    disconnected = attr.ib(type=List[List[str]])
    alloyed = attr.ib(type=List[int])


@attr.s(frozen=True, eq=False)
class Solution:
    """
    A solved phase map.

    Attributes:
        phase_ids(List[str]): Phase ids, in library order
        grid(QGrid): The Q grid
        compositions(np.ndarray): Composition points, shape (N, 3)
        entries(List[PhaseActivation]): Active phases, ordered by point and then library order
        demixed(np.ndarray): Demixed pattern per phase, shape (M, D), zero for phases never active
        fields(List[PhaseField]): Phase fields
        phases(List[PhaseSummary]): Modification ranges of every phase that is active somewhere
        l1(np.ndarray): L1 reconstruction loss per point
        l2(np.ndarray): L2 reconstruction loss per point
        js(np.ndarray): JS reconstruction distance per point
        alloyed(List[int]): Points flagged as alloyed during training
        rules(Optional[RuleReport]): Rule satisfaction of this solution
    """

    phase_ids = attr.ib(type=List[str])
    grid = attr.ib(type=QGrid)
    compositions = attr.ib(type=np.ndarray)
    entries = attr.ib(type=List[PhaseActivation])
    demixed = attr.ib(type=np.ndarray)
    fields = attr.ib(type=List[PhaseField])
    phases = attr.ib(type=List[PhaseSummary])
    l1 = attr.ib(type=np.ndarray)
    l2 = attr.ib(type=np.ndarray)
    js = attr.ib(type=np.ndarray)
    alloyed = attr.ib(factory=list, type=List[int])
    rules = attr.ib(default=None, type=Optional[RuleReport])

    @property
    def size(self) -> int:
        return int(self.compositions.shape[0])

    @property
    def activations(self) -> np.ndarray:
        """Activation matrix, shape (N, M)."""
        result = np.zeros((self.size, len(self.phase_ids)))
        index = {phase: column for column, phase in enumerate(self.phase_ids)}
        for entry in self.entries:
            result[entry.point, index[entry.phase]] = entry.activation
        return result

    @property
    def alpha(self) -> np.ndarray:
        """Shift matrix, shape (N, M), 1.0 where a phase is inactive."""
        result = np.ones((self.size, len(self.phase_ids)))
        index = {phase: column for column, phase in enumerate(self.phase_ids)}
        for entry in self.entries:
            result[entry.point, index[entry.phase]] = entry.alpha
        return result

    @property
    def active_sets(self) -> List[Set[str]]:
        """Active phase ids per point."""
        result: List[Set[str]] = [set() for _ in range(self.size)]
        for entry in self.entries:
            result[entry.point].add(entry.phase)
        return result

    @property
    def active_phases(self) -> List[str]:
        """Phase ids active at some point, in library order."""
        active = {entry.phase for entry in self.entries}
        return [phase for phase in self.phase_ids if phase in active]

    def latents(self, peaks: int) -> List[LatentState]:
        """Latent states equivalent to this solution; inactive phases get neutral modifications."""
        index = {phase: column for column, phase in enumerate(self.phase_ids)}
        m = len(self.phase_ids)
        p, alpha, sigma = np.zeros((self.size, m)), np.ones((self.size, m)), np.ones((self.size, m))
        b = np.ones((self.size, m, peaks))
        for entry in self.entries:
            column = index[entry.phase]
            p[entry.point, column] = entry.activation
            alpha[entry.point, column] = entry.alpha
            sigma[entry.point, column] = entry.sigma
            b[entry.point, column, : len(entry.amplitudes)] = entry.amplitudes
        return [LatentState(*values) for values in zip(p, alpha, sigma, b)]


@attr.s(frozen=True)
class FidelityReport:
    """
    JS distance between every demixed phase and its best prototype fit.

    Attributes:
        per_phase(Dict[str, float]): Distance per phase, infinite for a zero pattern
        matches(Dict[str, str]): Prototype whose fit was closest, per phase
        total(float): Sum over phases
    """

    per_phase = attr.ib(type=Dict[str, float])
    matches = attr.ib(type=Dict[str, str])
    total = attr.ib(type=float)


@attr.s(frozen=True)
class ReconstructionReport:
    """Per-point reconstruction losses and their summary statistics."""

    l1 = attr.ib(type=np.ndarray, eq=False)
    l2 = attr.ib(type=np.ndarray, eq=False)
    js = attr.ib(type=np.ndarray, eq=False)

    def summary(self) -> Dict[str, float]:
        """Mean, median and max of every loss, keyed like js_mean."""
        result = {}
        for name, values in (("l1", self.l1), ("l2", self.l2), ("js", self.js)):
            result["%s_mean" % name] = float(np.mean(values))
            result["%s_median" % name] = float(np.median(values))
            result["%s_max" % name] = float(np.max(values))
        return result


@attr.s(frozen=True)
class MetricsReport:
    """Every metric computed for a solution; accuracy is None without ground truth."""

    reconstruction = attr.ib(type=ReconstructionReport)
    fidelity = attr.ib(type=FidelityReport)
    rules = attr.ib(type=RuleReport)
    accuracy = attr.ib(default=None, type=Optional[float])


def cutoff_activations(p: np.ndarray, cutoff: float = CUTOFF) -> np.ndarray:
    """
    Drop activations below the cutoff and renormalize each row.

    A row with nothing left keeps its largest activation alone.  Applying the cutoff to
    its own output changes nothing.
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    kept = np.where(p >= cutoff, p, 0.0)
    for row in np.flatnonzero(kept.sum(axis=1) <= 0.0):
        log.warning("Every activation at point %d is below the cutoff; keeping phase %d alone", row, int(np.argmax(p[row])))
        kept[row, int(np.argmax(p[row]))] = 1.0
    return kept / kept.sum(axis=1, keepdims=True)  # type: ignore


def _renders(library: PrototypeLibrary, latents: Sequence[LatentState], grid: QGrid) -> np.ndarray:
    """Render every phase at every point, shape (N, M, D)."""
    table = library.peak_table()
    alpha = np.array([latent.alpha for latent in latents])
    sigma = np.array([latent.sigma for latent in latents])
    b = np.array([latent.b[:, : table.peaks] for latent in latents])
    return render_table(table, alpha, sigma, b, grid)


def _losses(patterns: np.ndarray, activations: np.ndarray, renders: np.ndarray) -> ReconstructionReport:
    xhat = mix_batch(Tensor(renders), Tensor(activations)).value
    return ReconstructionReport(
        np.array([l1_distance(a, b) for a, b in zip(xhat, patterns)]),
        np.array([l2_distance(a, b) for a, b in zip(xhat, patterns)]),
        np.array([jensen_shannon(a, b) for a, b in zip(xhat, patterns)]),
    )


def phase_fields(active: Sequence[Tuple[str, ...]], graph: CompositionGraph) -> List[PhaseField]:
    """Group points into connected regions that share the same active set."""
    members: Dict[Tuple[str, ...], List[int]] = {}
    for point, phases in enumerate(active):
        members.setdefault(tuple(phases), []).append(point)
    fields = [
        PhaseField(phases, component) for phases, points in members.items() for component in graph.subgraph_components(points)
    ]
    return sorted(fields, key=lambda field: (field.phases, field.points[0]))


def postprocess(
    latents: Sequence[LatentState],
    dataset: XrdDataset,
    library: PrototypeLibrary,
    cutoff: float = CUTOFF,
    alloyed: Sequence[int] = (),
) -> Solution:
    """
    Turn per-point latents into a solution.

    Args:
        latents(Sequence[LatentState]): One latent state per composition point
        dataset(XrdDataset): The dataset the latents were inferred from
        library(PrototypeLibrary): The candidate phases
        cutoff(float): Activations below this value are dropped
        alloyed(Sequence[int]): Points flagged as alloyed during training

    Returns:
        Solution: The solution, including its rule report
    """
    if len(latents) != dataset.size:
        raise ValueError("Got %d latent states for %d composition points" % (len(latents), dataset.size))
    phase_ids = library.phase_ids
    activations = cutoff_activations(np.array([latent.p for latent in latents]), cutoff)
    renders = _renders(library, latents, dataset.grid)

    entries = []
    for point, latent in enumerate(latents):
        for phase in np.flatnonzero(activations[point] > 0.0):
            count = len(library.prototypes[phase].peaks)
            entries.append(
                PhaseActivation(
                    point,
                    phase_ids[phase],
                    float(activations[point, phase]),
                    float(latent.alpha[phase]),
                    float(latent.sigma[phase]),
                    latent.b[phase, :count].copy(),
                )
            )

    weights = activations.sum(axis=0)
    demixed = np.einsum("nm,nmd->md", activations, renders) / np.where(weights > 0.0, weights, 1.0)[:, None]
    summaries = []
    for phase in np.flatnonzero(weights > 0.0):
        points = np.flatnonzero(activations[:, phase] > 0.0)
        alphas = np.array([latents[point].alpha[phase] for point in points])
        sigmas = np.array([latents[point].sigma[phase] for point in points])
        summary = PhaseSummary(phase_ids[phase], len(points), float(alphas.min()), float(alphas.max()), float(sigmas.mean()))
        summaries.append(summary)

    active = [tuple(phase_ids[phase] for phase in np.flatnonzero(row > 0.0)) for row in activations]
    losses = _losses(dataset.patterns, activations, renders)
    solution = Solution(
        phase_ids,
        dataset.grid,
        dataset.graph.points.copy(),
        entries,
        demixed,
        phase_fields(active, dataset.graph),
        summaries,
        losses.l1,
        losses.l2,
        losses.js,
        sorted(int(point) for point in alloyed),
    )
    return attr.evolve(solution, rules=rule_report(solution, dataset.graph))


def _fit(pattern: np.ndarray, prototype: StickPattern, grid: QGrid, bounds: EncoderConfig) -> float:
    """Fit a prototype render to a pattern by bounded least squares, returning the JS distance."""
    count = len(prototype.peaks)

    def residual(theta: np.ndarray) -> np.ndarray:
        return render_phase(prototype, theta[0], theta[1], theta[2:], grid).pattern - pattern

    scan = np.linspace(1.0 - bounds.s_max, 1.0 + bounds.s_max, SHIFT_SCAN)
    start = min([1.0] + list(scan), key=lambda alpha: float(np.sum(residual(np.r_[alpha, bounds.sigma_mid, np.ones(count)]) ** 2)))
    lower = np.r_[1.0 - bounds.s_max, bounds.sigma_min, np.full(count, bounds.b_min)]
    upper = np.r_[1.0 + bounds.s_max, bounds.sigma_max, np.full(count, bounds.b_max)]
    x0 = np.r_[start, bounds.sigma_mid, np.ones(count)]
    fitted = least_squares(residual, x0, bounds=(lower, upper), max_nfev=FIT_ITERATIONS)
    render = render_phase(prototype, fitted.x[0], fitted.x[1], fitted.x[2:], grid).pattern
    if render.max() <= 0.0:
        return math.inf
    return jensen_shannon(render, pattern)


def fidelity_loss(
    demixed: Dict[str, np.ndarray], library: PrototypeLibrary, grid: QGrid, bounds: Optional[EncoderConfig] = None
) -> FidelityReport:
    """
    JS distance between every demixed pattern and its closest prototype fit.

    Candidates are the SHORTLIST prototypes whose unmodified renders are closest to the
    pattern.  Each is fitted over (alpha, sigma, b) within the encoder bounds, starting
    from sigma and b at their midpoint and alpha at the best of a coarse scan.

    Args:
        demixed(Dict[str, np.ndarray]): Demixed pattern per phase id
        library(PrototypeLibrary): Candidate prototypes
        grid(QGrid): The Q grid
        bounds(Optional[EncoderConfig]): Modification bounds; the encoder defaults if None

    Returns:
        FidelityReport: Per-phase distances, the best-matching prototypes, and their sum
    """
    bounds = bounds if bounds is not None else EncoderConfig(d=grid.d, m=len(library))
    per_phase, matches = {}, {}
    references = [render_phase(prototype, 1.0, bounds.sigma_mid, None, grid).pattern for prototype in library.prototypes]
    for phase, pattern in demixed.items():
        pattern = np.asarray(pattern, dtype=np.float64)
        if pattern.max() <= 0.0:
            log.warning("Demixed pattern of %s is zero; fidelity is infinite", phase)
            per_phase[phase], matches[phase] = math.inf, ""
            continue
        pattern = pattern / pattern.max()
        neutral = [jensen_shannon(reference, pattern) for reference in references]
        shortlist = sorted(range(len(library)), key=lambda index: neutral[index])[:SHORTLIST]
        candidates = [library.prototypes[index] for index in shortlist]
        distances = {prototype.phase_id: _fit(pattern, prototype, grid, bounds) for prototype in candidates}
        best = min(distances, key=lambda phase_id: distances[phase_id])
        per_phase[phase], matches[phase] = distances[best], best
    return FidelityReport(per_phase, matches, float(sum(per_phase.values())))


def activation_accuracy(solution: Solution, truth: Sequence[Set[str]]) -> float:
    """
    Fraction of points whose active set matches the ground truth exactly.

    Raises:
        ValueError: If the point counts differ
    """
    if len(truth) != solution.size:
        raise ValueError("Solution has %d points but ground truth has %d" % (solution.size, len(truth)))
    matches = [set(found) == set(expected) for found, expected in zip(solution.active_sets, truth)]
    return float(np.mean(matches))


def detect_alloyed_points(solution: Solution, graph: CompositionGraph, threshold: float = ALLOY_THRESHOLD) -> List[int]:
    """Points on an edge whose endpoints share the same active set, with a shared shift differing by more than the threshold."""
    index = {phase: column for column, phase in enumerate(solution.phase_ids)}
    sets = [tuple(sorted(index[phase] for phase in phases)) for phases in solution.active_sets]
    alpha = solution.alpha
    alloyed = set()
    for u, v in graph.edges:
        if sets[u] and sets[u] == sets[v] and np.any(detect_alloying(alpha[u], alpha[v], sets[u], threshold)):
            alloyed.update((u, v))
    return sorted(alloyed)


def rule_report(solution: Solution, graph: CompositionGraph, threshold: float = ALLOY_THRESHOLD) -> RuleReport:
    """
    Check the Gibbs, Gibbs-alloy and phase-field connectivity rules.

    Alloyed points are those detected from shift differences on the graph edges, plus
    any flagged during training.
    """
    if graph.size != solution.size:
        raise ValueError("Solution has %d points but the graph has %d" % (solution.size, graph.size))
    counts = [len(phases) for phases in solution.active_sets]
    alloyed = sorted(set(detect_alloyed_points(solution, graph, threshold)) | set(solution.alloyed))
    gibbs = [point for point, count in enumerate(counts) if count > 3]
    alloy = [point for point in alloyed if counts[point] > 2]

    members: Dict[Tuple[str, ...], List[int]] = {}
    for point, phases in enumerate(solution.active_sets):
        members.setdefault(tuple(sorted(phases)), []).append(point)
    disconnected = [list(phases) for phases, points in sorted(members.items()) if len(graph.subgraph_components(points)) > 1]
    return RuleReport(
        gibbs_rate=1.0 - len(gibbs) / solution.size,
        gibbs_alloy_rate=1.0 - len(alloy) / solution.size,
        connectivity_rate=1.0 - len(disconnected) / len(members),
        gibbs_violations=gibbs,
        alloy_violations=alloy,
        disconnected=disconnected,
        alloyed=alloyed,
    )


def reconstruction_report(dataset: XrdDataset, solution: Solution, library: PrototypeLibrary) -> ReconstructionReport:
    """Recompute per-point L1, L2 and JS reconstruction losses from a solution."""
    if dataset.size != solution.size:
        raise ValueError("Solution has %d points but the dataset has %d" % (solution.size, dataset.size))
    latents = solution.latents(library.max_peaks)
    return _losses(dataset.patterns, solution.activations, _renders(library, latents, dataset.grid))


def evaluate(
    solution: Solution, dataset: XrdDataset, library: PrototypeLibrary, truth: Optional[Sequence[Set[str]]] = None
) -> MetricsReport:
    """Compute every metric for a solution, with activation accuracy only when ground truth is given."""
    demixed = {phase: solution.demixed[solution.phase_ids.index(phase)] for phase in solution.active_phases}
    return MetricsReport(
        reconstruction=reconstruction_report(dataset, solution, library),
        fidelity=fidelity_loss(demixed, library, dataset.grid),
        rules=rule_report(solution, dataset.graph),
        accuracy=None if truth is None else activation_accuracy(solution, truth),
    )


def solution_from_truth(truth: GroundTruth, dataset: XrdDataset, library: PrototypeLibrary, sigma: float) -> Solution:
    """Express a ground truth as a solution, rendering every phase with a fixed peak width."""
    m, peaks = len(library), library.max_peaks
    latents = [
        LatentState(p, alpha, np.full(m, sigma), np.ones((m, peaks))) for p, alpha in zip(truth.activations, truth.alpha)
    ]
    return postprocess(latents, dataset, library, cutoff=0.0)


def write_solution(solution: Solution, path: str) -> None:
    """Write a solution as JSON; identical solutions give identical bytes."""
    atomic_write(path, to_json(CattrConverter(), solution))


def read_solution(path: str) -> Solution:
    """Read a solution written by write_solution()."""
    with open(path, encoding="utf-8") as f:
        return CattrConverter().structure(json.load(f), Solution)  # type: ignore


def metrics_rows(report: MetricsReport) -> List[Tuple[str, str]]:
    """Flatten a metrics report into (metric, value) rows."""
    rows = [(name, repr(value)) for name, value in report.reconstruction.summary().items()]
    rows += [("fidelity:%s" % phase, repr(value)) for phase, value in report.fidelity.per_phase.items()]
    rows.append(("fidelity_total", repr(report.fidelity.total)))
    rows.append(("gibbs_rate", repr(report.rules.gibbs_rate)))
    rows.append(("gibbs_alloy_rate", repr(report.rules.gibbs_alloy_rate)))
    rows.append(("connectivity_rate", repr(report.rules.connectivity_rate)))
    rows.append(("activation_accuracy", "N/A" if report.accuracy is None else repr(report.accuracy)))
    return rows


def write_metrics(report: MetricsReport, path: str) -> None:
    """Write a metrics report as CSV with header metric,value."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["metric", "value"])
    writer.writerows(metrics_rows(report))
    atomic_write(path, buffer.getvalue())
