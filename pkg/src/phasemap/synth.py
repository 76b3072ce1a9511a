# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Synthetic phase-mapping benchmarks with known ground truth, and a brute-force demixer
for tiny instances.

A benchmark is generated from a phase diagram on a triangular composition lattice.
Each phase has an anchor composition; the first three anchors sit at the corners of
the triangle and the rest are random.  The anchors are triangulated, and every lattice
point takes the anchors of its enclosing triangle with barycentric weights.  Weights
below the activation floor are dropped and the rest renormalized, so each point has
at most three phases, each active set forms a connected phase field, and activations
vary smoothly.  A few fields with at most two phases are alloyed: one of their phases
shifts linearly across the field.

Attributes:
    LAYOUT_ATTEMPTS(int): Number of layouts tried before giving up on a request
    COMBINATION_ATTEMPTS(int): Number of layouts tried when a combination count is requested
    PLACEMENT_ATTEMPTS(int): Number of draws tried to place one well-separated peak
    TRUTH_HEADER(List[str]): Header of the ground-truth CSV
    ORACLE_MAX_PHASES(int): Largest library the brute-force demixer accepts
"""

from __future__ import annotations  # see: https://stackoverflow.com/a/33533514/2907667

import csv
import io
import itertools
import logging
import os
from typing import Dict, List, Optional, Sequence, Set, Tuple

import attr
import numpy as np
from scipy.optimize import nnls
from scipy.spatial import Delaunay

from .decoder import mix, reconstruction_loss, render_table
from .domain import (
    K_MAX,
    PrototypeLibrary,
    QGrid,
    StickPattern,
    XrdDataset,
    build_graph,
    embed,
    metadata_path,
    normalize_patterns,
    save_dataset,
    save_prototypes,
)
from .evaluation import CUTOFF, cutoff_activations, rule_report, solution_from_truth
from .util import atomic_write, format_properties

log = logging.getLogger(__name__)

LAYOUT_ATTEMPTS = 25
COMBINATION_ATTEMPTS = 2000
PLACEMENT_ATTEMPTS = 1000
TRUTH_HEADER = ["point_index", "phase_id", "activation", "alpha"]
ORACLE_MAX_PHASES = 8


class LayoutError(ValueError):
    """Raised when a requested benchmark cannot be laid out."""


class OracleError(ValueError):
    """Raised when the brute-force demixer is asked to enumerate too many phases."""


def _peak_range(value: Sequence[int]) -> Tuple[int, int]:
    low, high = (int(count) for count in value)
    return low, high


@attr.s(frozen=True)
class SynthSpec:
    """
    Benchmark request.

    Attributes:
        phases(int): Number of prototypes
        peaks(Tuple[int, int]): Inclusive range of peak counts per prototype
        grid(QGrid): The Q grid
        points_side(int): Side of the triangular lattice, giving side * (side + 1) / 2 points
        layout_seed(Optional[int]): Seed for the phase diagram, the generate() seed if None
        alloy_gradient(float): Difference in shift ratio between the extreme points of an alloyed field
        noise(float): Standard deviation of additive Gaussian noise on max-normalized intensities
        sigma(float): Peak width used for rendering, in nm^-1
        activation_floor(float): Barycentric weight below which a phase is not active
        alloyed_fields(int): Number of phase fields to alloy
        overlap(float): Fraction of each prototype's peaks copied near peaks of the previous prototype
        max_phases(int): Maximum number of phases at a point
        combinations(Optional[int]): Required number of unique active sets, any number if None
    """

    phases = attr.ib(default=6, type=int)
    peaks = attr.ib(default=(4, 10), type=Tuple[int, int], converter=_peak_range)
    grid = attr.ib(default=QGrid(15.0, 80.0, 650), type=QGrid)
    points_side = attr.ib(default=20, type=int)
    layout_seed = attr.ib(default=None, type=Optional[int])
    alloy_gradient = attr.ib(default=0.02, type=float)
    noise = attr.ib(default=0.01, type=float)
    sigma = attr.ib(default=0.3, type=float)
    activation_floor = attr.ib(default=0.2, type=float)
    alloyed_fields = attr.ib(default=2, type=int)
    overlap = attr.ib(default=0.0, type=float)
    max_phases = attr.ib(default=3, type=int)
    combinations = attr.ib(default=None, type=Optional[int])

    @phases.validator
    def _check_phases(self, _attribute: str, value: int) -> None:
        if value < 1:
            raise ValueError("A benchmark needs at least one phase")

    @peaks.validator
    def _check_peaks(self, _attribute: str, value: Tuple[int, int]) -> None:
        if not 1 <= value[0] <= value[1] <= K_MAX:
            raise ValueError("Peak counts must satisfy 1 <= low <= high <= %d" % K_MAX)

    @points_side.validator
    def _check_points_side(self, _attribute: str, value: int) -> None:
        if value < 2:
            raise ValueError("The composition lattice needs a side of at least 2")

    @alloy_gradient.validator
    @noise.validator
    @alloyed_fields.validator
    def _check_non_negative(self, attribute: attr.Attribute, value: float) -> None:  # type: ignore
        if value < 0:
            raise ValueError("%s must not be negative" % attribute.name)

    @sigma.validator
    def _check_sigma(self, _attribute: str, value: float) -> None:
        if value <= 0.0:
            raise ValueError("Peak width must be positive")

    @activation_floor.validator
    def _check_floor(self, _attribute: str, value: float) -> None:
        if not 0.0 <= value < 1.0 / 3.0:
            raise ValueError("Activation floor must be in [0, 1/3)")

    @overlap.validator
    def _check_overlap(self, _attribute: str, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError("Overlap must be in [0, 1]")

    @max_phases.validator
    def _check_max_phases(self, _attribute: str, value: int) -> None:
        if not 1 <= value <= 3:
            raise ValueError("Max phases per point must be 1, 2 or 3")

    @combinations.validator
    def _check_combinations(self, _attribute: str, value: Optional[int]) -> None:
        if value is not None and value < 1:
            raise ValueError("Combination count must be positive")

    @property
    def size(self) -> int:
        """Number of composition points."""
        return self.points_side * (self.points_side + 1) // 2


@attr.s(frozen=True, eq=False)
class GroundTruth:
    """
    The known answer for a benchmark.

    Attributes:
        phase_ids(List[str]): Phase ids, in library order
        activations(np.ndarray): True activations, shape (N, M)
        alpha(np.ndarray): True shift ratios, shape (N, M), 1.0 where a phase is inactive
    """

    phase_ids = attr.ib(type=List[str])
    activations = attr.ib(type=np.ndarray)
    alpha = attr.ib(type=np.ndarray)

    @property
    def size(self) -> int:
        return int(self.activations.shape[0])

    @property
    def active_sets(self) -> List[Set[str]]:
        return [{self.phase_ids[phase] for phase in np.flatnonzero(row > 0.0)} for row in self.activations]

    @property
    def combinations(self) -> int:
        """Number of unique active sets."""
        return len({frozenset(phases) for phases in self.active_sets})


@attr.s(frozen=True, eq=False)
class DemixResult:
    """Best subset found by the brute-force demixer, with post-cutoff activations."""

    phases = attr.ib(type=Tuple[str, ...])
    activations = attr.ib(type=np.ndarray)
    alpha = attr.ib(type=np.ndarray)
    loss = attr.ib(type=float)


def lattice(side: int) -> np.ndarray:
    """Barycentric points of a triangular lattice, shape (side * (side + 1) / 2, 3)."""
    steps = side - 1
    points = [(i / steps, j / steps, (steps - i - j) / steps) for i in range(steps, -1, -1) for j in range(steps - i, -1, -1)]
    return np.array(points)


def _anchors(phases: int, rng: np.random.Generator) -> np.ndarray:
    corners = np.eye(3)[: min(phases, 3)]
    if phases <= 3:
        return corners
    return np.vstack([corners, rng.dirichlet(np.full(3, 2.0), size=phases - 3)])


def _weights(points: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Barycentric weight of every anchor at every point, shape (N, M)."""
    weights = np.zeros((len(points), len(anchors)))
    if len(anchors) == 1:
        weights[:, 0] = 1.0
        return weights
    if len(anchors) == 2:
        along = np.clip(points[:, 1] + 0.5 * points[:, 2], 0.0, 1.0)
        weights[:, 0], weights[:, 1] = 1.0 - along, along
        return weights
    triangulation = Delaunay(embed(anchors))
    embedded = embed(points)
    simplices = triangulation.find_simplex(embedded, bruteforce=True, tol=1e-9)
    for point, simplex in enumerate(simplices):
        if simplex < 0:
            raise LayoutError("Composition point %d is outside the anchor triangulation" % point)
        transform = triangulation.transform[simplex]
        partial = transform[:2] @ (embedded[point] - transform[2])
        weights[point, triangulation.simplices[simplex]] = np.clip(np.r_[partial, 1.0 - partial.sum()], 0.0, None)
    return weights


def _activations(weights: np.ndarray, floor: float, max_phases: int) -> np.ndarray:
    kept = np.where(weights >= floor, weights, 0.0)
    for row in range(len(kept)):
        order = np.argsort(-kept[row], kind="stable")
        kept[row, order[max_phases:]] = 0.0
    return kept / kept.sum(axis=1, keepdims=True)  # type: ignore


def _fields(activations: np.ndarray, points: np.ndarray) -> List[Tuple[Tuple[int, ...], List[int]]]:
    graph = build_graph(points)
    members: Dict[Tuple[int, ...], List[int]] = {}
    for point, row in enumerate(activations):
        members.setdefault(tuple(int(phase) for phase in np.flatnonzero(row > 0.0)), []).append(point)
    return [(phases, component) for phases, group in sorted(members.items()) for component in graph.subgraph_components(group)]


def _alloy(activations: np.ndarray, points: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Choose alloyed fields and return the shift ratios, shape (N, M)."""
    alpha = np.ones(activations.shape)
    if spec.alloyed_fields == 0:
        return alpha
    candidates = [(phases, members) for phases, members in _fields(activations, points) if len(phases) <= 2 and len(members) >= 2]
    count = min(spec.alloyed_fields, len(candidates))
    if count < spec.alloyed_fields:
        log.warning(
            "Layout has %d fields that can be alloyed, alloying %d of %d requested", len(candidates), count, spec.alloyed_fields
        )
    for choice in rng.choice(len(candidates), size=count, replace=False):
        phases, members = candidates[int(choice)]
        phase = phases[int(rng.integers(len(phases)))]
        embedded = embed(points[members])
        centered = embedded - embedded.mean(axis=0)
        projection = centered @ np.linalg.svd(centered, full_matrices=False)[2][0]
        position = (projection - projection.min()) / (projection.max() - projection.min())
        alpha[members, phase] = 1.0 - spec.alloy_gradient / 2.0 + spec.alloy_gradient * position
    return alpha


def _place(existing: List[float], low: float, high: float, separation: float, rng: np.random.Generator) -> float:
    for _ in range(PLACEMENT_ATTEMPTS):
        q = float(rng.uniform(low, high))
        if all(abs(q - other) >= separation for other in existing):
            return q
    raise LayoutError("Cannot place %d peaks %g apart within [%g, %g]" % (len(existing) + 1, separation, low, high))


def make_prototypes(spec: SynthSpec, rng: np.random.Generator) -> PrototypeLibrary:
    """
    Draw random prototypes with well-separated peaks.

    Peaks within a prototype are at least 3 sigma apart, and the dominant peaks of
    different prototypes are too.  With a positive overlap, a fraction of each
    prototype's weaker peaks sits within sigma / 2 of peaks of the previous prototype.
    """
    separation = 3.0 * spec.sigma
    margin = 4.0 * spec.sigma + spec.grid.q_max * spec.alloy_gradient
    low, high = spec.grid.q_min + margin, spec.grid.q_max - margin
    dominant: List[float] = []
    prototypes = []
    for phase in range(spec.phases):
        count = int(rng.integers(spec.peaks[0], spec.peaks[1] + 1))
        positions = [_place(dominant, low, high, separation, rng)]
        dominant.append(positions[0])
        if phase > 0 and spec.overlap > 0.0:
            previous = prototypes[-1].positions
            for q in rng.choice(previous, size=min(len(previous), int(round(spec.overlap * (count - 1)))), replace=False):
                shifted = float(q + rng.uniform(-spec.sigma / 2.0, spec.sigma / 2.0))
                if all(abs(shifted - other) >= separation for other in positions):
                    positions.append(shifted)
        while len(positions) < count:
            positions.append(_place(positions, low, high, separation, rng))
        intensities = [1.0] + list(rng.uniform(0.1, 0.9, size=len(positions) - 1))
        prototypes.append(StickPattern.create("phase-%d" % (phase + 1), positions, intensities))
    return PrototypeLibrary(prototypes)


def layout(spec: SynthSpec, points: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lay out a phase diagram on the given composition points.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Activations and shift ratios, both of shape (N, M)
    """
    weights = _weights(points, _anchors(spec.phases, rng))
    activations = _activations(weights, spec.activation_floor, spec.max_phases)
    return activations, _alloy(activations, points, spec, rng)


def render_patterns(library: PrototypeLibrary, activations: np.ndarray, alpha: np.ndarray, grid: QGrid, sigma: float) -> np.ndarray:
    """Render noise-free max-normalized mixtures, shape (N, D)."""
    table = library.peak_table()
    sigmas = np.full(alpha.shape, sigma)
    renders = render_table(table, alpha, sigmas, None, grid)
    return np.array([mix(render, weights) for render, weights in zip(renders, activations)])


def generate(spec: SynthSpec, seed: int) -> Tuple[XrdDataset, PrototypeLibrary, GroundTruth]:
    """
    Generate a benchmark.

    Prototypes are drawn from the seed and the phase diagram from the layout seed.
    Layouts are retried until the ground truth satisfies the Gibbs, Gibbs-alloy and
    connectivity rules at every point, which it does by construction except where the
    lattice is too coarse to resolve a field.  When a combination count is requested,
    layouts with a different number of unique active sets are skipped before rendering.

    Returns:
        Tuple[XrdDataset, PrototypeLibrary, GroundTruth]: The dataset, the prototypes, and the known answer

    Raises:
        LayoutError: If no acceptable layout was found
    """
    library = make_prototypes(spec, np.random.default_rng([seed, 0]))
    points = lattice(spec.points_side)
    graph = build_graph(points)
    layout_seed = seed if spec.layout_seed is None else spec.layout_seed
    attempts = LAYOUT_ATTEMPTS if spec.combinations is None else COMBINATION_ATTEMPTS
    problem = "no attempts"
    for attempt in range(attempts):
        try:
            activations, alpha = layout(spec, points, np.random.default_rng([layout_seed, attempt]))
        except LayoutError as e:
            problem = str(e)
            continue
        truth = GroundTruth(library.phase_ids, activations, alpha)
        if spec.combinations is not None and truth.combinations != spec.combinations:
            problem = "layout has %d phase combinations, %d requested" % (truth.combinations, spec.combinations)
            continue
        patterns = render_patterns(library, activations, alpha, spec.grid, spec.sigma)
        if spec.noise > 0.0:
            noise = np.random.default_rng([seed, 1]).normal(0.0, spec.noise, size=patterns.shape)
            patterns = np.clip(patterns + noise, 0.0, None)
        dataset = XrdDataset(spec.grid, normalize_patterns(patterns), graph)
        rules = rule_report(solution_from_truth(truth, dataset, library, spec.sigma), graph)
        if rules.gibbs_rate == rules.gibbs_alloy_rate == rules.connectivity_rate == 1.0:
            log.info("Generated %d points, %d phase combinations, layout attempt %d", dataset.size, truth.combinations, attempt)
            return dataset, library, truth
        problem = "ground truth violates the phase rules (%s)" % rules
    raise LayoutError("No acceptable layout after %d attempts: %s" % (attempts, problem))


def write_benchmark(out_dir: str, dataset: XrdDataset, library: PrototypeLibrary, truth: GroundTruth, spec: SynthSpec) -> List[str]:
    """
    Write dataset.csv, dataset.meta, prototypes.csv and truth.csv into a directory.

    Returns:
        List[str]: Paths of the written files
    """
    os.makedirs(out_dir, exist_ok=True)
    dataset_path = os.path.join(out_dir, "dataset.csv")
    save_dataset(dataset, dataset_path)
    grid = dataset.grid
    properties = {"q_min": repr(grid.q_min), "q_max": repr(grid.q_max), "d": grid.d, "sigma": repr(spec.sigma)}
    atomic_write(metadata_path(dataset_path), format_properties(properties))
    prototypes_path = os.path.join(out_dir, "prototypes.csv")
    save_prototypes(library, prototypes_path)
    truth_path = os.path.join(out_dir, "truth.csv")
    write_truth(truth, truth_path)
    return [dataset_path, metadata_path(dataset_path), prototypes_path, truth_path]


def write_truth(truth: GroundTruth, path: str) -> None:
    """Write ground truth as CSV, one row per active phase per point."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRUTH_HEADER)
    for point, (row, shifts) in enumerate(zip(truth.activations, truth.alpha)):
        for phase in np.flatnonzero(row > 0.0):
            writer.writerow([point, truth.phase_ids[phase], repr(float(row[phase])), repr(float(shifts[phase]))])
    atomic_write(path, buffer.getvalue())


def read_truth(path: str, library: PrototypeLibrary, size: Optional[int] = None) -> GroundTruth:
    """
    Read ground truth written by write_truth().

    Raises:
        ValueError: If the header is wrong or a phase id is not in the library
    """
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [column.strip() for column in header] != TRUTH_HEADER:
            raise ValueError("%s: expected header %s" % (path, ",".join(TRUTH_HEADER)))
        for row in reader:
            if row:
                try:
                    rows.append((int(row[0]), library.index(row[1].strip()), float(row[2]), float(row[3])))
                except KeyError as e:
                    raise ValueError("%s: unknown phase-id %s" % (path, e)) from e
    count = size if size is not None else max(row[0] for row in rows) + 1
    activations, alpha = np.zeros((count, len(library))), np.ones((count, len(library)))
    for point, phase, activation, shift in rows:
        activations[point, phase], alpha[point, phase] = activation, shift
    return GroundTruth(library.phase_ids, activations, alpha)


def brute_force_demix(
    x: np.ndarray,
    library: PrototypeLibrary,
    grid: QGrid,
    k_max: int = 3,
    grid_steps: int = 5,
    s_max: float = 0.05,
    sigma: float = 0.3,
    cutoff: float = CUTOFF,
) -> DemixResult:
    """
    Find the best explanation of one pattern by exhaustive search.

    Every subset of at most k_max phases is tried, with every combination of shift
    ratios from an evenly spaced grid over [1 - s_max, 1 + s_max].  Activations come
    from non-negative least squares on the renders, and are cut off like a solution's
    before the reconstruction loss is compared.  Smaller subsets win ties.

    Raises:
        OracleError: If the library has more than ORACLE_MAX_PHASES phases
    """
    if len(library) > ORACLE_MAX_PHASES:
        raise OracleError("Brute-force demixing is limited to %d phases; use it on desk-scale benchmarks only" % ORACLE_MAX_PHASES)
    x = np.asarray(x, dtype=np.float64)
    shifts = np.linspace(1.0 - s_max, 1.0 + s_max, grid_steps) if grid_steps > 1 else np.ones(1)
    table = library.peak_table()
    m = len(library)
    renders = render_table(table, np.tile(shifts[:, None], (1, m)), np.full((len(shifts), m), sigma), None, grid)  # (steps, M, D)

    best: Optional[DemixResult] = None
    for size in range(1, min(k_max, m) + 1):
        for subset in itertools.combinations(range(m), size):
            for choice in itertools.product(range(len(shifts)), repeat=size):
                basis = np.stack([renders[step, phase] for step, phase in zip(choice, subset)], axis=1)
                weights = nnls(basis, x)[0]
                if weights.sum() <= 0.0:
                    continue
                activations = cutoff_activations(weights / weights.sum(), cutoff)[0]
                loss = reconstruction_loss(mix(basis.T, activations), x)
                if best is None or loss < best.loss - 1e-9:
                    keep = activations > 0.0
                    best = DemixResult(
                        tuple(library.phase_ids[phase] for phase, kept in zip(subset, keep) if kept),
                        activations[keep],
                        shifts[list(choice)][keep],
                        loss,
                    )
    assert best is not None
    return best
