# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Classes that describe phase-mapping inputs: prototypes, the Q grid, the composition
graph and measured XRD datasets.

These classes hold data, but do not implement any of the optimization.  Validation
is limited to the invariants a value must satisfy to be represented at all (sorted
peaks, normalized patterns, a connected composition graph).  Every type is immutable
after construction and safe to share across threads.

File formats:

- Prototype CSV: header ``phase_id,q,intensity``, one peak per row, rows of a phase contiguous
- Dataset CSV: header ``c_a,c_b,c_c,i_0,...,i_{D-1}``, one composition point per row
- Dataset metadata: ``<dataset stem>.meta`` next to the CSV, key=value lines with ``q_min``, ``q_max`` and ``d``

Attributes:
    K_MAX(int): Maximum number of peaks kept for a prototype
    COMPOSITION_TOLERANCE(float): Tolerance on barycentric sums within a composition graph
    LOAD_TOLERANCE(float): Tolerance on barycentric sums accepted when loading a dataset
    DEFAULT_POOL_SIZE(int): Default number of sampled paths in a path pool
    DEFAULT_PATH_LEN(int): Default maximum number of vertices in a sampled path
"""

from __future__ import annotations  # see: https://stackoverflow.com/a/33533514/2907667

import csv
import io
import logging
import math
import os
from typing import Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.spatial import Delaunay

from .util import atomic_write, format_properties, read_properties

log = logging.getLogger(__name__)

K_MAX = 200
COMPOSITION_TOLERANCE = 1e-9
LOAD_TOLERANCE = 1e-6
DEFAULT_POOL_SIZE = 100000
DEFAULT_PATH_LEN = 10

PROTOTYPE_HEADER = ["phase_id", "q", "intensity"]
COMPOSITION_HEADER = ["c_a", "c_b", "c_c"]


class DataError(ValueError):
    """Raised when input data cannot be represented by the domain model."""


@attr.s(frozen=True)
class Peak:
    """
    A single stick of a prototype.

    Attributes:
        q(float): Scattering-vector magnitude, in nm^-1
        intensity(float): Relative intensity, dimensionless
    """

    q = attr.ib(type=float)
    intensity = attr.ib(type=float)


@attr.s(frozen=True)
class StickPattern:
    """
    A prototype phase, described by peak positions and relative intensities.

    Use create() to build a pattern from raw peaks; it sorts and normalizes them.

    Attributes:
        phase_id(str): Unique identifier for the phase
        peaks(Tuple[Peak, ...]): Peaks sorted by strictly increasing q, strongest intensity 1
    """

    phase_id = attr.ib(type=str)
    peaks = attr.ib(type=Tuple[Peak, ...], converter=tuple)

    @peaks.validator
    def _check_peaks(self, _attribute: str, value: Tuple[Peak, ...]) -> None:
        if not 1 <= len(value) <= K_MAX:
            raise DataError("Prototype %s must have between 1 and %d peaks, got %d" % (self.phase_id, K_MAX, len(value)))
        if any(peak.q <= 0.0 or peak.intensity <= 0.0 for peak in value):
            raise DataError("Prototype %s has a non-positive peak position or intensity" % self.phase_id)
        if any(second.q <= first.q for first, second in zip(value, value[1:])):
            raise DataError("Prototype %s peaks are not strictly increasing in q" % self.phase_id)
        if abs(max(peak.intensity for peak in value) - 1.0) > 1e-12:
            raise DataError("Prototype %s is not normalized to a maximum intensity of 1" % self.phase_id)

    @staticmethod
    def create(phase_id: str, positions: Sequence[float], intensities: Sequence[float]) -> StickPattern:
        """Create a pattern from raw peaks, sorting by position and scaling the strongest peak to 1."""
        if len(positions) == 0:
            raise DataError("Prototype %s has no peaks" % phase_id)
        strongest = max(intensities)
        peaks = sorted(Peak(float(q), float(a) / strongest) for q, a in zip(positions, intensities))
        return StickPattern(phase_id, peaks)

    @property
    def positions(self) -> np.ndarray:
        return np.array([peak.q for peak in self.peaks])

    @property
    def intensities(self) -> np.ndarray:
        return np.array([peak.intensity for peak in self.peaks])


@attr.s(frozen=True)
class QGrid:
    """
    A uniformly spaced grid on the scattering-vector axis shared by every pattern.

    Attributes:
        q_min(float): First grid value, in nm^-1
        q_max(float): Last grid value, in nm^-1
        d(int): Number of samples
    """

    q_min = attr.ib(type=float, converter=float)
    q_max = attr.ib(type=float, converter=float)
    d = attr.ib(type=int, converter=int)

    @d.validator
    def _check_d(self, _attribute: str, value: int) -> None:
        if value < 2:
            raise DataError("A Q grid needs at least 2 samples")
        if not self.q_max > self.q_min:
            raise DataError("A Q grid must be strictly increasing (q_min=%g, q_max=%g)" % (self.q_min, self.q_max))

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.q_min, self.q_max, self.d)

    @property
    def step(self) -> float:
        return (self.q_max - self.q_min) / (self.d - 1)

    def contains(self, q: float) -> bool:
        """Whether a position lies within the grid's range."""
        return self.q_min <= q <= self.q_max


@attr.s(frozen=True)
class PeakTable:
    """
    Prototype peaks padded into dense arrays for vectorized rendering.

    Padded entries have position 0 and intensity 0, so they never contribute.

    Attributes:
        positions(np.ndarray): Peak positions, shape (M, K)
        intensities(np.ndarray): Relative intensities, shape (M, K)
    """

    positions = attr.ib(type=np.ndarray, eq=False)
    intensities = attr.ib(type=np.ndarray, eq=False)

    @property
    def phases(self) -> int:
        return int(self.positions.shape[0])

    @property
    def peaks(self) -> int:
        return int(self.positions.shape[1])

    def select(self, indices: Sequence[int]) -> PeakTable:
        """Return the table restricted to some phases, in the given order."""
        return PeakTable(self.positions[list(indices)], self.intensities[list(indices)])


@attr.s(frozen=True)
class PrototypeLibrary:
    """
    The set of candidate phases.

    Attributes:
        prototypes(Tuple[StickPattern, ...]): Prototypes, in a stable order that defines phase indices
    """

    prototypes = attr.ib(type=Tuple[StickPattern, ...], converter=tuple)

    @prototypes.validator
    def _check_prototypes(self, _attribute: str, value: Tuple[StickPattern, ...]) -> None:
        if not value:
            raise DataError("A prototype library needs at least one prototype")
        seen = set()
        for prototype in value:
            if prototype.phase_id in seen:
                raise DataError("Duplicate phase-id %s" % prototype.phase_id)
            seen.add(prototype.phase_id)

    def __len__(self) -> int:
        return len(self.prototypes)

    @property
    def phase_ids(self) -> List[str]:
        return [prototype.phase_id for prototype in self.prototypes]

    @property
    def max_peaks(self) -> int:
        return max(len(prototype.peaks) for prototype in self.prototypes)

    def index(self, phase_id: str) -> int:
        """
        Return the index of a phase.

        Raises:
            KeyError: If the phase is not in the library
        """
        for index, prototype in enumerate(self.prototypes):
            if prototype.phase_id == phase_id:
                return index
        raise KeyError(phase_id)

    def peak_table(self, peaks: Optional[int] = None) -> PeakTable:
        """Return padded (M, K) position and intensity arrays, with K defaulting to max_peaks."""
        width = self.max_peaks if peaks is None else peaks
        positions = np.zeros((len(self.prototypes), width))
        intensities = np.zeros((len(self.prototypes), width))
        for row, prototype in enumerate(self.prototypes):
            count = min(width, len(prototype.peaks))
            positions[row, :count] = prototype.positions[:count]
            intensities[row, :count] = prototype.intensities[:count]
        return PeakTable(positions, intensities)


def embed(points: np.ndarray) -> np.ndarray:
    """Map barycentric (c_a, c_b, c_c) coordinates into a 2-D equilateral triangle."""
    points = np.asarray(points, dtype=np.float64)
    return np.stack([points[:, 1] + 0.5 * points[:, 2], (math.sqrt(3.0) / 2.0) * points[:, 2]], axis=1)


@attr.s(frozen=True, eq=False)
class CompositionGraph:
    """
    Composition points in barycentric coordinates, with undirected neighbor edges.

    Attributes:
        points(np.ndarray): Compositions, shape (N, 3), each row summing to 1
        edges(Tuple[Tuple[int, int], ...]): Sorted, unique (u, v) pairs with u < v
    """

    points = attr.ib(type=np.ndarray, converter=lambda value: np.asarray(value, dtype=np.float64))
    edges = attr.ib(type=Tuple[Tuple[int, int], ...], converter=lambda value: tuple(sorted({tuple(sorted(e)) for e in value})))

    @points.validator
    def _check_points(self, _attribute: str, value: np.ndarray) -> None:
        if value.ndim != 2 or value.shape[1] != 3 or value.shape[0] < 1:
            raise DataError("Composition points must have shape (N, 3), got %s" % (value.shape,))
        if np.any(value < -COMPOSITION_TOLERANCE) or np.any(value > 1.0 + COMPOSITION_TOLERANCE):
            raise DataError("Composition coordinates must lie in [0, 1]")
        if np.any(np.abs(value.sum(axis=1) - 1.0) >= COMPOSITION_TOLERANCE):
            raise DataError("Composition coordinates must sum to 1")

    @edges.validator
    def _check_edges(self, _attribute: str, value: Tuple[Tuple[int, int], ...]) -> None:
        size = self.points.shape[0]
        for u, v in value:
            if u == v:
                raise DataError("Self-loop at composition point %d" % u)
            if not (0 <= u < size and 0 <= v < size):
                raise DataError("Edge (%d, %d) refers to a missing composition point" % (u, v))
        if size > 1 and connected_components(self.adjacency(), directed=False)[0] != 1:
            raise DataError("Composition graph is not connected")

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def adjacency(self) -> csr_matrix:
        """Return the symmetric sparse adjacency matrix."""
        size = self.points.shape[0]
        if not self.edges:
            return csr_matrix((size, size))
        rows = [u for u, v in self.edges] + [v for u, v in self.edges]
        cols = [v for u, v in self.edges] + [u for u, v in self.edges]
        return csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size))

    def neighbors(self) -> List[np.ndarray]:
        """Return the sorted neighbor indices of every point."""
        adjacency = self.adjacency()
        return [np.sort(adjacency.indices[adjacency.indptr[i] : adjacency.indptr[i + 1]]) for i in range(self.size)]

    def subgraph_components(self, members: Sequence[int]) -> List[List[int]]:
        """Split a set of points into the connected components of the subgraph they induce."""
        members = sorted(members)
        if not members:
            return []
        induced = self.adjacency()[members][:, members]
        count, labels = connected_components(induced, directed=False)
        return [[members[i] for i in np.flatnonzero(labels == label)] for label in range(count)]


def _chain_edges(embedded: np.ndarray) -> List[Tuple[int, int]]:
    """Connect points in order along their principal direction."""
    centered = embedded - embedded.mean(axis=0)
    direction = np.linalg.svd(centered, full_matrices=False)[2][0] if len(embedded) > 1 else np.array([1.0, 0.0])
    order = np.argsort(centered @ direction, kind="stable")
    return [(int(a), int(b)) for a, b in zip(order, order[1:])]


def build_graph(points: np.ndarray) -> CompositionGraph:
    """
    Build the composition graph for a set of points.

    Edges come from the Delaunay triangulation of the embedded ternary coordinates.
    Degenerate point sets (fewer than 3 points, or collinear points) use chain edges
    between nearest neighbors along the line instead.
    """
    points = np.asarray(points, dtype=np.float64)
    embedded = embed(points)
    if len(points) < 3 or np.linalg.matrix_rank(embedded - embedded.mean(axis=0), tol=1e-9) < 2:
        log.info("Composition points are degenerate for triangulation; using chain edges")
        return CompositionGraph(points, _chain_edges(embedded))

    triangulation = Delaunay(embedded)
    edges = set()
    for simplex in triangulation.simplices:
        a, b, c = (int(v) for v in simplex)
        edges.update({(min(a, b), max(a, b)), (min(b, c), max(b, c)), (min(a, c), max(a, c))})
    used = {v for edge in edges for v in edge}
    for missing in sorted(set(range(len(points))) - used):  # duplicate points are left out of the triangulation
        distances = np.linalg.norm(embedded - embedded[missing], axis=1)
        distances[missing] = np.inf
        nearest = int(np.argmin(distances))
        edges.add((min(missing, nearest), max(missing, nearest)))
    return CompositionGraph(points, sorted(edges))


@attr.s(frozen=True, eq=False)
class XrdDataset:
    """
    Measured XRD patterns on a shared Q grid, one per composition point.

    Attributes:
        grid(QGrid): The shared Q grid
        patterns(np.ndarray): Intensities, shape (N, D), each row max-normalized to 1
        graph(CompositionGraph): The composition graph over the same N points
    """

    grid = attr.ib(type=QGrid)
    patterns = attr.ib(type=np.ndarray, converter=lambda value: np.asarray(value, dtype=np.float64))
    graph = attr.ib(type=CompositionGraph)

    @graph.validator
    def _check_graph(self, _attribute: str, value: CompositionGraph) -> None:
        if self.patterns.ndim != 2 or self.patterns.shape[1] != self.grid.d:
            raise DataError("Patterns must have shape (N, %d), got %s" % (self.grid.d, self.patterns.shape))
        if self.patterns.shape[0] != value.size:
            raise DataError("Dataset has %d patterns but %d composition points" % (self.patterns.shape[0], value.size))
        if not np.all(np.isfinite(self.patterns)) or np.any(self.patterns < 0.0):
            raise DataError("Patterns must be finite and non-negative")
        if np.any(np.abs(self.patterns.max(axis=1) - 1.0) > 1e-12):
            raise DataError("Patterns must be normalized to a maximum intensity of 1")

    @property
    def size(self) -> int:
        return int(self.patterns.shape[0])

    def select(self, indices: Sequence[int]) -> XrdDataset:
        """Return a dataset restricted to some points, with a rebuilt composition graph."""
        indices = list(indices)
        return XrdDataset(self.grid, self.patterns[indices], build_graph(self.graph.points[indices]))


def normalize_patterns(patterns: np.ndarray) -> np.ndarray:
    """
    Scale every pattern so that its maximum intensity is 1.

    Raises:
        DataError: If a pattern has no positive intensity
    """
    patterns = np.asarray(patterns, dtype=np.float64)
    maxima = patterns.max(axis=1)
    if np.any(maxima <= 0.0):
        raise DataError("Pattern at row %d has no positive intensity" % int(np.flatnonzero(maxima <= 0.0)[0]))
    return patterns / maxima[:, None]


def load_prototypes(path: str, grid: QGrid) -> PrototypeLibrary:
    """
    Load a prototype library from CSV.

    Peaks outside the grid are dropped with a warning.  If a prototype has more than
    K_MAX peaks, only the strongest K_MAX are kept.

    Args:
        path(str): Path to a CSV file with header phase_id,q,intensity
        grid(QGrid): The Q grid that patterns will be rendered on

    Returns:
        PrototypeLibrary: The loaded library

    Raises:
        DataError: If the file is malformed, a phase-id repeats, or a prototype has no peaks within the grid
    """
    groups: Dict[str, List[Tuple[float, float]]] = {}
    order: List[str] = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [column.strip() for column in header] != PROTOTYPE_HEADER:
            raise DataError("%s: expected header %s" % (path, ",".join(PROTOTYPE_HEADER)))
        for number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError("%s:%d: expected 3 columns, got %d" % (path, number, len(row)))
            phase_id = row[0].strip()
            if order and order[-1] != phase_id and phase_id in groups:
                raise DataError("%s:%d: duplicate phase-id %s" % (path, number, phase_id))
            try:
                q, intensity = float(row[1]), float(row[2])
            except ValueError as e:
                raise DataError("%s:%d: %s" % (path, number, e)) from e
            if not (math.isfinite(q) and math.isfinite(intensity)) or intensity <= 0.0:
                raise DataError("%s:%d: peak of %s must have a finite position and positive intensity" % (path, number, phase_id))
            if phase_id not in groups:
                groups[phase_id] = []
                order.append(phase_id)
            groups[phase_id].append((q, intensity))

    prototypes = []
    for phase_id in order:
        peaks = groups[phase_id]
        inside = [peak for peak in peaks if grid.contains(peak[0])]
        if len(inside) < len(peaks):
            log.warning("Dropped %d peak(s) of %s outside [%g, %g]", len(peaks) - len(inside), phase_id, grid.q_min, grid.q_max)
        if not inside:
            raise DataError("Prototype %s has no peaks within the Q grid" % phase_id)
        if len(inside) > K_MAX:
            log.warning("Truncated %s from %d to the %d strongest peaks", phase_id, len(inside), K_MAX)
            inside = sorted(inside, key=lambda peak: peak[1], reverse=True)[:K_MAX]
        prototypes.append(StickPattern.create(phase_id, [q for q, _ in inside], [a for _, a in inside]))
    return PrototypeLibrary(prototypes)


def save_prototypes(library: PrototypeLibrary, path: str) -> None:
    """Write a prototype library using the same CSV schema load_prototypes() reads."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(PROTOTYPE_HEADER)
    for prototype in library.prototypes:
        for peak in prototype.peaks:
            writer.writerow([prototype.phase_id, repr(peak.q), repr(peak.intensity)])
    atomic_write(path, buffer.getvalue())


def metadata_path(path: str) -> str:
    """Return the path of the metadata file that accompanies a dataset CSV."""
    return "%s.meta" % os.path.splitext(path)[0]


def load_dataset(path: str) -> XrdDataset:
    """
    Load a dataset from CSV plus its companion metadata file.

    Patterns are max-normalized and the composition graph is built with build_graph().

    Raises:
        DataError: If the files are malformed, an intensity is not finite, or a composition is negative or does not sum to 1
    """
    properties = read_properties(metadata_path(path))
    try:
        grid = QGrid(float(properties["q_min"]), float(properties["q_max"]), int(properties["d"]))
    except KeyError as e:
        raise DataError("%s: missing metadata key %s" % (metadata_path(path), e)) from e

    points, patterns = [], []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = COMPOSITION_HEADER + ["i_%d" % i for i in range(grid.d)]
        if header is None or [column.strip() for column in header] != expected:
            raise DataError("%s: expected header c_a,c_b,c_c,i_0,...,i_%d" % (path, grid.d - 1))
        for index, row in enumerate(reader):
            if not row:
                continue
            try:
                values = np.array([float(value) for value in row])
            except ValueError as e:
                raise DataError("%s: row %d: %s" % (path, index, e)) from e
            if len(values) != len(expected):
                raise DataError("%s: row %d has %d columns, expected %d" % (path, index, len(values), len(expected)))
            if not np.all(np.isfinite(values)):
                raise DataError("%s: row %d has a non-finite value" % (path, index))
            composition = values[:3]
            if abs(composition.sum() - 1.0) > LOAD_TOLERANCE:
                raise DataError("%s: row %d compositions sum to %r, not 1" % (path, index, composition.sum()))
            if np.any(composition < -LOAD_TOLERANCE):
                raise DataError("%s: row %d has a negative composition %r" % (path, index, composition.tolist()))
            if np.any(values[3:] < 0.0):
                log.warning("Clipped negative intensities to 0 in %s row %d", path, index)
            points.append(np.clip(composition, 0.0, None) / np.clip(composition, 0.0, None).sum())
            patterns.append(np.clip(values[3:], 0.0, None))

    if not patterns:
        raise DataError("%s: no composition points" % path)
    return XrdDataset(grid, normalize_patterns(np.array(patterns)), build_graph(np.array(points)))


def save_dataset(dataset: XrdDataset, path: str) -> None:
    """Write a dataset and its metadata using the schemas load_dataset() reads."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COMPOSITION_HEADER + ["i_%d" % i for i in range(dataset.grid.d)])
    for point, pattern in zip(dataset.graph.points, dataset.patterns):
        writer.writerow([repr(float(value)) for value in point] + [repr(float(value)) for value in pattern])
    atomic_write(path, buffer.getvalue())
    properties = {"q_min": repr(dataset.grid.q_min), "q_max": repr(dataset.grid.q_max), "d": dataset.grid.d}
    atomic_write(metadata_path(path), format_properties(properties))


def build_path_pool(
    graph: CompositionGraph, pool_size: int, path_len: int = DEFAULT_PATH_LEN, seed: int = 0
) -> List[Tuple[int, ...]]:
    """
    Sample a pool of short simple paths from the composition graph.

    Each path starts at a uniformly sampled root, ends at a uniformly chosen vertex at the
    largest BFS depth available within path_len - 1 hops, and is traced back through
    randomly chosen BFS parents.  Paths are therefore shortest paths: simple, with every
    consecutive pair adjacent.

    Args:
        graph(CompositionGraph): The composition graph
        pool_size(int): Number of paths to sample
        path_len(int): Maximum number of vertices in a path, at least 2
        seed(int): Random seed; the same seed gives the same pool

    Returns:
        List[Tuple[int, ...]]: The sampled paths, root first

    Raises:
        ValueError: If pool_size or path_len is out of range
        DataError: If the graph is disconnected
    """
    if path_len < 2:
        raise ValueError("Path length must be at least 2")
    if pool_size < 1:
        raise ValueError("Pool size must be at least 1")
    adjacency = graph.adjacency()
    if graph.size > 1 and connected_components(adjacency, directed=False)[0] != 1:
        raise DataError("Cannot sample paths from a disconnected composition graph")

    distances = shortest_path(adjacency, directed=False, unweighted=True)
    neighbors = graph.neighbors()
    rng = np.random.default_rng(seed)
    pool = []
    for root in rng.integers(graph.size, size=pool_size):
        row = distances[root]
        depth = int(min(path_len - 1, row.max()))
        candidates = np.flatnonzero(row == depth)
        vertex = int(candidates[rng.integers(len(candidates))])
        path = [vertex]
        while depth > 0:
            depth -= 1
            steps = neighbors[vertex][row[neighbors[vertex]] == depth]
            vertex = int(steps[rng.integers(len(steps))])
            path.append(vertex)
        pool.append(tuple(reversed(path)))
    log.debug("Sampled %d paths of up to %d vertices", pool_size, path_len)
    return pool
