# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Constraint-aware stochastic gradient descent over the composition graph.

Each step samples a few short paths from a fixed pool, encodes every point on them,
renders and mixes the latent phases, and descends on the reconstruction loss plus
the relaxed k-sparsity, connectivity and alloy-gate penalties.  Between steps, the
per-point entropy thresholds and the family penalty weights are adjusted according to
how well the current latents satisfy the discrete rules.

Normally, training is as simple as::

    result = train(dataset, library, TrainConfig())
    latents = infer(dataset, result)

Attributes:
    LR_CHOICES(Tuple[float, ...]): Learning rates tried by search_learning_rate()
    GIBBS_PHASES(int): Maximum number of coexisting phases at a point
    ALLOY_PHASES(int): Maximum number of coexisting phases at an alloyed point
"""

from __future__ import annotations  # see: https://stackoverflow.com/a/33533514/2907667

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import attr
import numpy as np

from .decoder import LatentState, mix_batch, reconstruct, reconstruction_loss_batch, render_phases
from .domain import K_MAX, PeakTable, PrototypeLibrary, XrdDataset, build_path_pool
from .encoder import EncoderConfig, EncoderError, LatentTensors, encode_patterns, forward, init_params
from .ndtape import ParamStore, Tape, Tensor, adam_step
from .relax import ConstraintKind, ConstraintTerm, active_set, detect_alloying, entropy, reasoning_loss
from .util import CattrConverter, atomic_write

log = logging.getLogger(__name__)

LR_CHOICES = (0.0001, 0.0005, 0.001)
GIBBS_PHASES = 3
ALLOY_PHASES = 2

Edge = Tuple[int, int]


class DivergenceError(RuntimeError):
    """
    Raised when the training loss stops being finite.

    Attributes:
        store(ParamStore): The last parameters for which the loss was finite
        step(int): The step that diverged
    """

    def __init__(self, message: str, store: ParamStore, step: int) -> None:
        super().__init__(message)
        self.store = store
        self.step = step


def _positive(_instance: object, attribute: attr.Attribute, value: float) -> None:  # type: ignore
    if not value > 0:
        raise ValueError("%s must be positive" % attribute.name)


def _non_negative(_instance: object, attribute: attr.Attribute, value: float) -> None:  # type: ignore
    if value < 0:
        raise ValueError("%s must not be negative" % attribute.name)


@attr.s(frozen=True)
class TrainConfig:
    """
    Training configuration.

    Attributes:
        lr(float): Adam learning rate
        steps(int): Number of optimization steps
        paths_per_step(int): Number of paths sampled per step
        path_len(int): Maximum number of points on a sampled path
        pool_size(int): Number of paths in the sampled pool
        lambda_ksparsity(float): Initial weight of the k-sparsity penalty
        lambda_connectivity(float): Initial weight of the connectivity penalty
        lambda_shift(float): Initial weight of the alloy-gate shift penalty
        seed(int): Random seed for initialization, the path pool and batching
        rho(float): Factor applied to the weight of a violated family
        weight_cap(float): Weights never exceed this multiple of their initial value
        gamma(float): Factor applied to a threshold that no longer binds
        eps_active(float): Probability mass above which a phase is active
        alloy_threshold(float): Shift difference above which a shared phase is alloying
        alloy_warmup(int): Steps before alloy detection starts
        adjust_interval(int): Steps between penalty weight adjustments
        log_interval(int): Steps between progress log messages
        workers(int): Threads used for inference and the learning rate search
        isolated(bool): Solve every point in isolation, without pairwise penalties
    """

    lr = attr.ib(default=0.001, type=float, validator=_positive)
    steps = attr.ib(default=2000, type=int, validator=_non_negative)
    paths_per_step = attr.ib(default=8, type=int, validator=_positive)
    path_len = attr.ib(default=10, type=int)
    pool_size = attr.ib(default=100000, type=int, validator=_positive)
    lambda_ksparsity = attr.ib(default=1.0, type=float, validator=_non_negative)
    lambda_connectivity = attr.ib(default=0.01, type=float, validator=_non_negative)
    lambda_shift = attr.ib(default=1.0, type=float, validator=_non_negative)
    seed = attr.ib(default=0, type=int, validator=_non_negative)
    rho = attr.ib(default=1.5, type=float)
    weight_cap = attr.ib(default=100.0, type=float)
    gamma = attr.ib(default=0.9, type=float)
    eps_active = attr.ib(default=0.01, type=float)
    alloy_threshold = attr.ib(default=0.001, type=float, validator=_positive)
    alloy_warmup = attr.ib(default=200, type=int, validator=_non_negative)
    adjust_interval = attr.ib(default=50, type=int, validator=_positive)
    log_interval = attr.ib(default=100, type=int, validator=_positive)
    workers = attr.ib(default=1, type=int, validator=_positive)
    isolated = attr.ib(default=False, type=bool)

    @path_len.validator
    def _check_path_len(self, _attribute: str, value: int) -> None:
        if value < 2:
            raise ValueError("path_len must be at least 2")

    @rho.validator
    def _check_rho(self, _attribute: str, value: float) -> None:
        if not value > 1.0:
            raise ValueError("rho must be greater than 1")

    @weight_cap.validator
    def _check_weight_cap(self, _attribute: str, value: float) -> None:
        if value < 1.0:
            raise ValueError("weight_cap must be at least 1")

    @gamma.validator
    def _check_gamma(self, _attribute: str, value: float) -> None:
        if not 0.0 < value < 1.0:
            raise ValueError("gamma must be in (0, 1)")

    @eps_active.validator
    def _check_eps_active(self, _attribute: str, value: float) -> None:
        if not 0.0 < value < 1.0:
            raise ValueError("eps_active must be in (0, 1)")

    def initial_weights(self) -> Dict[ConstraintKind, float]:
        """Initial penalty weight per constraint family; pairwise families are off in isolated mode."""
        pairwise = 0.0 if self.isolated else 1.0
        return {
            ConstraintKind.KSPARSITY: self.lambda_ksparsity,
            ConstraintKind.CONNECTIVITY: pairwise * self.lambda_connectivity,
            ConstraintKind.ALLOY_GATE: pairwise * self.lambda_shift,
        }


@attr.s
class ThresholdState:
    """
    Per-point k-sparsity state.

    Attributes:
        c(np.ndarray): Entropy threshold per point, in (0, ln 3]
        k(np.ndarray): Maximum number of active phases per point, 2 at alloyed points and 3 elsewhere
        alloyed_edges(FrozenSet[Edge]): Edges where alloying has been detected, as (u, v) with u < v
    """

    c = attr.ib(type=np.ndarray)
    k = attr.ib(type=np.ndarray)
    alloyed_edges = attr.ib(factory=frozenset, type=FrozenSet[Edge], converter=frozenset)

    @k.validator
    def _check_k(self, _attribute: str, value: np.ndarray) -> None:
        if self.c.shape != value.shape:
            raise ValueError("Thresholds and phase counts must have the same shape")
        if np.any(self.c <= 0.0) or np.any(self.c > math.log(GIBBS_PHASES) + 1e-12):
            raise ValueError("Thresholds must be in (0, ln 3]")
        if not np.all(np.isin(value, (ALLOY_PHASES, GIBBS_PHASES))):
            raise ValueError("Phase counts must be 2 or 3")

    @staticmethod
    def initial(size: int) -> ThresholdState:
        """State for a fresh run: c = ln 3 and k = 3 everywhere."""
        return ThresholdState(np.full(size, math.log(GIBBS_PHASES)), np.full(size, GIBBS_PHASES))

    @property
    def alloyed_points(self) -> np.ndarray:
        """Boolean flag per point, set where alloying has been detected on an incident edge."""
        return self.k == ALLOY_PHASES  # type: ignore

    def copy(self) -> ThresholdState:
        return ThresholdState(self.c.copy(), self.k.copy(), self.alloyed_edges)


@attr.s(frozen=True)
class StepRecord:
    """
    One line of the training log.

    The penalty values are unweighted family means over the step's batch.
    """

    step = attr.ib(type=int)
    loss = attr.ib(type=float)
    reconstruction = attr.ib(type=float)
    js = attr.ib(type=float)
    l2 = attr.ib(type=float)
    penalties = attr.ib(type=Dict[str, float])
    weights = attr.ib(type=Dict[str, float])
    violations = attr.ib(type=Dict[str, int])
    threshold_mean = attr.ib(type=float)
    threshold_min = attr.ib(type=float)
    alloyed_points = attr.ib(type=int)
    alloyed_edges = attr.ib(type=int)


@attr.s(frozen=True)
class TrainResult:
    """
    Outcome of a training run.

    Attributes:
        store(ParamStore): Trained encoder parameters and optimizer state
        encoder(EncoderConfig): Encoder configuration the parameters belong to
        config(TrainConfig): Training configuration
        records(List[StepRecord]): Training log, one record per step
        thresholds(ThresholdState): Final thresholds and alloyed edges
    """

    store = attr.ib(type=ParamStore)
    encoder = attr.ib(type=EncoderConfig)
    config = attr.ib(type=TrainConfig)
    records = attr.ib(type=List[StepRecord])
    thresholds = attr.ib(type=ThresholdState)

    @property
    def alloyed_edges(self) -> List[Edge]:
        return sorted(self.thresholds.alloyed_edges)


def default_encoder(dataset: XrdDataset, library: PrototypeLibrary, **overrides: object) -> EncoderConfig:
    """Encoder configuration sized for a dataset and library."""
    return EncoderConfig(d=dataset.grid.d, m=len(library), k_max=min(K_MAX, library.max_peaks), **overrides)  # type: ignore


def adjust_thresholds(
    state: ThresholdState, latents: Mapping[int, LatentState], cfg: TrainConfig, edges: Sequence[Edge] = ()
) -> ThresholdState:
    """
    Adjust per-point thresholds from the current latents.

    Alloying is checked on the given edges whose endpoints share the same active set
    (of at most k phases).  Once an edge is flagged it stays flagged, and both of its
    endpoints are limited to 2 phases with c capped at ln 2.  Then, wherever the
    entropy is already within the threshold but more than k phases are still active,
    the threshold shrinks by gamma.  Thresholds never increase.

    Args:
        state(ThresholdState): Current state
        latents(Mapping[int, LatentState]): Current latents of the points observed this step
        cfg(TrainConfig): Training configuration
        edges(Sequence[Edge]): Observed edges to check for alloying

    Returns:
        ThresholdState: The adjusted state
    """
    result = state.copy()
    alloyed = set(result.alloyed_edges)
    for u, v in edges:
        edge = (min(u, v), max(u, v))
        if edge in alloyed or u not in latents or v not in latents:
            continue
        shared = active_set(latents[u].p, cfg.eps_active)
        if not shared or shared != active_set(latents[v].p, cfg.eps_active) or len(shared) > min(result.k[u], result.k[v]):
            continue
        if np.any(detect_alloying(latents[u].alpha, latents[v].alpha, shared, cfg.alloy_threshold)):
            log.info("Detected alloying on edge %s for phases %s", edge, shared)
            alloyed.add(edge)
    for edge in alloyed:
        for point in edge:
            result.k[point] = ALLOY_PHASES
            result.c[point] = min(result.c[point], math.log(ALLOY_PHASES))
    for point, latent in latents.items():
        if entropy(latent.p).item() <= result.c[point] and len(active_set(latent.p, cfg.eps_active)) > result.k[point]:
            result.c[point] *= cfg.gamma
    return ThresholdState(result.c, result.k, alloyed)


def _reenters(sets: Sequence[Tuple[int, ...]]) -> bool:
    """Whether some active set leaves and later re-enters along a path."""
    seen = set()
    previous = None
    for current in sets:
        if current != previous:
            if current in seen:
                return True
            seen.add(current)
            previous = current
    return False


def violation_report(
    paths: Sequence[Tuple[int, ...]], latents: Mapping[int, LatentState], state: ThresholdState, cfg: TrainConfig
) -> Dict[ConstraintKind, int]:
    """
    Count discrete rule violations among the points observed this step.

    Returns:
        Dict[ConstraintKind, int]: Points over their phase limit (k-sparsity), paths where an
        active set re-enters (connectivity), and alloyed points with more than 2 phases (alloy-gate)
    """
    counts = {ConstraintKind.KSPARSITY: 0, ConstraintKind.CONNECTIVITY: 0, ConstraintKind.ALLOY_GATE: 0}
    for point, latent in latents.items():
        active = len(active_set(latent.p, cfg.eps_active))
        if active > state.k[point]:
            counts[ConstraintKind.KSPARSITY] += 1
        if state.k[point] == ALLOY_PHASES and active > ALLOY_PHASES:
            counts[ConstraintKind.ALLOY_GATE] += 1
    for path in paths:
        if _reenters([active_set(latents[point].p, cfg.eps_active) for point in path]):
            counts[ConstraintKind.CONNECTIVITY] += 1
    return counts


def adjust_weights(
    weights: Mapping[ConstraintKind, float],
    report: Mapping[ConstraintKind, int],
    cfg: TrainConfig,
    initial: Mapping[ConstraintKind, float],
) -> Dict[ConstraintKind, float]:
    """Multiply the weight of every violated family by rho, capped at weight_cap times its initial value."""
    result = dict(weights)
    for kind, count in report.items():
        if count > 0 and kind in result:
            result[kind] = min(result[kind] * cfg.rho, cfg.weight_cap * initial[kind])
    return result


@attr.s
class Trainer:
    """
    Runs constraint-aware SGD for one dataset, one step at a time.

    Normally, training is as simple as::

        trainer = Trainer(dataset, library, config)
        result = trainer.run()

    Fine-grained methods exist for tests and studies that need to inspect the state
    between steps.

    Attributes:
        dataset(XrdDataset): The measured patterns
        library(PrototypeLibrary): The candidate phases
        config(TrainConfig): Training configuration
        encoder(EncoderConfig): Encoder configuration, sized for the dataset by default
    """

    dataset = attr.ib(type=XrdDataset)
    library = attr.ib(type=PrototypeLibrary)
    config = attr.ib(type=TrainConfig)
    encoder = attr.ib(type=EncoderConfig)
    _store = attr.ib(init=False, type=ParamStore)
    _table = attr.ib(init=False, type=PeakTable)
    _pool = attr.ib(init=False, type=List[Tuple[int, ...]])
    _rng = attr.ib(init=False, type=np.random.Generator)
    _thresholds = attr.ib(init=False, type=ThresholdState)
    _initial = attr.ib(init=False, type=Dict[ConstraintKind, float])
    _weights = attr.ib(init=False, type=Dict[ConstraintKind, float])
    _records = attr.ib(init=False, factory=list, type=List[StepRecord])

    @encoder.default
    def _default_encoder(self) -> EncoderConfig:
        return default_encoder(self.dataset, self.library)

    @encoder.validator
    def _check_encoder(self, _attribute: str, value: EncoderConfig) -> None:
        if value.d != self.dataset.grid.d or value.m != len(self.library):
            sizes = (value.d, value.m, self.dataset.grid.d, len(self.library))
            raise ValueError("Encoder is sized for d=%d, m=%d but the data has d=%d, m=%d" % sizes)
        if value.k_max < self.library.max_peaks:
            raise ValueError(
                "Encoder k_max=%d is smaller than the largest prototype (%d peaks)" % (value.k_max, self.library.max_peaks)
            )
        for prototype in self.library.prototypes:
            if not all(self.dataset.grid.contains(q) for q in prototype.positions):
                raise ValueError("Prototype %s has peaks outside the dataset's Q grid" % prototype.phase_id)

    @_store.default
    def _default_store(self) -> ParamStore:
        return init_params(self.encoder, self.config.seed)

    @_table.default
    def _default_table(self) -> PeakTable:
        return self.library.peak_table(self.encoder.k_max)

    @_pool.default
    def _default_pool(self) -> List[Tuple[int, ...]]:
        if self.config.isolated:
            return [(point,) for point in range(self.dataset.size)]
        return build_path_pool(self.dataset.graph, self.config.pool_size, self.config.path_len, self.config.seed)

    @_rng.default
    def _default_rng(self) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, 1])

    @_thresholds.default
    def _default_thresholds(self) -> ThresholdState:
        return ThresholdState.initial(self.dataset.size)

    @_initial.default
    def _default_initial(self) -> Dict[ConstraintKind, float]:
        return self.config.initial_weights()

    @_weights.default
    def _default_weights(self) -> Dict[ConstraintKind, float]:
        return dict(self._initial)

    @property
    def store(self) -> ParamStore:
        return self._store

    @property
    def thresholds(self) -> ThresholdState:
        return self._thresholds

    @property
    def weights(self) -> Dict[ConstraintKind, float]:
        return dict(self._weights)

    @property
    def records(self) -> List[StepRecord]:
        return list(self._records)

    @property
    def completed(self) -> int:
        """Number of steps taken so far."""
        return len(self._records)

    def batch(self) -> List[Tuple[int, ...]]:
        """Sample the paths for the next step."""
        picks = self._rng.integers(len(self._pool), size=self.config.paths_per_step)
        return [self._pool[pick] for pick in picks]

    def terms(self, paths: Sequence[Tuple[int, ...]]) -> List[ConstraintTerm]:
        """
        Build the constraint terms for a batch.

        Batch rows are the points of every path, concatenated in order.  There is one
        k-sparsity term over every row, and one connectivity and one alloy-gate term per
        path of at least 2 points.
        """
        rows = [point for path in paths for point in path]
        weight = self._weights[ConstraintKind.KSPARSITY]
        terms = [ConstraintTerm(ConstraintKind.KSPARSITY, range(len(rows)), weight, self._thresholds.c[rows])]
        if self.config.isolated:
            return terms
        offset = 0
        for path in paths:
            scope = range(offset, offset + len(path))
            offset += len(path)
            if len(path) > 1:
                terms.append(ConstraintTerm(ConstraintKind.CONNECTIVITY, scope, self._weights[ConstraintKind.CONNECTIVITY]))
                terms.append(ConstraintTerm(ConstraintKind.ALLOY_GATE, scope, self._weights[ConstraintKind.ALLOY_GATE]))
        return terms

    def loss(self, paths: Sequence[Tuple[int, ...]], latents: LatentTensors) -> Tuple[Tensor, Dict[str, float]]:
        """
        Total loss of a batch: mean reconstruction loss plus the weighted penalties.

        Returns:
            Tuple[Tensor, Dict[str, float]]: The total loss, and its components by name
        """
        rows = [point for path in paths for point in path]
        x = self.dataset.patterns[rows]
        renders, _ = render_phases(self._table, latents.alpha, latents.sigma, latents.b, self.dataset.grid)
        total, js, l2 = reconstruction_loss_batch(mix_batch(renders, latents.p), x)
        reconstruction = total.mean()
        reasoning, penalties = reasoning_loss(self.terms(paths), latents.p, latents.alpha)
        components = {"reconstruction": reconstruction.item(), "js": float(js.value.mean()), "l2": float(l2.value.mean())}
        components.update({kind.value: value for kind, value in penalties.items()})
        return reconstruction + reasoning, components

    def step(self) -> StepRecord:
        """
        Take one optimization step.

        Raises:
            DivergenceError: If the loss or its gradient is not finite; the trainer state is left unchanged
        """
        number = self.completed
        paths = self.batch()
        rows = [point for path in paths for point in path]
        tape = Tape()
        try:
            latents = forward(Tensor(self.dataset.patterns[rows]), self._store.watch(tape), self.encoder)
            loss, components = self.loss(paths, latents)
        except EncoderError as e:
            raise DivergenceError("Step %d: %s" % (number, e), self._store, number) from e
        if not math.isfinite(loss.item()):
            bad = ", ".join(sorted(name for name, value in components.items() if not math.isfinite(value)))
            raise DivergenceError("Step %d: loss is not finite (components: %s)" % (number, bad or "total"), self._store, number)
        grads = tape.backward(loss)
        bad = sorted(name for name, grad in grads.items() if not np.all(np.isfinite(grad)))
        if bad:
            raise DivergenceError("Step %d: non-finite gradient for %s" % (number, ", ".join(bad)), self._store, number)
        self._store = adam_step(self._store, grads, self.config.lr)

        observed = dict(zip(rows, latents.unbatch()))
        edges: List[Edge] = []
        if not self.config.isolated and number >= self.config.alloy_warmup:
            edges = [(u, v) for path in paths for u, v in zip(path, path[1:])]
        self._thresholds = adjust_thresholds(self._thresholds, observed, self.config, edges)
        report = violation_report(paths, observed, self._thresholds, self.config)
        if (number + 1) % self.config.adjust_interval == 0:
            adjusted = adjust_weights(self._weights, report, self.config, self._initial)
            if adjusted != self._weights:
                log.debug("Step %d: adjusted weights to %s", number, {kind.value: weight for kind, weight in adjusted.items()})
            self._weights = adjusted

        record = StepRecord(
            step=number,
            loss=loss.item(),
            reconstruction=components["reconstruction"],
            js=components["js"],
            l2=components["l2"],
            penalties={kind.value: components.get(kind.value, 0.0) for kind in self._initial},
            weights={kind.value: weight for kind, weight in self._weights.items()},
            violations={kind.value: count for kind, count in report.items()},
            threshold_mean=float(self._thresholds.c.mean()),
            threshold_min=float(self._thresholds.c.min()),
            alloyed_points=int(self._thresholds.alloyed_points.sum()),
            alloyed_edges=len(self._thresholds.alloyed_edges),
        )
        self._records.append(record)
        if number % self.config.log_interval == 0:
            log.info("Step %d: loss=%.6f reconstruction=%.6f", number, record.loss, record.reconstruction)
            log.debug("Step %d: violations %s", number, record.violations)
        return record

    def run(self) -> TrainResult:
        """Take the remaining configured steps and return the result."""
        while self.completed < self.config.steps:
            self.step()
        return self.result()

    def result(self) -> TrainResult:
        return TrainResult(self._store.copy(), self.encoder, self.config, self.records, self._thresholds.copy())


def train(dataset: XrdDataset, library: PrototypeLibrary, cfg: TrainConfig, encoder: Optional[EncoderConfig] = None) -> TrainResult:
    """
    Train an encoder for a dataset with constraint-aware SGD.

    The result is deterministic given the configuration, including the seed.

    Raises:
        ValueError: If the dataset and library are incompatible
        DivergenceError: If the loss stops being finite
    """
    trainer = Trainer(dataset, library, cfg) if encoder is None else Trainer(dataset, library, cfg, encoder)
    log.info("Training %d points against %d phases for %d steps at lr=%g", dataset.size, len(library), cfg.steps, cfg.lr)
    return trainer.run()


def infer(dataset: XrdDataset, result: TrainResult) -> List[LatentState]:
    """Encode every point of a dataset with trained parameters."""
    return encode_patterns(dataset.patterns, result.store, result.encoder, result.config.workers)


def mean_reconstruction(dataset: XrdDataset, library: PrototypeLibrary, result: TrainResult) -> float:
    """Mean reconstruction loss over the whole dataset."""
    latents = infer(dataset, result)
    xhat = reconstruct(library.peak_table(result.encoder.k_max), latents, dataset.grid)
    return float(reconstruction_loss_batch(Tensor(xhat), dataset.patterns)[0].value.mean())


def search_learning_rate(
    dataset: XrdDataset,
    library: PrototypeLibrary,
    cfg: TrainConfig,
    encoder: Optional[EncoderConfig] = None,
    rates: Sequence[float] = LR_CHOICES,
) -> TrainResult:
    """
    Train once per learning rate and keep the run with the lowest mean reconstruction loss.

    Runs are independent, so with more than one worker they are trained on a thread
    pool.  Ties go to the earlier rate.
    """
    if not rates:
        raise ValueError("At least one learning rate is required")

    def run(rate: float) -> Tuple[float, TrainResult]:
        result = train(dataset, library, attr.evolve(cfg, lr=rate), encoder)
        score = mean_reconstruction(dataset, library, result)
        log.info("Learning rate %g: mean reconstruction loss %.6f", rate, score)
        return score, result

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.workers, len(rates))) as executor:
            outcomes = list(executor.map(run, rates))
    else:
        outcomes = [run(rate) for rate in rates]
    best = min(range(len(outcomes)), key=lambda index: outcomes[index][0])
    log.info("Selected learning rate %g", rates[best])
    return outcomes[best][1]


def write_training_log(records: Sequence[StepRecord], path: str) -> None:
    """Write the training log as JSON lines, one record per step."""
    converter = CattrConverter()
    atomic_write(path, "".join(json.dumps(converter.unstructure(record)) + "\n" for record in records))
