# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Run studies to see how well the solver behaves as the problem changes.

There are two studies.  The down-scaling study regenerates the same phase diagram at
coarser lattice resolutions and measures how activation accuracy falls off as fewer
points are sampled.  The ablation study solves an ambiguous benchmark twice, once
jointly over the composition graph and once with every point in isolation, and
compares how often each agrees with the other and with the ground truth.

Each study writes a CSV summary with wall-clock durations, plus every run as a line
of JSON.

Attributes:
    DOWNSCALE_SIDES(Tuple[int, ...]): Lattice sides of the down-scaling study, giving 10, 45, 105 and 210 points
    STUDY_SEEDS(Tuple[int, ...]): Seeds used by default for every study
    ABLATION_OVERLAP(float): Prototype overlap used by default for the ablation benchmark
"""

from __future__ import annotations  # see: https://stackoverflow.com/a/33533514/2907667

import csv
import io
import json
import logging
import statistics
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import attr
import pendulum
from pendulum import DateTime

from .domain import PrototypeLibrary, XrdDataset
from .evaluation import Solution, activation_accuracy, postprocess
from .synth import SynthSpec, generate
from .trainer import TrainConfig, default_encoder, infer, train
from .util import CattrConverter, atomic_write

log = logging.getLogger(__name__)

DOWNSCALE_SIDES = (4, 9, 14, 20)
STUDY_SEEDS = (0, 1, 2)
ABLATION_OVERLAP = 0.5

HEADERS = [
    "Study",
    "Mode",
    "Seed",
    "Points",
    "Accuracy",
    "Agreement",
    "Gibbs Rate",
    "Gibbs Alloy Rate",
    "Connectivity Rate",
    "Duration (s)",
]


def _mean(data: Sequence[float]) -> Optional[float]:
    """Calculate the mean rounded to 4 decimal places or return None if there is not any data."""
    return round(statistics.mean(data), 4) if data else None


@attr.s(frozen=True)
class StudyRun:
    """
    Result of a single solve within a study.

    Attributes:
        study(str): Study name, "downscale" or "ablation"
        mode(str): "joint" or "isolated"
        seed(int): Benchmark and training seed
        points(int): Number of composition points
        accuracy(float): Activation accuracy against the ground truth
        agreement(Optional[float]): For isolated runs, the fraction of points whose active set matches the joint solution
        gibbs_rate(float): Fraction of points satisfying the Gibbs rule
        gibbs_alloy_rate(float): Fraction of points satisfying the Gibbs-alloy rule
        connectivity_rate(float): Fraction of phase fields that are connected
        start(DateTime): When the solve started
        stop(DateTime): When the solve finished
    """

    study = attr.ib(type=str)
    mode = attr.ib(type=str)
    seed = attr.ib(type=int)
    points = attr.ib(type=int)
    accuracy = attr.ib(type=float)
    agreement = attr.ib(type=Optional[float])
    gibbs_rate = attr.ib(type=float)
    gibbs_alloy_rate = attr.ib(type=float)
    connectivity_rate = attr.ib(type=float)
    start = attr.ib(type=DateTime)
    stop = attr.ib(type=DateTime)

    @property
    def duration(self) -> float:
        """Wall-clock duration in seconds."""
        return round(self.stop.diff(self.start).total_seconds(), 3)  # type: ignore


@attr.s(frozen=True)
class DownscaleSummary:
    """
    Mean activation accuracy per number of points, over seeds.

    Attributes:
        accuracy(Dict[int, float]): Mean accuracy keyed by number of points
    """

    accuracy = attr.ib(type=Dict[int, float])

    @property
    def non_decreasing(self) -> bool:
        """Whether mean accuracy never drops as the number of points grows."""
        values = [self.accuracy[points] for points in sorted(self.accuracy)]
        return all(later >= earlier for earlier, later in zip(values, values[1:]))

    @property
    def gain(self) -> float:
        """Accuracy at the most points minus accuracy at the fewest."""
        ordered = sorted(self.accuracy)
        return self.accuracy[ordered[-1]] - self.accuracy[ordered[0]]


@attr.s(frozen=True)
class AblationSummary:
    """
    Mean agreement fractions of the ablation study, over seeds.

    Attributes:
        isolated_vs_joint(float): Fraction of points where the isolated solution matches the joint one
        joint_vs_truth(float): Fraction of points where the joint solution matches the ground truth
    """

    isolated_vs_joint = attr.ib(type=float)
    joint_vs_truth = attr.ib(type=float)


def solve(
    dataset: XrdDataset, library: PrototypeLibrary, cfg: TrainConfig, encoder: Optional[Mapping[str, object]] = None
) -> Solution:
    """Train, infer and post-process, returning the solution."""
    overrides = dict(encoder) if encoder else {}
    result = train(dataset, library, cfg, default_encoder(dataset, library, **overrides))
    alloyed = sorted({point for edge in result.alloyed_edges for point in edge})
    return postprocess(infer(dataset, result), dataset, library, alloyed=alloyed)


def _run(
    study: str,
    mode: str,
    seed: int,
    dataset: XrdDataset,
    library: PrototypeLibrary,
    truth: Sequence[Set[str]],
    cfg: TrainConfig,
    encoder: Optional[Mapping[str, object]],
) -> Tuple[StudyRun, Solution]:
    start = pendulum.now()
    solution = solve(dataset, library, cfg, encoder)
    stop = pendulum.now()
    rules = solution.rules
    assert rules is not None
    return StudyRun(
        study=study,
        mode=mode,
        seed=seed,
        points=dataset.size,
        accuracy=activation_accuracy(solution, truth),
        agreement=None,
        gibbs_rate=rules.gibbs_rate,
        gibbs_alloy_rate=rules.gibbs_alloy_rate,
        connectivity_rate=rules.connectivity_rate,
        start=start,
        stop=stop,
    ), solution


def _row(run: StudyRun) -> List[object]:
    agreement = "N/A" if run.agreement is None else run.agreement
    rates = [run.gibbs_rate, run.gibbs_alloy_rate, run.connectivity_rate]
    return [run.study, run.mode, run.seed, run.points, run.accuracy, agreement] + rates + [run.duration]


def write_results(runs: Sequence[StudyRun], csv_path: str, jsonl_path: Optional[str] = None) -> None:
    """
    Write study runs as a CSV summary and, optionally, as JSON lines.

    Args:
        runs(Sequence[StudyRun]): Runs to write
        csv_path(str): Path of the CSV summary
        jsonl_path(Optional[str]): Path of the JSON lines file, if wanted
    """
    buffer = io.StringIO()
    csvwriter = csv.writer(buffer, quoting=csv.QUOTE_ALL, lineterminator="\n")
    csvwriter.writerow(HEADERS)
    for run in runs:
        csvwriter.writerow(_row(run))
    atomic_write(csv_path, buffer.getvalue())
    if jsonl_path:
        converter = CattrConverter()
        atomic_write(jsonl_path, "".join(json.dumps(converter.unstructure(run)) + "\n" for run in runs))


def run_downscale(
    spec: SynthSpec,
    cfg: TrainConfig,
    seeds: Sequence[int] = STUDY_SEEDS,
    sides: Sequence[int] = DOWNSCALE_SIDES,
    encoder: Optional[Mapping[str, object]] = None,
) -> List[StudyRun]:
    """
    Run the down-scaling study.

    For every seed, the same phase diagram is regenerated at every lattice side, using
    the seed as the layout seed unless the request fixes one, and solved from scratch.

    Args:
        spec(SynthSpec): Benchmark request; its points_side is replaced by each of the sides
        cfg(TrainConfig): Training configuration; its seed is replaced by each of the seeds
        seeds(Sequence[int]): Seeds to run
        sides(Sequence[int]): Lattice sides to run
        encoder(Optional[Mapping[str, object]]): Encoder configuration overrides

    Returns:
        List[StudyRun]: One run per seed and side
    """
    start = pendulum.now()
    log.info("Starting down-scaling study at %s: sides %s, seeds %s", start.to_datetime_string(), list(sides), list(seeds))
    runs = []
    for seed in seeds:
        for side in sides:
            layout_seed = seed if spec.layout_seed is None else spec.layout_seed
            dataset, library, truth = generate(attr.evolve(spec, points_side=side, layout_seed=layout_seed), seed)
            run, _ = _run("downscale", "joint", seed, dataset, library, truth.active_sets, attr.evolve(cfg, seed=seed), encoder)
            log.info("Seed %d, %d points: accuracy %.4f after %.1f s", seed, run.points, run.accuracy, run.duration)
            runs.append(run)
    stop = pendulum.now()
    log.info("Down-scaling study completed after %s", stop.diff(start).in_words())  # type: ignore
    return runs


def summarize_downscale(runs: Sequence[StudyRun]) -> DownscaleSummary:
    """Mean accuracy per number of points."""
    grouped: Dict[int, List[float]] = {}
    for run in runs:
        grouped.setdefault(run.points, []).append(run.accuracy)
    return DownscaleSummary({points: _mean(values) for points, values in sorted(grouped.items())})  # type: ignore


def run_ablation(
    spec: SynthSpec,
    cfg: TrainConfig,
    seeds: Sequence[int] = STUDY_SEEDS,
    encoder: Optional[Mapping[str, object]] = None,
) -> List[StudyRun]:
    """
    Run the isolated-point ablation study.

    Every benchmark is solved jointly and then with every point in isolation.  The
    isolated run records its agreement with the joint solution.

    Args:
        spec(SynthSpec): Benchmark request, normally with overlapping prototypes
        cfg(TrainConfig): Training configuration; its seed is replaced by each of the seeds
        seeds(Sequence[int]): Seeds to run
        encoder(Optional[Mapping[str, object]]): Encoder configuration overrides

    Returns:
        List[StudyRun]: A joint and an isolated run per seed
    """
    start = pendulum.now()
    log.info("Starting ablation study at %s: seeds %s, overlap %g", start.to_datetime_string(), list(seeds), spec.overlap)
    runs = []
    for seed in seeds:
        dataset, library, truth = generate(spec, seed)
        joint_cfg, isolated_cfg = attr.evolve(cfg, seed=seed, isolated=False), attr.evolve(cfg, seed=seed, isolated=True)
        joint, solution = _run("ablation", "joint", seed, dataset, library, truth.active_sets, joint_cfg, encoder)
        isolated, alone = _run("ablation", "isolated", seed, dataset, library, truth.active_sets, isolated_cfg, encoder)
        isolated = attr.evolve(isolated, agreement=activation_accuracy(alone, solution.active_sets))
        log.info("Seed %d: joint accuracy %.4f, isolated agreement with joint %.4f", seed, joint.accuracy, isolated.agreement)
        runs += [joint, isolated]
    stop = pendulum.now()
    log.info("Ablation study completed after %s", stop.diff(start).in_words())  # type: ignore
    return runs


def summarize_ablation(runs: Sequence[StudyRun]) -> AblationSummary:
    """Mean agreement fractions of an ablation study."""
    isolated = [run.agreement for run in runs if run.mode == "isolated" and run.agreement is not None]
    joint = [run.accuracy for run in runs if run.mode == "joint"]
    return AblationSummary(_mean(isolated) or 0.0, _mean(joint) or 0.0)
