# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Implementations for command-line (CLI) tools.

The phasemap script dispatches to one function per subcommand, each taking the full
argument vector plus the output streams.  Usage problems exit with status 2 (via
argparse), failures during the work exit with status 1, and success exits with 0.
"""

import argparse
import logging
import os
import sys
from typing import IO, Any, Dict, List, Optional, Tuple

import pendulum

from .domain import QGrid, load_dataset, load_prototypes
from .evaluation import CUTOFF, evaluate, metrics_rows, postprocess, read_solution, write_metrics, write_solution
from .ndtape import save_checkpoint
from .render import write_report
from .simulation import (
    ABLATION_OVERLAP,
    DOWNSCALE_SIDES,
    STUDY_SEEDS,
    run_ablation,
    run_downscale,
    summarize_ablation,
    summarize_downscale,
    write_results,
)
from .synth import SynthSpec, generate as generate_benchmark, read_truth, write_benchmark
from .trainer import DivergenceError, TrainConfig, default_encoder, infer, search_learning_rate, train, write_training_log
from .util import read_properties

log = logging.getLogger(__name__)

_SUBCOMMANDS = {"generate": "generate", "solve": "solve", "evaluate": "evaluate_solution", "report": "report", "study": "study"}
_GLOBAL_KEYS = {"config", "verbose", "debug"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}

# Defaults used by the solve and study CLIs, in the CLI's own units
_DEFAULT_HIDDEN = "1024,1024,512"
_DEFAULT_AMPLITUDE_HIDDEN = "512,512,32"

# Names of the files written by the solve CLI
SOLUTION_FILE = "solution.json"
TRAINING_LOG_FILE = "training.jsonl"
CHECKPOINT_FILE = "checkpoint.npz"


def _sizes(value: str) -> Tuple[int, ...]:
    """Parse a comma-separated list of positive integers."""
    try:
        sizes = tuple(int(item) for item in value.split(",") if item.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError("expected comma-separated integers, got %r" % value) from e
    if not sizes or any(size < 1 for size in sizes):
        raise argparse.ArgumentTypeError("expected positive sizes, got %r" % value)
    return sizes


def _seeds(value: str) -> Tuple[int, ...]:
    """Parse a comma-separated list of non-negative seeds."""
    try:
        seeds = tuple(int(item) for item in value.split(",") if item.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError("expected comma-separated integers, got %r" % value) from e
    if not seeds or any(seed < 0 for seed in seeds):
        raise argparse.ArgumentTypeError("expected non-negative seeds, got %r" % value)
    return seeds


def _common() -> argparse.ArgumentParser:
    """Arguments accepted by every subcommand."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", type=str, help="Path to a key=value file of defaults, keyed by option name")
    parser.add_argument("--verbose", action="store_true", help="Log progress messages")
    parser.add_argument("--debug", action="store_true", help="Log debugging messages")
    return parser


def _add_training_arguments(parser: argparse.ArgumentParser) -> None:
    """Training and encoder options shared by solve and study."""
    defaults = TrainConfig()
    parser.add_argument("--lr", type=float, default=defaults.lr, help="Adam learning rate (the search tries 0.0001, 0.0005, 0.001)")
    parser.add_argument("--steps", type=int, default=defaults.steps, help="Number of optimization steps")
    parser.add_argument("--paths-per-step", type=int, default=defaults.paths_per_step, help="Number of graph paths per batch")
    parser.add_argument("--path-len", type=int, default=defaults.path_len, help="Maximum number of points on a path")
    parser.add_argument("--pool-size", type=int, default=defaults.pool_size, help="Number of paths in the sampled pool")
    parser.add_argument("--lambda-ksparsity", type=float, default=defaults.lambda_ksparsity, help="Initial k-sparsity weight")
    parser.add_argument(
        "--lambda-connectivity", type=float, default=defaults.lambda_connectivity, help="Initial connectivity weight"
    )
    parser.add_argument("--lambda-shift", type=float, default=defaults.lambda_shift, help="Initial alloy-gate shift weight")
    parser.add_argument("--alloy-warmup", type=int, default=defaults.alloy_warmup, help="Steps before alloy detection starts")
    parser.add_argument("--seed", type=int, default=defaults.seed, help="Random seed")
    parser.add_argument("--workers", type=int, default=defaults.workers, help="Threads for inference and the learning rate search")
    parser.add_argument("--hidden", type=_sizes, default=_DEFAULT_HIDDEN, help="Hidden sizes of the prob, shift and width heads")
    parser.add_argument(
        "--amplitude-hidden", type=_sizes, default=_DEFAULT_AMPLITUDE_HIDDEN, help="Hidden sizes of the amplitude head"
    )


def _train_config(parser: argparse.ArgumentParser, args: argparse.Namespace, **overrides: Any) -> TrainConfig:
    try:
        return TrainConfig(
            lr=args.lr,
            steps=args.steps,
            paths_per_step=args.paths_per_step,
            path_len=args.path_len,
            pool_size=args.pool_size,
            lambda_ksparsity=args.lambda_ksparsity,
            lambda_connectivity=args.lambda_connectivity,
            lambda_shift=args.lambda_shift,
            alloy_warmup=args.alloy_warmup,
            seed=args.seed,
            workers=args.workers,
            **overrides,
        )
    except ValueError as e:
        parser.error(str(e))


def _encoder_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {"hidden": args.hidden, "amplitude_hidden": args.amplitude_hidden}


def _boolean(parser: argparse.ArgumentParser, key: str, value: str) -> bool:
    if value.lower() in _TRUE:
        return True
    if value.lower() in _FALSE:
        return False
    parser.error("--config: expected a boolean for %s, got %r" % (key, value))


def _parse(parser: argparse.ArgumentParser, argv: List[str]) -> argparse.Namespace:
    """
    Parse a subcommand's arguments, applying defaults from any --config file.

    Flags take precedence over the config file, which takes precedence over the
    built-in defaults.  Config keys are option names with dashes or underscores.
    """
    args = parser.parse_args(args=argv[2:])
    if args.config:
        if not os.path.isfile(args.config):
            parser.error("--config: file not found: %s" % args.config)
        actions = {action.dest: action for action in parser._actions}  # pylint: disable=protected-access
        defaults: Dict[str, Any] = {}
        for key, value in read_properties(args.config).items():
            dest = key.replace("-", "_")
            if dest not in actions or dest in _GLOBAL_KEYS or dest == "help":
                parser.error("--config: unknown key %s" % key)
            defaults[dest] = _boolean(parser, key, value) if actions[dest].nargs == 0 else value
        parser.set_defaults(**defaults)
        args = parser.parse_args(args=argv[2:])
    _configure_logging(args)
    return args


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.debug else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def _require_file(parser: argparse.ArgumentParser, flag: str, path: Optional[str]) -> None:
    if path is not None and not os.path.isfile(path):
        parser.error("%s: file not found: %s" % (flag, path))


def generate(argv: List[str], stdout: IO[str], unused_stderr: IO[str]) -> None:
    """Generate a synthetic benchmark with known ground truth."""
    defaults = SynthSpec()
    parser = argparse.ArgumentParser(
        prog="phasemap generate",
        parents=[_common()],
        description="Generate a synthetic phase-mapping benchmark with known ground truth.",
        epilog="Writes dataset.csv, dataset.meta, prototypes.csv and truth.csv into the output directory. "
        "A lattice of side S has S(S+1)/2 composition points.",
    )
    parser.add_argument("--out", type=str, required=True, help="Output directory")
    parser.add_argument("--phases", type=int, default=defaults.phases, help="Number of prototype phases")
    parser.add_argument("--points-side", type=int, default=defaults.points_side, help="Side of the composition lattice")
    parser.add_argument("--seed", type=int, default=0, help="Random seed")
    parser.add_argument("--layout-seed", type=int, default=None, help="Seed for the phase diagram, the seed if not given")
    parser.add_argument("--peaks-min", type=int, default=defaults.peaks[0], help="Fewest peaks per prototype")
    parser.add_argument("--peaks-max", type=int, default=defaults.peaks[1], help="Most peaks per prototype")
    parser.add_argument("--q-min", type=float, default=defaults.grid.q_min, help="Lowest Q, in nm^-1")
    parser.add_argument("--q-max", type=float, default=defaults.grid.q_max, help="Highest Q, in nm^-1")
    parser.add_argument("--d", type=int, default=defaults.grid.d, help="Number of Q samples")
    parser.add_argument("--alloy-gradient", type=float, default=defaults.alloy_gradient, help="Shift range across an alloyed field")
    parser.add_argument("--alloyed-fields", type=int, default=defaults.alloyed_fields, help="Number of alloyed phase fields")
    parser.add_argument("--noise", type=float, default=defaults.noise, help="Standard deviation of the additive noise")
    parser.add_argument("--sigma", type=float, default=defaults.sigma, help="Peak width, in nm^-1")
    parser.add_argument(
        "--overlap", type=float, default=defaults.overlap, help="Fraction of peaks shared with the previous prototype"
    )
    parser.add_argument("--combinations", type=int, default=None, help="Required number of unique phase combinations")
    args = _parse(parser, argv)

    if args.phases < 1:
        parser.error("--phases: there must be at least 1 phase")
    try:
        spec = SynthSpec(
            phases=args.phases,
            peaks=(args.peaks_min, args.peaks_max),
            grid=QGrid(args.q_min, args.q_max, args.d),
            points_side=args.points_side,
            layout_seed=args.layout_seed,
            alloy_gradient=args.alloy_gradient,
            noise=args.noise,
            sigma=args.sigma,
            alloyed_fields=args.alloyed_fields,
            overlap=args.overlap,
            combinations=args.combinations,
        )
    except ValueError as e:
        parser.error(str(e))

    dataset, library, truth = generate_benchmark(spec, args.seed)
    for path in write_benchmark(args.out, dataset, library, truth, spec):
        stdout.write("Wrote %s\n" % path)
    combinations = truth.combinations
    stdout.write("Generated %d points, %d phases, %d unique phase combinations\n" % (dataset.size, len(library), combinations))


def solve(argv: List[str], stdout: IO[str], unused_stderr: IO[str]) -> None:
    """Solve a dataset: train, post-process, and write the solution."""
    parser = argparse.ArgumentParser(
        prog="phasemap solve",
        parents=[_common()],
        description="Solve a phase-mapping problem with constraint-aware SGD.",
        epilog="Writes %s, %s and %s into the output directory." % (SOLUTION_FILE, TRAINING_LOG_FILE, CHECKPOINT_FILE),
    )
    parser.add_argument("--dataset", type=str, required=True, help="Path to the dataset CSV (with its .meta companion)")
    parser.add_argument("--prototypes", type=str, required=True, help="Path to the prototype CSV")
    parser.add_argument("--out", type=str, required=True, help="Output directory")
    parser.add_argument("--cutoff", type=float, default=CUTOFF, help="Activations below this value are dropped")
    parser.add_argument("--lr-search", action="store_true", help="Train once per learning rate and keep the best")
    parser.add_argument("--isolated", action="store_true", help="Solve every point in isolation, without pairwise penalties")
    _add_training_arguments(parser)
    args = _parse(parser, argv)

    _require_file(parser, "--dataset", args.dataset)
    _require_file(parser, "--prototypes", args.prototypes)
    if not 0.0 <= args.cutoff < 1.0:
        parser.error("--cutoff: must be in [0, 1)")
    cfg = _train_config(parser, args, isolated=args.isolated)

    start = pendulum.now()
    dataset = load_dataset(args.dataset)
    library = load_prototypes(args.prototypes, dataset.grid)
    try:
        encoder = default_encoder(dataset, library, **_encoder_overrides(args))
    except ValueError as e:
        parser.error(str(e))
    try:
        result = search_learning_rate(dataset, library, cfg, encoder) if args.lr_search else train(dataset, library, cfg, encoder)
    except DivergenceError as e:
        checkpoint = os.path.join(args.out, CHECKPOINT_FILE)
        save_checkpoint(e.store, checkpoint)
        raise RuntimeError("Training diverged: %s; last good parameters saved to %s" % (e, checkpoint)) from e

    alloyed = sorted({point for edge in result.alloyed_edges for point in edge})
    solution = postprocess(infer(dataset, result), dataset, library, args.cutoff, alloyed)
    write_solution(solution, os.path.join(args.out, SOLUTION_FILE))
    write_training_log(result.records, os.path.join(args.out, TRAINING_LOG_FILE))
    save_checkpoint(result.store, os.path.join(args.out, CHECKPOINT_FILE))
    stop = pendulum.now()

    rules = solution.rules
    assert rules is not None
    final = result.records[-1].loss if result.records else float("nan")
    elapsed = stop.diff(start).in_words()  # type: ignore
    stdout.write("Solved %d points against %d phases in %s\n" % (dataset.size, len(library), elapsed))
    stdout.write("Learning rate: %g\n" % result.config.lr)
    stdout.write("Final loss: %.6f\n" % final)
    stdout.write("Mean JS reconstruction: %.6f\n" % float(solution.js.mean()))
    stdout.write("Active phases: %s\n" % ", ".join(solution.active_phases))
    stdout.write("Gibbs rate: %.4f\n" % rules.gibbs_rate)
    stdout.write("Gibbs alloy rate: %.4f\n" % rules.gibbs_alloy_rate)
    stdout.write("Connectivity rate: %.4f\n" % rules.connectivity_rate)
    stdout.write("Alloyed points: %d\n" % len(rules.alloyed))


def evaluate_solution(argv: List[str], stdout: IO[str], unused_stderr: IO[str]) -> None:
    """Compute metrics for a solution, optionally against ground truth."""
    parser = argparse.ArgumentParser(
        prog="phasemap evaluate",
        parents=[_common()],
        description="Compute reconstruction, fidelity and rule metrics for a solution.",
        epilog="Activation accuracy is reported as N/A unless ground truth is given.",
    )
    parser.add_argument("--solution", type=str, required=True, help="Path to the solution JSON")
    parser.add_argument("--dataset", type=str, required=True, help="Path to the dataset CSV (with its .meta companion)")
    parser.add_argument("--prototypes", type=str, required=True, help="Path to the prototype CSV")
    parser.add_argument("--truth", type=str, default=None, help="Path to the ground-truth CSV")
    parser.add_argument("--out", type=str, default=None, help="Path to the metrics CSV to write")
    args = _parse(parser, argv)

    _require_file(parser, "--solution", args.solution)
    _require_file(parser, "--dataset", args.dataset)
    _require_file(parser, "--prototypes", args.prototypes)
    _require_file(parser, "--truth", args.truth)

    solution = read_solution(args.solution)
    dataset = load_dataset(args.dataset)
    library = load_prototypes(args.prototypes, dataset.grid)
    truth = read_truth(args.truth, library, dataset.size).active_sets if args.truth else None
    report = evaluate(solution, dataset, library, truth)
    for metric, value in metrics_rows(report):
        stdout.write("%s: %s\n" % (metric, value))
    if args.out:
        write_metrics(report, args.out)
        stdout.write("Wrote %s\n" % args.out)


def report(argv: List[str], stdout: IO[str], unused_stderr: IO[str]) -> None:
    """Render SVG figures for a solution."""
    parser = argparse.ArgumentParser(
        prog="phasemap report",
        parents=[_common()],
        description="Render SVG figures for a solution.",
        epilog="Writes one phase-<id>.svg per active phase and reconstruction.svg into the output directory.",
    )
    parser.add_argument("--solution", type=str, required=True, help="Path to the solution JSON")
    parser.add_argument("--prototypes", type=str, required=True, help="Path to the prototype CSV")
    parser.add_argument("--out", type=str, required=True, help="Output directory")
    args = _parse(parser, argv)

    _require_file(parser, "--solution", args.solution)
    _require_file(parser, "--prototypes", args.prototypes)

    solution = read_solution(args.solution)
    library = load_prototypes(args.prototypes, solution.grid)
    for path in write_report(solution, library, args.out):
        stdout.write("Wrote %s\n" % path)


def study(argv: List[str], stdout: IO[str], unused_stderr: IO[str]) -> None:
    """Run the down-scaling or ablation study."""
    sides = ",".join(str(side) for side in DOWNSCALE_SIDES)
    parser = argparse.ArgumentParser(
        prog="phasemap study",
        parents=[_common()],
        description="Run a study on synthetic benchmarks.",
        epilog="The downscale study solves the same phase diagram on lattice sides %s; the ablation study "
        "compares isolated-point solving to joint solving on overlapping prototypes." % sides,
    )
    parser.add_argument("name", type=str, choices=["downscale", "ablation"], help="Study to run")
    parser.add_argument("--out", type=str, default="study.csv", help="Path to the CSV summary")
    parser.add_argument("--jsonl", type=str, default=None, help="Path to the JSON lines results file")
    parser.add_argument("--seeds", type=_seeds, default=",".join(str(seed) for seed in STUDY_SEEDS), help="Comma-separated seeds")
    parser.add_argument("--sides", type=_sizes, default=sides, help="Lattice sides (downscale)")
    parser.add_argument("--phases", type=int, default=SynthSpec().phases, help="Number of prototype phases")
    parser.add_argument("--overlap", type=float, default=ABLATION_OVERLAP, help="Prototype overlap (ablation)")
    _add_training_arguments(parser)
    args = _parse(parser, argv)

    if args.phases < 1:
        parser.error("--phases: there must be at least 1 phase")
    cfg = _train_config(parser, args)
    encoder = _encoder_overrides(args)
    if args.name == "downscale":
        runs = run_downscale(SynthSpec(phases=args.phases), cfg, args.seeds, args.sides, encoder)
        write_results(runs, args.out, args.jsonl)
        for points, accuracy in summarize_downscale(runs).accuracy.items():
            stdout.write("%d points: mean accuracy %.4f\n" % (points, accuracy))
    else:
        try:
            spec = SynthSpec(phases=args.phases, overlap=args.overlap)
        except ValueError as e:
            parser.error(str(e))
        runs = run_ablation(spec, cfg, args.seeds, encoder)
        write_results(runs, args.out, args.jsonl)
        summary = summarize_ablation(runs)
        stdout.write("Isolated agrees with joint: %.4f\n" % summary.isolated_vs_joint)
        stdout.write("Joint agrees with truth: %.4f\n" % summary.joint_vs_truth)
    stdout.write("Wrote %s\n" % args.out)


def _lookup_method(method: str) -> Any:
    """Look up the function in this module that implements the named subcommand."""
    if method not in _SUBCOMMANDS:
        raise AttributeError("Unknown subcommand: %s" % method)
    module = sys.modules[__name__]
    return getattr(module, _SUBCOMMANDS[method])


def run(argv: List[str], stdout: IO[str], stderr: IO[str]) -> int:
    """
    Run the subcommand named by argv[1], returning the exit status.

    Args:
        argv(List[str]): Full argument vector, starting with the program name
        stdout(IO[str]): Stream for normal output
        stderr(IO[str]): Stream for error messages

    Returns:
        int: 0 on success, 1 if the work failed, 2 on a usage error
    """
    if len(argv) < 2:
        stderr.write("usage: phasemap {%s} [options]\n" % ",".join(_SUBCOMMANDS))
        return 2
    if argv[1] in ("-h", "--help"):
        stdout.write("usage: phasemap {%s} [options]\n" % ",".join(_SUBCOMMANDS))
        return 0
    try:
        method = _lookup_method(argv[1])
    except AttributeError:
        stderr.write("phasemap: error: unknown subcommand %s, expected one of %s\n" % (argv[1], ", ".join(_SUBCOMMANDS)))
        return 2
    try:
        method(argv, stdout, stderr)
    except SystemExit as e:
        return 0 if e.code is None else e.code if isinstance(e.code, int) else 2
    except (ValueError, RuntimeError, OSError) as e:
        log.debug("Subcommand %s failed", argv[1], exc_info=True)
        stderr.write("phasemap %s: error: %s\n" % (argv[1], e))
        return 1
    return 0


def main() -> None:
    """Entry point for the phasemap script."""
    sys.exit(run(sys.argv, sys.stdout, sys.stderr))
