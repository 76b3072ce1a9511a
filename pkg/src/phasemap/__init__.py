from .decoder import LatentState, mix, reconstruction_loss, render_phase
from .domain import (
    CompositionGraph,
    DataError,
    Peak,
    PrototypeLibrary,
    QGrid,
    StickPattern,
    XrdDataset,
    load_dataset,
    load_prototypes,
)
from .encoder import EncoderConfig, EncoderError, encode
from .evaluation import MetricsReport, Solution, evaluate, postprocess, read_solution, write_solution
from .ndtape import ParamStore, Tape, Tensor, adam_step
from .relax import ConstraintKind, ConstraintTerm, alldiff_penalty, cardinality_penalty, entropy, ksparsity_penalty
from .synth import GroundTruth, SynthSpec, brute_force_demix, generate
from .trainer import DivergenceError, ThresholdState, TrainConfig, TrainResult, Trainer, infer, train

__all__ = [
    "CompositionGraph",
    "ConstraintKind",
    "ConstraintTerm",
    "DataError",
    "DivergenceError",
    "EncoderConfig",
    "EncoderError",
    "GroundTruth",
    "LatentState",
    "MetricsReport",
    "ParamStore",
    "Peak",
    "PrototypeLibrary",
    "QGrid",
    "Solution",
    "StickPattern",
    "SynthSpec",
    "Tape",
    "Tensor",
    "ThresholdState",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "XrdDataset",
    "adam_step",
    "alldiff_penalty",
    "brute_force_demix",
    "cardinality_penalty",
    "encode",
    "entropy",
    "evaluate",
    "generate",
    "infer",
    "ksparsity_penalty",
    "load_dataset",
    "load_prototypes",
    "mix",
    "postprocess",
    "read_solution",
    "reconstruction_loss",
    "render_phase",
    "train",
    "write_solution",
]
