# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Encoder networks that map an XRD pattern to its interpretable latent state.

There are four independent fully-connected heads, each with three hidden ReLU
layers and a linear output layer:

- ``prob``: M outputs, softmax into phase probabilities
- ``shift``: M outputs, alpha = 1 + s_max * tanh(raw)
- ``width``: M outputs, sigma = sigma_min + (sigma_max - sigma_min) * logistic(raw)
- ``amplitude``: M * K outputs, b = b_min + (b_max - b_min) * logistic(raw)

Parameters are named ``<head>.w<layer>`` and ``<head>.b<layer>``, with weights of
shape (fan_in, fan_out), so a batch of patterns is a (B, D) matrix multiplied from
the left.

Attributes:
    HEADS(Tuple[str, ...]): Head names, in parameter order
    DEFAULT_HIDDEN(Tuple[int, ...]): Default hidden sizes of the prob, shift and width heads
    DEFAULT_AMPLITUDE_HIDDEN(Tuple[int, ...]): Default hidden sizes of the amplitude head
"""

from __future__ import annotations  # see: https://stackoverflow.com/a/33533514/2907667

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Mapping, Tuple

import attr
import numpy as np

from .decoder import LatentState
from .domain import K_MAX
from .ndtape import ParamStore, Tensor, relu, sigmoid, softmax, tanh

log = logging.getLogger(__name__)

HEADS = ("prob", "shift", "width", "amplitude")
DEFAULT_HIDDEN = (1024, 1024, 512)
DEFAULT_AMPLITUDE_HIDDEN = (512, 512, 32)


class EncoderError(ValueError):
    """Raised when an encoder head produces non-finite activations."""


def _sizes(value: Tuple[int, ...]) -> Tuple[int, ...]:
    return tuple(int(size) for size in value)


@attr.s(frozen=True)
class EncoderConfig:
    """
    Encoder architecture and latent bounds.

    Attributes:
        d(int): Input size, the number of Q grid samples
        m(int): Number of phases
        k_max(int): Number of amplitude factors per phase
        hidden(Tuple[int, ...]): Hidden layer sizes of the prob, shift and width heads
        amplitude_hidden(Tuple[int, ...]): Hidden layer sizes of the amplitude head
        s_max(float): Maximum fractional peak shift
        sigma_min(float): Minimum peak width, in nm^-1
        sigma_max(float): Maximum peak width, in nm^-1
        b_min(float): Minimum amplitude factor
        b_max(float): Maximum amplitude factor
    """

    d = attr.ib(type=int)
    m = attr.ib(type=int)
    k_max = attr.ib(default=K_MAX, type=int)
    hidden = attr.ib(default=DEFAULT_HIDDEN, type=Tuple[int, ...], converter=_sizes)
    amplitude_hidden = attr.ib(default=DEFAULT_AMPLITUDE_HIDDEN, type=Tuple[int, ...], converter=_sizes)
    s_max = attr.ib(default=0.05, type=float)
    sigma_min = attr.ib(default=0.1, type=float)
    sigma_max = attr.ib(default=0.5, type=float)
    b_min = attr.ib(default=0.5, type=float)
    b_max = attr.ib(default=2.0, type=float)

    @d.validator
    @m.validator
    @k_max.validator
    def _check_size(self, attribute: attr.Attribute, value: int) -> None:  # type: ignore
        if value < 1:
            raise ValueError("Encoder %s must be at least 1" % attribute.name)

    @hidden.validator
    @amplitude_hidden.validator
    def _check_hidden(self, attribute: attr.Attribute, value: Tuple[int, ...]) -> None:  # type: ignore
        if not value or any(size < 1 for size in value):
            raise ValueError("Encoder %s sizes must all be at least 1" % attribute.name)

    @s_max.validator
    def _check_s_max(self, _attribute: str, value: float) -> None:
        if not 0.0 < value < 1.0:
            raise ValueError("Maximum shift must be in (0, 1)")

    @sigma_max.validator
    def _check_sigma(self, _attribute: str, value: float) -> None:
        if not 0.0 < self.sigma_min < value:
            raise ValueError("Peak width bounds must satisfy 0 < sigma_min < sigma_max")

    @b_max.validator
    def _check_b(self, _attribute: str, value: float) -> None:
        if not 0.0 < self.b_min < value:
            raise ValueError("Amplitude bounds must satisfy 0 < b_min < b_max")

    @property
    def sigma_mid(self) -> float:
        return (self.sigma_min + self.sigma_max) / 2.0

    @property
    def b_mid(self) -> float:
        return (self.b_min + self.b_max) / 2.0

    def layers(self, head: str) -> List[int]:
        """Return the layer sizes of a head, input first and output last."""
        if head == "amplitude":
            return [self.d] + list(self.amplitude_hidden) + [self.m * self.k_max]
        return [self.d] + list(self.hidden) + [self.m]


@attr.s(frozen=True)
class LatentTensors:
    """Latent state of a batch, as tensors that may be recorded on a tape."""

    p = attr.ib(type=Tensor)
    alpha = attr.ib(type=Tensor)
    sigma = attr.ib(type=Tensor)
    b = attr.ib(type=Tensor)

    def unbatch(self) -> List[LatentState]:
        """Split into one LatentState per batch row."""
        rows = zip(self.p.value, self.alpha.value, self.sigma.value, self.b.value)
        return [LatentState(p, alpha, sigma, b) for p, alpha, sigma, b in rows]


def parameter_count(cfg: EncoderConfig) -> int:
    """Number of scalar parameters in all four heads."""
    total = 0
    for head in HEADS:
        sizes = cfg.layers(head)
        total += sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(sizes, sizes[1:]))
    return total


def init_params(cfg: EncoderConfig, seed: int) -> ParamStore:
    """
    Create encoder parameters.

    Weights are He-uniform and biases are zero.  The output layers of the shift, width
    and amplitude heads are all zero, so a fresh encoder renders every prototype with
    alpha=1 and sigma, b at the midpoint of their bounds.

    Args:
        cfg(EncoderConfig): Encoder configuration
        seed(int): Random seed; the same seed gives bit-identical parameters

    Returns:
        ParamStore: Parameters with zero optimizer state
    """
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for head in HEADS:
        sizes = cfg.layers(head)
        last = len(sizes) - 2
        for layer, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            limit = np.sqrt(6.0 / fan_in)
            weights = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            if layer == last and head != "prob":
                weights = np.zeros((fan_in, fan_out))
            params["%s.w%d" % (head, layer)] = weights
            params["%s.b%d" % (head, layer)] = np.zeros(fan_out)
    log.debug("Initialized %d encoder parameters with seed %d", parameter_count(cfg), seed)
    return ParamStore(params)


def _head(x: Tensor, params: Mapping[str, Tensor], cfg: EncoderConfig, head: str) -> Tensor:
    layers = len(cfg.layers(head)) - 1
    hidden = x
    for layer in range(layers):
        hidden = hidden @ params["%s.w%d" % (head, layer)] + params["%s.b%d" % (head, layer)]
        if layer < layers - 1:
            hidden = relu(hidden)
    if not np.all(np.isfinite(hidden.value)):
        raise EncoderError("Encoder head %s produced non-finite activations" % head)
    return hidden


def forward(x: Tensor, params: Mapping[str, Tensor], cfg: EncoderConfig) -> LatentTensors:
    """
    Run all four heads over a batch of patterns.

    Args:
        x(Tensor): Patterns, shape (B, D)
        params(Mapping[str, Tensor]): Parameters, either watched on a tape or constants
        cfg(EncoderConfig): Encoder configuration

    Returns:
        LatentTensors: Latents with shapes (B, M), (B, M), (B, M) and (B, M, K)

    Raises:
        EncoderError: If the input or any head is not finite
    """
    if x.ndim != 2 or x.shape[1] != cfg.d:
        raise EncoderError("Expected patterns of shape (B, %d), got %s" % (cfg.d, x.shape))
    if not np.all(np.isfinite(x.value)):
        raise EncoderError("Input patterns must be finite")
    batch = x.shape[0]
    p = softmax(_head(x, params, cfg, "prob"), axis=1)
    alpha = tanh(_head(x, params, cfg, "shift")) * cfg.s_max + 1.0
    sigma = sigmoid(_head(x, params, cfg, "width")) * (cfg.sigma_max - cfg.sigma_min) + cfg.sigma_min
    b = sigmoid(_head(x, params, cfg, "amplitude")) * (cfg.b_max - cfg.b_min) + cfg.b_min
    return LatentTensors(p, alpha, sigma, b.reshape(batch, cfg.m, cfg.k_max))


def encode(x: np.ndarray, store: ParamStore, cfg: EncoderConfig) -> LatentState:
    """Encode a single pattern of D intensities, without recording gradients."""
    pattern = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return forward(Tensor(pattern), store.constants(), cfg).unbatch()[0]


def encode_patterns(
    patterns: np.ndarray, store: ParamStore, cfg: EncoderConfig, workers: int = 1, chunk: int = 256
) -> List[LatentState]:
    """
    Encode every row of a pattern matrix, without recording gradients.

    Rows are processed in chunks.  With more than one worker, chunks are evaluated on a
    thread pool; parameters are only read, so results do not depend on the worker count.

    Args:
        patterns(np.ndarray): Patterns, shape (N, D)
        store(ParamStore): Encoder parameters
        cfg(EncoderConfig): Encoder configuration
        workers(int): Number of threads
        chunk(int): Rows per chunk

    Returns:
        List[LatentState]: One latent state per row
    """
    patterns = np.asarray(patterns, dtype=np.float64)
    params = store.constants()
    starts = range(0, patterns.shape[0], chunk)

    def run(start: int) -> List[LatentState]:
        return forward(Tensor(patterns[start : start + chunk]), params, cfg).unbatch()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run, starts))
    else:
        results = [run(start) for start in starts]
    return [latent for result in results for latent in result]
