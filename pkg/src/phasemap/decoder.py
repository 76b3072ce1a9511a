# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Fixed generative decoder.

Each prototype is rendered as a Gaussian mixture on the Q grid, under a latent
modification: a multiplicative shift of every peak location, one shared peak width,
and a per-peak amplitude factor.  Rendered phases are mixed by their activation
probabilities to reconstruct a measured pattern.

The batched functions operate on ndtape tensors, so the trainer can differentiate
through them.  The single-pattern functions are NumPy conveniences built on top of
the batched ones.

Attributes:
    TRUNCATION(float): Gaussians are cut off beyond this many widths from their center
    JS_EPSILON(float): Added to every intensity before area normalization in the JS distance
    JS_WEIGHT(float): Weight of the JS distance in the reconstruction loss
    L2_WEIGHT(float): Weight of the L2 distance in the reconstruction loss
"""

from __future__ import annotations  # see: https://stackoverflow.com/a/33533514/2907667

import logging
from typing import Optional, Sequence, Tuple, Union

import attr
import numpy as np

from .domain import PeakTable, QGrid, StickPattern
from .ndtape import Tensor, as_tensor, exp, log, relu, sqrt, square

logger = logging.getLogger(__name__)

TRUNCATION = 4.0
JS_EPSILON = 1e-9
JS_WEIGHT = 20.0
L2_WEIGHT = 0.05


class DecoderError(ValueError):
    """Raised when the decoder is given inputs it cannot render or compare."""


@attr.s(frozen=True, eq=False)
class LatentState:
    """
    The interpretable latent state of one data point.

    Attributes:
        p(np.ndarray): Phase activation probabilities, shape (M,)
        alpha(np.ndarray): Multiplicative shift ratios, shape (M,)
        sigma(np.ndarray): Peak widths in nm^-1, shape (M,)
        b(np.ndarray): Per-peak amplitude factors, shape (M, K)
    """

    p = attr.ib(type=np.ndarray, converter=lambda value: np.asarray(value, dtype=np.float64))
    alpha = attr.ib(type=np.ndarray, converter=lambda value: np.asarray(value, dtype=np.float64))
    sigma = attr.ib(type=np.ndarray, converter=lambda value: np.asarray(value, dtype=np.float64))
    b = attr.ib(type=np.ndarray, converter=lambda value: np.asarray(value, dtype=np.float64))

    @p.validator
    def _check_p(self, _attribute: str, value: np.ndarray) -> None:
        if value.ndim != 1 or np.any(value < 0.0) or abs(value.sum() - 1.0) > 1e-9:
            raise DecoderError("Phase probabilities must be a non-negative vector summing to 1")

    @b.validator
    def _check_shapes(self, _attribute: str, value: np.ndarray) -> None:
        phases = self.p.shape[0]
        if self.alpha.shape != (phases,) or self.sigma.shape != (phases,) or value.ndim != 2 or value.shape[0] != phases:
            raise DecoderError("Latent shapes are inconsistent for %d phases" % phases)


@attr.s(frozen=True, eq=False)
class PhaseRender:
    """
    A rendered phase-pure pattern on the shared Q grid.

    Attributes:
        pattern(np.ndarray): Non-negative intensities, max-normalized to 1 when any peak is in range
        out_of_range(bool): Whether every shifted peak fell outside the grid, giving a zero pattern
    """

    pattern = attr.ib(type=np.ndarray)
    out_of_range = attr.ib(default=False, type=bool)


def _max_normalize(patterns: Tensor, axis: int) -> Tuple[Tensor, np.ndarray]:
    """Divide by the maximum along an axis; all-zero slices stay zero."""
    peak = patterns.max(axis=axis, keepdims=True)
    empty = peak.value <= 0.0
    return patterns / (peak + empty.astype(np.float64)), np.squeeze(empty, axis=axis)


def render_phases(
    table: PeakTable, alpha: Tensor, sigma: Tensor, b: Tensor, grid: QGrid, normalize: bool = True
) -> Tuple[Tensor, np.ndarray]:
    """
    Render every phase of a batch of latent states.

    pattern(q) = sum_k b_k a_k exp(-(q - alpha q_k)^2 / (2 sigma^2)), truncated at
    TRUNCATION widths, then max-normalized per phase.

    Args:
        table(PeakTable): Prototype peaks, shape (M, K)
        alpha(Tensor): Shift ratios, shape (B, M)
        sigma(Tensor): Peak widths, shape (B, M), strictly positive
        b(Tensor): Amplitude factors, shape (B, M, K)
        grid(QGrid): The Q grid
        normalize(bool): Whether to max-normalize each phase

    Returns:
        Tuple[Tensor, np.ndarray]: Renders of shape (B, M, D), and a (B, M) flag marking all-zero renders
    """
    batch, phases = alpha.shape
    peaks = table.peaks
    if sigma.shape != (batch, phases) or b.shape != (batch, phases, peaks) or table.phases != phases:
        shapes = (alpha.shape, sigma.shape, b.shape, phases, peaks)
        raise DecoderError("Latent shapes alpha=%s sigma=%s b=%s do not match %d phases with %d peaks" % shapes)
    if np.any(sigma.value <= 0.0) or np.any(alpha.value <= 0.0):
        raise DecoderError("Peak widths and shift ratios must be strictly positive")

    q = grid.values.reshape(1, 1, 1, grid.d)
    centers = alpha.reshape(batch, phases, 1) * table.positions[None, :, :]
    offset = q - centers.reshape(batch, phases, peaks, 1)
    width = sigma.reshape(batch, phases, 1, 1)
    window = (np.abs(offset.value) <= TRUNCATION * width.value) & (table.intensities[None, :, :, None] > 0.0)
    gaussians = exp(square(offset / width) * -0.5) * window.astype(np.float64)
    weights = (b * table.intensities[None, :, :]).reshape(batch, phases, peaks, 1)
    patterns = (gaussians * weights).sum(axis=2)
    if not normalize:
        return patterns, patterns.value.max(axis=2) <= 0.0
    rendered, empty = _max_normalize(patterns, axis=2)
    if np.any(empty):
        logger.debug("%d rendered phase(s) have every peak outside the grid", int(empty.sum()))
    return rendered, empty


def mix_batch(renders: Tensor, p: Tensor) -> Tensor:
    """
    Mix rendered phases by their probabilities and max-normalize the result.

    Args:
        renders(Tensor): Rendered phases, shape (B, M, D)
        p(Tensor): Phase probabilities, shape (B, M)

    Returns:
        Tensor: Reconstructed patterns, shape (B, D)
    """
    batch, phases, _ = renders.shape
    if p.shape != (batch, phases):
        raise DecoderError("Probabilities of shape %s do not match renders of shape %s" % (p.shape, renders.shape))
    mixed = (renders * p.reshape(batch, phases, 1)).sum(axis=1)
    return _max_normalize(mixed, axis=1)[0]


def _area_normalize(patterns: Tensor) -> Tensor:
    shifted = patterns + JS_EPSILON
    return shifted / shifted.sum(axis=1, keepdims=True)


def _check_area(*patterns: np.ndarray) -> None:
    for pattern in patterns:
        if np.any(pattern.sum(axis=-1) <= 0.0):
            raise DecoderError("Cannot compare a pattern with zero area")


def js_distance_batch(xhat: Tensor, x: Union[Tensor, np.ndarray]) -> Tensor:
    """
    Jensen-Shannon distance (natural log) between area-normalized patterns, per row.

    Returns:
        Tensor: Distances of shape (B,), each in [0, sqrt(ln 2)]
    """
    x = as_tensor(x)
    _check_area(xhat.value, x.value)
    p, q = _area_normalize(xhat), _area_normalize(x)
    m = (p + q) * 0.5
    log_m = log(m)
    divergence = (p * (log(p) - log_m)).sum(axis=1) * 0.5 + (q * (log(q) - log_m)).sum(axis=1) * 0.5
    return sqrt(relu(divergence))


def l2_distance_batch(xhat: Tensor, x: Union[Tensor, np.ndarray]) -> Tensor:
    """Euclidean distance between patterns, per row."""
    return sqrt(square(xhat - x).sum(axis=1))


def reconstruction_loss_batch(xhat: Tensor, x: Union[Tensor, np.ndarray]) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Reconstruction loss per row: JS_WEIGHT * JS distance + L2_WEIGHT * L2 distance.

    Returns:
        Tuple[Tensor, Tensor, Tensor]: Total loss, JS distance and L2 distance, each of shape (B,)
    """
    js = js_distance_batch(xhat, x)
    l2 = l2_distance_batch(xhat, x)
    return js * JS_WEIGHT + l2 * L2_WEIGHT, js, l2


def render_table(
    table: PeakTable,
    alpha: np.ndarray,
    sigma: np.ndarray,
    b: Optional[np.ndarray],
    grid: QGrid,
    normalize: bool = True,
    chunk: int = 32,
) -> np.ndarray:
    """Render a batch of latent modifications with NumPy arrays, in chunks of rows, returning shape (B, M, D)."""
    alpha = np.atleast_2d(np.asarray(alpha, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    b = np.ones(alpha.shape + (table.peaks,)) if b is None else np.asarray(b, dtype=np.float64)
    parts = []
    for start in range(0, alpha.shape[0], chunk):
        rows = slice(start, start + chunk)
        parts.append(render_phases(table, Tensor(alpha[rows]), Tensor(sigma[rows]), Tensor(b[rows]), grid, normalize)[0].value)
    return np.concatenate(parts, axis=0)


def render_phase(proto: StickPattern, alpha: float, sigma: float, b: Optional[Sequence[float]], grid: QGrid) -> PhaseRender:
    """
    Render a single prototype under a latent modification.

    Args:
        proto(StickPattern): The prototype
        alpha(float): Multiplicative shift ratio
        sigma(float): Peak width, in nm^-1
        b(Optional[Sequence[float]]): Amplitude factor per peak, all ones if None
        grid(QGrid): The Q grid

    Returns:
        PhaseRender: The max-normalized render, flagged when every peak is out of range
    """
    table = PeakTable(proto.positions[None, :], proto.intensities[None, :])
    factors = np.ones((1, 1, len(proto.peaks))) if b is None else np.asarray(b, dtype=np.float64).reshape(1, 1, -1)
    if factors.shape[2] < len(proto.peaks):
        raise DecoderError(
            "Prototype %s has %d peaks but %d amplitude factors" % (proto.phase_id, len(proto.peaks), factors.shape[2])
        )
    factors = factors[:, :, : len(proto.peaks)]
    rendered, empty = render_phases(table, Tensor([[alpha]]), Tensor([[sigma]]), Tensor(factors), grid)
    if empty[0, 0]:
        logger.warning("Every peak of %s falls outside the grid at alpha=%g", proto.phase_id, alpha)
    return PhaseRender(rendered.value[0, 0], bool(empty[0, 0]))


def mix(renders: Union[Sequence[PhaseRender], np.ndarray], p: Sequence[float]) -> np.ndarray:
    """Mix rendered phases by their probabilities, returning a max-normalized pattern."""
    stacked = np.array([render.pattern if isinstance(render, PhaseRender) else render for render in renders])
    weights = np.asarray(p, dtype=np.float64)
    if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-9:
        raise DecoderError("Mixing probabilities must be non-negative and sum to 1")
    return mix_batch(Tensor(stacked[None]), Tensor(weights[None])).value[0]


def reconstruction_loss(xhat: np.ndarray, x: np.ndarray) -> float:
    """Reconstruction loss between two patterns: 20 * JS distance + 0.05 * L2 distance."""
    xhat, x = np.asarray(xhat, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if xhat.shape != x.shape:
        raise DecoderError("Patterns have different lengths: %s and %s" % (xhat.shape, x.shape))
    return reconstruction_loss_batch(Tensor(xhat[None]), Tensor(x[None]))[0].item()


def jensen_shannon(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon distance (natural log) between two area-normalized patterns."""
    return js_distance_batch(Tensor(np.asarray(p, dtype=np.float64)[None]), Tensor(np.asarray(q, dtype=np.float64)[None])).item()


def l1_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Sum of absolute differences between two patterns."""
    return float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def l2_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Euclidean distance between two patterns."""
    return float(np.linalg.norm(np.asarray(p) - np.asarray(q)))


def reconstruct(table: PeakTable, latents: Sequence[LatentState], grid: QGrid, chunk: int = 64) -> np.ndarray:
    """
    Reconstruct the pattern of every latent state, without recording gradients.

    Returns:
        np.ndarray: Max-normalized reconstructions, shape (N, D)
    """
    rows = []
    for start in range(0, len(latents), chunk):
        part = latents[start : start + chunk]
        alpha = Tensor(np.array([latent.alpha for latent in part]))
        sigma = Tensor(np.array([latent.sigma for latent in part]))
        b = Tensor(np.array([latent.b[:, : table.peaks] for latent in part]))
        renders = render_phases(table, alpha, sigma, b, grid)[0]
        rows.append(mix_batch(renders, Tensor(np.array([latent.p for latent in part]))).value)
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, grid.d))
