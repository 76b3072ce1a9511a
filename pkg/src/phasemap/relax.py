# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Entropy-based continuous relaxations of discrete constraints on probability vectors.

Every penalty accepts either a single probability vector of shape (M,) or a batch of
shape (B, M), and reduces over the last axis.  Inputs may be NumPy arrays or tape
tensors, so the same functions serve both evaluation and training.

Attributes:
    ACTIVE_EPSILON(float): Probability mass above which a phase counts as active
    ALLOY_THRESHOLD(float): Shift difference above which a shared phase counts as alloying
    SUM_TOLERANCE(float): Tolerance on the sum of a probability vector
    NEGATIVE_TOLERANCE(float): Most negative entry accepted in a probability vector
"""

from __future__ import annotations  # see: https://stackoverflow.com/a/33533514/2907667

import math
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import attr
import numpy as np

from .ndtape import LOG_GUARD, Tensor, as_tensor, log, relu, sqrt, square

ACTIVE_EPSILON = 0.01
ALLOY_THRESHOLD = 0.001
SUM_TOLERANCE = 1e-6
NEGATIVE_TOLERANCE = -1e-9

Probabilities = Union[Tensor, np.ndarray, Sequence[float]]


class RelaxationError(ValueError):
    """Raised when a penalty is given something that is not a probability vector."""


class ConstraintKind(Enum):
    """Families of relaxed constraints."""

    CARDINALITY = "cardinality"
    KSPARSITY = "k-sparsity"
    ALLDIFF = "all-different"
    ALLOY_GATE = "alloy-gate"
    CONNECTIVITY = "connectivity"


PAIRWISE = frozenset({ConstraintKind.ALLOY_GATE, ConstraintKind.CONNECTIVITY})


def _distribution(p: Probabilities) -> Tensor:
    tensor = as_tensor(p)
    if tensor.ndim == 0:
        raise RelaxationError("Expected a probability vector, got a scalar")
    if np.any(tensor.value < NEGATIVE_TOLERANCE):
        raise RelaxationError("Probability vector has a negative entry (%g)" % tensor.value.min())
    if np.any(np.abs(tensor.value.sum(axis=-1) - 1.0) > SUM_TOLERANCE):
        raise RelaxationError("Probability vector does not sum to 1")
    return tensor


def entropy(p: Probabilities) -> Tensor:
    """
    Shannon entropy in nats, H(p) = -sum p_i ln(p_i + 1e-12).

    Raises:
        RelaxationError: If p has an entry below -1e-9 or does not sum to 1 within 1e-6
    """
    p = _distribution(p)
    return -(p * log(relu(p), guard=LOG_GUARD)).sum(axis=-1)


def cardinality_penalty(p: Probabilities) -> Tensor:
    """Relaxed single-value constraint: the entropy, which is 0 exactly at a one-hot vector."""
    return entropy(p)


def ksparsity_penalty(p: Probabilities, c: Union[float, np.ndarray]) -> Tensor:
    """
    Relaxed at-most-k constraint: max(0, H(p) - c), with c normally ln k.

    Args:
        p(Probabilities): Probability vector or batch
        c(Union[float, np.ndarray]): Threshold, or one threshold per batch row

    Raises:
        RelaxationError: If p is not a probability vector or a threshold is not positive
    """
    if np.any(np.asarray(c) <= 0.0):
        raise RelaxationError("k-sparsity threshold must be positive")
    return relu(entropy(p) - np.asarray(c, dtype=np.float64))


def alldiff_penalty(ps: Probabilities) -> Tensor:
    """
    Relaxed all-different constraint over a set of distributions, shape (S, M).

    The penalty is (ln S - H(mean of ps)) + mean of H(ps_i).  It is 0 exactly when the
    rows are one-hot vectors on distinct values.

    Raises:
        RelaxationError: If the rows differ in length, or there are more rows than values
    """
    if not isinstance(ps, (Tensor, np.ndarray)):
        if len({len(row) for row in ps}) > 1:  # type: ignore
            raise RelaxationError("All distributions in an all-different scope must have the same length")
    ps = _distribution(ps)
    if ps.ndim != 2:
        raise RelaxationError("Expected a set of distributions with shape (S, M), got %s" % (ps.shape,))
    size, values = ps.shape
    if size > values:
        raise RelaxationError("Cannot make %d distributions over %d values all different" % (size, values))
    return (entropy(ps.mean(axis=0)) * -1.0 + math.log(size)) + entropy(ps).mean()


def connectivity_penalty(p_u: Probabilities, p_v: Probabilities) -> Tensor:
    """L2 distance between the activations of adjacent points, symmetric in its arguments."""
    return sqrt(square(as_tensor(p_u) - as_tensor(p_v)).sum(axis=-1))


def shift_penalty(alpha_u: Probabilities, alpha_v: Probabilities, p_u: Probabilities, p_v: Probabilities) -> Tensor:
    """
    Smoothness of shifts between adjacent points, weighted by co-activation.

    sum_j p_u,j p_v,j (alpha_u,j - alpha_v,j)^2, so only phases present at both ends contribute.
    """
    return (as_tensor(p_u) * as_tensor(p_v) * square(as_tensor(alpha_u) - as_tensor(alpha_v))).sum(axis=-1)


def active_set(p: Sequence[float], eps: float = ACTIVE_EPSILON) -> Tuple[int, ...]:
    """Indices of the phases whose probability mass is more than eps."""
    return tuple(int(i) for i in np.flatnonzero(np.asarray(p) > eps))


def detect_alloying(
    alpha_u: Sequence[float], alpha_v: Sequence[float], shared: Sequence[int], threshold: float = ALLOY_THRESHOLD
) -> np.ndarray:
    """
    Flag shared phases whose shift differs between two points by more than the threshold.

    Args:
        alpha_u(Sequence[float]): Shifts at the first point
        alpha_v(Sequence[float]): Shifts at the second point
        shared(Sequence[int]): Phases active at both points
        threshold(float): Strict lower bound on |alpha_u - alpha_v| for a flag

    Returns:
        np.ndarray: One boolean per shared phase, in the given order
    """
    indices = list(shared)
    difference = np.abs(np.asarray(alpha_u, dtype=np.float64)[indices] - np.asarray(alpha_v, dtype=np.float64)[indices])
    return difference > threshold  # type: ignore


def _threshold(value: Optional[Union[float, Sequence[float], np.ndarray]]) -> Optional[np.ndarray]:
    return None if value is None else np.asarray(value, dtype=np.float64)


@attr.s(frozen=True)
class ConstraintTerm:
    """
    A single weighted relaxed constraint over some data points.

    For the pairwise kinds (connectivity and alloy-gate) the scope is a path, and the
    penalty is averaged over its consecutive pairs.  For the other kinds the penalty is
    averaged over the points of the scope, except all-different which couples them.

    Attributes:
        kind(ConstraintKind): Constraint family
        scope(Tuple[int, ...]): Row indices of the points involved
        weight(float): Non-negative penalty weight
        threshold(Optional[np.ndarray]): Entropy threshold for k-sparsity, scalar or one per scope point
    """

    kind = attr.ib(type=ConstraintKind)
    scope = attr.ib(type=Tuple[int, ...], converter=lambda value: tuple(int(i) for i in value))
    weight = attr.ib(default=1.0, type=float)
    threshold = attr.ib(default=None, type=Optional[np.ndarray], converter=_threshold, eq=False)

    @scope.validator
    def _check_scope(self, _attribute: str, value: Tuple[int, ...]) -> None:
        if not value:
            raise RelaxationError("Constraint scope must not be empty")
        if self.kind in PAIRWISE and len(value) < 2:
            raise RelaxationError("A %s constraint needs a path of at least 2 points" % self.kind.value)

    @weight.validator
    def _check_weight(self, _attribute: str, value: float) -> None:
        if value < 0.0:
            raise RelaxationError("Constraint weight must not be negative")

    @threshold.validator
    def _check_threshold(self, _attribute: str, value: Optional[np.ndarray]) -> None:
        if self.kind == ConstraintKind.KSPARSITY:
            if value is None or np.any(value <= 0.0):
                raise RelaxationError("A k-sparsity constraint needs a positive threshold")
            if value.ndim > 0 and value.shape != (len(self.scope),):
                raise RelaxationError("Expected one k-sparsity threshold per scope point")

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        """Consecutive pairs along the scope."""
        return list(zip(self.scope, self.scope[1:]))

    def evaluate(self, p: Probabilities, alpha: Optional[Probabilities] = None) -> Tensor:
        """
        Evaluate the unweighted penalty.

        Args:
            p(Probabilities): Activations of every row, shape (N, M)
            alpha(Optional[Probabilities]): Shifts of every row, shape (N, M), needed for alloy-gate

        Returns:
            Tensor: Scalar penalty
        """
        p = as_tensor(p)
        scope = list(self.scope)
        if self.kind == ConstraintKind.CARDINALITY:
            return cardinality_penalty(p[scope]).mean()
        if self.kind == ConstraintKind.KSPARSITY:
            return ksparsity_penalty(p[scope], self.threshold).mean()  # type: ignore
        if self.kind == ConstraintKind.ALLDIFF:
            return alldiff_penalty(p[scope])
        first, second = [u for u, _ in self.pairs], [v for _, v in self.pairs]
        if self.kind == ConstraintKind.CONNECTIVITY:
            return connectivity_penalty(p[first], p[second]).mean()
        if alpha is None:
            raise RelaxationError("An alloy-gate constraint needs shifts")
        alpha = as_tensor(alpha)
        return shift_penalty(alpha[first], alpha[second], p[first], p[second]).mean()


def reasoning_loss(
    terms: Sequence[ConstraintTerm], p: Probabilities, alpha: Optional[Probabilities] = None
) -> Tuple[Tensor, Dict[ConstraintKind, float]]:
    """
    Total weighted penalty of a set of constraint terms.

    Within each family the weighted penalties are averaged, and the family averages are
    summed.

    Returns:
        Tuple[Tensor, Dict[ConstraintKind, float]]: Total penalty, and the unweighted mean penalty per family
    """
    families: Dict[ConstraintKind, List[ConstraintTerm]] = {}
    for term in terms:
        families.setdefault(term.kind, []).append(term)
    total = Tensor(0.0)
    report = {}
    for kind, members in families.items():
        values = [term.evaluate(p, alpha) for term in members]
        weighted = values[0] * members[0].weight
        for term, value in zip(members[1:], values[1:]):
            weighted = weighted + value * term.weight
        total = total + weighted / float(len(members))
        report[kind] = float(np.mean([value.item() for value in values]))
    return total, report
