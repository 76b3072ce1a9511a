# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Minimal reverse-mode automatic differentiation over dense float64 arrays.

A tape records every operation applied to tensors that belong to it, in creation
order, so the reversed record is always a valid topological order.  Tensors that
do not belong to a tape are constants; operations on constants only are evaluated
without recording anything, which is how forward-only inference works.

Normally, computing gradients is as simple as::

    tape = Tape()
    weights = tape.parameter("w", value)
    loss = (constant @ weights).sum()
    grads = tape.backward(loss)

A tape is consumed by ``backward()``.  Calling it a second time raises ``TapeError``,
so each optimization step records a fresh tape.

Attributes:
    LOG_GUARD(float): Additive guard used for logarithms of probabilities
    CHECKPOINT_VERSION(int): Format version written into parameter checkpoints
"""

from __future__ import annotations  # see: https://stackoverflow.com/a/33533514/2907667

import io
import logging
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import attr
import numpy as np
from scipy.special import expit

from .util import atomic_write

logger = logging.getLogger(__name__)

LOG_GUARD = 1e-12
CHECKPOINT_VERSION = 1

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]
Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class OpKind(Enum):
    """Enumeration of all operations a tape can record."""

    LEAF = "leaf"  # a named parameter
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    MATMUL = "matmul"
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    TANH = "tanh"
    EXP = "exp"
    LOG = "log"
    SQRT = "sqrt"
    SQUARE = "square"
    NEG = "neg"
    SOFTMAX = "softmax"
    SUM = "sum"
    MEAN = "mean"
    MAX = "max"
    CONCAT = "concat"
    SLICE = "slice"
    SCALE = "scale"
    RESHAPE = "reshape"


class ShapeError(ValueError):
    """Raised when the shapes passed to an operation do not conform."""

    def __init__(self, operation: str, shapes: Sequence[Tuple[int, ...]], detail: str = "") -> None:
        self.operation = operation
        self.shapes = list(shapes)
        message = "%s: incompatible shapes %s" % (operation, ", ".join(str(shape) for shape in self.shapes))
        super().__init__("%s (%s)" % (message, detail) if detail else message)


class DomainError(ValueError):
    """Raised when an operand is outside the domain of an operation, like log(0)."""


class TapeError(ValueError):
    """Raised when a tape is used in a way that its contract does not allow."""


def _as_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


@attr.s(frozen=True, eq=False)
class TapeNode:
    """
    A single recorded operation.

    Attributes:
        kind(OpKind): The operation that produced this node
        inputs(Tuple[Optional[int], ...]): Tape index of each input, or None for a constant input
        value(np.ndarray): Cached forward result
        vjp(Optional[Vjp]): Maps the gradient of this node to the gradients of its inputs
    """

    kind = attr.ib(type=OpKind)
    inputs = attr.ib(type=Tuple[Optional[int], ...])
    value = attr.ib(type=np.ndarray)
    vjp = attr.ib(type=Optional[Vjp])


@attr.s(eq=False, repr=False)
class Tensor:
    """
    A dense float64 array, optionally recorded on a tape.

    Attributes:
        value(np.ndarray): Row-major values
        tape(Optional[Tape]): The tape this tensor was recorded on, or None for a constant
        index(Optional[int]): Position of the producing node on the tape
        name(Optional[str]): Parameter name, for tensors created with Tape.parameter()
    """

    value = attr.ib(type=np.ndarray, converter=_as_array)
    tape = attr.ib(default=None, type=Optional["Tape"])
    index = attr.ib(default=None, type=Optional[int])
    name = attr.ib(default=None, type=Optional[str])

    __array_ufunc__ = None  # make NumPy defer to the reflected operators below

    def __repr__(self) -> str:
        return "Tensor(shape=%s, recorded=%s)" % (self.shape, self.tape is not None)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape  # type: ignore

    @property
    def ndim(self) -> int:
        return self.value.ndim  # type: ignore

    def item(self) -> float:
        """Return the value of a single-element tensor as a float."""
        if self.value.size != 1:
            raise ValueError("item() requires a single-element tensor, got shape %s" % (self.shape,))
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying values."""
        return self.value.copy()

    def __add__(self, other: ArrayLike) -> Tensor:
        return forward_op(OpKind.ADD, [self, other])

    def __radd__(self, other: ArrayLike) -> Tensor:
        return forward_op(OpKind.ADD, [other, self])

    def __sub__(self, other: ArrayLike) -> Tensor:
        return forward_op(OpKind.SUB, [self, other])

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return forward_op(OpKind.SUB, [other, self])

    def __mul__(self, other: ArrayLike) -> Tensor:
        if isinstance(other, (int, float)):
            return forward_op(OpKind.SCALE, [self], factor=float(other))
        return forward_op(OpKind.MUL, [self, other])

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return self.__mul__(other)

    def __truediv__(self, other: ArrayLike) -> Tensor:
        if isinstance(other, (int, float)):
            return forward_op(OpKind.SCALE, [self], factor=1.0 / float(other))
        return forward_op(OpKind.DIV, [self, other])

    def __rtruediv__(self, other: ArrayLike) -> Tensor:
        return forward_op(OpKind.DIV, [other, self])

    def __neg__(self) -> Tensor:
        return forward_op(OpKind.NEG, [self])

    def __matmul__(self, other: ArrayLike) -> Tensor:
        return forward_op(OpKind.MATMUL, [self, other])

    def __getitem__(self, index: Any) -> Tensor:
        return forward_op(OpKind.SLICE, [self], index=index)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
        return forward_op(OpKind.SUM, [self], axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
        return forward_op(OpKind.MEAN, [self], axis=axis, keepdims=keepdims)

    def max(self, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
        return forward_op(OpKind.MAX, [self], axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return forward_op(OpKind.RESHAPE, [self], shape=tuple(shape))


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap a value as a constant tensor, unless it already is a tensor."""
    return value if isinstance(value, Tensor) else Tensor(value)


@attr.s(eq=False)
class Tape:
    """
    Records operations in creation order so gradients can be computed in reverse.

    A tape is single-threaded.  Independent tapes over the same read-only parameter
    values may be used from different threads.
    """

    _nodes = attr.ib(init=False, factory=list, type=List[TapeNode])
    _parameters = attr.ib(init=False, factory=dict, type=Dict[str, int])
    _freed = attr.ib(init=False, default=False, type=bool)

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def freed(self) -> bool:
        """Whether backward() has already consumed this tape."""
        return self._freed

    def parameter(self, name: str, value: ArrayLike) -> Tensor:
        """
        Register a named parameter, returning the tensor that represents it.

        Raises:
            TapeError: If the name is already registered or the tape was freed
        """
        self._check_open()
        if name in self._parameters:
            raise TapeError("Parameter %s is already registered on this tape" % name)
        array = _as_array(value.value if isinstance(value, Tensor) else value)
        index = self._append(TapeNode(OpKind.LEAF, (), array, None))
        self._parameters[name] = index
        return Tensor(array, self, index, name)

    def record(self, kind: OpKind, inputs: Sequence[Tensor], value: np.ndarray, vjp: Vjp) -> Tensor:
        """Record the result of an operation and return the tensor that represents it."""
        self._check_open()
        parents = tuple(tensor.index if tensor.tape is self else None for tensor in inputs)
        index = self._append(TapeNode(kind, parents, value, vjp))
        return Tensor(value, self, index)

    def backward(self, root: Tensor) -> Dict[str, np.ndarray]:
        """
        Compute gradients of a scalar root with respect to every registered parameter.

        Parameters that the root does not depend on get a zero gradient.  The tape is
        freed afterwards.

        Returns:
            Dict[str, np.ndarray]: Gradient for each parameter name

        Raises:
            TapeError: If the root is not a scalar recorded on this tape, or the tape was already freed
        """
        self._check_open()
        if root.tape is not self or root.index is None:
            raise TapeError("Root tensor was not recorded on this tape")
        if root.value.size != 1:
            raise TapeError("Backward requires a scalar root, got shape %s" % (root.shape,))

        grads: List[Optional[np.ndarray]] = [None] * len(self._nodes)
        grads[root.index] = np.ones_like(root.value)
        for index in range(root.index, -1, -1):
            grad = grads[index]
            node = self._nodes[index]
            if grad is None or node.vjp is None:
                continue
            for parent, parent_grad in zip(node.inputs, node.vjp(grad)):
                if parent is None or parent_grad is None:
                    continue
                grads[parent] = parent_grad if grads[parent] is None else grads[parent] + parent_grad  # type: ignore

        result = {}
        for name, index in self._parameters.items():
            grad = grads[index]
            result[name] = np.zeros_like(self._nodes[index].value) if grad is None else grad
        self._nodes.clear()
        self._freed = True
        return result

    def _append(self, node: TapeNode) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def _check_open(self) -> None:
        if self._freed:
            raise TapeError("Tape was already consumed by backward(); record a new forward pass")


def backward(root: Tensor) -> Dict[str, np.ndarray]:
    """Compute gradients of a scalar root with respect to the parameters on its tape."""
    if root.tape is None:
        raise TapeError("Root tensor is a constant; nothing was recorded")
    return root.tape.backward(root)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the shape of the original operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand(grad: np.ndarray, shape: Tuple[int, ...], axis: Optional[int], keepdims: bool) -> np.ndarray:
    """Expand the gradient of a reduction back to the shape of its operand."""
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape).copy()


def _add(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _sub(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _mul(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _div(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    if np.any(b == 0.0):
        raise DomainError("div: division by zero")
    value = a / b
    return value, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * value / b, b.shape))


def _matmul(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(OpKind.MATMUL.value, [a.shape, b.shape], "expected (n, k) @ (k, m)")
    return a @ b, lambda g: (g @ b.T, a.T @ g)


def _relu(a: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    return np.maximum(a, 0.0), lambda g: (g * (a > 0.0),)


def _sigmoid(a: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    value = expit(a)
    return value, lambda g: (g * value * (1.0 - value),)


def _softplus(a: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    return np.logaddexp(0.0, a), lambda g: (g * expit(a),)


def _tanh(a: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    value = np.tanh(a)
    return value, lambda g: (g * (1.0 - value * value),)


def _exp(a: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    value = np.exp(a)
    return value, lambda g: (g * value,)


def _log(a: np.ndarray, guard: float = 0.0) -> Tuple[np.ndarray, Vjp]:
    shifted = a + guard
    if np.any(shifted <= 0.0):
        raise DomainError("log: non-positive operand (guard %g)" % guard)
    return np.log(shifted), lambda g: (g / shifted,)


def _sqrt(a: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    if np.any(a < 0.0):
        raise DomainError("sqrt: negative operand")
    value = np.sqrt(a)
    safe = np.where(value > 0.0, value, 1.0)
    return value, lambda g: (np.where(value > 0.0, g / (2.0 * safe), 0.0),)


def _square(a: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    return a * a, lambda g: (2.0 * a * g,)


def _neg(a: np.ndarray) -> Tuple[np.ndarray, Vjp]:
    return -a, lambda g: (-g,)


def _softmax(a: np.ndarray, axis: int = -1) -> Tuple[np.ndarray, Vjp]:
    shifted = np.exp(a - a.max(axis=axis, keepdims=True))
    value = shifted / shifted.sum(axis=axis, keepdims=True)
    return value, lambda g: (value * (g - (g * value).sum(axis=axis, keepdims=True)),)


def _sum(a: np.ndarray, axis: Optional[int] = None, keepdims: bool = False) -> Tuple[np.ndarray, Vjp]:
    return np.sum(a, axis=axis, keepdims=keepdims), lambda g: (_expand(g, a.shape, axis, keepdims),)


def _mean(a: np.ndarray, axis: Optional[int] = None, keepdims: bool = False) -> Tuple[np.ndarray, Vjp]:
    count = a.size if axis is None else a.shape[axis]
    return np.mean(a, axis=axis, keepdims=keepdims), lambda g: (_expand(g, a.shape, axis, keepdims) / count,)


def _max(a: np.ndarray, axis: Optional[int] = None, keepdims: bool = False) -> Tuple[np.ndarray, Vjp]:
    mask = np.zeros_like(a)
    if axis is None:
        mask.reshape(-1)[np.argmax(a)] = 1.0
    else:
        np.put_along_axis(mask, np.expand_dims(np.argmax(a, axis=axis), axis), 1.0, axis=axis)
    return np.max(a, axis=axis, keepdims=keepdims), lambda g: (mask * _expand(g, a.shape, axis, keepdims),)


def _concat(*arrays: np.ndarray, axis: int = 0) -> Tuple[np.ndarray, Vjp]:
    splits = np.cumsum([array.shape[axis] for array in arrays])[:-1]
    return np.concatenate(arrays, axis=axis), lambda g: tuple(np.split(g, splits, axis=axis))


def _slice(a: np.ndarray, index: Any = None) -> Tuple[np.ndarray, Vjp]:
    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(a)
        np.add.at(grad, index, g)
        return (grad,)

    try:
        value = np.array(a[index], dtype=np.float64)
    except IndexError as e:
        raise ShapeError(OpKind.SLICE.value, [a.shape], str(e)) from e
    return value, vjp


def _scale(a: np.ndarray, factor: float = 1.0) -> Tuple[np.ndarray, Vjp]:
    return factor * a, lambda g: (factor * g,)


def _reshape(a: np.ndarray, shape: Tuple[int, ...] = ()) -> Tuple[np.ndarray, Vjp]:
    return a.reshape(shape), lambda g: (g.reshape(a.shape),)


_RULES: Dict[OpKind, Callable[..., Tuple[np.ndarray, Vjp]]] = {
    OpKind.ADD: _add,
    OpKind.SUB: _sub,
    OpKind.MUL: _mul,
    OpKind.DIV: _div,
    OpKind.MATMUL: _matmul,
    OpKind.RELU: _relu,
    OpKind.SIGMOID: _sigmoid,
    OpKind.SOFTPLUS: _softplus,
    OpKind.TANH: _tanh,
    OpKind.EXP: _exp,
    OpKind.LOG: _log,
    OpKind.SQRT: _sqrt,
    OpKind.SQUARE: _square,
    OpKind.NEG: _neg,
    OpKind.SOFTMAX: _softmax,
    OpKind.SUM: _sum,
    OpKind.MEAN: _mean,
    OpKind.MAX: _max,
    OpKind.CONCAT: _concat,
    OpKind.SLICE: _slice,
    OpKind.SCALE: _scale,
    OpKind.RESHAPE: _reshape,
}


def _common_tape(kind: OpKind, tensors: Sequence[Tensor]) -> Optional[Tape]:
    tapes = {id(tensor.tape): tensor.tape for tensor in tensors if tensor.tape is not None}
    if len(tapes) > 1:
        raise TapeError("%s: inputs were recorded on different tapes" % kind.value)
    return next(iter(tapes.values())) if tapes else None


def forward_op(kind: OpKind, inputs: Sequence[ArrayLike], **options: Any) -> Tensor:
    """
    Evaluate an operation, recording it when any input belongs to a tape.

    Args:
        kind(OpKind): The operation to evaluate
        inputs(Sequence[ArrayLike]): Operands; non-tensors are wrapped as constants
        options: Operation-specific keyword options, like axis for softmax or guard for log

    Returns:
        Tensor: The result

    Raises:
        ShapeError: If the operand shapes do not conform (NumPy broadcasting rules)
        DomainError: If an operand is outside the domain of the operation
    """
    if kind not in _RULES:
        raise ValueError("Operation %s cannot be evaluated directly" % kind.value)
    tensors = [as_tensor(value) for value in inputs]
    tape = _common_tape(kind, tensors)
    values = [tensor.value for tensor in tensors]
    try:
        value, vjp = _RULES[kind](*values, **options)
    except (ShapeError, DomainError):
        raise
    except ValueError as e:
        raise ShapeError(kind.value, [v.shape for v in values], str(e)) from e
    if tape is None:
        return Tensor(value)
    return tape.record(kind, tensors, value, vjp)


# Thin functional wrappers, so model code reads like the math it implements


def relu(x: ArrayLike) -> Tensor:
    return forward_op(OpKind.RELU, [x])


def sigmoid(x: ArrayLike) -> Tensor:
    return forward_op(OpKind.SIGMOID, [x])


def softplus(x: ArrayLike) -> Tensor:
    return forward_op(OpKind.SOFTPLUS, [x])


def tanh(x: ArrayLike) -> Tensor:
    return forward_op(OpKind.TANH, [x])


def exp(x: ArrayLike) -> Tensor:
    return forward_op(OpKind.EXP, [x])


def log(x: ArrayLike, guard: float = 0.0) -> Tensor:
    return forward_op(OpKind.LOG, [x], guard=guard)


def sqrt(x: ArrayLike) -> Tensor:
    return forward_op(OpKind.SQRT, [x])


def square(x: ArrayLike) -> Tensor:
    return forward_op(OpKind.SQUARE, [x])


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    return forward_op(OpKind.SOFTMAX, [x], axis=axis)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return forward_op(OpKind.CONCAT, tensors, axis=axis)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return forward_op(OpKind.MATMUL, [a, b])


@attr.s(eq=False)
class ParamStore:
    """
    Named parameter tensors plus Adam optimizer state.

    Callers should normally pass in only the parameters.  The moments and step count
    are accessible to support checkpoints.

    Attributes:
        params(Dict[str, np.ndarray]): Parameter values by name
        first(Dict[str, np.ndarray]): Adam first moments, same shapes as params
        second(Dict[str, np.ndarray]): Adam second moments, same shapes as params
        step(int): Number of Adam steps taken, shared by all parameters
    """

    params = attr.ib(type=Dict[str, np.ndarray])
    first = attr.ib(type=Dict[str, np.ndarray])
    second = attr.ib(type=Dict[str, np.ndarray])
    step = attr.ib(default=0, type=int)

    @first.default
    def _default_first(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    @second.default
    def _default_second(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    @step.validator
    def _check_step(self, _attribute: str, value: int) -> None:
        if value < 0:
            raise ValueError("Step count must not be negative")

    def __attrs_post_init__(self) -> None:
        for name, value in self.params.items():
            for moments in (self.first, self.second):
                if name not in moments or moments[name].shape != value.shape:
                    raise ShapeError("param_store", [value.shape], "moments for %s do not match the parameter" % name)

    def copy(self) -> ParamStore:
        """Return a fully-independent copy of the store."""
        return ParamStore(
            {name: value.copy() for name, value in self.params.items()},
            {name: value.copy() for name, value in self.first.items()},
            {name: value.copy() for name, value in self.second.items()},
            self.step,
        )

    def count(self) -> int:
        """Total number of scalar parameters."""
        return int(sum(value.size for value in self.params.values()))

    def watch(self, tape: Tape) -> Dict[str, Tensor]:
        """Register every parameter on a tape, returning tensors by name."""
        return {name: tape.parameter(name, value) for name, value in self.params.items()}

    def constants(self) -> Dict[str, Tensor]:
        """Wrap every parameter as a constant, for forward-only evaluation."""
        return {name: Tensor(value) for name, value in self.params.items()}


def adam_step(
    store: ParamStore, grads: Mapping[str, np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> ParamStore:
    """
    Apply one bias-corrected Adam update, returning a new store.

    Parameters without a gradient keep their value and moments.  The step count is
    shared, so it advances for every call.

    Args:
        store(ParamStore): Current parameters and optimizer state
        grads(Mapping[str, np.ndarray]): Gradient for some or all parameters
        lr(float): Learning rate, must not be negative
        beta1(float): Decay rate of the first moment
        beta2(float): Decay rate of the second moment
        eps(float): Denominator guard

    Returns:
        ParamStore: The updated store

    Raises:
        ValueError: If the learning rate is negative or a gradient names an unknown parameter
        ShapeError: If a gradient does not match the shape of its parameter
    """
    if lr < 0.0:
        raise ValueError("Learning rate must not be negative")
    unknown = sorted(set(grads) - set(store.params))
    if unknown:
        raise ValueError("Gradients for unknown parameters: %s" % ", ".join(unknown))

    step = store.step + 1
    params, first, second = {}, {}, {}
    for name, value in store.params.items():
        grad = grads.get(name)
        if grad is None:
            params[name], first[name], second[name] = value.copy(), store.first[name].copy(), store.second[name].copy()
            continue
        if grad.shape != value.shape:
            raise ShapeError("adam_step", [value.shape, grad.shape], "gradient for %s" % name)
        first[name] = beta1 * store.first[name] + (1.0 - beta1) * grad
        second[name] = beta2 * store.second[name] + (1.0 - beta2) * grad * grad
        first_hat = first[name] / (1.0 - beta1**step)
        second_hat = second[name] / (1.0 - beta2**step)
        params[name] = value - lr * first_hat / (np.sqrt(second_hat) + eps)
    return ParamStore(params, first, second, step)


def save_checkpoint(store: ParamStore, path: str) -> None:
    """Write parameters and optimizer state to a NumPy .npz archive."""
    arrays = {"version": np.array(CHECKPOINT_VERSION), "step": np.array(store.step)}
    for name in store.params:
        arrays["param/%s" % name] = store.params[name]
        arrays["first/%s" % name] = store.first[name]
        arrays["second/%s" % name] = store.second[name]
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    atomic_write(path, buffer.getvalue())


def load_checkpoint(path: str) -> ParamStore:
    """
    Read a checkpoint written by save_checkpoint().

    Raises:
        ValueError: If the archive was written with an unsupported format version
    """
    with np.load(path) as archive:
        version = int(archive["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError("Unsupported checkpoint version %d in %s" % (version, path))
        names = [key[len("param/") :] for key in archive.files if key.startswith("param/")]
        params = {name: archive["param/%s" % name].astype(np.float64) for name in names}
        first = {name: archive["first/%s" % name].astype(np.float64) for name in names}
        second = {name: archive["second/%s" % name].astype(np.float64) for name in names}
        logger.info("Loaded %d parameters at step %d from %s", len(names), int(archive["step"]), path)
        return ParamStore(params, first, second, int(archive["step"]))
