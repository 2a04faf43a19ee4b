"""
Dense tensors with reverse-mode automatic differentiation

A `Tensor` wraps a numpy array and an optional gradient slot. Differentiable
operations executed inside an active `Tape` are recorded in execution order,
which is a topological order of the computation graph; `backward` walks the
tape in reverse and fills the gradient slots.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.errors import NumericalError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_SUPPORTED_DTYPES = {"float32": np.float32, "float64": np.float64}


class _NumericState(threading.local):
    """Per-thread tape stack; dtype and debug flag are process defaults"""

    def __init__(self) -> None:
        self.tapes: List[Optional["Tape"]] = []


_state = _NumericState()
_default_dtype = np.float32
_debug_numerics = False


def default_dtype() -> type:
    """Return the dtype new tensors are created with"""
    return _default_dtype


def set_default_dtype(name: str) -> None:
    """Switch the default float width ('float32' for training, 'float64' for checks)"""
    global _default_dtype
    if name not in _SUPPORTED_DTYPES:
        raise ShapeError(f"Unsupported precision {name!r}; use float32 or float64")
    _default_dtype = _SUPPORTED_DTYPES[name]


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the default float width"""
    previous = "float64" if _default_dtype is np.float64 else "float32"
    set_default_dtype(name)
    try:
        yield
    finally:
        set_default_dtype(previous)


def debug_numerics(enabled: bool) -> None:
    """Enable NaN/Inf detection on every tensor construction"""
    global _debug_numerics
    _debug_numerics = bool(enabled)


class Tensor:
    """Dense n-dimensional float array with an optional gradient slot"""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[type] = None,
    ):
        array = np.asarray(data, dtype=dtype or _default_dtype)
        if _debug_numerics and not np.all(np.isfinite(array)):
            raise NumericalError(
                f"Non-finite values in tensor {name or ''} of shape {array.shape}"
            )
        self.data = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"Gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeNode:
    """One recorded operation: inputs, output and the rule mapping dL/dout to dL/dinputs"""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Tape:
    """
    Ordered record of differentiable operations

    Use as a context manager around the forward computation, then call
    `tape.backward(loss)`. The tape is consumed (reset) by backward.
    """

    def __init__(self) -> None:
        self.nodes: List[TapeNode] = []

    def __enter__(self) -> "Tape":
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _state.tapes.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes = []

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> Optional[Tape]:
    """Innermost tape of the current thread, or None when not recording"""
    return _state.tapes[-1] if _state.tapes else None


@contextmanager
def no_record() -> Iterator[None]:
    """Suspend recording inside an active tape (values only, no gradients)"""
    _state.tapes.append(None)
    try:
        yield
    finally:
        _state.tapes.pop()


def make_result(
    op: str,
    data: np.ndarray,
    inputs: Tuple[Tensor, ...],
    rule: BackwardRule,
) -> Tensor:
    """Wrap an op's forward result and record it when any input needs a gradient"""
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad, dtype=data.dtype)
    tape = active_tape()
    if needs_grad and tape is not None:
        tape.record(TapeNode(op=op, inputs=inputs, output=out, backward=rule))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """
    Populate grad slots with d(loss)/d(tensor) for every recorded tensor
    that requires a gradient

    The tape's recording order is topological, so a single reverse pass
    visits each node exactly once.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        tape.reset()
        return

    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        grad_out = node.output.grad
        if grad_out is None:
            continue
        input_grads = node.backward(grad_out)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is not None and tensor.requires_grad:
                tensor.accumulate_grad(grad)
    tape.reset()


def parameter(
    data: ArrayLike, name: Optional[str] = None, requires_grad: bool = True
) -> Tensor:
    """Create a trainable leaf tensor in the current default precision"""
    return Tensor(data, requires_grad=requires_grad, name=name)
