"""Dense float64 tensors with tape-based reverse-mode differentiation.

Rows of a 2-D tensor are treated as independent problem instances: the loss
primitives (mse, masked_mse) average over the last axis and sum over rows, so
a batch of N problems differentiates exactly like N separate ones.
"""
from __future__ import annotations

import logging
import threading
from contextlib import contextmanager
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

# `sum` stays out of star imports so it never shadows the builtin
__all__ = [
    "LoptError", "DimensionError", "ContractError", "InputError", "ConfigError", "OracleError",
    "UninitializedModelError", "DegenerateDataError", "DivergenceError",
    "Tensor", "tensor", "zeros", "is_tensor", "as_tensor", "Record", "Tape", "active_tape", "tape",
    "matmul", "add", "sub", "mul", "scale", "leaky_relu", "tanh", "sin", "mse", "l2_norm_sq", "masked_mse",
    "ADJOINTS", "PRIMITIVES", "perturb_adjoint", "backward", "zero_grad",
]

# ===============
# Error types
# ===============

class LoptError(Exception):
    """base class for all library errors"""

class DimensionError(LoptError, ValueError): pass
class ContractError(LoptError, RuntimeError): pass
class InputError(LoptError, ValueError): pass
class ConfigError(LoptError, ValueError): pass
class OracleError(LoptError, RuntimeError): pass
class UninitializedModelError(ContractError): pass
class DegenerateDataError(InputError): pass

class DivergenceError(LoptError, RuntimeError):
    def __init__(self, message: str, step: Optional[int] = None, round_id: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.round_id = round_id

# =============
# Tensor
# =============

Arr = np.ndarray
ArrayLike = Union[Arr, float, int, Sequence[float], Sequence[Sequence[float]]]

class Tensor:
    """values plus an optional gradient slot. `tape` points at the tape that
    produced this tensor; leaves have no tape."""
    __slots__ = ("values", "grad", "requires_grad", "tape")

    def __init__(self, values: ArrayLike, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Optional[Arr] = None
        self.requires_grad = requires_grad
        self.tape: Optional[Tape] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> Arr:
        return self.values.copy()

    def detach(self) -> "Tensor":
        """same storage, outside of any graph"""
        return Tensor(self.values, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)
    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)
    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)
    __rmul__ = __mul__
    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

def tensor(values: ArrayLike, requires_grad: bool = False) -> Tensor:
    """build a leaf tensor owning a fresh copy of `values`"""
    return Tensor(np.array(values, dtype=np.float64), requires_grad=requires_grad)

def zeros(shape: Tuple[int, ...], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)

def is_tensor(x: Any) -> bool:
    return isinstance(x, Tensor)

def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if is_tensor(x) else Tensor(x)

# =============
# Tape
# =============

class Record(NamedTuple):
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    saved: Dict[str, Any]

class Tape:
    """ordered list of primitive applications"""
    def __init__(self):
        self.records: List[Record] = []
        self.adjoint_calls = 0
        self._produced = set()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, saved: Dict[str, Any]) -> None:
        # topological order: every input is a leaf or was produced earlier on this tape
        assert all(inp.tape is not self or id(inp) in self._produced for inp in inputs), \
            f"{op}: input recorded out of order"
        self.records.append(Record(op, inputs, output, saved))
        self._produced.add(id(output))
        output.tape = self

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced

    def clear(self) -> None:
        self.records = []
        self._produced = set()

# tapes are per thread: one worker, one tape
_local = threading.local()

def _stack() -> List[Tape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes

def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None

@contextmanager
def tape():
    """record every primitive evaluated inside the block on a fresh tape"""
    t = Tape()
    stack = _stack()
    stack.append(t)
    try:
        yield t
    finally:
        stack.pop()

def _emit(op: str, inputs: Tuple[Tensor, ...], values: Arr, **saved) -> Tensor:
    out = Tensor(values)
    t = active_tape()
    if t is not None and any(inp.requires_grad for inp in inputs):
        out.requires_grad = True
        t.record(op, inputs, out, saved)
    return out

# =============
# Primitives
# =============

def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim not in (1, 2) or b.values.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    return _emit("matmul", (a, b), a.values @ b.values)

def add(a: Tensor, b: Tensor) -> Tensor:
    """elementwise add; a 1-D `b` is broadcast over the rows of a 2-D `a` (bias add)"""
    if a.shape != b.shape and not (b.values.ndim == 1 and a.values.ndim == 2 and a.shape[1] == b.shape[0]):
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} are not compatible")
    return _emit("add", (a, b), a.values + b.values)

def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.values - b.values)

def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return _emit("mul", (a, b), a.values * b.values)

def scale(a: Tensor, c: float) -> Tensor:
    return _emit("scale", (a,), a.values * c, c=float(c))

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if slope < 0:
        raise ValueError(f"leaky_relu slope must be >= 0, got {slope}")
    positive = x.values >= 0
    return _emit("leaky_relu", (x,), np.where(positive, x.values, slope * x.values),
                 positive=positive, slope=float(slope))

def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)
    return _emit("tanh", (x,), out, out=out)

def sin(x: Tensor) -> Tensor:
    return _emit("sin", (x,), np.sin(x.values), cos=np.cos(x.values))

def sum(x: Tensor) -> Tensor:
    return _emit("sum", (x,), np.sum(x.values))

def _row_count(x: Tensor) -> int:
    return x.shape[-1] if x.values.ndim > 0 else 1

def mse(pred: Tensor, target: Tensor) -> Tensor:
    """mean squared difference over the last axis, summed over rows"""
    _same_shape("mse", pred, target)
    diff = pred.values - target.values
    count = _row_count(pred)
    return _emit("mse", (pred, target), np.sum(diff * diff) / count, diff=diff, count=count)

def l2_norm_sq(x: Tensor) -> Tensor:
    return _emit("l2_norm_sq", (x,), np.sum(x.values * x.values))

def masked_mse(pred: Tensor, target: Tensor, mask: Arr) -> Tensor:
    """mse restricted to entries where `mask` is true; each row is averaged
    over its own unmasked count"""
    _same_shape("masked_mse", pred, target)
    mask = np.asarray(mask, dtype=bool)
    if pred.values.ndim == 0 or mask.shape[-1:] != pred.shape[-1:] or mask.ndim > pred.values.ndim:
        raise DimensionError(f"masked_mse: mask shape {mask.shape} does not match {pred.shape}")
    mask = np.broadcast_to(mask, pred.shape)
    counts = mask.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise InputError("masked_mse: mask selects no entries in at least one row")
    weights = mask / counts
    diff = pred.values - target.values
    return _emit("masked_mse", (pred, target), np.sum(weights * diff * diff), diff=diff, weights=weights)

# =================
# Adjoints
# =================
# each adjoint maps (upstream gradient, record) to one gradient per input

def _matmul_adjoint(g: Arr, rec: Record) -> Tuple[Arr, Arr]:
    a, b = rec.inputs
    if a.values.ndim == 1:
        return g @ b.values.T, np.outer(a.values, g)
    return g @ b.values.T, a.values.T @ g

def _add_adjoint(g: Arr, rec: Record) -> Tuple[Arr, Arr]:
    a, b = rec.inputs
    gb = g.sum(axis=0) if a.shape != b.shape else g
    return g, gb

ADJOINTS: Dict[str, Callable[[Arr, Record], Tuple[Optional[Arr], ...]]] = {
    "matmul": _matmul_adjoint,
    "add": _add_adjoint,
    "sub": lambda g, rec: (g, -g),
    "mul": lambda g, rec: (g * rec.inputs[1].values, g * rec.inputs[0].values),
    "scale": lambda g, rec: (g * rec.saved["c"],),
    "leaky_relu": lambda g, rec: (np.where(rec.saved["positive"], g, rec.saved["slope"] * g),),
    "tanh": lambda g, rec: (g * (1.0 - rec.saved["out"] ** 2),),
    "sin": lambda g, rec: (g * rec.saved["cos"],),
    "sum": lambda g, rec: (np.full(rec.inputs[0].shape, g, dtype=np.float64),),
    "mse": lambda g, rec: (2.0 * g * rec.saved["diff"] / rec.saved["count"],
                           -2.0 * g * rec.saved["diff"] / rec.saved["count"]),
    "l2_norm_sq": lambda g, rec: (2.0 * g * rec.inputs[0].values,),
    "masked_mse": lambda g, rec: (2.0 * g * rec.saved["weights"] * rec.saved["diff"],
                                  -2.0 * g * rec.saved["weights"] * rec.saved["diff"]),
}

PRIMITIVES = tuple(ADJOINTS)

# test hook: scale the adjoint of selected ops to prove the gradient checks bite
_PERTURBED: Dict[str, float] = {}

@contextmanager
def perturb_adjoint(op: str, factor: float):
    if op not in ADJOINTS:
        raise KeyError(f"unknown primitive {op}")
    _PERTURBED[op] = factor
    try:
        yield
    finally:
        _PERTURBED.pop(op, None)

def backward(loss: Tensor) -> None:
    """accumulate d(loss)/d(t) into `t.grad` for every requires_grad tensor
    recorded on the loss's tape, then clear the tape"""
    if loss.size != 1 or loss.values.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    t = loss.tape
    if t is None or not t.produced(loss):
        raise ContractError("loss was not produced on an active tape")
    adjoints: Dict[int, Arr] = {id(loss): np.ones_like(loss.values)}
    reached: Dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(t.records):
        g = adjoints.get(id(rec.output))
        if g is None:
            continue
        t.adjoint_calls += 1
        grads = ADJOINTS[rec.op](g, rec)
        if rec.op in _PERTURBED:
            grads = tuple(gi * _PERTURBED[rec.op] for gi in grads)
        for inp, gi in zip(rec.inputs, grads):
            if not inp.requires_grad:
                continue
            key = id(inp)
            adjoints[key] = gi if key not in adjoints else adjoints[key] + gi
            reached[key] = inp
    for key, node in reached.items():
        node.grad = adjoints[key].copy() if node.grad is None else node.grad + adjoints[key]
    t.clear()

def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()
