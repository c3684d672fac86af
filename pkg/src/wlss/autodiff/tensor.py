"""Reverse-mode autodiff core: Tensor values and the recording Tape.

All arithmetic is in 64-bit floats.  Operations (see ``wlss.autodiff.ops``)
run eagerly on numpy arrays and, while a Tape is active, append a record
(inputs, output, backward rule) to it.  ``backward`` replays the records in
reverse, which is a valid topological order because records are appended in
execution order.

One tape must only ever be used from one thread.  Distinct models with
distinct tapes are independent.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class Tensor:
    """An n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        # Ownership transfer: backward rules hand over arrays that are safe
        # to keep (they may alias the producing record's output grad, which
        # is dead by then, but never another tensor's grad).
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


class TapeError(RuntimeError):
    pass


class _Record:
    """One recorded operation: output, inputs, and its backward rule."""

    __slots__ = ("out", "inputs", "rule")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], rule: Callable):
        self.out = out
        self.inputs = tuple(inputs)
        self.rule = rule


_active = threading.local()


def _tape_stack():
    if not hasattr(_active, "stack"):
        _active.stack = []
    return _active.stack


class Tape:
    """Ordered record of operations for one forward pass.

    Used as a context manager; ops executed inside the ``with`` block are
    recorded.  A tape can be consumed by ``backward`` exactly once.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: Sequence[Tensor], rule: Callable) -> None:
        self._records.append(_Record(out, inputs, rule))


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record_op(out: Tensor, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    """Attach a backward rule to ``out`` if recording is active and needed.

    ``rule(g)`` receives the gradient w.r.t. the output and must return one
    gradient array (or None) per input, in order.
    """
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, rule)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad ancestor of ``loss``.

    ``loss`` must be a scalar recorded on ``tape``.  A tape can only be
    walked once; build a fresh tape per forward pass.
    """
    if loss.size != 1:
        raise TapeError(f"backward requires a scalar loss, got shape {tuple(loss.shape)}")
    if tape._consumed:
        raise TapeError("tape already consumed by a previous backward call")
    tape._consumed = True

    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape._records):
        g = rec.out.grad
        if g is None:
            continue
        grads = rec.rule(g)
        for t, gi in zip(rec.inputs, grads):
            if gi is not None and t.requires_grad:
                t.accumulate_grad(gi)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def assert_finite(x: np.ndarray, what: str = "array") -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
