"""Reverse-mode automatic differentiation over dense float64 arrays.

Everything the model computes is expressed through the primitives in this
module. Operations executed while a :class:`Tape` is active are recorded so
that ``tape.backward(loss)`` can replay their adjoints in reverse order and
accumulate gradients into every tensor reachable from the loss that has
``requires_grad`` set. Without an active tape the same functions run
forward-only, which is what evaluation uses.

All values are float64; any NaN/Inf produced by a primitive raises
:class:`NonFiniteError` immediately rather than propagating silently.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NonFiniteError",
    "Tensor",
    "Tape",
    "GradCheckReport",
    "add",
    "sub",
    "neg",
    "mul",
    "matmul",
    "gather_rows",
    "index",
    "concat",
    "split",
    "stack_rows",
    "reshape",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "clamp_min",
    "softmax",
    "log_sum_exp",
    "reduce_sum",
    "mean",
    "gru_cell",
    "dropout_mask",
    "grad_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(ArithmeticError):
    """A forward value or gradient stopped being finite."""


_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def _all_finite(arr: np.ndarray) -> bool:
    # single-pass check: any NaN or Inf entry poisons the sum, and genuinely
    # finite data never gets near the float64 overflow threshold here
    return math.isfinite(float(np.sum(arr)))


class Tensor:
    """Dense float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not _all_finite(arr):
            raise NonFiniteError(f"tensor {name or '<anon>'} contains non-finite entries")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic sugar; keeps model code readable
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def as_tensor(x) -> Tensor:
    """Wrap numbers/arrays as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Tape:
    """Ordered record of primitive operations from one forward pass.

    Used as a context manager; primitives executed inside record an adjoint
    closure when any input requires a gradient. ``backward`` replays the
    adjoints in reverse creation order, which is a valid topological order
    because every output is created after its inputs.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._entries.append((out, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into .grad of every reachable tensor."""
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, adjoint in reversed(self._entries):
            if out.grad is None:
                continue
            adjoint(out.grad)

    def clear(self) -> None:
        self._entries.clear()


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if not _all_finite(g):
        raise NonFiniteError(f"non-finite gradient flowing into {t.name or '<anon>'}")
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _make(out_data: np.ndarray, inputs: Sequence[Tensor], backward, op: str) -> Tensor:
    if not _all_finite(out_data):
        raise NonFiniteError(f"operation {op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.name = None
    needs = False
    for t in inputs:
        if t.requires_grad:
            needs = True
            break
    out.requires_grad = needs
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.record(out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    """Matrix product; 1-D operands are promoted to row/column vectors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul supports 1-D/2-D operands, got {a.shape} x {b.shape}")
    a2 = a.data if a.ndim == 2 else a.data[None, :]
    b2 = b.data if b.ndim == 2 else b.data[:, None]
    if a2.shape[1] != b2.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out2 = a2 @ b2
    out_data = out2
    if b.ndim == 1:
        out_data = out_data[:, 0]
    if a.ndim == 1:
        out_data = out_data[0]

    def backward(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = g2 @ b2.T
        gb = a2.T @ g2
        _accumulate(a, ga[0] if a.ndim == 1 else ga)
        _accumulate(b, gb[:, 0] if b.ndim == 1 else gb)

    return _make(out_data, (a, b), backward, "matmul")


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; gradient scatter-adds back."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D tensor, got {a.shape}")
    out_data = a.data[idx]

    def backward(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(out_data, (a,), backward, "gather_rows")


def index(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing with scatter-add gradient."""
    out_data = np.array(a.data[key])

    def backward(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        full[key] += g
        _accumulate(a, full)

    return _make(out_data, (a,), backward, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of zero tensors")
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(out_data, ts, backward, "concat")


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Inverse of concat: cut a tensor into consecutive pieces along axis."""
    if sum(sizes) != a.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover axis of length {a.shape[axis]}")
    pieces = []
    offset = 0
    for size in sizes:
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(offset, offset + size)
        pieces.append(index(a, tuple(sl)))
        offset += size
    return pieces


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length 1-D tensors into a 2-D tensor, one per row."""
    vs = [as_tensor(v) for v in vectors]
    if not vs:
        raise DimensionError("stack_rows of zero tensors")
    out_data = np.stack([v.data for v in vs], axis=0)

    def backward(g):
        for i, v in enumerate(vs):
            _accumulate(v, g[i])

    return _make(out_data, vs, backward, "stack_rows")


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out_data, (a,), backward, "reshape")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward, "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(out_data, (a,), backward, "log")


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """max(a, lo) elementwise; gradient passes where a >= lo."""
    out_data = np.maximum(a.data, lo)
    mask = a.data >= lo

    def backward(g):
        _accumulate(a, g * mask)

    return _make(out_data, (a,), backward, "clamp_min")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - dot))

    return _make(out_data, (a,), backward, "softmax")


def log_sum_exp(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """log(sum(exp(a))) with max-shift; exact for a single element.

    The adjoint is softmax(a) along the reduced axis.
    """
    a = as_tensor(a)
    if a.size == 0:
        raise DimensionError("log_sum_exp of an empty tensor")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_keep = m + np.log(s)
    out_data = out_keep if keepdims else np.squeeze(out_keep, axis=axis) if axis is not None else out_keep.reshape(())
    soft = e / s

    def backward(g):
        g_keep = np.asarray(g)
        if not keepdims:
            if axis is None:
                g_keep = g_keep.reshape((1,) * a.ndim)
            else:
                g_keep = np.expand_dims(g_keep, axis=axis)
        _accumulate(a, g_keep * soft)

    return _make(out_data, (a,), backward, "log_sum_exp")


def reduce_sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    out_data = np.asarray(out_data)

    def backward(g):
        g_keep = np.asarray(g)
        if not keepdims and axis is not None:
            g_keep = np.expand_dims(g_keep, axis=axis)
        _accumulate(a, np.broadcast_to(g_keep, a.shape).copy())

    return _make(out_data, (a,), backward, "reduce_sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / count)


def gru_cell(xt: Tensor, hp: Tensor, h: Tensor) -> Tensor:
    """Fused GRU cell, gates in (reset, update, candidate) order.

    With xt the input projection row and hp the hidden projection (each 3H),

        r  = sigmoid(xt[0:H]  + hp[0:H])
        u  = sigmoid(xt[H:2H] + hp[H:2H])
        c  = tanh(xt[2H:] + r * hp[2H:])
        h' = (1 - u) * c + u * h

    One tape entry instead of ~17; the adjoint below is the hand-derived
    chain rule for all three inputs and is pinned against the primitive
    composition in the tests.
    """
    hidden = h.shape[0]
    if xt.shape != (3 * hidden,) or hp.shape != (3 * hidden,):
        raise DimensionError(
            f"gru_cell expects projections of shape ({3 * hidden},), got {xt.shape} and {hp.shape}"
        )
    x = xt.data
    hh = hp.data
    r = 1.0 / (1.0 + np.exp(-(x[:hidden] + hh[:hidden])))
    u = 1.0 / (1.0 + np.exp(-(x[hidden : 2 * hidden] + hh[hidden : 2 * hidden])))
    hp_c = hh[2 * hidden :]
    c = np.tanh(x[2 * hidden :] + r * hp_c)
    out_data = (1.0 - u) * c + u * h.data

    def backward(g):
        gu = g * (h.data - c) * u * (1.0 - u)
        ga_c = g * (1.0 - u) * (1.0 - c * c)
        ga_r = ga_c * hp_c * r * (1.0 - r)
        _accumulate(xt, np.concatenate([ga_r, gu, ga_c]))
        _accumulate(hp, np.concatenate([ga_r, gu, ga_c * r]))
        _accumulate(h, g * u)

    return _make(out_data, (xt, hp, h), backward, "gru_cell")


def dropout_mask(shape, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted-dropout mask: entries are 0 or 1/(1-p). p=0 is an identity mask."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    keep = rng.random(shape) >= p
    return Tensor(keep.astype(np.float64) / (1.0 - p))


# Relative errors are reported against this floor so that coordinates whose
# true gradient is comparable to finite-difference noise do not dominate.
_REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    """Outcome of comparing tape gradients against central differences."""

    max_rel_error: float
    num_coordinates: int
    tolerance: float
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    max_failures: int = 25,
) -> GradCheckReport:
    """Check tape gradients of a deterministic scalar function of ``params``.

    ``f`` must rebuild its computation from the live parameter tensors on
    every call (dropout disabled, fixed inputs). The analytic gradient comes
    from one taped run; each coordinate is then perturbed in place for a
    central finite difference.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-6, 1e-3], got {epsilon}")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        if not np.isfinite(loss.data).all():
            raise NonFiniteError("grad_check aborted: loss is non-finite at the evaluation point")
        tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    def eval_loss() -> float:
        value = f().item()
        if not np.isfinite(value):
            raise NonFiniteError("grad_check aborted: loss became non-finite during perturbation")
        return value

    report = GradCheckReport(max_rel_error=0.0, num_coordinates=0, tolerance=tolerance)
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = eval_loss()
            flat[i] = orig - epsilon
            down = eval_loss()
            flat[i] = orig
            fd = (up - down) / (2.0 * epsilon)
            ad = a_flat[i]
            rel = abs(fd - ad) / max(abs(fd), abs(ad), _REL_FLOOR)
            report.num_coordinates += 1
            if rel > report.max_rel_error:
                report.max_rel_error = rel
            if rel > tolerance and len(report.failures) < max_failures:
                report.failures.append((p.name or "<anon>", i, float(ad), float(fd), float(rel)))
    return report
