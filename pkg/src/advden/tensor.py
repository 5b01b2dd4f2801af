"""Rank-3 arrays with a recorded computation graph and reverse-mode gradients.

Activations are laid out as ``(batch, channels, length)``. Parameters may have
any rank. Every differentiable primitive records one entry on the active
:class:`Tape`; :func:`backward` replays the tape in reverse.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

__all__ = [
    "Var", "Tape", "get_tape", "use_tape", "no_grad", "backward",
    "conv1d_dilated", "deconv1d_dilated", "dense", "relu", "sigmoid",
    "mse", "add", "scale", "affine", "mul_const", "log", "clamp",
    "sum_all", "mean", "flatten", "record_relu_masks",
]


class Var:
    """A dense array that can take part in reverse-mode differentiation."""

    __slots__ = ("values", "grad", "requires_grad", "node_id", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(values)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1, 1)
        if any(n < 1 for n in arr.shape):
            raise ShapeError("Var", "all dimensions must be >= 1", got=arr.shape)
        self.values = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Var":
        """Same values, cut from the graph."""
        return Var(self.values, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.values.dtype, copy=True).reshape(self.values.shape)
        else:
            self.grad += g.reshape(self.values.shape)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return NotImplemented

    __rmul__ = __mul__


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: Var
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered log of differentiable operations for one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []
        self.enabled = True

    def __len__(self):
        return len(self.records)

    def record(self, op, inputs, output, backward_fn) -> None:
        output.node_id = len(self.records)
        output.requires_grad = True
        self.records.append(_Record(op, tuple(inputs), output, backward_fn))

    def clear(self) -> None:
        for rec in self.records:
            rec.output.node_id = None
        self.records.clear()

    def backward(self, loss: Var, clear: bool = True) -> None:
        if loss.size != 1:
            raise ShapeError("backward", "loss must be a scalar", expected=(1, 1, 1), got=loss.shape)
        if not loss.requires_grad:
            raise ShapeError("backward", "loss does not depend on any differentiable input")
        if loss.node_id is not None and loss.node_id >= len(self.records):
            raise ShapeError("backward", "loss is not recorded on this tape")
        loss._accumulate(np.ones_like(loss.values))
        start = len(self.records) - 1 if loss.node_id is None else loss.node_id
        for rec in reversed(self.records[: start + 1]):
            g = rec.output.grad
            if g is None:
                continue
            grads = rec.backward(g)
            for inp, gi in zip(rec.inputs, grads):
                if gi is not None and isinstance(inp, Var) and inp.requires_grad:
                    inp._accumulate(gi)
        if clear:
            self.clear()


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def use_tape(tape: Tape):
    prev = getattr(_local, "tape", None)
    _local.tape = tape
    try:
        yield tape
    finally:
        _local.tape = prev


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them."""
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def backward(loss: Var) -> None:
    """Propagate d(loss)/d(.) into ``.grad`` of every reachable Var.

    Gradients accumulate, so call ``zero_grad`` on parameters between steps.
    The tape is cleared afterwards.
    """
    get_tape().backward(loss)


def _track(*inputs) -> bool:
    tape = get_tape()
    return tape.enabled and any(isinstance(v, Var) and v.requires_grad for v in inputs)


def _finish(op, inputs, out_values, backward_fn) -> Var:
    out = Var(out_values)
    if _track(*inputs):
        get_tape().record(op, inputs, out, backward_fn)
    return out


def _values(x):
    return x.values if isinstance(x, Var) else np.asarray(x)


# ---------------------------------------------------------------------------
# ReLU mask probe: finite-difference harnesses use it to skip kink crossings.

_relu_probe: Optional[list] = None


@contextlib.contextmanager
def record_relu_masks():
    """Collect the sign pattern of every ReLU evaluated inside the block."""
    global _relu_probe
    prev = _relu_probe
    _relu_probe = masks = []
    try:
        yield masks
    finally:
        _relu_probe = prev


# ---------------------------------------------------------------------------
# Dilated correlation core shared by convolution and deconvolution.

def _correlate(x: np.ndarray, kernel: np.ndarray, d: int, pad_left: int, out_len: int):
    """y[b,o,t] = sum_{i,j} x[b, i, t + d*j - pad_left] * kernel[o, i, j].

    Indices outside ``[0, length)`` read zero. Returns ``(y, cols)``; ``cols``
    is kept for the backward pass.
    """
    batch, cin, length = x.shape
    cout, _, r = kernel.shape
    span = out_len + d * (r - 1)
    xp = np.zeros((cin, batch, span), dtype=np.result_type(x, kernel))
    stop = min(pad_left + length, span)
    if stop > pad_left:
        xp[:, :, pad_left:stop] = x.transpose(1, 0, 2)[:, :, : stop - pad_left]
    cols = np.stack([xp[:, :, d * j: d * j + out_len] for j in range(r)], axis=1)
    cols = cols.reshape(cin * r, batch * out_len)
    y = kernel.reshape(cout, cin * r) @ cols
    y = y.reshape(cout, batch, out_len).transpose(1, 0, 2)
    return np.ascontiguousarray(y), cols


def _correlate_grad_kernel(g: np.ndarray, cols: np.ndarray, kernel_shape) -> np.ndarray:
    cout = g.shape[1]
    g2 = g.transpose(1, 0, 2).reshape(cout, -1)
    return (g2 @ cols.T).reshape(kernel_shape)


def _correlate_grad_input(g: np.ndarray, kernel: np.ndarray, d: int, pad_left: int, length: int) -> np.ndarray:
    batch, cout, out_len = g.shape
    _, cin, r = kernel.shape
    g2 = g.transpose(1, 0, 2).reshape(cout, -1)
    dcols = (kernel.reshape(cout, cin * r).T @ g2).reshape(cin, r, batch, out_len)
    span = out_len + d * (r - 1)
    dxp = np.zeros((cin, batch, span), dtype=dcols.dtype)
    for j in range(r):
        dxp[:, :, d * j: d * j + out_len] += dcols[:, j]
    dx = np.zeros((cin, batch, length), dtype=dcols.dtype)
    stop = min(pad_left + length, span)
    if stop > pad_left:
        dx[:, :, : stop - pad_left] = dxp[:, :, pad_left:stop]
    return np.ascontiguousarray(dx.transpose(1, 0, 2))


def _check_dilation(op, d):
    if int(d) != d or d < 1:
        raise ShapeError(op, "dilation must be an integer >= 1", got=d)


def _check_bias(op, b, n):
    if b is not None and _values(b).shape != (n,):
        raise ShapeError(op, "bias length must equal output channels", expected=(n,), got=_values(b).shape)


def conv1d_dilated(x: Var, w: Var, b: Optional[Var] = None, d: int = 1, pad: Optional[int] = None) -> Var:
    """Centered dilated convolution with zero padding.

    ``w`` has shape ``(out_ch, in_ch, r)`` with odd ``r``; tap ``j`` reads
    ``x[t + d*(j - (r-1)/2)]``. The default ``pad = d*(r-1)/2`` keeps the length.
    """
    _check_dilation("conv1d_dilated", d)
    xv, wv = _values(x), _values(w)
    if xv.ndim != 3:
        raise ShapeError("conv1d_dilated", "input must be (batch, channels, length)", got=xv.shape)
    if wv.ndim != 3 or wv.shape[2] % 2 == 0:
        raise ShapeError("conv1d_dilated", "kernel must be (out_ch, in_ch, r) with odd r", got=wv.shape)
    if xv.shape[1] != wv.shape[1]:
        raise ShapeError("conv1d_dilated", "input channels do not match kernel", expected=wv.shape[1], got=xv.shape[1])
    _check_bias("conv1d_dilated", b, wv.shape[0])
    r = wv.shape[2]
    if pad is None:
        pad = d * (r - 1) // 2
    length = xv.shape[2]
    out_len = length + 2 * pad - d * (r - 1)
    if out_len < 1:
        raise ShapeError("conv1d_dilated", "output would be empty", got=out_len)

    y, cols = _correlate(xv, wv, d, pad, out_len)
    if b is not None:
        y += _values(b)[None, :, None]

    def backward_fn(g):
        gx = _correlate_grad_input(g, wv, d, pad, length) if _needs(x) else None
        gw = _correlate_grad_kernel(g, cols, wv.shape) if _needs(w) else None
        gb = g.sum(axis=(0, 2)) if _needs(b) else None
        return gx, gw, gb

    return _finish("conv1d_dilated", (x, w, b), y, backward_fn)


def deconv1d_dilated(x: Var, w: Var, b: Optional[Var] = None, d: int = 1,
                     out_len: Optional[int] = None, shift: Optional[int] = None) -> Var:
    """Centered dilated transposed convolution.

    ``w`` has shape ``(in_ch, out_ch, r)``. Uncentered, the operator is
    ``y[t] = sum_j x[t - d*j] * w[j]`` over taps with ``0 <= t - d*j < len(x)``;
    the result is shifted left by ``shift`` (default ``d*(r-1)/2``) and cut to
    ``out_len`` (default: the input length). With the same ``w`` array this is the exact adjoint of
    :func:`conv1d_dilated` with default padding.
    """
    _check_dilation("deconv1d_dilated", d)
    xv, wv = _values(x), _values(w)
    if xv.ndim != 3:
        raise ShapeError("deconv1d_dilated", "input must be (batch, channels, length)", got=xv.shape)
    if wv.ndim != 3 or wv.shape[2] % 2 == 0:
        raise ShapeError("deconv1d_dilated", "kernel must be (in_ch, out_ch, r) with odd r", got=wv.shape)
    if xv.shape[1] != wv.shape[0]:
        raise ShapeError("deconv1d_dilated", "input channels do not match kernel", expected=wv.shape[0], got=xv.shape[1])
    _check_bias("deconv1d_dilated", b, wv.shape[1])
    r = wv.shape[2]
    length = xv.shape[2]
    if out_len is None:
        out_len = length
    if out_len < 1:
        raise ShapeError("deconv1d_dilated", "output length must be >= 1", got=out_len)
    if shift is None:
        shift = d * (r - 1) // 2
    if not 0 <= shift <= d * (r - 1):
        raise ShapeError("deconv1d_dilated", "shift out of range", expected=(0, d * (r - 1)), got=shift)
    pad_left = d * (r - 1) - shift
    kernel = np.ascontiguousarray(wv.transpose(1, 0, 2)[:, :, ::-1])

    y, cols = _correlate(xv, kernel, d, pad_left, out_len)
    if b is not None:
        y += _values(b)[None, :, None]

    def backward_fn(g):
        gx = _correlate_grad_input(g, kernel, d, pad_left, length) if _needs(x) else None
        gw = None
        if _needs(w):
            gk = _correlate_grad_kernel(g, cols, kernel.shape)
            gw = np.ascontiguousarray(gk[:, :, ::-1].transpose(1, 0, 2))
        gb = g.sum(axis=(0, 2)) if _needs(b) else None
        return gx, gw, gb

    return _finish("deconv1d_dilated", (x, w, b), y, backward_fn)


def _needs(v) -> bool:
    return isinstance(v, Var) and v.requires_grad


# ---------------------------------------------------------------------------
# Dense, shape and elementwise operations.

def flatten(x: Var) -> Var:
    """(batch, channels, length) -> (batch, 1, channels*length)."""
    xv = _values(x)
    shape = xv.shape
    y = xv.reshape(shape[0], 1, -1)
    return _finish("flatten", (x,), y, lambda g: (g.reshape(shape),))


def dense(x: Var, W: Var, b: Optional[Var] = None) -> Var:
    """Affine map on the flattened features: (batch, 1, n) -> (batch, 1, m)."""
    xv, Wv = _values(x), _values(W)
    if Wv.ndim != 2:
        raise ShapeError("dense", "weights must be (out, in)", got=Wv.shape)
    batch = xv.shape[0]
    flat = xv.reshape(batch, -1)
    if flat.shape[1] != Wv.shape[1]:
        raise ShapeError("dense", "input dimension does not match weights", expected=Wv.shape[1], got=flat.shape[1])
    _check_bias("dense", b, Wv.shape[0])
    y = flat @ Wv.T
    if b is not None:
        y = y + _values(b)
    in_shape = xv.shape

    def backward_fn(g):
        g2 = g.reshape(batch, -1)
        gx = (g2 @ Wv).reshape(in_shape) if _needs(x) else None
        gW = g2.T @ flat if _needs(W) else None
        gb = g2.sum(axis=0) if _needs(b) else None
        return gx, gW, gb

    return _finish("dense", (x, W, b), y.reshape(batch, 1, -1), backward_fn)


def relu(x: Var) -> Var:
    xv = _values(x)
    mask = xv > 0
    if _relu_probe is not None:
        _relu_probe.append(mask.copy())
    return _finish("relu", (x,), np.where(mask, xv, 0.0).astype(xv.dtype), lambda g: (g * mask,))


def sigmoid(x: Var) -> Var:
    xv = _values(x)
    s = np.exp(-np.logaddexp(0.0, -xv)).astype(xv.dtype)
    return _finish("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def log(x: Var) -> Var:
    xv = _values(x)
    return _finish("log", (x,), np.log(xv), lambda g: (g / xv,))


def clamp(x: Var, lo: float, hi: float) -> Var:
    """Clip into [lo, hi]; the gradient is zero where clipping happened."""
    xv = _values(x)
    inside = (xv >= lo) & (xv <= hi)
    return _finish("clamp", (x,), np.clip(xv, lo, hi), lambda g: (g * inside,))


def add(a: Var, b: Var) -> Var:
    av, bv = _values(a), _values(b)
    if av.shape != bv.shape:
        raise ShapeError("add", "operands must have identical shapes", expected=av.shape, got=bv.shape)
    return _finish("add", (a, b), av + bv, lambda g: (g, g))


def scale(x: Var, c: float) -> Var:
    xv = _values(x)
    return _finish("scale", (x,), xv * c, lambda g: (g * c,))


def affine(x: Var, a: float, b: float) -> Var:
    """Elementwise a*x + b."""
    xv = _values(x)
    return _finish("affine", (x,), a * xv + b, lambda g: (g * a,))


def mul_const(x: Var, c) -> Var:
    """Elementwise product with a constant array (broadcast to x's shape)."""
    xv = _values(x)
    c = np.broadcast_to(np.asarray(c, dtype=xv.dtype), xv.shape)
    return _finish("mul_const", (x,), xv * c, lambda g: (g * c,))


def sum_all(x: Var) -> Var:
    xv = _values(x)
    total = xv.sum(dtype=xv.dtype).reshape(1, 1, 1)
    return _finish("sum", (x,), total, lambda g: (np.broadcast_to(g.reshape(()), xv.shape),))


def mean(x: Var) -> Var:
    xv = _values(x)
    n = xv.size
    m = (xv.sum(dtype=xv.dtype) / n).reshape(1, 1, 1)
    return _finish("mean", (x,), m, lambda g: (np.broadcast_to(g.reshape(()) / n, xv.shape),))


def mse(pred: Var, target) -> Var:
    """Mean of squared differences over every element."""
    pv, tv = _values(pred), _values(target)
    if pv.shape != tv.shape:
        raise ShapeError("mse", "prediction and target shapes differ", expected=tv.shape, got=pv.shape)
    diff = pv - tv
    n = diff.size
    out = (np.square(diff).sum(dtype=pv.dtype) / n).reshape(1, 1, 1)

    def backward_fn(g):
        gp = diff * (2.0 * g.reshape(()) / n)
        return gp, (-gp if _needs(target) else None)

    return _finish("mse", (pred, target), out, backward_fn)


def check_finite(v: Var, where: str) -> None:
    if not np.all(np.isfinite(v.values)):
        raise NonFiniteError(where)
