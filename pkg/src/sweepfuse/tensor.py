"""Dense n-d tensors with tape-based reverse-mode differentiation.

Every tensor wraps a contiguous numpy buffer. Operations on tensors that
require gradients record a closure mapping the output gradient to the input
gradients; :func:`backward` replays those closures in reverse topological
order. Leaves accumulate into ``.grad`` until it is reset explicitly.

Element type defaults to float32; wrap gradient checks in
``with precision(np.float64):``.
"""

from __future__ import annotations

import itertools
import math
import struct
from collections.abc import Callable, Iterable, Sequence
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError, ShapeError

_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


def get_dtype() -> np.dtype:
    return _DTYPE


def set_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported element type {dtype}")
    _DTYPE = dtype


@contextmanager
def precision(dtype):
    """Temporarily switch the default element type."""
    previous = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(previous)


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """An n-d array that optionally records how it was computed."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data)
        out.grad = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by scalars")
        return mul(self, 1.0 / float(other))

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> Tensor:
        return reduce("sum", self, axis)

    def mean(self, axis=None) -> Tensor:
        return reduce("mean", self, axis)


class Parameter(Tensor):
    """A trainable leaf tensor with Adam moment buffers."""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.adam_t = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={list(self.shape)})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# -- elementwise ------------------------------------------------------------


def _broadcast(a_shape: tuple, b_shape: tuple) -> tuple:
    """Shape of an elementwise result, allowing only leading-axis broadcast.

    The smaller operand, left-padded with unit axes, must be all ones over a
    leading block and identical to the larger operand afterwards.
    """
    if a_shape == b_shape:
        return a_shape
    for big, small in ((a_shape, b_shape), (b_shape, a_shape)):
        if len(small) > len(big):
            continue
        padded = (1,) * (len(big) - len(small)) + tuple(small)
        k = 0
        while k < len(big) and padded[k] == 1:
            k += 1
        if padded[k:] == big[k:]:
            return big
    raise ShapeError(f"cannot combine shapes {list(a_shape)} and {list(b_shape)}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def elementwise(kind: str, a, b) -> Tensor:
    """Apply ``add``, ``sub`` or ``mul`` to two operands.

    ``b`` may be a scalar, an array of the same shape, or an operand that
    broadcasts along leading axes only.
    """
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    if kind == "add":
        out = a.data + b.data

        def backward(g):
            return _unbroadcast(g, sa), _unbroadcast(g, sb)
    elif kind == "sub":
        out = a.data - b.data

        def backward(g):
            return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    elif kind == "mul":
        out = a.data * b.data
        ad, bd = a.data, b.data

        def backward(g):
            return _unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)
    else:
        raise ContractError(f"unknown elementwise op {kind!r}")
    return Tensor._result(out, (a, b), backward)


def add(a, b) -> Tensor:
    return elementwise("add", a, b)


def sub(a, b) -> Tensor:
    return elementwise("sub", a, b)


def mul(a, b) -> Tensor:
    return elementwise("mul", a, b)


def abs(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._result(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def activation(kind: str, a: Tensor) -> Tensor:
    """``relu`` or ``sigmoid``; sigmoid output is clamped strictly inside (0, 1)."""
    x = a.data
    if kind == "relu":
        mask = x > 0
        return Tensor._result(np.where(mask, x, 0).astype(x.dtype), (a,), lambda g: (g * mask,))
    if kind == "sigmoid":
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
        info = np.finfo(x.dtype)
        y = np.clip(y, info.tiny, 1.0 - info.epsneg)
        return Tensor._result(y, (a,), lambda g: (g * y * (1.0 - y),))
    raise ContractError(f"unknown activation {kind!r}")


def relu(a: Tensor) -> Tensor:
    return activation("relu", a)


def sigmoid(a: Tensor) -> Tensor:
    return activation("sigmoid", a)


# -- shape ------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(n) for n in shape)
    src = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"cannot stack shapes {[list(s) for s in shapes]}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._result(out, tensors, backward)


# -- reductions -------------------------------------------------------------


def _check_axis(a: Tensor, axis) -> int | None:
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {list(a.shape)}")
    return axis % a.ndim


def reduce(kind: str, a: Tensor, axis: int | None = None) -> Tensor:
    """Reduce along ``axis`` (all axes when None) with max, mean, sum or l1norm.

    The max gradient is routed to the first maximal element.
    """
    axis = _check_axis(a, axis)
    x = a.data
    shape = a.shape
    count = x.size if axis is None else shape[axis]
    reduced = shape[:axis] + shape[axis + 1 :] if axis is not None else ()

    def expand(g):
        # rank-0 results are stored with shape (1,)
        g = np.reshape(g, reduced)
        return g if axis is None else np.expand_dims(g, axis)

    if kind == "sum":
        out = x.sum(axis=axis)

        def backward(g):
            return (np.broadcast_to(expand(g), shape).copy(),)
    elif kind == "mean":
        out = x.mean(axis=axis)

        def backward(g):
            return (np.broadcast_to(expand(g) / count, shape).astype(x.dtype),)
    elif kind == "l1norm":
        out = np.abs(x).sum(axis=axis)

        def backward(g):
            return (expand(g) * np.sign(x),)
    elif kind == "max":
        if axis is None:
            flat = int(np.argmax(x))
            out = x.reshape(-1)[flat]

            def backward(g):
                gx = np.zeros(x.size, dtype=x.dtype)
                gx[flat] = np.reshape(g, ())
                return (gx.reshape(shape),)
        else:
            idx = np.expand_dims(np.argmax(x, axis=axis), axis)
            out = np.take_along_axis(x, idx, axis=axis).squeeze(axis)

            def backward(g):
                gx = np.zeros_like(x)
                np.put_along_axis(gx, idx, expand(g), axis=axis)
                return (gx,)
    else:
        raise ContractError(f"unknown reduction {kind!r}")
    return Tensor._result(np.asarray(out, dtype=x.dtype), (a,), backward)


def softmax(a: Tensor, axis: int) -> Tensor:
    axis = _check_axis(a, axis)
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (a,), backward)


# -- convolution ------------------------------------------------------------


def _window_slices(offset, stride, extents):
    return (slice(None),) + tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, extents))


def _tuple(v, nd):
    return tuple(v) if isinstance(v, (tuple, list)) else (int(v),) * nd


def conv(a: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2D or 3D cross-correlation of a single sample.

    Args:
        a: input laid out ``[C_in, (D,) H, W]``.
        weight: ``[C_out, C_in, (k,) k, k]``; its rank selects 2D or 3D.
        bias: optional ``[C_out]``.
        stride, padding: ints or per-axis tuples.
    """
    nd = weight.ndim - 2
    if nd not in (2, 3) or a.ndim != nd + 1:
        raise ShapeError(f"conv expects input rank {nd + 1}, got shape {list(a.shape)}")
    c_out, c_in = weight.shape[:2]
    if a.shape[0] != c_in:
        raise ShapeError(f"conv input has {a.shape[0]} channels, weight {list(weight.shape)} expects {c_in}")
    ksize = weight.shape[2:]
    stride, padding = _tuple(stride, nd), _tuple(padding, nd)
    in_ext = a.shape[1:]
    out_ext = tuple((n + 2 * p - k) // s + 1 for n, p, k, s in zip(in_ext, padding, ksize, stride))
    if min(out_ext) <= 0:
        raise ShapeError(f"conv output would be empty for input {list(a.shape)}")

    x = a.data
    xp = np.pad(x, [(0, 0)] + [(p, p) for p in padding]) if any(padding) else x
    offsets = list(itertools.product(*(range(k) for k in ksize)))
    cols = np.empty((c_in, len(offsets)) + out_ext, dtype=x.dtype)
    for i, off in enumerate(offsets):
        cols[:, i] = xp[_window_slices(off, stride, out_ext)]
    cols = cols.reshape(c_in * len(offsets), -1)
    w2 = weight.data.reshape(c_out, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape((c_out,) + out_ext)
    parents = (a, weight) if bias is None else (a, weight, bias)

    def backward(g):
        g2 = g.reshape(c_out, -1)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gx = None
        if a.requires_grad:
            gcols = (w2.T @ g2).reshape((c_in, len(offsets)) + out_ext)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for i, off in enumerate(offsets):
                gxp[_window_slices(off, stride, out_ext)] += gcols[:, i]
            crop = (slice(None),) + tuple(slice(p, p + n) for p, n in zip(padding, in_ext))
            gx = gxp[crop]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return Tensor._result(out, parents, backward)


def conv_transpose(
    a: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=2,
    padding=0,
    output_padding=0,
    target_shape: Sequence[int] | None = None,
) -> Tensor:
    """Transposed convolution (the adjoint of :func:`conv` with the same geometry).

    ``weight`` is ``[C_out, C_in, (k,) k, k]``. When ``target_shape`` gives the
    spatial extents of a skip connection, the output padding is chosen to hit
    them exactly, and a :class:`ShapeError` is raised if no valid padding does.
    """
    nd = weight.ndim - 2
    if nd not in (2, 3) or a.ndim != nd + 1:
        raise ShapeError(f"conv_transpose expects input rank {nd + 1}, got shape {list(a.shape)}")
    c_out, c_in = weight.shape[:2]
    if a.shape[0] != c_in:
        raise ShapeError(f"conv_transpose input has {a.shape[0]} channels, weight {list(weight.shape)} expects {c_in}")
    ksize = weight.shape[2:]
    stride, padding = _tuple(stride, nd), _tuple(padding, nd)
    in_ext = a.shape[1:]
    base = tuple((n - 1) * s - 2 * p + k for n, s, p, k in zip(in_ext, stride, padding, ksize))
    if target_shape is not None:
        target_shape = tuple(target_shape)
        out_pad = tuple(t - b for t, b in zip(target_shape, base))
        if len(target_shape) != nd or any(not 0 <= op < max(s, 1) or op < 0 for op, s in zip(out_pad, stride)):
            raise ShapeError(f"transposed conv of {list(a.shape)} cannot produce extents {list(target_shape)}")
    else:
        out_pad = _tuple(output_padding, nd)
    out_ext = tuple(b + op for b, op in zip(base, out_pad))
    full_ext = tuple((n - 1) * s + k + op for n, s, k, op in zip(in_ext, stride, ksize, out_pad))

    offsets = list(itertools.product(*(range(k) for k in ksize)))
    n_off = len(offsets)
    x2 = a.data.reshape(c_in, -1)
    wmat = weight.data.reshape(c_out, c_in, n_off).transpose(0, 2, 1).reshape(c_out * n_off, c_in)
    cols = (wmat @ x2).reshape((c_out, n_off) + in_ext)
    full = np.zeros((c_out,) + full_ext, dtype=a.data.dtype)
    for i, off in enumerate(offsets):
        full[_window_slices(off, stride, in_ext)] += cols[:, i]
    crop = (slice(None),) + tuple(slice(p, p + n) for p, n in zip(padding, out_ext))
    out = full[crop]
    if bias is not None:
        out = out + bias.data.reshape((c_out,) + (1,) * nd)
    parents = (a, weight) if bias is None else (a, weight, bias)

    def backward(g):
        gfull = np.zeros(full.shape, dtype=g.dtype)
        gfull[crop] = g
        gcols = np.empty((c_out, n_off) + in_ext, dtype=g.dtype)
        for i, off in enumerate(offsets):
            gcols[:, i] = gfull[_window_slices(off, stride, in_ext)]
        gcols = gcols.reshape(c_out * n_off, -1)
        gx = (wmat.T @ gcols).reshape(a.shape)
        gw = (gcols @ x2.T).reshape(c_out, n_off, c_in).transpose(0, 2, 1).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(c_out, -1).sum(axis=1)

    return Tensor._result(out, parents, backward)


def group_norm(a: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize ``[C, ...]`` over channel groups, then apply a per-channel affine map."""
    c = a.shape[0]
    if groups <= 0 or c % groups:
        raise ConfigError(f"{c} channels cannot be split into {groups} groups")
    x = a.data
    spatial = x[0].size
    xg = x.reshape(groups, -1)
    n = xg.shape[1]
    mean = xg.mean(axis=1, keepdims=True)
    centered = xg - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv_std).reshape(c, spatial)
    gam = gamma.data.reshape(c, 1)
    out = (xhat * gam + beta.data.reshape(c, 1)).reshape(x.shape)

    def backward(g):
        g2 = g.reshape(c, spatial)
        ggamma = (g2 * xhat).sum(axis=1).reshape(gamma.shape)
        gbeta = g2.sum(axis=1).reshape(beta.shape)
        dxhat = (g2 * gam).reshape(groups, n)
        xh = xhat.reshape(groups, n)
        gx = inv_std / n * (n * dxhat - dxhat.sum(axis=1, keepdims=True) - xh * (dxhat * xh).sum(axis=1, keepdims=True))
        return gx.reshape(x.shape), ggamma, gbeta

    return Tensor._result(out, (a, gamma, beta), backward)


def sparse_apply(a: Tensor, matrix) -> Tensor:
    """Apply a fixed sparse linear map to the trailing axes of ``a``.

    ``a`` is ``[C, ...]`` with ``prod(...) == matrix.shape[1]``; the result is
    ``[C, matrix.shape[0]]``. Used for differentiable bilinear sampling.
    """
    c = a.shape[0]
    x2 = a.data.reshape(c, -1)
    if x2.shape[1] != matrix.shape[1]:
        raise ShapeError(f"sparse map {list(matrix.shape)} does not fit input {list(a.shape)}")
    out = np.asarray((matrix @ x2.T).T, dtype=x2.dtype)
    src = a.shape
    return Tensor._result(out, (a,), lambda g: (np.asarray((matrix.T @ g.T).T, dtype=g.dtype).reshape(src),))


# -- differentiation --------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Gradients accumulate across calls until reset.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise ContractError("loss was not produced by a recorded computation")
    grads = {id(loss): np.ones(loss.shape, dtype=loss.data.dtype)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update in place; gradients are cleared afterwards."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name!r} has no gradient")
    for p in params:
        g = p.grad
        p.adam_t += 1
        p.adam_m = beta1 * p.adam_m + (1 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1 - beta2) * g * g
        m_hat = p.adam_m / (1 - beta1**p.adam_t)
        v_hat = p.adam_v / (1 - beta2**p.adam_t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
        p.grad = None


def gradient_check(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    rng: np.random.Generator | None = None,
    max_entries: int | None = 6,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> float:
    """Compare analytic gradients with central finite differences.

    Checks up to ``max_entries`` randomly chosen coordinates of every tensor
    (all of them when None) plus one random direction across all tensors.
    The step is ``h * max(1, |x|)``. Returns the worst relative error
    ``|a - n| / max(|a|, |n|)``; pairs both below 1e-8 count as exact.

    A coordinate whose error exceeds ``tol`` is re-differenced with steps
    shrunk by 2, 10 and 100, keeping the best agreement. If none agrees and
    the numeric estimates also disagree among themselves, the function is not
    smooth there (a ReLU or max kink inside every stencil) and the coordinate
    is skipped; otherwise the error stands.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def evaluate() -> float:
        with no_grad():
            return float(loss_fn().data.reshape(-1)[0])

    def rel(a: float, n: float) -> float:
        scale = max(math.fabs(a), math.fabs(n))
        return 0.0 if scale < 1e-8 else math.fabs(a - n) / scale

    def judge(a: float, central: Callable[[float], float], step: float) -> float:
        n = central(step)
        err = rel(a, n)
        if err <= tol:
            return err
        # a kink inside the stencil biases one step size but not all of them
        estimates = [n]
        for shrink in (2.0, 10.0, 100.0):
            estimates.append(central(step / shrink))
            err = min(err, rel(a, estimates[-1]))
            if err <= tol:
                return err
        spread = max(rel(x, y) for x in estimates for y in estimates)
        return 0.0 if spread > tol else err

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=max_entries, replace=False)
        for i in picks:
            x0 = flat[i]

            def central(step, i=i, x0=x0, flat=flat):
                flat[i] = x0 + step
                up = evaluate()
                flat[i] = x0 - step
                down = evaluate()
                flat[i] = x0
                return (up - down) / (2 * step)

            worst = max(worst, judge(float(grad.reshape(-1)[i]), central, h * max(1.0, math.fabs(x0))))

    directions = [rng.standard_normal(t.shape) for t in tensors]
    originals = [t.data.copy() for t in tensors]

    def directional(step):
        for t, d, x0 in zip(tensors, directions, originals):
            t.data = x0 + step * d
        up = evaluate()
        for t, d, x0 in zip(tensors, directions, originals):
            t.data = x0 - step * d
        down = evaluate()
        for t, x0 in zip(tensors, originals):
            t.data = x0
        return (up - down) / (2 * step)

    projected = float(sum((g * d).sum() for g, d in zip(analytic, directions)))
    worst = max(worst, judge(projected, directional, h))
    for t in tensors:
        t.grad = None
    return worst


# -- checkpoint container ---------------------------------------------------

MAGIC = b"SWFT"
VERSION = 1


def save_parameters(path, params: dict[str, np.ndarray] | Iterable[Parameter]) -> None:
    """Write named arrays as little-endian float32 in the SWFT container."""
    if not isinstance(params, dict):
        params = {p.name: p.data for p in params}
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_parameters(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError("missing SWFT magic", 0)
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError("truncated checkpoint", pos)
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    out = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(buf):
            raise FormatError("truncated parameter name", pos)
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise FormatError(f"truncated data for {name!r}", pos)
        out[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(buf):
        raise FormatError("trailing bytes after last parameter", pos)
    return out
