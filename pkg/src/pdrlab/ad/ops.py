"""Differentiable ops.

Every op takes tensors (or array-likes, wrapped as constants) and returns a
Tensor whose backward closure maps the output gradient to one gradient per
input. Broadcasting follows numpy; broadcast inputs receive gradients summed
back to their own shape.
"""

from typing import Any, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _norm_axes(axis: Any, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# --- elementwise binary ---

def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_result(out, (a, b), backward, "div")


def where(condition: np.ndarray, a: Any, b: Any) -> Tensor:
    """Select from ``a`` where ``condition`` holds, else from ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    condition = np.asarray(condition, dtype=bool)
    try:
        np.broadcast_shapes(condition.shape, a.shape, b.shape)
    except ValueError:
        raise ShapeError("where", condition.shape, a.shape, b.shape) from None

    def backward(g):
        return (
            _unbroadcast(np.where(condition, g, 0.0), a.shape),
            _unbroadcast(np.where(condition, 0.0, g), b.shape),
        )

    return make_result(np.where(condition, a.data, b.data), (a, b), backward, "where")


def matmul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


# --- elementwise unary ---

def neg(x: Any) -> Tensor:
    x = as_tensor(x)
    return make_result(-x.data, (x,), lambda g: (-g,), "neg")


def power(x: Any, exponent: float) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g * exponent * x.data ** (exponent - 1),)

    return make_result(x.data ** exponent, (x,), backward, "pow")


def relu(x: Any) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Any) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Any) -> Tensor:
    x = as_tensor(x)
    # tanh form stays finite for large |x|
    y = (0.5 * (np.tanh(0.5 * x.data) + 1.0)).astype(x.dtype)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(x: Any) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,), "exp")


def log(x: Any) -> Tensor:
    x = as_tensor(x)
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def absolute(x: Any) -> Tensor:
    x = as_tensor(x)
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def sqrt(x: Any) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return make_result(y, (x,), lambda g: (g * 0.5 / y,), "sqrt")


def sin(x: Any) -> Tensor:
    x = as_tensor(x)
    return make_result(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),), "sin")


def cos(x: Any) -> Tensor:
    x = as_tensor(x)
    return make_result(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),), "cos")


def clamp(x: Any, lo: Any = None, hi: Any = None) -> Tensor:
    """Clip into [lo, hi] (scalars or broadcastable arrays); gradient is zero outside."""
    x = as_tensor(x)
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    mask = (x.data >= lo_v) & (x.data <= hi_v)
    out = np.clip(x.data, lo_v, hi_v).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * mask,), "clamp")


# --- reductions ---

def sum(x: Any, axis: Any = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Any, axis: Any = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(np.asarray(x.data.mean(axis=axes, keepdims=keepdims)), (x,), backward, "mean")


def logsumexp(x: Any, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = np.exp(x.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + m
    weights = shifted / total

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return make_result(out if keepdims else np.squeeze(out, axis=axis), (x,), backward, "logsumexp")


def softmax(x: Any, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward, "softmax")


def log_softmax(x: Any, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True)) + m
    y = x.data - lse
    probs = np.exp(y)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_result(y, (x,), backward, "log_softmax")


def l2_normalize(x: Any, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale to unit L2 norm along ``axis``."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    safe = np.maximum(norm, eps)
    y = x.data / safe
    small = norm < eps

    def backward(g):
        projected = (g - y * (g * y).sum(axis=axis, keepdims=True)) / safe
        return (np.where(small, g / eps, projected),)

    return make_result(y, (x,), backward, "l2_normalize")


# --- shape ---

def reshape(x: Any, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Any, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def index(x: Any, idx: Any) -> Tensor:
    """``x[idx]`` for basic and advanced indices; backward scatters."""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_result(np.asarray(x.data[idx]), (x,), backward, "index")


def concatenate(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != ax
        ):
            raise ShapeError("concatenate", ref.shape, t.shape)
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concatenate")


def stack(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError("stack", tensors[0].shape, t.shape)
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return make_result(out, tensors, backward, "stack")


# --- convolution ---

def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> strided view (N, C, Ho, Wo, kh, kw)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _fold(cols: np.ndarray, out_shape: tuple[int, ...], stride: int) -> np.ndarray:
    """Adjoint of ``_windows``: sum (N, Ho, Wo, C, kh, kw) patches into (N, C, H, W)."""
    n, ho, wo, c, kh, kw = cols.shape
    out = np.zeros(out_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def conv2d(x: Any, weight: Any, bias: Any = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. x: (N, C, H, W), weight: (O, C, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    _, _, kh, kw = weight.shape
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError("conv2d", x.shape, weight.shape)
    win = _windows(xp, kh, kw, stride)
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def backward(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gx = None
        if x.requires_grad:
            cols = np.tensordot(g.transpose(0, 2, 3, 1), weight.data, axes=([3], [0]))
            gxp = _fold(cols, xp.shape, stride)
            gx = np.ascontiguousarray(gxp[:, :, p:p + x.shape[2], p:p + x.shape[3]])
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_result(out, parents, backward, "conv2d")


def conv_transpose2d(x: Any, weight: Any, bias: Any = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution. x: (N, Ci, H, W), weight: (Ci, Co, kh, kw).

    Output size is (H - 1) * stride + kh - 2 * padding.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeError("conv_transpose2d", x.shape, weight.shape)
    n, _, h, w = x.shape
    _, co, kh, kw = weight.shape
    p = padding
    hf, wf = (h - 1) * stride + kh, (w - 1) * stride + kw
    if hf - 2 * p <= 0 or wf - 2 * p <= 0:
        raise ShapeError("conv_transpose2d", x.shape, weight.shape)
    cols = np.tensordot(x.data.transpose(0, 2, 3, 1), weight.data, axes=([3], [0]))
    full = _fold(cols, (n, co, hf, wf), stride)
    out = full[:, :, p:hf - p, p:wf - p]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def backward(g):
        gfull = np.zeros((n, co, hf, wf), dtype=g.dtype)
        gfull[:, :, p:hf - p, p:wf - p] = g
        win = _windows(gfull, kh, kw, stride)
        gx = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_result(out, parents, backward, "conv_transpose2d")


# --- sampling and splatting ---

def _scatter_rows(index: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    """out[m] = sum of values[k] with index[k] == m; fixed accumulation order."""
    flat = values.reshape(values.shape[0], -1)
    out = np.empty((size, flat.shape[1]), dtype=values.dtype)
    for c in range(flat.shape[1]):
        out[:, c] = np.bincount(index, weights=flat[:, c], minlength=size)
    return out.reshape((size,) + values.shape[1:])


def scatter_add(src: Any, index: np.ndarray, dim_size: int) -> Tensor:
    """Sum rows of ``src`` (K, ...) into ``dim_size`` slots; ties accumulate.

    Backward is the matching gather.
    """
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 1 or src.ndim < 1 or index.shape[0] != src.shape[0]:
        raise ShapeError("scatter_add", src.shape, index.shape)
    if index.size and (index.min() < 0 or index.max() >= dim_size):
        raise ValueError(f"scatter_add: index out of range [0, {dim_size})")
    out = _scatter_rows(index, src.data, dim_size).astype(src.dtype)
    return make_result(out, (src,), lambda g: (g[index],), "scatter_add")


def grid_sample(image: Any, grid: Any) -> Tensor:
    """Bilinear sampling with corner-aligned normalized coordinates.

    image: (N, C, H, W); grid: (N, Ho, Wo, 2) holding (x, y) in [-1, 1],
    where -1 and 1 are the centers of the first and last pixel. Coordinates
    outside the range are clamped onto the border and receive zero gradient.
    Returns (N, C, Ho, Wo).
    """
    image, grid = as_tensor(image), as_tensor(grid)
    if image.ndim != 4 or grid.ndim != 4 or grid.shape[-1] != 2 or grid.shape[0] != image.shape[0]:
        raise ShapeError("grid_sample", image.shape, grid.shape)
    n, c, h, w = image.shape
    _, ho, wo, _ = grid.shape
    gx, gy = grid.data[..., 0], grid.data[..., 1]
    inside_x = (gx >= -1.0) & (gx <= 1.0)
    inside_y = (gy >= -1.0) & (gy <= 1.0)
    px = (np.clip(gx, -1.0, 1.0) + 1.0) * 0.5 * (w - 1)
    py = (np.clip(gy, -1.0, 1.0) + 1.0) * 0.5 * (h - 1)
    x0 = np.clip(np.floor(px), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(py), 0, max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (px - x0)[..., None]
    fy = (py - y0)[..., None]

    rows = image.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    base = (np.arange(n) * h * w)[:, None, None]
    i00, i01 = base + y0 * w + x0, base + y0 * w + x1
    i10, i11 = base + y1 * w + x0, base + y1 * w + x1
    v00, v01, v10, v11 = rows[i00], rows[i01], rows[i10], rows[i11]
    w00, w01 = (1 - fx) * (1 - fy), fx * (1 - fy)
    w10, w11 = (1 - fx) * fy, fx * fy
    out = (w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11).transpose(0, 3, 1, 2)

    def backward(g):
        gt = g.transpose(0, 2, 3, 1)  # (N, Ho, Wo, C)
        idx = np.concatenate([i00.ravel(), i01.ravel(), i10.ravel(), i11.ravel()])
        vals = np.concatenate([
            (w00 * gt).reshape(-1, c), (w01 * gt).reshape(-1, c),
            (w10 * gt).reshape(-1, c), (w11 * gt).reshape(-1, c),
        ])
        gimg = _scatter_rows(idx, vals, n * h * w).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        dpx = ((1 - fy) * (v01 - v00) + fy * (v11 - v10)) * gt
        dpy = ((1 - fx) * (v10 - v00) + fx * (v11 - v01)) * gt
        ggrid = np.stack([
            dpx.sum(-1) * 0.5 * (w - 1) * inside_x,
            dpy.sum(-1) * 0.5 * (h - 1) * inside_y,
        ], axis=-1)
        return np.ascontiguousarray(gimg), ggrid.astype(grid.dtype)

    return make_result(np.ascontiguousarray(out), (image, grid), backward, "grid_sample")
