"""Differentiable tensor operations (NCHW layout throughout)."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigurationError, ShapeError
from .engine import Variable, accumulate, as_variable, make_result


def _pair(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ConfigurationError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out = a.data + b.data

    def _backward(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return make_result(out, (a, b), _backward)


def sub(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out = a.data - b.data

    def _backward(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))

    return make_result(out, (a, b), _backward)


def mul(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out = a.data * b.data

    def _backward(g):
        accumulate(a, _unbroadcast(g * b.data, a.shape))
        accumulate(b, _unbroadcast(g * a.data, b.shape))

    return make_result(out, (a, b), _backward)


def sum(x) -> Variable:  # noqa: A001 - mirrors numpy naming
    x = as_variable(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def _backward(g):
        accumulate(x, np.broadcast_to(g, x.shape))

    return make_result(out, (x,), _backward)


def mean(x) -> Variable:
    x = as_variable(x)
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def _backward(g):
        accumulate(x, np.broadcast_to(g / n, x.shape).astype(x.dtype))

    return make_result(out, (x,), _backward)


def reshape(x, shape) -> Variable:
    x = as_variable(x)
    out = x.data.reshape(shape)

    def _backward(g):
        accumulate(x, g.reshape(x.shape))

    return make_result(out, (x,), _backward)


def relu(x) -> Variable:
    """max(x, 0); the derivative at exactly 0 is taken as 0."""
    x = as_variable(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def _backward(g):
        accumulate(x, g * mask)

    return make_result(out, (x,), _backward)


def sigmoid(x) -> Variable:
    x = as_variable(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def _backward(g):
        accumulate(x, g * out * (1 - out))

    return make_result(out, (x,), _backward)


# ------------------------------------------------------------------ softmax


def _log_softmax_array(d, axis):
    shifted = d - d.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def log_softmax(x, axis=1) -> Variable:
    x = as_variable(x)
    out = _log_softmax_array(x.data, axis)

    def _backward(g):
        p = np.exp(out)
        accumulate(x, g - p * g.sum(axis=axis, keepdims=True))

    return make_result(out, (x,), _backward)


def softmax(x, axis=1) -> Variable:
    x = as_variable(x)
    out = np.exp(_log_softmax_array(x.data, axis))

    def _backward(g):
        accumulate(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return make_result(out, (x,), _backward)


def cross_entropy(logits, labels, class_weights=None) -> Variable:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``).

    ``logits`` is N×K (classification) or N×K×H×W (per-pixel, segmentation)
    with integer ``labels`` of shape N or N×H×W. With ``class_weights`` the
    mean is weighted, normalized by the total weight of the targets.
    """
    logits = as_variable(logits)
    labels = np.asarray(labels)
    k = logits.shape[1]
    if labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.intp)
    logp = _log_softmax_array(logits.data, 1)
    picked = np.take_along_axis(logp, labels[:, None], axis=1)[:, 0]
    if class_weights is None:
        w = np.ones(labels.shape, dtype=logits.dtype)
    else:
        w = np.asarray(class_weights, dtype=logits.dtype)[labels]
    total = w.sum()
    out = np.asarray(-(w * picked).sum() / total, dtype=logits.dtype)

    def _backward(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, labels[:, None], 1, axis=1)
        scale = (g * w / total)[:, None]
        accumulate(logits, (scale * (p - onehot)).astype(logits.dtype))

    return make_result(out, (logits,), _backward)


# ------------------------------------------------------------------- linear


def linear(x, weight, bias=None) -> Variable:
    """``x @ weight.T + bias`` for x of shape N×in, weight out×in."""
    x, weight = as_variable(x), as_variable(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    parents = [x, weight]
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_variable(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
        parents.append(bias)

    def _backward(g):
        accumulate(x, g @ weight.data)
        accumulate(weight, g.T @ x.data)
        if bias is not None:
            accumulate(bias, g.sum(axis=0))

    return make_result(out, parents, _backward)


# ------------------------------------------------------------- convolution


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(xp, kh, kw, sh, sw, oh, ow):
    # windows: N, C, H', W', kh, kw -> N, oh, ow, C, kh, kw
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :oh, :ow]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def _col2im(cols, padded_shape, kh, kw, sh, sw, oh, ow):
    n, c, hp, wp = padded_shape
    cols = cols.reshape(n, oh, ow, c, kh, kw)
    # accumulate channels-last so each tap adds a contiguous block
    xp = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += cols[:, :, :, :, i, j]
    return xp.transpose(0, 3, 1, 2)


def _unpad(xp, ph, pw):
    h, w = xp.shape[2], xp.shape[3]
    return xp[:, :, ph:h - ph, pw:w - pw]


def _conv_forward(x, w, stride, padding):
    """Raw cross-correlation; returns output and the im2col matrix."""
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh = conv_output_size(h, kh, sh, ph)
    ow = conv_output_size(wd, kw, sw, pw)
    if oh <= 0 or ow <= 0:
        raise ConfigurationError(
            f"conv output size {oh}x{ow} is not positive for input {h}x{wd}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    out = cols @ w.reshape(o, -1).T
    out = out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols, xp.shape, (oh, ow)


def _check_conv_shapes(x, w, name):
    if x.ndim != 4:
        raise ShapeError(f"{name}: input must be NCHW, got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"{name}: kernel must be 4-d, got shape {w.shape}")


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Variable:
    """2-d cross-correlation of NCHW input with OIHW kernels."""
    x, weight = as_variable(x), as_variable(weight)
    _check_conv_shapes(x, weight, "conv2d")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels but kernel expects {weight.shape[1]}")
    stride, padding = _pair(stride), _pair(padding)
    if min(stride) < 1 or min(padding) < 0:
        raise ConfigurationError(f"conv2d: bad stride {stride} or padding {padding}")
    out, cols, padded_shape, (oh, ow) = _conv_forward(x.data, weight.data, stride, padding)
    parents = [x, weight]
    if bias is not None:
        bias = as_variable(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv2d: bias {bias.shape} != ({weight.shape[0]},)")
        out += bias.data[None, :, None, None]
        parents.append(bias)
    o, _, kh, kw = weight.shape

    def _backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if weight.requires_grad:
            accumulate(weight, (g2.T @ cols).reshape(weight.shape))
        if x.requires_grad:
            ph, pw = padding
            if stride == (1, 1) and ph < kh and pw < kw:
                # stride 1: input gradient is a full correlation with the flipped kernel
                wf = np.ascontiguousarray(weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                dx = _conv_forward(g, wf, (1, 1), (kh - 1 - ph, kw - 1 - pw))[0]
            else:
                dcols = g2 @ weight.data.reshape(o, -1)
                dxp = _col2im(dcols, padded_shape, kh, kw, *stride, oh, ow)
                dx = np.ascontiguousarray(_unpad(dxp, *padding))
            accumulate(x, dx)
        if bias is not None:
            accumulate(bias, g.sum(axis=(0, 2, 3)))

    return make_result(out, parents, _backward)


def conv_transpose_output_size(size, kernel, stride, padding):
    return (size - 1) * stride - 2 * padding + kernel


def _conv_transpose_forward(x, w, stride, padding):
    n, c, h, wd = x.shape
    _, o, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh = conv_transpose_output_size(h, kh, sh, ph)
    ow = conv_transpose_output_size(wd, kw, sw, pw)
    if oh <= 0 or ow <= 0:
        raise ConfigurationError(
            f"transposed conv output size {oh}x{ow} is not positive for input {h}x{wd}")
    # the scatter is the input-gradient of a conv mapping (o, oh+2p, ow+2p) -> (c, h, w)
    g2 = x.transpose(0, 2, 3, 1).reshape(-1, c)
    cols = g2 @ w.reshape(c, -1)
    padded_shape = (n, o, oh + 2 * ph, ow + 2 * pw)
    outp = _col2im(cols, padded_shape, kh, kw, sh, sw, h, wd)
    return np.ascontiguousarray(_unpad(outp, ph, pw))


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0) -> Variable:
    """Transposed convolution (scatter upsampling).

    ``weight`` has shape (C_in, C_out, kh, kw), i.e. the OIHW kernel of the
    conv2d this op is the adjoint of. Output spatial size is
    ``(in - 1) * stride - 2 * padding + kernel``.
    """
    x, weight = as_variable(x), as_variable(weight)
    _check_conv_shapes(x, weight, "conv_transpose2d")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"conv_transpose2d: input has {x.shape[1]} channels but kernel expects {weight.shape[0]}")
    stride, padding = _pair(stride), _pair(padding)
    if min(stride) < 1 or min(padding) < 0:
        raise ConfigurationError(f"conv_transpose2d: bad stride {stride} or padding {padding}")
    out = _conv_transpose_forward(x.data, weight.data, stride, padding)
    parents = [x, weight]
    if bias is not None:
        bias = as_variable(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"conv_transpose2d: bias {bias.shape} != ({weight.shape[1]},)")
        out += bias.data[None, :, None, None]
        parents.append(bias)
    c, o, kh, kw = weight.shape
    h, wd = x.shape[2:]

    def _backward(g):
        # adjoint of the scatter is the ordinary correlation with the same kernel
        gp = np.pad(g, ((0, 0), (0, 0), padding, padding)) if any(padding) else g
        gcols = _im2col(gp, kh, kw, *stride, h, wd)
        if x.requires_grad:
            dx = gcols @ weight.data.reshape(c, -1).T
            accumulate(x, dx.reshape(x.shape[0], h, wd, c).transpose(0, 3, 1, 2))
        if weight.requires_grad:
            xs = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
            accumulate(weight, (xs.T @ gcols).reshape(weight.shape))
        if bias is not None:
            accumulate(bias, g.sum(axis=(0, 2, 3)))

    return make_result(out, parents, _backward)


# ------------------------------------------------------------- normalization


def batch_norm(x, state) -> Variable:
    """Per-channel batch normalization driven by a :class:`BatchNormState`.

    Training mode normalizes with the batch statistics (biased variance) and
    updates the running estimates with the unbiased variance; inference mode
    uses only the running estimates.
    """
    x = as_variable(x)
    if x.ndim != 4 or x.shape[1] != state.num_channels:
        raise ShapeError(f"batch_norm: expected N×{state.num_channels}×H×W, got {x.shape}")
    gamma, beta = state.scale, state.shift
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    dt = x.dtype
    eps = dt.type(state.eps)
    if state.training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ConfigurationError(
                "batch_norm in training mode needs at least 2 values per channel")
        mu = x.data.mean(axis=axes)
        xc = x.data - mu.reshape(shape)
        var = (xc * xc).mean(axis=axes)
        inv_std = (1.0 / np.sqrt(var + eps)).astype(dt)
        xhat = xc * inv_std.reshape(shape)
        mom = state.momentum
        rm, rv = state.running_mean, state.running_var
        rm[...] = (1 - mom) * rm + mom * mu
        rv[...] = (1 - mom) * rv + mom * var * (m / (m - 1))
    else:
        m = None
        inv_std = (1.0 / np.sqrt(state.running_var.astype(dt) + eps)).astype(dt)
        xhat = (x.data - state.running_mean.astype(dt).reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape).astype(dt) + beta.data.reshape(shape).astype(dt)

    def _backward(g):
        accumulate(gamma, (g * xhat).sum(axis=axes).astype(gamma.dtype))
        accumulate(beta, g.sum(axis=axes).astype(beta.dtype))
        if not x.requires_grad:
            return
        gx = g * gamma.data.reshape(shape).astype(dt)
        if m is None:
            accumulate(x, gx * inv_std.reshape(shape))
        else:
            mean_g = gx.mean(axis=axes, keepdims=True)
            mean_gx = (gx * xhat).mean(axis=axes, keepdims=True)
            accumulate(x, inv_std.reshape(shape) * (gx - mean_g - xhat * mean_gx))

    return make_result(out.astype(dt, copy=False), (x, gamma, beta), _backward)


# ------------------------------------------------------------------ pooling


def max_pool2d(x, kernel=2, stride=None) -> Variable:
    x = as_variable(x)
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    n, c, h, w = x.shape
    oh, ow = conv_output_size(h, kh, sh, 0), conv_output_size(w, kw, sw, 0)
    if oh <= 0 or ow <= 0:
        raise ConfigurationError(f"max_pool2d: input {h}x{w} smaller than kernel {kh}x{kw}")
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :oh, :ow]
    flat = win.reshape(n, c, oh, ow, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def _backward(g):
        dx = np.zeros_like(x.data)
        ii, jj = np.divmod(arg, kw)
        rows = np.arange(oh)[None, None, :, None] * sh + ii
        cols = np.arange(ow)[None, None, None, :] * sw + jj
        nn_ = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(dx, (nn_, cc, rows, cols), g)
        accumulate(x, dx)

    return make_result(np.ascontiguousarray(out), (x,), _backward)


def global_avg_pool(x) -> Variable:
    """N×C×H×W -> N×C spatial mean."""
    x = as_variable(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def _backward(g):
        accumulate(x, np.broadcast_to((g / hw)[:, :, None, None], x.shape).astype(x.dtype))

    return make_result(out, (x,), _backward)


# ------------------------------------------------------- resize and flips


def interpolation_matrix(out_size: int, in_size: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic out×in matrix for align-corners-false linear resampling.

    Source coordinates are ``(i + 0.5) * in/out - 0.5`` clamped to the edge.
    """
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    m = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def bilinear_resize(x, out_h: int, out_w: int) -> Variable:
    """Bilinear resize of the two trailing spatial axes (align_corners=False)."""
    x = as_variable(x)
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(f"resize target must be positive, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        out = x.data.copy()

        def _identity(g):
            accumulate(x, g)

        return make_result(out, (x,), _identity)
    rh = interpolation_matrix(out_h, h, x.dtype)
    rw = interpolation_matrix(out_w, w, x.dtype)
    out = np.matmul(np.matmul(rh, x.data), rw.T)

    def _backward(g):
        accumulate(x, np.matmul(np.matmul(rh.T, g), rw))

    return make_result(out, (x,), _backward)


_FLIP_AXES = {
    "identity": (),
    "horizontal": (-1,),
    "vertical": (-2,),
    "both": (-2, -1),
}


def flip_axes(axis: str):
    try:
        return _FLIP_AXES[axis]
    except KeyError:
        raise ConfigurationError(f"unknown flip {axis!r}; expected one of {sorted(_FLIP_AXES)}") from None


def flip(x, axis: str) -> Variable:
    """Reverse the spatial axes named by ``axis`` (horizontal = left-right)."""
    x = as_variable(x)
    axes = flip_axes(axis)
    out = np.flip(x.data, axes).copy() if axes else x.data.copy()

    def _backward(g):
        accumulate(x, np.flip(g, axes) if axes else g)

    return make_result(out, (x,), _backward)
