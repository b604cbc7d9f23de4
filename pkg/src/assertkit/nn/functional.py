"""Differentiable primitives used by the network architectures.

All image tensors are laid out N x C x H x W. For feature maps H is the
spectral axis and W is time.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _columns(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, stride: int, dilation: int) -> np.ndarray:
    # view shaped (C, kh, kw, N, Ho, Wo); copying it is the im2col step
    n, c = xp.shape[:2]
    s_n, s_c, s_h, s_w = xp.strides
    return as_strided(
        xp,
        shape=(c, kh, kw, n, ho, wo),
        strides=(s_c, dilation * s_h, dilation * s_w, s_n, stride * s_h, stride * s_w),
        writeable=False,
    )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation with stride, zero padding and dilation."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c != c_in:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {c_in}")
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d input {h}x{w} too small for kernel {kh}x{kw} dilation {dilation}")

    xd = x.data
    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = np.ascontiguousarray(xd)
    wmat = weight.data.reshape(c_out, -1)
    cols = _columns(xp, kh, kw, ho, wo, stride, dilation).reshape(c * kh * kw, -1)
    out = (wmat @ cols).reshape(c_out, n, ho, wo)
    if bias is not None:
        out += bias.data.reshape(-1, 1, 1, 1)
    out = out.transpose(1, 0, 2, 3)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(c_out, -1)
        grad_w = grad_x = grad_b = None
        if weight.requires_grad:
            grad_w = (gt @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            grad_b = gt.sum(axis=1)
        if x.requires_grad:
            dcols = (wmat.T @ gt).reshape(c, kh, kw, n, ho, wo)
            dxp = np.zeros((c, n) + xp.shape[2:], dtype=xp.dtype)
            h_span = stride * (ho - 1) + 1
            w_span = stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i * dilation:i * dilation + h_span:stride,
                        j * dilation:j * dilation + w_span:stride] += dcols[:, i, j]
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            grad_x = dxp.transpose(1, 0, 2, 3)
        return grad_x, grad_w, grad_b

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, lambda g: backward(g)[: len(parents)])


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    a = x.data
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over (N, H, W).

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance, exponential moving average).
    """
    xd = x.data
    shape = (1, -1, 1, 1)
    if training:
        axes = (0, 2, 3)
        count = xd.shape[0] * xd.shape[2] * xd.shape[3]
        mean = xd.mean(axis=axes, dtype=np.float64).astype(xd.dtype)
        centered = xd - mean.reshape(shape)
        var = (centered * centered).mean(axis=axes, dtype=np.float64).astype(xd.dtype)
        unbiased = var * (count / max(count - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std.reshape(shape)
    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype)
        xhat = (xd - running_mean.astype(xd.dtype).reshape(shape)) * inv_std.reshape(shape)
    g_data = gamma.data.reshape(shape)
    out = xhat * g_data + beta.data.reshape(shape)

    def backward(g):
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        grad_beta = g.sum(axis=(0, 2, 3))
        gx = g * g_data
        if training:
            # d/dx of (x - mean) / std with batch statistics
            m1 = gx.mean(axis=(0, 2, 3), keepdims=True)
            m2 = (gx * xhat).mean(axis=(0, 2, 3), keepdims=True)
            grad_x = (gx - m1 - xhat * m2) * inv_std.reshape(shape)
        else:
            grad_x = gx * inv_std.reshape(shape)
        return grad_x, grad_gamma, grad_beta

    return Tensor._make(out, (x, gamma, beta), backward)


def max_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling (stride = kernel); trailing rows/cols that
    do not fill a window are dropped."""
    n, c, h, w = x.shape
    ho, wo = h // kernel, w // kernel
    if ho < 1 or wo < 1:
        raise ValueError(f"max_pool2d input {h}x{w} smaller than kernel {kernel}")
    crop = x.data[:, :, :ho * kernel, :wo * kernel]
    windows = crop.reshape(n, c, ho, kernel, wo, kernel).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, -1)
    idx = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, idx, axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(windows.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        gw = gw.reshape(n, c, ho, wo, kernel, kernel).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * kernel, wo * kernel)
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, :, :ho * kernel, :wo * kernel] = gw
        return (full,)

    return Tensor._make(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """N x C x H x W -> N x C."""
    return x.mean(axis=(2, 3))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias with weight shaped (out, in)."""
    out = x @ weight.transpose(1, 0)
    if bias is not None:
        out = out + bias
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    shifted = a - a.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return Tensor._make(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits).

    Binary training is the 2-class case of the same loss.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError(f"logits must be N x K, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"label out of range for {k} classes")
    logp = log_softmax(logits, axis=1)
    return -(logp[np.arange(n), labels].sum() * (1.0 / n))


def mean_std_pool(frames: Tensor, valid_len, eps_var: float = 1e-5) -> Tensor:
    """Masked mean and population std over time: B x T x F -> B x 2F.

    Only the first ``valid_len[i]`` steps of row i contribute; padding is
    excluded from both statistics.
    """
    valid_len = np.asarray(valid_len, dtype=np.int64)
    b, t, _ = frames.shape
    if valid_len.shape != (b,):
        raise ValueError(f"valid_len must have {b} entries")
    if (valid_len < 1).any():
        raise ValueError("mean_std_pool needs valid_len >= 1 for every row")
    if (valid_len > t).any():
        raise ValueError("valid_len exceeds the number of frames")
    mask = (np.arange(t)[None, :] < valid_len[:, None]).astype(frames.dtype)[:, :, None]
    inv_n = (1.0 / valid_len).astype(frames.dtype)[:, None]
    masked = frames * mask
    mean = masked.sum(axis=1) * inv_n
    sq = (masked * frames).sum(axis=1) * inv_n
    std = (sq - mean * mean + eps_var).sqrt()
    return concat_last(mean, std)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    split = a.shape[-1]
    return Tensor._make(
        np.concatenate([a.data, b.data], axis=-1),
        (a, b),
        lambda g: (g[..., :split], g[..., split:]),
    )


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    # half-pixel centres, edge-clamped (align_corners=False convention)
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_resize(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear interpolation of the last two axes to ``size``."""
    n, c, h, w = x.shape
    rh = _interp_matrix(h, size[0], x.dtype)
    rw = _interp_matrix(w, size[1], x.dtype)
    out = np.einsum("oh,nchw,pw->ncop", rh, x.data, rw, optimize=True)

    def backward(g):
        return (np.einsum("oh,ncop,pw->nchw", rh, g, rw, optimize=True),)

    return Tensor._make(out, (x,), backward)
