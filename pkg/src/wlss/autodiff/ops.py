"""Differentiable operations on Tensors.

Every op runs eagerly in float64 and registers a backward rule on the
active tape (see ``wlss.autodiff.tensor``).  Conventions fixed here:

* conv2d is cross-correlation; "same" padding pads symmetrically with
  zeros (left/top gets the smaller half for even totals).
* conv2d_transposed produces output extents = input extents * stride by
  cropping the raw adjoint output symmetrically; with kernel extent equal
  to the stride there is no crop and the op is the exact adjoint of the
  strided valid conv2d.
* bce_loss clamps predictions to [1e-7, 1 - 1e-7] before the logarithm.
* mae_loss uses subgradient 0 at exact zeros.
* max_over_time routes the gradient to the first maximal index on ties.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg.blas import dgemm as _dgemm

from .tensor import Tensor, record_op, unbroadcast

BCE_EPS = 1e-7
BN_EPS = 1e-5


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# elementwise / plumbing
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def rule(g):
        ga = unbroadcast(g, a.data.shape)
        gb = unbroadcast(g, b.data.shape)
        if gb is ga and a is not b:     # distinct tensors must not share a grad array
            gb = gb.copy()
        return ga, gb

    return record_op(out, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def rule(g):
        return unbroadcast(g * b.data, a.data.shape), unbroadcast(g * a.data, b.data.shape)

    return record_op(out, (a, b), rule)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def rule(g):
        return (np.broadcast_to(g, x.data.shape),)

    return record_op(out, (x,), rule)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def rule(g):
        return (g * (x.data > 0),)

    return record_op(out, (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    # clipping at +-60 leaves float64 values unchanged (saturation is at ~36.7)
    # while keeping exp() overflow-free
    y = 1.0 / (1.0 + np.exp(-np.clip(x.data, -60.0, 60.0)))
    out = Tensor(y)

    def rule(g):
        return (g * y * (1.0 - y),)

    return record_op(out, (x,), rule)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def rule(g):
        return (g.reshape(x.data.shape),)

    return record_op(out, (x,), rule)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(x.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def rule(g):
        return (g.transpose(inv),)

    return record_op(out, (x,), rule)


def concat(tensors, axis: int) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return record_op(out, tuple(tensors), rule)


def pad2d(x: Tensor, pads) -> Tensor:
    """Zero-pad the two trailing axes; pads = ((top, bottom), (left, right))."""
    (pt, pb), (pl, pr) = pads
    width = [(0, 0)] * (x.data.ndim - 2) + [(pt, pb), (pl, pr)]
    out = Tensor(np.pad(x.data, width))
    H, W = x.data.shape[-2:]

    def rule(g):
        return (g[..., pt:pt + H, pl:pl + W],)

    return record_op(out, (x,), rule)


def crop2d(x: Tensor, crops) -> Tensor:
    """Crop the two trailing axes; crops = ((top, bottom), (left, right))."""
    (ct, cb), (cl, cr) = crops
    H, W = x.data.shape[-2:]
    out = Tensor(x.data[..., ct:H - cb, cl:W - cr])

    def rule(g):
        full = np.zeros(x.data.shape)
        full[..., ct:H - cb, cl:W - cr] = g
        return (full,)

    return record_op(out, (x,), rule)


# ---------------------------------------------------------------------------
# linear / losses / pooling
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis: (..., d_in) -> (..., d_out)."""
    if x.data.shape[-1] != weight.data.shape[1]:
        raise ShapeError(
            f"linear: input last extent {x.data.shape[-1]} != weight d_in {weight.data.shape[1]}")
    out = Tensor(x.data @ weight.data.T + bias.data)

    def rule(g):
        gmat = g.reshape(-1, weight.data.shape[0])
        xmat = x.data.reshape(-1, weight.data.shape[1])
        return g @ weight.data, gmat.T @ xmat, gmat.sum(axis=0)

    return record_op(out, (x, weight, bias), rule)


def max_over_time(x: Tensor) -> Tensor:
    """Per-class maximum over the time axis: (..., T, K) -> (..., K).

    Backward routes the gradient only to the first maximal time step of
    each class.
    """
    if x.data.shape[-2] < 1:
        raise ShapeError("max_over_time: empty time axis")
    idx = np.argmax(x.data, axis=-2)
    out = Tensor(np.take_along_axis(x.data, idx[..., None, :], axis=-2)[..., 0, :])

    def rule(g):
        full = np.zeros(x.data.shape)
        np.put_along_axis(full, idx[..., None, :], g[..., None, :], axis=-2)
        return (full,)

    return record_op(out, (x,), rule)


def bce_loss(prediction: Tensor, target: np.ndarray) -> Tensor:
    """Binary cross-entropy summed over classes, averaged over any batch axis.

    ``prediction`` is (K,) or (B, K) with values in (0, 1); ``target`` is a
    {0,1} multi-hot array of the same shape.  Predictions are clamped to
    [1e-7, 1 - 1e-7] before the logarithm.
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape != prediction.data.shape:
        raise ShapeError(f"bce_loss: target shape {t.shape} != prediction shape {prediction.data.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("bce_loss: target entries must be 0 or 1")
    nbatch = 1 if prediction.data.ndim == 1 else int(np.prod(prediction.data.shape[:-1]))
    p = np.clip(prediction.data, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum() / nbatch
    out = Tensor(loss)
    inside = (prediction.data > BCE_EPS) & (prediction.data < 1.0 - BCE_EPS)

    def rule(g):
        return (g * inside * (p - t) / (p * (1.0 - p)) / nbatch,)

    return record_op(out, (prediction,), rule)


def mae_loss(estimate: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements; subgradient 0 at exact zeros."""
    if estimate.data.shape != target.data.shape:
        raise ShapeError(
            f"mae_loss: shape mismatch {estimate.data.shape} vs {target.data.shape}")
    diff = estimate.data - target.data
    out = Tensor(np.abs(diff).mean())
    n = diff.size

    def rule(g):
        s = g * np.sign(diff) / n
        return s, -s

    return record_op(out, (estimate, target), rule)


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping mean pooling on the two trailing axes.

    Trailing rows/columns that do not fill a window are dropped and
    receive zero gradient.
    """
    B, C, H, W = x.data.shape
    Ho, Wo = H // size, W // size
    v = x.data[:, :, :Ho * size, :Wo * size].reshape(B, C, Ho, size, Wo, size)
    out = Tensor(v.mean(axis=(3, 5)))

    def rule(g):
        gx = np.zeros((B, C, H, W))
        gq = g / (size * size)
        for si in range(size):
            for sj in range(size):
                gx[:, :, si:Ho * size:size, sj:Wo * size:size] = gq
        return (gx,)

    return record_op(out, (x,), rule)


# ---------------------------------------------------------------------------
# convolution machinery
#
# Internally convolutions run channels-last and loop over kernel taps: each
# (u, v) tap contributes one accumulating BLAS GEMM on a contiguous shifted
# copy of the input.  That keeps the copies in long contiguous runs, which
# is what makes the engine fast enough for desk-scale training.
# ---------------------------------------------------------------------------

def _to_cl(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _to_cf(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def _pad_cl(x_cl: np.ndarray, pt, pb, pl, pr) -> np.ndarray:
    if pt == pb == pl == pr == 0:
        return x_cl
    B, H, W, C = x_cl.shape
    out = np.zeros((B, H + pt + pb, W + pl + pr, C))
    out[:, pt:pt + H, pl:pl + W] = x_cl
    return out


def _tap_slice(x_cl: np.ndarray, u: int, v: int, Ho: int, Wo: int, stride: int):
    return x_cl[:, u:u + (Ho - 1) * stride + 1:stride,
                v:v + (Wo - 1) * stride + 1:stride, :]


def _gather_corr(xp_cl: np.ndarray, kern: np.ndarray, stride: int,
                 keep_slices: bool = False):
    """Valid strided correlation: (B,Hp,Wp,Ci) x (kh,kw,Ci,Co) -> (B,Ho,Wo,Co).

    Accumulation happens inside BLAS (C^T = K^T A^T keeps every operand
    contiguous without copies).  With keep_slices the per-tap contiguous
    input copies are returned for kernel-gradient reuse.
    """
    B, Hp, Wp, Ci = xp_cl.shape
    kern = np.ascontiguousarray(kern)
    kh, kw, _, Co = kern.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    n = B * Ho * Wo
    out_t = np.empty((n, Co)).T
    slices = []
    first = True
    for u in range(kh):
        for v in range(kw):
            a = np.ascontiguousarray(_tap_slice(xp_cl, u, v, Ho, Wo, stride))
            a = a.reshape(n, Ci)
            out_t = _dgemm(1.0, kern[u, v].T, a.T, beta=0.0 if first else 1.0,
                           c=out_t, overwrite_c=True)
            first = False
            if keep_slices:
                slices.append(a)
    return out_t.T.reshape(B, Ho, Wo, Co), slices


def _scatter_corr(x_cl: np.ndarray, kern: np.ndarray, stride: int,
                  out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of _gather_corr: spread (B,H,W,Ci) through (kh,kw,Ci,Co) taps
    into a (B,out_h,out_w,Co) canvas (out[t*stride + tap] += x[t] @ k[tap])."""
    B, H, W, Ci = x_cl.shape
    kern = np.ascontiguousarray(kern)
    kh, kw, _, Co = kern.shape
    if stride == 1:
        # the adjoint of a stride-1 gather is a gather over the flipped taps,
        # which keeps the accumulation inside BLAS
        xp = _pad_cl(x_cl, kh - 1, out_h - H, kw - 1, out_w - W)
        out, _ = _gather_corr(xp, kern[::-1, ::-1], 1)
        return out
    x_flat = x_cl.reshape(B * H * W, Ci)
    out = np.zeros((B, out_h, out_w, Co))
    for u in range(kh):
        for v in range(kw):
            tap = _dgemm(1.0, kern[u, v].T, x_flat.T).T.reshape(B, H, W, Co)
            target = _tap_slice(out, u, v, H, W, stride)
            target += tap
    return out


def _convt_raw_cl(x_cl: np.ndarray, kernel: np.ndarray, stride: int) -> np.ndarray:
    """Adjoint of the strided valid correlation, channels-last, uncropped.

    x_cl is (B, H, W, Ca), kernel (Ca, Cb, kh, kw); result is
    (B, (H-1)*stride + kh, (W-1)*stride + kw, Cb).
    """
    B, H, W, _ = x_cl.shape
    kh, kw = kernel.shape[2:]
    kern = kernel.transpose(2, 3, 0, 1)        # (kh, kw, Ca, Cb)
    return _scatter_corr(x_cl, kern, stride,
                         (H - 1) * stride + kh, (W - 1) * stride + kw)


def _convt_raw(x: np.ndarray, kernel: np.ndarray, stride: int) -> np.ndarray:
    """Channels-first wrapper of _convt_raw_cl (testing hook)."""
    return _to_cf(_convt_raw_cl(_to_cl(x), kernel, stride))


def _same_pads(kh: int, kw: int):
    pt = (kh - 1) // 2
    pl = (kw - 1) // 2
    return pt, kh - 1 - pt, pl, kw - 1 - pl


def _same_pads(kh: int, kw: int):
    pt = (kh - 1) // 2
    pl = (kw - 1) // 2
    return pt, kh - 1 - pt, pl, kw - 1 - pl


def conv2d(input: Tensor, kernel: Tensor, bias: Tensor, padding: str = "same",
           stride: int = 1) -> Tensor:
    """2-D cross-correlation.

    input (B, C_in, H, W), kernel (C_out, C_in, kh, kw), bias (C_out,).
    padding "same" keeps the spatial extents (stride 1 only); "valid" uses
    no padding and supports stride >= 1.
    """
    x, k = input.data, kernel.data
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and kernel, got {x.ndim}-d and {k.ndim}-d")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels but kernel expects {k.shape[1]}")
    if padding not in ("same", "valid"):
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    if padding == "same" and stride != 1:
        raise ValueError("conv2d: 'same' padding requires stride 1")
    kh, kw = k.shape[2:]
    if padding == "same":
        pt, pb, pl, pr = _same_pads(kh, kw)
    else:
        pt = pb = pl = pr = 0
    Hp, Wp = x.shape[2] + pt + pb, x.shape[3] + pl + pr
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d: kernel ({kh}x{kw}) larger than padded input ({Hp}x{Wp})")

    xp_cl = _pad_cl(_to_cl(x), pt, pb, pl, pr)
    out_cl, tap_slices = _gather_corr(xp_cl, k.transpose(2, 3, 1, 0), stride,
                                      keep_slices=True)
    B, cout = x.shape[0], k.shape[0]
    Ho, Wo = out_cl.shape[1:3]
    out = Tensor(_to_cf(out_cl + bias.data))
    need_x = input.requires_grad

    def rule(g):
        g_cl = _to_cl(g)
        gmat = g_cl.reshape(B * Ho * Wo, cout)
        gk = np.empty(k.shape)
        for (u, v), a in zip(np.ndindex(kh, kw), tap_slices):
            gk[:, :, u, v] = (a.T @ gmat).T           # (Cout, Cin)
        gx = None
        if need_x:
            # dxp[t*stride + tap, ci] += g[t, co] * k[co, ci, tap]
            gxp = _scatter_corr(g_cl, k.transpose(2, 3, 0, 1), stride,
                                xp_cl.shape[1], xp_cl.shape[2])
            gx = _to_cf(gxp[:, pt:pt + x.shape[2], pl:pl + x.shape[3]])
        return gx, gk, gmat.sum(axis=0)

    return record_op(out, (input, kernel, bias), rule)


def conv2d_transposed(input: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Transposed 2-D convolution (adjoint of the strided valid conv2d).

    input (B, C_a, H, W), kernel (C_a, C_b, kh, kw) -> (B, C_b, H*stride,
    W*stride).  The raw adjoint output of extent (H-1)*stride + k is
    cropped symmetrically (extra sample goes to the trailing edge) down to
    H*stride, which requires kernel extents >= stride.  With kernel extent
    equal to the stride the crop is empty and the adjoint is exact.
    """
    if stride < 1:
        raise ValueError(f"conv2d_transposed: stride must be >= 1, got {stride}")
    x, k = input.data, kernel.data
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d_transposed: need 4-d input and kernel")
    if x.shape[1] != k.shape[0]:
        raise ShapeError(
            f"conv2d_transposed: input has {x.shape[1]} channels but kernel expects {k.shape[0]}")
    kh, kw = k.shape[2:]
    if kh < stride or kw < stride:
        raise ShapeError(
            f"conv2d_transposed: kernel extents ({kh}x{kw}) must be >= stride {stride}")
    H, W = x.shape[2:]
    ca, cb = k.shape[:2]
    ct, cl = (kh - stride) // 2, (kw - stride) // 2
    x_cl = _to_cl(x)
    raw_cl = _convt_raw_cl(x_cl, k, stride)
    out = Tensor(_to_cf(raw_cl[:, ct:ct + H * stride, cl:cl + W * stride]))
    need_x = input.requires_grad

    def rule(g):
        B = x.shape[0]
        graw_cl = np.zeros(raw_cl.shape)
        graw_cl[:, ct:ct + H * stride, cl:cl + W * stride] = _to_cl(g)
        # dx[b,t,ca] = sum_{u,v,cb} graw[b, t*s+(u,v), cb] * k[ca,cb,u,v]
        gx_cl, tap_slices = _gather_corr(graw_cl, k.transpose(2, 3, 1, 0), stride,
                                         keep_slices=True)
        gx = _to_cf(gx_cl) if need_x else None
        # dk[ca, cb, u, v] = sum_{b,t} x[b,t,ca] * graw[b, t*s + (u,v), cb]
        xmat = x_cl.reshape(B * H * W, ca)
        gk = np.empty(k.shape)
        for (u, v), sl in zip(np.ndindex(kh, kw), tap_slices):
            gk[:, :, u, v] = xmat.T @ sl
        return gx, gk

    return record_op(out, (input, kernel), rule)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class RunningStats:
    """Per-channel running mean/variance updated by exponential moving average."""

    def __init__(self, channels: int, momentum: float = 0.1):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        self.mean = (1.0 - self.momentum) * self.mean + self.momentum * mean
        self.var = (1.0 - self.momentum) * self.var + self.momentum * var


def batch_norm(input: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats,
               mode: str = "train") -> Tensor:
    """Per-channel batch normalization over (batch, H, W) of a (B,C,H,W) input.

    Train mode normalizes by biased batch statistics and updates the
    running stats; eval mode normalizes by the running stats.
    """
    x = input.data
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: need (B, C, H, W) input, got {x.ndim}-d")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm: unknown mode {mode!r}")
    B, C, H, W = x.shape
    n = B * H * W
    if mode == "train":
        if n < 2:
            raise ValueError("batch_norm: train mode needs at least 2 elements per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = np.einsum("bchw,bchw->c", x, x) / n - mean * mean
        stats.update(mean, var)
    else:
        mean, var = stats.mean, stats.var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    a = gamma.data * inv
    out = Tensor(x * a[None, :, None, None]
                 + (beta.data - mean * a)[None, :, None, None])
    need_x = input.requires_grad

    def rule(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = inv * (np.einsum("bchw,bchw->c", g, x) - mean * gbeta)
        gx = None
        if need_x:
            if mode == "eval":
                gx = g * a[None, :, None, None]
            else:
                # a * (g - mean(g) - xhat * mean(g*xhat)) without forming xhat
                c2 = a * inv * ggamma / n
                c4 = mean * c2 - a * gbeta / n
                gx = g * a[None, :, None, None]
                gx -= x * c2[None, :, None, None]
                gx += c4[None, :, None, None]
        return gx, ggamma, gbeta

    return record_op(out, (input, gamma, beta), rule)
