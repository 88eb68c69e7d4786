"""Forward/backward kernels for the SR network.

Every backward pass here is hand-derived (no autograd graph). Kernels are
pure functions of their inputs; convolution means cross-correlation (no
kernel flip), the usual deep-learning convention.

The fast paths accumulate one kernel tap at a time with strided slices and
BLAS-backed tensordot, which keeps memory flat and is exactly equivalent to
the naive nested-loop definition (tested against it elementwise).
"""

from __future__ import annotations

import numpy as np

from .tensor import LayerParams


def _check_4d(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{what}: expected 4-D NCHW tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_output_shape(h: int, w: int, k: int, stride: int, padding: int):
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    return ho, wo


def conv2d(x: np.ndarray, params: LayerParams, stride: int = 1,
           padding: int = 0) -> np.ndarray:
    """Cross-correlate x with the layer's kernels and add per-channel bias.

    Inputs:
    - x: input tensor (N, C, H, W)
    - params.weight: kernels (O, C, k, k); params.bias: (O,)
    - stride, padding: spatial stride and symmetric zero padding

    Returns output of shape (N, O, H', W') with
    H' = floor((H + 2*padding - k)/stride) + 1 and likewise W'.
    """
    _check_4d(x, "conv2d input")
    w, b = params.weight, params.bias
    o_ch, c_k, kh, kw = w.shape
    if kh != kw:
        raise ValueError(f"conv2d: kernel must be square, got {kh}x{kw}")
    n, c, h, wd = x.shape
    if c != c_k:
        raise ValueError(
            f"conv2d: input has {c} channels but kernel expects {c_k}")
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ValueError(
            f"conv2d: padded input {h + 2 * padding}x{wd + 2 * padding} smaller "
            f"than kernel {kh}x{kw}")
    ho, wo = conv2d_output_shape(h, wd, kh, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x
    acc = np.zeros((n, ho, wo, o_ch), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + (ho - 1) * stride + 1:stride,
                       j:j + (wo - 1) * stride + 1:stride]
            # (N, C, H', W') x (O, C) summed over C -> (N, H', W', O)
            acc += np.tensordot(patch, w[:, :, i, j], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out


def conv2d_backward(x: np.ndarray, params: LayerParams, grad_out: np.ndarray,
                    stride: int = 1, padding: int = 0):
    """Gradients of conv2d w.r.t. input, weight, and bias.

    grad_out must have the forward output's shape; returns
    (grad_input, grad_weight, grad_bias).
    """
    _check_4d(grad_out, "conv2d grad_out")
    w = params.weight
    o_ch, c_k, kh, kw = w.shape
    n, c, h, wd = x.shape
    ho, wo = conv2d_output_shape(h, wd, kh, stride, padding)
    if grad_out.shape != (n, o_ch, ho, wo):
        raise ValueError(
            f"conv2d_backward: grad_out shape {grad_out.shape} != "
            f"{(n, o_ch, ho, wo)}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x
    grad_w = np.zeros_like(w)
    grad_xp = np.zeros((n, c, hp, wp), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            sl_h = slice(i, i + (ho - 1) * stride + 1, stride)
            sl_w = slice(j, j + (wo - 1) * stride + 1, stride)
            patch = xp[:, :, sl_h, sl_w]
            # dW[o,c,i,j] = sum_{n,y,x} grad_out[n,o,y,x] * patch[n,c,y,x]
            grad_w[:, :, i, j] = np.tensordot(
                grad_out, patch, axes=([0, 2, 3], [0, 2, 3]))
            # scatter dX: (N, O, H', W') x (O, C) -> (N, H', W', C)
            contrib = np.tensordot(grad_out, w[:, :, i, j], axes=([1], [0]))
            grad_xp[:, :, sl_h, sl_w] += contrib.transpose(0, 3, 1, 2)
    grad_b = None if params.bias is None else grad_out.sum(axis=(0, 2, 3))
    grad_x = grad_xp[:, :, padding:padding + h, padding:padding + wd] \
        if padding else grad_xp
    return np.ascontiguousarray(grad_x), grad_w, grad_b


# ---------------------------------------------------------------------------
# transposed convolution
# ---------------------------------------------------------------------------

def deconv2d_output_shape(h: int, w: int, k: int, stride: int, padding: int,
                          output_padding: int):
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (w - 1) * stride - 2 * padding + k + output_padding
    return ho, wo


def deconv2d(x: np.ndarray, params: LayerParams, stride: int = 1,
             padding: int = 0, output_padding: int = 0) -> np.ndarray:
    """Transposed convolution (the adjoint of strided cross-correlation).

    params.weight has shape (C_in, C_out, k, k); output
    spatial size is (H-1)*stride - 2*padding + k + output_padding.
    Equals the gradient-of-conv2d-input operator applied to x, plus bias.
    """
    _check_4d(x, "deconv2d input")
    w, b = params.weight, params.bias
    c_in, c_out, kh, kw = w.shape
    if kh != kw:
        raise ValueError(f"deconv2d: kernel must be square, got {kh}x{kw}")
    n, c, h, wd = x.shape
    if c != c_in:
        raise ValueError(
            f"deconv2d: input has {c} channels but kernel expects {c_in}")
    ho, wo = deconv2d_output_shape(h, wd, kh, stride, padding, output_padding)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"deconv2d: non-positive output extent {ho}x{wo}")
    # scatter-add into a buffer spanning all tap positions, then trim padding
    fh = (h - 1) * stride + kh + output_padding
    fw = (wd - 1) * stride + kw + output_padding
    full = np.zeros((n, c_out, fh, fw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(x, w[:, :, i, j], axes=([1], [0]))
            full[:, :, i:i + (h - 1) * stride + 1:stride,
                 j:j + (wd - 1) * stride + 1:stride] += contrib.transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(full[:, :, padding:padding + ho,
                                    padding:padding + wo])
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out


def deconv2d_backward(x: np.ndarray, params: LayerParams, grad_out: np.ndarray,
                      stride: int = 1, padding: int = 0,
                      output_padding: int = 0):
    """Gradients of deconv2d: returns (grad_input, grad_weight, grad_bias)."""
    _check_4d(grad_out, "deconv2d grad_out")
    w = params.weight
    c_in, c_out, kh, kw = w.shape
    n, c, h, wd = x.shape
    ho, wo = deconv2d_output_shape(h, wd, kh, stride, padding, output_padding)
    if grad_out.shape != (n, c_out, ho, wo):
        raise ValueError(
            f"deconv2d_backward: grad_out shape {grad_out.shape} != "
            f"{(n, c_out, ho, wo)}")
    fh = (h - 1) * stride + kh + output_padding
    fw = (wd - 1) * stride + kw + output_padding
    go_full = np.zeros((n, c_out, fh, fw), dtype=grad_out.dtype)
    go_full[:, :, padding:padding + ho, padding:padding + wo] = grad_out
    grad_x = np.zeros((n, h, wd, c_in), dtype=x.dtype)
    grad_w = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            patch = go_full[:, :, i:i + (h - 1) * stride + 1:stride,
                            j:j + (wd - 1) * stride + 1:stride]
            grad_x += np.tensordot(patch, w[:, :, i, j], axes=([1], [1]))
            grad_w[:, :, i, j] = np.tensordot(
                x, patch, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = None if params.bias is None else grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2)), grad_w, grad_b


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm(x: np.ndarray, params: LayerParams, mode: str = "train",
              epsilon: float = 1e-5, momentum: float = 0.1,
              update_stats: bool = True) -> np.ndarray:
    """Per-channel batch normalization with affine scale/shift.

    Train mode normalizes by batch statistics over (N, H, W) and, when
    update_stats is set, blends them into the running statistics with the
    given momentum (new = (1 - momentum) * old + momentum * batch). Eval
    mode normalizes by the running statistics. Variance is epsilon-floored,
    so a constant channel normalizes to zeros rather than failing.
    """
    _check_4d(x, "batchnorm input")
    gamma, beta = params.weight, params.bias
    if x.shape[1] != gamma.shape[0]:
        raise ValueError(
            f"batchnorm: input has {x.shape[1]} channels, params expect "
            f"{gamma.shape[0]}")
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_stats and params.tracks_stats:
            params.running_mean = ((1.0 - momentum) * params.running_mean
                                   + momentum * mean).astype(x.dtype)
            params.running_var = np.maximum(
                (1.0 - momentum) * params.running_var + momentum * var,
                epsilon).astype(x.dtype)
    elif mode == "eval":
        mean, var = params.running_mean, params.running_var
    else:
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    return gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)


def batchnorm_backward(x: np.ndarray, params: LayerParams,
                       grad_out: np.ndarray, mode: str = "train",
                       epsilon: float = 1e-5):
    """Gradients of batchnorm: returns (grad_input, grad_gamma, grad_beta).

    Statistics are recomputed from x (deterministic), so the caller does not
    need to stash them between forward and backward.
    """
    gamma = params.weight
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
    elif mode == "eval":
        mean, var = params.running_mean, params.running_var
    else:
        raise ValueError(f"batchnorm_backward: unknown mode {mode!r}")
    inv_std = (1.0 / np.sqrt(var + epsilon)).reshape(1, -1, 1, 1)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    dxhat = grad_out * gamma.reshape(1, -1, 1, 1)
    if mode == "eval":
        # running stats are constants w.r.t. the input
        return dxhat * inv_std, grad_gamma, grad_beta
    n, _, h, w = x.shape
    m = n * h * w
    sum_dxhat = dxhat.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    grad_x = (inv_std / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# pointwise ops
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Routes gradient through strictly positive inputs (subgradient 0 at 0)."""
    return grad_out * (x > 0)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


# ---------------------------------------------------------------------------
# gradient-check oracle
# ---------------------------------------------------------------------------

def _central_diff_error(loss_fn, flat_p, idx, analytic, h):
    orig = flat_p[idx]
    flat_p[idx] = orig + h
    loss_plus = float(loss_fn())
    flat_p[idx] = orig - h
    loss_minus = float(loss_fn())
    flat_p[idx] = orig
    if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
        raise ValueError("grad_check: non-finite loss during probing")
    numeric = (loss_plus - loss_minus) / (2.0 * h)
    denom = max(abs(analytic), abs(numeric), 1e-12)
    return abs(analytic - numeric) / denom


def grad_check(loss_fn, params, grads, h: float = 1e-5,
               refine_hs=(), refine_above: float = 2e-5) -> float:
    """Compare analytic gradients against central finite differences.

    Inputs:
    - loss_fn: zero-argument callable evaluating the scalar loss at the
      current parameter values (must be pure w.r.t. params)
    - params: list of parameter arrays, perturbed in place entry by entry
    - grads: analytic gradient arrays aligned with params, computed at the
      unperturbed point

    Returns the max over all entries of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).

    When refine_hs is non-empty, entries whose error at h exceeds
    refine_above are re-probed at each refinement step and the smallest
    error is kept. Probe-point artifacts (a ReLU kink inside the step, or
    roundoff on near-zero gradients) vanish at some step size, while a
    genuinely wrong gradient disagrees at every step.
    """
    worst = 0.0
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(
                f"grad_check: param/grad shape mismatch {p.shape} vs {g.shape}")
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for idx in range(flat_p.size):
            analytic = float(flat_g[idx])
            rel = _central_diff_error(loss_fn, flat_p, idx, analytic, h)
            if rel > refine_above:
                for h_ref in refine_hs:
                    rel = min(rel, _central_diff_error(
                        loss_fn, flat_p, idx, analytic, h_ref))
                    if rel <= refine_above:
                        break
            if rel > worst:
                worst = rel
    return worst
