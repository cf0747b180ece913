"""Hand-rolled neural network ops with analytic gradients.

Everything is plain numpy: strided-slice 1-d convolution, batch norm,
ReLU, global average pooling, dense layers, softmax cross-entropy, and
a decoupled-weight-decay Adam step. Each forward returns (output,
cache); each backward consumes the cache and the upstream gradient.
Shapes follow the (batch, channels, length) convention.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


def same_pad(length: int, width: int, stride: int) -> tuple[int, int, int]:
    """(output length, left pad, right pad) for 'same' conv semantics."""
    out = (length + stride - 1) // stride
    total = max((out - 1) * stride + width - length, 0)
    left = total // 2
    return out, left, total - left


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    """Strided 'same' convolution; x (B,Cin,L), w (Cout,Cin,kW), b (Cout,).

    The padded input is unrolled into one (batch * positions,
    channels * taps) patch matrix so the whole layer is a single matrix
    product; the patch matrix is cached for the weight gradient.
    """
    batch, c_in, length = x.shape
    c_out, _, width = w.shape
    out_len, pad_l, pad_r = same_pad(length, width, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pad_l, pad_r)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, width, axis=2)[:, :, ::stride, :]
    patches = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(
        batch * out_len, c_in * width
    )
    y = patches @ w.reshape(c_out, c_in * width).T
    y = y.reshape(batch, out_len, c_out).transpose(0, 2, 1) + b[None, :, None]
    cache = (patches, w, stride, pad_l, length, out_len, xp.shape)
    return np.ascontiguousarray(y), cache


def conv1d_backward(dy: np.ndarray, cache, need_dx: bool = True):
    """Gradients for :func:`conv1d_forward`; ``need_dx=False`` skips the
    input gradient (the first layer has nothing upstream to feed)."""
    patches, w, stride, pad_l, length, out_len, xp_shape = cache
    c_out, c_in, width = w.shape
    batch = dy.shape[0]
    dy_flat = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(batch * out_len, c_out)
    db = dy_flat.sum(axis=0)
    dw = (dy_flat.T @ patches).reshape(c_out, c_in, width)
    if not need_dx:
        return None, dw, db
    dpatches = (dy_flat @ w.reshape(c_out, c_in * width)).reshape(
        batch, out_len, c_in, width
    )
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    for t in range(width):  # strided scatter-add of the patch gradients
        dxp[:, :, t : t + stride * out_len : stride] += dpatches[:, :, :, t].transpose(0, 2, 1)
    dx = dxp[:, :, pad_l : pad_l + length]
    return dx, dw, db


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float,
    training: bool,
):
    """Per-channel batch norm over (B, C, L).

    Training mode normalizes with batch statistics and returns updated
    running statistics (biased variance, momentum-weighted); inference
    mode uses the running statistics unchanged.
    """
    if training:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        new_mean = (1.0 - momentum) * running_mean + momentum * mean
        new_var = (1.0 - momentum) * running_var + momentum * var
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    cache = (xhat, gamma, inv_std, x, mean, training)
    return y, cache, new_mean, new_var


def batchnorm_backward(dy: np.ndarray, cache):
    xhat, gamma, inv_std, x, mean, training = cache
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[None, :, None]
    if not training:
        return dxhat * inv_std[None, :, None], dgamma, dbeta
    n = x.shape[0] * x.shape[2]
    xc = x - mean[None, :, None]
    dvar = (dxhat * xc).sum(axis=(0, 2)) * (-0.5) * inv_std**3
    dmean = -(dxhat.sum(axis=(0, 2))) * inv_std
    dx = (
        dxhat * inv_std[None, :, None]
        + (2.0 / n) * dvar[None, :, None] * xc
        + dmean[None, :, None] / n
    )
    return dx, dgamma, dbeta


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0.0


def relu_backward(dy: np.ndarray, mask: np.ndarray):
    return dy * mask


def global_avg_pool_forward(x: np.ndarray):
    return x.mean(axis=2), x.shape


def global_avg_pool_backward(dy: np.ndarray, shape):
    return np.broadcast_to(dy[:, :, None] / shape[2], shape).copy()


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w.T + b, (x, w)


def dense_backward(dy: np.ndarray, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean negative log-likelihood; targets are integer class indices."""
    picked = probs[np.arange(targets.size), targets]
    floor = np.finfo(probs.dtype).tiny  # saturated softmax stays finite
    return float(-np.mean(np.log(np.clip(picked, floor, None))))


def softmax_ce_backward(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    grad = probs.copy()
    grad[np.arange(targets.size), targets] -= 1.0
    return grad / targets.size


def adam_init(params: dict) -> dict:
    return {
        "step": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(
    params: dict,
    grads: dict,
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    decay_keys: frozenset | set = frozenset(),
) -> dict:
    """One adaptive-moment update; decay is decoupled from the moments.

    A zero gradient therefore leaves a parameter untouched except for
    the multiplicative weight-decay shrinkage (applied only to keys in
    ``decay_keys``). Returns the updated parameter dict; the moment
    state is updated in place.
    """
    state["step"] += 1
    t = state["step"]
    out = {}
    for key, value in params.items():
        g = grads[key]
        m = state["m"][key] = beta1 * state["m"][key] + (1.0 - beta1) * g
        v = state["v"][key] = beta2 * state["v"][key] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay > 0.0 and key in decay_keys:
            new = new - lr * weight_decay * value
        out[key] = new
    return out
