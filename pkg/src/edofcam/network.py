"""Deblurring CNN built from scratch: forward, backward, loss, Adam.

Residual architecture: five dilated conv + batch-norm + leaky-ReLU blocks
(32 kernels, 3x3, dilations 1,2,3,2,1), a 3-kernel conv producing the
residual added to the sensor image, two stride-1 transposed convolutions,
and a [0, 1] clamp.  All tensors are float32, batch x channels x H x W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float32


@dataclass
class Tensor4:
    """Batched image tensor with a gradient slot of identical shape."""

    values: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.values.ndim != 4:
            raise ValueError("Tensor4 must be batch x channels x H x W")
        if not np.isfinite(self.values).all():
            raise ValueError("Tensor4 contains non-finite values")
        if self.grad is not None and self.grad.shape != self.values.shape:
            raise ValueError("gradient shape does not match values")


@dataclass(frozen=True)
class LossConfig:
    """Weights of the L1 data term and the sparse-gradient prior."""

    alpha: float = 1e-3
    beta: float = 10.0
    gamma: float = 0.8

    def __post_init__(self) -> None:
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0.0 < self.gamma <= 2.0:
            raise ValueError("gamma must lie in (0, 2]")


# ---------------------------------------------------------------------------
# functional convolution primitives (zero same-padding, odd kernels)
# ---------------------------------------------------------------------------

def _dilated_patches(x: np.ndarray, kernel: int, dilation: int) -> np.ndarray:
    """Zero-pad and expose (B, C, k, k, H, W) sliding windows as a view."""
    b, c, h, w = x.shape
    pad = dilation * (kernel - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sb, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(b, c, kernel, kernel, h, w),
        strides=(sb, sc, sh * dilation, sw * dilation, sh, sw), writeable=False)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None,
           dilation: int = 1) -> np.ndarray:
    """Correlation with an (O, C, k, k) kernel, shape-preserving."""
    o, c2, kh, _ = weight.shape
    if x.shape[1] != c2:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {c2}")
    patches = _dilated_patches(x, kh, dilation)
    y = np.tensordot(weight, patches, axes=([1, 2, 3], [1, 2, 3]))
    y = np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def conv2d_input_grad(g: np.ndarray, weight: np.ndarray,
                      dilation: int = 1) -> np.ndarray:
    """Adjoint of :func:`conv2d` in the input: (B, O, H, W) -> (B, C, H, W).

    For odd kernels with same zero-padding this equals a conv with the
    channel-swapped, spatially flipped kernel.
    """
    if g.shape[1] != weight.shape[0]:
        raise ValueError("upstream channels do not match kernel output channels")
    flipped = np.ascontiguousarray(weight.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return conv2d(g, flipped, None, dilation)


def conv2d_weight_grad(x: np.ndarray, g: np.ndarray, kernel: int,
                       dilation: int = 1) -> np.ndarray:
    """Adjoint of :func:`conv2d` in the kernel: returns (O, C, k, k)."""
    patches = _dilated_patches(x, kernel, dilation)
    return np.tensordot(g, patches, axes=([0, 2, 3], [0, 4, 5]))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Conv2d:
    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 dilation: int = 1, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / math.sqrt(in_channels * kernel * kernel)
        self.weight = rng.uniform(-bound, bound,
                                  (out_channels, in_channels, kernel, kernel)).astype(DTYPE)
        self.bias = np.zeros(out_channels, dtype=DTYPE)
        self.dilation = dilation
        self.kernel = kernel
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if training:
            self._x = x
        return conv2d(x, self.weight, self.bias, self.dilation)

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called without a cached training forward")
        self.weight_grad = conv2d_weight_grad(self._x, g, self.kernel, self.dilation)
        self.bias_grad = g.sum(axis=(0, 2, 3))
        return conv2d_input_grad(g, self.weight, self.dilation)

    def parameters(self, prefix: str):
        yield prefix + ".weight", self.weight, lambda: self.weight_grad
        yield prefix + ".bias", self.bias, lambda: self.bias_grad


class ConvTranspose2d:
    """Stride-1 transposed convolution y = C^T x, shape-preserving."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / math.sqrt(in_channels * kernel * kernel)
        self.weight = rng.uniform(-bound, bound,
                                  (in_channels, out_channels, kernel, kernel)).astype(DTYPE)
        self.bias = np.zeros(out_channels, dtype=DTYPE)
        self.kernel = kernel
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if training:
            self._x = x
        y = conv2d_input_grad(x, self.weight)
        return y + self.bias[None, :, None, None]

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called without a cached training forward")
        self.weight_grad = conv2d_weight_grad(g, self._x, self.kernel)
        self.bias_grad = g.sum(axis=(0, 2, 3))
        return conv2d(g, self.weight, None)

    def parameters(self, prefix: str):
        yield prefix + ".weight", self.weight, lambda: self.weight_grad
        yield prefix + ".bias", self.bias, lambda: self.bias_grad


class BatchNorm2d:
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = np.ones(channels, dtype=DTYPE)
        self.beta = np.zeros(channels, dtype=DTYPE)
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps
        self.gamma_grad = np.zeros_like(self.gamma)
        self.beta_grad = np.zeros_like(self.beta)
        self._xhat: np.ndarray | None = None
        self._inv_std: np.ndarray | None = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = ((1.0 - self.momentum) * self.running_mean
                                 + self.momentum * mean).astype(DTYPE)
            self.running_var = ((1.0 - self.momentum) * self.running_var
                                + self.momentum * var).astype(DTYPE)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(DTYPE)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        if training:
            self._xhat = xhat
            self._inv_std = inv_std
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._xhat is None:
            raise RuntimeError("backward called without a cached training forward")
        xhat, inv_std = self._xhat, self._inv_std
        self.gamma_grad = (g * xhat).sum(axis=(0, 2, 3))
        self.beta_grad = g.sum(axis=(0, 2, 3))
        n = g.shape[0] * g.shape[2] * g.shape[3]
        g_xhat = g * self.gamma[None, :, None, None]
        sum_g = g_xhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_gx = (g_xhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std[None, :, None, None] / n) * (
            n * g_xhat - sum_g - xhat * sum_gx)

    def parameters(self, prefix: str):
        yield prefix + ".gamma", self.gamma, lambda: self.gamma_grad
        yield prefix + ".beta", self.beta, lambda: self.beta_grad


class LeakyReLU:
    def __init__(self, negative_slope: float = 0.01):
        self.slope = negative_slope
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if training:
            self._mask = x >= 0.0
        return np.where(x >= 0.0, x, self.slope * x)

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError("backward called without a cached training forward")
        return np.where(self._mask, g, DTYPE(self.slope) * g)


def clamp(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, min(1, x)): the output dynamic-range stage."""
    return np.clip(x, 0.0, 1.0)


def clamp_backward(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient passes only where the input is inside [0, 1]."""
    return np.where((x >= 0.0) & (x <= 1.0), g, DTYPE(0.0))


# ---------------------------------------------------------------------------
# the deblurring network
# ---------------------------------------------------------------------------

class DeblurNet:
    """Residual deblurring network; holds all trainable parameters."""

    DILATIONS = (1, 2, 3, 2, 1)
    WIDTH = 32

    def __init__(self, seed: int = 0, width: int | None = None,
                 dilations: tuple[int, ...] | None = None,
                 negative_slope: float = 0.01, in_channels: int = 3):
        rng = np.random.default_rng(seed)
        width = width or self.WIDTH
        dilations = dilations or self.DILATIONS
        self.blocks = []
        prev = in_channels
        for d in dilations:
            self.blocks.append((Conv2d(prev, width, 3, d, rng),
                                BatchNorm2d(width), LeakyReLU(negative_slope)))
            prev = width
        self.final_conv = Conv2d(prev, in_channels, 3, 1, rng)
        self.convt1 = ConvTranspose2d(in_channels, in_channels, 3, rng)
        self.convt2 = ConvTranspose2d(in_channels, in_channels, 3, rng)
        self.in_channels = in_channels
        self._pre_clamp: np.ndarray | None = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"input must be (B, {self.in_channels}, H, W)")
        if x.shape[2] < 16 or x.shape[3] < 16:
            raise ValueError("spatial dimensions must be at least 16")
        x = np.ascontiguousarray(x, dtype=DTYPE)
        r = x
        for conv, bn, act in self.blocks:
            r = act.forward(bn.forward(conv.forward(r, training), training), training)
        r = self.final_conv.forward(r, training)
        y = x + r
        y = self.convt1.forward(y, training)
        y = self.convt2.forward(y, training)
        if training:
            self._pre_clamp = y
        return clamp(y)

    def backward(self, g: np.ndarray) -> np.ndarray:
        """Propagate dL/d(output); returns dL/d(input), fills param grads."""
        if self._pre_clamp is None:
            raise RuntimeError("backward called without a cached training forward")
        g = clamp_backward(self._pre_clamp, g.astype(DTYPE))
        g = self.convt2.backward(g)
        g = self.convt1.backward(g)
        g_res = self.final_conv.backward(g)
        for conv, bn, act in reversed(self.blocks):
            g_res = conv.backward(bn.backward(act.backward(g_res)))
        return g + g_res

    def parameters(self):
        """Ordered (name, value, grad_getter) triples over all parameters."""
        for i, (conv, bn, _) in enumerate(self.blocks):
            yield from conv.parameters(f"block{i}.conv")
            yield from bn.parameters(f"block{i}.bn")
        yield from self.final_conv.parameters("final_conv")
        yield from self.convt1.parameters("convt1")
        yield from self.convt2.parameters("convt2")

    def state_tensors(self) -> dict[str, np.ndarray]:
        """All persistent arrays (parameters plus batch-norm statistics)."""
        out = {name: value for name, value, _ in self.parameters()}
        for i, (_, bn, _) in enumerate(self.blocks):
            out[f"block{i}.bn.running_mean"] = bn.running_mean
            out[f"block{i}.bn.running_var"] = bn.running_var
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.state_tensors()
        missing = set(own) - set(tensors)
        if missing:
            raise ValueError(f"checkpoint is missing tensors: {sorted(missing)}")
        for name, value in own.items():
            incoming = tensors[name]
            if incoming.shape != value.shape:
                raise ValueError(f"shape mismatch for {name}")
            value[...] = incoming
        for i, (_, bn, _) in enumerate(self.blocks):
            if bn.running_var.min() <= 0.0:
                raise ValueError("running variance must stay positive")


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

_GRAD_EPS = 1e-6  # |x|^(gamma-1) floor keeps the prior's subgradient bounded


def _abs_pow(x: np.ndarray, gamma: float) -> np.ndarray:
    return np.abs(x) ** gamma


def _abs_pow_grad(x: np.ndarray, gamma: float) -> np.ndarray:
    mag = np.maximum(np.abs(x), _GRAD_EPS)
    return gamma * np.sign(x) * mag ** (gamma - 1.0)


def deblur_loss(output: np.ndarray, reference: np.ndarray,
                config: LossConfig) -> tuple[float, np.ndarray]:
    """L1 data term plus the edge-weighted sparse-gradient prior.

    Returns (scalar loss, dL/d(output)).  Terms are summed over channels
    and pixels, divided by per-image element count, and averaged over the
    batch.  The prior weights exp(-beta * |grad reference|^gamma) come from
    the ground-truth image, so sharp true edges are penalized less.
    """
    if output.shape != reference.shape:
        raise ValueError("output and reference shapes differ")
    out = output.astype(np.float64)
    ref = reference.astype(np.float64)
    batch = out.shape[0]
    count = out[0].size
    scale = 1.0 / (batch * count)

    diff = out - ref
    data = np.abs(diff).sum()
    grad = np.sign(diff) * scale

    if config.alpha > 0.0:
        prior = 0.0
        for axis in (2, 3):
            d_out = np.diff(out, axis=axis)
            d_ref = np.diff(ref, axis=axis)
            w = np.exp(-config.beta * _abs_pow(d_ref, config.gamma))
            prior += (w * _abs_pow(d_out, config.gamma)).sum()
            d_term = config.alpha * scale * w * _abs_pow_grad(d_out, config.gamma)
            if axis == 2:
                grad[:, :, 1:, :] += d_term
                grad[:, :, :-1, :] -= d_term
            else:
                grad[:, :, :, 1:] += d_term
                grad[:, :, :, :-1] -= d_term
        loss = (data + config.alpha * prior) * scale
    else:
        loss = data * scale
    return float(loss), grad.astype(DTYPE)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(value: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              lr: float, beta1: float, beta2: float, weight_decay: float,
              t: int, eps: float = 1e-8) -> None:
    """One Adam update with bias correction and decoupled weight decay.

    Updates ``value`` and the moment buffers in place; ``t`` is 1-based.
    """
    if t < 1:
        raise ValueError("step index t must be >= 1")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    if weight_decay != 0.0:
        value -= (lr * weight_decay) * value
    value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam state for a set of named parameters."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 weight_decay: float = 1e-4, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, named_params) -> None:
        """Apply one update to every (name, value, grad_getter) triple."""
        self.t += 1
        for name, value, grad_getter in named_params:
            if name not in self.moments:
                self.moments[name] = (np.zeros_like(value), np.zeros_like(value))
            m, v = self.moments[name]
            adam_step(value, grad_getter(), m, v, self.lr, self.beta1,
                      self.beta2, self.weight_decay, self.t, self.eps)

    def state_tensors(self, prefix: str = "adam") -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([self.t], dtype=DTYPE)}
        for name, (m, v) in self.moments.items():
            out[f"{prefix}.{name}.m"] = m
            out[f"{prefix}.{name}.v"] = v
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray],
                           prefix: str = "adam") -> None:
        self.t = int(tensors[f"{prefix}.t"][0])
        self.moments = {}
        suffix_m = ".m"
        for key, value in tensors.items():
            if key.startswith(prefix + ".") and key.endswith(suffix_m):
                name = key[len(prefix) + 1:-len(suffix_m)]
                self.moments[name] = (value.copy(),
                                      tensors[f"{prefix}.{name}.v"].copy())
