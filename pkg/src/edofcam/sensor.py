"""Forward image formation: planar, layered-3D, and broadband sensor models.

Sensor images are per-channel convolutions of the ideal image with the
depth/wavelength PSF, plus additive Gaussian read noise, clamped to [0, 1].
Convolution uses reflect padding so patch borders do not darken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .optics import Psf


@dataclass(frozen=True)
class SceneSample:
    """Sharp image with constant depth or a per-pixel depth map.

    ``image`` is H x W x C in [0, 1]; a hyperspectral cube uses C bands and
    carries ``band_wavelengths_m``.
    """

    image: np.ndarray
    depth: float | np.ndarray
    band_wavelengths_m: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.image.ndim != 3:
            raise ValueError("scene image must be H x W x C")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ValueError("scene image values must lie in [0, 1]")
        if isinstance(self.depth, np.ndarray):
            if self.depth.shape != self.image.shape[:2]:
                raise ValueError("depth map shape does not match image")
        if self.band_wavelengths_m is not None and len(self.band_wavelengths_m) != self.image.shape[2]:
            raise ValueError("band count does not match image channels")

    @property
    def is_planar(self) -> bool:
        return not isinstance(self.depth, np.ndarray)


@dataclass(frozen=True)
class SpectralResponse:
    """Per-band responses of the R/G/B sensor channels (bands x 3)."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.weights.ndim != 2 or self.weights.shape[1] != 3:
            raise ValueError("spectral response must be bands x 3")
        if self.weights.min() < 0.0:
            raise ValueError("spectral response weights must be nonnegative")

    def normalized(self) -> "SpectralResponse":
        """Scale each channel's weights to sum to 1."""
        sums = self.weights.sum(axis=0, keepdims=True)
        if (sums <= 0.0).any():
            raise ValueError("each channel needs at least one nonzero weight")
        return SpectralResponse(self.weights / sums)


@dataclass(frozen=True)
class SensorImage:
    """Simulated sensor readout, clamped to [0, 1]."""

    values: np.ndarray
    noise_sigma: float

    def __post_init__(self) -> None:
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError("sensor image must be H x W x 3")


# ---------------------------------------------------------------------------
# convolution primitives (shared with the training backward chain)
# ---------------------------------------------------------------------------

def convolve_reflect(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2D convolution with reflect (symmetric) padding, same-size output."""
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sides must be odd")
    padded = np.pad(image, ((kh // 2, kh // 2), (kw // 2, kw // 2)), mode="symmetric")
    return fftconvolve(padded, kernel, mode="valid")


def convolve_reflect_kernel_grad(image: np.ndarray, upstream: np.ndarray,
                                 kernel_shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of :func:`convolve_reflect` with respect to the kernel.

    Given dL/d(output), returns dL/d(kernel) for the fixed input image.
    """
    kh, kw = kernel_shape
    padded = np.pad(image, ((kh // 2, kh // 2), (kw // 2, kw // 2)), mode="symmetric")
    corr = fftconvolve(padded, upstream[::-1, ::-1], mode="valid")
    return corr[::-1, ::-1]


def _apply_noise_and_clamp(values: np.ndarray, sigma_s: float,
                           rng: np.random.Generator | None) -> np.ndarray:
    if sigma_s < 0.0:
        raise ValueError("sigma_s must be >= 0")
    if sigma_s > 0.0:
        if rng is None:
            raise ValueError("noise requested but no rng supplied")
        values = values + rng.normal(0.0, sigma_s, values.shape)
    return np.clip(values, 0.0, 1.0)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def render_planar(scene: SceneSample, psf_stack: list[Psf], sigma_s: float = 0.0,
                  rng: np.random.Generator | None = None,
                  clamp: bool = True) -> SensorImage:
    """Constant-depth sensor image: per-channel convolution, noise, clamp."""
    if not scene.is_planar:
        raise ValueError("render_planar needs a constant-depth scene")
    channels = scene.image.shape[2]
    if len(psf_stack) != channels:
        raise ValueError(f"got {len(psf_stack)} PSFs for {channels} channels")
    out = np.empty_like(scene.image, dtype=np.float64)
    for c in range(channels):
        out[:, :, c] = convolve_reflect(scene.image[:, :, c], psf_stack[c].values)
    if clamp or sigma_s > 0.0:
        out = _apply_noise_and_clamp(out, sigma_s, rng)
    return SensorImage(out, sigma_s)


def render_layered(scene: SceneSample, psf_provider, sigma_s: float = 0.0,
                   depth_quantization_step_m: float = 1e-3,
                   rng: np.random.Generator | None = None) -> SensorImage:
    """Depth-map sensor image: per-layer convolution summed over layers.

    ``psf_provider`` maps a depth in meters to the per-channel PSF list.
    Depths are quantized to the given step; occlusion is not modeled (the
    depth integral is unmasked), matching the forward model's plain sum.
    """
    if scene.is_planar:
        depth_map = np.full(scene.image.shape[:2], float(scene.depth))
    else:
        depth_map = np.asarray(scene.depth, dtype=np.float64)
    if depth_map.size == 0:
        raise ValueError("depth map is empty")
    if depth_quantization_step_m <= 0.0:
        raise ValueError("depth quantization step must be positive")
    finite = np.isfinite(depth_map)
    quantized = depth_map.copy()
    quantized[finite] = np.round(depth_map[finite] / depth_quantization_step_m) \
        * depth_quantization_step_m
    out = np.zeros_like(scene.image, dtype=np.float64)
    for depth in np.unique(quantized):
        mask = (quantized == depth).astype(np.float64)
        stack = psf_provider(float(depth))
        if len(stack) != scene.image.shape[2]:
            raise ValueError("PSF provider channel count mismatch")
        for c in range(scene.image.shape[2]):
            out[:, :, c] += convolve_reflect(scene.image[:, :, c] * mask,
                                             stack[c].values)
    out = _apply_noise_and_clamp(out, sigma_s, rng)
    return SensorImage(out, sigma_s)


def render_broadband(scene: SceneSample, response: SpectralResponse,
                     psf_per_band: list[Psf], sigma_s: float = 0.0,
                     rng: np.random.Generator | None = None) -> SensorImage:
    """Hyperspectral scene to RGB: blur each band, then response-weight."""
    bands = scene.image.shape[2]
    if response.weights.shape[0] != bands or len(psf_per_band) != bands:
        raise ValueError("band count mismatch between cube, response, and PSFs")
    weights = response.normalized().weights
    h, w = scene.image.shape[:2]
    out = np.zeros((h, w, 3), dtype=np.float64)
    for b in range(bands):
        blurred = convolve_reflect(scene.image[:, :, b], psf_per_band[b].values)
        for c in range(3):
            if weights[b, c] != 0.0:
                out[:, :, c] += weights[b, c] * blurred
    out = _apply_noise_and_clamp(out, sigma_s, rng)
    return SensorImage(out, sigma_s)


def broadband_reference(scene: SceneSample, response: SpectralResponse) -> np.ndarray:
    """Ground-truth RGB image: response-weighted cube without optics."""
    weights = response.normalized().weights
    return np.tensordot(scene.image, weights, axes=([2], [0]))


# ---------------------------------------------------------------------------
# classical baseline and metric
# ---------------------------------------------------------------------------

def wiener_deconvolve(sensor: SensorImage, psf_stack: list[Psf],
                      nsr: float) -> np.ndarray:
    """Frequency-domain Wiener filter H* / (|H|^2 + nsr), per channel.

    The classical non-blind baseline: circular boundary handling, single
    kernel per channel, output clamped to [0, 1].
    """
    if nsr < 0.0:
        raise ValueError("nsr must be >= 0")
    values = sensor.values
    h, w, channels = values.shape
    if len(psf_stack) != channels:
        raise ValueError("PSF count does not match channels")
    out = np.empty_like(values)
    for c in range(channels):
        kernel = psf_stack[c].values
        kh, kw = kernel.shape
        if kh > h or kw > w:
            raise ValueError("PSF larger than the image")
        embedded = np.zeros((h, w))
        top, left = h // 2 - kh // 2, w // 2 - kw // 2  # center at the shift origin
        embedded[top:top + kh, left:left + kw] = kernel
        otf = np.fft.fft2(np.fft.ifftshift(embedded))
        denom = np.abs(otf) ** 2 + nsr
        if nsr == 0.0:
            denom = np.where(denom == 0.0, 1.0, denom)
        filt = np.conj(otf) / denom
        out[:, :, c] = np.real(np.fft.ifft2(np.fft.fft2(values[:, :, c]) * filt))
    return np.clip(out, 0.0, 1.0)


def mean_psf(stacks: list[list[Psf]]) -> list[Psf]:
    """Average PSF over depths per channel (the depth-invariant surrogate)."""
    channels = len(stacks[0])
    out = []
    for c in range(channels):
        kernels = [stack[c].values for stack in stacks]
        side = max(k.shape[0] for k in kernels)
        acc = np.zeros((side, side))
        for k in kernels:
            pad = (side - k.shape[0]) // 2
            acc[pad:side - pad, pad:side - pad] += k
        acc /= len(kernels)
        ref = stacks[0][c]
        out.append(Psf(acc / acc.sum(), ref.pitch_m, ref.wavelength_m, None))
    return out


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio 10*log10(1/MSE) for [0, 1] images."""
    if reference.shape != test.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((reference.astype(np.float64) - test.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)
