"""Differentiable PSF layer: cached forward pass and the analytic backward.

The backward pass is d L / d Phi = 2*M*N * Im(IDFT(g o Qhat) o Q*), where g
is the upstream PSF gradient pulled back through the (linear) sensor
resampling and the unit-sum normalization.  M, N are the zero-padded grid
dimensions; the constant matches numpy's unnormalized-forward /
1/(MN)-inverse DFT convention, verified against the finite-difference
oracle in this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import CameraGeometry, SpectralModel
from .optics import ComplexPupil, PhaseMap, Psf, generalized_pupil, psf_pipeline

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PsfTape:
    """Forward-pass cache for one (wavelength, depth) PSF evaluation."""

    pupil: ComplexPupil        # unpadded pupil grid
    spectrum: np.ndarray       # DFT of the zero-padded pupil
    padded_side: int
    grid_side: int
    resample: np.ndarray       # 1D sensor-collection operator (K x M)
    mass: float                # pre-normalization PSF sum
    psf_values: np.ndarray     # final unit-sum PSF (K x K)

    def verify(self, tol: float = 1e-10) -> bool:
        """Recompute the spectrum from the cached pupil and compare."""
        m = self.padded_side
        padded = np.zeros((m, m), dtype=np.complex128)
        padded[:self.grid_side, :self.grid_side] = self.pupil.values
        ref = np.fft.fft2(padded)
        scale = max(np.abs(ref).max(), 1.0)
        return bool(np.abs(ref - self.spectrum).max() <= tol * scale)


@dataclass(frozen=True)
class PhaseGradient:
    """Loss gradient with respect to one wavelength's pupil phase samples."""

    values: np.ndarray

    def __post_init__(self) -> None:
        if not np.isfinite(self.values).all():
            raise ValueError("phase gradient contains non-finite values")


def psf_forward(doe_phase: PhaseMap, lens_phase: PhaseMap | None,
                defocus: float, geometry: CameraGeometry,
                depth_m: float | None = None) -> tuple[Psf, PsfTape]:
    """Same computation as :func:`edofcam.optics.psf`, plus the tape."""
    pupil = generalized_pupil(doe_phase, lens_phase, defocus, geometry)
    result = psf_pipeline(pupil.values, pupil.wavelength_m, geometry)
    point_spread = Psf(result.psf, geometry.sensor_pixel_pitch_m,
                       pupil.wavelength_m, depth_m)
    tape = PsfTape(pupil=pupil, spectrum=result.spectrum,
                   padded_side=result.padded_side, grid_side=result.grid_side,
                   resample=result.resample, mass=result.mass,
                   psf_values=result.psf)
    return point_spread, tape


def pull_back_sensor_gradient(tape: PsfTape, upstream: np.ndarray) -> np.ndarray:
    """Transpose the normalization and sensor-collection maps.

    Input is dL/dh on the sensor-pitch PSF grid; output is dL/d|Qhat|^2 on
    the padded grid in unshifted DFT order, ready for :func:`psf_backward`.
    The unit-sum normalization h = x / sum(x) pulls back by the quotient
    rule: (g - <g, h>) / sum(x).
    """
    if upstream.shape != tape.psf_values.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match "
                         f"PSF shape {tape.psf_values.shape}")
    g = (upstream - float((upstream * tape.psf_values).sum())) / tape.mass
    g = tape.resample.T @ g @ tape.resample
    return np.fft.ifftshift(g)


def psf_backward(tape: PsfTape, upstream: np.ndarray) -> PhaseGradient:
    """Analytic gradient of the loss with respect to the pupil phase.

    ``upstream`` is dL/d|Qhat|^2 on the padded grid (unshifted order); see
    :func:`pull_back_sensor_gradient`.  The gradient is identically zero
    outside the aperture, where the pupil itself vanishes.
    """
    m = tape.padded_side
    if upstream.shape != (m, m):
        raise ValueError(f"upstream shape {upstream.shape} does not match "
                         f"padded grid ({m}, {m})")
    back = np.fft.ifft2(upstream * tape.spectrum)
    n0 = tape.grid_side
    grad = 2.0 * m * m * np.imag(back[:n0, :n0] * np.conj(tape.pupil.values))
    return PhaseGradient(grad)


def phase_gradient_from_sensor(tape: PsfTape,
                               upstream: np.ndarray) -> PhaseGradient:
    """Full pullback: sensor-grid PSF gradient to pupil-phase gradient."""
    return psf_backward(tape, pull_back_sensor_gradient(tape, upstream))


def wavelength_grad_accumulate(per_wavelength_grads: list[PhaseGradient],
                               spectral: SpectralModel) -> PhaseGradient:
    """Chain-rule sum of per-channel phase gradients onto the nominal phase.

    Each channel's phase is the nominal phase times a fixed dispersion
    factor, so the nominal gradient is the factor-weighted sum.
    """
    if len(per_wavelength_grads) != spectral.n_channels:
        raise ValueError(f"expected {spectral.n_channels} gradients, "
                         f"got {len(per_wavelength_grads)}")
    shape = per_wavelength_grads[0].values.shape
    total = np.zeros(shape)
    for channel, grad in enumerate(per_wavelength_grads):
        if grad.values.shape != shape:
            raise ValueError("per-wavelength gradient shapes differ")
        total += spectral.phase_scale(channel) * grad.values
    return PhaseGradient(total)


def inject_phase_noise(phase_at_nominal: PhaseMap, sigma_d_m: float,
                       spectral: SpectralModel,
                       seed: int | np.random.Generator) -> PhaseMap:
    """Add the phase equivalent of Gaussian surface-height fabrication error.

    A height error with standard deviation sigma_d becomes phase noise of
    std (2*pi/lam0) * (n_lam0 - 1) * sigma_d at the nominal wavelength.
    The draw is treated as a constant in the backward pass.
    """
    if sigma_d_m < 0.0:
        raise ValueError("sigma_d must be >= 0")
    if sigma_d_m == 0.0:
        return phase_at_nominal
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma_phase = (TWO_PI / spectral.nominal_wavelength_m) * (
        spectral.nominal_doe_index - 1.0) * sigma_d_m
    noise = rng.normal(0.0, sigma_phase, phase_at_nominal.values_rad.shape)
    return PhaseMap(phase_at_nominal.values_rad + noise,
                    phase_at_nominal.wavelength_m, phase_at_nominal.pitch_m)


def finite_diff_check(loss_and_grad: Callable[[PhaseMap], tuple[float, np.ndarray]],
                      phase: PhaseMap, step: float, samples: int,
                      rng: np.random.Generator | None = None,
                      mask: np.ndarray | None = None) -> float:
    """Worst relative error of the analytic gradient vs central differences.

    ``loss_and_grad`` maps a phase map to (scalar loss, analytic gradient
    grid).  ``samples`` grid points are drawn (inside ``mask`` if given)
    and perturbed by +-step.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    rng = rng or np.random.default_rng(0)
    _, analytic = loss_and_grad(phase)
    if mask is None:
        candidates = np.argwhere(np.ones_like(phase.values_rad, dtype=bool))
    else:
        candidates = np.argwhere(mask > 0)
    picks = rng.choice(len(candidates), size=min(samples, len(candidates)),
                       replace=False)
    grad_scale = max(np.abs(analytic).max(), 1e-300)
    worst = 0.0
    base = phase.values_rad
    for p in picks:
        i, j = candidates[p]
        bumped = base.copy()
        bumped[i, j] = base[i, j] + step
        hi, _ = loss_and_grad(PhaseMap(bumped, phase.wavelength_m, phase.pitch_m))
        bumped[i, j] = base[i, j] - step
        lo, _ = loss_and_grad(PhaseMap(bumped, phase.wavelength_m, phase.pitch_m))
        fd = (hi - lo) / (2.0 * step)
        an = analytic[i, j]
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8 * grad_scale)
        worst = max(worst, rel)
    return worst


def psf_loss_and_grad(weights: np.ndarray, lens: PhaseMap | None, defocus: float,
                      geometry: CameraGeometry
                      ) -> Callable[[PhaseMap], tuple[float, np.ndarray]]:
    """Standard validation loss sum(w o h) with its analytic gradient."""

    def fn(phase: PhaseMap) -> tuple[float, np.ndarray]:
        point_spread, tape = psf_forward(phase, lens, defocus, geometry)
        loss = float((weights * point_spread.values).sum())
        grad = phase_gradient_from_sensor(tape, weights)
        return loss, grad.values

    return fn
