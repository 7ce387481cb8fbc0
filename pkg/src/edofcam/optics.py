"""Pure wave-optics math: pupils, PSFs, MTFs, lens and baseline phase masks.

The imaging model is on-axis paraxial Fourier optics: the incoherent PSF is
the squared magnitude of the DFT of the generalized pupil, evaluated on the
sensor plane and integrated onto the sensor pixel grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraGeometry, SpectralModel

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# grid value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeightMap:
    """Surface thickness profile d(s, t) of the phase element, meters."""

    values_m: np.ndarray
    pitch_m: float

    def __post_init__(self) -> None:
        if self.values_m.ndim != 2:
            raise ValueError("height map must be 2D")
        if not np.isfinite(self.values_m).all():
            raise ValueError("height map contains non-finite values")


@dataclass(frozen=True)
class PhaseMap:
    """Phase delay grid (radians) at a single wavelength."""

    values_rad: np.ndarray
    wavelength_m: float
    pitch_m: float

    def __post_init__(self) -> None:
        if self.values_rad.ndim != 2:
            raise ValueError("phase map must be 2D")
        if not np.isfinite(self.values_rad).all():
            raise ValueError("phase map contains non-finite values")


@dataclass(frozen=True)
class ComplexPupil:
    """Generalized pupil: aperture times the combined phase factor."""

    values: np.ndarray
    wavelength_m: float
    defocus: float

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or not np.iscomplexobj(self.values):
            raise ValueError("pupil must be a 2D complex grid")
        if np.abs(self.values).max() > 1.0 + 1e-9:
            raise ValueError("pupil magnitude exceeds 1")


@dataclass(frozen=True)
class Psf:
    """Unit-sum intensity point spread function on the sensor pixel grid."""

    values: np.ndarray
    pitch_m: float
    wavelength_m: float
    depth_m: float | None = None

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("PSF must be 2D")
        if self.values.min() < -1e-12:
            raise ValueError("PSF has negative values")
        if abs(self.values.sum() - 1.0) > 1e-6:
            raise ValueError("PSF is not normalized to unit sum")


@dataclass(frozen=True)
class Mtf:
    """Modulation transfer function, centered, DC normalized to 1."""

    values: np.ndarray
    frequency_pitch: float  # cycles per meter per sample


# ---------------------------------------------------------------------------
# phase construction
# ---------------------------------------------------------------------------

def thickness_to_phase(height: HeightMap, wavelength_m: float,
                       refractive_index: float) -> PhaseMap:
    """Phase delay (2*pi/lam) * (n - 1) * d of a transparent element."""
    if refractive_index <= 1.0:
        raise ValueError("refractive index must exceed 1")
    phase = (TWO_PI / wavelength_m) * (refractive_index - 1.0) * height.values_m
    return PhaseMap(phase, wavelength_m, height.pitch_m)


def phase_to_thickness(phase: PhaseMap, refractive_index: float) -> HeightMap:
    """Inverse of :func:`thickness_to_phase` at the map's own wavelength."""
    if refractive_index <= 1.0:
        raise ValueError("refractive index must exceed 1")
    d = phase.values_rad * phase.wavelength_m / (TWO_PI * (refractive_index - 1.0))
    return HeightMap(d, phase.pitch_m)


def phase_transfer(phase_at_nominal: PhaseMap, target_wavelength_m: float,
                   spectral: SpectralModel) -> PhaseMap:
    """Rescale the nominal-wavelength phase to another channel.

    Both phases are produced by the same physical thickness, so the map is
    a single multiplicative factor (dispersion over wavelength ratio).
    """
    lam0 = spectral.nominal_wavelength_m
    if phase_at_nominal.wavelength_m != lam0:
        raise ValueError("input phase must be defined at the nominal wavelength")
    channel = spectral.wavelengths_m.index(target_wavelength_m)
    scale = spectral.phase_scale(channel)
    return PhaseMap(phase_at_nominal.values_rad * scale, target_wavelength_m,
                    phase_at_nominal.pitch_m)


def lens_phase(geometry: CameraGeometry, wavelength_m: float,
               lens_index: float) -> PhaseMap:
    """Phase delay of the plano-convex lens from its exact spherical sag.

    Thickness is d0 - (R - sqrt(R^2 - s^2 - t^2)); keeping the exact square
    root (rather than the quadratic thin-lens approximation) retains the
    lens's spherical aberration in the simulation.  Zero outside the
    aperture.
    """
    R = geometry.lens_radius_of_curvature_m
    if geometry.aperture_radius_m > R:
        raise ValueError("aperture radius exceeds the lens radius of curvature")
    s, t = geometry.pupil_coords()
    rho2 = s * s + t * t
    mask = geometry.aperture_mask()
    sag = R - np.sqrt(np.maximum(R * R - rho2 * mask, 0.0))
    thickness = (geometry.lens_center_thickness_m - sag) * mask
    k = TWO_PI / wavelength_m
    return PhaseMap(k * (lens_index - 1.0) * thickness, wavelength_m,
                    geometry.pupil_pitch_m)


def cubic_mask(strength: float, geometry: CameraGeometry,
               wavelength_m: float) -> PhaseMap:
    """Classic wavefront-coding cubic phase plate a*(s^3 + t^3).

    Coordinates are normalized to the aperture radius; zero outside the
    aperture.  The strength for the published comparison figures is not
    fixed anywhere, so it is a free parameter.
    """
    if not math.isfinite(strength):
        raise ValueError("strength must be finite")
    s, t = geometry.pupil_coords()
    r = geometry.aperture_radius_m
    sn, tn = s / r, t / r
    phase = strength * (sn ** 3 + tn ** 3) * geometry.aperture_mask()
    return PhaseMap(phase, wavelength_m, geometry.pupil_pitch_m)


def zero_phase(geometry: CameraGeometry, wavelength_m: float) -> PhaseMap:
    """All-zero phase map on the pupil grid (clear-aperture DOE slot)."""
    return PhaseMap(np.zeros((geometry.grid_side, geometry.grid_side)),
                    wavelength_m, geometry.pupil_pitch_m)


# ---------------------------------------------------------------------------
# pupil and PSF
# ---------------------------------------------------------------------------

def generalized_pupil(doe_phase: PhaseMap, lens_phase: PhaseMap | None,
                      defocus: float, geometry: CameraGeometry) -> ComplexPupil:
    """Assemble A * exp(j*(phi + phi_lens)) * exp(j*Psi*(s^2+t^2)/r^2).

    ``defocus`` is the coefficient of the quadratic chirp actually applied.
    When ``lens_phase`` carries the full lens profile, pass the propagation
    coefficient (source + sensor curvature); when the lens is folded into
    the chirp paraxially, pass the defocus coefficient and no lens phase.
    """
    n = geometry.grid_side
    if doe_phase.values_rad.shape != (n, n):
        raise ValueError("DOE phase grid does not match the camera grid")
    total = doe_phase.values_rad
    if lens_phase is not None:
        if lens_phase.values_rad.shape != (n, n):
            raise ValueError("lens phase grid does not match the camera grid")
        if lens_phase.pitch_m != doe_phase.pitch_m:
            raise ValueError("lens and DOE phase pitches differ")
        total = total + lens_phase.values_rad
    s, t = geometry.pupil_coords()
    r = geometry.aperture_radius_m
    chirp = defocus * (s * s + t * t) / (r * r)
    mask = geometry.aperture_mask()
    values = mask * np.exp(1j * (total + chirp))
    return ComplexPupil(values, doe_phase.wavelength_m, defocus)


def resample_matrix(n_in: int, pitch_in: float, n_out: int,
                    pitch_out: float) -> np.ndarray:
    """1D box-overlap (pixel photon collection) resampling matrix.

    Input sample m is a cell of width ``pitch_in`` centered at
    (m - n_in//2)*pitch_in; output pixel j collects the fraction of each
    input cell inside its own span.  Columns sum to 1 for cells fully
    inside the output window, so PSF mass is conserved up to trimming.
    """
    j = np.arange(n_out)
    m = np.arange(n_in)
    out_lo = (j - n_out // 2 - 0.5) * pitch_out
    out_hi = out_lo + pitch_out
    in_lo = (m - n_in // 2 - 0.5) * pitch_in
    in_hi = in_lo + pitch_in
    overlap = (np.minimum(out_hi[:, None], in_hi[None, :])
               - np.maximum(out_lo[:, None], in_lo[None, :]))
    return np.maximum(overlap, 0.0) / pitch_in


@dataclass(frozen=True)
class PsfPipelineResult:
    """Everything the differentiable layer needs to replay the PSF forward."""

    psf: np.ndarray           # final unit-sum PSF, sensor pitch
    spectrum: np.ndarray      # DFT of the zero-padded pupil
    padded_side: int
    grid_side: int
    resample: np.ndarray      # 1D operator applied on both axes
    mass: float               # resampled PSF sum before normalization
    native_pitch_m: float


def psf_pipeline(pupil_values: np.ndarray, wavelength_m: float,
                 geometry: CameraGeometry) -> PsfPipelineResult:
    """Shared forward path: pad, DFT, intensity, center, resample, normalize."""
    n0 = geometry.grid_side
    if pupil_values.shape != (n0, n0):
        raise ValueError("pupil grid does not match the camera grid")
    m = geometry.padded_side()
    padded = np.zeros((m, m), dtype=np.complex128)
    padded[:n0, :n0] = pupil_values
    spectrum = np.fft.fft2(padded)
    raw = np.fft.fftshift(spectrum.real ** 2 + spectrum.imag ** 2)
    native_pitch = wavelength_m * geometry.sensor_distance_m / (m * geometry.pupil_pitch_m)
    k = geometry.sensor_kernel_side
    if k is None:
        k = int(m * native_pitch / geometry.sensor_pixel_pitch_m)
        if k % 2 == 0:
            k -= 1
        k = max(k, 3)
    w = resample_matrix(m, native_pitch, k, geometry.sensor_pixel_pitch_m)
    collected = w @ raw @ w.T
    mass = float(collected.sum())
    if mass <= 0.0:
        raise ValueError("PSF has no energy; empty pupil?")
    return PsfPipelineResult(psf=collected / mass, spectrum=spectrum,
                             padded_side=m, grid_side=n0, resample=w,
                             mass=mass, native_pitch_m=native_pitch)


def psf(pupil: ComplexPupil, geometry: CameraGeometry,
        depth_m: float | None = None) -> Psf:
    """Incoherent PSF |DFT(Q)|^2, centered, integrated to the sensor pitch."""
    result = psf_pipeline(pupil.values, pupil.wavelength_m, geometry)
    return Psf(result.psf, geometry.sensor_pixel_pitch_m, pupil.wavelength_m,
               depth_m)


def mtf(point_spread: Psf) -> Mtf:
    """Magnitude of the PSF's DFT with the zero-frequency value pinned to 1."""
    spectrum = np.abs(np.fft.fft2(point_spread.values))
    dc = spectrum[0, 0]
    if dc <= 0.0:
        raise ValueError("PSF has zero DC component")
    n = point_spread.values.shape[0]
    pitch = 1.0 / (n * point_spread.pitch_m)
    return Mtf(np.fft.fftshift(spectrum / dc), pitch)


def radial_profile(transfer: Mtf) -> tuple[np.ndarray, np.ndarray]:
    """Radially averaged MTF: (frequencies in cycles/m, mean magnitude)."""
    n_rows, n_cols = transfer.values.shape
    cy = n_rows // 2
    cx = n_cols // 2
    yy, xx = np.mgrid[0:n_rows, 0:n_cols]
    rad = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    bins = np.round(rad).astype(int)
    n_bins = min(n_rows, n_cols) // 2 + 1
    sums = np.bincount(bins.ravel(), weights=transfer.values.ravel(),
                       minlength=n_bins)[:n_bins]
    counts = np.bincount(bins.ravel(), minlength=n_bins)[:n_bins]
    profile = sums / np.maximum(counts, 1)
    freqs = np.arange(n_bins) * transfer.frequency_pitch
    return freqs, profile


def diffraction_cutoff(wavelength_m: float, geometry: CameraGeometry) -> float:
    """Incoherent cutoff frequency 2r / (lam * z_i), cycles per meter."""
    return 2.0 * geometry.aperture_radius_m / (
        wavelength_m * geometry.sensor_distance_m)
