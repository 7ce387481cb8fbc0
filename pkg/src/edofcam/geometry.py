"""Camera geometry, spectral model, and defocus / sampling analysis.

All lengths are in meters.  Depths are handled in inverse depth (diopters)
so that objects at infinity are the regular point 1/z = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INFINITE_DEPTH = float("inf")


def inverse_depth(z_m: float) -> float:
    """1/z in diopters; infinity maps to 0. Raises on non-positive finite z."""
    if z_m == INFINITE_DEPTH:
        return 0.0
    if not (z_m > 0.0):
        raise ValueError(f"object depth must be positive or infinite, got {z_m}")
    return 1.0 / z_m


def depth_from_inverse(diopters: float) -> float:
    """Inverse of :func:`inverse_depth`."""
    if diopters == 0.0:
        return INFINITE_DEPTH
    if diopters < 0.0:
        raise ValueError(f"inverse depth must be >= 0, got {diopters}")
    return 1.0 / diopters


@dataclass(frozen=True)
class CameraGeometry:
    """Physical layout of the hybrid refractive/diffractive camera.

    Attributes
    ----------
    aperture_radius_m:
        Radius of the circular pupil (shared by lens and phase mask).
    sensor_distance_m:
        Lens-plane to sensor-plane distance.
    lens_radius_of_curvature_m, lens_center_thickness_m:
        Plano-convex lens surface curvature radius and central thickness.
    pupil_pitch_m:
        Sample pitch of the pupil-plane grid.
    sensor_pixel_pitch_m:
        Sensor pixel pitch; point-spread functions are delivered on this grid.
    grid_side:
        Side length (samples) of the unpadded pupil grid.
    pad_factor:
        The pupil is zero-padded to the next power of two at least
        ``pad_factor * grid_side`` before the DFT, to keep the defocus
        chirp's spectral tails from wrapping around.
    sensor_kernel_side:
        Optional fixed (odd) side for the sensor-pitch PSF kernel.  When
        None the kernel covers the full diffraction window.
    """

    aperture_radius_m: float
    sensor_distance_m: float
    lens_radius_of_curvature_m: float
    lens_center_thickness_m: float
    pupil_pitch_m: float
    sensor_pixel_pitch_m: float
    grid_side: int
    pad_factor: float = 2.0
    sensor_kernel_side: int | None = None

    def __post_init__(self) -> None:
        for name in ("aperture_radius_m", "sensor_distance_m", "pupil_pitch_m",
                     "sensor_pixel_pitch_m", "lens_radius_of_curvature_m",
                     "lens_center_thickness_m"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.grid_side < 2:
            raise ValueError("grid_side must be at least 2")
        if self.grid_side * self.pupil_pitch_m < 2.0 * self.aperture_radius_m * (1.0 - 1e-12):
            raise ValueError("pupil grid does not cover the aperture: "
                             f"{self.grid_side} x {self.pupil_pitch_m} < 2 x {self.aperture_radius_m}")
        if self.pad_factor < 1.0:
            raise ValueError("pad_factor must be >= 1")
        if self.sensor_kernel_side is not None and (
                self.sensor_kernel_side < 3 or self.sensor_kernel_side % 2 == 0):
            raise ValueError("sensor_kernel_side must be an odd integer >= 3")

    def pupil_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Centered (s, t) coordinate grids in meters; s along columns."""
        idx = np.arange(self.grid_side, dtype=np.float64) - (self.grid_side - 1) / 2.0
        c = idx * self.pupil_pitch_m
        return np.meshgrid(c, c, indexing="xy")

    def aperture_mask(self) -> np.ndarray:
        """Binary circular aperture indicator on the pupil grid."""
        s, t = self.pupil_coords()
        return (s * s + t * t <= self.aperture_radius_m ** 2).astype(np.float64)

    def padded_side(self) -> int:
        """Power-of-two padded grid side used for the pupil DFT."""
        target = max(int(math.ceil(self.pad_factor * self.grid_side)), self.grid_side)
        return 1 << (target - 1).bit_length()

    def required_grid_side(self) -> int:
        """Minimum samples needed to span the aperture at the current pitch."""
        return int(math.ceil(2.0 * self.aperture_radius_m / self.pupil_pitch_m))


@dataclass(frozen=True)
class SpectralModel:
    """Per-channel wavelengths and material dispersion of the DOE and lens."""

    wavelengths_m: tuple[float, ...]
    doe_refractive_index: tuple[float, ...]
    lens_refractive_index: tuple[float, ...]
    nominal_index: int = 0

    def __post_init__(self) -> None:
        n = len(self.wavelengths_m)
        if len(self.doe_refractive_index) != n or len(self.lens_refractive_index) != n:
            raise ValueError("wavelengths and refractive index lists must have equal length")
        if len(set(self.wavelengths_m)) != n or any(w <= 0 for w in self.wavelengths_m):
            raise ValueError("wavelengths must be positive and distinct")
        if any(x <= 1.0 for x in self.doe_refractive_index + self.lens_refractive_index):
            raise ValueError("refractive indices must exceed 1")
        if not 0 <= self.nominal_index < n:
            raise ValueError("nominal_index out of range")

    @property
    def n_channels(self) -> int:
        return len(self.wavelengths_m)

    @property
    def nominal_wavelength_m(self) -> float:
        return self.wavelengths_m[self.nominal_index]

    @property
    def nominal_doe_index(self) -> float:
        return self.doe_refractive_index[self.nominal_index]

    def phase_scale(self, channel: int) -> float:
        """Factor mapping nominal-wavelength phase to channel phase.

        The DOE thickness is the physical invariant, so the phase at
        wavelength lam is the nominal phase times
        lam0 * (n_lam - 1) / (lam * (n_lam0 - 1)).
        """
        lam0 = self.nominal_wavelength_m
        lam = self.wavelengths_m[channel]
        n0 = self.nominal_doe_index
        n = self.doe_refractive_index[channel]
        return lam0 * (n - 1.0) / (lam * (n0 - 1.0))


def focal_length(radius_of_curvature_m: float, refractive_index: float) -> float:
    """Paraxial focal length R / (n - 1) of the plano-convex lens."""
    if refractive_index <= 1.0:
        raise ValueError("refractive index must exceed 1")
    return radius_of_curvature_m / (refractive_index - 1.0)


def focus_distance(lens_focal_length_m: float, sensor_distance_m: float) -> float:
    """Object distance imaged in focus by the thin-lens equation; inf if none."""
    d = 1.0 / lens_focal_length_m - 1.0 / sensor_distance_m
    if d <= 0.0:
        return INFINITE_DEPTH
    return 1.0 / d


def defocus_coefficient(z_m: float, wavelength_m: float, geometry: CameraGeometry,
                        lens_focal_length_m: float) -> float:
    """Dimensionless defocus strength of the quadratic pupil chirp.

    Psi = (pi / lam) * (1/z + 1/z_i - 1/f) * r^2.  Zero exactly at the
    focused depth; sign tells which side of focus the object sits on.
    """
    if lens_focal_length_m <= 0.0:
        raise ValueError("lens focal length must be positive")
    inv_z = inverse_depth(z_m)
    r = geometry.aperture_radius_m
    return (math.pi / wavelength_m) * (
        inv_z + 1.0 / geometry.sensor_distance_m - 1.0 / lens_focal_length_m) * r * r


def propagation_coefficient(z_m: float, wavelength_m: float,
                            geometry: CameraGeometry) -> float:
    """Quadratic-phase coefficient of source plus sensor-propagation curvature.

    (pi / lam) * (1/z + 1/z_i) * r^2 -- the chirp that remains when the
    lens is modeled by its own (exact) phase profile instead of being
    folded into the defocus coefficient.
    """
    inv_z = inverse_depth(z_m)
    r = geometry.aperture_radius_m
    return (math.pi / wavelength_m) * (inv_z + 1.0 / geometry.sensor_distance_m) * r * r


def chirp_bandwidth(defocus: float, aperture_radius_m: float) -> float:
    """Peak instantaneous frequency 2*Psi/r of the defocus chirp, rad/m."""
    if aperture_radius_m <= 0.0:
        raise ValueError("aperture radius must be positive")
    return 2.0 * defocus / aperture_radius_m


def min_sampling_pitch(psi_max: float, aperture_radius_m: float) -> float:
    """Upper bound r*pi / (8*Psi_max) on the pupil sample pitch.

    Derived from Nyquist sampling of the defocused pupil with a factor-two
    guard band for the finite-aperture spectral tails.  Psi_max of zero
    means the bound is vacuous; returns +inf.
    """
    if psi_max < 0.0:
        raise ValueError("psi_max must be >= 0")
    if psi_max == 0.0:
        return float("inf")
    return aperture_radius_m * math.pi / (8.0 * psi_max)


def max_defocus(depth_range: tuple[float, float], spectral: SpectralModel,
                geometry: CameraGeometry) -> float:
    """Largest |defocus| over all channels at the two depth-range endpoints."""
    z_min, z_max = depth_range
    if inverse_depth(z_min) < inverse_depth(z_max):
        raise ValueError("depth range must satisfy z_min <= z_max")
    worst = 0.0
    for lam, n_lens in zip(spectral.wavelengths_m, spectral.lens_refractive_index):
        f = focal_length(geometry.lens_radius_of_curvature_m, n_lens)
        for z in (z_min, z_max):
            worst = max(worst, abs(defocus_coefficient(z, lam, geometry, f)))
    return worst


def reference_geometry(grid_side: int | None = None,
                       pupil_pitch_m: float = 21e-6,
                       **overrides) -> CameraGeometry:
    """Default camera: 2.5 mm pupil, silica plano-convex lens focused at 1.5 m."""
    params = dict(
        aperture_radius_m=2.5e-3,
        sensor_distance_m=36.9e-3,
        lens_radius_of_curvature_m=16.51e-3,
        lens_center_thickness_m=2.0e-3,
        pupil_pitch_m=pupil_pitch_m,
        sensor_pixel_pitch_m=6e-6,
    )
    params.update(overrides)
    if grid_side is None:
        grid_side = int(math.ceil(2.0 * params["aperture_radius_m"] / params["pupil_pitch_m"]))
    params["grid_side"] = grid_side
    return CameraGeometry(**params)


def reference_spectral() -> SpectralModel:
    """Three-channel RGB model with silica dispersion, green nominal."""
    return SpectralModel(
        wavelengths_m=(611e-9, 543e-9, 482e-9),
        doe_refractive_index=(1.457, 1.460, 1.463),
        lens_refractive_index=(1.457, 1.460, 1.463),
        nominal_index=1,
    )
