import numpy as np
import pytest
from scipy.ndimage import zoom

from edofcam.geometry import CameraGeometry, reference_geometry, reference_spectral


def toy_geometry(grid_side: int = 64, kernel_side: int | None = 33,
                 aperture_radius_m: float = 1.25e-3,
                 sensor_distance_m: float = 37.2277e-3) -> CameraGeometry:
    """Small camera for fast tests: green channel focused at 1 m.

    The pupil grid side bounds the representable defocus (|Psi| <= N*pi/16
    by the sampling rule), so the toy keeps |Psi| under ~12 over the
    [0.5 m, inf) range.
    """
    return CameraGeometry(
        aperture_radius_m=aperture_radius_m,
        sensor_distance_m=sensor_distance_m,
        lens_radius_of_curvature_m=16.51e-3,
        lens_center_thickness_m=2e-3,
        pupil_pitch_m=2 * aperture_radius_m / grid_side,
        sensor_pixel_pitch_m=6e-6,
        grid_side=grid_side,
        sensor_kernel_side=kernel_side,
    )


def synth_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Textured test image: fine-grained blobs plus hard-edged rectangles.

    The 4x-upsampled noise base carries mid/high spatial frequencies, so
    defocus genuinely destroys content (a smooth image would let the
    unprocessed blurred camera score unrealistically well).
    """
    base = np.clip(zoom(rng.uniform(0, 1, (size // 4, size // 4)), 4, order=1), 0, 1)
    img = np.stack([np.clip(base * rng.uniform(0.5, 1.0) + rng.uniform(0, 0.3), 0, 1)
                    for _ in range(3)], axis=2)
    for _ in range(5):
        r0, c0 = rng.integers(0, size - 14, 2)
        hh, ww = rng.integers(4, 13, 2)
        img[r0:r0 + hh, c0:c0 + ww] = rng.uniform(0, 1, 3)
    return np.clip(img, 0, 1)


@pytest.fixture(scope="session")
def ref_geometry():
    return reference_geometry()


@pytest.fixture(scope="session")
def ref_spectral():
    return reference_spectral()


@pytest.fixture(scope="session")
def small_geometry():
    return toy_geometry(32, 21)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
