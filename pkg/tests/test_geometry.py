import math

import numpy as np
import pytest

from edofcam.geometry import (CameraGeometry, SpectralModel, chirp_bandwidth,
                              defocus_coefficient, depth_from_inverse,
                              focal_length, focus_distance, inverse_depth,
                              max_defocus, min_sampling_pitch,
                              propagation_coefficient, reference_geometry,
                              reference_spectral)

INF = float("inf")


def test_inverse_depth_mapping():
    assert inverse_depth(INF) == 0.0
    assert inverse_depth(2.0) == 0.5
    assert depth_from_inverse(0.0) == INF
    with pytest.raises(ValueError):
        inverse_depth(0.0)
    with pytest.raises(ValueError):
        inverse_depth(-1.0)


def test_geometry_validation():
    with pytest.raises(ValueError):
        reference_geometry(aperture_radius_m=-1.0)
    with pytest.raises(ValueError):
        # grid does not cover the aperture
        CameraGeometry(2.5e-3, 36.9e-3, 16.51e-3, 2e-3, 21e-6, 6e-6, grid_side=100)


def test_padded_side_power_of_two():
    g = reference_geometry()
    assert g.grid_side == 239  # ceil(2 * 2.5mm / 21um)
    assert g.padded_side() == 512
    assert g.padded_side() >= 2 * g.grid_side


def test_focal_length_and_focus_distance():
    f = focal_length(16.51e-3, 1.457)
    assert f == pytest.approx(36.13e-3, abs=5e-6)
    # focusing a 1.5 m object lands within 0.5% of the 36.9 mm sensor plane
    zi = 1.0 / (1.0 / f - 1.0 / 1.5)
    assert abs(zi - 36.9e-3) / 36.9e-3 < 0.005
    assert focus_distance(f, zi) == pytest.approx(1.5, rel=1e-9)
    assert focus_distance(36e-3, 35e-3) == INF  # sensor inside focal length


def test_defocus_zero_at_focused_plane():
    geom = reference_geometry()
    f = focal_length(geom.lens_radius_of_curvature_m, 1.460)
    z_focus = focus_distance(f, geom.sensor_distance_m)
    psi = defocus_coefficient(z_focus, 543e-9, geom, f)
    assert abs(psi) < 1e-9


def test_defocus_reference_near_depth():
    geom = reference_geometry()
    f = 16.51e-3 / 0.457
    psi = defocus_coefficient(0.5, 611e-9, geom, f)
    expected = (math.pi / 611e-9) * (1 / 0.5 + 1 / 36.9e-3 - 0.457 / 16.51e-3) \
        * (2.5e-3) ** 2
    assert psi == pytest.approx(expected, rel=1e-12)
    # consistent with the published maximum defocus of ~45
    assert 45.0 < psi < 46.0


def test_defocus_at_infinity():
    geom = reference_geometry()
    f = 16.51e-3 / 0.463
    psi = defocus_coefficient(INF, 482e-9, geom, f)
    expected = (math.pi / 482e-9) * (1 / 36.9e-3 - 1 / f) * (2.5e-3) ** 2
    assert psi == pytest.approx(expected, rel=1e-12)


def test_defocus_rejects_nonpositive_depth():
    geom = reference_geometry()
    with pytest.raises(ValueError):
        defocus_coefficient(0.0, 543e-9, geom, 36e-3)
    with pytest.raises(ValueError):
        defocus_coefficient(-0.5, 543e-9, geom, 36e-3)


def test_propagation_vs_defocus_coefficient():
    # the two chirp conventions differ by exactly the paraxial lens term
    geom = reference_geometry()
    f = focal_length(geom.lens_radius_of_curvature_m, 1.460)
    lam = 543e-9
    for z in (0.5, 1.0, INF):
        gap = propagation_coefficient(z, lam, geom) \
            - defocus_coefficient(z, lam, geom, f)
        assert gap == pytest.approx((math.pi / lam) * geom.aperture_radius_m ** 2 / f,
                                    rel=1e-12)


def test_chirp_bandwidth():
    assert chirp_bandwidth(0.0, 2.5e-3) == 0.0
    assert chirp_bandwidth(40.0, 2.5e-3) == pytest.approx(32000.0, rel=1e-12)
    assert chirp_bandwidth(80.0, 2.5e-3) == pytest.approx(
        2 * chirp_bandwidth(40.0, 2.5e-3), rel=1e-12)


def test_min_sampling_pitch_values():
    # the published 21 um choice satisfies the bound at Psi_max = 45
    bound = min_sampling_pitch(45.0, 2.5e-3)
    assert bound == pytest.approx(2.5e-3 * math.pi / 360.0, rel=1e-12)
    assert bound == pytest.approx(21.8e-6, abs=0.05e-6)
    assert 21e-6 <= bound
    assert min_sampling_pitch(45.0, 1.25e-3) == pytest.approx(bound / 2, rel=1e-12)
    assert min_sampling_pitch(8.0, 2.5e-3) == pytest.approx(122.7e-6, abs=0.05e-6)
    assert min_sampling_pitch(0.0, 2.5e-3) == INF


def test_max_defocus_reference_range(ref_geometry, ref_spectral):
    psi_max = max_defocus((0.5, INF), ref_spectral, ref_geometry)
    assert 44.0 <= psi_max <= 47.0
    # attained at the red channel near endpoint
    f_red = focal_length(ref_geometry.lens_radius_of_curvature_m, 1.457)
    assert psi_max == pytest.approx(
        abs(defocus_coefficient(0.5, 611e-9, ref_geometry, f_red)), rel=1e-12)


def test_max_defocus_degenerate_range(ref_geometry, ref_spectral):
    f_green = focal_length(ref_geometry.lens_radius_of_curvature_m, 1.460)
    z_focus = focus_distance(f_green, ref_geometry.sensor_distance_m)
    psi_max = max_defocus((z_focus, z_focus), ref_spectral, ref_geometry)
    others = []
    for lam, n in ((611e-9, 1.457), (482e-9, 1.463)):
        f = focal_length(ref_geometry.lens_radius_of_curvature_m, n)
        others.append(abs(defocus_coefficient(z_focus, lam, ref_geometry, f)))
    assert psi_max == pytest.approx(max(others), rel=1e-12)
    assert psi_max > 0.0


def test_max_defocus_symmetric_single_wavelength(ref_geometry):
    spectral = SpectralModel((543e-9,), (1.460,), (1.460,), 0)
    f = focal_length(ref_geometry.lens_radius_of_curvature_m, 1.460)
    d_focus = 1.0 / focus_distance(f, ref_geometry.sensor_distance_m)
    z_lo = depth_from_inverse(d_focus + 0.4)
    z_hi = depth_from_inverse(d_focus - 0.4)
    psi_max = max_defocus((z_lo, z_hi), spectral, ref_geometry)
    psi_lo = defocus_coefficient(z_lo, 543e-9, ref_geometry, f)
    psi_hi = defocus_coefficient(z_hi, 543e-9, ref_geometry, f)
    assert psi_lo == pytest.approx(-psi_hi, rel=1e-9)
    assert psi_max == pytest.approx(abs(psi_lo), rel=1e-12)


def test_sampling_safety_over_range(ref_geometry, ref_spectral):
    # every depth inside the configured range stays within Psi_max
    psi_max = max_defocus((0.5, INF), ref_spectral, ref_geometry)
    for diopter in np.linspace(0.0, 2.0, 41):
        z = depth_from_inverse(diopter)
        for lam, n in zip(ref_spectral.wavelengths_m,
                          ref_spectral.lens_refractive_index):
            f = focal_length(ref_geometry.lens_radius_of_curvature_m, n)
            assert abs(defocus_coefficient(z, lam, ref_geometry, f)) <= psi_max + 1e-9


def test_spectral_model_validation():
    with pytest.raises(ValueError):
        SpectralModel((543e-9, 543e-9), (1.46, 1.46), (1.46, 1.46), 0)
    with pytest.raises(ValueError):
        SpectralModel((543e-9,), (0.99,), (1.46,), 0)
    with pytest.raises(ValueError):
        SpectralModel((543e-9,), (1.46,), (1.46,), 1)


def test_phase_scale_reference(ref_spectral):
    # nominal (green) to red: lam0*(n_red-1) / (lam_red*(n_green-1))
    expected = 543e-9 * 0.457 / (611e-9 * 0.460)
    assert ref_spectral.phase_scale(0) == pytest.approx(expected, rel=1e-12)
    assert ref_spectral.phase_scale(1) == 1.0
