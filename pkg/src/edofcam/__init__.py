"""Differentiable wave-optics camera simulation and joint optics/deblurring
optimization for extended depth of field imaging."""

from .geometry import (CameraGeometry, SpectralModel, chirp_bandwidth,
                       defocus_coefficient, focal_length, focus_distance,
                       inverse_depth, max_defocus, min_sampling_pitch,
                       propagation_coefficient, reference_geometry,
                       reference_spectral)
from .optics import (ComplexPupil, HeightMap, Mtf, PhaseMap, Psf, cubic_mask,
                     generalized_pupil, lens_phase, mtf, phase_to_thickness,
                     phase_transfer, psf, radial_profile, thickness_to_phase,
                     zero_phase)
from .psfgrad import (PhaseGradient, PsfTape, finite_diff_check,
                      inject_phase_noise, phase_gradient_from_sensor,
                      psf_backward, psf_forward, pull_back_sensor_gradient,
                      wavelength_grad_accumulate)
from .sensor import (SceneSample, SensorImage, SpectralResponse, psnr,
                     render_broadband, render_layered, render_planar,
                     wiener_deconvolve)
from .network import (Adam, DeblurNet, LossConfig, Tensor4, adam_step, clamp,
                      clamp_backward, deblur_loss)
from .pipeline import (PatchStore, PsfBank, RunReport, TrainConfig, Trainer,
                       evaluate, export_doe, ingest_dataset, sample_depth,
                       store_from_images, train_step)

__version__ = "0.1.0"
