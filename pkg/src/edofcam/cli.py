"""Command-line surface: analyze, simulate, train, eval, baseline, export-doe,
check-grad.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numeric failure.
Heavy imports happen after --threads is applied so the flag can bound the
BLAS/FFT thread pools.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


def _apply_threads(argv: list[str]) -> None:
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = threads


def _parse_depth_list(text: str) -> list[float]:
    out = []
    for token in text.split(","):
        token = token.strip().lower()
        out.append(float("inf") if token in ("inf", "infinity") else float(token))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edofcam",
        description="Wave-optics camera simulation and joint DOE/deblurring optimization")
    parser.add_argument("--threads", type=int, default=None,
                        help="bound the numeric thread pools (default: hardware)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="defocus range and pupil sampling analysis")
    p.add_argument("--geometry", help="JSON file with geometry/spectral sections")
    p.add_argument("--depth-range", required=True,
                   help="z_min,z_max in meters ('inf' allowed)")
    p.add_argument("--out", default=".", help="directory for analysis.csv")

    p = sub.add_parser("simulate", help="render sensor images, PSFs, and MTFs")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--phase", help="nominal-wavelength phase raster")
    src.add_argument("--cubic", type=float, help="cubic phase plate strength")
    src.add_argument("--clear", action="store_true", help="no phase mask")
    p.add_argument("--image", required=True, help="input PNG (or raster cube)")
    p.add_argument("--depth", required=True, help="comma-separated depths in meters")
    p.add_argument("--depth-map", help="per-pixel depth raster (meters)")
    p.add_argument("--depth-step", type=float, default=1e-3,
                   help="layered-rendering depth quantization step")
    p.add_argument("--hyperspectral", action="store_true")
    p.add_argument("--response", help="spectral response CSV (band_m,R,G,B)")
    p.add_argument("--sigma-s", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--geometry", help="JSON geometry/spectral file")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="joint phase/network optimization")
    p.add_argument("--config", help="JSON config (geometry/spectral/train)")
    p.add_argument("--data", required=True, help="directory of training PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="PSNR sweeps for a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory of test PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--depths", help="comma-separated depths (default: 8 levels)")
    p.add_argument("--sigma-s", default=None, help="comma-separated noise levels")
    p.add_argument("--sigma-d", default=None, help="comma-separated height noise (m)")
    p.add_argument("--noise-draws", type=int, default=1)

    p = sub.add_parser("baseline", help="Wiener deconvolution baseline")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--phase", help="nominal-wavelength phase raster")
    src.add_argument("--cubic", type=float)
    src.add_argument("--clear", action="store_true")
    p.add_argument("--image", required=True)
    p.add_argument("--depth", required=True, help="object depth in meters")
    p.add_argument("--sigma-s", type=float, default=0.0)
    p.add_argument("--nsr", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--geometry")
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-doe", help="phase map to fabricable height map")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--phase", help="nominal-wavelength phase raster")
    src.add_argument("--checkpoint")
    p.add_argument("--pitch", type=float, required=True, help="fabrication pitch (m)")
    p.add_argument("--levels", type=int, default=None, help="gray levels")
    p.add_argument("--max-depth", type=float, required=True, help="max feature depth (m)")
    p.add_argument("--geometry")
    p.add_argument("--out", required=True, help="output height raster path")
    p.add_argument("--png", help="optional 16-bit preview PNG path")

    p = sub.add_parser("check-grad", help="finite-difference gradient oracle")
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=40)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)

    return parser


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _load_setup(path):
    """Geometry + spectral from a JSON file, or the built-in reference."""
    from . import fileio, geometry as geo
    if path:
        doc = fileio.load_json(path)
        geometry = fileio.geometry_from_dict(doc["geometry"]) \
            if "geometry" in doc else geo.reference_geometry()
        spectral = fileio.spectral_from_dict(doc["spectral"]) \
            if "spectral" in doc else geo.reference_spectral()
    else:
        geometry = geo.reference_geometry()
        spectral = geo.reference_spectral()
    return geometry, spectral


def _print_config(name: str, resolved: dict) -> None:
    print(f"[{name}] resolved config:")
    print(json.dumps(resolved, indent=2, sort_keys=True, default=str))


def _doe_phase(args, geometry, spectral):
    import numpy as np
    from . import fileio, optics
    lam0 = spectral.nominal_wavelength_m
    if getattr(args, "phase", None):
        values, pitch, wavelength = fileio.load_raster(args.phase)
        if abs(pitch - geometry.pupil_pitch_m) > 1e-12:
            raise ValueError(f"phase raster pitch {pitch} != pupil pitch "
                             f"{geometry.pupil_pitch_m}")
        return optics.PhaseMap(values.astype(np.float64), lam0,
                               geometry.pupil_pitch_m)
    if getattr(args, "cubic", None) is not None:
        return optics.cubic_mask(args.cubic, geometry, lam0)
    return optics.zero_phase(geometry, lam0)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    import math
    from pathlib import Path
    from . import fileio
    from . import geometry as geo

    geometry, spectral = _load_setup(args.geometry)
    depth_range = _parse_depth_list(args.depth_range)
    if len(depth_range) != 2 or geo.inverse_depth(depth_range[0]) < geo.inverse_depth(depth_range[1]):
        raise UsageError("--depth-range must be z_min,z_max with z_min <= z_max")
    z_min, z_max = depth_range
    _print_config("analyze", {"geometry": fileio.geometry_to_dict(geometry),
                              "spectral": fileio.spectral_to_dict(spectral),
                              "depth_range_m": [z_min, z_max]})

    rows = []
    for lam, n_lens in zip(spectral.wavelengths_m, spectral.lens_refractive_index):
        f = geo.focal_length(geometry.lens_radius_of_curvature_m, n_lens)
        zf = geo.focus_distance(f, geometry.sensor_distance_m)
        psi_near = geo.defocus_coefficient(z_min, lam, geometry, f)
        psi_far = geo.defocus_coefficient(z_max, lam, geometry, f)
        rows.append([lam, f, zf, psi_near, psi_far])
        print(f"lambda {lam * 1e9:7.1f} nm  f {f * 1e3:7.3f} mm  focus "
              f"{zf:7.3f} m  Psi({z_min} m) {psi_near:+8.3f}  "
              f"Psi({z_max} m) {psi_far:+8.3f}")

    psi_max = geo.max_defocus((z_min, z_max), spectral, geometry)
    bound = geo.min_sampling_pitch(psi_max, geometry.aperture_radius_m)
    n_needed = int(math.ceil(2 * geometry.aperture_radius_m / bound))
    print(f"Psi_max {psi_max:.3f}")
    print(f"pupil pitch bound {bound * 1e6:.3f} um "
          f"(configured {geometry.pupil_pitch_m * 1e6:.3f} um)")
    print(f"implied pupil grid {n_needed} samples at the bound; "
          f"{geometry.required_grid_side()} at the configured pitch "
          f"(padded DFT side {geometry.padded_side()})")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.save_csv(out / "analysis.csv",
                    ["wavelength_m", "focal_length_m", "focus_distance_m",
                     "psi_at_zmin", "psi_at_zmax"], rows)
    fileio.save_csv(out / "analysis_summary.csv",
                    ["psi_max", "pitch_bound_m", "implied_grid_side",
                     "configured_grid_side", "padded_side"],
                    [[psi_max, bound, n_needed, geometry.required_grid_side(),
                      geometry.padded_side()]])
    return EXIT_OK


def _psf_stacks_for(phase, geometry, spectral, depths):
    from .pipeline import PsfBank
    import numpy as np
    from .geometry import inverse_depth
    levels = np.array(sorted({inverse_depth(z) for z in depths}))
    bank = PsfBank(phase.values_rad, geometry, spectral, levels)
    return bank


def cmd_simulate(args) -> int:
    from pathlib import Path
    import numpy as np
    from . import fileio, optics, plotting
    from .sensor import SceneSample, SpectralResponse, render_broadband, \
        render_layered, render_planar

    geometry, spectral = _load_setup(args.geometry)
    depths = _parse_depth_list(args.depth)
    _print_config("simulate", {"depths_m": depths, "sigma_s": args.sigma_s,
                               "seed": args.seed,
                               "source": args.phase or
                               (f"cubic:{args.cubic}" if args.cubic is not None
                                else "clear")})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    phase = _doe_phase(args, geometry, spectral)
    bank = _psf_stacks_for(phase, geometry, spectral, depths)
    rng = np.random.default_rng(args.seed)

    if args.hyperspectral:
        if not args.response:
            raise UsageError("--hyperspectral requires --response")
        cube, _, _ = fileio.load_raster(args.image)
        band_wavelengths, weights = fileio.load_spectral_response_csv(args.response)
        response = SpectralResponse(weights)
        from .pipeline import band_psfs
        image = np.transpose(cube, (1, 2, 0))
        scene = SceneSample(np.clip(image, 0.0, 1.0), depths[0],
                            tuple(band_wavelengths))
        stack = band_psfs(phase, geometry, spectral, band_wavelengths, depths[0])
        sensor = render_broadband(scene, response, stack, args.sigma_s, rng)
        fileio.save_png(out / "sensor_broadband.png", sensor.values)
    else:
        image = fileio.load_png(args.image)
        if image.ndim == 2:
            image = np.repeat(image[:, :, None], 3, axis=2)

    layer_bank = None
    if args.depth_map:
        depth_values, _, _ = fileio.load_raster(args.depth_map)
        depth_values = depth_values.astype(np.float64)
        quantized = np.round(depth_values / args.depth_step) * args.depth_step
        from .geometry import inverse_depth
        diopters = sorted({inverse_depth(z) for z in np.unique(quantized)})
        from .pipeline import PsfBank
        layer_bank = PsfBank(phase.values_rad, geometry, spectral,
                             np.array(diopters))

    for z in depths:
        tag = "inf" if z == float("inf") else f"{z:g}"
        stack = bank.stack(bank.quantize(z))
        if args.depth_map:
            scene = SceneSample(image, depth_values)
            sensor = render_layered(
                scene, lambda zz: layer_bank.stack(layer_bank.quantize(zz)),
                args.sigma_s, args.depth_step, rng)
        elif not args.hyperspectral:
            sensor = render_planar(SceneSample(image, z), stack, args.sigma_s, rng)
        else:
            sensor = None
        if sensor is not None:
            fileio.save_png(out / f"sensor_z{tag}.png", sensor.values)
        profiles = []
        for c, kernel in enumerate(stack):
            fileio.save_raster(out / f"psf_z{tag}_ch{c}.ras", kernel.values,
                               kernel.pitch_m, kernel.wavelength_m)
            freqs, profile = optics.radial_profile(optics.mtf(kernel))
            profiles.append((freqs, profile))
        n_freq = min(len(p[0]) for p in profiles)
        fileio.save_csv(out / f"mtf_z{tag}.csv",
                        ["frequency_cpm"] + [f"mtf_ch{c}" for c in range(len(stack))],
                        [[profiles[0][0][i]] + [p[1][i] for p in profiles]
                         for i in range(n_freq)])
        plotting.line_plot(out / f"mtf_z{tag}.png", profiles, y_range=(0.0, 1.0))
    print(f"wrote outputs for {len(depths)} depth(s) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from pathlib import Path
    import numpy as np
    from . import fileio
    from .pipeline import NumericError, TrainConfig, Trainer, ingest_dataset

    doc = fileio.load_json(args.config) if args.config else {}
    geometry, spectral = _load_setup(args.config)
    train_dict = dict(doc.get("train", {}))
    if os.environ.get("EDOFCAM_SEED"):
        train_dict["seed"] = int(os.environ["EDOFCAM_SEED"])
    config = TrainConfig.from_dict(train_dict)
    out = Path(os.environ.get("EDOFCAM_OUT", args.out))
    out.mkdir(parents=True, exist_ok=True)

    from .pipeline import asdict_config
    _print_config("train", {"train": asdict_config(config),
                            "geometry": fileio.geometry_to_dict(geometry),
                            "spectral": fileio.spectral_to_dict(spectral)})

    store = ingest_dataset(args.data, config.patch_size, config.patch_overlap,
                           config.validation_fraction)
    print(f"ingested {store.n_patches} patches "
          f"({len(store.train_indices)} train / {len(store.val_indices)} val)")
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, store)
    else:
        trainer = Trainer(config, geometry, spectral, store)
    try:
        report = trainer.run(checkpoint_dir=out, log=print)
    except NumericError as exc:
        dump = out / "diagnostic"
        dump.mkdir(parents=True, exist_ok=True)
        fileio.save_raster(dump / "phase.ras", trainer.phase,
                           geometry.pupil_pitch_m, spectral.nominal_wavelength_m)
        (dump / "failure.json").write_text(json.dumps(
            {"error": str(exc), "global_step": trainer.global_step}, indent=2))
        print(f"numeric failure; diagnostics in {dump}", file=sys.stderr)
        return EXIT_NUMERIC
    trainer.save_checkpoint(out / "checkpoint.bin")
    fileio.save_raster(out / "phase.ras", trainer.phase,
                       geometry.pupil_pitch_m, spectral.nominal_wavelength_m)
    report.write(out)
    print(f"finished {trainer.global_step} steps; outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from pathlib import Path
    import numpy as np
    from . import fileio
    from .pipeline import Trainer, diopter_grid, evaluate
    from .geometry import depth_from_inverse

    trainer = Trainer.from_checkpoint(args.checkpoint)
    config, geometry, spectral = trainer.config, trainer.geometry, trainer.spectral
    paths = sorted(Path(args.data).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no test images in {args.data}")
    images = []
    for p in paths:
        img = fileio.load_png(p)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        images.append(img)
    if args.depths:
        depths = _parse_depth_list(args.depths)
    else:
        depths = [depth_from_inverse(d) for d in
                  np.linspace(diopter_grid(config)[0], diopter_grid(config)[-1], 8)]
    sigma_s = _parse_depth_list(args.sigma_s) if args.sigma_s else [config.eval_sigma_s]
    sigma_d = _parse_depth_list(args.sigma_d) if args.sigma_d else [config.sigma_d_m]
    _print_config("eval", {"depths_m": depths, "sigma_s": sigma_s,
                           "sigma_d_m": sigma_d, "images": len(images)})
    report = evaluate(trainer.phase, trainer.net, images, depths, sigma_s,
                      sigma_d, geometry, spectral, config,
                      noise_draws=args.noise_draws)
    out = Path(args.out)
    report.write(out)
    for line in report.summary_lines():
        print(line)
    return EXIT_OK


def cmd_baseline(args) -> int:
    from pathlib import Path
    import numpy as np
    from . import fileio
    from .sensor import SceneSample, psnr, render_planar, wiener_deconvolve

    geometry, spectral = _load_setup(args.geometry)
    depths = _parse_depth_list(args.depth)
    phase = _doe_phase(args, geometry, spectral)
    bank = _psf_stacks_for(phase, geometry, spectral, depths)
    image = fileio.load_png(args.image)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    _print_config("baseline", {"depths_m": depths, "nsr": args.nsr,
                               "sigma_s": args.sigma_s, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    rows = []
    for z in depths:
        tag = "inf" if z == float("inf") else f"{z:g}"
        stack = bank.stack(bank.quantize(z))
        sensor = render_planar(SceneSample(image, z), stack, args.sigma_s, rng)
        restored = wiener_deconvolve(sensor, stack, args.nsr)
        fileio.save_png(out / f"baseline_sensor_z{tag}.png", sensor.values)
        fileio.save_png(out / f"baseline_wiener_z{tag}.png", restored)
        rows.append([z, psnr(image, sensor.values), psnr(image, restored)])
        print(f"z {tag}: sensor {rows[-1][1]:.3f} dB -> wiener {rows[-1][2]:.3f} dB")
    fileio.save_csv(out / "baseline.csv",
                    ["depth_m", "psnr_sensor", "psnr_wiener"], rows)
    return EXIT_OK


def cmd_export_doe(args) -> int:
    from pathlib import Path
    import numpy as np
    from . import fileio, optics
    from .pipeline import export_doe

    geometry, spectral = _load_setup(args.geometry)
    if args.checkpoint:
        tensors, meta = fileio.load_checkpoint(args.checkpoint)
        geometry = fileio.geometry_from_dict(meta["geometry"])
        spectral = fileio.spectral_from_dict(meta["spectral"])
        values = tensors["phase"].astype(np.float64)
        pitch = geometry.pupil_pitch_m
    else:
        values, pitch, _ = fileio.load_raster(args.phase)
        values = values.astype(np.float64)
        pitch = pitch or geometry.pupil_pitch_m
    _print_config("export-doe", {"pitch_m": args.pitch, "levels": args.levels,
                                 "max_depth_m": args.max_depth})
    phase = optics.PhaseMap(values, spectral.nominal_wavelength_m, pitch)
    height = export_doe(phase, spectral, args.pitch, args.max_depth, args.levels)
    fileio.save_raster(args.out, height.values_m, height.pitch_m,
                       spectral.nominal_wavelength_m)
    if args.png:
        fileio.save_png(args.png, height.values_m, bit_depth=16,
                        vmax=args.max_depth)
    print(f"exported {height.values_m.shape[0]}x{height.values_m.shape[1]} "
          f"height map at {args.pitch * 1e6:.2f} um to {args.out}")
    return EXIT_OK


def cmd_check_grad(args) -> int:
    import numpy as np
    from .geometry import CameraGeometry, reference_spectral
    from .optics import PhaseMap
    from .psfgrad import finite_diff_check, psf_forward, psf_loss_and_grad

    spectral = reference_spectral()
    n = args.grid
    r = 1.25e-3
    geometry = CameraGeometry(
        aperture_radius_m=r, sensor_distance_m=37e-3,
        lens_radius_of_curvature_m=16.51e-3, lens_center_thickness_m=2e-3,
        pupil_pitch_m=2 * r / n, sensor_pixel_pitch_m=6e-6, grid_side=n,
        sensor_kernel_side=21)
    _print_config("check-grad", {"grid": n, "step": args.step,
                                 "samples": args.samples, "tol": args.tol,
                                 "seed": args.seed})
    worst = 0.0
    rng = np.random.default_rng(args.seed)
    mask = geometry.aperture_mask()
    for lam in spectral.wavelengths_m:
        phase = PhaseMap(rng.normal(0.0, 1.0, (n, n)) * mask, lam,
                         geometry.pupil_pitch_m)
        _, tape0 = psf_forward(phase, None, 8.0, geometry)
        weights = rng.normal(0.0, 1.0, tape0.psf_values.shape)
        fn = psf_loss_and_grad(weights, None, 8.0, geometry)
        err = finite_diff_check(fn, phase, args.step, args.samples, rng, mask)
        print(f"lambda {lam * 1e9:.0f} nm: max relative error {err:.3e}")
        worst = max(worst, err)
    print(f"worst over wavelengths: {worst:.3e} (tolerance {args.tol:.1e})")
    return EXIT_OK if worst <= args.tol else EXIT_NUMERIC


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handlers = {
        "analyze": cmd_analyze,
        "simulate": cmd_simulate,
        "train": cmd_train,
        "eval": cmd_eval,
        "baseline": cmd_baseline,
        "export-doe": cmd_export_doe,
        "check-grad": cmd_check_grad,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
