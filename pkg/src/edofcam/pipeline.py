"""End-to-end training and evaluation of the joint optics + deblurring system.

The trainable state is the nominal-wavelength pupil phase (float32, so
checkpoints round-trip bit-exactly) plus the deblurring network parameters.
Every random draw is derived from (seed, purpose, epoch/step) via
``numpy.random.SeedSequence`` spawn keys, so runs are reproducible
regardless of scheduling.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fileio
from .geometry import (CameraGeometry, SpectralModel, depth_from_inverse,
                       focal_length, inverse_depth, max_defocus,
                       propagation_coefficient)
from .network import Adam, DeblurNet, DTYPE, LossConfig, deblur_loss
from .optics import (HeightMap, PhaseMap, Psf, lens_phase, phase_to_thickness,
                     zero_phase)
from .psfgrad import (PhaseGradient, inject_phase_noise,
                      phase_gradient_from_sensor, psf_forward,
                      wavelength_grad_accumulate)
from .sensor import (SceneSample, SensorImage, convolve_reflect,
                     convolve_reflect_kernel_grad, mean_psf, psnr,
                     render_planar, wiener_deconvolve)


class NumericError(RuntimeError):
    """Raised when training produces a non-finite loss."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 300
    batch_size: int = 4
    epochs: int = 73
    z_min_m: float = 0.5
    z_max_m: float = float("inf")
    sigma_s_low: float = 0.001
    sigma_s_high: float = 0.015
    sigma_d_m: float = 40e-9
    learning_rate: float = 1e-3
    phase_learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weight_decay: float = 1e-4
    validation_fraction: float = 0.10
    seed: int = 0
    depth_levels: int = 64
    patch_overlap: int = 0
    phase_init_std: float = 0.01
    loss_alpha: float = 1e-3
    loss_beta: float = 10.0
    loss_gamma: float = 0.8
    negative_slope: float = 0.01
    total_steps: int | None = None
    checkpoint_every: int = 0  # epochs; 0 writes only the final checkpoint
    eval_sigma_s: float = 0.005
    wiener_nsr: float = 0.01

    def __post_init__(self) -> None:
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation fraction must lie in (0, 1)")
        if self.sigma_s_low > self.sigma_s_high:
            raise ValueError("sigma_s range is inverted")
        if self.z_min_m <= 0.0:
            raise ValueError("z_min must be positive")
        if inverse_depth(self.z_min_m) < inverse_depth(self.z_max_m):
            raise ValueError("depth range is inverted")
        if self.depth_levels < 1:
            raise ValueError("need at least one depth level")

    def loss_config(self) -> LossConfig:
        return LossConfig(self.loss_alpha, self.loss_beta, self.loss_gamma)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        if "z_max_m" in d and d["z_max_m"] in ("inf", None):
            d = dict(d, z_max_m=float("inf"))
        return cls(**d)


def _seed_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# purpose tags for the counter-based seeding scheme
_TAG_PHASE_INIT = 0
_TAG_SHUFFLE = 1
_TAG_STEP = 2
_TAG_VALIDATION = 3
_TAG_EVAL = 4


# ---------------------------------------------------------------------------
# dataset ingestion
# ---------------------------------------------------------------------------

@dataclass
class PatchStore:
    """Deterministically tiled and split training patches."""

    patches: np.ndarray            # (N, patch, patch, 3) float64 in [0, 1]
    hashes: list[str]
    train_indices: np.ndarray
    val_indices: np.ndarray
    dataset_hash: str

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]


def _tile(image: np.ndarray, patch: int, overlap: int) -> list[np.ndarray]:
    stride = patch - overlap
    if stride <= 0:
        raise ValueError("patch overlap must be smaller than the patch size")
    h, w = image.shape[:2]
    tiles = []
    for top in range(0, h - patch + 1, stride):
        for left in range(0, w - patch + 1, stride):
            tiles.append(image[top:top + patch, left:left + patch])
    return tiles


def store_from_images(images: list[np.ndarray], patch_size: int, overlap: int,
                      validation_fraction: float,
                      dataset_hash: str = "") -> PatchStore:
    """Tile images row-major and split train/validation by content hash."""
    patches = []
    for img in images:
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        patches.extend(_tile(np.clip(img, 0.0, 1.0), patch_size, overlap))
    if not patches:
        raise ValueError("no patches could be extracted")
    stack = np.stack(patches)
    hashes = [fileio.content_hash(np.ascontiguousarray(p).tobytes()) for p in stack]
    order = np.argsort(hashes)
    n_val = max(1, round(validation_fraction * len(hashes))) if len(hashes) > 1 else 0
    val = np.sort(order[:n_val])
    train = np.sort(order[n_val:])
    if not dataset_hash:
        dataset_hash = fileio.content_hash("\n".join(sorted(hashes)).encode("ascii"))
    return PatchStore(stack, hashes, train, val, dataset_hash)


def ingest_dataset(directory, patch_size: int, overlap: int = 0,
                   validation_fraction: float = 0.10) -> PatchStore:
    """Load every PNG under ``directory`` into a deterministic patch store."""
    root = Path(directory)
    paths = sorted(root.glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no readable .png images in {root}")
    images = [fileio.load_png(p) for p in paths]
    return store_from_images(images, patch_size, overlap, validation_fraction,
                             dataset_hash=fileio.hash_files(paths))


def sample_depth(depth_range: tuple[float, float],
                 rng: np.random.Generator) -> float:
    """Uniform in inverse depth over [1/z_max, 1/z_min]; inf maps to 0."""
    z_min, z_max = depth_range
    lo = inverse_depth(z_max)
    hi = inverse_depth(z_min)
    if lo > hi:
        raise ValueError("depth range is inverted")
    return depth_from_inverse(rng.uniform(lo, hi)) if hi > lo else float(z_min)


# ---------------------------------------------------------------------------
# per-step PSF bank
# ---------------------------------------------------------------------------

class PsfBank:
    """PSFs and tapes for the current phase on a fixed diopter grid."""

    def __init__(self, phase_values: np.ndarray, geometry: CameraGeometry,
                 spectral: SpectralModel, diopter_levels: np.ndarray):
        self.geometry = geometry
        self.spectral = spectral
        self.levels = diopter_levels
        self._lens = [lens_phase(geometry, lam, n_l)
                      for lam, n_l in zip(spectral.wavelengths_m,
                                          spectral.lens_refractive_index)]
        self._nominal = PhaseMap(np.asarray(phase_values, dtype=np.float64),
                                 spectral.nominal_wavelength_m,
                                 geometry.pupil_pitch_m)
        self._cache: dict[tuple[int, int], tuple] = {}

    def quantize(self, z_m: float) -> int:
        d = inverse_depth(z_m)
        return int(np.argmin(np.abs(self.levels - d)))

    def level_depth(self, index: int) -> float:
        return depth_from_inverse(float(self.levels[index]))

    def get(self, channel: int, level: int):
        """(Psf, PsfTape) for one channel at one diopter level."""
        key = (channel, level)
        if key not in self._cache:
            lam = self.spectral.wavelengths_m[channel]
            scale = self.spectral.phase_scale(channel)
            phase = PhaseMap(self._nominal.values_rad * scale, lam,
                             self.geometry.pupil_pitch_m)
            z = self.level_depth(level)
            chirp = propagation_coefficient(z, lam, self.geometry)
            self._cache[key] = psf_forward(phase, self._lens[channel], chirp,
                                           self.geometry, depth_m=z)
        return self._cache[key]

    def stack(self, level: int) -> list[Psf]:
        return [self.get(c, level)[0] for c in range(self.spectral.n_channels)]


def diopter_grid(config: TrainConfig) -> np.ndarray:
    lo = inverse_depth(config.z_max_m)
    hi = inverse_depth(config.z_min_m)
    if config.depth_levels == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, config.depth_levels)


def band_psfs(phase: PhaseMap, geometry: CameraGeometry, spectral: SpectralModel,
              band_wavelengths_m: np.ndarray, z_m: float) -> list[Psf]:
    """Per-band PSFs for broadband rendering at one depth.

    Refractive indices between (and beyond) the three modeled channels are
    linearly interpolated (clamped at the ends); the nominal phase is
    rescaled to each band exactly as for the RGB channels.
    """
    order = np.argsort(spectral.wavelengths_m)
    lams = np.asarray(spectral.wavelengths_m)[order]
    n_doe = np.asarray(spectral.doe_refractive_index)[order]
    n_lens = np.asarray(spectral.lens_refractive_index)[order]
    lam0 = spectral.nominal_wavelength_m
    n0 = spectral.nominal_doe_index
    out = []
    for lam in np.asarray(band_wavelengths_m, dtype=np.float64):
        nd = float(np.interp(lam, lams, n_doe))
        nl = float(np.interp(lam, lams, n_lens))
        scale = lam0 * (nd - 1.0) / (lam * (n0 - 1.0))
        band_phase = PhaseMap(phase.values_rad * scale, lam, phase.pitch_m)
        lens = lens_phase(geometry, lam, nl)
        chirp = propagation_coefficient(z_m, lam, geometry)
        point_spread, _ = psf_forward(band_phase, lens, chirp, geometry, z_m)
        out.append(point_spread)
    return out


# ---------------------------------------------------------------------------
# one optimization step
# ---------------------------------------------------------------------------

def train_step(batch: np.ndarray, phase: np.ndarray, net: DeblurNet,
               phase_opt: Adam, net_opt: Adam, geometry: CameraGeometry,
               spectral: SpectralModel, config: TrainConfig,
               rng: np.random.Generator) -> float:
    """Joint update of the pupil phase and the network on one batch.

    ``batch`` is (B, H, W, 3) sharp patches in [0, 1]; ``phase`` is the
    float32 nominal phase, updated in place along with the network.
    """
    b = batch.shape[0]
    channels = spectral.n_channels
    levels = diopter_grid(config)

    noisy = inject_phase_noise(
        PhaseMap(phase.astype(np.float64), spectral.nominal_wavelength_m,
                 geometry.pupil_pitch_m),
        config.sigma_d_m, spectral, rng)
    bank = PsfBank(noisy.values_rad, geometry, spectral, levels)

    depths = [sample_depth((config.z_min_m, config.z_max_m), rng) for _ in range(b)]
    sigmas = rng.uniform(config.sigma_s_low, config.sigma_s_high, b)
    level_of = [bank.quantize(z) for z in depths]

    h, w = batch.shape[1:3]
    sensor = np.empty((b, channels, h, w), dtype=DTYPE)
    masks = np.empty((b, channels, h, w), dtype=bool)
    for i in range(b):
        stack = bank.stack(level_of[i])
        noise = rng.normal(0.0, sigmas[i], (h, w, channels))
        for c in range(channels):
            pre = convolve_reflect(batch[i, :, :, c], stack[c].values) + noise[:, :, c]
            masks[i, c] = (pre >= 0.0) & (pre <= 1.0)
            sensor[i, c] = np.clip(pre, 0.0, 1.0)

    reference = np.ascontiguousarray(batch.transpose(0, 3, 1, 2), dtype=DTYPE)
    output = net.forward(sensor, training=True)
    loss, loss_grad = deblur_loss(output, reference, config.loss_config())
    if not math.isfinite(loss):
        raise NumericError(f"non-finite training loss: {loss}")
    sensor_grad = net.backward(loss_grad)

    kernel_grads: dict[tuple[int, int], np.ndarray] = {}
    for i in range(b):
        for c in range(channels):
            g = sensor_grad[i, c].astype(np.float64) * masks[i, c]
            kernel = bank.get(c, level_of[i])[0].values
            gk = convolve_reflect_kernel_grad(batch[i, :, :, c], g, kernel.shape)
            key = (c, level_of[i])
            if key in kernel_grads:
                kernel_grads[key] += gk
            else:
                kernel_grads[key] = gk

    per_channel = []
    grid = geometry.grid_side
    for c in range(channels):
        total = np.zeros((grid, grid))
        for (cc, level), gk in kernel_grads.items():
            if cc == c:
                total += phase_gradient_from_sensor(bank.get(c, level)[1], gk).values
        per_channel.append(PhaseGradient(total))
    phase_grad = wavelength_grad_accumulate(per_channel, spectral)
    phase_grad32 = phase_grad.values.astype(DTYPE)

    net_opt.step(net.parameters())
    phase_opt.step([("phase", phase, lambda: phase_grad32)])
    return loss


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    epochs: list[dict] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    wall_clock_s: float = 0.0
    config_snapshot: dict = field(default_factory=dict)
    dataset_hash: str = ""

    ROW_FIELDS = ("image", "depth_m", "sigma_s", "sigma_d_m",
                  "psnr_sensor", "psnr_net", "psnr_wiener")

    def summary_lines(self) -> list[str]:
        lines = [f"dataset_hash {self.dataset_hash}"]
        if self.epochs:
            last = self.epochs[-1]
            lines.append(f"final_train_loss {last['train_loss']:.8f}")
            lines.append(f"final_val_loss {last['val_loss']:.8f}")
        if self.rows:
            for key in ("psnr_sensor", "psnr_net", "psnr_wiener"):
                vals = [r[key] for r in self.rows if math.isfinite(r[key])]
                if vals:
                    lines.append(f"mean_{key} {np.mean(vals):.6f}")
        return lines

    def write(self, outdir) -> None:
        """Emit epochs.csv, rows.csv, and summary.txt (all deterministic).

        Wall-clock time goes to a separate timing.txt so that reports from
        identical (config, seed, data) runs are byte-identical.
        """
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        fileio.save_csv(out / "epochs.csv", ["epoch", "train_loss", "val_loss"],
                        [[e["epoch"], repr(e["train_loss"]), repr(e["val_loss"])]
                         for e in self.epochs])
        fileio.save_csv(out / "rows.csv", list(self.ROW_FIELDS),
                        [[repr(r[k]) if isinstance(r[k], float) else r[k]
                          for k in self.ROW_FIELDS] for r in self.rows])
        (out / "summary.txt").write_text("\n".join(self.summary_lines()) + "\n")
        (out / "timing.txt").write_text(f"wall_clock_s {self.wall_clock_s:.3f}\n")


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

class Trainer:
    def __init__(self, config: TrainConfig, geometry: CameraGeometry,
                 spectral: SpectralModel, store: PatchStore):
        self.config = config
        self.geometry = geometry
        self.spectral = spectral
        self.store = store
        rng = _seed_for(config.seed, _TAG_PHASE_INIT)
        side = geometry.grid_side
        self.phase = (rng.normal(0.0, config.phase_init_std, (side, side))
                      * geometry.aperture_mask()).astype(DTYPE) \
            if config.phase_init_std > 0.0 else np.zeros((side, side), dtype=DTYPE)
        self.net = DeblurNet(seed=config.seed, negative_slope=config.negative_slope)
        self.net_opt = Adam(config.learning_rate, config.adam_beta1,
                            config.adam_beta2, config.weight_decay)
        # the phase is physical hardware, not a weight: no decay toward zero
        self.phase_opt = Adam(config.phase_learning_rate, config.adam_beta1,
                              config.adam_beta2, weight_decay=0.0)
        self.global_step = 0
        self.epoch = 0

    # -- training loop ----------------------------------------------------

    def run(self, checkpoint_dir=None, log=None) -> RunReport:
        cfg = self.config
        report = RunReport(config_snapshot=asdict_config(cfg),
                           dataset_hash=self.store.dataset_hash)
        start = time.monotonic()
        train_idx = self.store.train_indices
        steps_per_epoch = max(1, len(train_idx) // cfg.batch_size)
        done = False
        for epoch in range(self.epoch, cfg.epochs):
            self.epoch = epoch
            order = _seed_for(cfg.seed, _TAG_SHUFFLE, epoch).permutation(train_idx)
            losses = []
            for s in range(steps_per_epoch):
                batch_ids = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
                if len(batch_ids) < 1:
                    break
                losses.append(self._step(batch_ids))
                self.global_step += 1
                if cfg.total_steps is not None and self.global_step >= cfg.total_steps:
                    done = True
                    break
            val_loss = self.validation_loss(epoch)
            report.epochs.append({"epoch": epoch,
                                  "train_loss": float(np.mean(losses)) if losses else float("nan"),
                                  "val_loss": val_loss})
            if log:
                log(f"epoch {epoch} train {report.epochs[-1]['train_loss']:.6f} "
                    f"val {val_loss:.6f}")
            if checkpoint_dir and cfg.checkpoint_every and \
                    (epoch + 1) % cfg.checkpoint_every == 0:
                self.save_checkpoint(Path(checkpoint_dir) / f"ckpt_epoch{epoch}.bin")
            if done:
                break
        report.wall_clock_s = time.monotonic() - start
        return report

    def _step(self, batch_ids) -> float:
        batch = self.store.patches[batch_ids]
        rng = _seed_for(self.config.seed, _TAG_STEP, self.global_step)
        return train_step(batch, self.phase, self.net, self.phase_opt,
                          self.net_opt, self.geometry, self.spectral,
                          self.config, rng)

    def validation_loss(self, epoch: int) -> float:
        cfg = self.config
        val_idx = self.store.val_indices
        if len(val_idx) == 0:
            return float("nan")
        rng = _seed_for(cfg.seed, _TAG_VALIDATION, epoch)
        bank = PsfBank(self.phase.astype(np.float64), self.geometry,
                       self.spectral, diopter_grid(cfg))
        losses = []
        for idx in val_idx:
            patch = self.store.patches[idx]
            z = sample_depth((cfg.z_min_m, cfg.z_max_m), rng)
            sigma = rng.uniform(cfg.sigma_s_low, cfg.sigma_s_high)
            stack = bank.stack(bank.quantize(z))
            sensor = render_planar(SceneSample(patch, z), stack, sigma, rng)
            x = sensor.values.transpose(2, 0, 1)[None].astype(DTYPE)
            out = self.net.forward(x, training=False)
            ref = patch.transpose(2, 0, 1)[None].astype(DTYPE)
            loss, _ = deblur_loss(out, ref, cfg.loss_config())
            losses.append(loss)
        return float(np.mean(losses))

    # -- persistence --------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        tensors = {"phase": self.phase}
        tensors.update(self.net.state_tensors())
        tensors.update(self.net_opt.state_tensors("net_adam"))
        tensors.update(self.phase_opt.state_tensors("phase_adam"))
        meta = {"config": asdict_config(self.config),
                "geometry": fileio.geometry_to_dict(self.geometry),
                "spectral": fileio.spectral_to_dict(self.spectral),
                "global_step": self.global_step,
                "epoch": self.epoch,
                "dataset_hash": self.store.dataset_hash}
        fileio.save_checkpoint(path, tensors, meta)

    @classmethod
    def from_checkpoint(cls, path, store: PatchStore | None = None) -> "Trainer":
        tensors, meta = fileio.load_checkpoint(path)
        config = TrainConfig.from_dict(_config_from_snapshot(meta["config"]))
        geometry = fileio.geometry_from_dict(meta["geometry"])
        spectral = fileio.spectral_from_dict(meta["spectral"])
        if store is None:
            store = PatchStore(np.zeros((1, config.patch_size, config.patch_size, 3)),
                               ["empty"], np.array([], dtype=int),
                               np.array([], dtype=int), meta.get("dataset_hash", ""))
        trainer = cls(config, geometry, spectral, store)
        trainer.phase = tensors["phase"].astype(DTYPE)
        trainer.net.load_state_tensors(tensors)
        trainer.net_opt.load_state_tensors(tensors, "net_adam")
        trainer.phase_opt.load_state_tensors(tensors, "phase_adam")
        trainer.global_step = int(meta.get("global_step", 0))
        trainer.epoch = int(meta.get("epoch", 0)) + 1
        return trainer


def asdict_config(config: TrainConfig) -> dict:
    d = asdict(config)
    if d["z_max_m"] == float("inf"):
        d["z_max_m"] = "inf"
    return d


def _config_from_snapshot(d: dict) -> dict:
    d = dict(d)
    if d.get("z_max_m") == "inf":
        d["z_max_m"] = float("inf")
    return d


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(phase: np.ndarray, net: DeblurNet, images: list[np.ndarray],
             depths: list[float], sigma_s_values: list[float],
             sigma_d_values: list[float], geometry: CameraGeometry,
             spectral: SpectralModel, config: TrainConfig,
             noise_draws: int = 1) -> RunReport:
    """PSNR table over images x depths x noise levels.

    Each row records the raw sensor PSNR, the network output PSNR, and the
    Wiener baseline (depth-averaged PSF of the same optics) on the very
    same sensor image.  Noise realizations are shared across the sigma
    levels of a sweep (common random numbers), so paired comparisons
    between levels are not washed out by independent sampling noise.
    """
    report = RunReport(config_snapshot=asdict_config(config))
    levels = np.array(sorted({inverse_depth(z) for z in depths}))
    base_phase = phase.astype(np.float64)
    sigma_phase_unit = (2.0 * math.pi / spectral.nominal_wavelength_m) \
        * (spectral.nominal_doe_index - 1.0)
    for draw in range(noise_draws):
        unit_noise = _seed_for(config.seed, _TAG_EVAL, draw).normal(
            0.0, 1.0, base_phase.shape)
        for d_idx, sigma_d in enumerate(sigma_d_values):
            noisy = base_phase + (sigma_phase_unit * sigma_d) * unit_noise
            bank = PsfBank(noisy, geometry, spectral, levels)
            wiener_kernels = mean_psf([bank.stack(i) for i in range(len(levels))])
            for sigma_s in sigma_s_values:
                for i_idx, image in enumerate(images):
                    z_rng = _seed_for(config.seed, _TAG_EVAL, draw, i_idx)
                    for z in depths:
                        stack = bank.stack(bank.quantize(z))
                        scene = SceneSample(image, z)
                        sensor = render_planar(scene, stack, sigma_s, z_rng)
                        x = sensor.values.transpose(2, 0, 1)[None].astype(DTYPE)
                        restored = net.forward(x, training=False)[0].transpose(1, 2, 0)
                        wiener = wiener_deconvolve(sensor, wiener_kernels,
                                                   config.wiener_nsr)
                        report.rows.append({
                            "image": i_idx,
                            "depth_m": float(z),
                            "sigma_s": float(sigma_s),
                            "sigma_d_m": float(sigma_d),
                            "psnr_sensor": psnr(image, sensor.values),
                            "psnr_net": psnr(image, restored.astype(np.float64)),
                            "psnr_wiener": psnr(image, wiener),
                        })
    return report


def mean_psnr(report: RunReport, key: str, **filters) -> float:
    """Mean of one PSNR column over rows matching the given field values."""
    vals = [r[key] for r in report.rows
            if all(math.isclose(r[f], v, rel_tol=1e-12) if isinstance(v, float)
                   else r[f] == v for f, v in filters.items())]
    if not vals:
        raise ValueError("no rows match the filter")
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# fabrication export
# ---------------------------------------------------------------------------

def export_doe(phase: PhaseMap, spectral: SpectralModel,
               fabrication_pitch_m: float, max_depth_m: float,
               gray_levels: int | None) -> HeightMap:
    """Phase to fabricable height map: wrap, bicubic upsample, quantize.

    The phase is converted to thickness at the nominal wavelength, wrapped
    modulo the maximum feature depth, resampled to the fabrication pitch
    with cubic interpolation, and snapped to the gray-level lattice
    (``gray_levels`` of None skips quantization).
    """
    if fabrication_pitch_m > phase.pitch_m:
        raise ValueError("fabrication pitch must not exceed the design pitch")
    if max_depth_m <= 0.0:
        raise ValueError("max feature depth must be positive")
    thickness = phase_to_thickness(phase, spectral.nominal_doe_index).values_m
    wrapped = np.mod(thickness, max_depth_m)
    n0 = wrapped.shape[0]
    ratio = phase.pitch_m / fabrication_pitch_m
    n_fine = int(round(n0 * ratio))
    fine_idx = (np.arange(n_fine) - (n_fine - 1) / 2.0) / ratio + (n0 - 1) / 2.0
    yy, xx = np.meshgrid(fine_idx, fine_idx, indexing="ij")
    up = ndimage.map_coordinates(wrapped, [yy, xx], order=3, mode="nearest")
    if gray_levels is not None:
        if gray_levels < 2:
            raise ValueError("need at least two gray levels")
        step = max_depth_m / (gray_levels - 1)
        up = np.round(up / step) * step
    return HeightMap(np.clip(up, 0.0, max_depth_m), fabrication_pitch_m)


def doe_phase_step(max_depth_m: float, gray_levels: int,
                   spectral: SpectralModel) -> float:
    """Phase equivalent (at the nominal wavelength) of one height level."""
    step = max_depth_m / (gray_levels - 1)
    return (2.0 * math.pi / spectral.nominal_wavelength_m) \
        * (spectral.nominal_doe_index - 1.0) * step
