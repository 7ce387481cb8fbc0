"""File formats: float rasters, PNG images, CSV tables, checkpoints, config.

The float raster is the interchange format for height maps, phase maps,
PSFs, and hyperspectral cubes: a 64-byte ASCII header (magic, rows, cols,
pitch in meters, wavelength in meters, band count) followed by row-major
little-endian float32 samples, bands first.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraGeometry, SpectralModel

RASTER_MAGIC = "EDOFRAS"
HEADER_BYTES = 64
CHECKPOINT_MAGIC = "EDOFCKPT"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# float raster
# ---------------------------------------------------------------------------

def save_raster(path, values: np.ndarray, pitch_m: float = 0.0,
                wavelength_m: float = 0.0) -> None:
    """Write a 2D grid or a (bands, rows, cols) cube as a float raster."""
    arr = np.asarray(values)
    if arr.ndim == 2:
        bands, (rows, cols) = 1, arr.shape
    elif arr.ndim == 3:
        bands, rows, cols = arr.shape
    else:
        raise ValueError("raster data must be 2D or 3D")
    header = f"{RASTER_MAGIC} {rows} {cols} {pitch_m:.9e} {wavelength_m:.9e} {bands}"
    raw = header.encode("ascii")
    if len(raw) > HEADER_BYTES:
        raise ValueError("raster header does not fit in 64 bytes")
    with open(path, "wb") as fh:
        fh.write(raw.ljust(HEADER_BYTES, b" "))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_raster(path) -> tuple[np.ndarray, float, float]:
    """Read a float raster; returns (values, pitch_m, wavelength_m).

    2D shape for single-band files, (bands, rows, cols) otherwise.
    """
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_BYTES)
        if len(raw) < HEADER_BYTES:
            raise ValueError(f"{path}: truncated raster header")
        fields = raw.decode("ascii", errors="replace").split()
        if not fields or fields[0] != RASTER_MAGIC:
            raise ValueError(f"{path}: not a float raster (bad magic)")
        rows, cols = int(fields[1]), int(fields[2])
        pitch, wavelength = float(fields[3]), float(fields[4])
        bands = int(fields[5]) if len(fields) > 5 else 1
        data = np.frombuffer(fh.read(4 * bands * rows * cols), dtype="<f4")
    if data.size != bands * rows * cols:
        raise ValueError(f"{path}: raster payload is truncated")
    values = data.reshape(bands, rows, cols)
    if bands == 1:
        values = values[0]
    return values.copy(), pitch, wavelength


# ---------------------------------------------------------------------------
# PNG images
# ---------------------------------------------------------------------------

def save_png(path, values: np.ndarray, bit_depth: int = 8,
             vmax: float = 1.0) -> None:
    """Save [0, vmax] data as 8-bit (gray/RGB) or 16-bit grayscale PNG."""
    arr = np.clip(np.asarray(values, dtype=np.float64) / vmax, 0.0, 1.0)
    if bit_depth == 8:
        img = Image.fromarray(np.round(arr * 255.0).astype(np.uint8))
    elif bit_depth == 16:
        if arr.ndim != 2:
            raise ValueError("16-bit PNG output is grayscale only")
        img = Image.fromarray(np.round(arr * 65535.0).astype(np.uint16))
    else:
        raise ValueError("bit_depth must be 8 or 16")
    img.save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Load an 8- or 16-bit PNG, linearly mapped to [0, 1] floats."""
    with Image.open(path) as img:
        mode = img.mode
        if mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(img, dtype=np.float64) / 65535.0
        elif mode in ("L", "RGB"):
            arr = np.asarray(img, dtype=np.float64) / 255.0
        elif mode in ("LA", "RGBA", "P"):
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        else:
            raise ValueError(f"{path}: unsupported PNG mode {mode}")
    return arr


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def save_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def load_spectral_response_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read (band wavelength, R, G, B) rows; returns (wavelengths, weights)."""
    wavelengths, weights = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                values = [float(x) for x in row]
            except ValueError:
                continue  # header line
            if len(values) != 4:
                raise ValueError(f"{path}: expected 4 columns, got {len(values)}")
            wavelengths.append(values[0])
            weights.append(values[1:])
    if not wavelengths:
        raise ValueError(f"{path}: no spectral response rows found")
    return np.asarray(wavelengths), np.asarray(weights)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    """Single-file checkpoint: text manifest plus float-raster payloads."""
    entries = []
    blobs = []
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float32)
        shape = arr.shape if arr.ndim > 0 else (1,)
        flat = arr.reshape(shape[0], -1) if arr.ndim >= 1 else arr.reshape(1, 1)
        buf = io.BytesIO()
        save_raster_to(buf, flat)
        blobs.append(buf.getvalue())
        entries.append({"name": name, "shape": list(shape), "bytes": len(blobs[-1])})
    manifest = {"version": CHECKPOINT_VERSION, "tensors": entries,
                "meta": meta or {}}
    encoded = json.dumps(manifest, sort_keys=True).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {len(encoded)}\n".encode("ascii"))
        fh.write(encoded)
        for blob in blobs:
            fh.write(blob)


def save_raster_to(fh, values: np.ndarray) -> None:
    arr = np.asarray(values)
    rows, cols = arr.shape
    header = f"{RASTER_MAGIC} {rows} {cols} {0.0:.9e} {0.0:.9e} 1"
    fh.write(header.encode("ascii").ljust(HEADER_BYTES, b" "))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        line = fh.readline().decode("ascii")
        parts = line.split()
        if len(parts) != 3 or parts[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if int(parts[1]) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {parts[1]}")
        manifest = json.loads(fh.read(int(parts[2])).decode("ascii"))
        tensors = {}
        for entry in manifest["tensors"]:
            raw = fh.read(HEADER_BYTES)
            fields = raw.decode("ascii").split()
            rows, cols = int(fields[1]), int(fields[2])
            data = np.frombuffer(fh.read(4 * rows * cols), dtype="<f4")
            tensors[entry["name"]] = data.reshape(entry["shape"]).copy()
    return tensors, manifest["meta"]


# ---------------------------------------------------------------------------
# hashing and config
# ---------------------------------------------------------------------------

def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_files(paths) -> str:
    """Order-independent content hash of a set of files."""
    digests = sorted(content_hash(Path(p).read_bytes()) for p in paths)
    return content_hash("\n".join(digests).encode("ascii"))


def geometry_from_dict(d: dict) -> CameraGeometry:
    kernel = d.get("sensor_kernel_side")
    return CameraGeometry(
        aperture_radius_m=float(d["aperture_radius_m"]),
        sensor_distance_m=float(d["sensor_distance_m"]),
        lens_radius_of_curvature_m=float(d["lens_radius_of_curvature_m"]),
        lens_center_thickness_m=float(d["lens_center_thickness_m"]),
        pupil_pitch_m=float(d["pupil_pitch_m"]),
        sensor_pixel_pitch_m=float(d["sensor_pixel_pitch_m"]),
        grid_side=int(d["grid_side"]),
        pad_factor=float(d.get("pad_factor", 2.0)),
        sensor_kernel_side=int(kernel) if kernel is not None else None,
    )


def spectral_from_dict(d: dict) -> SpectralModel:
    return SpectralModel(
        wavelengths_m=tuple(float(x) for x in d["wavelengths_m"]),
        doe_refractive_index=tuple(float(x) for x in d["doe_refractive_index"]),
        lens_refractive_index=tuple(float(x) for x in d["lens_refractive_index"]),
        nominal_index=int(d.get("nominal_index", 0)),
    )


def geometry_to_dict(g: CameraGeometry) -> dict:
    return asdict(g)


def spectral_to_dict(s: SpectralModel) -> dict:
    d = asdict(s)
    for key in ("wavelengths_m", "doe_refractive_index", "lens_refractive_index"):
        d[key] = list(d[key])
    return d


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
