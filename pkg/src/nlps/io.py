"""On-disk formats: PFM float maps, PNG previews, JSON sidecars and dataset directories.

A dataset directory is the only interchange between rendering and solving::

    image_000.pfm ... image_{L-1}.pfm   observed intensities, one per light
    lights.json                         list of light dicts
    camera.json                         camera intrinsics
    mask.pfm                            optional object mask (1 valid, 0 invalid)
    gt_depth.pfm, gt_normal.pfm,        optional ground truth
    gt_albedo.pfm
    manifest.json                       config, config hash and per-file hashes
    preview/                            8-bit PNGs for eyeballing only

PFM files are written little-endian, bottom row first, as float32.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeMismatchError
from .geometry import CameraModel
from .maps import SurfaceMaps
from .photometric import ObservationStack, PointLight

_PFM_DIM = re.compile(rb"^\s*(\d+)\s+(\d+)\s*$")


class DatasetFormatError(OSError):
    """A file exists but does not follow the expected layout."""


# ---------------------------------------------------------------- PFM

def write_pfm(path, image) -> None:
    """Write a ``(H, W)`` or ``(H, W, 3)`` array as a little-endian PFM."""
    image = np.asarray(image)
    if image.ndim == 2:
        tag = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        tag = b"PF"
    else:
        raise ShapeMismatchError(f"PFM holds (H, W) or (H, W, 3) arrays, got {image.shape}")
    h, w = image.shape[:2]
    data = np.ascontiguousarray(np.flipud(image), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(tag + b"\n")
        fh.write(b"%d %d\n" % (w, h))
        fh.write(b"-1.0\n")
        fh.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array with the top row first."""
    with open(path, "rb") as fh:
        tag = fh.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise DatasetFormatError(f"{path}: not a PFM file")
        dims = _PFM_DIM.match(fh.readline())
        if dims is None:
            raise DatasetFormatError(f"{path}: malformed PFM header")
        w, h = int(dims.group(1)), int(dims.group(2))
        try:
            scale = float(fh.readline())
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: malformed PFM scale") from exc
        endian = "<" if scale < 0 else ">"
        channels = 3 if tag == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=endian + "f4")
    if data.size != w * h * channels:
        raise DatasetFormatError(f"{path}: expected {w * h * channels} samples, got {data.size}")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float32)


# ---------------------------------------------------------------- previews

def write_png_preview(path, image, vmin=None, vmax=None) -> None:
    """Linearly map ``image`` to 8 bits and save it as PNG.

    Normal maps ``(H, W, 3)`` in ``[-1, 1]`` are mapped with ``(n + 1) / 2``.
    """
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 3:
        a = (a + 1.0) / 2.0
        lo, hi = 0.0, 1.0
    else:
        finite = a[np.isfinite(a)]
        lo = float(finite.min()) if vmin is None and finite.size else (vmin or 0.0)
        hi = float(finite.max()) if vmax is None and finite.size else (vmax or 1.0)
    span = hi - lo if hi > lo else 1.0
    u8 = np.clip(np.nan_to_num((a - lo) / span) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(u8).save(path)


# ---------------------------------------------------------------- JSON sidecars

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_lights(path, lights) -> None:
    write_json(path, [l.to_dict() for l in lights])


def read_lights(path) -> list[PointLight]:
    data = read_json(path)
    if not isinstance(data, list) or not data:
        raise DatasetFormatError(f"{path}: expected a non-empty list of lights")
    return [PointLight.from_dict(d) for d in data]


def write_camera(path, cam: CameraModel) -> None:
    write_json(path, cam.to_dict())


def read_camera(path) -> CameraModel:
    return CameraModel.from_dict(read_json(path))


def write_manifest(directory, config: dict, extra: dict | None = None) -> dict:
    """Hash every file in ``directory`` (previews excluded) and write ``manifest.json``."""
    directory = Path(directory)
    files = {}
    for p in sorted(directory.rglob("*")):
        rel = p.relative_to(directory).as_posix()
        if p.is_file() and rel != "manifest.json" and not rel.startswith("preview/"):
            files[rel] = file_hash(p)
    manifest = {"config": config, "config_sha256": config_hash(config), "files": files}
    if extra:
        manifest.update(extra)
    write_json(directory / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------- datasets

def image_name(i: int) -> str:
    return f"image_{i:03d}.pfm"


def write_dataset(directory, stack: ObservationStack, lights, cam: CameraModel,
                  gt: SurfaceMaps | None = None, previews=True) -> Path:
    """Write an observation stack with its lights, camera and optional ground truth."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lights = list(lights)
    if len(lights) != stack.n_lights:
        raise ShapeMismatchError(f"{len(lights)} lights for {stack.n_lights} images")
    for i in range(stack.n_lights):
        write_pfm(directory / image_name(i), stack.images[..., i])
    write_lights(directory / "lights.json", lights)
    write_camera(directory / "camera.json", cam)
    if gt is not None:
        write_pfm(directory / "gt_depth.pfm", gt.depth)
        write_pfm(directory / "gt_normal.pfm", gt.normal)
        write_pfm(directory / "gt_albedo.pfm", gt.albedo)
        write_pfm(directory / "mask.pfm", gt.mask.astype(np.float32))
    if previews:
        pv = directory / "preview"
        pv.mkdir(exist_ok=True)
        vmax = float(stack.images.max()) or 1.0
        for i in range(stack.n_lights):
            write_png_preview(pv / f"image_{i:03d}.png", stack.images[..., i], 0.0, vmax)
        if gt is not None:
            write_png_preview(pv / "gt_depth.png", gt.depth)
            write_png_preview(pv / "gt_normal.png", gt.normal)
    return directory


def read_dataset(directory):
    """Load ``(stack, lights, cam, gt)`` from a dataset directory.

    ``gt`` is ``None`` when no ground-truth depth is present.  The object
    mask, if any, becomes the stack's validity mask.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    lights = read_lights(directory / "lights.json")
    cam = read_camera(directory / "camera.json")
    images = []
    for i in range(len(lights)):
        path = directory / image_name(i)
        if not path.exists():
            raise DatasetFormatError(f"missing image for light {i}: {path}")
        images.append(read_pfm(path))
    images = np.stack(images, axis=-1).astype(np.float64)
    if images.shape[:2] != (cam.height, cam.width):
        raise ShapeMismatchError(
            f"images are {images.shape[1]}x{images.shape[0]}, camera is {cam.width}x{cam.height}")
    mask = None
    if (directory / "mask.pfm").exists():
        mask = read_pfm(directory / "mask.pfm") > 0.5
    stack = ObservationStack(images, mask)
    gt = None
    if (directory / "gt_depth.pfm").exists():
        gt = read_maps(directory, prefix="gt_", mask=mask)
    return stack, lights, cam, gt


def write_maps(directory, maps: SurfaceMaps, prefix="", previews=True) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_pfm(directory / f"{prefix}depth.pfm", maps.depth)
    write_pfm(directory / f"{prefix}normal.pfm", maps.normal)
    write_pfm(directory / f"{prefix}albedo.pfm", maps.albedo)
    write_pfm(directory / f"{prefix}mask.pfm", maps.mask.astype(np.float32))
    if previews:
        pv = directory / "preview"
        pv.mkdir(exist_ok=True)
        write_png_preview(pv / f"{prefix}depth.png", maps.depth)
        write_png_preview(pv / f"{prefix}normal.png", maps.normal)
        write_png_preview(pv / f"{prefix}albedo.png", maps.albedo, 0.0)


def read_maps(directory, prefix="", mask=None) -> SurfaceMaps:
    directory = Path(directory)
    for name in ("depth", "normal"):
        if not (directory / f"{prefix}{name}.pfm").exists():
            raise FileNotFoundError(f"missing {prefix}{name}.pfm in {directory}")
    depth = read_pfm(directory / f"{prefix}depth.pfm").astype(np.float64)
    normal = read_pfm(directory / f"{prefix}normal.pfm").astype(np.float64)
    apath = directory / f"{prefix}albedo.pfm"
    albedo = read_pfm(apath).astype(np.float64) if apath.exists() else np.zeros(depth.shape)
    mpath = directory / f"{prefix}mask.pfm"
    if mask is None and mpath.exists():
        mask = read_pfm(mpath) > 0.5
    return SurfaceMaps(depth=depth, normal=normal, albedo=albedo, mask=mask)


# ---------------------------------------------------------------- loss log

def write_loss_csv(path, history) -> None:
    """Write ``(iteration, loss, lr)`` rows with full float precision."""
    history = np.asarray(history, dtype=np.float64).reshape(-1, 3)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iter", "loss", "lr"])
        for it, loss, lr in history:
            wr.writerow([int(it), repr(float(loss)), repr(float(lr))])


def read_loss_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([(float(r["iter"]), float(r["loss"]), float(r["lr"])) for r in rows]).reshape(-1, 3)


def ensure_writable(directory) -> Path:
    """Create ``directory`` and check it accepts files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not os.access(directory, os.W_OK):
        raise PermissionError(f"output directory is not writable: {directory}")
    return directory
