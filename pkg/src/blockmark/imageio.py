"""Image and raw-tensor file IO.

PNG (8-bit, via Pillow) is the interchange format; export quantizes with
round-half-away-from-zero.  The raw tensor format is a lossless container
for float64 pixel data: a magic string, one ASCII header line with dtype and
shape, then the row-major bytes.
"""

import os
from pathlib import Path

import numpy as np
from PIL import Image

RAW_MAGIC = b"BMKTENSR1\n"
RAW_SUFFIX = ".bmt"


def quantize8(image: np.ndarray) -> np.ndarray:
    """[0,1] floats -> uint8 with round-half-away-from-zero."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def dequantize8(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / 255.0


def save_png(path, image: np.ndarray):
    arr = quantize8(image)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return dequantize8(arr)


def save_raw(path, tensor: np.ndarray):
    tensor = np.ascontiguousarray(tensor, dtype=np.float64)
    header = ("float64 " + " ".join(str(s) for s in tensor.shape) + "\n").encode("ascii")
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(header)
        f.write(tensor.tobytes())


def load_raw(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(len(RAW_MAGIC))
        if magic != RAW_MAGIC:
            raise ValueError(f"{path}: not a raw tensor file (bad magic)")
        header = f.readline().decode("ascii").split()
        if not header or header[0] != "float64":
            raise ValueError(f"{path}: unsupported dtype in header {header!r}")
        shape = tuple(int(s) for s in header[1:])
        data = np.frombuffer(f.read(), dtype=np.float64)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload size {data.size} vs shape {shape}")
    return data.reshape(shape).copy()


class IngestError(ValueError):
    pass


def ingest_dataset(path, expected_shape=None, skip_bad=False):
    """Load every PNG / raw tensor in a directory, lexicographically ordered.

    Returns (names, images) with images stacked (n,H,W,C).  Files that fail
    to load or mismatch the geometry abort the run (listing offenders)
    unless skip_bad is set.
    """
    root = Path(path)
    if not root.is_dir():
        raise IngestError(f"{path}: not a directory")
    files = sorted(
        p for p in root.iterdir()
        if p.suffix.lower() in (".png", RAW_SUFFIX)
    )
    names, images, bad = [], [], []
    for p in files:
        try:
            img = load_png(p) if p.suffix.lower() == ".png" else load_raw(p)
        except Exception as exc:
            bad.append(f"{p.name}: {exc}")
            continue
        if img.ndim != 3 or np.min(img) < 0.0 or np.max(img) > 1.0:
            bad.append(f"{p.name}: not an (H,W,C) image in [0,1]")
            continue
        if expected_shape is not None and img.shape != tuple(expected_shape):
            bad.append(f"{p.name}: shape {img.shape} vs expected {tuple(expected_shape)}")
            continue
        names.append(p.name)
        images.append(img)
    if bad and not skip_bad:
        raise IngestError(
            f"{len(bad)} bad file(s) in {path}: " + "; ".join(bad[:10])
        )
    if not images:
        raise IngestError(f"{path}: no usable images (found {len(files)} candidate files)")
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        detail = ", ".join(
            f"{n}:{im.shape}" for n, im in list(zip(names, images))[:10]
        )
        raise IngestError(f"{path}: mixed image geometries ({detail})")
    return names, np.stack(images)
