"""Deterministic, parameterized image corruptions for robustness evaluation
and corruption-in-the-loop training.

The JPEG model is the 8x8 blockwise DCT + quantization stage only (standard
luminance/chrominance tables scaled by the usual quality factor); entropy
coding never changes pixel values, and the quantization stage is the part
that attacks watermarks.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .codec import GridSpec

KINDS = ("identity", "gaussian_noise", "low_pass", "grayscale", "jpeg_like", "resize")

# ITU-R BT.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114])

# JPEG Annex K base quantization tables
_Q_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)
_Q_CHROMA = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    sigma: float = 0.1            # gaussian_noise
    kernel_size: int = 5          # low_pass
    blur_sigma: float = 1.0       # low_pass
    quality: int = 80             # jpeg_like
    target: tuple = (64, 64)      # resize
    seed: int = 0                 # stochastic kinds

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}; valid: {KINDS}")
        if self.kind == "gaussian_noise" and self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.kind == "low_pass":
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ValueError("kernel size must be odd and positive")
            if self.blur_sigma <= 0:
                raise ValueError("blur sigma must be positive")
        if self.kind == "jpeg_like" and not (1 <= self.quality <= 100):
            raise ValueError("quality must be in [1,100]")
        if self.kind == "resize" and (len(self.target) != 2 or min(self.target) < 1):
            raise ValueError("resize target must be (height, width)")

    def label(self):
        if self.kind == "gaussian_noise":
            return f"gaussian_noise(sigma={self.sigma})"
        if self.kind == "low_pass":
            return f"low_pass(k={self.kernel_size}, sigma={self.blur_sigma})"
        if self.kind == "jpeg_like":
            return f"jpeg_like(quality={self.quality})"
        if self.kind == "resize":
            return f"resize({self.target[0]}x{self.target[1]})"
        return self.kind


# ------------------------------------------------------------ primitives

@lru_cache(maxsize=None)
def _blur_taps(kernel_size, sigma):
    r = kernel_size // 2
    t = np.exp(-0.5 * ((np.arange(kernel_size) - r) / sigma) ** 2)
    return t / t.sum()


def gaussian_blur(image, kernel_size, sigma):
    """Separable Gaussian blur with reflect padding."""
    taps = _blur_taps(kernel_size, float(sigma))
    r = kernel_size // 2
    out = np.asarray(image, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for k in range(kernel_size):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(k, k + out.shape[axis])
            acc += taps[k] * padded[tuple(sl)]
        out = acc
    return out


@lru_cache(maxsize=None)
def resize_matrix(n_in, n_out):
    """(n_out, n_in) bilinear interpolation matrix, half-pixel centers."""
    a = np.zeros((n_out, n_in))
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    hi = np.clip(lo + 1, 0, n_in - 1)
    frac = np.clip(pos - lo, 0.0, 1.0)
    a[np.arange(n_out), lo] += 1 - frac
    a[np.arange(n_out), hi] += frac
    return a


def resize_bilinear(image, out_h, out_w):
    img = np.asarray(image, dtype=np.float64)
    ah = resize_matrix(img.shape[0], out_h)
    aw = resize_matrix(img.shape[1], out_w)
    return np.einsum("qi,ijc,rj->qrc", ah, img, aw)


def _dct_matrix(n=8):
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    d = np.cos(np.pi * (2 * m + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    d[0] /= np.sqrt(2.0)
    return d


_DCT8 = _dct_matrix(8)


def _quant_tables(quality):
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    tables = []
    for base in (_Q_LUMA, _Q_CHROMA):
        q = np.floor((base * scale + 50.0) / 100.0)
        tables.append(np.clip(q, 1.0, 255.0))
    return tables


def _rgb_to_ycbcr(rgb255):
    r, g, b = rgb255[..., 0], rgb255[..., 1], rgb255[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168735892 * r - 0.331264108 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418687589 * g - 0.081312411 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def _ycbcr_to_rgb(ycc255):
    y, cb, cr = ycc255[..., 0], ycc255[..., 1] - 128.0, ycc255[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136286 * cb - 0.714136286 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _jpeg_quantize_channel(plane255, qtable):
    """8x8 blockwise DCT quantization of one (H,W) plane, H,W multiples of 8."""
    h, w = plane255.shape
    blocks = plane255.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coeff = np.einsum("ab,rcbd,ed->rcae", _DCT8, blocks, _DCT8)
    coeff = np.round(coeff / qtable) * qtable
    rec = np.einsum("ba,rcbd,de->rcae", _DCT8, coeff, _DCT8) + 128.0
    return rec.transpose(0, 2, 1, 3).reshape(h, w)


def jpeg_like(image, quality):
    """DCT-quantization JPEG model (no entropy coding / chroma subsampling)."""
    img = np.asarray(image, dtype=np.float64)
    h, w, c = img.shape
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge") * 255.0
    q_luma, q_chroma = _quant_tables(quality)
    if c == 3:
        ycc = _rgb_to_ycbcr(padded)
        out = np.empty_like(ycc)
        out[..., 0] = _jpeg_quantize_channel(ycc[..., 0], q_luma)
        for ch in (1, 2):
            out[..., ch] = _jpeg_quantize_channel(ycc[..., ch], q_chroma)
        rec = _ycbcr_to_rgb(out)
    else:
        rec = np.stack(
            [_jpeg_quantize_channel(padded[..., ch], q_luma) for ch in range(c)],
            axis=-1,
        )
    return np.clip(rec[:h, :w] / 255.0, 0.0, 1.0)


def to_grayscale(image):
    img = np.asarray(image, dtype=np.float64)
    if img.shape[-1] == 1:
        return img.copy()
    luma = img @ LUMA
    return np.repeat(luma[..., None], img.shape[-1], axis=-1)


# ------------------------------------------------------------ evaluation path

def apply(spec: CorruptionSpec, image, rng=None):
    """Corrupt one (H,W,C) image; may change the spatial size (resize)."""
    img = np.asarray(image, dtype=np.float64)
    if spec.kind == "identity":
        return img.copy()
    if spec.kind == "gaussian_noise":
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        return np.clip(img + rng.normal(0.0, spec.sigma, size=img.shape), 0.0, 1.0)
    if spec.kind == "low_pass":
        return gaussian_blur(img, spec.kernel_size, spec.blur_sigma)
    if spec.kind == "grayscale":
        return to_grayscale(img)
    if spec.kind == "jpeg_like":
        return jpeg_like(img, spec.quality)
    if spec.kind == "resize":
        return np.clip(resize_bilinear(img, spec.target[0], spec.target[1]), 0.0, 1.0)
    raise ValueError(f"unknown corruption kind {spec.kind!r}")


def evaluate_robustness(decoder_model, truth, grid: GridSpec, images, specs, rng=None):
    """Corrupt -> resize back to the decoder geometry -> decode -> bit accuracy.

    `truth` is the embedded MessageDigits; returns one row per spec."""
    from .codec import bit_accuracy
    from .decoder import decode_images

    rows = []
    for spec in specs:
        corrupted = []
        for img in images:
            c = apply(spec, img, rng=rng)
            if c.shape[:2] != (grid.image_height, grid.image_width):
                c = np.clip(
                    resize_bilinear(c, grid.image_height, grid.image_width), 0.0, 1.0
                )
            corrupted.append(c)
        decoded = decode_images(decoder_model, np.stack(corrupted), grid)
        acc = float(np.mean([bit_accuracy(truth, d) for d in decoded]))
        rows.append({"spec": spec, "label": spec.label(), "bit_accuracy": acc})
    return rows


# ------------------------------------------------------------ training path

@lru_cache(maxsize=None)
def _blur_matrix(h, w, kernel_size, sigma):
    """Exact linear operator of gaussian_blur on an (h,w) field."""
    basis = np.eye(h * w).reshape(h * w, h, w, 1)
    cols = np.stack(
        [gaussian_blur(b, kernel_size, sigma)[:, :, 0].ravel() for b in basis], axis=1
    )
    return cols


@lru_cache(maxsize=None)
def _resize_roundtrip_matrix(h, w, fh, fw):
    """Down/up (or up/down) resize by factors (fh, fw) and back, flattened."""
    th = max(1, int(round(h * fh)))
    tw = max(1, int(round(w * fw)))
    a_to = np.kron(resize_matrix(h, th), resize_matrix(w, tw))
    a_back = np.kron(resize_matrix(th, h), resize_matrix(tw, w))
    return a_back @ a_to


def train_transform(spec: CorruptionSpec, x: "ad.Var", grid: GridSpec, rng):
    """Differentiable corruption of a (N,u,v,C) block batch.

    Linear corruptions use their exact operator; quantization-style ones use
    a straight-through gradient.  Applied after the basic patches are added.
    """
    u, v, c = grid.block_shape
    if spec.kind == "identity":
        return x
    if spec.kind == "gaussian_noise":
        noise = rng.normal(0.0, spec.sigma, size=x.value.shape)
        return ad.clip01(ad.add_const(x, noise))
    if spec.kind == "low_pass":
        a = _blur_matrix(u, v, spec.kernel_size, float(spec.blur_sigma))
        return ad.spatial_linear(x, a, (u, v))
    if spec.kind == "grayscale":
        if c == 1:
            return x
        m = np.tile(LUMA, (c, 1))
        return ad.channel_linear(x, m)
    if spec.kind == "resize":
        fh = spec.target[0] / grid.image_height
        fw = spec.target[1] / grid.image_width
        a = _resize_roundtrip_matrix(u, v, fh, fw)
        return ad.spatial_linear(x, a, (u, v))
    if spec.kind == "jpeg_like":
        q = spec.quality

        def _fn(blocks):
            out = np.empty_like(blocks)
            for i in range(blocks.shape[0]):
                out[i] = _jpeg_block(blocks[i], q)
            return out

        return ad.straight_through(x, _fn)
    raise ValueError(f"corruption {spec.kind!r} is not supported in the training loop")


def _jpeg_block(block, quality):
    """JPEG-quantize a single small block by mirror-padding it to 8x8."""
    u, v, c = block.shape
    ph, pw = max(0, 8 - u), max(0, 8 - v)
    padded = np.pad(block, ((0, ph), (0, pw), (0, 0)), mode="symmetric")
    return jpeg_like(padded, quality)[:u, :v]
