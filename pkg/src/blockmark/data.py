"""Procedural image sets: a natural-ish desk dataset for watermark training
and a small colored-shapes set for the diffusion experiments.

Everything is generated from a seed so the repo needs no downloads.
"""

import numpy as np


def _bilinear_upsample(img, out_h, out_w):
    """Half-pixel-center bilinear resize of an (h,w,c) array."""
    h, w, c = img.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def _soft_shape_mask(size, rng):
    """A filled ellipse or rectangle with slightly soft edges."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(size * 0.2, size * 0.8, size=2)
    if rng.random() < 0.5:
        ry = rng.uniform(size * 0.1, size * 0.4)
        rx = rng.uniform(size * 0.1, size * 0.4)
        d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        mask = np.clip(1.5 - d, 0.0, 1.0)
    else:
        hy = rng.uniform(size * 0.1, size * 0.35)
        hx = rng.uniform(size * 0.1, size * 0.35)
        d = np.maximum(np.abs(yy - cy) / hy, np.abs(xx - cx) / hx)
        mask = np.clip(1.5 - d, 0.0, 1.0)
    return np.minimum(mask, 1.0)


def desk_dataset(count, size=32, seed=0, channels=3):
    """Natural-ish smooth images: low-frequency color fields, a few soft
    shapes, mild texture noise.  Returns (count, size, size, channels) in [0,1]."""
    rng = np.random.default_rng(seed)
    images = np.empty((count, size, size, channels))
    for i in range(count):
        coarse = rng.uniform(0.1, 0.9, size=(4, 4, channels))
        img = _bilinear_upsample(coarse, size, size)
        for _ in range(rng.integers(1, 4)):
            mask = _soft_shape_mask(size, rng)[:, :, None]
            color = rng.uniform(0.05, 0.95, size=channels)
            alpha = rng.uniform(0.4, 0.9)
            img = img * (1 - alpha * mask) + color * alpha * mask
        img += rng.normal(0.0, rng.uniform(0.002, 0.01), size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return images


def toy_shapes(count, size=16, seed=0, protected=True):
    """Tiny shape images for the diffusion experiments.

    The protected family is warm-colored filled discs on dark smooth
    backgrounds; the unprotected family is cool-colored hollow squares on
    light backgrounds.
    """
    rng = np.random.default_rng(seed)
    images = np.empty((count, size, size, 3))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for i in range(count):
        if protected:
            bg = rng.uniform(0.08, 0.25, size=3)
            color = np.array([
                rng.uniform(0.7, 0.95),
                rng.uniform(0.35, 0.6),
                rng.uniform(0.1, 0.3),
            ])
            cy, cx = rng.uniform(size * 0.35, size * 0.65, size=2)
            r = rng.uniform(size * 0.2, size * 0.32)
            d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
            mask = np.clip(r + 0.5 - d, 0.0, 1.0)
        else:
            bg = rng.uniform(0.65, 0.85, size=3)
            color = np.array([
                rng.uniform(0.1, 0.3),
                rng.uniform(0.35, 0.6),
                rng.uniform(0.7, 0.95),
            ])
            cy, cx = rng.uniform(size * 0.35, size * 0.65, size=2)
            half = rng.uniform(size * 0.18, size * 0.3)
            d = np.maximum(np.abs(yy - cy), np.abs(xx - cx))
            mask = np.clip(half + 0.5 - d, 0.0, 1.0) - np.clip(half - 1.5 - d, 0.0, 1.0)
            mask = np.clip(mask, 0.0, 1.0)
        grad = _bilinear_upsample(rng.uniform(-0.06, 0.06, size=(2, 2, 3)), size, size)
        img = bg[None, None, :] + grad + mask[:, :, None] * (color - bg)[None, None, :]
        img += rng.normal(0.0, 0.01, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return images
