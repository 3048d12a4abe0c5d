"""Full-image watermarks assembled from a patch alphabet, embedding with
budget enforcement, and the uniformity / budget measurements."""

from dataclasses import dataclass, field

import numpy as np

from .codec import CapacityError, GridSpec, MessageDigits, encode_message

_EPS_SLACK = 1e-12  # tolerance for l-inf invariant checks


@dataclass
class PatchAlphabet:
    """The B basic patches (patch 0 is pinned to zero) plus block geometry
    and the l-inf budget epsilon on [0,1] pixel scale."""

    base: int
    patches: np.ndarray  # (B, u, v, C)
    epsilon: float
    version: str = "1"

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 4 or self.patches.shape[0] != self.base:
            raise ValueError(
                f"patches must have shape (B,u,v,C) with B={self.base},"
                f" got {self.patches.shape}"
            )
        if np.any(self.patches[0] != 0.0):
            raise ValueError("patch 0 must be exactly zero (the unwatermarked class)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if np.abs(self.patches).max() > self.epsilon + _EPS_SLACK:
            raise ValueError(
                f"patch magnitude {np.abs(self.patches).max():.6g} exceeds"
                f" epsilon {self.epsilon:.6g}"
            )

    @property
    def block_shape(self):
        return tuple(self.patches.shape[1:])


@dataclass
class UniformityReport:
    z: float
    n: int
    used_effective_watermarks: bool
    n_skipped_zero: int = 0


def init_alphabet(base, block_shape, epsilon, rng) -> PatchAlphabet:
    """Zero patch for class 0; classes 1..B-1 start at random sign corners of
    the budget ball (full +-eps), which breaks the gradient symmetry between
    classes and gives the decoder a detectable signal from the first step."""
    u, v, c = block_shape
    patches = np.zeros((base, u, v, c), dtype=np.float64)
    patches[1:] = epsilon * np.sign(rng.uniform(-1.0, 1.0, size=(base - 1, u, v, c)))
    return PatchAlphabet(base, patches, epsilon)


def blocks_of(image: np.ndarray, grid: GridSpec) -> np.ndarray:
    """View of an image as its (m, u, v, C) block sequence, row-major."""
    if image.shape != grid.image_shape:
        raise ValueError(f"image shape {image.shape} vs grid {grid.image_shape}")
    u, v = grid.block_height, grid.block_width
    r, c = grid.rows, grid.cols
    return (
        image.reshape(r, u, c, v, grid.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(r * c, u, v, grid.channels)
    )


def assemble_watermark(alphabet: PatchAlphabet, digits: MessageDigits, grid: GridSpec) -> np.ndarray:
    """Tile basic patches over the grid in row-major digit order."""
    if len(digits) != grid.capacity:
        raise ValueError(
            f"digit count {len(digits)} vs grid capacity {grid.capacity}"
        )
    if alphabet.block_shape != grid.block_shape:
        raise ValueError(
            f"alphabet block shape {alphabet.block_shape} vs grid {grid.block_shape}"
        )
    if alphabet.base != digits.base:
        raise ValueError(f"alphabet base {alphabet.base} vs digits base {digits.base}")
    tiles = alphabet.patches[digits.digits]  # (m, u, v, C)
    r, c = grid.rows, grid.cols
    u, v = grid.block_height, grid.block_width
    return (
        tiles.reshape(r, c, u, v, grid.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid.image_shape)
    )


def embed(image: np.ndarray, watermark: np.ndarray) -> np.ndarray:
    """X + W, clipped back to the valid pixel range."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != watermark.shape:
        raise ValueError(f"image shape {image.shape} vs watermark {watermark.shape}")
    return np.clip(image + watermark, 0.0, 1.0)


def embed_many(images: np.ndarray, watermark: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.shape[1:] != watermark.shape:
        raise ValueError(f"images shape {images.shape} vs watermark {watermark.shape}")
    return np.clip(images + watermark[None], 0.0, 1.0)


def measure_budget(original: np.ndarray, watermarked: np.ndarray) -> dict:
    """l-inf and l2 of the pixel difference, on [0,1] scale."""
    if original.shape != watermarked.shape:
        raise ValueError(f"shapes {original.shape} vs {watermarked.shape}")
    delta = np.asarray(watermarked, dtype=np.float64) - np.asarray(original, dtype=np.float64)
    return {
        "linf": float(np.abs(delta).max()) if delta.size else 0.0,
        "l2": float(np.sqrt((delta * delta).sum())),
    }


def effective_watermarks(images: np.ndarray, watermark: np.ndarray) -> np.ndarray:
    """clip(X+W) - X per image: what actually lands in the released pixels."""
    return embed_many(images, watermark) - np.asarray(images, dtype=np.float64)


def pattern_uniformity(watermarks, used_effective_watermarks=True) -> UniformityReport:
    """Z = 1 - mean_i || W_i/||W_i|| - W_mean ||, the normalized-spread score.

    Zero-norm entries are skipped (counted in the report); at least two
    usable watermarks are required.
    """
    ws = np.asarray(watermarks, dtype=np.float64)
    if ws.ndim < 2:
        raise ValueError("expected a stack of watermark tensors")
    flat = ws.reshape(ws.shape[0], -1)
    norms = np.sqrt((flat * flat).sum(axis=1))
    usable = norms > 0
    n_skipped = int((~usable).sum())
    flat = flat[usable]
    norms = norms[usable]
    if flat.shape[0] == 0:
        raise ValueError("all watermarks have zero norm")
    if flat.shape[0] < 2:
        raise ValueError("need at least two nonzero watermarks")
    unit = flat / norms[:, None]
    mean = unit.mean(axis=0)
    spread = np.sqrt(((unit - mean) ** 2).sum(axis=1)).mean()
    return UniformityReport(
        z=float(1.0 - spread),
        n=int(flat.shape[0]),
        used_effective_watermarks=used_effective_watermarks,
        n_skipped_zero=n_skipped,
    )


def multi_owner_protect(alphabet: PatchAlphabet, grid: GridSpec, owners):
    """Reuse one trained alphabet for many owners.

    `owners` is a sequence of (owner_id, images, payload).  Returns
    (results, errors): results maps owner_id -> dict with digits, watermark
    and the embedded image stack; owners whose payload overflows capacity
    land in errors instead of aborting the rest.
    """
    results = {}
    errors = {}
    for owner_id, images, payload in owners:
        try:
            digits = encode_message(payload, alphabet.base, grid)
        except CapacityError as exc:
            errors[owner_id] = str(exc)
            continue
        wm = assemble_watermark(alphabet, digits, grid)
        results[owner_id] = {
            "digits": digits,
            "watermark": wm,
            "images": embed_many(images, wm),
        }
    return results, errors
