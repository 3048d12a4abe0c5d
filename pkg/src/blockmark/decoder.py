"""The patch classifier: a small residual conv net mapping a (u,v,C) block
to one of B patch classes.

Architecture: conv3x3(C->64) + ReLU, two residual blocks of
[conv3x3, ReLU, conv3x3, skip-add, ReLU] at 64 filters, global average
pooling, linear(64->B).  No batch norm: on 4x4 inputs with small batches it
is unstable, and the watermark signal is additive in pixel space, so blocks
are fed raw with no mean/std normalization either.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import backend
from .codec import GridSpec, MessageDigits
from .watermark import blocks_of

FILTERS = 64

_LAYERS = (
    # name, kind, (cin, cout)
    ("stem", "conv", (None, FILTERS)),
    ("res1a", "conv", (FILTERS, FILTERS)),
    ("res1b", "conv", (FILTERS, FILTERS)),
    ("res2a", "conv", (FILTERS, FILTERS)),
    ("res2b", "conv", (FILTERS, FILTERS)),
    ("head", "linear", (FILTERS, None)),
)


@dataclass
class DecoderModel:
    base: int
    block_shape: tuple
    params: dict  # name -> ad.Var
    seed: int

    @property
    def architecture(self):
        c = self.block_shape[2]
        return (
            f"conv3x3:{c}->{FILTERS} relu "
            f"resblock:{FILTERS} resblock:{FILTERS} "
            f"gap linear:{FILTERS}->{self.base}"
        )

    def param_items(self):
        return [(name, self.params[name]) for name in sorted(self.params)]

    def param_vars(self):
        return [v for _, v in self.param_items()]

    def param_count(self):
        return sum(v.value.size for v in self.params.values())


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_decoder(block_shape, base, seed) -> DecoderModel:
    """Deterministically initialized decoder for the given block geometry."""
    u, v, c = block_shape
    if u < 3 or v < 3:
        raise ValueError(f"block {u}x{v} is smaller than the 3x3 kernel")
    if base < 2:
        raise ValueError("base must be at least 2")
    rng = np.random.default_rng(seed)
    params = {}
    for name, kind, (cin, cout) in _LAYERS:
        if kind == "conv":
            cin = c if cin is None else cin
            params[f"{name}_w"] = ad.Var(_he_uniform(rng, (3, 3, cin, cout), 9 * cin))
            params[f"{name}_b"] = ad.Var(np.zeros(cout))
        else:
            cout = base if cout is None else cout
            params[f"{name}_w"] = ad.Var(_he_uniform(rng, (cin, cout), cin))
            params[f"{name}_b"] = ad.Var(np.zeros(cout))
    return DecoderModel(base=base, block_shape=tuple(block_shape), params=params, seed=seed)


def forward_logits(model: DecoderModel, blocks) -> ad.Var:
    """Differentiable forward pass; `blocks` is (N,u,v,C) array or Var."""
    x = ad.as_var(blocks)
    if x.value.ndim != 4 or x.value.shape[1:] != model.block_shape:
        raise ad.ShapeError(
            f"decoder: blocks shape {x.value.shape} vs expected (N,{model.block_shape})"
        )
    p = model.params
    h = ad.relu(ad.conv3x3(x, p["stem_w"], p["stem_b"]))
    for blk in ("res1", "res2"):
        inner = ad.relu(ad.conv3x3(h, p[f"{blk}a_w"], p[f"{blk}a_b"]))
        inner = ad.conv3x3(inner, p[f"{blk}b_w"], p[f"{blk}b_b"])
        h = ad.relu(ad.add(inner, h))
    pooled = ad.global_avg_pool(h)
    return ad.linear(pooled, p["head_w"], p["head_b"])


def infer_logits(model: DecoderModel, blocks: np.ndarray) -> np.ndarray:
    """Fast forward pass without recording a graph (audit/decode path)."""
    x = np.asarray(blocks, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != model.block_shape:
        raise ad.ShapeError(
            f"decoder: blocks shape {x.shape} vs expected (N,{model.block_shape})"
        )
    p = model.params
    h = np.maximum(backend.conv3x3_forward(x, p["stem_w"].value, p["stem_b"].value), 0.0)
    for blk in ("res1", "res2"):
        inner = np.maximum(
            backend.conv3x3_forward(h, p[f"{blk}a_w"].value, p[f"{blk}a_b"].value), 0.0
        )
        inner = backend.conv3x3_forward(inner, p[f"{blk}b_w"].value, p[f"{blk}b_b"].value)
        h = np.maximum(inner + h, 0.0)
    pooled = h.mean(axis=(1, 2))
    return pooled @ p["head_w"].value + p["head_b"].value


def classify(model: DecoderModel, block: np.ndarray):
    """Logits and predicted digit for one block; ties break to the smaller digit."""
    logits = infer_logits(model, np.asarray(block, dtype=np.float64)[None])[0]
    return logits, int(np.argmax(logits))


def classify_batch(model: DecoderModel, blocks: np.ndarray, chunk=4096) -> np.ndarray:
    """Predicted digits for a stack of blocks (np.argmax ties -> smaller index)."""
    blocks = np.asarray(blocks, dtype=np.float64)
    out = np.empty(blocks.shape[0], dtype=np.int64)
    for lo in range(0, blocks.shape[0], chunk):
        hi = min(lo + chunk, blocks.shape[0])
        out[lo:hi] = np.argmax(infer_logits(model, blocks[lo:hi]), axis=1)
    return out


def decode_image(model: DecoderModel, image: np.ndarray, grid: GridSpec) -> MessageDigits:
    """Classify every block of the image, row-major."""
    digits = classify_batch(model, blocks_of(np.asarray(image, dtype=np.float64), grid))
    return MessageDigits(digits, model.base)


def decode_images(model: DecoderModel, images, grid: GridSpec):
    """Batched decode of an image stack; one MessageDigits per image."""
    images = np.asarray(images, dtype=np.float64)
    m = grid.capacity
    all_blocks = np.concatenate([blocks_of(im, grid) for im in images], axis=0)
    digits = classify_batch(model, all_blocks)
    return [MessageDigits(digits[i * m:(i + 1) * m], model.base) for i in range(len(images))]
