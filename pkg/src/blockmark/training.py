"""Bi-level alternating optimization of the patch alphabet and decoder.

Per batch: crop random blocks, assign digits by a balanced random
permutation, add the corresponding patches (optionally corrupting the
result), take one momentum-SGD step on the decoder, then five signed
projected-gradient steps on patches 2..B through the updated decoder.
Patch 1 stays pinned to zero throughout.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import backend
from .codec import GridSpec, MessageDigits, bit_accuracy
from .corruptions import CorruptionSpec, train_transform
from .decoder import DecoderModel, build_decoder, classify_batch, decode_images, forward_logits
from .optim import MomentumSGD, pgd_step
from .watermark import (
    PatchAlphabet,
    assemble_watermark,
    effective_watermarks,
    embed_many,
    init_alphabet,
    measure_budget,
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epsilon: float
    epochs: int = 50
    batch_size: int = 128
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    pgd_steps: int = 5
    pgd_step_size: float = None  # defaults to epsilon/10
    base: int = 4
    block_shape: tuple = (4, 4, 3)
    seed: int = 0
    corruptions: tuple = ()  # CorruptionSpec list for in-the-loop training
    heldout_fraction: float = 0.1
    heldout_crops: int = 256
    reference_mode: bool = False
    # optional single-step lr decay (fraction of epochs, multiplier); the
    # default leaves the learning rate constant for the whole run
    lr_decay_at: float = 1.0
    lr_decay_factor: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive (no signal to learn at 0)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < self.base:
            raise ValueError("batch size must be at least the base B")
        if self.pgd_step_size is None:
            self.pgd_step_size = self.epsilon / 10.0
        if self.pgd_step_size <= 0:
            raise ValueError("pgd step size must be positive")
        self.corruptions = tuple(self.corruptions or ())


@dataclass
class TrainReport:
    seed: int
    epochs: int
    steps: int
    train_accuracy: list = field(default_factory=list)    # per-epoch patch accuracy
    heldout_accuracy: list = field(default_factory=list)  # per epoch
    released_bit_accuracy: float = None
    budget: dict = None
    wall_clock_seconds: float = 0.0
    backend: str = ""
    config: dict = None


def random_crop_blocks(images, count, block_shape, rng):
    """Uniform-random image + pixel-offset crops (not grid aligned)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("need a nonempty (n,H,W,C) image stack")
    u, v, c = block_shape
    n, h, w, ch = images.shape
    if h < u or w < v or ch != c:
        raise ValueError(f"images {images.shape[1:]} cannot host {block_shape} blocks")
    idx = rng.integers(0, n, size=count)
    tops = rng.integers(0, h - u + 1, size=count)
    lefts = rng.integers(0, w - v + 1, size=count)
    out = np.empty((count, u, v, c))
    for i in range(count):
        out[i] = images[idx[i], tops[i]:tops[i] + u, lefts[i]:lefts[i] + v]
    return out


def _balanced_labels(batch_size, base, rng):
    """Each class appears floor(bs/B) or ceil(bs/B) times, in random order."""
    return rng.permutation(np.arange(batch_size) % base)


def _patch_gather(patches_var, labels):
    """Row-gather with summed-scatter gradient: tile k for every label k."""
    out = ad.Var(patches_var.value[labels], (patches_var,))

    def bwd(g):
        dp = np.zeros_like(patches_var.value)
        np.add.at(dp, labels, g)
        patches_var._accumulate(dp)

    out._bwd = bwd
    return out


def _watermarked_batch(blocks, labels, patches_var, corruption, grid, rng):
    """Build the decoder input graph: blocks + patch(label), then corruption."""
    x = ad.add(ad.Var(blocks), _patch_gather(patches_var, labels))
    if corruption is not None:
        x = train_transform(corruption, x, grid, rng)
    return x


def _patch_accuracy(model, images, patches, rng, crops):
    """Fraction of (crop + patch_k) blocks classified as k, over all classes."""
    blocks = random_crop_blocks(images, crops, patches.shape[1:], rng)
    total = 0
    for k in range(patches.shape[0]):
        pred = classify_batch(model, blocks + patches[k])
        total += int((pred == k).sum())
    return total / (crops * patches.shape[0])


def train(images, config: TrainConfig):
    """Joint optimization; returns (PatchAlphabet, DecoderModel, TrainReport)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("need a nonempty (n,H,W,C) image stack")
    t0 = time.perf_counter()
    prev_backend = None
    if config.reference_mode:
        prev_backend = backend.active_backend()
        backend.set_backend("numpy")
    try:
        return _train(images, config, t0)
    finally:
        if config.reference_mode:
            backend.set_backend(prev_backend if prev_backend != "numpy" else None)


def _train(images, config, t0):
    rng = np.random.default_rng(config.seed)
    grid = GridSpec(
        images.shape[1], images.shape[2],
        config.block_shape[0], config.block_shape[1], config.block_shape[2],
    )
    n_heldout = max(1, int(round(images.shape[0] * config.heldout_fraction)))
    n_heldout = min(n_heldout, images.shape[0] - 1) if images.shape[0] > 1 else 0
    train_pool = images[: images.shape[0] - n_heldout]
    heldout = images[images.shape[0] - n_heldout:] if n_heldout else train_pool

    alphabet = init_alphabet(config.base, config.block_shape, config.epsilon, rng)
    model = build_decoder(config.block_shape, config.base, seed=int(rng.integers(2**31)))
    patches_var = ad.Var(alphabet.patches)
    opt = MomentumSGD(
        model.param_vars(), lr=config.lr,
        momentum=config.momentum, weight_decay=config.weight_decay,
    )

    report = TrainReport(
        seed=config.seed, epochs=config.epochs, steps=0,
        backend=backend.active_backend(), config=_config_echo(config),
    )
    steps_per_epoch = max(1, train_pool.shape[0] // config.batch_size)
    corr_kinds = config.corruptions

    decay_epoch = int(round(config.lr_decay_at * config.epochs))
    for epoch in range(config.epochs):
        if epoch == decay_epoch and config.lr_decay_factor != 1.0:
            opt.lr *= config.lr_decay_factor
        epoch_hits = 0
        epoch_total = 0
        for step in range(steps_per_epoch):
            blocks = random_crop_blocks(train_pool, config.batch_size, config.block_shape, rng)
            labels = _balanced_labels(config.batch_size, config.base, rng)
            corruption = None
            if corr_kinds:
                corruption = corr_kinds[rng.integers(0, len(corr_kinds))]

            # upper level: one momentum-SGD step on the decoder
            opt.zero_grad()
            patches_var.grad = None
            x = _watermarked_batch(blocks, labels, patches_var, corruption, grid, rng)
            logits = forward_logits(model, x)
            loss = ad.softmax_cross_entropy(logits, labels)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(
                    f"loss diverged at epoch {epoch} batch {step}"
                )
            ad.backward(loss)
            opt.step(batch_index=step)
            epoch_hits += int((np.argmax(logits.value, axis=1) == labels).sum())
            epoch_total += labels.size

            # lower level: signed PGD on patches 2..B through the updated
            # decoder; weight grads are skipped (frozen) on these passes
            for v in opt.params:
                v.frozen = True
            for _ in range(config.pgd_steps):
                patches_var.grad = None
                x = _watermarked_batch(blocks, labels, patches_var, corruption, grid, rng)
                loss = ad.softmax_cross_entropy(forward_logits(model, x), labels)
                if not np.isfinite(loss.value):
                    raise TrainingDiverged(
                        f"loss diverged at epoch {epoch} batch {step} (pgd)"
                    )
                ad.backward(loss)
                grad = ad.grad_of(patches_var)
                updated = pgd_step(
                    patches_var.value[1:], grad[1:],
                    config.pgd_step_size, config.epsilon,
                )
                patches_var.value[1:] = updated
            for v in opt.params:
                v.frozen = False
            assert np.abs(patches_var.value).max() <= config.epsilon + 1e-12
            report.steps += 1

        report.train_accuracy.append(epoch_hits / max(1, epoch_total))
        report.heldout_accuracy.append(
            _patch_accuracy(model, heldout, patches_var.value, rng, config.heldout_crops)
        )

    alphabet = PatchAlphabet(
        config.base, patches_var.value.copy(), config.epsilon, version=alphabet.version
    )
    _finalize_report(report, images, alphabet, model, grid, config)
    report.wall_clock_seconds = time.perf_counter() - t0
    return alphabet, model, report


def train_with_corruptions(images, config: TrainConfig):
    """Alias of train(); the corruption list in the config drives the loop."""
    if not config.corruptions:
        raise ValueError("config.corruptions is empty")
    for spec in config.corruptions:
        if spec.kind not in ("identity", "gaussian_noise", "low_pass",
                             "grayscale", "jpeg_like", "resize"):
            raise ValueError(f"corruption {spec.kind!r} unsupported in the loop")
    return train(images, config)


def reference_digits(grid: GridSpec, base, seed):
    """Deterministic full-grid digit sequence used for released-set evaluation."""
    rng = np.random.default_rng(seed ^ 0x5EED)
    return MessageDigits(rng.integers(0, base, size=grid.capacity), base)


def _finalize_report(report, images, alphabet, model, grid, config):
    digits = reference_digits(grid, config.base, config.seed)
    wm = assemble_watermark(alphabet, digits, grid)
    released = embed_many(images, wm)
    decoded = decode_images(model, released, grid)
    report.released_bit_accuracy = float(
        np.mean([bit_accuracy(digits, d) for d in decoded])
    )
    budgets = [measure_budget(images[i], released[i]) for i in range(len(images))]
    report.budget = {
        "epsilon": config.epsilon,
        "linf_max": max(b["linf"] for b in budgets),
        "l2_mean": float(np.mean([b["l2"] for b in budgets])),
        "l2_max": max(b["l2"] for b in budgets),
    }


def _config_echo(config: TrainConfig):
    echo = {
        "epsilon": config.epsilon,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "lr": config.lr,
        "momentum": config.momentum,
        "weight_decay": config.weight_decay,
        "pgd_steps": config.pgd_steps,
        "pgd_step_size": config.pgd_step_size,
        "base": config.base,
        "block_shape": tuple(config.block_shape),
        "seed": config.seed,
        "heldout_fraction": config.heldout_fraction,
        "reference_mode": config.reference_mode,
        "corruptions": [s.label() for s in config.corruptions],
    }
    return echo
