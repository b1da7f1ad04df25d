"""Training: negative-PSNR loss, noise synthesis, Adam, and the greedy
stage-by-stage schedule followed by joint fine-tuning.

The loss for one pair is the negative peak signal-to-noise ratio

    loss(xhat, x) = -20 log10(p / ||xhat - x||),   p = 255 sqrt(N)

whose gradient is (20 / ln 10) (xhat - x) / ||xhat - x||^2.  Greedy
training optimizes stage t's parameters against the loss measured at that
stage's own output with every earlier stage frozen; joint training then
optimizes all stages against the final clipped output.  Noise levels are
drawn per image per epoch from a discrete grid and fresh noise is drawn
every epoch, all from one seeded generator, so a rerun with the same
config reproduces the run bit for bit.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadArgument, DegenerateLoss, NonFiniteLoss, ShapeMismatch
from .network import (
    Architecture,
    NetworkParams,
    composite_backward,
    composite_forward,
    init_network,
    match_table,
    network_backward,
    network_forward,
    parameters,
)

__all__ = [
    "TrainConfig",
    "psnr",
    "psnr_loss",
    "awgn",
    "Adam",
    "default_learning_rate",
    "greedy_train",
    "joint_train",
    "train_full",
    "LOW_NOISE_GRID",
    "HIGH_NOISE_GRID",
]

LOW_NOISE_GRID = (5.0, 9.0, 13.0, 17.0, 21.0, 25.0, 29.0)
HIGH_NOISE_GRID = (30.0, 34.0, 38.0, 42.0, 46.0, 50.0, 54.0)

_PSNR_SCALE = 20.0 / math.log(10.0)


def psnr(a, b, peak=255.0):
    """Peak signal-to-noise ratio in dB over all samples of two arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch("cannot compare arrays of different shapes")
    err = float(np.linalg.norm(a - b))
    if err == 0.0:
        raise DegenerateLoss("exact match has infinite PSNR")
    return 20.0 * math.log10(peak * math.sqrt(a.size) / err)


def psnr_loss(xhat, x):
    """Negative PSNR and its gradient in xhat."""
    xhat = np.asarray(xhat)
    x = np.asarray(x)
    if xhat.shape != x.shape:
        raise ShapeMismatch("estimate and target shapes differ")
    e = xhat - x
    sq = float(np.vdot(e, e))
    if sq == 0.0:
        raise DegenerateLoss("exact reconstruction makes the loss singular")
    loss = -psnr(xhat, x)
    grad = (_PSNR_SCALE / sq) * e
    return loss, grad.astype(xhat.dtype, copy=False)


def awgn(x, sigma, rng):
    """Add white Gaussian noise of standard deviation sigma (intensity units).

    The result stays floating point; no quantization or clipping is applied.
    """
    x = np.asarray(x)
    if sigma < 0:
        raise BadArgument("sigma must be nonnegative")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    noise = rng.standard_normal(x.shape)
    return (x + sigma * noise).astype(x.dtype, copy=False)


class Adam:
    """Adam over a dict of parameter arrays, updated in place.

    Standard bias-corrected form; the step for each entry is

        p -= lr * mhat / (sqrt(vhat) + eps)
    """

    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-4):
        if not lr > 0:
            raise BadArgument("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def default_learning_rate(channels):
    # color models tolerate (and need) the larger rate
    return 1e-2 if channels == 3 else 1e-3


@dataclass
class TrainConfig:
    """Hyperparameters shared by both training phases.

    epochs apply per phase: each greedy stage runs `epochs` epochs, and the
    joint phase runs `epochs` more.  lr=None picks the per-channel default.
    lr_decay multiplies the learning rate once per epoch.
    """

    epochs: int = 100
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-4
    batch_size: int = 4
    noise_grid: tuple = LOW_NOISE_GRID
    seed: int = 0
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise BadArgument("bad epoch or batch count")
        if len(self.noise_grid) == 0 or min(self.noise_grid) <= 0:
            raise BadArgument("noise grid must be nonempty and positive")

    def resolve_lr(self, channels):
        return default_learning_rate(channels) if self.lr is None else self.lr


def _check_images(images, arch):
    if len(images) == 0:
        raise BadArgument("training set is empty")
    for im in images:
        im = np.asarray(im)
        if im.ndim != 3 or im.shape[2] != arch.channels:
            raise ShapeMismatch("training image does not match the architecture")


def _epoch_pairs(images, grid, rng):
    # fresh noise level and fresh noise per image per epoch
    pairs = []
    for x in images:
        sigma = float(grid[rng.integers(len(grid))])
        pairs.append((x, awgn(x, sigma, rng), sigma))
    return pairs


def _check_finite(loss):
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"training aborted on loss {loss!r}")


def _stage_params(params, t):
    prefix = f"layer{t}."
    return {k: v for k, v in parameters(params).items() if k.startswith(prefix)}


def greedy_train(images, arch: Architecture, config: TrainConfig) -> NetworkParams:
    """Stage-by-stage training; returns the stacked parameters.

    Stage t minimizes the loss of stage t's own output summed over each
    minibatch, holding stages < t fixed at their already-trained values.
    """
    _check_images(images, arch)
    params = init_network(arch, seed=config.seed)
    lr = config.resolve_lr(arch.channels)
    for t in range(arch.stages):
        layer = params.layers[t]
        stage = _stage_params(params, t)
        opt = Adam(stage, lr, config.beta1, config.beta2, config.adam_eps)
        rng = np.random.default_rng([config.seed, 1, t])
        for epoch in range(config.epochs):
            pairs = _epoch_pairs(images, config.noise_grid, rng)
            order = rng.permutation(len(pairs))
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                grads = {k: np.zeros_like(v) for k, v in stage.items()}
                for q in batch:
                    x, y, sigma = pairs[q]
                    table = match_table(y, arch) if arch.variant == "nonlocal" else None
                    xc = y
                    for frozen in params.layers[:t]:
                        xc, _ = composite_forward(xc, y, sigma, frozen, arch, table=table)
                    xt, tape = composite_forward(
                        xc, y, sigma, layer, arch, table=table, want_tape=True
                    )
                    loss, grad_out = psnr_loss(xt, x)
                    _check_finite(loss)
                    layer_grads, _ = composite_backward(layer, arch, tape, y, table, grad_out)
                    for name, g in layer_grads.items():
                        grads[f"layer{t}.{name}"] += g
                opt.step(stage, grads)
            opt.lr *= config.lr_decay
    return params


def joint_train(params: NetworkParams, images, config: TrainConfig):
    """Fine-tune all stages against the final output.

    Returns the trained parameters and the per-epoch total loss log.
    """
    _check_images(images, params.arch)
    arch = params.arch
    all_params = parameters(params)
    opt = Adam(all_params, config.resolve_lr(arch.channels), config.beta1, config.beta2,
               config.adam_eps)
    rng = np.random.default_rng([config.seed, 2])
    log = []
    for epoch in range(config.epochs):
        pairs = _epoch_pairs(images, config.noise_grid, rng)
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grads = {k: np.zeros_like(v) for k, v in all_params.items()}
            for q in batch:
                x, y, sigma = pairs[q]
                out, tape = network_forward(y, sigma, params, want_tape=True)
                loss, grad_out = psnr_loss(out, x)
                _check_finite(loss)
                total += loss
                for name, g in network_backward(params, tape, grad_out).items():
                    grads[name] += g
            opt.step(all_params, grads)
        opt.lr *= config.lr_decay
        log.append(total)
    return params, log


def train_full(images, arch: Architecture, config: TrainConfig):
    """Greedy phase then joint phase; returns (params, joint loss log)."""
    params = greedy_train(images, arch, config)
    return joint_train(params, images, config)
