"""Losses, gradient checking, the Adam optimizer and the two training loops."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..bridge import BridgeSample, sample_xt
from ..corpus import render_record
from ..errors import ConfigError, DivergenceError, ShapeError
from ..seeding import make_rng
from ..spectral import SpectralParams, compress_values, crop_frames, stft
from .nets import (
    MaskNet,
    ScoreNet,
    mask_apply,
    mask_backward,
    oracle_gain,
    score_apply,
    score_backward,
)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    steps: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    crop_frames: int = 256
    hidden: int = 16
    use_xT: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1 or self.crop_frames < 1:
            raise ConfigError("batch_size and crop_frames must be >= 1")


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------


@dataclass
class SpectralPair:
    id: str
    clean: np.ndarray  # compressed complex (bins, frames)
    noisy: np.ndarray
    mask: np.ndarray  # oracle gain from uncompressed magnitudes


def make_pair(rid, clean_clip, noisy_clip, params: SpectralParams):
    S, X = stft(clean_clip, params).values, stft(noisy_clip, params).values
    return SpectralPair(
        rid,
        compress_values(S, params),
        compress_values(X, params),
        oracle_gain(np.abs(S), np.abs(X)),
    )


def pairs_from_manifest(manifest, split, params: SpectralParams, loader=None):
    """Spectral pairs for ``split``; ``loader(record)`` may supply (clean, noisy) clips."""
    out = []
    for rec in manifest.split(split):
        if loader is None:
            clean, _, noisy = render_record(rec, manifest.clip_duration_s)
        else:
            clean, noisy = loader(rec)
        out.append(make_pair(rec.id, clean, noisy, params))
    if not out:
        raise ConfigError(f"manifest has no {split!r} records")
    return out


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


class ScoreItem(NamedTuple):
    sample: BridgeSample
    xT: np.ndarray
    mask: np.ndarray | None = None


def _stack_batch(batch):
    if not batch:
        raise ShapeError("empty batch")
    x_t = np.stack([it.sample.x_t for it in batch])
    target = np.stack([it.sample.target for it in batch])
    xT = np.stack([it.xT for it in batch])
    t_idx = np.array([it.sample.t_index for it in batch])
    if all(it.mask is None for it in batch):
        mask = None
    else:
        mask = np.stack([np.zeros(x_t.shape[1:]) if it.mask is None else it.mask for it in batch])
    return x_t, t_idx, xT, mask, target


def score_loss_and_grad(net: ScoreNet, batch):
    """Mean squared modulus of (prediction - target) and its exact gradient."""
    x_t, t_idx, xT, mask, target = _stack_batch(batch)
    s, cache = score_apply(net, x_t, t_idx, xT, mask)
    r = s - target
    loss = float(np.mean(r.real**2 + r.imag**2))
    if not np.isfinite(loss):
        raise DivergenceError("score loss is not finite")
    grad = score_backward(net, cache, 2.0 * r / r.size)
    return loss, grad


def mask_loss_and_grad(net: MaskNet, noisy, target):
    m, cache = mask_apply(net, noisy)
    target = np.asarray(target).reshape(m.shape)
    r = m - target
    loss = float(np.mean(r**2))
    if not np.isfinite(loss):
        raise DivergenceError("mask loss is not finite")
    return loss, mask_backward(net, cache, 2.0 * r / r.size)


def net_loss_and_grad(net, probe, params=None):
    """Dispatch to the right loss for ``net`` evaluated at ``params``."""
    if params is not None:
        net = net.with_params(params)
    kind = getattr(net, "kind", None)
    if kind == "score":
        return score_loss_and_grad(net, probe)
    if kind == "mask":
        return mask_loss_and_grad(net, *probe)
    return net.loss_and_grad(probe)


# --------------------------------------------------------------------------
# Gradient check
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param_index: int
    n_checked: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance


def grad_check(net, probe_input, h=1e-5, tolerance=1e-5, max_params=None, seed=0, floor_rel=1e-3):
    """Compare the analytic gradient with central differences.

    Every parameter is probed unless ``max_params`` is set, in which case a
    seeded random subset of that size (at least 200) is used.  The error
    denominator is floored at ``floor_rel * max|grad|``: components far
    below the gradient scale are dominated by finite-difference roundoff.
    """
    if not h > 0:
        raise ConfigError("finite-difference step h must be positive")
    theta = np.array(net.params, dtype=np.float64)
    _, grad = net_loss_and_grad(net, probe_input, theta)
    idx = np.arange(theta.size)
    if max_params is not None and theta.size > max_params:
        k = max(int(max_params), 200)
        idx = np.sort(make_rng(seed, "gradcheck").choice(theta.size, size=min(k, theta.size), replace=False))

    floor = max(floor_rel * float(np.max(np.abs(grad))), 1e-300)
    worst, worst_i = 0.0, int(idx[0])
    for i in idx:
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        lp, _ = net_loss_and_grad(net, probe_input, tp)
        lm, _ = net_loss_and_grad(net, probe_input, tm)
        num = (lp - lm) / (2 * h)
        err = abs(num - grad[i]) / max(abs(num), abs(grad[i]), floor)
        if err > worst:
            worst, worst_i = err, int(i)
    return GradCheckReport(worst, worst_i, int(idx.size), tolerance)


# --------------------------------------------------------------------------
# Optimizer
# --------------------------------------------------------------------------


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainState:
    net: object
    optimizer: Adam
    step: int = 0
    losses: list = field(default_factory=list)


def _fresh_state(net, config: TrainConfig):
    return TrainState(net, Adam(config.learning_rate, config.beta1, config.beta2, config.eps))


def _crop(item: SpectralPair, frames, rng):
    T = item.clean.shape[1]
    start = int(rng.integers(0, max(T - frames, 0) + 1))
    return (
        crop_frames(item.clean, frames, start),
        crop_frames(item.noisy, frames, start),
        crop_frames(item.mask, frames, start),
    )


def _run(state: TrainState, config: TrainConfig, step_fn, on_step):
    while state.step < config.steps:
        rng = make_rng(config.seed, "train-step", state.step)
        loss, grad = step_fn(state.net, rng)
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient at step {state.step}", step=state.step)
        state.net = state.net.with_params(state.optimizer.step(state.net.params, grad))
        state.losses.append(loss)
        state.step += 1
        if on_step is not None:
            on_step(state)
    return state


# --------------------------------------------------------------------------
# Training loops
# --------------------------------------------------------------------------


def score_batch(dataset, schedule, config: TrainConfig, use_mask, rng):
    batch = []
    for _ in range(config.batch_size):
        item = dataset[int(rng.integers(len(dataset)))]
        x0, xT, mask = _crop(item, config.crop_frames, rng)
        t_idx = int(rng.integers(0, schedule.N + 1))
        sample = sample_xt(x0, xT, schedule.t_grid[t_idx], schedule, rng)
        batch.append(ScoreItem(sample, xT, mask if use_mask else None))
    return batch


def train_score(dataset, schedule, config: TrainConfig, use_mask=False, resume: TrainState = None, on_step=None):
    """Fit a ScoreNet with the bridge score-matching loss.

    Each step draws its own generator from ``(seed, step)``, so a resumed
    run follows the same trajectory as an uninterrupted one.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    if resume is None:
        net = ScoreNet.initialized(
            make_rng(config.seed, "init", "score"),
            hidden=config.hidden,
            use_xT=config.use_xT,
            N=schedule.N,
            t_min=schedule.t_min,
        )
        resume = _fresh_state(net, config)

    def step_fn(net, rng):
        try:
            return score_loss_and_grad(net, score_batch(dataset, schedule, config, use_mask, rng))
        except DivergenceError as exc:
            raise DivergenceError(f"{exc} at step {resume.step}", step=resume.step) from exc

    return _run(resume, config, step_fn, on_step)


def train_mask(dataset, config: TrainConfig, resume: TrainState = None, on_step=None):
    """Fit a MaskNet to oracle gains with an MSE loss."""
    if not dataset:
        raise ConfigError("training dataset is empty")
    if resume is None:
        net = MaskNet.initialized(make_rng(config.seed, "init", "mask"), hidden=config.hidden)
        resume = _fresh_state(net, config)

    def step_fn(net, rng):
        noisy, target = [], []
        for _ in range(config.batch_size):
            item = dataset[int(rng.integers(len(dataset)))]
            _, xT, mask = _crop(item, config.crop_frames, rng)
            noisy.append(xT)
            target.append(mask)
        try:
            return mask_loss_and_grad(net, np.stack(noisy), np.stack(target))
        except DivergenceError as exc:
            raise DivergenceError(f"{exc} at step {resume.step}", step=resume.step) from exc

    return _run(resume, config, step_fn, on_step)
