"""Bridge posterior between clean (t=0) and noisy (t=1) spectrograms.

With zero drift the bridge marginal given both endpoints is Gaussian:

    mu_t  = (sbar2 * x0 + s2 * xT) / (s2 + sbar2)
    var_t = s2 * sbar2 / (s2 + sbar2)

where ``s2 = sigma2(t)`` and ``sbar2 = sigma2_bar(t)``.  The reverse sampler
walks a coarse subset of the training grid, reconstructing ``x0`` from the
score estimate and drawing the next state from the DDPM posterior
``p(x_n | x0, x_{n+1})``.  Complex noise is circular with unit total
variance per entry (variance 1/2 in each of the real and imaginary parts).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ShapeError, SingularityError
from .schedule import InferenceGrid, NoiseSchedule
from .seeding import complex_normal

# testing hook: names of deliberately broken formulas, see injected_fault()
_FAULTS: set = set()


@contextlib.contextmanager
def injected_fault(name):
    """Temporarily corrupt a formula (``"posterior_sign"``) for mutation checks."""
    _FAULTS.add(name)
    try:
        yield
    finally:
        _FAULTS.discard(name)


@dataclass
class PosteriorParams:
    mu: np.ndarray
    var: float


@dataclass
class BridgeSample:
    x_t: np.ndarray
    t_index: int
    t: float
    sigma_t: float
    target: np.ndarray


def _same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what}: shapes {np.shape(a)} and {np.shape(b)} differ")


def posterior_weights(s2, s2_bar):
    """(weight on x0, weight on xT, variance) of the bridge marginal."""
    total = s2 + s2_bar
    w0, wT = s2_bar / total, s2 / total
    if "posterior_sign" in _FAULTS:
        w0 = -w0
    return w0, wT, s2 * s2_bar / total


def posterior_params(x0, xT, t, schedule: NoiseSchedule) -> PosteriorParams:
    _same_shape(x0, xT, "posterior_params")
    w0, wT, var = posterior_weights(*schedule.sigma_at(t))
    return PosteriorParams(w0 * np.asarray(x0) + wT * np.asarray(xT), var)


def nearest_index(schedule: NoiseSchedule, t):
    return int(np.abs(schedule.t_grid - t).argmin())


def sample_xt(x0, xT, t, schedule: NoiseSchedule, rng) -> BridgeSample:
    """Draw ``x_t ~ q(x_t | x0, xT)`` and attach the score-matching target."""
    post = posterior_params(x0, xT, t, schedule)
    x_t = post.mu
    if post.var > 0:
        x_t = x_t + np.sqrt(post.var) * complex_normal(rng, np.shape(x0))
    sigma_t = float(np.sqrt(schedule.sigma_at(t)[0]))
    return BridgeSample(x_t, nearest_index(schedule, t), float(t), sigma_t, score_target(x_t, x0, sigma_t))


def score_target(x_t, x0, sigma_t):
    """Regression target ``(x_t - x0) / sigma_t``."""
    if not sigma_t > 0:
        raise SingularityError(f"score target is singular at sigma_t={sigma_t}")
    _same_shape(x_t, x0, "score_target")
    return (np.asarray(x_t) - np.asarray(x0)) / sigma_t


def reconstruct_x0(x_n, s, sigma_n):
    _same_shape(x_n, s, "reconstruct_x0")
    return np.asarray(x_n) - sigma_n * np.asarray(s)


def ddpm_moments(x0_hat, x_next, sigma2_n, alpha2_n):
    """Mean and variance of ``p(x_n | x0, x_{n+1})``."""
    denom = alpha2_n + sigma2_n
    if denom == 0:
        return np.asarray(x_next), 0.0
    mean = (alpha2_n * np.asarray(x0_hat) + sigma2_n * np.asarray(x_next)) / denom
    return mean, sigma2_n * alpha2_n / denom


def ddpm_step(x0_hat, x_next, n, grid: InferenceGrid, schedule: NoiseSchedule, rng):
    """Move from ``grid.indices[n]`` down to ``grid.indices[n + 1]``."""
    _same_shape(x0_hat, x_next, "ddpm_step")
    if not 0 <= n < grid.steps:
        raise IndexError(f"step {n} outside inference grid with {grid.steps} steps")
    sigma2_n = float(schedule.sigma2[grid.indices[n + 1]])
    mean, var = ddpm_moments(x0_hat, x_next, sigma2_n, float(grid.alpha2[n]))
    if var > 0:
        mean = mean + np.sqrt(var) * complex_normal(rng, np.shape(mean))
    return mean


def reverse_enhance(xT, score_fn, mask, schedule: NoiseSchedule, grid: InferenceGrid, rng, trace=None):
    """Run the reverse chain from ``xT``; returns the last ``x0`` estimate.

    ``score_fn(x, t_index, mask)`` is called once per step (NFE = steps).
    ``trace``, if given, receives ``(step, t_index, x_n, x0_hat)``.
    """
    x = np.asarray(xT, dtype=np.complex128)
    for n in range(grid.steps):
        idx = int(grid.indices[n])
        sigma_n = float(np.sqrt(schedule.sigma2[idx]))
        x0_hat = reconstruct_x0(x, score_fn(x, idx, mask), sigma_n)
        if not np.all(np.isfinite(x0_hat)):
            raise DivergenceError(f"non-finite x0 estimate at reverse step {n}", step=n)
        if trace is not None:
            trace(n, idx, x, x0_hat)
        if n == grid.steps - 1:
            return x0_hat
        x = ddpm_step(x0_hat, x, n, grid, schedule, rng)
    return x
