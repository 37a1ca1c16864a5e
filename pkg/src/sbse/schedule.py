"""Symmetric noise schedule, cumulative variances and inference grids.

The training grid holds ``N + 1`` points on ``[t_min, 1]``.  Interior
points are spaced uniformly on ``[t_min, 1 - t_min]`` and the grid is
closed by ``t = 1``, so together with the implicit integration origin
``t = 0`` the node set is mirror-symmetric about ``t = 0.5``.  A symmetric
beta profile therefore integrates to exactly mirrored cumulative variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, GridTooCoarseError

DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.3
DEFAULT_N = 1000
DEFAULT_T_MIN = 1e-3


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    t_grid: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    sigma2_bar: np.ndarray
    sigma2_total: float

    @property
    def N(self):
        return self.t_grid.size - 1

    @property
    def t_min(self):
        return float(self.t_grid[0])

    @property
    def sigma(self):
        return np.sqrt(self.sigma2)

    @classmethod
    def from_beta(cls, t_grid, beta, beta_at_zero=None):
        """Integrate an arbitrary non-negative beta array by the trapezoid rule."""
        t_grid = np.asarray(t_grid, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        if t_grid.ndim != 1 or t_grid.shape != beta.shape or t_grid.size < 3:
            raise ConfigError("t_grid and beta must be 1-D arrays of equal length >= 3")
        if not (t_grid[0] > 0 and np.all(np.diff(t_grid) > 0)):
            raise ConfigError("t_grid must be strictly increasing and start above 0")
        if np.any(beta < 0):
            raise ConfigError("beta must be non-negative")
        b0 = beta[0] if beta_at_zero is None else float(beta_at_zero)

        nodes = np.concatenate([[0.0], t_grid])
        vals = np.concatenate([[b0], beta])
        cells = 0.5 * (vals[1:] + vals[:-1]) * np.diff(nodes)
        sigma2 = np.cumsum(cells)
        # integrate from the top so values near t=1 keep full precision
        sigma2_bar = np.concatenate([np.cumsum(cells[::-1])[::-1][1:], [0.0]])
        total = float(sigma2[-1])
        if not sigma2[0] > 0:
            raise ConfigError("sigma2 at t_min must be positive")
        for arr in (t_grid, beta, sigma2, sigma2_bar):
            arr.setflags(write=False)
        return cls(t_grid, beta, sigma2, sigma2_bar, total)

    def _check_t(self, t):
        if not (self.t_grid[0] - 1e-12 <= t <= 1.0 + 1e-12):
            raise DomainError(f"t={t} outside [{self.t_min}, 1]")

    def sigma_at(self, t):
        """(sigma2, sigma2_bar) at continuous ``t`` by linear interpolation."""
        self._check_t(t)
        s2 = float(np.interp(t, self.t_grid, self.sigma2))
        s2b = float(np.interp(t, self.t_grid, self.sigma2_bar))
        return s2, s2b

    def at_index(self, i):
        return float(self.sigma2[i]), float(self.sigma2_bar[i])

    def describe(self):
        """Plain-text table of the grid, one row per point."""
        rows = ["  i           t        beta      sigma2  sigma2_bar"]
        for i in range(self.t_grid.size):
            rows.append(
                f"{i:>4d} {self.t_grid[i]:11.6f} {self.beta[i]:11.6f} "
                f"{self.sigma2[i]:11.6e} {self.sigma2_bar[i]:11.6e}"
            )
        rows.append(f"sigma2_total = {self.sigma2_total:.12e}")
        return "\n".join(rows)


def symmetric_t_grid(N, t_min):
    return np.concatenate([np.linspace(t_min, 1.0 - t_min, N), [1.0]])


def triangular_beta(t, beta_min, beta_max):
    t = np.asarray(t, dtype=np.float64)
    return beta_min + (beta_max - beta_min) * (1.0 - np.abs(2.0 * t - 1.0))


def build_symmetric(
    beta_min=DEFAULT_BETA_MIN, beta_max=DEFAULT_BETA_MAX, N=DEFAULT_N, t_min=DEFAULT_T_MIN
) -> NoiseSchedule:
    """Triangular beta profile peaking at t=0.5, shrinking at both ends."""
    if not beta_min > 0:
        raise ConfigError("beta_min must be positive")
    if beta_max < beta_min:
        raise ConfigError("beta_max must be >= beta_min")
    if int(N) != N or N < 2:
        raise ConfigError("N must be an integer >= 2")
    if not 0 < t_min < 0.5:
        raise ConfigError("t_min must lie in (0, 0.5)")
    t_grid = symmetric_t_grid(int(N), float(t_min))
    return NoiseSchedule.from_beta(
        t_grid, triangular_beta(t_grid, beta_min, beta_max), beta_at_zero=beta_min
    )


@dataclass(frozen=True, eq=False)
class InferenceGrid:
    indices: np.ndarray  # decreasing, indices[0] == N, indices[-1] == 0
    alpha2: np.ndarray  # alpha2[n] = sigma2[indices[n]] - sigma2[indices[n + 1]]

    @property
    def steps(self):
        return self.alpha2.size


def inference_grid(schedule: NoiseSchedule, N_infer=5, spacing="t") -> InferenceGrid:
    """Subsample the training grid into ``N_infer`` reverse steps.

    ``spacing="t"`` targets uniform spacing in t, ``"sigma2"`` uniform
    spacing in cumulative variance; targets snap to the nearest grid point.
    """
    N = schedule.N
    if int(N_infer) != N_infer or N_infer < 1:
        raise ConfigError("N_infer must be an integer >= 1")
    if N_infer > N:
        raise ConfigError(f"N_infer={N_infer} exceeds grid size N={N}")
    k = np.arange(N_infer, -1, -1) / N_infer
    if spacing == "t":
        axis = schedule.t_grid
    elif spacing == "sigma2":
        axis = schedule.sigma2
    else:
        raise ConfigError(f"unknown spacing {spacing!r}")
    targets = axis[0] + (axis[-1] - axis[0]) * k
    idx = np.abs(axis[None, :] - targets[:, None]).argmin(axis=1)
    idx[0], idx[-1] = N, 0
    if np.any(np.diff(idx) >= 0):
        raise GridTooCoarseError(
            f"N_infer={N_infer} produces duplicate grid indices on N={N} ({spacing} spacing)"
        )
    alpha2 = schedule.sigma2[idx[:-1]] - schedule.sigma2[idx[1:]]
    if np.any(alpha2 <= 0):
        raise GridTooCoarseError("non-positive accumulated variance between inference steps")
    return InferenceGrid(idx, alpha2)
