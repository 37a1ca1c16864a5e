"""Self-verification suite: every invariant is measured and compared with its tolerance.

Each property returns a :class:`PropertyResult`; ``run_suite`` collects them
and ``format_results`` renders one line per property.  Oracles here are
written independently of the code under test (precision-weighted Gaussian
conditioning for the bridge marginal, brute-force DFT for the transform).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bridge import ddpm_step, reverse_enhance, sample_xt, score_target
from .corpus import AudioClip, mix_at_snr, synth_clean, synth_noise
from .metrics import si_sdr
from .model.nets import MaskNet, ScoreNet, oracle_gain
from .model.train import ScoreItem, grad_check
from .pipeline import enhance_clip
from .schedule import build_symmetric, inference_grid
from .seeding import make_rng
from .spectral import SpectralParams, cola_deviation, compress_values, decompress_values, istft, stft


@dataclass
class PropertyResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{tag}  {self.name:<28} measured={self.measured:.3e}  tol={self.tolerance:.1e}  ({self.seconds:.2f}s){extra}"


def conditioned_moments(x0, xT, s2, s2_bar):
    """Mean/variance of N(x0, s2) conditioned on xT = x + N(0, s2_bar), precision form."""
    prec = 1.0 / s2 + 1.0 / s2_bar
    var = 1.0 / prec
    return var * (x0 / s2 + xT / s2_bar), var


def _below(name, measured, tol, detail=""):
    return PropertyResult(name, float(measured), tol, bool(measured < tol), detail=detail)


# -- schedule ----------------------------------------------------------------


def prop_schedule_sum(schedule):
    total = schedule.sigma2 + schedule.sigma2_bar
    err = np.max(np.abs(total - schedule.sigma2_total)) / schedule.sigma2_total
    return _below("schedule_sum_identity", err, 1e-12)


def prop_schedule_symmetry(schedule):
    # sigma2 at t against sigma2_bar at 1 - t, over every interior grid point
    t = schedule.t_grid[:-1]
    s2 = np.array([schedule.sigma_at(v)[0] for v in t])
    s2b_mirror = np.array([schedule.sigma_at(1.0 - v)[1] for v in t])
    return _below("schedule_symmetry", np.max(np.abs(s2 - s2b_mirror)), 1e-10)


# -- bridge ------------------------------------------------------------------


def prop_posterior_moments(schedule, draws=100_000, seed=0):
    """Max z-score of the sample mean and max relative variance error."""
    rng = make_rng(seed, "verify", "posterior")
    x0 = 0.5 * (rng.standard_normal(6) + 1j * rng.standard_normal(6))
    xT = 0.5 * (rng.standard_normal(6) + 1j * rng.standard_normal(6))
    worst_z, worst_var = 0.0, 0.0
    for t in (0.1, 0.5, 0.9):
        x = sample_xt(np.tile(x0, (draws, 1)), np.tile(xT, (draws, 1)), t, schedule, make_rng(seed, "mc", t)).x_t
        mu, var = conditioned_moments(x0, xT, *schedule.sigma_at(t))
        se = np.sqrt(var / 2 / draws)
        mean = x.mean(axis=0)
        z = np.max(np.abs(np.concatenate([(mean - mu).real, (mean - mu).imag])) / se)
        rel = np.max(np.abs(np.mean(np.abs(x - mean) ** 2, axis=0) / var - 1))
        worst_z, worst_var = max(worst_z, z), max(worst_var, rel)
    return [
        _below("posterior_mean_zscore", worst_z, 4.0),
        _below("posterior_variance_relerr", worst_var, 0.02),
    ]


def prop_ddpm_composition(schedule, trajectories=10_000, seed=0):
    """Iterated DDPM steps with exact x0 against the analytic marginal at 3 probes."""
    rng = make_rng(seed, "verify", "ddpm")
    x0 = 0.5 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    xT = 0.5 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    grid = inference_grid(schedule, schedule.N)
    probes = {3 * schedule.N // 4, schedule.N // 2, schedule.N // 4}
    x = np.tile(xT, (trajectories, 1))
    x0s = np.tile(x0, (trajectories, 1))
    step_rng = make_rng(seed, "ddpm-chain")
    worst = 0.0
    for k in range(grid.steps):
        x = ddpm_step(x0s, x, k, grid, schedule, step_rng)
        idx = int(grid.indices[k + 1])
        if idx not in probes:
            continue
        mu, var = conditioned_moments(x0, xT, schedule.sigma2[idx], schedule.sigma2_bar[idx])
        mean = x.mean(axis=0)
        z_mean = np.abs(np.concatenate([(mean - mu).real, (mean - mu).imag])) / np.sqrt(var / 2 / trajectories)
        # |z - mu|^2 has mean var and standard deviation var for a circular Gaussian
        z_var = np.abs(np.mean(np.abs(x - mu) ** 2, axis=0) - var) / (var / np.sqrt(trajectories))
        worst = max(worst, float(np.max(z_mean)), float(np.max(z_var)))
    return _below("ddpm_composition_zscore", worst, 4.0)


def prop_oracle_round_trip(schedule, seed=0):
    rng = make_rng(seed, "verify", "oracle")
    x0 = rng.standard_normal((10, 7)) + 1j * rng.standard_normal((10, 7))
    xT = rng.standard_normal((10, 7)) + 1j * rng.standard_normal((10, 7))
    worst = 0.0
    for n_infer in (1, 5, 50):
        grid = inference_grid(schedule, n_infer)
        score = lambda x, i, m: score_target(x, x0, np.sqrt(schedule.sigma2[i]))
        out = reverse_enhance(xT, score, None, schedule, grid, make_rng(seed, n_infer))
        worst = max(worst, np.linalg.norm(out - x0) / np.linalg.norm(x0))
    return _below("oracle_score_round_trip", worst, 1e-10)


def prop_oracle_end_to_end(schedule, params, seed=0):
    clean = synth_clean(1.0, seed)
    noisy, _ = mix_at_snr(clean, synth_noise(1.0, "white", seed + 1), 0.0)
    out = enhance_clip(noisy, "oracle", schedule, inference_grid(schedule, 5), params, make_rng(seed), clean=clean)
    err = np.sqrt(np.mean((out.samples - clean.samples) ** 2) / np.mean(clean.samples**2))
    return _below("oracle_end_to_end_wav", err, 1e-5)


# -- model -------------------------------------------------------------------


def _score_probe(schedule, rng):
    batch = []
    for _ in range(2):
        x0 = 0.3 * (rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5)))
        xT = x0 + 0.3 * (rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5)))
        t = schedule.t_grid[int(rng.integers(1, schedule.N))]
        batch.append(ScoreItem(sample_xt(x0, xT, t, schedule, rng), xT, rng.uniform(0, 1, (6, 5))))
    return batch


def prop_grad_score(schedule, seed=0):
    rng = make_rng(seed, "verify", "grad-score")
    net = ScoreNet.initialized(rng, N=schedule.N, t_min=schedule.t_min)
    # a nonzero output layer keeps every path in the gradient
    net = net.with_params(net.params + 0.05 * rng.standard_normal(net.num_params))
    rep = grad_check(net, _score_probe(schedule, rng))
    return _below("gradcheck_score_net", rep.max_rel_err, 1e-5, f"{rep.n_checked} params")


def prop_grad_mask(seed=0):
    rng = make_rng(seed, "verify", "grad-mask")
    net = MaskNet.initialized(rng)
    noisy = 0.3 * (rng.standard_normal((2, 6, 5)) + 1j * rng.standard_normal((2, 6, 5)))
    rep = grad_check(net, (noisy, rng.uniform(0, 1, (2, 6, 5))))
    return _below("gradcheck_mask_net", rep.max_rel_err, 1e-5, f"{rep.n_checked} params")


def prop_oracle_gain_range(seed=0):
    rng = make_rng(seed, "verify", "gain")
    g = oracle_gain(np.abs(rng.standard_normal(1000)), np.abs(rng.standard_normal(1000)))
    outside = float(np.sum((g < 0) | (g > 1)))
    return PropertyResult("oracle_gain_in_unit_range", outside, 0.5, outside == 0)


# -- spectral ------------------------------------------------------------------


def prop_cola(params):
    return _below("cola_constant", cola_deviation(params), 1e-10)


def prop_stft_round_trip(params, seed=0):
    rng = make_rng(seed, "verify", "stft")
    worst = 0.0
    for n in (16000, 16001, 12345):
        x = rng.standard_normal(n)
        y = istft(stft(AudioClip(x), params)).samples
        worst = max(worst, np.sqrt(np.mean((y - x) ** 2) / np.mean(x**2)))
    return _below("stft_round_trip", worst, 1e-6)


def prop_stft_dft(params, seed=0):
    """One frame against a brute-force DFT sum."""
    rng = make_rng(seed, "verify", "dft")
    x = rng.standard_normal(4000)
    spec = stft(AudioClip(x), params).values
    frame = 10
    pad = params.window_len // 2
    xp = np.pad(x, pad, mode="reflect")
    seg = xp[frame * params.hop : frame * params.hop + params.window_len] * params.window()
    n = np.arange(params.window_len)
    k = np.arange(params.bins)[:, None]
    ref = (seg[None, :] * np.exp(-2j * np.pi * k * n / params.window_len)).sum(axis=1)
    err = np.max(np.abs(spec[:, frame] - ref)) / np.max(np.abs(ref))
    return _below("stft_matches_dft", err, 1e-10)


def prop_compression(params, seed=0):
    rng = make_rng(seed, "verify", "compress")
    c = rng.standard_normal(2000) + 1j * rng.standard_normal(2000)
    back = decompress_values(compress_values(c, params), params)
    return _below("compression_round_trip", np.max(np.abs(back - c)) / np.max(np.abs(c)), 1e-12)


# -- metrics -------------------------------------------------------------------


def prop_si_sdr_examples():
    s = np.array([1.0, 0.0, -1.0, 0.0])
    zero_db = abs(si_sdr(s, s + np.array([0.0, 1.0, 0.0, -1.0])))
    rng = make_rng(0, "verify", "si-sdr")
    ref, est = rng.standard_normal(500), rng.standard_normal(500)
    scale = abs(si_sdr(ref, 3.7 * est) - si_sdr(ref, est))
    return [
        _below("si_sdr_zero_db_example", zero_db, 1e-12),
        _below("si_sdr_scale_invariance", scale, 1e-9),
    ]


# -- driver ---------------------------------------------------------------------


def run_suite(schedule=None, params=None, seed=0, quick=False):
    """Run every property; ``quick`` shrinks the Monte-Carlo sizes for smoke tests."""
    schedule = schedule or build_symmetric()
    params = params or SpectralParams()
    draws, traj = (20_000, 2_000) if quick else (100_000, 10_000)
    checks = [
        lambda: prop_schedule_sum(schedule),
        lambda: prop_schedule_symmetry(schedule),
        lambda: prop_posterior_moments(schedule, draws, seed),
        lambda: prop_ddpm_composition(schedule, traj, seed),
        lambda: prop_oracle_round_trip(schedule, seed),
        lambda: prop_oracle_end_to_end(schedule, params, seed),
        lambda: prop_grad_score(schedule, seed),
        lambda: prop_grad_mask(seed),
        lambda: prop_oracle_gain_range(seed),
        lambda: prop_cola(params),
        lambda: prop_stft_round_trip(params, seed),
        lambda: prop_stft_dft(params, seed),
        lambda: prop_compression(params, seed),
        prop_si_sdr_examples,
    ]
    results = []
    for check in checks:
        t0 = time.perf_counter()
        out = check()
        out = out if isinstance(out, list) else [out]
        dt = (time.perf_counter() - t0) / len(out)
        for r in out:
            r.seconds = dt
        results.extend(out)
    return results


def format_results(results):
    lines = [r.line() for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} properties passed")
    return "\n".join(lines) + "\n"
