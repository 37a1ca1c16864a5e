"""Acceptance criteria 1-10, each printed as one PASS/FAIL line.

Criteria 8 and 9 train the toy networks on the full 200-record corpus
through the CLI and take roughly 20 minutes on one CPU core.
"""

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from sbse.bridge import ddpm_step, reverse_enhance, sample_xt, score_target
from sbse.cli import main
from sbse.corpus import AudioClip, mix_at_snr, read_wav, synth_clean, synth_noise, write_wav
from sbse.metrics import si_sdr
from sbse.model import MaskNet, ScoreItem, ScoreNet, grad_check
from sbse.pipeline import enhance_clip
from sbse.schedule import build_symmetric, inference_grid
from sbse.seeding import make_rng
from sbse.spectral import SpectralParams, cola_deviation, istft, stft

RESULTS = []

TOY_TRAIN = [
    "--train.steps", "1000",
    "--train.learning_rate", "1e-3",
    "--train.batch_size", "2",
    "--train.hidden", "16",
    "--train.crop_frames", "256",
]
MASK_STEPS = "1500"
TRAIN_BUDGET_S = 15 * 60


def record(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return passed


def moments_oracle(x0, xT, s2, s2b):
    # Gaussian conditioning in precision form: x ~ N(x0, s2), observed xT = x + N(0, s2b)
    var = 1.0 / (1.0 / s2 + 1.0 / s2b)
    return var * (x0 / s2 + xT / s2b), var


def rel_rms(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2) / np.mean(b**2)))


@pytest.fixture(scope="module")
def schedule():
    return build_symmetric()


class TestAcceptance:
    def test_01_schedule_identities(self):
        t0 = time.perf_counter()
        s = build_symmetric(N=1000)
        sum_err = np.max(np.abs(s.sigma2 + s.sigma2_bar - s.sigma2_total)) / s.sigma2_total
        # mirror pairs t <-> 1 - t over the grid points in [t_min, 1 - t_min]
        sym_err = max(abs(s.sigma_at(v)[0] - s.sigma_at(1.0 - v)[1]) for v in s.t_grid[:-1])
        dt = time.perf_counter() - t0
        ok = sum_err < 1e-12 and sym_err < 1e-10 and dt < 1.0 and s.t_grid.size == 1001
        assert record(1, ok, f"sum rel err {sum_err:.1e} (<1e-12), symmetry {sym_err:.1e} (<1e-10), {dt:.2f}s (<1s)")

    def test_02_posterior_moments(self, schedule):
        t0 = time.perf_counter()
        n = 100_000
        rng = np.random.default_rng(2024)
        x0 = 0.5 * (rng.standard_normal(8) + 1j * rng.standard_normal(8))
        xT = 0.5 * (rng.standard_normal(8) + 1j * rng.standard_normal(8))
        worst_z, worst_v = 0.0, 0.0
        for t in (0.1, 0.5, 0.9):
            draws = sample_xt(np.tile(x0, (n, 1)), np.tile(xT, (n, 1)), t, schedule, make_rng(77, t)).x_t
            mu, var = moments_oracle(x0, xT, *schedule.sigma_at(t))
            mean = draws.mean(axis=0)
            se = np.sqrt(var / 2 / n)
            worst_z = max(worst_z, np.max(np.abs(mean.real - mu.real) / se), np.max(np.abs(mean.imag - mu.imag) / se))
            worst_v = max(worst_v, np.max(np.abs(np.mean(np.abs(draws - mean) ** 2, axis=0) / var - 1)))
        dt = time.perf_counter() - t0
        ok = worst_z < 4 and worst_v < 0.02 and dt < 30
        assert record(2, ok, f"max mean z {worst_z:.2f} (<4), max var rel err {worst_v:.4f} (<0.02), {dt:.1f}s")

    def test_03_ddpm_composition(self, schedule):
        t0 = time.perf_counter()
        n = 10_000
        rng = np.random.default_rng(7)
        x0 = 0.5 * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
        xT = 0.5 * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
        grid = inference_grid(schedule, schedule.N)
        x, x0s = np.tile(xT, (n, 1)), np.tile(x0, (n, 1))
        chain_rng = make_rng(8, "chain")
        worst = 0.0
        for k in range(grid.steps):
            x = ddpm_step(x0s, x, k, grid, schedule, chain_rng)
            idx = int(grid.indices[k + 1])
            if idx not in (800, 500, 200):
                continue
            mu, var = moments_oracle(x0, xT, schedule.sigma2[idx], schedule.sigma2_bar[idx])
            se_mean = np.sqrt(var / 2 / n)
            d = x.mean(axis=0) - mu
            z_var = np.abs(np.mean(np.abs(x - mu) ** 2, axis=0) - var) / (var / np.sqrt(n))
            worst = max(worst, np.max(np.abs(d.real) / se_mean), np.max(np.abs(d.imag) / se_mean), np.max(z_var))
        dt = time.perf_counter() - t0
        ok = worst < 4 and dt < 120
        assert record(3, ok, f"max z over 3 probes {worst:.2f} (<4), {dt:.1f}s")

    def test_04_oracle_round_trip(self, schedule, tmp_path):
        t0 = time.perf_counter()
        rng = np.random.default_rng(4)
        x0 = rng.standard_normal((257, 20)) + 1j * rng.standard_normal((257, 20))
        xT = x0 + rng.standard_normal((257, 20)) + 1j * rng.standard_normal((257, 20))
        worst = 0.0
        for n_infer in (1, 5, 50):
            score = lambda x, i, m: score_target(x, x0, np.sqrt(schedule.sigma2[i]))
            out = reverse_enhance(xT, score, None, schedule, inference_grid(schedule, n_infer), make_rng(n_infer))
            worst = max(worst, np.linalg.norm(out - x0) / np.linalg.norm(x0))
        # WAV -> WAV through the full pipeline
        clean = synth_clean(2.0, 41)
        noisy, _ = mix_at_snr(clean, synth_noise(2.0, "pink", 42), -5.0)
        write_wav(clean, tmp_path / "clean.wav", "float32")
        write_wav(noisy, tmp_path / "noisy.wav", "float32")
        clean_in, noisy_in = read_wav(tmp_path / "clean.wav"), read_wav(tmp_path / "noisy.wav")
        out = enhance_clip(noisy_in, "oracle", schedule, inference_grid(schedule, 5), SpectralParams(), make_rng(0), clean=clean_in)
        write_wav(out, tmp_path / "out.wav", "float32")
        e2e = rel_rms(read_wav(tmp_path / "out.wav").samples, clean_in.samples)
        dt = time.perf_counter() - t0
        ok = worst < 1e-10 and e2e < 1e-5 and dt < 30
        assert record(4, ok, f"latent rel err {worst:.1e} (<1e-10), WAV->WAV rel RMS {e2e:.1e} (<1e-5), {dt:.1f}s")

    def test_05_gradient_checks(self, schedule):
        t0 = time.perf_counter()
        rng = make_rng(5, "accept-grad")
        score_net = ScoreNet.initialized(rng, N=schedule.N, t_min=schedule.t_min)
        score_net = score_net.with_params(score_net.params + 0.05 * rng.standard_normal(score_net.num_params))
        batch = []
        for _ in range(2):
            x0 = 0.3 * (rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5)))
            xT = x0 + 0.3 * (rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5)))
            t = schedule.t_grid[int(rng.integers(1, schedule.N))]
            batch.append(ScoreItem(sample_xt(x0, xT, t, schedule, rng), xT, rng.uniform(0, 1, (6, 5))))
        rep_s = grad_check(score_net, batch)
        mask_net = MaskNet.initialized(rng)
        noisy = 0.3 * (rng.standard_normal((2, 6, 5)) + 1j * rng.standard_normal((2, 6, 5)))
        rep_m = grad_check(mask_net, (noisy, rng.uniform(0, 1, (2, 6, 5))))
        dt = time.perf_counter() - t0
        ok = rep_s.max_rel_err < 1e-5 and rep_m.max_rel_err < 1e-5 and dt < 60
        assert record(
            5, ok,
            f"ScoreNet {rep_s.max_rel_err:.1e} over {rep_s.n_checked} params, "
            f"MaskNet {rep_m.max_rel_err:.1e} over {rep_m.n_checked} (<1e-5), {dt:.1f}s",
        )

    def test_06_stft(self):
        t0 = time.perf_counter()
        p = SpectralParams()
        rng = np.random.default_rng(6)
        worst = 0.0
        for n in (32000, 16000 + 77, 5000):
            x = rng.standard_normal(n)
            worst = max(worst, rel_rms(istft(stft(AudioClip(x), p)).samples, x))
        cola = cola_deviation(p)
        dt = time.perf_counter() - t0
        ok = worst < 1e-6 and cola < 1e-10 and dt < 5
        assert record(6, ok, f"round trip rel RMS {worst:.1e} (<1e-6), COLA dev {cola:.1e} (<1e-10), {dt:.2f}s")

    def test_07_si_sdr_examples(self):
        zero_db = si_sdr([1.0, 0.0], [1.0, 1.0])
        rng = np.random.default_rng(9)
        s, e = rng.standard_normal(1000), rng.standard_normal(1000)
        scale = max(abs(si_sdr(s, c * e) - si_sdr(s, e)) for c in (-3.0, 1e-3, 0.5, 250.0))
        ok = zero_db == 0.0 and scale < 1e-9
        assert record(7, ok, f"hand example {zero_db} dB (==0), scale invariance {scale:.1e} dB (<1e-9)")


# ---------------------------------------------------------------------------
# Criteria 8-9: toy training through the CLI
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    wd = str(tmp_path_factory.mktemp("toy"))
    assert main(["synth-data", "--workdir", wd, *TOY_TRAIN]) == 0
    timings = {}
    for which in ("score", "score_masked"):
        t0 = time.perf_counter()
        assert main(["train", which, "--workdir", wd]) == 0
        timings[which] = time.perf_counter() - t0
    assert main(["train", "mask", "--workdir", wd, "--train.steps", MASK_STEPS]) == 0
    assert main(["enhance", "--workdir", wd, "--system", "sbse"]) == 0
    assert main(["enhance", "--workdir", wd, "--system", "sbse-m", "--inference.mask_source", "oracle"]) == 0
    assert main(["enhance", "--workdir", wd, "--system", "sbse-m", "--tag", "sbse-m-pred",
                 "--inference.mask_source", "predicted"]) == 0
    assert main(["eval", "--workdir", wd, "--system", "sbse", "--system", "sbse-m", "--system", "sbse-m-pred"]) == 0
    with open(Path(wd) / "reports" / "eval_sbse_sbse-m_sbse-m-pred.csv") as fh:
        rows = {(float(r["snr_level_db"]), r["system"]): r for r in csv.DictReader(fh)}
    return rows, timings


class TestToyTrend:
    def test_08_enhancement_trend(self, toy_run):
        rows, timings = toy_run
        d0 = float(rows[(0.0, "sbse")]["delta"])
        d5 = float(rows[(-5.0, "sbse")]["delta"])
        budget = timings["score"]
        ok = d0 >= 3.0 and d5 >= 2.0 and budget <= TRAIN_BUDGET_S
        assert record(
            8, ok,
            f"SI-SDR gain over noisy: {d0:+.2f} dB at 0 dB (>=+3), {d5:+.2f} dB at -5 dB (>=+2), "
            f"N_infer=5, training {budget:.0f}s (<= {TRAIN_BUDGET_S}s)",
        )

    def test_09_mask_conditioning_trend(self, toy_run):
        rows, _ = toy_run
        parts, hard_fail = [], False
        for lv in (-5.0, 0.0):
            m, b = rows[(lv, "sbse-m")], rows[(lv, "sbse")]
            mm, bm = float(m["si_sdr_mean"]), float(b["si_sdr_mean"])
            mc, bc = float(m["si_sdr_ci95"]), float(b["si_sdr_ci95"])
            pred = float(rows[(lv, "sbse-m-pred")]["si_sdr_mean"])
            if mm >= bm:
                verdict = "ok"
            elif mm + mc >= bm - bc:
                verdict = "warning: below, within CI overlap"
            else:
                verdict, hard_fail = "below beyond CI overlap", True
            parts.append(f"{lv:g} dB: SBSE-M {mm:.2f} vs SBSE {bm:.2f} [{verdict}], predicted-mask {pred:.2f}")
        assert record(9, not hard_fail, "; ".join(parts))


# ---------------------------------------------------------------------------
# Criterion 10: determinism of the full pipeline
# ---------------------------------------------------------------------------


TINY = [
    "--corpus.train_count", "8", "--corpus.eval_count", "8", "--corpus.duration_s", "1.0",
    "--train.steps", "6", "--train.batch_size", "2", "--train.crop_frames", "32", "--train.hidden", "8",
    "--train.learning_rate", "1e-3", "--train.checkpoint_every", "3",
]


def _full_pipeline(wd, config=None):
    base = ["--workdir", str(wd)] + (["--config", str(config)] if config else TINY)
    assert main(["synth-data", *base]) == 0
    for which in ("score", "mask", "score_masked"):
        assert main(["train", which, "--workdir", str(wd)]) == 0
    for system in ("sbse", "sbse-m"):
        assert main(["enhance", "--workdir", str(wd), "--system", system]) == 0
    assert main(["eval", "--workdir", str(wd), "--system", "sbse", "--system", "sbse-m"]) == 0


def _artifacts(wd):
    wd = Path(wd)
    files = sorted(p for sub in ("enhanced", "checkpoints") for p in (wd / sub).rglob("*") if p.is_file())
    files += [wd / "reports" / "eval_sbse_sbse-m.csv", wd / "reports" / "eval_sbse_sbse-m.txt", wd / "manifest.jsonl"]
    return {str(p.relative_to(wd)): p.read_bytes() for p in files}


class TestDeterminism:
    def test_10_bit_identical_runs(self, tmp_path):
        _full_pipeline(tmp_path / "a")
        _full_pipeline(tmp_path / "b", config=tmp_path / "a" / "config.ini")
        a, b = _artifacts(tmp_path / "a"), _artifacts(tmp_path / "b")
        n_wav = sum(k.endswith(".wav") for k in a)
        same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
        ok = same and n_wav == 16
        assert record(10, ok, f"{len(a)} artifacts compared ({n_wav} float32 WAVs, reports, checkpoints): "
                              f"{'bit-identical' if same else 'DIFFER'}")
