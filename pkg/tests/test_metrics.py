import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbse.corpus import AudioClip, DatasetConfig, make_dataset, mix_at_snr, synth_clean, synth_noise
from sbse.errors import CompletenessError, DegenerateInputError, ShapeError
from sbse.metrics import SI_SDR_CAP_DB, aggregate, evaluate, mean_ci95, si_sdr, snr


def reference_si_sdr(s, e):
    """Projection form: split e into its component along s and the orthogonal rest."""
    s, e = np.asarray(s, float), np.asarray(e, float)
    proj = (e @ s) / (s @ s) * s
    return 10 * np.log10(np.sum(proj**2) / np.sum((e - proj) ** 2))


@pytest.fixture(scope="module")
def manifest():
    return make_dataset(DatasetConfig(train_count=0, eval_count=24, duration_s=0.25, seed=5))


class TestSiSdr:
    def test_hand_example_zero_db(self):
        assert si_sdr([1.0, 0.0], [1.0, 1.0]) == 0.0

    def test_identity_hits_cap(self):
        x = np.random.default_rng(0).standard_normal(100)
        assert si_sdr(x, x) == SI_SDR_CAP_DB
        assert si_sdr(x, -2.5 * x) == SI_SDR_CAP_DB

    @given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3))
    def test_scale_invariance(self, c):
        rng = np.random.default_rng(1)
        s, e = rng.standard_normal(64), rng.standard_normal(64)
        assert abs(si_sdr(s, c * e) - si_sdr(s, e)) < 1e-9

    @settings(max_examples=50)
    @given(st.integers(0, 10_000))
    def test_matches_projection_form(self, seed):
        rng = np.random.default_rng(seed)
        s, e = rng.standard_normal(50), rng.standard_normal(50)
        assert si_sdr(s, e) == pytest.approx(reference_si_sdr(s, e), abs=1e-9)

    @settings(max_examples=50)
    @given(st.integers(0, 10_000))
    def test_below_cap_unless_proportional(self, seed):
        rng = np.random.default_rng(seed)
        assert si_sdr(rng.standard_normal(20), rng.standard_normal(20)) < SI_SDR_CAP_DB

    def test_orthogonal_estimate_floor(self):
        assert si_sdr([1.0, 0.0], [0.0, 1.0]) == -SI_SDR_CAP_DB

    def test_errors(self):
        with pytest.raises(DegenerateInputError):
            si_sdr(np.zeros(4), np.ones(4))
        with pytest.raises(ShapeError):
            si_sdr(np.ones(4), np.ones(5))

    def test_accepts_clips(self):
        c = AudioClip([0.1, 0.2, -0.3])
        assert si_sdr(c, c) == SI_SDR_CAP_DB


class TestSnr:
    def test_examples(self):
        assert snr([1.0, -1.0], [-1.0, 1.0]) == 0.0
        assert snr([10.0, -10.0], [1.0, 1.0]) == pytest.approx(20.0, abs=1e-12)

    @given(st.floats(-10, 40))
    def test_mix_round_trip(self, level):
        clean, noise = synth_clean(0.1, 1), synth_noise(0.1, "pink", 2)
        _, scaled = mix_at_snr(clean, noise, level)
        assert abs(snr(clean, scaled) - level) < 1e-9

    def test_zero_noise(self):
        with pytest.raises(DegenerateInputError):
            snr([1.0], [0.0])


class TestMeanCi:
    def test_single_value(self):
        assert mean_ci95([3.0]) == (3.0, 0.0)

    def test_formula(self):
        v = [1.0, 2.0, 3.0, 4.0]
        m, ci = mean_ci95(v)
        assert m == 2.5
        assert ci == pytest.approx(1.96 * np.std(v, ddof=1) / 2, rel=1e-14)


class TestEvaluate:
    def _clips(self, manifest, seed):
        rng = np.random.default_rng(seed)
        refs = {r.id: rng.standard_normal(400) for r in manifest.split("eval")}
        outs = {k: v + 0.5 * rng.standard_normal(400) for k, v in refs.items()}
        return refs, outs

    def test_perfect_outputs(self, manifest):
        refs, _ = self._clips(manifest, 0)
        rep = evaluate(manifest, refs, refs, "perfect")
        assert len(rep.rows) == 8
        for row in rep.rows:
            assert row.si_sdr_mean == SI_SDR_CAP_DB and row.si_sdr_ci95 == 0 and row.count == 3

    def test_brute_force_aggregation(self, manifest):
        refs, outs = self._clips(manifest, 1)
        rep = evaluate(manifest, outs, refs, "sys", noisy=refs)
        for level in rep.levels():
            ids = [r.id for r in manifest.split("eval") if r.snr_db == level]
            vals = [reference_si_sdr(refs[i], outs[i]) for i in ids]
            row = rep.row(level, "sys")
            assert row.si_sdr_mean == pytest.approx(np.mean(vals), abs=1e-9)
            assert row.si_sdr_ci95 == pytest.approx(1.96 * np.std(vals, ddof=1) / np.sqrt(3), abs=1e-9)
            assert row.delta == pytest.approx(row.si_sdr_mean - SI_SDR_CAP_DB, abs=1e-12)
        assert [r.snr_level_db for r in rep.rows] == sorted(r.snr_level_db for r in rep.rows)
        assert len(rep.rows) == 8 * 2

    def test_permutation_invariance(self, manifest):
        refs, outs = self._clips(manifest, 2)
        a = evaluate(manifest, outs, refs, "sys")
        shuffled = dict(reversed(list(outs.items())))
        b = evaluate(manifest, shuffled, refs, "sys")
        assert a.to_csv() == b.to_csv()

    def test_missing_outputs(self, manifest):
        refs, outs = self._clips(manifest, 3)
        drop = manifest.split("eval")[4].id
        del outs[drop]
        with pytest.raises(CompletenessError) as err:
            evaluate(manifest, outs, refs, "sys")
        assert err.value.missing == [drop]

    def test_length_mismatch(self, manifest):
        refs, outs = self._clips(manifest, 4)
        k = next(iter(outs))
        outs[k] = outs[k][:-1]
        with pytest.raises(ShapeError):
            evaluate(manifest, outs, refs, "sys")

    def test_low_count_flag(self):
        m = make_dataset(DatasetConfig(train_count=0, eval_count=8, duration_s=0.25, seed=1))
        refs = {r.id: np.arange(1.0, 5.0) for r in m.split("eval")}
        rep = evaluate(m, refs, refs, "x")
        assert all(r.low_count and r.si_sdr_ci95 == 0 for r in rep.rows)
        assert "(low count)" in rep.to_text()

    def test_identity_at_zero_db(self):
        """Noisy input at 0 dB scores about 0 dB SI-SDR (uncorrelated noise)."""
        from sbse.corpus import render_record

        m = make_dataset(DatasetConfig(train_count=0, eval_count=40, duration_s=1.0, seed=2))
        refs, noisy = {}, {}
        for r in m.split("eval"):
            c, _, n = render_record(r, 1.0)
            refs[r.id], noisy[r.id] = c, n
        rep = evaluate(m, noisy, refs, "noisy-copy", noisy=noisy)
        row = rep.row(0, "identity")
        assert abs(row.si_sdr_mean) < max(row.si_sdr_ci95, 0.1)
        assert rep.row(0, "noisy-copy").delta == 0.0

    def test_csv_text_shapes(self, manifest):
        refs, outs = self._clips(manifest, 5)
        rep = evaluate(manifest, outs, refs, "sys", noisy=refs, metadata={"seed": 0})
        csv_lines = rep.to_csv().strip().splitlines()
        assert csv_lines[0].startswith("snr_level_db,system")
        assert len(csv_lines) == 1 + 16
        assert "# seed: 0" in rep.to_text()

    def test_aggregate_partial(self, manifest):
        ids = [r.id for r in manifest.split("eval")]
        rep = aggregate(manifest, {"a": {ids[0]: 5.0}})
        assert len(rep.rows) == 1 and rep.rows[0].count == 1
