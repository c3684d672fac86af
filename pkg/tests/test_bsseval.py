"""Decomposition oracle equivalence, closed-form metric cases, invariants."""

import numpy as np
import pytest
from scipy.linalg import toeplitz

from wlss import bsseval
from wlss.bsseval import Decomposition, decompose, metrics
from wlss.dsp import Waveform


def oracle_decompose(estimate, references, taps):
    """Independent dense least-squares oracle: explicit toeplitz assembly
    solved with SVD-based lstsq (no Gram matrix, no regularization)."""
    est = estimate.samples
    n = len(est)

    def block(sig):
        return toeplitz(sig, np.concatenate([[sig[0]], np.zeros(taps - 1)]))

    b1 = block(references[0].samples)
    s_target = b1 @ np.linalg.lstsq(b1, est, rcond=None)[0]
    full = np.hstack([block(r.samples) for r in references])
    p_full = full @ np.linalg.lstsq(full, est, rcond=None)[0]
    return Decomposition(s_target, p_full - s_target, est - p_full, taps)


class TestDecompose:
    def test_estimate_equals_target(self, rng):
        refs = [Waveform(rng.standard_normal(400), 8000) for _ in range(2)]
        d = decompose(refs[0], refs, taps=8)
        scale = np.linalg.norm(d.s_target)
        assert np.linalg.norm(d.e_interf) <= 1e-8 * scale
        assert np.linalg.norm(d.e_artif) <= 1e-8 * scale

    def test_estimate_equals_interferer(self, rng):
        # orthogonal references: disjoint supports
        a = np.zeros(400)
        b = np.zeros(400)
        a[:200] = rng.standard_normal(200)
        b[200:] = rng.standard_normal(200)
        refs = [Waveform(a, 8000), Waveform(b, 8000)]
        d = decompose(refs[1], refs, taps=1)
        assert np.linalg.norm(d.s_target) <= 1e-6 * np.linalg.norm(refs[1].samples)

    def test_matches_dense_oracle(self, rng):
        for trial in range(50):
            n = int(rng.integers(64, 513))
            taps = int(rng.integers(1, 17))
            refs = [Waveform(rng.standard_normal(n), 8000) for _ in range(2)]
            est = Waveform(
                0.6 * refs[0].samples + 0.3 * np.roll(refs[1].samples, 3)
                + 0.1 * rng.standard_normal(n), 8000)
            d = decompose(est, refs, taps)
            o = oracle_decompose(est, refs, taps)
            for got, want in ((d.s_target, o.s_target), (d.e_interf, o.e_interf),
                              (d.e_artif, o.e_artif)):
                err = np.linalg.norm(got - want) / max(np.linalg.norm(est.samples), 1e-12)
                assert err <= 1e-6, f"trial {trial}: component error {err:.2e}"

    def test_additivity(self, rng):
        refs = [Waveform(rng.standard_normal(300), 8000) for _ in range(2)]
        est = Waveform(rng.standard_normal(300), 8000)
        d = decompose(est, refs, taps=8)
        recon = d.s_target + d.e_interf + d.e_artif
        assert np.linalg.norm(recon - est.samples) <= 1e-9 * np.linalg.norm(est.samples)

    def test_orthogonality(self, rng):
        refs = [Waveform(rng.standard_normal(300), 8000) for _ in range(2)]
        est = Waveform(rng.standard_normal(300), 8000)
        d = decompose(est, refs, taps=4)
        n1 = np.linalg.norm(d.s_target) * np.linalg.norm(d.e_interf)
        n2 = np.linalg.norm(d.s_target + d.e_interf) * np.linalg.norm(d.e_artif)
        assert abs(np.dot(d.s_target, d.e_interf)) <= 1e-8 * max(n1, 1e-12)
        assert abs(np.dot(d.s_target + d.e_interf, d.e_artif)) <= 1e-8 * max(n2, 1e-12)

    def test_length_mismatch_rejected(self, rng):
        with pytest.raises(bsseval.EvalError):
            decompose(Waveform(np.ones(10), 8000), [Waveform(np.ones(11), 8000)])

    def test_bad_taps_rejected(self, rng):
        w = Waveform(np.ones(10), 8000)
        with pytest.raises(bsseval.EvalError):
            decompose(w, [w], taps=0)


class TestMetrics:
    def test_perfect_estimate_capped(self, rng):
        refs = [Waveform(rng.standard_normal(256), 8000) for _ in range(2)]
        m = metrics(decompose(refs[0], refs, taps=4))
        assert m.sdr >= 115.0
        assert m.sir >= 115.0
        assert m.sar >= 115.0

    def test_equal_energy_orthogonal_mixture(self, rng):
        # estimate = 0.5*(r1+r2), orthogonal equal-energy references, L=1:
        # SDR and SIR are exactly 0 dB
        r1 = np.zeros(512)
        r2 = np.zeros(512)
        r1[:256] = rng.standard_normal(256)
        r2[256:] = rng.standard_normal(256)
        r2 *= np.linalg.norm(r1) / np.linalg.norm(r2)
        refs = [Waveform(r1, 8000), Waveform(r2, 8000)]
        est = Waveform(0.5 * (r1 + r2), 8000)
        m = metrics(decompose(est, refs, taps=1))
        assert m.sdr == pytest.approx(0.0, abs=0.01)
        assert m.sir == pytest.approx(0.0, abs=0.01)

    def test_target_plus_orthogonal_noise(self, rng):
        # estimate = r1 + equal-energy noise orthogonal to both references:
        # SDR ~ 0 dB, SIR at the cap, SAR ~ 0 dB
        r1 = np.zeros(512)
        noise = np.zeros(512)
        r1[:256] = rng.standard_normal(256)
        noise[256:] = rng.standard_normal(256)
        noise *= np.linalg.norm(r1) / np.linalg.norm(noise)
        r2 = np.zeros(512)
        r2[:256] = rng.standard_normal(256)
        r2 -= (r2 @ r1) / (r1 @ r1) * r1          # interferer orthogonal to r1
        est = Waveform(r1 + noise, 8000)
        m = metrics(decompose(est, [Waveform(r1, 8000), Waveform(r2, 8000)], taps=1))
        assert m.sdr == pytest.approx(0.0, abs=0.05)
        assert m.sir >= 115.0
        assert m.sar == pytest.approx(0.0, abs=0.05)

    def test_zero_target_floor(self):
        d = Decomposition(np.zeros(16), np.ones(16), np.zeros(16), 1)
        m = metrics(d)
        assert m.sdr == m.sir == m.sar == bsseval.METRIC_FLOOR_DB

    def test_scale_invariance(self, rng):
        refs = [Waveform(rng.standard_normal(300), 8000) for _ in range(2)]
        est = Waveform(0.7 * refs[0].samples + 0.2 * refs[1].samples
                       + 0.05 * rng.standard_normal(300), 8000)
        m1 = metrics(decompose(est, refs, taps=4))
        for alpha in (0.1, 3.0, 250.0):
            scaled = Waveform(alpha * est.samples, 8000)
            m2 = metrics(decompose(scaled, refs, taps=4))
            assert m2.sdr == pytest.approx(m1.sdr, abs=1e-9)
            assert m2.sir == pytest.approx(m1.sir, abs=1e-9)
            assert m2.sar == pytest.approx(m1.sar, abs=1e-9)

    def test_sir_and_sar_dominate_sdr(self, rng):
        for _ in range(10):
            refs = [Waveform(rng.standard_normal(200), 8000) for _ in range(2)]
            est = Waveform(rng.standard_normal(200), 8000)
            m = metrics(decompose(est, refs, taps=4))
            assert m.sir >= m.sdr - 1e-9
            assert m.sar >= m.sdr - 1e-9


class TestCsv:
    def test_round_trip(self, tmp_path):
        records = [
            {"pair_id": 0, "class_id": 3, "sdr_db": 1.25, "sir_db": 4.5,
             "sar_db": 2.0, "baseline_sdr_db": 0.01},
            {"pair_id": 0, "class_id": 5, "sdr_db": -2.0, "sir_db": 0.5,
             "sar_db": 1.0, "baseline_sdr_db": -0.02},
        ]
        path = tmp_path / "metrics.csv"
        bsseval.write_metrics_csv(path, records)
        back = bsseval.read_metrics_csv(path)
        assert back == records
        assert path.read_text().splitlines()[0] == ",".join(bsseval.CSV_HEADER)

    def test_summary_sorted_descending(self):
        records = []
        for k, sdr in ((0, 1.0), (1, 5.0), (2, 3.0)):
            records.extend({"pair_id": i, "class_id": k, "sdr_db": sdr + 0.1 * i,
                            "sir_db": sdr, "sar_db": sdr, "baseline_sdr_db": 0.0}
                           for i in range(3))
        summary = bsseval.summarize(records)
        medians = [row["median_sdr_db"] for row in summary["per_class"]]
        assert medians == sorted(medians, reverse=True)
        assert [row["class_id"] for row in summary["per_class"]] == [1, 2, 0]
