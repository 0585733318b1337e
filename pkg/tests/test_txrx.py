import numpy as np
import pytest
from hypothesis import given, strategies as st

from ofmtss.codes import build_code, make_circular_set, make_hadamard_set
from ofmtss.dsp import IqSignal
from ofmtss.errors import OfmtError
from ofmtss.pulse import ofmt_pulse
from ofmtss.simlab import awgn
from ofmtss.txrx import (BIORTH, QPSK, ChipMatrix, TxFrame, analyze, analyze_reference,
                         biorth_bits, correlate, correlate_dense, correlate_fft, despread_qpsk,
                         detect, frame_gains, interior, load_frame, qpsk_bits, random_frame,
                         save_frame, sent_chips, synthesize, synthesize_fmt,
                         synthesize_reference)


class TestFrame:
    def test_qpsk_mapping(self):
        f = TxFrame(QPSK, np.array([0, 0, 0, 1, 1, 0, 1, 1]))
        np.testing.assert_allclose(f.qpsk_symbols * np.sqrt(2),
                                   [1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])
        np.testing.assert_array_equal(qpsk_bits(f.qpsk_symbols), f.bits)

    def test_biorth_fields(self):
        f = TxFrame(BIORTH, np.array([1, 0, 1, 1, 0, 0, 1, 0]), M=8)
        assert f.bits_per_interval == 4 and f.n_intervals == 2
        np.testing.assert_array_equal(f.code_index, [5, 1])
        np.testing.assert_array_equal(f.code_sign, [-1, 1])
        np.testing.assert_array_equal(biorth_bits(f.code_index, f.code_sign, 8), f.bits)

    @pytest.mark.parametrize("kw", [dict(mode="x", bits=[0, 1]),
                                    dict(mode=QPSK, bits=[0, 2]),
                                    dict(mode=QPSK, bits=[0, 1], M=2),
                                    dict(mode=BIORTH, bits=[0, 1, 1, 0], M=4),
                                    dict(mode=BIORTH, bits=[0, 1], M=3)])
    def test_invalid(self, kw):
        with pytest.raises(OfmtError):
            TxFrame(kw["mode"], np.asarray(kw["bits"]), kw.get("M", 1))

    @given(st.integers(1, 40), st.sampled_from([1, 2, 8, 128]), st.integers(0, 10**6))
    def test_json_roundtrip(self, n, M, seed):
        f = random_frame(BIORTH, n, M=M, seed=seed)
        g = TxFrame.from_json(f.to_json())
        np.testing.assert_array_equal(g.bits, f.bits)
        assert (g.M, g.mode, g.seed) == (f.M, f.mode, seed)

    def test_file_roundtrip(self, tmp_path):
        f = random_frame(QPSK, 10, seed=4)
        g = load_frame(save_frame(f, tmp_path / "f.json"))
        np.testing.assert_array_equal(g.bits, f.bits)

    def test_malformed_json(self):
        with pytest.raises(OfmtError):
            TxFrame.from_json("{}")


class TestSynthesis:
    def test_single_interval_is_the_pulse(self, small_bank, rng):
        code = build_code(rng.choice([-1, 1], 16))
        x = synthesize(small_bank, code, gains=code.gamma[None, :], normalize=False)
        g = ofmt_pulse(small_bank, code)
        assert x.origin_index == g.origin_index
        np.testing.assert_allclose(x.samples[:len(g)], g.samples, atol=1e-12)

    def test_polyphase_matches_reference(self, small_bank, rng):
        code = build_code(rng.choice([-1, 1], 16))
        cs = make_circular_set(code, 4)
        f = random_frame(BIORTH, 12, M=4, seed=1)
        gains = frame_gains(cs, f)
        a = synthesize(small_bank, cs, f)
        b = synthesize_reference(small_bank, gains)
        err = np.abs(a.samples * np.sqrt(16) - b.samples).max()
        assert err <= 1e-12 * np.abs(b.samples).max()
        assert a.meta["tx_gain"] == pytest.approx(0.25)

    def test_unit_power(self, bank, rng):
        code = build_code(rng.choice([-1, 1], 128))
        f = random_frame(QPSK, 200, seed=2)
        x = synthesize(bank, code, f)
        assert np.mean(np.abs(interior(bank, x, 200)) ** 2) == pytest.approx(1.0, rel=0.02)

    def test_requires_frame_or_gains(self, small_bank):
        with pytest.raises(OfmtError):
            synthesize(small_bank, build_code(np.ones(16)))

    def test_gain_shape_checked(self, small_bank):
        with pytest.raises(OfmtError):
            synthesize(small_bank, None, gains=np.ones((3, 8)))

    def test_interior_bounds(self, small_bank):
        x = synthesize(small_bank, None, gains=np.ones((40, 16)))
        assert len(interior(small_bank, x, 40)) == 8 * 32
        with pytest.raises(OfmtError):
            interior(small_bank, x, 32)

    def test_fmt_comparison(self, small_bank):
        g = np.exp(1j * np.pi * np.arange(8) ** 2 / 8)
        x = synthesize_fmt(small_bank, g, [1.0], normalize=False)
        from ofmtss.pulse import fmt_pulse
        p = fmt_pulse(small_bank, g)
        np.testing.assert_allclose(x.samples[:len(p)], p.samples, atol=1e-12)


class TestAnalysis:
    def test_polyphase_matches_reference(self, small_bank, rng):
        x = IqSignal(rng.standard_normal(40 * 32) + 1j * rng.standard_normal(40 * 32),
                     small_bank.fs, 16 * 32)
        a = analyze(small_bank, x, 8)
        b = analyze_reference(small_bank, x, 8)
        assert np.abs(a.raw - b.raw).max() <= 1e-12 * np.abs(b.raw).max()

    def test_too_short(self, small_bank):
        x = IqSignal(np.ones(100), small_bank.fs, 10)
        with pytest.raises(OfmtError):
            analyze(small_bank, x, 2)

    def test_rate_checked(self, small_bank):
        x = IqSignal(np.ones(4000), 1.0, 1000)
        with pytest.raises(OfmtError):
            analyze(small_bank, x, 2)

    def test_noiseless_qpsk_loopback(self, bank, rng):
        code = build_code(rng.choice([-1, 1], 128))
        f = random_frame(QPSK, 100, seed=3)
        ch = analyze(bank, synthesize(bank, code, f), 100)
        keep = slice(16, 84)
        # per-chip estimates carry ICI from neighbouring intervals; it cancels in the sum
        s = despread_qpsk(code, ch)[keep]
        assert np.abs(s - f.qpsk_symbols[keep]).max() < 1e-3
        np.testing.assert_array_equal(qpsk_bits(despread_qpsk(code, ch))[2 * 16:2 * 84],
                                      f.bits[2 * 16:2 * 84])

    def test_all_ones_has_no_imaginary_ici(self, small_bank):
        code = build_code(np.ones(16))
        cs = make_circular_set(code, 1)
        f = random_frame(BIORTH, 60, M=1, seed=0)
        ch = analyze(small_bank, synthesize(small_bank, cs, f), 60)
        # zeta_{k+1} = zeta_{k-1} makes the quadrature ICI vanish except at the band edges
        assert np.abs(ch.despun.imag[16:44, 1:-1]).max() < 1e-3
        assert np.abs(np.abs(ch.chips[16:44]) - 1).max() < 1e-3

    def test_chip_matrix_shape(self):
        with pytest.raises(OfmtError):
            ChipMatrix(np.ones(4))


class TestCorrelator:
    def test_fft_equals_dense(self, rng):
        cs = make_circular_set(build_code(rng.choice([-1, 1], 128)), 128)
        y = rng.standard_normal((50, 128)) + 1j * rng.standard_normal((50, 128))
        a = correlate_fft(cs, y).c
        b = correlate_dense(cs, y).c
        assert np.abs(a - b).max() < 1e-10

    def test_self_and_shift_peaks(self, rng):
        base = build_code(rng.choice([-1, 1], 64))
        cs = make_circular_set(base, 64)
        for m in (0, 5, 63):
            y = cs.shifts[m] * base.gamma / base.zeta
            c = correlate(cs, y).c
            assert c[m].real == pytest.approx(64)
            others = np.delete(np.abs(c.real), m)
            assert others.max() <= 1e-9 + max(abs(int(cs.shifts[m].astype(int) @ s))
                                       for s in np.delete(cs.shifts, m, 0))

    def test_length_checked(self, rng):
        cs = make_circular_set(build_code(np.ones(8)), 2)
        with pytest.raises(OfmtError):
            correlate_fft(cs, np.ones(7))

    def test_hadamard_uses_dense(self, rng):
        cs = make_hadamard_set(build_code(rng.choice([-1, 1], 16)), 4)
        y = cs.active_gains[2]
        det = detect(cs, correlate(cs, y))
        assert det.index.item() == 2 and det.sign.item() == 1
        with pytest.raises(OfmtError):
            correlate_fft(cs, y)

    def test_detect_all_pairs_noiseless(self, bank, rng):
        cs = make_circular_set(build_code(rng.choice([-1, 1], 128)), 128)
        idx = np.repeat(np.arange(128), 2)
        sgn = np.tile([1, -1], 128)
        bits = biorth_bits(idx, sgn, 128)
        f = TxFrame(BIORTH, np.concatenate([np.zeros(8 * 16, np.int8), bits,
                                            np.zeros(8 * 16, np.int8)]), M=128)
        ch = analyze(bank, synthesize(bank, cs, f), f.n_intervals)
        det = detect(cs, correlate(cs, ch))
        keep = slice(16, 16 + 256)
        np.testing.assert_array_equal(det.index[keep], idx)
        np.testing.assert_array_equal(det.sign[keep], sgn)
        assert np.all(det.soft[keep] > 0)

    def test_tie_breaks_to_lowest_index(self):
        cs = make_hadamard_set(build_code(np.ones(4)), 4)
        y = (cs.active_gains[1] + cs.active_gains[3]) / 2
        assert detect(cs, correlate(cs, y)).index.item() == 1


class TestNoiseStatistics:
    def test_unbiased_and_white(self, small_bank, rng):
        code = build_code(rng.choice([-1, 1], 16))
        cs = make_circular_set(code, 1)
        n = 10000
        f = TxFrame(BIORTH, np.zeros(n, np.int8), M=1)
        x = synthesize(small_bank, cs, f)
        y = awgn(x, 6.0, 1, seed=11)
        ch = analyze(small_bank, y, n).chips[16:-16]
        w = ch - code.zeta
        var = y.meta["n0"] / 2 / x.meta["tx_gain"] ** 2
        se = np.sqrt(var / w.shape[0])
        assert np.abs(w.mean(axis=0)).max() < 4 * se
        C = np.cov(w.T) / var
        assert np.abs(np.diag(C) - 1).max() < 5 * np.sqrt(2 / w.shape[0])
        off = C[~np.eye(16, dtype=bool)]
        assert np.abs(off).max() < 5 / np.sqrt(w.shape[0])

    def test_processing_gain(self, bank, rng):
        code = build_code(rng.choice([-1, 1], 128))
        n = 3000
        f = random_frame(QPSK, n, seed=5)
        y = awgn(synthesize(bank, code, f), 0.0, 2, seed=6)
        ch = analyze(bank, y, n)
        keep = slice(16, n - 16)
        s = f.qpsk_symbols[keep]
        chip_err = ch.despun[keep] - s[:, None] * code.zeta
        sym_err = despread_qpsk(code, ch)[keep] - s
        chip_snr = 1 / np.mean(np.abs(chip_err) ** 2)
        out_snr = 1 / np.mean(np.abs(sym_err) ** 2)
        assert 10 * np.log10(out_snr / chip_snr) == pytest.approx(10 * np.log10(128), abs=0.2)


def test_sent_chips(small_bank, rng):
    cs = make_circular_set(build_code(rng.choice([-1, 1], 16)), 4)
    f = random_frame(BIORTH, 5, M=4, seed=1)
    z = sent_chips(cs, f)
    np.testing.assert_array_equal(frame_gains(cs, f), z * cs.base.gamma / cs.base.zeta)
    with pytest.raises(OfmtError):
        sent_chips(cs.base, f)
