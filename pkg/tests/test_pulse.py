import numpy as np
import pytest

from ofmtss.codes import build_code
from ofmtss.errors import DesignError, OfmtError
from ofmtss.pulse import (WaveformConfig, aligned_term, beta_bar, compute_d, cross_term,
                          cross_term_direct, design_prototype, fmt_pulse, fmt_response,
                          ofmt_pulse, pulse_spectrum, srrc, system_response)


def test_config_invariants():
    cfg = WaveformConfig()
    assert (cfg.L, cfg.samples_per_symbol, cfg.sample_rate) == (128, 256, 256.0)
    for bad in (dict(N=0), dict(alpha=0.0), dict(alpha=1.5), dict(oversample=1),
                dict(span_symbols=3), dict(T=2.0)):
        with pytest.raises(OfmtError):
            WaveformConfig(**bad)


def test_srrc_matches_raised_cosine_spectrum():
    # |H(f)|^2 of the SRRC is the raised cosine, 1/2 at the band edge
    for alpha in (0.25, 0.5, 1.0):
        fs = 32
        t = np.arange(-64 * fs, 64 * fs + 1) / fs
        h = srrc(t, alpha)
        f = np.array([0.0, 0.5])
        H = np.exp(-2j * np.pi * np.outer(f, t)) @ h / fs
        P = np.abs(H) ** 2
        assert P[1] / P[0] == pytest.approx(0.5, abs=2e-3)
        assert 10 * np.log10(P[1] / P[0]) == pytest.approx(-3.01, abs=0.02)


class TestPrototype:
    def test_h_real_even_unit_energy(self, bank):
        h = bank.h
        assert np.all(h.samples.imag == 0)
        np.testing.assert_allclose(h.samples, h.samples[::-1], atol=1e-15)
        assert h.energy() == pytest.approx(1.0, rel=1e-12)

    def test_rho_is_nyquist(self, bank):
        rho = bank.rho
        assert rho.at(0).real == pytest.approx(1.0, rel=1e-12)
        vals = [abs(rho.at(n)) for n in range(1, 2 * bank.cfg.span_symbols + 1)]
        assert max(vals) < bank.nyquist_tol
        assert bank.nyquist_leakage == pytest.approx(max(vals), rel=1e-9)

    def test_grids(self, bank):
        assert len(bank.ofmt_freqs) == 128
        np.testing.assert_allclose(np.diff(bank.ofmt_freqs), 1.0)
        assert len(bank.fmt_freqs) == 64
        np.testing.assert_allclose(np.diff(bank.fmt_freqs), 2.0)
        np.testing.assert_allclose(bank.ofmt_freqs, -bank.ofmt_freqs[::-1])

    def test_short_span_reports_leakage(self):
        with pytest.raises(DesignError) as exc:
            design_prototype(WaveformConfig(alpha=0.25))
        assert exc.value.achieved > 1e-4

    def test_polyphase_rows(self, bank):
        P = bank.polyphase
        ps = bank.cfg.samples_per_symbol
        assert P.shape == (2 * bank.cfg.span_symbols + 1, ps)
        assert P[bank.cfg.span_symbols, 0] == pytest.approx(bank.h.at(0).real)


class TestD:
    def test_zero_phase(self, bank):
        d = compute_d(bank)
        dp = d.samples * np.exp(-1j * np.pi * d.t)
        assert np.abs(dp.imag).max() < 1e-9 * np.abs(d.samples).max()

    def test_real_at_integers(self, bank):
        d = compute_d(bank)
        for n in range(-5, 6):
            v = d.at(n) * np.exp(-1j * np.pi * n)
            assert abs(v.imag) < 1e-9 * np.abs(d.samples).max()

    def test_shrinks_with_rolloff(self):
        norms = []
        for alpha, span in ((1.0, 16), (0.5, 32), (0.25, 64)):
            b = design_prototype(WaveformConfig(N=4, alpha=alpha, span_symbols=span),
                                 nyquist_tol=1e-3)
            norms.append(np.abs(b.d.samples).max())
        assert norms[0] > norms[1] > norms[2]


class TestPulses:
    def test_degenerate_single_tone(self):
        b = design_prototype(WaveformConfig(N=1))
        g = ofmt_pulse(b, np.array([1.0, 0.0]))
        expect = b.h.samples.real * np.exp(2j * np.pi * b.ofmt_freqs[0] * b.h.t)
        np.testing.assert_allclose(g.samples, expect, atol=1e-14)

    def test_energy_is_L(self, bank, rng):
        code = build_code(rng.choice([-1, 1], 128))
        assert ofmt_pulse(bank, code).energy() / bank.h.energy() == pytest.approx(128, rel=0.01)

    def test_length_mismatch(self, bank):
        with pytest.raises(OfmtError):
            ofmt_pulse(bank, np.ones(64))

    def test_fmt_three_sinc_shape(self):
        b = design_prototype(WaveformConfig(N=16))
        eta = fmt_response(b, np.exp(1j * np.pi * np.arange(16) ** 2 / 16))
        mag = np.abs(eta.samples)
        t = eta.t
        near = lambda c: mag[np.abs(t - c) < 0.05].max()
        # local maxima at -T/2, 0, T/2 dominate the surroundings
        assert near(0) == pytest.approx(mag.max())
        for c in (-0.5, 0.5):
            assert near(c) > 3 * mag[(np.abs(t - c) > 0.2) & (np.abs(t - c) < 0.3)].max()

    def test_fmt_pulse_length_check(self, bank):
        with pytest.raises(OfmtError):
            fmt_pulse(bank, np.ones(128))


class TestAligned:
    def test_peak_is_L(self, bank):
        a = aligned_term(bank)
        assert a.at(0).real == pytest.approx(128, rel=1e-12)

    def test_zero_crossings_at_T_over_L(self, bank):
        a = aligned_term(bank)
        vals = [abs(a.at(n / 128)) for n in range(1, 4 * 128) if n % 128]
        assert max(vals) < 1e-3 * 128

    def test_no_peaks_at_half_T(self, bank):
        a = aligned_term(bank)
        assert abs(a.at(0.5)) < 1e-3 * 128

    def test_beta_bar_closed_form(self, bank):
        t = np.array([0.0, 0.013, 0.25, 1.0, 2.0, -3.0])
        direct = np.exp(2j * np.pi * np.outer(t, bank.ofmt_freqs)).sum(axis=1)
        np.testing.assert_allclose(beta_bar(bank, t), direct, atol=1e-9)


class TestCrossTerm:
    def test_ici_free_code_vanishes(self, bank, rng):
        code = build_code(rng.choice([-1, 1], 128))
        c = cross_term(bank, code)
        assert np.abs(c.samples).max() / 128 < bank.ici_tol

    def test_equal_gains_give_ici(self, bank):
        c = cross_term(bank, np.ones(128))
        assert np.abs(c.samples).max() > 1.0

    @pytest.mark.parametrize("kind", ["binary", "phases"])
    def test_factored_matches_direct(self, small_bank, rng, kind):
        if kind == "binary":
            g = build_code(rng.choice([-1, 1], 16)).gamma
        else:
            g = np.exp(2j * np.pi * rng.random(16))
        f = cross_term(small_bank, g)
        d = cross_term_direct(small_bank, g)
        assert f.origin_index == d.origin_index
        assert np.abs(f.samples - d.samples).max() <= 1e-9 * np.abs(d.samples).max()


class TestSystemResponse:
    def test_equals_aligned_for_ici_free(self, small_bank, rng):
        code = build_code(rng.choice([-1, 1], 16))
        eta = system_response(small_bank, code)
        a = aligned_term(small_bank)
        assert eta.origin_index == a.origin_index
        assert np.abs(eta.samples - a.samples).max() / 16 < small_bank.ici_tol
        assert eta.at(0).real == pytest.approx(16, rel=0.01)

    def test_decomposition_with_ici(self, small_bank, rng):
        g = np.exp(2j * np.pi * rng.random(16))
        eta = system_response(small_bank, g)
        a = aligned_term(small_bank)
        c = cross_term(small_bank, g)
        assert np.abs(eta.samples - a.samples - c.samples).max() < 1e-3 * 16

    def test_conjugate_symmetry(self, small_bank, rng):
        eta = system_response(small_bank, np.exp(2j * np.pi * rng.random(16))).samples
        np.testing.assert_allclose(eta[::-1], np.conj(eta), atol=1e-10)


def test_pulse_spectrum_flat_for_ici_free(bank, rng):
    code = build_code(rng.choice([-1, 1], 128))
    f, P = pulse_spectrum(bank, code)
    alpha = bank.cfg.alpha
    inner = np.abs(f) <= (128 - 1) / 2 + 0.5 - alpha
    band = P[inner]
    assert np.abs(10 * np.log10(band / band.mean())).max() < 0.5
