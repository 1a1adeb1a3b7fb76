import math

import numpy as np
import pytest

from dtcsim.analysis import (
    AnalysisError,
    FitError,
    GaussianFit,
    cosine_power_envelope,
    crystalline_fraction,
    decay_time,
    echo_peak,
    fit_gaussian,
    region_half_width,
    spectrum,
)

PI = math.pi


def brute_force_dft(values):
    """Independent O(N^2) DFT oracle."""
    n = len(values)
    out = np.zeros(n, dtype=complex)
    for k in range(n):
        for m in range(n):
            out[k] += values[m] * np.exp(-2j * PI * k * m / n)
    return out


class TestSpectrum:
    def test_alternation_concentrates_at_nyquist(self):
        s = (-1.0) ** np.arange(32)
        spec = spectrum(s, (0, 32))
        assert np.argmax(spec.power) == len(spec.power) - 1
        assert spec.nu_tilde[-1] == 0.5
        assert spec.power[-1] == pytest.approx(np.sum(s**2), rel=1e-12)

    def test_constant_concentrates_at_dc(self):
        s = np.ones(16)
        spec = spectrum(s, (0, 16))
        assert np.argmax(spec.power) == 0
        assert spec.power[0] == pytest.approx(16.0, rel=1e-12)

    def test_matches_brute_force_dft(self):
        rng = np.random.default_rng(5)
        s = rng.normal(size=24)
        spec = spectrum(s, (0, 24))
        oracle = brute_force_dft(s)
        np.testing.assert_allclose(spec.amplitude, oracle[:13], atol=1e-9)

    def test_parseval(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = int(rng.integers(2, 40)) * 2
            s = rng.normal(size=n)
            spec = spectrum(s, (0, n))
            assert np.sum(spec.power) == pytest.approx(np.sum(s**2), rel=1e-9)

    def test_beat_signal_split_peaks(self):
        # cos(N(pi + eps)) has two-sided peaks at 1/2 +- eps/(2pi); frozen
        # against the closed-form DFT of the product signal
        eps = 0.054 * PI
        n = 128
        s = np.cos(np.arange(n) * (PI + eps))
        spec = spectrum(s, (0, n))
        nu, amp = spec.two_sided()
        power = np.abs(amp) ** 2
        lo = np.argmax(power[: n // 2])
        hi = n // 2 + np.argmax(power[n // 2:])
        delta_bins = eps / (2 * PI) * n  # 3.456 bins
        assert abs(lo - (n // 2 - delta_bins)) <= 1.0
        assert abs(hi - (n // 2 + delta_bins)) <= 1.0
        # symmetric about nu = 1/2
        assert lo + hi == pytest.approx(n, abs=1e-9)

    def test_default_window_longest_even_prefix(self):
        s = np.ones(129)
        spec = spectrum(s)
        assert spec.window == (0, 128)

    def test_odd_window_rejected(self):
        with pytest.raises(AnalysisError, match="even"):
            spectrum(np.ones(9), (0, 9))

    def test_window_out_of_range(self):
        with pytest.raises(AnalysisError):
            spectrum(np.ones(10), (4, 8))

    def test_zero_padding_only_on_request(self):
        s = (-1.0) ** np.arange(16)
        plain = spectrum(s, (0, 16))
        padded = spectrum(s, (0, 16), pad_to=64)
        assert len(padded.nu_tilde) == 33
        # Parseval still holds, but the nyquist-bin share is redistributed
        assert np.sum(padded.power) == pytest.approx(np.sum(s**2), rel=1e-9)
        assert crystalline_fraction(padded) < crystalline_fraction(plain)
        with pytest.raises(AnalysisError):
            spectrum(s, (0, 16), pad_to=8)
        with pytest.raises(AnalysisError):
            spectrum(s, (0, 16), pad_to=33)

    def test_mean_subtraction_and_taper_options(self):
        s = np.ones(16) + (-1.0) ** np.arange(16)
        spec = spectrum(s, (0, 16), subtract_mean=True)
        assert spec.power[0] == pytest.approx(0.0, abs=1e-12)
        spec_t = spectrum((-1.0) ** np.arange(16), (0, 16), taper="hann")
        assert np.argmax(spec_t.power) == len(spec_t.power) - 1
        assert spec_t.power[-1] < 16.0  # taper actually reshaped the window
        with pytest.raises(AnalysisError):
            spectrum(s, (0, 16), taper="blackman")


class TestCrystallineFraction:
    def test_pure_alternation(self):
        spec = spectrum((-1.0) ** np.arange(64), (0, 64))
        assert crystalline_fraction(spec) == pytest.approx(1.0, rel=1e-12)

    def test_pure_constant(self):
        spec = spectrum(np.ones(64), (0, 64))
        assert crystalline_fraction(spec) == pytest.approx(0.0, abs=1e-12)

    def test_equal_mixture_gives_half(self):
        # amplitudes a at DC and a at Nyquist put equal power in two bins
        n = 64
        s = 0.5 + 0.5 * (-1.0) ** np.arange(n)
        spec = spectrum(s, (0, n))
        assert crystalline_fraction(spec) == pytest.approx(0.5, rel=1e-12)

    def test_amplitude_scale_invariance(self):
        rng = np.random.default_rng(3)
        s = rng.normal(size=32)
        f1 = crystalline_fraction(spectrum(s, (0, 32)))
        f2 = crystalline_fraction(spectrum(17.3 * s, (0, 32)))
        assert f1 == pytest.approx(f2, rel=1e-12)

    def test_time_reversal_invariance(self):
        rng = np.random.default_rng(4)
        s = rng.normal(size=32)
        f1 = crystalline_fraction(spectrum(s, (0, 32)))
        f2 = crystalline_fraction(spectrum(s[::-1], (0, 32)))
        assert f1 == pytest.approx(f2, rel=1e-9)

    def test_zero_power_rejected(self):
        with pytest.raises(AnalysisError, match="zero"):
            crystalline_fraction(spectrum(np.zeros(16), (0, 16)))


class TestFitGaussian:
    def test_exact_roundtrip(self):
        thetas = np.linspace(0.9 * PI, 1.1 * PI, 21)
        truth = GaussianFit(0.8, PI, 0.05 * PI, 0.0, 0)
        fit = fit_gaussian(thetas, truth.value(thetas))
        assert fit.amplitude == pytest.approx(0.8, abs=1e-8)
        assert fit.center == pytest.approx(PI, abs=1e-8)
        assert fit.sigma == pytest.approx(0.05 * PI, abs=1e-8)

    def test_noisy_recovery_within_ten_percent(self):
        thetas = np.linspace(0.9 * PI, 1.1 * PI, 21)
        truth = GaussianFit(0.8, PI, 0.05 * PI, 0.0, 0)
        clean = truth.value(thetas)
        ok = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            noisy = np.clip(clean + 0.02 * rng.standard_normal(len(thetas)), 0, 1)
            fit = fit_gaussian(thetas, noisy)
            if (
                abs(fit.amplitude - 0.8) <= 0.08
                and abs(fit.center - PI) <= 0.1 * PI
                and abs(fit.sigma - 0.05 * PI) <= 0.005 * PI * 10
            ):
                ok += 1
        assert ok >= 95  # parameters within 10% for essentially every draw

    def test_deterministic(self):
        rng = np.random.default_rng(12)
        thetas = np.linspace(0.9 * PI, 1.1 * PI, 21)
        f = np.clip(0.7 * np.exp(-((thetas - PI) ** 2) / (2 * (0.04 * PI) ** 2))
                    + 0.01 * rng.standard_normal(21), 0, 1)
        a = fit_gaussian(thetas, f)
        b = fit_gaussian(thetas, f)
        assert (a.amplitude, a.center, a.sigma, a.residual) == (
            b.amplitude, b.center, b.sigma, b.residual
        )

    def test_flat_data_rejected(self):
        thetas = np.linspace(0.9 * PI, 1.1 * PI, 9)
        with pytest.raises(FitError, match="flat"):
            fit_gaussian(thetas, np.full(9, 0.3))

    def test_too_few_points(self):
        with pytest.raises(AnalysisError):
            fit_gaussian(np.linspace(0, 1, 4), np.array([0.1, 0.5, 0.4, 0.2]))

    def test_r_squared_of_good_fit(self):
        thetas = np.linspace(0.9 * PI, 1.1 * PI, 21)
        f = 0.9 * np.exp(-((thetas - PI) ** 2) / (2 * (0.06 * PI) ** 2))
        fit = fit_gaussian(thetas, f)
        assert fit.r_squared(thetas, f) > 0.999999


class TestRegionHalfWidth:
    def test_amplitude_at_cutoff_gives_zero(self):
        assert region_half_width(GaussianFit(0.1, PI, 0.05, 0.0, 1), 0.1) == 0.0

    def test_closed_form_value(self):
        width = region_half_width(GaussianFit(0.8, PI, 0.05 * PI, 0.0, 1), 0.1)
        assert width == pytest.approx(0.05 * PI * math.sqrt(2 * math.log(8.0)), rel=1e-12)
        assert width == pytest.approx(0.1020 * PI, abs=2e-4 * PI)

    def test_unit_amplitude_formula(self):
        sigma = 0.07
        width = region_half_width(GaussianFit(1.0, PI, sigma, 0.0, 1), 0.1)
        assert width == pytest.approx(sigma * math.sqrt(2 * math.log(10.0)), rel=1e-12)

    def test_monotone_in_amplitude_and_sigma(self):
        w = lambda a, s: region_half_width(GaussianFit(a, PI, s, 0.0, 1), 0.1)
        amps = np.linspace(0.15, 1.0, 12)
        assert all(w(a2, 0.1) > w(a1, 0.1) for a1, a2 in zip(amps, amps[1:]))
        sigmas = np.linspace(0.01, 0.3, 12)
        assert all(w(0.8, s2) > w(0.8, s1) for s1, s2 in zip(sigmas, sigmas[1:]))


class TestEnvelope:
    def test_zero_epsilon_all_ones(self):
        env = cosine_power_envelope(0.0, 10)
        np.testing.assert_array_equal(env.values, np.ones(11))

    def test_quarter_turn_zeroes(self):
        env = cosine_power_envelope(PI / 2, 5)
        assert env.values[0] == 1.0
        np.testing.assert_allclose(env.values[1:], 0.0, atol=1e-15)

    def test_scalar_value(self):
        # cos(0.08 pi)^10 = 0.72672... (direct scalar arithmetic)
        env = cosine_power_envelope(0.08 * PI, 10)
        assert env.values[10] == pytest.approx(math.cos(0.08 * PI) ** 10, rel=1e-12)
        assert env.values[10] == pytest.approx(0.72672, abs=1e-5)

    def test_monotone_nonincreasing(self):
        env = cosine_power_envelope(0.13, 50)
        assert np.all(np.diff(env.values) <= 0)


class TestDecayTime:
    def test_cosine_power_closed_form(self):
        # the 1/e crossing of cos^N(0.1 pi): continuous solution
        # -1/ln(cos 0.1 pi) = 19.9286; linear interpolation between the
        # bracketing integer samples lands within 0.1 of it
        values = cosine_power_envelope(0.1 * PI, 128).values
        t = decay_time(values)
        assert t == pytest.approx(-1.0 / math.log(math.cos(0.1 * PI)), abs=0.1)
        assert t == pytest.approx(19.93, abs=0.05)

    def test_constant_never_crosses(self):
        assert decay_time(np.ones(64)) == math.inf

    def test_alternating_never_crosses(self):
        assert decay_time((-1.0) ** np.arange(64)) == math.inf

    def test_first_crossing_convention(self):
        # dips below 1/e, recovers, dips again: the first crossing counts
        values = np.array([1.0, 0.9, 0.2, 0.8, 0.1, 0.05])
        t = decay_time(values)
        assert 1.0 < t < 2.0

    def test_requires_normalized_start(self):
        with pytest.raises(AnalysisError):
            decay_time(np.array([0.5, 0.4, 0.3]))


class TestEchoPeak:
    def test_exact_grid_maximum(self):
        n = np.arange(0, 13)
        mz = -np.abs(n - 6.0) + 7.0
        mz = mz / mz.max()
        peak = echo_peak(n, mz, 6)
        assert peak.location == pytest.approx(6.0, abs=1e-9)
        assert peak.offset == pytest.approx(0.0, abs=1e-9)

    def test_symmetric_parabola(self):
        peak = echo_peak([4, 6, 8], [0.3, 0.5, 0.3], 6)
        assert peak.location == pytest.approx(6.0)
        assert peak.amplitude == pytest.approx(0.5)

    def test_monotone_series_has_no_echo(self):
        assert echo_peak([0, 1, 2, 3], [1.0, 0.8, 0.6, 0.4], 2) is None

    def test_needs_three_points(self):
        with pytest.raises(AnalysisError):
            echo_peak([0, 1], [0.1, 0.2], 1)
