import math

import numpy as np
import pytest

from nvscan.analysis import (SensitivityParams, monte_carlo_sensitivity,
                             sensitivity_ac, sensitivity_gradient, sine_fit,
                             snr)
from nvscan.pulses import ReadoutModel, SinusoidWaveform, ramsey_train, measure_phases
from nvscan.pulses import build_sequence, apply_coherence, CoherenceModel

PAPER_PARAMS = SensitivityParams(f=1e5, contrast=0.2, t_r=0.2, t_ini=2.0,
                                 tau=8.0, d_perp=0.17)


class TestSineFit:
    def test_pure_cosine_exact(self):
        t = np.linspace(0, 500.0, 64)
        y = 2.0 * np.cos(2 * math.pi * 0.012 * t) + 1.0  # 12 kHz
        fit = sine_fit(t, y, 12.0)
        assert fit.amplitude == pytest.approx(2.0, abs=1e-10)
        assert fit.phase == pytest.approx(0.0, abs=1e-10)
        assert fit.offset == pytest.approx(1.0, abs=1e-10)
        assert fit.residual_rms < 1e-10

    def test_constant_gives_zero_amplitude(self):
        t = np.linspace(0, 400.0, 32)
        fit = sine_fit(t, np.full_like(t, 3.3), 4.0)
        assert fit.amplitude == pytest.approx(0.0, abs=1e-10)
        assert fit.offset == pytest.approx(3.3, abs=1e-12)

    def test_random_parameters_exact(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            f = float(rng.uniform(1.0, 100.0))      # kHz
            amp = float(rng.uniform(0.1, 5.0))
            ph = float(rng.uniform(-math.pi, math.pi))
            off = float(rng.uniform(-2, 2))
            t = np.sort(rng.uniform(0, 3e3 / f, 40))
            y = amp * np.cos(2 * math.pi * f * 1e-3 * t - ph) + off
            fit = sine_fit(t, y, f)
            assert fit.amplitude == pytest.approx(amp, abs=1e-9)
            assert fit.phase == pytest.approx(ph, abs=1e-9)
            assert fit.offset == pytest.approx(off, abs=1e-9)

    def test_rank_deficient_rejected(self):
        # all samples at the same signal phase: one period apart
        t = np.arange(8) * (1e3 / 4.0)
        y = np.ones_like(t)
        with pytest.raises(ValueError):
            sine_fit(t, y, 4.0)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            sine_fit([0, 1, 2], [1, 2, 3], 10.0)
        with pytest.raises(ValueError):
            # 4 samples but spanning far less than half a period
            sine_fit([0, 1, 2, 3], [1, 2, 3, 4], 1.0)

    def test_30khz_train_round_trip(self):
        # ~8 samples per period at 30 kHz is still enough for the fit
        f_khz = 30.0
        w = SinusoidWaveform(0.7, f_khz * 1e-3, 0.4)
        train = ramsey_train(4.0, 4.0, 60, 0.8, w, 0.17)
        times = np.array([t for t, _ in train])
        phis = np.array([p for _, p in train])
        fit = sine_fit(times, phis, f_khz)
        tau = 0.8
        window = math.sin(math.pi * f_khz * 1e-3 * tau) / (math.pi * f_khz * 1e-3 * tau)
        assert fit.amplitude == pytest.approx(
            2 * math.pi * 0.17 * 0.7 * tau * window, rel=1e-9)
        assert fit.phase == pytest.approx(-0.4, abs=1e-9)

    def test_shot_noise_coverage(self):
        # Ramsey train at 12 kHz -> fitted amplitude within 3 standard
        # errors of the truth in >= 99% of seeded trials
        f_khz, tau, d_perp = 12.0, 0.8, 0.17
        w = SinusoidWaveform(1.0, f_khz * 1e-3, 0.0)
        train = ramsey_train(4.0, 4.0, 60, tau, w, d_perp)
        times = np.array([t for t, _ in train])
        phis = np.array([p for _, p in train])
        truth = sine_fit(times, phis, f_khz).amplitude
        rm = ReadoutModel(shot_noise=True)
        env = apply_coherence(build_sequence("ramsey", tau), CoherenceModel())
        hits = 0
        n_trials = 300
        for trial in range(n_trials):
            meas = measure_phases(phis, env, rm, 10000, seed=trial, stream=(5,))
            fit = sine_fit(times, meas, f_khz)
            if abs(fit.amplitude - truth) <= 3 * fit.amplitude_err:
                hits += 1
        assert hits / n_trials >= 0.99


class TestClosedForms:
    def test_snr_at_sensitivity_is_unity(self):
        eta = sensitivity_ac(PAPER_PARAMS)
        assert snr(PAPER_PARAMS, eta) == pytest.approx(1.0, rel=1e-12)

    def test_snr_linearity(self):
        assert snr(PAPER_PARAMS, 0.2) == pytest.approx(2 * snr(PAPER_PARAMS, 0.1),
                                                       rel=1e-12)

    def test_snr_fixture(self):
        assert snr(PAPER_PARAMS, 0.1) == pytest.approx(3.82, abs=0.01)

    def test_sensitivity_fixture_26mv(self):
        eta = sensitivity_ac(PAPER_PARAMS)
        assert eta * 1e3 == pytest.approx(26.0, rel=0.01)

    def test_sensitivity_diverges_with_vanishing_contrast(self):
        small = SensitivityParams(contrast=1e-6)
        big = SensitivityParams(contrast=0.5)
        assert sensitivity_ac(small) > 1e4 * sensitivity_ac(big)

    def test_doubling_tau_limit(self):
        # with t_ini << tau, eta(2 tau)/eta(tau) -> 1/sqrt(2)
        p1 = SensitivityParams(t_ini=1e-6, tau=8.0)
        p2 = SensitivityParams(t_ini=1e-6, tau=16.0)
        assert sensitivity_ac(p2) / sensitivity_ac(p1) == pytest.approx(
            1 / math.sqrt(2), rel=1e-4)

    def test_gradient_fixture(self):
        eta = sensitivity_ac(PAPER_PARAMS)
        assert sensitivity_gradient(eta, 0.013) == pytest.approx(2.0, rel=0.01)

    def test_gradient_scaling_and_domain(self):
        assert sensitivity_gradient(0.026, 0.026) == pytest.approx(
            2 * sensitivity_gradient(0.026, 0.052), rel=1e-12)
        with pytest.raises(ValueError):
            sensitivity_gradient(0.026, 0.0)

    def test_inverse_identity(self):
        # eta * sqrt(F T_r/(t_ini+tau)) * pi d_perp tau C = 1 identically
        rng = np.random.default_rng(4)
        for _ in range(10):
            p = SensitivityParams(
                f=float(rng.uniform(1e4, 1e6)),
                contrast=float(rng.uniform(0.05, 0.5)),
                t_r=float(rng.uniform(0.05, 1.0)),
                t_ini=float(rng.uniform(0.5, 5.0)),
                tau=float(rng.uniform(1.0, 50.0)),
                d_perp=float(rng.uniform(0.05, 0.3)))
            eta = sensitivity_ac(p)
            prod = (eta * math.sqrt(p.f * p.t_r / (p.t_ini + p.tau))
                    * math.pi * p.d_perp * p.tau * p.contrast)
            assert prod == pytest.approx(1.0, rel=1e-12)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            SensitivityParams(contrast=0.0)
        with pytest.raises(ValueError):
            SensitivityParams(tau=-1.0)


class TestMonteCarlo:
    def test_noiseless_matches_formula(self):
        rm = ReadoutModel(shot_noise=False, seed=0)
        mc = monte_carlo_sensitivity(PAPER_PARAMS, rm, trials=100)
        assert mc.eta == pytest.approx(sensitivity_ac(PAPER_PARAMS), rel=0.01)

    def test_with_shot_noise_within_15_percent(self):
        rm = ReadoutModel(shot_noise=True, seed=12)
        mc = monte_carlo_sensitivity(PAPER_PARAMS, rm, trials=10000)
        assert mc.eta == pytest.approx(sensitivity_ac(PAPER_PARAMS), rel=0.15)
        assert mc.eta_err > 0

    def test_halving_rate_inflates_by_sqrt2(self):
        rm = ReadoutModel(shot_noise=True, seed=5)
        full = monte_carlo_sensitivity(PAPER_PARAMS, rm, trials=20000)
        half_params = SensitivityParams(f=5e4, contrast=0.2, t_r=0.2,
                                        t_ini=2.0, tau=8.0, d_perp=0.17)
        half = monte_carlo_sensitivity(half_params, rm, trials=20000)
        ratio = half.eta / full.eta
        err = ratio * math.hypot(full.eta_err / full.eta, half.eta_err / half.eta)
        assert abs(ratio - math.sqrt(2)) < max(3 * err, 0.02 * math.sqrt(2))

    def test_error_decreases_with_trials(self):
        rm = ReadoutModel(shot_noise=True, seed=21)
        errs = [monte_carlo_sensitivity(PAPER_PARAMS, rm, trials=n).eta_err
                for n in (400, 4000, 40000)]
        assert errs[0] > errs[1] > errs[2]

    def test_converges_toward_closed_form(self):
        rm = ReadoutModel(shot_noise=True, seed=33)
        target = sensitivity_ac(PAPER_PARAMS)
        devs = [abs(monte_carlo_sensitivity(PAPER_PARAMS, rm, trials=n).eta - target)
                for n in (500, 50000)]
        assert devs[1] < max(devs[0], 0.06 * target)

    def test_minimum_trials_enforced(self):
        with pytest.raises(ValueError):
            monte_carlo_sensitivity(PAPER_PARAMS, ReadoutModel(), trials=50)
