import math

import numpy as np
import pytest

from nvscan.pulses import (CoherenceModel, DCWaveform, MWPulse, ReadoutModel,
                           SampledWaveform, SinusoidWaveform,
                           accumulated_phase, apply_coherence, build_sequence,
                           extract_phase, four_block_rates, measure_phases,
                           phase_dc, phase_matched_sinusoid, ramsey_train,
                           simulate_readout, trace_dump)
from nvscan.rng import derive_rng

D_PERP = 0.17


def brute_force_phase(seq, fn, d_perp=D_PERP, n=60001):
    """Independent oracle: dense trapezoid of s(t) * E(t), segment by segment."""
    edges = np.concatenate([[0.0], np.asarray(seq.toggle_times), [seq.tau]])
    total, sign = 0.0, 1.0
    for a, b in zip(edges[:-1], edges[1:]):
        ts = np.linspace(a, b, n)
        total += sign * np.trapezoid(fn(ts), ts)
        sign = -sign
    return 2 * math.pi * d_perp * total


class TestBuildSequence:
    def test_ramsey_structure(self):
        seq = build_sequence("ramsey", 0.8)
        assert seq.n_pi == 0
        pulses = [e for e in seq.elements if isinstance(e, MWPulse)]
        assert len(pulses) == 2
        assert all(p.angle == pytest.approx(math.pi / 2) for p in pulses)
        assert np.all(seq.sign(np.linspace(0, 0.8, 50)) == 1.0)

    def test_xy4_pulse_positions(self):
        seq = build_sequence("xy4", 8.0)
        assert np.allclose(seq.toggle_times, [1.0, 3.0, 5.0, 7.0])
        phases = [e.phase for e in seq.elements if isinstance(e, MWPulse)
                  and e.angle == pytest.approx(math.pi)]
        assert phases == [0.0, math.pi / 2, 0.0, math.pi / 2]

    def test_xy8_phase_pattern(self):
        seq = build_sequence("xy8", 8.0)
        x, y = 0.0, math.pi / 2
        phases = [e.phase for e in seq.elements if isinstance(e, MWPulse)
                  and e.angle == pytest.approx(math.pi)]
        assert phases == [x, y, x, y, y, x, y, x]

    def test_cpmg2_sign_pattern(self):
        seq = build_sequence("cpmg", 4.0, order=2)
        signs = seq.sign(np.array([0.5, 2.0, 3.5]))
        assert list(signs) == [1.0, -1.0, 1.0]

    def test_matched_frequency(self):
        assert build_sequence("xy4", 8.0).matched_frequency() == pytest.approx(0.25)
        assert build_sequence("ramsey", 1.0).matched_frequency() == 0.0

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            build_sequence("xy16", 8.0)
        with pytest.raises(ValueError):
            build_sequence("xy4", -1.0)
        with pytest.raises(ValueError):
            build_sequence("cpmg", 8.0, order=0)


class TestAccumulatedPhase:
    def test_ramsey_dc_closed_form(self):
        seq = build_sequence("ramsey", 0.8)
        phi = accumulated_phase(seq, DCWaveform(1.0), D_PERP)
        assert phi == pytest.approx(2 * math.pi * 0.17 * 0.8, abs=1e-9)
        assert phi == pytest.approx(phase_dc(1.0, 0.8, D_PERP), abs=1e-9)
        assert phi == pytest.approx(0.8545, abs=2e-4)

    def test_xy4_matched_in_phase(self):
        seq = build_sequence("xy4", 8.0)
        w = SinusoidWaveform(amplitude=0.7, frequency=0.25, phase=0.0)
        phi = accumulated_phase(seq, w, D_PERP)
        assert phi == pytest.approx(phase_matched_sinusoid(0.7, 8.0, D_PERP), abs=1e-9)
        assert phi == pytest.approx(brute_force_phase(seq, w.value), abs=1e-6)

    def test_xy4_out_of_phase_null(self):
        seq = build_sequence("xy4", 8.0)
        w = SinusoidWaveform(amplitude=0.7, frequency=0.25, phase=math.pi / 2)
        assert abs(accumulated_phase(seq, w, D_PERP)) < 1e-9

    def test_matched_filter_phase_sweep(self):
        # phi(offset) is sinusoidal: max at 0, null at pi/2
        seq = build_sequence("xy4", 8.0)
        offsets = np.linspace(0, 2 * math.pi, 17)
        phis = [accumulated_phase(
            seq, SinusoidWaveform(1.0, 0.25, phase=-o), D_PERP) for o in offsets]
        peak = phase_matched_sinusoid(1.0, 8.0, D_PERP)
        assert np.allclose(phis, peak * np.cos(offsets), atol=1e-8)

    def test_dc_rejection_balanced_sequences(self):
        for kind, order in (("spin_echo", 1), ("xy4", 1), ("xy8", 1), ("cpmg", 2)):
            seq = build_sequence(kind, 6.0, order=order)
            assert abs(accumulated_phase(seq, DCWaveform(3.0), D_PERP)) < 1e-9

    def test_linearity_in_amplitude(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            kind = rng.choice(["ramsey", "spin_echo", "xy4", "cpmg"])
            tau = float(rng.uniform(1.0, 10.0))
            order = int(rng.integers(1, 4))
            seq = build_sequence(str(kind), tau, order=order)
            f = float(rng.uniform(0.05, 2.0))
            ph = float(rng.uniform(0, 2 * math.pi))
            a = float(rng.uniform(0.1, 5.0))
            base = accumulated_phase(seq, SinusoidWaveform(1.0, f, ph), D_PERP)
            scaled = accumulated_phase(seq, SinusoidWaveform(a, f, ph), D_PERP)
            assert scaled == pytest.approx(a * base, abs=1e-9)

    def test_quadrature_vs_brute_force_random(self):
        rng = np.random.default_rng(5)
        for _ in range(4):
            tau = float(rng.uniform(2.0, 9.0))
            seq = build_sequence("xy4", tau)
            f = float(rng.uniform(0.05, 1.0))
            ph = float(rng.uniform(0, 2 * math.pi))
            w = SinusoidWaveform(1.3, f, ph)
            assert accumulated_phase(seq, w, D_PERP) == pytest.approx(
                brute_force_phase(seq, w.value), abs=1e-5)

    def test_sampled_waveform_integral(self):
        seq = build_sequence("ramsey", 1.0)
        ts = np.linspace(-0.5, 2.0, 2501)
        w = SampledWaveform(ts, 2.0 * ts)  # E = 2t
        phi = accumulated_phase(seq, w, D_PERP, t0=0.0)
        assert phi == pytest.approx(2 * math.pi * D_PERP * 1.0, rel=1e-12)

    def test_sampled_waveform_span_error(self):
        seq = build_sequence("ramsey", 1.0)
        w = SampledWaveform(np.array([0.0, 0.5]), np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            accumulated_phase(seq, w, D_PERP)

    def test_sampled_times_validation(self):
        with pytest.raises(ValueError):
            SampledWaveform(np.array([0.0, 0.0, 1.0]), np.zeros(3))


class TestRamseyTrain:
    def test_dc_gives_equal_samples(self):
        out = ramsey_train(4.0, 4.0, 10, 0.8, DCWaveform(0.5), D_PERP)
        phis = [p for _, p in out]
        assert np.allclose(phis, phis[0])
        assert phis[0] == pytest.approx(phase_dc(0.5, 0.8, D_PERP), abs=1e-9)

    def test_sinusoid_sampling_with_window_correction(self):
        f_mhz = 0.004  # 4 kHz
        tau = 0.8
        w = SinusoidWaveform(1.0, f_mhz, 0.0)
        out = ramsey_train(4.0, 4.0, 60, tau, w, D_PERP)
        ts = np.array([t for t, _ in out])
        phis = np.array([p for _, p in out])
        window = math.sin(math.pi * f_mhz * tau) / (math.pi * f_mhz * tau)
        expect = (2 * math.pi * D_PERP * tau * window
                  * np.cos(2 * math.pi * f_mhz * ts))
        assert np.allclose(phis, expect, atol=1e-9)

    def test_midpoint_vs_exact_below_tenth_percent(self):
        w = SinusoidWaveform(1.0, 0.004, 0.3)
        exact = np.array([p for _, p in ramsey_train(4.0, 4.0, 30, 0.8, w, D_PERP)])
        mid = np.array([p for _, p in ramsey_train(4.0, 4.0, 30, 0.8, w, D_PERP,
                                                   midpoint=True)])
        assert np.max(np.abs(exact - mid)) / np.max(np.abs(exact)) < 1e-3

    def test_spacing_validation(self):
        with pytest.raises(ValueError):
            ramsey_train(4.0, 0.5, 10, 0.8, DCWaveform(1.0), D_PERP)


class TestCoherence:
    def test_short_time_limit(self):
        m = CoherenceModel()
        assert apply_coherence(build_sequence("ramsey", 1e-6), m) == pytest.approx(1.0)
        assert apply_coherence(build_sequence("xy4", 1e-6), m) == pytest.approx(1.0)

    def test_at_t2_gives_inverse_e(self):
        m = CoherenceModel(t2_base=10.0, pulse_scaling_s=0.5, stretch_p=1.5)
        t2_4 = 10.0 * 4**0.5
        env = apply_coherence(build_sequence("xy4", t2_4), m)
        assert env == pytest.approx(math.exp(-1.0), rel=1e-12)
        env_star = apply_coherence(build_sequence("ramsey", m.t2_star), m)
        assert env_star == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_more_pulses_keep_coherence(self):
        m = CoherenceModel()
        tau = 12.0
        e1 = apply_coherence(build_sequence("cpmg", tau, order=1), m)
        e4 = apply_coherence(build_sequence("xy4", tau), m)
        assert e4 >= e1

    def test_invalid_model(self):
        with pytest.raises(ValueError):
            CoherenceModel(t2_star=0.0)


class TestReadout:
    def readout(self, noise=False):
        return ReadoutModel(f0=1e5, contrast=0.2, t_r=0.2, t_ini=2.0,
                            shot_noise=noise, seed=3)

    def test_zero_phase_y_projection(self):
        rate, _ = simulate_readout(0.0, math.pi / 2, 1.0, self.readout(), 1)
        assert rate == pytest.approx(1e5 * (1 - 0.2 / 2))

    def test_quarter_phase_y_projection(self):
        rate, _ = simulate_readout(math.pi / 2, math.pi / 2, 1.0, self.readout(), 1)
        assert rate == pytest.approx(1e5 * (1 - 0.2))

    def test_poisson_statistics(self):
        rm = self.readout(noise=True)
        rng = derive_rng(1, 42)
        counts = np.array([simulate_readout(0.3, 0.0, 1.0, rm, 100, rng)[1]
                           for _ in range(10000)])
        assert abs(counts.var() / counts.mean() - 1.0) < 0.05

    def test_invalid_n_avg(self):
        with pytest.raises(ValueError):
            simulate_readout(0.0, 0.0, 1.0, self.readout(), 0)

    def test_model_validation(self):
        with pytest.raises(ValueError):
            ReadoutModel(contrast=1.5)
        with pytest.raises(ValueError):
            ReadoutModel(t_r=-1.0)


class TestExtractPhase:
    def test_sign_structure(self):
        assert extract_phase(1.0, 1.0, 0.8, 1.2) == pytest.approx(math.pi / 2)

    def test_round_trip_noiseless(self):
        rm = ReadoutModel(shot_noise=False)
        f1, f2, f3, f4 = four_block_rates(0.3, 1.0, rm, 1000)
        assert extract_phase(f1, f2, f3, f4) == pytest.approx(0.3, abs=1e-12)

    def test_round_trip_full_branch(self):
        rm = ReadoutModel(shot_noise=False)
        for phi in np.linspace(-math.pi + 1e-6, math.pi, 41):
            rates = four_block_rates(float(phi), 0.7, rm, 10)
            assert extract_phase(*rates) == pytest.approx(phi, abs=1e-12)

    def test_reconstructed_quadratures_normalized(self):
        rm = ReadoutModel(shot_noise=False)
        phi = extract_phase(*four_block_rates(1.1, 1.0, rm, 10))
        assert math.cos(phi) ** 2 + math.sin(phi) ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_dead_readout_rejected(self):
        with pytest.raises(ValueError):
            extract_phase(0.0, 0.0, 1.0, 1.0)

    def test_envelope_cancels(self):
        rm = ReadoutModel(shot_noise=False)
        for env in (1.0, 0.5, 0.05):
            rates = four_block_rates(-1.2, env, rm, 10)
            assert extract_phase(*rates) == pytest.approx(-1.2, abs=1e-12)

    def test_out_of_branch_phase_wraps(self):
        # phases beyond (-pi, pi] come back wrapped: instrument behavior
        rm = ReadoutModel(shot_noise=False)
        rates = four_block_rates(math.pi + 0.3, 1.0, rm, 10)
        assert extract_phase(*rates) == pytest.approx(-math.pi + 0.3, abs=1e-12)


def test_measure_phases_deterministic():
    rm = ReadoutModel(shot_noise=True, seed=9)
    phis = np.linspace(-0.4, 0.4, 7)
    a = measure_phases(phis, 0.8, rm, 500, seed=9, stream=(2,))
    b = measure_phases(phis, 0.8, rm, 500, seed=9, stream=(2,))
    assert np.array_equal(a, b)
    c = measure_phases(phis, 0.8, rm, 500, seed=10, stream=(2,))
    assert not np.array_equal(a, c)


def test_trace_dump_format():
    seq = build_sequence("xy4", 8.0)
    text = trace_dump(seq, SinusoidWaveform(1.0, 0.25), n_points=16)
    lines = text.strip().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == 17
    t, s, e = lines[1].split("\t")
    assert float(t) == 0.0 and s in ("+1", "-1")
