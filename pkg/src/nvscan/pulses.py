"""Pulse sequences, phase accumulation and fluorescence readout.

A sequence is a timed list of elements (laser init, microwave pulses, free
evolution, readout window). During free evolution the |0>/|+> superposition
accumulates phase against the electric-field waveform E_zeta(t):

    phi = 2*pi * d_perp * integral s(t) E_zeta(t) dt

where the modulation function s(t) is +1 after the first pi/2 pulse and
flips sign at every pi-pulse center. Time zero of a sequence is the first
pi/2 pulse; waveforms are evaluated at t0 + t for a sequence starting at
absolute time t0.

Readout maps the accumulated phase to a |0>-state probability through the
phase chi of the final pi/2 pulse,

    P = (1 - env * sin(phi + chi - pi/2)) / 2,

so chi = 0 (+x) measures the cosine quadrature and chi = pi/2 (+y) measures
the sine quadrature; env in (0, 1] is the coherence-envelope contrast
multiplier. The four-sequence block rotates the final pulse through
(-x, +x, +y, -y), giving rates F1..F4 from which the phase is recovered as
atan2 of the normalized differences (exact for any contrast, since the
common scale cancels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np
from scipy.integrate import quad

from .rng import derive_rng

__all__ = [
    "LaserInit", "MWPulse", "FreeEvolve", "ReadoutWindow", "PulseSequence",
    "DCWaveform", "SinusoidWaveform", "SampledWaveform", "Waveform",
    "CoherenceModel", "ReadoutModel",
    "build_sequence", "accumulated_phase", "phase_dc", "phase_matched_sinusoid",
    "ramsey_train", "apply_coherence", "simulate_readout", "four_block_rates",
    "extract_phase", "measure_phases", "trace_dump",
]

X_PHASE = 0.0
Y_PHASE = math.pi / 2.0


@dataclass(frozen=True)
class LaserInit:
    duration: float


@dataclass(frozen=True)
class MWPulse:
    phase: float          # rotation-axis phase, rad (0 = x, pi/2 = y)
    angle: float          # nominal rotation angle, rad
    duration: float = 0.0


@dataclass(frozen=True)
class FreeEvolve:
    duration: float


@dataclass(frozen=True)
class ReadoutWindow:
    window: float


@dataclass(frozen=True)
class PulseSequence:
    """Ordered elements plus the derived modulation-function data.

    tau is the total free-evolution time; toggle_times are the pi-pulse
    centers within (0, tau) measured on the free-evolution clock.
    """

    kind: str
    elements: tuple
    tau: float
    final_phase: float
    toggle_times: tuple[float, ...] = field(default=())
    pi_duration: float = 0.0

    def __post_init__(self):
        if not isinstance(self.elements[0], LaserInit):
            raise ValueError("sequence must start with laser initialization")
        if not isinstance(self.elements[-1], ReadoutWindow):
            raise ValueError("sequence must end with a readout window")

    @property
    def n_pi(self) -> int:
        return len(self.toggle_times)

    def sign(self, t):
        """Modulation function s(t), +1 right after the first pi/2 pulse."""
        t = np.asarray(t, dtype=float)
        flips = np.zeros_like(t, dtype=int)
        for tc in self.toggle_times:
            flips = flips + (t >= tc)
        return np.where(flips % 2 == 0, 1.0, -1.0)

    def matched_frequency(self) -> float:
        """Pass-band frequency n_pi/(2 tau) in MHz (0 for Ramsey)."""
        if self.n_pi == 0:
            return 0.0
        return self.n_pi / (2.0 * self.tau)


_XY4_PHASES = (X_PHASE, Y_PHASE, X_PHASE, Y_PHASE)
_XY8_PHASES = (X_PHASE, Y_PHASE, X_PHASE, Y_PHASE,
               Y_PHASE, X_PHASE, Y_PHASE, X_PHASE)


def build_sequence(kind: str, tau: float, final_phase: float = Y_PHASE,
                   order: int = 1, t_init: float = 2.0, t_read: float = 0.2,
                   pi_duration: float = 0.0) -> PulseSequence:
    """Construct a named sequence with equally spaced pi pulses.

    kind   -- 'ramsey', 'spin_echo', 'cpmg' (order = N), 'xy4' or 'xy8'
              (order = number of repetitions of the 4-/8-pulse block)
    tau    -- total free-evolution time, us
    order  -- pulse-count parameter of the family, >= 1

    Pi pulses sit at tau*(2k-1)/(2N) for k = 1..N, so neighbouring pulses
    are tau/N apart and the ends carry half spacings.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if order < 1:
        raise ValueError("order must be >= 1")

    kind = kind.lower().replace("-", "_")
    if kind == "ramsey":
        phases: tuple[float, ...] = ()
    elif kind == "spin_echo":
        phases = (Y_PHASE,)
    elif kind == "cpmg":
        phases = (Y_PHASE,) * order
    elif kind == "xy4":
        phases = _XY4_PHASES * order
    elif kind == "xy8":
        phases = _XY8_PHASES * order
    else:
        raise ValueError(f"unsupported sequence kind {kind!r}")

    n = len(phases)
    centers = tuple(tau * (2 * k + 1) / (2 * n) for k in range(n))

    elements: list = [LaserInit(t_init), MWPulse(X_PHASE, math.pi / 2, pi_duration / 2)]
    prev = 0.0
    for tc, ph in zip(centers, phases):
        elements.append(FreeEvolve(tc - prev))
        elements.append(MWPulse(ph, math.pi, pi_duration))
        prev = tc
    elements.append(FreeEvolve(tau - prev))
    elements.append(MWPulse(final_phase, math.pi / 2, pi_duration / 2))
    elements.append(ReadoutWindow(t_read))

    return PulseSequence(kind=kind, elements=tuple(elements), tau=tau,
                         final_phase=final_phase, toggle_times=centers,
                         pi_duration=pi_duration)


# ---------------------------------------------------------------------------
# Waveforms: the field E_zeta(t) along the maximum-coupling axis, V/um.

@dataclass(frozen=True)
class DCWaveform:
    level: float
    screened: bool = False
    unscreened_level: float | None = None

    def value(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.level)


@dataclass(frozen=True)
class SinusoidWaveform:
    """E(t) = amplitude * cos(2 pi frequency t + phase); frequency in MHz.

    phase = 0 puts a field extremum at t = 0, which is the in-phase
    alignment for a matched dynamical-decoupling sequence.
    """

    amplitude: float
    frequency: float
    phase: float = 0.0
    screened: bool = False

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * np.cos(2.0 * math.pi * self.frequency * t + self.phase)


@dataclass(frozen=True, eq=False)
class SampledWaveform:
    """Linearly interpolated samples; defined only on [times[0], times[-1]]."""

    times: np.ndarray
    values: np.ndarray
    screened: bool = False

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or len(t) < 2:
            raise ValueError("times and values must be matching 1-d arrays")
        if not np.all(np.diff(t) > 0):
            raise ValueError("sample times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]) or np.any(t > self.times[-1]):
            raise ValueError("waveform is undefined over part of the requested span")
        return np.interp(t, self.times, self.values)


Waveform = DCWaveform | SinusoidWaveform | SampledWaveform


def phase_dc(level: float, tau: float, d_perp: float) -> float:
    """Closed form for a Ramsey sequence on a DC field: 2 pi d_perp E tau."""
    return 2.0 * math.pi * d_perp * level * tau


def phase_matched_sinusoid(amplitude: float, tau: float, d_perp: float) -> float:
    """Closed form for an N-pulse sequence on its matched, in-phase sinusoid.

    The rectified overlap integral of s(t) with the matched cosine is
    (2/pi) tau, hence phi = 2 pi d_perp E0 (2/pi) tau = 4 d_perp E0 tau.
    """
    return 4.0 * d_perp * amplitude * tau


def _segment_edges(seq: PulseSequence) -> np.ndarray:
    return np.concatenate([[0.0], np.asarray(seq.toggle_times), [seq.tau]])


def accumulated_phase(seq: PulseSequence, w: Waveform, d_perp: float,
                      t0: float = 0.0, quad_tol: float = 1e-9) -> float:
    """Coherent phase 2 pi d_perp * integral s(t) E(t0 + t) dt, in rad.

    Pi pulses are treated as instantaneous sign flips of s(t) at their
    centers. DC and sinusoid segments go through adaptive quadrature with an
    absolute phase tolerance quad_tol; sampled waveforms are integrated
    exactly on their piecewise-linear interpolant.
    """
    edges = _segment_edges(seq)
    if isinstance(w, SampledWaveform):
        if t0 < w.times[0] or t0 + seq.tau > w.times[-1]:
            raise ValueError("waveform is undefined over the sequence span")
        total = 0.0
        sign = 1.0
        for a, b in zip(edges[:-1], edges[1:]):
            # exact integral of the linear interpolant between breakpoints
            inner = w.times[(w.times > t0 + a) & (w.times < t0 + b)]
            ts = np.concatenate([[t0 + a], inner, [t0 + b]])
            total += sign * np.trapezoid(w.value(ts), ts)
            sign = -sign
        return 2.0 * math.pi * d_perp * total

    eps_seg = quad_tol / (2.0 * math.pi * max(abs(d_perp), 1e-30) * len(edges))
    total = 0.0
    sign = 1.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = quad(lambda t: float(w.value(t0 + t)), a, b,
                      epsabs=eps_seg, epsrel=1e-12, limit=200)
        total += sign * val
        sign = -sign
    return 2.0 * math.pi * d_perp * total


def ramsey_train(trigger_offset: float, spacing: float, count: int, tau: float,
                 w: Waveform, d_perp: float,
                 midpoint: bool = False) -> list[tuple[float, float]]:
    """Phases of a train of Ramsey windows sampling the waveform.

    Window k spans [trigger_offset + k*spacing, ... + tau]; the returned
    sample time is the window midpoint. With midpoint=True the integral is
    replaced by the midpoint-value approximation E(t_mid)*tau (kept for
    comparison; the exact per-window integral is the default).
    """
    if spacing < tau:
        raise ValueError("spacing must be at least the Ramsey window tau")
    if count < 1:
        raise ValueError("count must be >= 1")
    seq = build_sequence("ramsey", tau)
    out = []
    for k in range(count):
        start = trigger_offset + k * spacing
        mid = start + tau / 2.0
        if midpoint:
            phi = 2.0 * math.pi * d_perp * float(w.value(mid)) * tau
        else:
            phi = accumulated_phase(seq, w, d_perp, t0=start)
        out.append((mid, phi))
    return out


# ---------------------------------------------------------------------------
# Coherence and readout

@dataclass(frozen=True)
class CoherenceModel:
    """Decay envelopes: Gaussian Ramsey dephasing and stretched DD decay.

    Ramsey: exp[-(tau/T2*)^2]. N-pulse sequences: exp[-(tau/T2(N))^p] with
    T2(N) = t2_base * N^pulse_scaling.
    """

    t2_star: float = 1.5
    t2_base: float = 20.0
    stretch_p: float = 1.5
    pulse_scaling_s: float = 2.0 / 3.0

    def __post_init__(self):
        if min(self.t2_star, self.t2_base, self.stretch_p, self.pulse_scaling_s) <= 0:
            raise ValueError("coherence parameters must be positive")


@dataclass(frozen=True)
class ReadoutModel:
    """Fluorescence readout parameters.

    f0        -- bright-state count rate, counts/s
    contrast  -- optical contrast C between |0> and |+>, in (0, 1)
    t_r       -- readout window, us
    t_ini     -- initialization time, us
    """

    f0: float = 1e5
    contrast: float = 0.2
    t_r: float = 0.2
    t_ini: float = 2.0
    shot_noise: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.contrast < 1.0):
            raise ValueError("contrast must lie in (0, 1)")
        if self.f0 <= 0 or self.t_r <= 0 or self.t_ini <= 0:
            raise ValueError("rates and times must be positive")


def apply_coherence(seq: PulseSequence, model: CoherenceModel) -> float:
    """Contrast multiplier in (0, 1] for the sequence's free-evolution time."""
    if seq.n_pi == 0:
        return math.exp(-((seq.tau / model.t2_star) ** 2))
    t2 = model.t2_base * seq.n_pi ** model.pulse_scaling_s
    return math.exp(-((seq.tau / t2) ** model.stretch_p))


def simulate_readout(phi: float, final_phase: float, env_mult: float,
                     rm: ReadoutModel, n_avg: int,
                     rng: np.random.Generator | None = None) -> tuple[float, int]:
    """Fluorescence of one sequence: (mean rate counts/s, integrated counts).

    The mean rate is F = f0 (1 - C (1 - P)); counts integrate the rate over
    n_avg readout windows, Poisson-distributed when shot noise is on and
    rounded otherwise.
    """
    if n_avg <= 0:
        raise ValueError("n_avg must be positive")
    p = 0.5 * (1.0 - env_mult * math.sin(phi + final_phase - math.pi / 2.0))
    rate = rm.f0 * (1.0 - rm.contrast * (1.0 - p))
    mean_counts = rate * rm.t_r * 1e-6 * n_avg
    if rm.shot_noise:
        if rng is None:
            rng = derive_rng(rm.seed)
        counts = int(rng.poisson(mean_counts))
    else:
        counts = int(round(mean_counts))
    return rate, counts


# Final-pulse phases of the four-sequence block: (-x, +x, +y, -y). With the
# readout law above this makes F2-F1 track +cos(phi) and F4-F3 track
# +sin(phi), matching the normalized-difference extraction below.
FOUR_BLOCK_PHASES = (math.pi, 0.0, math.pi / 2.0, -math.pi / 2.0)


def four_block_rates(phi: float, env_mult: float, rm: ReadoutModel, n_avg: int,
                     rng: np.random.Generator | None = None) -> tuple[float, float, float, float]:
    """Measured rates (F1..F4) of the four-sequence block.

    Noiseless mode returns the exact mean rates; with shot noise each rate is
    reconstructed from its Poisson photon count.
    """
    rates = []
    for chi in FOUR_BLOCK_PHASES:
        mean_rate, counts = simulate_readout(phi, chi, env_mult, rm, n_avg, rng)
        if rm.shot_noise:
            rates.append(counts / (rm.t_r * 1e-6 * n_avg))
        else:
            rates.append(mean_rate)
    return tuple(rates)


def extract_phase(f1: float, f2: float, f3: float, f4: float) -> float:
    """Recover the accumulated phase from the four-block rates.

    cos-like and sin-like components are 2(F2-F1)/(F2+F1) and
    2(F4-F3)/(F4+F3); their common scale cancels in atan2, so the result is
    exact in the noiseless limit. Branch (-pi, pi].
    """
    if f1 + f2 <= 0 or f3 + f4 <= 0:
        raise ValueError("dead readout: four-block rates sum to zero")
    c = 2.0 * (f2 - f1) / (f2 + f1)
    s = 2.0 * (f4 - f3) / (f4 + f3)
    return math.atan2(s, c)


def measure_phases(phis, env_mult: float, rm: ReadoutModel, n_avg: int,
                   seed: int, stream: tuple[int, ...] = ()) -> np.ndarray:
    """Run the four-block readout on each true phase and extract estimates.

    One derived RNG stream per sample keeps the result independent of
    evaluation order.
    """
    out = np.empty(len(phis))
    for k, phi in enumerate(phis):
        rng = derive_rng(seed, *stream, k) if rm.shot_noise else None
        f1, f2, f3, f4 = four_block_rates(float(phi), env_mult, rm, n_avg, rng)
        out[k] = extract_phase(f1, f2, f3, f4)
    return out


def trace_dump(seq: PulseSequence, w: Waveform, n_points: int = 512,
               t0: float = 0.0) -> str:
    """Text rows of (t, s(t), E(t0+t)) across the free evolution, for plotting."""
    ts = np.linspace(0.0, seq.tau, n_points)
    signs = seq.sign(ts)
    vals = w.value(t0 + ts)
    lines = ["# t_us\ts\tE_zeta"]
    for t, s, v in zip(ts, signs, vals):
        lines.append(f"{t:.9g}\t{s:+.0f}\t{v:.12g}")
    return "\n".join(lines) + "\n"
