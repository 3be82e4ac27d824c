"""Demodulation fits and sensitivity formulas.

The lock-in traces produced by the pulse engine are sinusoids of known
frequency; their amplitude and phase come from a linear least-squares fit on
the basis {cos 2 pi f t, sin 2 pi f t, 1}. Sensitivity follows the photon
shot-noise budget of the readout: with N_avg = T/(t_ini + tau) repetitions
per second,

    SNR  = pi d_perp tau dE C sqrt(F T_r / (t_ini + tau)),
    eta_E = sqrt((t_ini + tau)/(F T_r)) / (pi d_perp tau C),

and the gradient sensitivity under tip oscillation of amplitude A is
eta_E / A. A Monte Carlo of the full four-block measurement validates the
closed forms end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pulses import ReadoutModel
from .rng import derive_rng

__all__ = [
    "SineFit", "SensitivityParams", "MonteCarloSensitivity",
    "sine_fit", "fit_to_text", "snr", "sensitivity_ac",
    "sensitivity_gradient", "monte_carlo_sensitivity",
]


@dataclass(frozen=True)
class SineFit:
    """y ~ amplitude * cos(2 pi f t - phase) + offset, phase in (-pi, pi]."""

    amplitude: float
    phase: float
    offset: float
    amplitude_err: float
    phase_err: float
    offset_err: float
    residual_rms: float


def sine_fit(times, values, f_khz: float) -> SineFit:
    """Known-frequency sinusoid fit; times in us, f in kHz.

    Solves the normal equations of the linear model
    y = a cos(2 pi f t) + b sin(2 pi f t) + c, then amplitude = hypot(a, b)
    and phase = atan2(b, a). Standard errors come from the residual variance
    and the design covariance. A rank-deficient design (all samples at
    equivalent signal phases) is an error.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.shape != y.shape:
        raise ValueError("times and values must be matching 1-d arrays")
    if len(t) < 4:
        raise ValueError("need at least 4 samples")
    f_mhz = f_khz * 1e-3
    if (t.max() - t.min()) * f_mhz < 0.5:
        raise ValueError("samples must span at least half a signal period")

    w = 2.0 * math.pi * f_mhz
    design = np.column_stack([np.cos(w * t), np.sin(w * t), np.ones_like(t)])
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("rank-deficient design: samples at equivalent phases")

    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    a, b, c = coef
    resid = y - design @ coef
    dof = max(len(t) - 3, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(design.T @ design)

    amp = math.hypot(a, b)
    phase = math.atan2(b, a)
    if amp > 0:
        # propagate cov(a, b) through amplitude/phase
        da = np.array([a / amp, b / amp])
        dp = np.array([-b / amp**2, a / amp**2])
        amp_err = math.sqrt(max(da @ cov[:2, :2] @ da, 0.0))
        phase_err = math.sqrt(max(dp @ cov[:2, :2] @ dp, 0.0))
    else:
        amp_err = math.sqrt(max(cov[0, 0], cov[1, 1]))
        phase_err = math.pi
    return SineFit(amplitude=amp, phase=phase, offset=float(c),
                   amplitude_err=amp_err, phase_err=phase_err,
                   offset_err=math.sqrt(max(cov[2, 2], 0.0)),
                   residual_rms=math.sqrt(float(resid @ resid) / len(t)))


def fit_to_text(fit: SineFit) -> str:
    """Fit parameters as key=value lines."""
    return "\n".join([
        f"amplitude = {fit.amplitude:.12g}",
        f"amplitude_err = {fit.amplitude_err:.6g}",
        f"phase_rad = {fit.phase:.12g}",
        f"phase_err = {fit.phase_err:.6g}",
        f"offset = {fit.offset:.12g}",
        f"offset_err = {fit.offset_err:.6g}",
        f"residual_rms = {fit.residual_rms:.6g}",
    ]) + "\n"


@dataclass(frozen=True)
class SensitivityParams:
    """Readout and coupling parameters of the sensitivity budget.

    f is the fluorescence count rate (counts/s); times t_r, t_ini, tau in
    us; d_perp in MHz*um/V.
    """

    f: float = 1e5
    contrast: float = 0.2
    t_r: float = 0.2
    t_ini: float = 2.0
    tau: float = 8.0
    d_perp: float = 0.17

    def __post_init__(self):
        if min(self.f, self.t_r, self.t_ini, self.tau, self.d_perp) <= 0:
            raise ValueError("all parameters must be positive")
        if not (0.0 < self.contrast < 1.0):
            raise ValueError("contrast must lie in (0, 1)")


def snr(p: SensitivityParams, delta_e: float, t_total: float = 1.0) -> float:
    """Signal-to-noise ratio for field step delta_e (V/um) in t_total seconds."""
    shots = p.f * p.t_r / (p.t_ini + p.tau) * t_total
    return math.pi * p.d_perp * p.tau * delta_e * p.contrast * math.sqrt(shots)


def sensitivity_ac(p: SensitivityParams) -> float:
    """Minimum detectable field at unit SNR in one second, V/um/sqrt(Hz)."""
    return (math.sqrt((p.t_ini + p.tau) / (p.f * p.t_r))
            / (math.pi * p.d_perp * p.tau * p.contrast))


def sensitivity_gradient(eta_e: float, amplitude: float) -> float:
    """Gradient sensitivity eta_E / A for tip oscillation amplitude A (um)."""
    if amplitude <= 0:
        raise ValueError("oscillation amplitude must be positive")
    return eta_e / amplitude


@dataclass(frozen=True)
class MonteCarloSensitivity:
    eta: float
    eta_err: float
    trials: int
    delta_e: float


def monte_carlo_sensitivity(p: SensitivityParams, readout: ReadoutModel,
                            trials: int) -> MonteCarloSensitivity:
    """Estimate the AC sensitivity by simulating the measurement itself.

    Each trial integrates one virtual second (N_avg = 1/(t_ini + tau)
    sequence repetitions) of the sine-quadrature readout at a small probe
    field and at zero field. The detectable field at SNR = 1 is the
    count-noise standard deviation divided by the measured counts-per-field
    slope; the error bar is a bootstrap over trials.

    With shot noise disabled the slope is taken from the exact means and the
    noise from the Poisson law sqrt(F T_r N_avg), reproducing the closed
    form up to the linearization of sin(phi).
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    n_avg = int(round(1e6 / (p.t_ini + p.tau)))
    delta_e = 0.5 * sensitivity_ac(p)

    def mean_counts(e_field: float) -> float:
        phi = 2.0 * math.pi * p.d_perp * e_field * p.tau
        prob = 0.5 * (1.0 - math.sin(phi))
        rate = p.f * (1.0 - p.contrast * (1.0 - prob))
        return rate * p.t_r * 1e-6 * n_avg

    mu_sig, mu_ref = mean_counts(delta_e), mean_counts(0.0)

    if not readout.shot_noise:
        slope = (mu_sig - mu_ref) / delta_e
        noise = math.sqrt(p.f * p.t_r * 1e-6 * n_avg)
        return MonteCarloSensitivity(eta=noise / abs(slope), eta_err=0.0,
                                     trials=trials, delta_e=delta_e)

    rng = derive_rng(readout.seed, 90001)
    counts_sig = rng.poisson(mu_sig, size=trials).astype(float)
    counts_ref = rng.poisson(mu_ref, size=trials).astype(float)

    def eta_of(sig: np.ndarray, ref: np.ndarray) -> float:
        slope = (sig.mean() - ref.mean()) / delta_e
        return float(ref.std(ddof=1) / abs(slope))

    eta = eta_of(counts_sig, counts_ref)
    boot = np.empty(200)
    for b in range(len(boot)):
        idx = rng.integers(0, trials, size=trials)
        boot[b] = eta_of(counts_sig[idx], counts_ref[idx])
    return MonteCarloSensitivity(eta=eta, eta_err=float(boot.std(ddof=1)),
                                 trials=trials, delta_e=delta_e)
