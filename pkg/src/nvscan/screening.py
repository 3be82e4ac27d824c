"""Surface-charge screening of external electric fields.

Mobile charge on the diamond surface suppresses low-frequency fields at the
NV. The measured response is modeled as a first-order high-pass filter with
cut-off f_c, composed with a static dielectric factor kappa_d for the field
reduction inside the tip:

    |H(f)| = (f/f_c) / sqrt(1 + (f/f_c)^2),   lead(f) = atan(f_c/f).

DC fields are fully screened at the spin (the unscreened level is kept on
the waveform for bookkeeping).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .pulses import DCWaveform, SampledWaveform, SinusoidWaveform, Waveform

__all__ = [
    "ScreeningModel", "FrequencyResponse",
    "attenuation", "phase_lead_deg", "phase_lead_rad", "apply_screening",
]


@dataclass(frozen=True)
class ScreeningModel:
    """High-pass cut-off (kHz) and static dielectric factor (dimensionless)."""

    f_c_khz: float = 35.4
    kappa_d: float = 0.41

    def __post_init__(self):
        if self.f_c_khz <= 0:
            raise ValueError("cut-off frequency must be positive")
        if not (0.0 < self.kappa_d <= 1.0):
            raise ValueError("dielectric factor must lie in (0, 1]")

    @property
    def rc_equivalent_us(self) -> float:
        """1/f_c in us; derived metadata only, never used in computations."""
        return 1e3 / self.f_c_khz

    @property
    def time_constant_us(self) -> float:
        """First-order filter time constant 1/(2 pi f_c), us."""
        return 1e3 / (2.0 * math.pi * self.f_c_khz)


@dataclass(frozen=True)
class FrequencyResponse:
    frequency_khz: float
    amplitude_ratio: float
    phase_lead_deg: float


def attenuation(f_khz: float, m: ScreeningModel) -> float:
    """High-pass amplitude ratio at f (kHz); DC (f <= 0) is rejected here."""
    if f_khz <= 0:
        raise ValueError("attenuation is defined for f > 0; DC is fully screened")
    x = f_khz / m.f_c_khz
    return x / math.sqrt(1.0 + x * x)


def phase_lead_rad(f_khz: float, m: ScreeningModel) -> float:
    if f_khz <= 0:
        raise ValueError("phase lead is defined for f > 0")
    return math.atan(m.f_c_khz / f_khz)


def phase_lead_deg(f_khz: float, m: ScreeningModel) -> float:
    return math.degrees(phase_lead_rad(f_khz, m))


def _filter_sampled(w: SampledWaveform, m: ScreeningModel) -> np.ndarray:
    # first-order recursive high-pass, backward-difference form:
    # y[n] = a_n (y[n-1] + x[n] - x[n-1]),  a_n = rc/(rc + dt_n)
    rc = m.time_constant_us
    x = w.values
    y = np.empty_like(x)
    y[0] = x[0]
    dts = np.diff(w.times)
    for n in range(1, len(x)):
        a = rc / (rc + dts[n - 1])
        y[n] = a * (y[n - 1] + x[n] - x[n - 1])
    return y


def apply_screening(w: Waveform, m: ScreeningModel) -> Waveform:
    """Return the waveform as seen by the spin.

    DC -> zero level (unscreened value retained); sinusoid -> amplitude
    scaled by attenuation(f)*kappa_d and phase advanced by the lead; sampled
    -> recursive first-order high-pass, then *kappa_d. Applying screening
    twice is an error.
    """
    if getattr(w, "screened", False):
        raise ValueError("waveform is already screened")
    if isinstance(w, DCWaveform):
        return DCWaveform(level=0.0, screened=True, unscreened_level=w.level)
    if isinstance(w, SinusoidWaveform):
        f_khz = w.frequency * 1e3
        return replace(w,
                       amplitude=w.amplitude * attenuation(f_khz, m) * m.kappa_d,
                       phase=w.phase + phase_lead_rad(f_khz, m),
                       screened=True)
    if isinstance(w, SampledWaveform):
        return SampledWaveform(times=w.times,
                               values=_filter_sampled(w, m) * m.kappa_d,
                               screened=True)
    raise TypeError(f"unsupported waveform type {type(w).__name__}")
