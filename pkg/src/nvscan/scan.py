"""Virtual scanning measurements.

Composes the solved electrode field, surface screening and the pulse engine
into per-pixel measurements. Tip geometry (multi-pillar probe plus tilt)
sets the NV-sample distance; for DC imaging the tuning-fork motion
upconverts the local field structure to the mechanical frequency:

    E_amp = E'_zeta(x) A + beta E_zeta

with oscillation amplitude A and the empirical axis-rotation coefficient
beta. The sensing sequence is synchronized (and phase-calibrated) to the
drive or the motion, so the accumulated phase of a pixel is
phi = 4 d_perp tau kappa_d |H(f)| E, inverted per pixel to recover the
field. Shot noise uses one derived RNG stream per pixel, making scans
bit-reproducible regardless of evaluation order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .electrostatics import (ElectrodeGeometry2D, Grid2D, ProjectionAxis,
                             field_at_height, gradient_x, project_zeta,
                             solve_laplace)
from .pulses import (CoherenceModel, ReadoutModel, SinusoidWaveform,
                     accumulated_phase, apply_coherence, build_sequence,
                     extract_phase, four_block_rates)
from .rng import derive_rng
from .screening import ScreeningModel, apply_screening, attenuation

__all__ = [
    "ProbeConfig", "TipMotion", "ScanPlan", "ScanResult",
    "nv_sample_distance", "motion_upconverted_amplitude",
    "first_harmonic_amplitude", "run_ac_scan", "run_dc_scan",
    "render_map", "scan_to_dsv",
]


@dataclass(frozen=True)
class ProbeConfig:
    """Multi-pillar diamond probe: one pillar contacts, another senses."""

    pillar_count: int = 7
    pillar_spacing: float = 7.0     # um between neighbouring pillars
    outer_diameter: float = 0.8     # um, contact pillars
    inner_diameter: float = 0.3     # um, sensing pillars
    nv_depth: float = 0.04          # um below the sensing pillar top
    tilt: float = 0.0               # rad, probe tilt about the contact line

    def __post_init__(self):
        if self.tilt < 0:
            raise ValueError("tilt must be non-negative")
        if self.pillar_count < 2:
            raise ValueError("need at least two pillars")
        if min(self.pillar_spacing, self.outer_diameter, self.inner_diameter,
               self.nv_depth) <= 0:
            raise ValueError("probe dimensions must be positive")


def nv_sample_distance(probe: ProbeConfig, sensing_pillar: int = 1,
                       contact_pillar: int = 0) -> float:
    """NV-sample distance: tilt-lever standoff plus the NV implantation depth.

    The probe pivots on the contact pillar; a sensing pillar n positions
    down the row stands off by (n * pillar_spacing) * tan(tilt). The tilted
    sensing-pillar face must not touch the surface (its near edge dips by
    r * sin(tilt) below the pillar center).
    """
    if sensing_pillar == contact_pillar:
        raise ValueError("sensing and contact pillars must differ")
    for idx in (sensing_pillar, contact_pillar):
        if not (0 <= idx < probe.pillar_count):
            raise ValueError("pillar index out of range")
    lever = abs(sensing_pillar - contact_pillar) * probe.pillar_spacing
    standoff = lever * math.tan(probe.tilt)
    edge_dip = (probe.inner_diameter / 2.0) * math.sin(probe.tilt)
    if standoff - edge_dip < 0:
        raise ValueError("geometry implies pillar-sample interpenetration")
    return standoff + probe.nv_depth


@dataclass(frozen=True)
class TipMotion:
    """Tuning-fork oscillation of the tip in the sample plane."""

    mode: str = "clang"             # 'fundamental' (~32 kHz) or 'clang' (~190 kHz)
    frequency_khz: float = 190.0
    amplitude: float = 0.013        # um
    direction: float = math.radians(30.0)  # rad from x in the sample plane
    beta: float = -0.03             # NV-axis-rotation coefficient

    def __post_init__(self):
        if self.mode not in ("fundamental", "clang"):
            raise ValueError("mode must be 'fundamental' or 'clang'")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.frequency_khz <= 0:
            raise ValueError("frequency must be positive")


def motion_upconverted_amplitude(e_zeta: float, de_zeta_along_motion: float,
                                 motion: TipMotion) -> float:
    """First-order amplitude of the motion-enabled AC signal, V/um."""
    return de_zeta_along_motion * motion.amplitude + motion.beta * e_zeta


def first_harmonic_amplitude(field_fn: Callable[[np.ndarray], np.ndarray],
                             x0: float, motion: TipMotion,
                             n_samples: int = 256) -> float:
    """Exact first harmonic of the oscillating pixel's field signal.

    The tip position along x follows x0 + A cos(direction) sin(wt) and the
    axis rotation modulates the sensed field by beta sin(wt), so the sensed
    signal over one period is

        E(x(t)) + beta E(x(t)) sin(wt).

    Its fundamental sine component is returned; the trapezoid rule on a
    uniform periodic grid is spectrally accurate here.
    """
    u = np.linspace(0.0, 2.0 * math.pi, n_samples, endpoint=False)
    ax = motion.amplitude * math.cos(motion.direction)
    e = np.asarray(field_fn(x0 + ax * np.sin(u)), dtype=float)
    signal = e + motion.beta * e * np.sin(u)
    return float((signal * np.sin(u)).sum() / (n_samples / 2.0))


@dataclass(frozen=True)
class ScanPlan:
    """Pixel grid and per-pixel measurement settings."""

    x_start: float
    x_stop: float
    x_step: float
    rows: int = 1                   # pseudo-2D maps repeat the cross-section
    height: float = 0.09            # NV sampling height above the metal, um
    sequence: str = "xy4"
    order: int = 1
    tau: float = 8.0                # us
    frequency_khz: float = 250.0    # drive (AC) or mechanical (DC) frequency
    drive_scale: float = 1.0        # scales the solved potentials linearly
    n_avg: int = 10000
    seed: int = 0
    spacing: float = 0.025          # solver grid spacing, um
    tol: float = 1e-8               # solver residual tolerance

    def __post_init__(self):
        if self.x_step <= 0:
            raise ValueError("x_step must be positive")
        if self.x_stop < self.x_start:
            raise ValueError("x_stop must be >= x_start")
        if self.rows < 1:
            raise ValueError("rows must be >= 1")

    @property
    def positions(self) -> np.ndarray:
        n = int(round((self.x_stop - self.x_start) / self.x_step)) + 1
        return self.x_start + self.x_step * np.arange(n)


@dataclass(frozen=True, eq=False)
class ScanResult:
    """Per-pixel phase and recovered field with full provenance metadata."""

    x: np.ndarray
    phi: np.ndarray        # (rows, nx), rad
    e_field: np.ndarray    # (rows, nx), V/um (E_zeta for AC, E_amp for DC)
    flags: np.ndarray      # (rows, nx) bool, first-order-model validity
    metadata: dict


def _sequence_for(plan: ScanPlan):
    seq = build_sequence(plan.sequence, plan.tau, order=plan.order)
    f_seq_khz = seq.matched_frequency() * 1e3
    if f_seq_khz <= 0:
        raise ValueError("scans need a dynamical-decoupling sequence")
    if abs(f_seq_khz - plan.frequency_khz) > 1e-6 * f_seq_khz:
        raise ValueError(
            f"frequency {plan.frequency_khz} kHz does not match the sequence "
            f"pass band {f_seq_khz:.6f} kHz (n_pi/(2 tau)); the protocol "
            "synchronizes them")
    return seq


def _measure_pixel(phi_true: float, env: float, readout: ReadoutModel,
                   n_avg: int, seed: int, iy: int, ix: int) -> float:
    rng = derive_rng(seed, iy, ix) if readout.shot_noise else None
    f1, f2, f3, f4 = four_block_rates(phi_true, env, readout, n_avg, rng)
    return extract_phase(f1, f2, f3, f4)


def _phase_gain(seq, screen: ScreeningModel, f_khz: float, d_perp: float) -> float:
    """phi per unit unscreened field: 4 d_perp tau kappa_d |H(f)|."""
    return 4.0 * d_perp * seq.tau * screen.kappa_d * attenuation(f_khz, screen)


def _pixel_phase(seq, e_unscreened: float, f_mhz: float,
                 screen: ScreeningModel, d_perp: float) -> float:
    """Accumulated phase for one pixel's screened, phase-calibrated drive.

    Screening shifts the phase of the field at the spin; the measurement
    protocol locks the sequence to the *detected* signal, so the screened
    waveform is re-aligned to zero phase before integration.
    """
    w = SinusoidWaveform(amplitude=e_unscreened, frequency=f_mhz)
    ws = apply_screening(w, screen)
    ws = replace(ws, phase=0.0)
    return accumulated_phase(seq, ws, d_perp)


def run_ac_scan(plan: ScanPlan, geom: ElectrodeGeometry2D,
                screen: ScreeningModel, readout: ReadoutModel,
                axis: ProjectionAxis, coherence: CoherenceModel | None = None,
                d_perp: float = 0.17, grid: Grid2D | None = None) -> ScanResult:
    """AC imaging: drive the electrodes at the sequence pass band and map E_zeta.

    Per pixel: sample the solved field at the NV height, screen it at the
    drive frequency, accumulate phase over the synchronized sequence, read
    out the four-block, extract phi, and invert the known gain back to the
    unscreened E_zeta.
    """
    seq = _sequence_for(plan)
    if grid is None:
        grid = solve_laplace(geom, plan.spacing, plan.tol)
    profile = field_at_height(grid, plan.height)
    e_zeta = project_zeta(profile, axis) * plan.drive_scale

    env = apply_coherence(seq, coherence) if coherence is not None else 1.0
    f_mhz = plan.frequency_khz * 1e-3
    gain = _phase_gain(seq, screen, plan.frequency_khz, d_perp)

    xs = plan.positions
    # rows replicate the cross-section, so the true phase is per-column
    phi_true = np.array([
        _pixel_phase(seq, float(np.interp(xp, profile.x, e_zeta)), f_mhz,
                     screen, d_perp) for xp in xs])
    phi = np.empty((plan.rows, len(xs)))
    for iy in range(plan.rows):
        for ix in range(len(xs)):
            phi[iy, ix] = _measure_pixel(float(phi_true[ix]), env, readout,
                                         plan.n_avg, plan.seed, iy, ix)
    e_rec = phi / gain

    meta = _metadata("ac", plan, screen, readout, axis, seq, grid, env,
                     d_perp=d_perp)
    return ScanResult(x=xs, phi=phi, e_field=e_rec,
                      flags=np.zeros_like(phi, dtype=bool), metadata=meta)


def run_dc_scan(plan: ScanPlan, geom: ElectrodeGeometry2D, motion: TipMotion,
                screen: ScreeningModel, readout: ReadoutModel,
                axis: ProjectionAxis, coherence: CoherenceModel | None = None,
                d_perp: float = 0.17, grid: Grid2D | None = None) -> ScanResult:
    """Motion-enabled DC imaging at the mechanical frequency.

    Per pixel: form E_amp = E' A + beta E from the static field and its
    gradient along the oscillation direction, screen it at the mechanical
    frequency, then sense with the synchronized sequence. Pixels where the
    first-order E_amp deviates from the exact first harmonic by more than
    10% are flagged.
    """
    if motion.amplitude == 0.0 and motion.beta == 0.0:
        warnings.warn("null experiment: no tip motion and no axis rotation",
                      stacklevel=2)
    if abs(motion.frequency_khz - plan.frequency_khz) > 1e-9 * motion.frequency_khz:
        raise ValueError("plan frequency must equal the mechanical frequency")
    seq = _sequence_for(plan)
    if grid is None:
        grid = solve_laplace(geom, plan.spacing, plan.tol)
    profile = field_at_height(grid, plan.height)
    e_zeta = project_zeta(profile, axis) * plan.drive_scale
    de_dx = gradient_x(e_zeta, profile.spacing)
    cos_dir = math.cos(motion.direction)

    def field_fn(xq):
        return np.interp(xq, profile.x, e_zeta)

    env = apply_coherence(seq, coherence) if coherence is not None else 1.0
    f_mhz = plan.frequency_khz * 1e-3
    gain = _phase_gain(seq, screen, plan.frequency_khz, d_perp)

    xs = plan.positions
    e_pix = np.interp(xs, profile.x, e_zeta)
    grad_dir = np.interp(xs, profile.x, de_dx) * cos_dir
    e_amp = np.array([motion_upconverted_amplitude(e, g_, motion)
                      for e, g_ in zip(e_pix, grad_dir)])
    exact = np.array([first_harmonic_amplitude(field_fn, x, motion) for x in xs])
    # first-order validity: discrepancy relative to the line's signal scale
    scale = max(np.abs(e_amp).max(), np.abs(exact).max(), 1e-300)
    flag_line = np.abs(exact - e_amp) / scale > 0.10

    phi_true = np.array([_pixel_phase(seq, float(e), f_mhz, screen, d_perp)
                         for e in e_amp])
    phi = np.empty((plan.rows, len(xs)))
    for iy in range(plan.rows):
        for ix in range(len(xs)):
            phi[iy, ix] = _measure_pixel(float(phi_true[ix]), env, readout,
                                         plan.n_avg, plan.seed, iy, ix)
    flags = np.tile(flag_line, (plan.rows, 1))
    e_rec = phi / gain

    meta = _metadata("dc", plan, screen, readout, axis, seq, grid, env,
                     d_perp=d_perp, motion=motion)
    return ScanResult(x=xs, phi=phi, e_field=e_rec, flags=flags, metadata=meta)


def _metadata(mode: str, plan: ScanPlan, screen: ScreeningModel,
              readout: ReadoutModel, axis: ProjectionAxis, seq, grid: Grid2D,
              env: float, d_perp: float,
              motion: TipMotion | None = None) -> dict:
    meta = {
        "mode": mode,
        "height_um": plan.height,
        "sequence": f"{seq.kind} n_pi={seq.n_pi} tau_us={seq.tau:.9g}",
        "frequency_khz": plan.frequency_khz,
        "drive_scale": plan.drive_scale,
        "n_avg": plan.n_avg,
        "seed": plan.seed,
        "shot_noise": readout.shot_noise,
        "coherence_env": env,
        "d_perp": d_perp,
        "f_c_khz": screen.f_c_khz,
        "kappa_d": screen.kappa_d,
        "axis_phi_rad": axis.phi,
        "axis_theta_rad": axis.theta,
        "solver_residual": grid.residual,
        "solver_iterations": grid.iterations,
        "solver_spacing_um": grid.spacing,
        "snap_max_um": grid.snap_max,
    }
    if motion is not None:
        meta.update({
            "motion_mode": motion.mode,
            "motion_amplitude_um": motion.amplitude,
            "motion_direction_rad": motion.direction,
            "beta": motion.beta,
        })
    return meta


def render_map(result: ScanResult, quantity: str = "phi") -> tuple[np.ndarray, str]:
    """2-D map of a scan quantity plus its sidecar text.

    The binary companion format is row-major little-endian float64; the
    sidecar records dimensions, axes and all metadata as key=value lines.
    """
    arrays = {"phi": result.phi, "e_field": result.e_field,
              "flags": result.flags.astype(float)}
    if quantity not in arrays:
        raise ValueError(f"unknown quantity {quantity!r}")
    arr = arrays[quantity]
    lines = [
        f"quantity={quantity}",
        f"rows={arr.shape[0]}",
        f"cols={arr.shape[1]}",
        f"x_start_um={result.x[0]:.12g}",
        f"x_step_um={(result.x[1] - result.x[0]) if len(result.x) > 1 else 0.0:.12g}",
        "dtype=float64-little-endian",
        "order=row-major",
    ]
    for key in sorted(result.metadata):
        lines.append(f"{key}={result.metadata[key]}")
    return arr, "\n".join(lines) + "\n"


def scan_to_dsv(result: ScanResult) -> str:
    """1-D scans as delimiter-separated text: x, phi, field, flag."""
    if result.phi.shape[0] != 1:
        raise ValueError("dsv export is for single-row scans")
    lines = ["# x_um\tphi_rad\te_field\tflag"]
    for x, p, e, fl in zip(result.x, result.phi[0], result.e_field[0],
                           result.flags[0]):
        lines.append(f"{x:.12g}\t{p:.12g}\t{e:.12g}\t{int(fl)}")
    return "\n".join(lines) + "\n"
