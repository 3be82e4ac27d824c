"""Config-driven command line for reproducible virtual experiments.

Subcommands: odmr, ramsey, lockin-sweep, ac-scan, dc-scan, sensitivity,
solve-field. Every run writes its data files plus a sidecar holding the
fully resolved config (replayable as-is with --config) and '#' provenance
comments. Outputs carry no timestamps, so a rerun with the same config and
seed is bit-identical.

Exit codes: 0 success, 2 config error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, pulses, scan, spin
from .config import ConfigError, ExperimentConfig
from .electrostatics import (NonConvergenceError, field_at_height,
                             grid_to_binary, profile_to_text, solve_laplace)
from .pulses import SinusoidWaveform, apply_coherence, build_sequence
from .screening import FrequencyResponse, apply_screening

__all__ = ["main"]


def _load_config(args) -> ExperimentConfig:
    cfg = (ExperimentConfig.from_file(args.config) if args.config
           else ExperimentConfig.defaults())
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sidecar_text(cfg: ExperimentConfig, command: str, extra: dict) -> str:
    lines = [f"# engine = nvscan {__version__}", f"# command = {command}"]
    for key in sorted(extra):
        lines.append(f"# {key} = {extra[key]}")
    return "\n".join(lines) + "\n\n" + cfg.resolved_text()


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def cmd_odmr(cfg: ExperimentConfig, out: Path) -> int:
    species = cfg.species()
    env = cfg.environment()
    mw = (cfg.get("odmr", "mw_x"), cfg.get("odmr", "mw_y"), cfg.get("odmr", "mw_z"))
    freqs = np.linspace(cfg.get("odmr", "f_start_mhz"),
                        cfg.get("odmr", "f_stop_mhz"),
                        cfg.get("odmr", "points"))
    spectrum = spin.odmr_spectrum(species, env, mw,
                                  cfg.get("odmr", "line_width_mhz"),
                                  frequencies=freqs,
                                  include_nuclear=cfg.get("odmr", "include_nuclear"))
    rows = ["# frequency_mhz\tcontrast"]
    rows += [f"{f:.9f}\t{c:.9f}" for f, c in spectrum]
    _write(out / "odmr.dsv", "\n".join(rows) + "\n")
    _write(out / "odmr.sidecar.txt",
           _sidecar_text(cfg, "odmr", {"rows": len(spectrum)}))
    print(f"odmr: {len(spectrum)} rows -> {out / 'odmr.dsv'}")
    return 0


def _screened_drive(cfg: ExperimentConfig, amplitude: float, f_khz: float,
                    phase: float = 0.0):
    w = SinusoidWaveform(amplitude=amplitude, frequency=f_khz * 1e-3, phase=phase)
    return apply_screening(w, cfg.screening_model())


def cmd_ramsey(cfg: ExperimentConfig, out: Path) -> int:
    d_perp = cfg.get("species", "d_perp")
    tau = cfg.get("ramsey", "tau_us")
    w = _screened_drive(cfg, cfg.get("ramsey", "signal_amplitude"),
                        cfg.get("ramsey", "signal_frequency_khz"),
                        math.radians(cfg.get("ramsey", "signal_phase_deg")))
    train = pulses.ramsey_train(cfg.get("ramsey", "trigger_offset_us"),
                                cfg.get("ramsey", "spacing_us"),
                                cfg.get("ramsey", "count"), tau, w, d_perp)
    times = np.array([t for t, _ in train])
    phis = np.array([p for _, p in train])
    rm = cfg.readout()
    env = apply_coherence(build_sequence("ramsey", tau), cfg.coherence())
    meas = pulses.measure_phases(phis, env, rm, cfg.get("readout", "n_avg"),
                                 cfg.get("run", "seed"))
    rows = ["# t_us\tphi_true_rad\tphi_measured_rad"]
    rows += [f"{t:.9g}\t{p:.12g}\t{m:.12g}" for t, p, m in zip(times, phis, meas)]
    _write(out / "ramsey.dsv", "\n".join(rows) + "\n")
    fit = analysis.sine_fit(times, meas,
                            cfg.get("ramsey", "signal_frequency_khz"))
    _write(out / "ramsey.fit.txt", analysis.fit_to_text(fit))
    _write(out / "ramsey.sidecar.txt",
           _sidecar_text(cfg, "ramsey", {"samples": len(train),
                                         "fit_amplitude_rad": fit.amplitude}))
    print(f"ramsey: {len(train)} samples -> {out / 'ramsey.dsv'}")
    return 0


def lockin_sweep(cfg: ExperimentConfig) -> list[FrequencyResponse]:
    """Measured amplitude ratio and phase lead from simulated lock-in runs.

    Below the split frequency a Ramsey train samples the screened drive and
    a known-frequency sine fit extracts amplitude and phase; above it, the
    initial phase of a matched dynamical-decoupling sequence is swept and
    fitted. Ratios are normalized to the no-screening response (dielectric
    factor included), isolating the high-pass transfer function.
    """
    d_perp = cfg.get("species", "d_perp")
    model = cfg.screening_model()
    rm = cfg.readout()
    n_avg = cfg.get("readout", "n_avg")
    seed = cfg.get("run", "seed")
    coh = cfg.coherence()
    target = cfg.get("lockin", "target_phase_rad")
    split = cfg.get("lockin", "split_khz")

    results = []
    for k, f_khz in enumerate(cfg.get("lockin", "frequencies_khz")):
        f_mhz = f_khz * 1e-3
        if f_khz < split:
            tau = cfg.get("lockin", "ramsey_tau_us")
            spacing = cfg.get("lockin", "ramsey_spacing_us")
            count = cfg.get("lockin", "ramsey_count")
            window = math.sin(math.pi * f_mhz * tau) / (math.pi * f_mhz * tau)
            gain = 2.0 * math.pi * d_perp * tau * window * model.kappa_d
            amp = target / gain
            w = _screened_drive(cfg, amp, f_khz)
            train = pulses.ramsey_train(spacing, spacing, count, tau, w, d_perp)
            times = np.array([t for t, _ in train])
            phis = np.array([p for _, p in train])
            env = apply_coherence(build_sequence("ramsey", tau), coh)
            meas = pulses.measure_phases(phis, env, rm, n_avg, seed, stream=(k,))
            fit = analysis.sine_fit(times, meas, f_khz)
            ratio = fit.amplitude / target
            lead_deg = math.degrees(-fit.phase)
        else:
            order = cfg.get("lockin", "dd_order")
            tau = 4 * order / (2.0 * f_mhz)
            seq = build_sequence("xy4", tau, order=order)
            env = apply_coherence(seq, coh)
            amp = target / (4.0 * d_perp * tau * model.kappa_d)
            offsets = np.linspace(0.0, 2.0 * math.pi,
                                  cfg.get("lockin", "dd_phase_points"),
                                  endpoint=False)
            phis = np.array([
                pulses.accumulated_phase(
                    seq, _screened_drive(cfg, amp, f_khz, phase=-off), d_perp)
                for off in offsets])
            meas = pulses.measure_phases(phis, env, rm, n_avg, seed, stream=(k,))
            # fit vs offset: map one offset cycle onto a 1 kHz, 1000 us pseudo-time
            pseudo_t = offsets / (2.0 * math.pi) * 1e3
            fit = analysis.sine_fit(pseudo_t, meas, 1.0)
            ratio = fit.amplitude / target
            lead_deg = math.degrees(fit.phase)
        results.append(FrequencyResponse(frequency_khz=f_khz,
                                         amplitude_ratio=ratio,
                                         phase_lead_deg=lead_deg))
    return results


def cmd_lockin_sweep(cfg: ExperimentConfig, out: Path) -> int:
    results = lockin_sweep(cfg)
    rows = ["# f_khz\tamplitude_ratio\tphase_lead_deg"]
    rows += [f"{r.frequency_khz:.9g}\t{r.amplitude_ratio:.9g}\t"
             f"{r.phase_lead_deg:.9g}" for r in results]
    text = "\n".join(rows) + "\n"
    _write(out / "lockin.dsv", text)
    _write(out / "lockin.sidecar.txt",
           _sidecar_text(cfg, "lockin-sweep", {"rows": len(results)}))
    print(text, end="")
    print(f"lockin-sweep -> {out / 'lockin.dsv'}")
    return 0


def _write_scan(result: scan.ScanResult, cfg: ExperimentConfig, out: Path,
                name: str, command: str) -> None:
    arr, _ = scan.render_map(result, "phi")
    (out / f"{name}.f64").write_bytes(arr.astype("<f8").tobytes(order="C"))
    extra = dict(result.metadata)
    extra["rows"] = arr.shape[0]
    extra["cols"] = arr.shape[1]
    extra["map_file"] = f"{name}.f64"
    extra["map_quantity"] = "phi"
    _write(out / f"{name}.sidecar.txt", _sidecar_text(cfg, command, extra))
    if result.phi.shape[0] == 1:
        _write(out / f"{name}.dsv", scan.scan_to_dsv(result))


def cmd_ac_scan(cfg: ExperimentConfig, out: Path) -> int:
    plan = cfg.scan_plan("ac")
    result = scan.run_ac_scan(plan, cfg.geometry(), cfg.screening_model(),
                              cfg.readout(), cfg.projection(),
                              coherence=cfg.coherence(),
                              d_perp=cfg.get("species", "d_perp"))
    _write_scan(result, cfg, out, "acscan", "ac-scan")
    print(f"ac-scan: {result.phi.shape[0]}x{result.phi.shape[1]} pixels -> "
          f"{out / 'acscan.f64'}")
    return 0


def cmd_dc_scan(cfg: ExperimentConfig, out: Path) -> int:
    motion = cfg.motion()
    if cfg.was_auto("sequence", "tau_us"):
        n_pi = 4 * cfg.get("sequence", "order")
        cfg.set("sequence", "tau_us",
                repr(n_pi / (2.0 * motion.frequency_khz * 1e-3)))
    plan = cfg.scan_plan("dc")
    result = scan.run_dc_scan(plan, cfg.geometry(), motion,
                              cfg.screening_model(), cfg.readout(),
                              cfg.projection(), coherence=cfg.coherence(),
                              d_perp=cfg.get("species", "d_perp"))
    _write_scan(result, cfg, out, "dcscan", "dc-scan")
    print(f"dc-scan: {result.phi.shape[0]}x{result.phi.shape[1]} pixels "
          f"({int(result.flags.sum())} flagged) -> {out / 'dcscan.f64'}")
    return 0


def cmd_sensitivity(cfg: ExperimentConfig, out: Path) -> int:
    p = cfg.sensitivity_params()
    eta = analysis.sensitivity_ac(p)
    eta_grad = analysis.sensitivity_gradient(eta, cfg.get("motion", "amplitude"))
    rows = [
        "# quantity\tvalue\tunit",
        f"rate\t{p.f:.6g}\tcounts/s",
        f"contrast\t{p.contrast:.6g}\t-",
        f"readout_window\t{p.t_r:.6g}\tus",
        f"init_time\t{p.t_ini:.6g}\tus",
        f"tau\t{p.tau:.6g}\tus",
        f"d_perp\t{p.d_perp:.6g}\tMHz*um/V",
        f"oscillation_amplitude\t{cfg.get('motion', 'amplitude'):.6g}\tum",
        f"eta_E\t{eta * 1e3:.6g}\tmV/um/sqrt(Hz)",
        f"eta_gradient\t{eta_grad:.6g}\tV/um^2/sqrt(Hz)",
    ]
    text = "\n".join(rows) + "\n"
    _write(out / "sensitivity.dsv", text)
    _write(out / "sensitivity.sidecar.txt",
           _sidecar_text(cfg, "sensitivity",
                         {"eta_e_mv": eta * 1e3, "eta_gradient": eta_grad}))
    print(text, end="")
    return 0


def cmd_solve_field(cfg: ExperimentConfig, out: Path) -> int:
    geom = cfg.geometry()
    grid = solve_laplace(geom, cfg.get("geometry", "spacing"),
                         cfg.get("geometry", "tol"))
    profile = field_at_height(grid, cfg.get("scan", "height"))
    _write(out / "field.dsv", profile_to_text(profile, cfg.projection()))
    payload, grid_sidecar = grid_to_binary(grid)
    (out / "grid.f64").write_bytes(payload)
    _write(out / "grid.sidecar.txt", grid_sidecar)
    _write(out / "field.sidecar.txt",
           _sidecar_text(cfg, "solve-field", {
               "residual": grid.residual,
               "iterations": grid.iterations,
               "grid_file": "grid.f64",
           }))
    print(f"solve-field: residual {grid.residual:.2e} after "
          f"{grid.iterations} iterations -> {out / 'field.dsv'}")
    return 0


_COMMANDS = {
    "odmr": cmd_odmr,
    "ramsey": cmd_ramsey,
    "lockin-sweep": cmd_lockin_sweep,
    "ac-scan": cmd_ac_scan,
    "dc-scan": cmd_dc_scan,
    "sensitivity": cmd_sensitivity,
    "solve-field": cmd_solve_field,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvscan",
        description="Virtual scanning NV-center electrometer")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="config file (defaults used when omitted)")
        p.add_argument("--out", type=str, default=".",
                       help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override [run] seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads; results are independent of this")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg, _outdir(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"numerical non-convergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
