"""Config file handling for the command-line front end.

The format is plain text with [section] headers and key=value lines ('#'
starts a comment). Unknown sections or keys are rejected by name. Every key
has a default; a few accept 'auto' and are resolved at load time (sequence
tau from the matched frequency, NV height from the probe tilt, scan range
from the device extent). The fully resolved config can be dumped back to
text, and that dump is itself a valid config, which is how output sidecars
stay replayable.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass

from . import analysis, electrostatics, pulses, scan, screening, spin

__all__ = ["ConfigError", "ExperimentConfig", "SCHEMA"]


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class _Key:
    type: str               # 'float', 'int', 'bool', 'str', 'floats'
    default: str
    auto_ok: bool = False
    choices: tuple[str, ...] | None = None


SCHEMA: dict[str, dict[str, _Key]] = {
    "species": {
        "isotope": _Key("str", "N15", choices=("N15", "N14")),
        "d_gs": _Key("float", "2870.0"),
        "gamma_b": _Key("float", "2.8"),
        "gamma_n": _Key("float", "auto", auto_ok=True),
        "a_par": _Key("float", "auto", auto_ok=True),
        "a_perp": _Key("float", "auto", auto_ok=True),
        "quadrupole": _Key("float", "auto", auto_ok=True),
        "d_perp": _Key("float", "0.17"),
        "d_par": _Key("float", "0.0035"),
    },
    "environment": {
        "bx": _Key("float", "73.0"),
        "by": _Key("float", "0.0"),
        "bz": _Key("float", "0.0"),
        "ex": _Key("float", "0.0"),
        "ey": _Key("float", "0.0"),
        "ez": _Key("float", "0.0"),
    },
    "screening": {
        "cutoff_khz": _Key("float", "35.4"),
        "dielectric_factor": _Key("float", "0.41"),
    },
    "geometry": {
        "preset": _Key("str", "default", choices=("default", "custom")),
        "electrode_width": _Key("float", "1.0"),
        "gap": _Key("float", "0.5"),
        "thickness": _Key("float", "0.15"),
        "center_potential": _Key("float", "1.0"),
        "outer_potential": _Key("float", "0.0"),
        "substrate_permittivity": _Key("float", "3.8"),
        "margin": _Key("float", "10.0"),
        "spacing": _Key("float", "0.025"),
        "tol": _Key("float", "1e-8"),
        # custom preset: semicolon-separated "x0 x1 z0 z1 potential" rectangles
        "conductors": _Key("str", ""),
        "x_extent": _Key("floats", ""),
        "z_extent": _Key("floats", ""),
    },
    "probe": {
        "pillar_count": _Key("int", "7"),
        "pillar_spacing": _Key("float", "7.0"),
        "outer_diameter": _Key("float", "0.8"),
        "inner_diameter": _Key("float", "0.3"),
        "nv_depth": _Key("float", "0.04"),
        "tilt_deg": _Key("float", "0.40925395"),
        "contact_pillar": _Key("int", "0"),
        "sensing_pillar": _Key("int", "1"),
    },
    "motion": {
        "mode": _Key("str", "clang", choices=("fundamental", "clang")),
        "frequency_khz": _Key("float", "190.0"),
        "amplitude": _Key("float", "0.013"),
        "direction_deg": _Key("float", "30.0"),
        "beta": _Key("float", "-0.03"),
    },
    "sequence": {
        "kind": _Key("str", "xy4",
                     choices=("ramsey", "spin_echo", "cpmg", "xy4", "xy8")),
        "order": _Key("int", "1"),
        "tau_us": _Key("float", "auto", auto_ok=True),
        "final_phase_deg": _Key("float", "90.0"),
    },
    "coherence": {
        "t2_star_us": _Key("float", "1.5"),
        "t2_base_us": _Key("float", "20.0"),
        "stretch_p": _Key("float", "1.5"),
        "pulse_scaling_s": _Key("float", "0.66666667"),
    },
    "readout": {
        "rate": _Key("float", "1e5"),
        "contrast": _Key("float", "0.2"),
        "window_us": _Key("float", "0.2"),
        "init_us": _Key("float", "2.0"),
        "shot_noise": _Key("bool", "true"),
        "n_avg": _Key("int", "10000"),
    },
    "scan": {
        "x_start": _Key("float", "auto", auto_ok=True),
        "x_stop": _Key("float", "auto", auto_ok=True),
        "x_step": _Key("float", "0.05"),
        "rows": _Key("int", "1"),
        "height": _Key("float", "auto", auto_ok=True),
        "ac_vpp": _Key("float", "0.96"),
        "ac_frequency_khz": _Key("float", "250.0"),
        "dc_volts": _Key("float", "16.0"),
    },
    "projection": {
        "phi_deg": _Key("float", "20.0"),
        "theta_deg": _Key("float", "45.0"),
    },
    "odmr": {
        "mw_x": _Key("float", "1.0"),
        "mw_y": _Key("float", "0.0"),
        "mw_z": _Key("float", "0.0"),
        "line_width_mhz": _Key("float", "1.0"),
        "f_start_mhz": _Key("float", "auto", auto_ok=True),
        "f_stop_mhz": _Key("float", "auto", auto_ok=True),
        "points": _Key("int", "2001"),
        "include_nuclear": _Key("bool", "true"),
    },
    "ramsey": {
        "trigger_offset_us": _Key("float", "4.0"),
        "spacing_us": _Key("float", "4.0"),
        "count": _Key("int", "60"),
        "tau_us": _Key("float", "0.8"),
        "signal_amplitude": _Key("float", "1.0"),
        "signal_frequency_khz": _Key("float", "12.0"),
        "signal_phase_deg": _Key("float", "0.0"),
    },
    "lockin": {
        "frequencies_khz": _Key("floats", "4,12,30,200,800,1200"),
        # drive adjusted per frequency so the unscreened response would be
        # this phase; keeps every point in the (-pi, pi] extraction range
        "target_phase_rad": _Key("float", "1.0"),
        "ramsey_tau_us": _Key("float", "0.8"),
        "ramsey_spacing_us": _Key("float", "4.0"),
        "ramsey_count": _Key("int", "60"),
        "dd_order": _Key("int", "1"),
        "dd_phase_points": _Key("int", "24"),
        "split_khz": _Key("float", "100.0"),
    },
    "run": {
        "seed": _Key("int", "1"),
    },
}

_ISOTOPE_DEFAULTS = {
    "N15": {"gamma_n": spin.GAMMA_N15, "a_par": 3.65, "a_perp": 3.03,
            "quadrupole": 0.0},
    "N14": {"gamma_n": spin.GAMMA_N14, "a_par": 2.2, "a_perp": 2.2,
            "quadrupole": -5.01},
}


class ExperimentConfig:
    """Validated, fully resolved configuration."""

    def __init__(self, values: dict[str, dict[str, str]]):
        self._values = values
        self._auto_keys = {(sec, key) for sec, keys in values.items()
                           for key, raw in keys.items() if raw == "auto"}
        self._typecheck()          # validate raw values before deriving autos
        self._resolve_autos()

    def was_auto(self, sec: str, key: str) -> bool:
        """True when the loaded config left this key to be derived."""
        return (sec, key) in self._auto_keys

    # -- construction -------------------------------------------------------

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        vals = {sec: {k: spec.default for k, spec in keys.items()}
                for sec, keys in SCHEMA.items()}
        return cls(vals)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None,
                                           comment_prefixes=("#", ";"),
                                           inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

        vals = {sec: {k: spec.default for k, spec in keys.items()}
                for sec, keys in SCHEMA.items()}
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key '{key}' in section [{sec}]")
                vals[sec][key] = raw.strip()
        return cls(vals)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_text(text)

    def _typecheck(self):
        for sec, keys in SCHEMA.items():
            for key, spec in keys.items():
                self._parse(sec, key, spec)

    # -- access -------------------------------------------------------------

    def _parse(self, sec: str, key: str, spec: _Key):
        raw = self._values[sec][key]
        if spec.auto_ok and raw == "auto":
            return "auto"
        if spec.choices is not None and raw not in spec.choices:
            raise ConfigError(
                f"key '{key}' in section [{sec}]: {raw!r} not one of "
                f"{spec.choices}")
        try:
            if spec.type == "float":
                return float(raw)
            if spec.type == "int":
                return int(raw)
            if spec.type == "bool":
                low = raw.lower()
                if low in ("true", "yes", "1", "on"):
                    return True
                if low in ("false", "no", "0", "off"):
                    return False
                raise ValueError(raw)
            if spec.type == "floats":
                return tuple(float(v) for v in raw.replace(",", " ").split()) \
                    if raw.strip() else ()
            return raw
        except ValueError as exc:
            raise ConfigError(
                f"key '{key}' in section [{sec}]: cannot parse {raw!r} "
                f"as {spec.type}") from exc

    def get(self, sec: str, key: str):
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown key '{key}' in section [{sec}]")
        return self._parse(sec, key, SCHEMA[sec][key])

    def set(self, sec: str, key: str, value) -> None:
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown key '{key}' in section [{sec}]")
        self._values[sec][key] = str(value)

    # -- auto resolution ----------------------------------------------------

    def _resolve_autos(self) -> None:
        try:
            self._resolve_autos_inner()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"cannot resolve derived config values: {exc}") \
                from exc

    def _resolve_autos_inner(self) -> None:
        vals = self._values
        if int(vals["run"]["seed"]) < 0:
            raise ConfigError("key 'seed' in section [run] must be non-negative")
        iso = vals["species"]["isotope"]
        if iso in _ISOTOPE_DEFAULTS:
            for key, dv in _ISOTOPE_DEFAULTS[iso].items():
                if vals["species"][key] == "auto":
                    vals["species"][key] = repr(dv)

        if vals["sequence"]["tau_us"] == "auto":
            kind = vals["sequence"]["kind"]
            order = int(vals["sequence"]["order"])
            n_pi = {"ramsey": 0, "spin_echo": 1, "cpmg": order,
                    "xy4": 4 * order, "xy8": 8 * order}.get(kind, 0)
            if n_pi > 0:
                f_mhz = float(vals["scan"]["ac_frequency_khz"]) * 1e-3
                vals["sequence"]["tau_us"] = repr(n_pi / (2.0 * f_mhz))
            else:
                vals["sequence"]["tau_us"] = "0.8"

        if vals["scan"]["height"] == "auto":
            probe = self._probe_from(vals)
            h = scan.nv_sample_distance(probe,
                                        int(vals["probe"]["sensing_pillar"]),
                                        int(vals["probe"]["contact_pillar"]))
            vals["scan"]["height"] = repr(h)

        if vals["scan"]["x_start"] == "auto" or vals["scan"]["x_stop"] == "auto":
            margin = float(vals["geometry"]["margin"])
            width = float(vals["geometry"]["electrode_width"])
            gap = float(vals["geometry"]["gap"])
            device = 3 * width + 2 * gap
            if vals["scan"]["x_start"] == "auto":
                vals["scan"]["x_start"] = repr(margin)
            if vals["scan"]["x_stop"] == "auto":
                vals["scan"]["x_stop"] = repr(margin + device)

        if vals["odmr"]["f_start_mhz"] == "auto" or vals["odmr"]["f_stop_mhz"] == "auto":
            species = self._species_from(vals)
            env = self._environment_from(vals)
            d = species.d_gs
            span = 2.0 * (species.gamma_b * env.b_perp) ** 2 / d + 20.0
            if vals["odmr"]["f_start_mhz"] == "auto":
                vals["odmr"]["f_start_mhz"] = repr(d - span)
            if vals["odmr"]["f_stop_mhz"] == "auto":
                vals["odmr"]["f_stop_mhz"] = repr(d + span)

    # -- dump ---------------------------------------------------------------

    def resolved_text(self) -> str:
        buf = io.StringIO()
        for sec, keys in SCHEMA.items():
            buf.write(f"[{sec}]\n")
            for key in keys:
                buf.write(f"{key} = {self._values[sec][key]}\n")
            buf.write("\n")
        return buf.getvalue()

    # -- domain builders ----------------------------------------------------

    @staticmethod
    def _species_from(vals) -> spin.NVSpecies:
        s = vals["species"]
        return spin.NVSpecies(
            isotope=s["isotope"], d_gs=float(s["d_gs"]),
            gamma_b=float(s["gamma_b"]), gamma_n=float(s["gamma_n"]),
            a_par=float(s["a_par"]), a_perp=float(s["a_perp"]),
            quadrupole=float(s["quadrupole"]), d_perp=float(s["d_perp"]),
            d_par=float(s["d_par"]))

    @staticmethod
    def _environment_from(vals) -> spin.FieldEnvironment:
        e = vals["environment"]
        return spin.FieldEnvironment(
            b=(float(e["bx"]), float(e["by"]), float(e["bz"])),
            e=(float(e["ex"]), float(e["ey"]), float(e["ez"])))

    @staticmethod
    def _probe_from(vals) -> scan.ProbeConfig:
        p = vals["probe"]
        return scan.ProbeConfig(
            pillar_count=int(p["pillar_count"]),
            pillar_spacing=float(p["pillar_spacing"]),
            outer_diameter=float(p["outer_diameter"]),
            inner_diameter=float(p["inner_diameter"]),
            nv_depth=float(p["nv_depth"]),
            tilt=math.radians(float(p["tilt_deg"])))

    def species(self) -> spin.NVSpecies:
        return self._species_from(self._values)

    def environment(self) -> spin.FieldEnvironment:
        return self._environment_from(self._values)

    def screening_model(self) -> screening.ScreeningModel:
        try:
            return screening.ScreeningModel(
                f_c_khz=self.get("screening", "cutoff_khz"),
                kappa_d=self.get("screening", "dielectric_factor"))
        except ValueError as exc:
            raise ConfigError(f"section [screening]: {exc}") from exc

    def geometry(self) -> electrostatics.ElectrodeGeometry2D:
        g = self._values["geometry"]
        try:
            if g["preset"] == "default":
                return electrostatics.default_device(
                    gap=float(g["gap"]), width=float(g["electrode_width"]),
                    thickness=float(g["thickness"]),
                    center_potential=float(g["center_potential"]),
                    outer_potential=float(g["outer_potential"]),
                    margin=float(g["margin"]),
                    substrate_permittivity=float(g["substrate_permittivity"]))
            rects = []
            for chunk in g["conductors"].split(";"):
                chunk = chunk.strip()
                if not chunk:
                    continue
                parts = [float(v) for v in chunk.split()]
                if len(parts) != 5:
                    raise ConfigError(
                        "key 'conductors' in section [geometry]: each entry "
                        "needs 'x0 x1 z0 z1 potential'")
                rects.append(electrostatics.ConductorRect(*parts))
            xe = self.get("geometry", "x_extent")
            ze = self.get("geometry", "z_extent")
            if len(xe) != 2 or len(ze) != 2:
                raise ConfigError(
                    "keys 'x_extent'/'z_extent' in section [geometry] must "
                    "each hold two values for the custom preset")
            return electrostatics.ElectrodeGeometry2D(
                conductors=tuple(rects), x_extent=tuple(xe), z_extent=tuple(ze),
                substrate_permittivity=float(g["substrate_permittivity"]))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"section [geometry]: {exc}") from exc

    def probe(self) -> scan.ProbeConfig:
        try:
            return self._probe_from(self._values)
        except ValueError as exc:
            raise ConfigError(f"section [probe]: {exc}") from exc

    def motion(self) -> scan.TipMotion:
        try:
            return scan.TipMotion(
                mode=self.get("motion", "mode"),
                frequency_khz=self.get("motion", "frequency_khz"),
                amplitude=self.get("motion", "amplitude"),
                direction=math.radians(self.get("motion", "direction_deg")),
                beta=self.get("motion", "beta"))
        except ValueError as exc:
            raise ConfigError(f"section [motion]: {exc}") from exc

    def coherence(self) -> pulses.CoherenceModel:
        try:
            return pulses.CoherenceModel(
                t2_star=self.get("coherence", "t2_star_us"),
                t2_base=self.get("coherence", "t2_base_us"),
                stretch_p=self.get("coherence", "stretch_p"),
                pulse_scaling_s=self.get("coherence", "pulse_scaling_s"))
        except ValueError as exc:
            raise ConfigError(f"section [coherence]: {exc}") from exc

    def readout(self) -> pulses.ReadoutModel:
        try:
            return pulses.ReadoutModel(
                f0=self.get("readout", "rate"),
                contrast=self.get("readout", "contrast"),
                t_r=self.get("readout", "window_us"),
                t_ini=self.get("readout", "init_us"),
                shot_noise=self.get("readout", "shot_noise"),
                seed=self.get("run", "seed"))
        except ValueError as exc:
            raise ConfigError(f"section [readout]: {exc}") from exc

    def projection(self) -> electrostatics.ProjectionAxis:
        return electrostatics.ProjectionAxis.from_degrees(
            self.get("projection", "phi_deg"),
            self.get("projection", "theta_deg"))

    def sensitivity_params(self) -> analysis.SensitivityParams:
        try:
            return analysis.SensitivityParams(
                f=self.get("readout", "rate"),
                contrast=self.get("readout", "contrast"),
                t_r=self.get("readout", "window_us"),
                t_ini=self.get("readout", "init_us"),
                tau=self.get("sequence", "tau_us"),
                d_perp=self.get("species", "d_perp"))
        except ValueError as exc:
            raise ConfigError(f"sensitivity parameters: {exc}") from exc

    def scan_plan(self, mode: str) -> scan.ScanPlan:
        if mode not in ("ac", "dc"):
            raise ValueError("mode must be 'ac' or 'dc'")
        center = self.get("geometry", "center_potential")
        if center == 0.0:
            raise ConfigError(
                "key 'center_potential' in section [geometry] must be "
                "non-zero to define the drive scale")
        if mode == "ac":
            freq = self.get("scan", "ac_frequency_khz")
            drive_scale = 0.5 * self.get("scan", "ac_vpp") / center
        else:
            freq = self.get("motion", "frequency_khz")
            drive_scale = self.get("scan", "dc_volts") / center
        try:
            return scan.ScanPlan(
                x_start=self.get("scan", "x_start"),
                x_stop=self.get("scan", "x_stop"),
                x_step=self.get("scan", "x_step"),
                rows=self.get("scan", "rows"),
                height=self.get("scan", "height"),
                sequence=self.get("sequence", "kind"),
                order=self.get("sequence", "order"),
                tau=self.get("sequence", "tau_us"),
                frequency_khz=freq,
                drive_scale=drive_scale,
                n_avg=self.get("readout", "n_avg"),
                seed=self.get("run", "seed"),
                spacing=self.get("geometry", "spacing"),
                tol=self.get("geometry", "tol"))
        except ValueError as exc:
            raise ConfigError(f"section [scan]: {exc}") from exc
