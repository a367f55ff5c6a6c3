"""INI run configuration.

Every physical key carries its unit in the name. Unknown sections and keys
are rejected so a typo never silently falls back to a default.
"""

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from typing import Dict

from .dynamics import EDGES
from .exceptions import ValidationError
from .field import DEFAULT_FRINGE_PERIOD, BeamParams, InterferometerConfig, crossing_angle_for_period
from .grid import ScanGrid
from .pointer import (
    DEFAULT_TILTS_DEG,
    PLATE_X_COEFFICIENTS,
    PLATE_Y_COEFFICIENTS,
    NoiseModel,
    default_plates,
)
from .presets import DEFAULT_PRESET

SCHEMA_VERSION = 1

_DEFAULTS = {
    "run": {
        "schema_version": str(SCHEMA_VERSION),
        "seed": "20240607",
    },
    "interferometer": {
        "wavelength_nm": "1550.0",
        "waist_um": "8.3",
        "fringe_period_um": repr(DEFAULT_FRINGE_PERIOD * 1e6),
        "arm_phase_rad": "0.0",
        "amplitude1": "1.0",
        "amplitude2": "1.0",
        "axis_offset_um": "0.0",
    },
    "grid": {
        "x0_um": "-9.0",
        "z0_um": "-9.0",
        "dx_nm": "100.0",
        "dz_nm": "400.0",
        "nx": "181",
        "nz": "46",
    },
    "plates": {
        "x_a_rad_m": repr(PLATE_X_COEFFICIENTS[0]),
        "x_b_rad_s": repr(PLATE_X_COEFFICIENTS[1]),
        "x_c_rad": repr(PLATE_X_COEFFICIENTS[2]),
        "y_a_rad_m": repr(PLATE_Y_COEFFICIENTS[0]),
        "y_b_rad_s": repr(PLATE_Y_COEFFICIENTS[1]),
        "y_c_rad": repr(PLATE_Y_COEFFICIENTS[2]),
        "tilts_deg": ", ".join(repr(t) for t in DEFAULT_TILTS_DEG),
    },
    "noise": {
        "enabled": "true",
        "rate_per_s": repr(DEFAULT_PRESET.rate_per_s),
        "accumulation_s": repr(DEFAULT_PRESET.accumulation_s),
        "dark_rate_per_s": repr(DEFAULT_PRESET.dark_rate_per_s),
        "phase_walk_sigma_rad": repr(DEFAULT_PRESET.phase_walk_sigma_rad),
        "phase_walk_policy": DEFAULT_PRESET.phase_walk_policy,
        "shot_noise": "true",
        "slit_width_um": "0.0",
    },
    "inversion": {
        "weighting": "none",
    },
    "trajectory": {
        "n_seeds": "24",
        "entry_edge": "z-min",
        "step_nm": "0.0",
        "max_steps": "10000",
        "normalize": "true",
    },
    "continuity": {
        "count_floor": "1e-4",
        "smoothing_sigma_nm": "0.0",
    },
    "output": {
        "mass_histogram_bins": "fd",
    },
}


def _float(section, key, raw):
    try:
        val = float(raw)
    except ValueError as exc:
        raise ValidationError(f"[{section}] {key}: not a number: {raw!r}") from exc
    if not math.isfinite(val):
        raise ValidationError(f"[{section}] {key}: must be finite")
    return val


def _int(section, key, raw):
    try:
        return int(raw)
    except ValueError as exc:
        raise ValidationError(f"[{section}] {key}: not an integer: {raw!r}") from exc


def _bool(section, key, raw):
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValidationError(f"[{section}] {key}: not a boolean: {raw!r}")


@dataclass
class RunConfig:
    values: Dict[str, Dict[str, str]] = field(
        default_factory=lambda: {s: dict(kv) for s, kv in _DEFAULTS.items()}
    )

    @classmethod
    def load(cls, path=None, seed=None):
        cfg = cls()
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            parser.optionxform = str
            try:
                with open(path, encoding="utf-8") as fh:
                    parser.read_file(fh)
            except configparser.Error as exc:
                raise ValidationError(f"malformed config: {exc}") from exc
            for section in parser.sections():
                if section not in _DEFAULTS:
                    raise ValidationError(f"unknown config section [{section}]")
                for key, raw in parser.items(section):
                    if key not in _DEFAULTS[section]:
                        raise ValidationError(f"unknown key {key!r} in [{section}]")
                    cfg.values[section][key] = raw.strip()
        if seed is not None:
            cfg.values["run"]["seed"] = str(seed)
        cfg.validate()
        return cfg

    def get(self, section, key):
        return self.values[section][key]

    def validate(self):
        version = _int("run", "schema_version", self.get("run", "schema_version"))
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {version}")
        seed = _int("run", "seed", self.get("run", "seed"))
        if not 0 <= seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        # building every object runs its own validation
        self.interferometer()
        self.grid()
        self.plates()
        self.noise()
        self.trajectory()
        self.continuity()
        if self.get("inversion", "weighting") not in ("none", "poisson"):
            raise ValidationError("[inversion] weighting must be none or poisson")

    @property
    def seed(self):
        return int(self.get("run", "seed"))

    def interferometer(self):
        s = "interferometer"
        f = {k: _float(s, k, v) for k, v in self.values[s].items()}
        lam = f["wavelength_nm"] / 1e9
        period = f["fringe_period_um"] / 1e6
        if not period > 0 or lam / (2 * period) >= math.sin(math.pi / 4):
            raise ValidationError("fringe_period_um too small for the paraxial crossing angle")
        theta = crossing_angle_for_period(lam, period)
        waist = f["waist_um"] / 1e6
        off = f["axis_offset_um"] / 1e6
        b1 = BeamParams(lam, waist, theta, f["amplitude1"], off)
        b2 = BeamParams(lam, waist, -theta, f["amplitude2"], off)
        return InterferometerConfig(b1, b2, f["arm_phase_rad"])

    def grid(self):
        s = "grid"
        v = self.values[s]
        return ScanGrid(
            _float(s, "x0_um", v["x0_um"]) / 1e6,
            _float(s, "z0_um", v["z0_um"]) / 1e6,
            _float(s, "dx_nm", v["dx_nm"]) / 1e9,
            _float(s, "dz_nm", v["dz_nm"]) / 1e9,
            _int(s, "nx", v["nx"]),
            _int(s, "nz", v["nz"]),
        )

    def plates(self):
        s = "plates"
        v = self.values[s]
        xt = tuple(_float(s, k, v[k]) for k in ("x_a_rad_m", "x_b_rad_s", "x_c_rad"))
        yt = tuple(_float(s, k, v[k]) for k in ("y_a_rad_m", "y_b_rad_s", "y_c_rad"))
        tilts = tuple(_float(s, "tilts_deg", t) for t in v["tilts_deg"].split(",") if t.strip())
        if not tilts:
            raise ValidationError("[plates] tilts_deg is empty")
        return default_plates(xt, yt, tilts)

    def noise_enabled(self):
        return _bool("noise", "enabled", self.get("noise", "enabled"))

    def noise(self):
        s = "noise"
        v = self.values[s]
        rate = _float(s, "rate_per_s", v["rate_per_s"])
        T = _float(s, "accumulation_s", v["accumulation_s"])
        if not rate > 0 or not T > 0:
            raise ValidationError("[noise] rate_per_s and accumulation_s must be positive")
        slit = _float(s, "slit_width_um", v["slit_width_um"]) / 1e6
        if slit < 0:
            raise ValidationError("[noise] slit_width_um must be nonnegative")
        if not self.noise_enabled():
            model = NoiseModel.off()
        else:
            model = NoiseModel(
                dark_rate=_float(s, "dark_rate_per_s", v["dark_rate_per_s"]),
                phase_walk_sigma=_float(s, "phase_walk_sigma_rad", v["phase_walk_sigma_rad"]),
                shot_noise=_bool(s, "shot_noise", v["shot_noise"]),
                rng_seed=self.seed,
                phase_walk_policy=v["phase_walk_policy"],
            )
        return model, rate, T, slit

    def trajectory(self):
        s = "trajectory"
        v = self.values[s]
        n = _int(s, "n_seeds", v["n_seeds"])
        if n < 1:
            raise ValidationError("[trajectory] n_seeds must be >= 1")
        step = _float(s, "step_nm", v["step_nm"]) / 1e9
        if step < 0:
            raise ValidationError("[trajectory] step_nm must be nonnegative (0 selects the default)")
        max_steps = _int(s, "max_steps", v["max_steps"])
        if max_steps < 1:
            raise ValidationError("[trajectory] max_steps must be >= 1")
        edge = v["entry_edge"]
        if edge not in EDGES:
            raise ValidationError(f"[trajectory] entry_edge must be one of {EDGES}")
        return {
            "n_seeds": n,
            "entry_edge": edge,
            "h": step or None,
            "max_steps": max_steps,
            "normalize": _bool(s, "normalize", v["normalize"]),
        }

    def continuity(self):
        s = "continuity"
        v = self.values[s]
        floor = _float(s, "count_floor", v["count_floor"])
        smooth = _float(s, "smoothing_sigma_nm", v["smoothing_sigma_nm"]) / 1e9
        if not 0 <= floor < 1 or smooth < 0:
            raise ValidationError("[continuity] count_floor in [0, 1), smoothing_sigma_nm >= 0")
        return {"count_floor": floor, "smoothing_sigma": smooth}

    def to_ini(self):
        lines = []
        for section in _DEFAULTS:
            lines.append(f"[{section}]")
            for key in _DEFAULTS[section]:
                lines.append(f"{key} = {self.values[section][key]}")
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()
