"""Run configuration: JSON files validated against a bundled schema, merged
over defaults."""

from __future__ import annotations

import copy
import json
import re
from importlib import resources
from pathlib import Path

import jsonschema

__all__ = ["ConfigError", "DEFAULTS", "COMMAND_PRESETS", "load_schema", "load_config", "merge"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the field and source line."""


DEFAULTS = {
    "preset": "exp2_al",
    "levels": 4,
    "j_zz_mhz": None,
    "seed": 0,
    "drive": {"amplitude_mhz": 5.0, "phase_rad": 0.0, "crosstalk": 0.0, "crosstalk_phase_rad": 0.0,
              "frequency_ghz": None},
    "sweep_detuning": {"start": -0.57, "stop": 1.63, "points": 111, "pole_window": 0.05, "min_block_overlap": 0.5},
    "sweep_amplitude": {"start_mhz": 0.0, "stop_mhz": 40.0, "points": 21, "min_block_overlap": 0.5},
    "ht": {"tau_max_us": 6.0, "points": 241, "noise": "none", "n_starts": 4},
    "echo": {"rise_ns": 20.0, "gap_ns": 5.0, "pi_ns": 40.0, "points": 41, "tau_max_ns": None, "pulsed_pi": False,
             "noise": "none", "dt_ns": 0.05},
    "qpt": {"gate": "echoed-cr", "noise": "none", "shots": None, "readout_fidelity": None, "max_iter": 20000},
    "rb": {"lengths": [1, 5, 10, 15, 20, 25, 30, 35, 40], "n_seq": 17, "shots": None, "noise": "coherence-echo",
           "interleave": None, "t_2q_ns": 220.0, "t_1q_ns": 45.0, "pulses_per_layer": 1.875},
    "coherence_limit": {"tau_g_ns": 220.0, "tau_1q_ns": 40.0, "which": "echo", "qubits": ["T", "A"]},
}

# commands whose natural device differs from the global default
COMMAND_PRESETS = {"sweep-detuning": "exp1_cu"}

# amplitudes that suit each command when the config does not set one
COMMAND_DRIVE_MHZ = {"echoed-cr": 30.0, "qpt": 30.0, "rb": 30.0}


def load_schema() -> dict:
    text = resources.files("crossres").joinpath("data/config.schema.json").read_text()
    return json.loads(text)


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _locate(text: str, path) -> int | None:
    """Best-effort 1-based line of the last key in ``path``."""
    line = 0
    lines = text.splitlines()
    for key in path:
        if isinstance(key, int):
            continue
        pat = re.compile(r'"' + re.escape(str(key)) + r'"\s*:')
        for i in range(line, len(lines)):
            if pat.search(lines[i]):
                line = i
                break
        else:
            return None
    return line + 1


def _dotted(path) -> str:
    out = ""
    for k in path:
        out += f"[{k}]" if isinstance(k, int) else (f".{k}" if out else str(k))
    return out or "<root>"


def load_config(path: str | Path | None = None, command: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the file at ``path``, then ``overrides``.

    Raises
    ------
    ConfigError
        On unreadable files, JSON syntax errors (with line and column) or
        schema violations (with the dotted field path and its line).
    """
    cfg = copy.deepcopy(DEFAULTS)
    if command in COMMAND_PRESETS:
        cfg["preset"] = COMMAND_PRESETS[command]
    user: dict = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"{p}: cannot read config ({exc.strerror})") from None
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        try:
            jsonschema.validate(user, load_schema())
        except jsonschema.ValidationError as exc:
            where = _dotted(exc.absolute_path)
            line = _locate(text, list(exc.absolute_path))
            loc = f"{p}:{line}" if line else str(p)
            raise ConfigError(f"{loc}: field {where}: {exc.message}") from None
    if command in COMMAND_DRIVE_MHZ and "amplitude_mhz" not in user.get("drive", {}):
        cfg["drive"]["amplitude_mhz"] = COMMAND_DRIVE_MHZ[command]
    cfg = merge(cfg, user)
    if overrides:
        cfg = merge(cfg, overrides)
        try:
            jsonschema.validate(cfg, load_schema())
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"command-line override: field {_dotted(exc.absolute_path)}: {exc.message}") from None
    return cfg
