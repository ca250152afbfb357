"""Scenario configuration: TOML files checked against a fixed schema.

Every table and key is declared below; anything else is rejected with the
dotted path of the offending key.  Missing keys take the defaults of the
dataclass they feed.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["ConfigError", "SCHEMA", "load_config", "parse_config", "validate", "config_hash"]


class ConfigError(ValueError):
    """The configuration file is unreadable or violates the schema."""


NUM = (int, float)

# leaf types: a tuple of accepted Python types, or a list [type] for a list of that type
SCHEMA: dict[str, Any] = {
    "seed": (int,),
    "material": {
        "volume_per_ion": NUM,
        "doping_fraction": NUM,
        "crystal_length": NUM,
        "beam_diameter": NUM,
        "intrinsic_linewidth": NUM,
        "dopant_broadening": NUM,
        "nn_shift": NUM,
        "nn_distance": NUM,
        "min_resolvable_shift": NUM,
        "min_interaction": NUM,
        "interaction_ref": NUM,
        "interaction_ref_distance": NUM,
        "symmetry_factor": (int,),
        "concentration_threshold_ppb": NUM,
        "detection_min_ions": NUM,
    },
    "feasibility": {
        "gamma_q_memory": NUM,
        "gamma_q_computing": NUM,
        "gamma_inh": NUM,
    },
    "cluster": {
        "shifts": [NUM],
        "interactions": [[NUM]],
    },
    "drive": {
        "ideal": (bool,),
        "window": NUM,
        "hyperfine_leakage": (bool,),
        "spectator_sites": (bool,),
    },
    "noise": {
        "optical_T2": NUM,
        "spin_T2": NUM,
        "excited_lifetime": NUM,
    },
    "simulate": {
        "gate": (str,),
        "sites": [(int,)],
        "rabi": NUM,
        "compensate_stark": (bool,),
        "theta": NUM,
        "phi": NUM,
        "omegas": [NUM],
        "sigma": NUM,
        "n_samples": (int,),
    },
    "ensemble": {
        "n_clusters": (int,),
        "n_sites": (int,),
        "line_width": NUM,
        "feature_width": NUM,
        "distribution": (str,),
        "symmetry_factor": (int,),
        "interactions": [[NUM]],
        "detection_min_ions": NUM,
        "shot_noise": (bool,),
    },
    "photonic": {
        "modes": [(str,)],
        "inputs": [[NUM]],
        "circuit": (str,),
        "n_ensemble": NUM,
        "crystal_length_mm": NUM,
        "frequency_offsets_ghz": [NUM],
    },
    "qec": {
        "protocol": (str,),
        "rate": NUM,
        "window": NUM,
        "correlations": [NUM],
        "cycles": (int,),
        "mode": (str,),
        "n_trajectories": (int,),
    },
    "oracle": {
        "max_clusters": (int,),
        "inputs": [[NUM]],
    },
}


def _check(value, spec, path: str, errors: list[str]) -> None:
    if isinstance(spec, dict):
        if not isinstance(value, dict):
            errors.append(f"{path}: expected a table")
            return
        for key, sub in value.items():
            p = f"{path}.{key}" if path else key
            if key not in spec:
                errors.append(f"{p}: unknown key")
            else:
                _check(sub, spec[key], p, errors)
        return
    if isinstance(spec, list):
        if not isinstance(value, list):
            errors.append(f"{path}: expected a list")
            return
        for i, item in enumerate(value):
            _check(item, spec[0], f"{path}[{i}]", errors)
        return
    # bool is a subclass of int; only accept it where bool is declared
    if isinstance(value, bool) and bool not in spec:
        errors.append(f"{path}: expected {'/'.join(t.__name__ for t in spec)}, got bool")
    elif not isinstance(value, spec):
        errors.append(f"{path}: expected {'/'.join(t.__name__ for t in spec)}, got {type(value).__name__}")
    elif isinstance(value, float) and not math.isfinite(value) and path.split(".")[0] != "noise":
        errors.append(f"{path}: must be finite")


def validate(cfg: Mapping[str, Any]) -> dict:
    errors: list[str] = []
    _check(dict(cfg), SCHEMA, "", errors)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return dict(cfg)


def parse_config(text: str) -> dict:
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    return validate(cfg)


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)


def config_hash(cfg: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of the configuration."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(blob.encode()).hexdigest()
