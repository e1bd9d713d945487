import logging
import re
from dataclasses import fields
from typing import Any, Dict, Optional, Tuple

import toml

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from core.exceptions import ScenarioError
from data.scenario import CHANNEL_MODELS, Scenario

logger = logging.getLogger(__name__)

# Canonical key order of emitted scenario files.
SCENARIO_KEYS = tuple(f.name for f in fields(Scenario))

INT_KEYS = {"m", "k", "n", "t_pilot", "seed", "trials", "l_paths"}
FLOAT_KEYS = {"p_u_db", "p_d_db", "rho_db", "angle_spread_deg", "varsigma_deg", "spacing_ratio", "rank_energy"}
OPTIONAL_KEYS = {"rho_db", "typec_aoas_deg"}

_LINE_COL = re.compile(r"line (\d+)")


def key_line(text: str, key: str) -> Optional[int]:
    """1-based line on which ``key`` is assigned, if any."""
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for number, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return number
    return None


def read_toml(text: str) -> Dict[str, Any]:
    """Parses flat TOML text, turning decoder failures into ``ScenarioError``."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = _LINE_COL.search(str(e))
        raise ScenarioError(f"malformed file: {e}", int(match.group(1)) if match else None) from e
    for key, value in data.items():
        if isinstance(value, dict):
            raise ScenarioError(f"tables are not supported ([{key}])", key_line(text, f"[{key}]"))
    return data


def _check_type(key: str, value, text: str):
    line = key_line(text, key)
    if key in INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"{key} must be an integer, got {value!r}", line)
    elif key in FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{key} must be a number, got {value!r}", line)
    elif key == "typec_aoas_deg":
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ScenarioError(f"{key} must be a list of numbers", line)
    elif key == "channel_model":
        if value not in CHANNEL_MODELS:
            raise ScenarioError(f"channel_model must be one of {CHANNEL_MODELS}, got {value!r}", line)


_RANGES = {
    "m": (lambda v: v >= 1, "must be at least 1"),
    "k": (lambda v: v >= 0, "must be non-negative"),
    "n": (lambda v: v >= 0, "must be non-negative"),
    "t_pilot": (lambda v: v >= 1, "must be at least 1"),
    "seed": (lambda v: 0 <= v < 2 ** 64, "must be a 64-bit unsigned integer"),
    "trials": (lambda v: v >= 1, "must be at least 1"),
    "l_paths": (lambda v: v >= 1, "must be at least 1"),
    "angle_spread_deg": (lambda v: v > 0, "must be positive"),
    "spacing_ratio": (lambda v: v > 0, "must be positive"),
    "rank_energy": (lambda v: 0 < v <= 1, "must be in (0, 1]"),
}


def scenario_from_mapping(data: Dict[str, Any], text: str = "", extra_keys: Tuple[str, ...] = ()) -> Scenario:
    """
    Builds a ``Scenario`` from parsed key/values, rejecting unknown keys and
    ill-typed or out-of-range values with the line of the offending key.
    """
    values = {}
    for key, value in data.items():
        if key in extra_keys:
            continue
        if key not in SCENARIO_KEYS:
            raise ScenarioError(f"unknown key '{key}'", key_line(text, key))
        _check_type(key, value, text)
        if key in _RANGES and not _RANGES[key][0](value):
            raise ScenarioError(f"{key} {_RANGES[key][1]}, got {value!r}", key_line(text, key))
        if key in FLOAT_KEYS:
            value = float(value)
        elif key == "typec_aoas_deg":
            value = tuple(float(v) for v in value)
        values[key] = value
    return Scenario(**values)


def parse_scenario(text: str) -> Scenario:
    return scenario_from_mapping(read_toml(text), text)


def load_scenario(path: str) -> Scenario:
    """
    Loads a scenario file.

    Parameters
    ----------
    path : str
        Path to a flat TOML scenario file.

    Returns
    -------
    Scenario
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    scenario = parse_scenario(text)
    logger.info(f"Loaded scenario from {path}: M={scenario.m}, K={scenario.k}, N={scenario.n}")
    return scenario


def emit_scenario(scenario: Scenario) -> str:
    """
    Canonical text of a scenario: every key in declaration order, optional
    keys omitted when unset.
    """
    data = {}
    for key in SCENARIO_KEYS:
        value = getattr(scenario, key)
        if value is None and key in OPTIONAL_KEYS:
            continue
        data[key] = list(value) if isinstance(value, tuple) else value
    return toml.dumps(data)
