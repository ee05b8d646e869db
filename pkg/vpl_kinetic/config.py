"""Run configuration: YAML scenarios, validation and environment overrides.

A configuration is a two-level mapping of sections to keys. Every key has a
convertor; unknown keys and values a convertor rejects raise
:class:`~vpl_kinetic.errors.ConfigError` naming the key. Environment variables
``VPL_<SECTION>__<KEY>`` override file values (parsed as YAML scalars, then
converted like file values).
"""
import copy
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Callable, Dict, Mapping

import yaml

from .errors import ConfigError
from .grid import SpatialMesh, VelocityGrid
from .solver import (
    COLLISION_INTEGRATORS,
    DRIFT_SCHEMES,
    INITIAL_RECIPES,
    MODES,
    TRANSPORT_SCHEMES,
    SolverConfig,
)

LOGGER = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent.joinpath("scenarios")
ENV_PREFIX = "VPL_"

DEFAULT_CONFIG = {
    "scenario": "custom",
    "grid": {"v_max": 6.0, "n_axis": 16},
    "mesh": {"dim": 1, "length": 1.0, "radius": 1.0, "n_cells": 32},
    "landau": {
        "gamma": -3.0,
        "origin_rule": "lattice",
        "workers": 1,
        "cache_dir": None,
    },
    "solver": {
        "mode": "frozen",
        "t_end": 5.0,
        "dt": None,
        "cfl_safety": 0.9,
        "diffusion_safety": 0.9,
        "transport_scheme": "upwind",
        "drift_scheme": "upwind",
        "collision_integrator": "rk2",
        "picard_tol": 1e-8,
        "picard_max_iters": 10,
        "max_dt_halvings": 4,
        "bc_kind": "neumann",
        "initial_recipe": "isotropic",
        "eps0": 1e-3,
        "theta0": 0.0,
        "seed": 0,
        "physical": False,
        "checkpoint_every": 0,
    },
    "diagnostics": {
        "thetas": [0.0, 1.0],
        "cadence": 10,
        "field_weight": 2.0,
        "symmetry_tol": 1e-10,
    },
    "output": {"directory": "vpl-output"},
}


def positive_float(value):
    value = float(value)
    if not value > 0:
        raise ValueError("must be positive")
    return value


def nonnegative_float(value):
    value = float(value)
    if value < 0:
        raise ValueError("must be non-negative")
    return value


def positive_int(value):
    if isinstance(value, bool) or int(value) != float(value):
        raise ValueError("must be an integer")
    if int(value) < 1:
        raise ValueError("must be at least 1")
    return int(value)


def nonnegative_int(value):
    if isinstance(value, bool) or int(value) != float(value):
        raise ValueError("must be an integer")
    if int(value) < 0:
        raise ValueError("must be non-negative")
    return int(value)


def boolean(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def optional(convertor):
    def convert(value):
        if value is None or (isinstance(value, str) and value.lower() == "none"):
            return None
        return convertor(value)

    return convert


def choice(*options):
    def convert(value):
        if value not in options:
            raise ValueError("expected one of {}".format(", ".join(map(str, options))))
        return value

    return convert


def float_list(value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if isinstance(value, str):
        value = [item for item in value.split(",") if item.strip()]
    items = [float(item) for item in value]
    if not items or any(item < 0 for item in items):
        raise ValueError("expected a non-empty list of non-negative numbers")
    return items


def even_axis(value):
    value = positive_int(value)
    if value < 8 or value % 2:
        raise ValueError("n_axis must be even and at least 8")
    return value


def picard_iterations(value):
    value = positive_int(value)
    if value < 2:
        raise ValueError("at least 2 iterations are needed to measure a change")
    return value


def text(value):
    if not isinstance(value, str):
        raise ValueError("expected a string")
    return value


CONVERTORS: Dict[str, Any] = {
    "scenario": text,
    "grid": {"v_max": positive_float, "n_axis": even_axis},
    "mesh": {
        "dim": choice(1, 2),
        "length": positive_float,
        "radius": positive_float,
        "n_cells": positive_int,
    },
    "landau": {
        "gamma": float,
        "origin_rule": choice("lattice", "zero"),
        "workers": positive_int,
        "cache_dir": optional(str),
    },
    "solver": {
        "mode": choice(*MODES),
        "t_end": positive_float,
        "dt": optional(positive_float),
        "cfl_safety": positive_float,
        "diffusion_safety": positive_float,
        "transport_scheme": choice(*TRANSPORT_SCHEMES),
        "drift_scheme": choice(*DRIFT_SCHEMES),
        "collision_integrator": choice(*COLLISION_INTEGRATORS),
        "picard_tol": positive_float,
        "picard_max_iters": picard_iterations,
        "max_dt_halvings": nonnegative_int,
        "bc_kind": choice("neumann", "dirichlet"),
        "initial_recipe": choice(*INITIAL_RECIPES),
        "eps0": nonnegative_float,
        "theta0": float,
        "seed": nonnegative_int,
        "physical": boolean,
        "checkpoint_every": nonnegative_int,
    },
    "diagnostics": {
        "thetas": float_list,
        "cadence": positive_int,
        "field_weight": nonnegative_float,
        "symmetry_tol": positive_float,
    },
    "output": {"directory": str},
}


def _convert(key: str, convertor: Callable, value):
    try:
        return convertor(value)
    except (ValueError, TypeError) as error:
        raise ConfigError(
            "Invalid option value: (option: '{}'; value: {})\n{}".format(
                key, value, error
            )
        )


def merge(data: Dict[str, Any], updates: Mapping, origin="config") -> Dict[str, Any]:
    """Validate ``updates`` key by key and apply them to ``data`` in place."""
    if not isinstance(updates, Mapping):
        raise ConfigError("Invalid {}: expected a mapping of sections".format(origin))
    for section, value in updates.items():
        if section not in CONVERTORS:
            raise ConfigError("Unknown option: {}".format(section))
        convertor = CONVERTORS[section]
        if not isinstance(convertor, dict):
            data[section] = _convert(section, convertor, value)
            continue
        if value is None:
            continue
        if not isinstance(value, Mapping):
            raise ConfigError(
                "Invalid option value: (option: '{}'; value: {})\n"
                "expected a mapping".format(section, value)
            )
        for key, item in value.items():
            name = "{}.{}".format(section, key)
            if key not in convertor:
                raise ConfigError("Unknown option: {}".format(name))
            data[section][key] = _convert(name, convertor[key], item)
    return data


def read_yaml(path) -> Dict[str, Any]:
    """Load a YAML mapping; parse errors carry the line and column."""
    try:
        content = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (yaml.parser.ParserError, yaml.scanner.ScannerError) as error:
        raise ConfigError("Invalid config YAML: " + str(error))
    except OSError as error:
        raise ConfigError("Cannot read config: {}".format(error))
    return content


def env_overrides(environ: Mapping[str, str] = None) -> Dict[str, Any]:
    """Collect ``VPL_<SECTION>__<KEY>`` variables into an update mapping."""
    environ = os.environ if environ is None else environ
    updates: Dict[str, Any] = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        section, _, key = name[len(ENV_PREFIX) :].lower().partition("__")
        if not key:
            continue
        try:
            value = yaml.safe_load(raw)
        except (yaml.parser.ParserError, yaml.scanner.ScannerError):
            value = raw
        updates.setdefault(section, {})[key] = value
    return updates


def list_scenarios():
    return sorted(path.stem for path in SCENARIO_DIR.glob("*.yml"))


def resolve_source(source):
    """A bundled scenario name or a path to a YAML file."""
    path = Path(source)
    if path.suffix in (".yml", ".yaml") or path.exists():
        return path
    bundled = SCENARIO_DIR.joinpath("{}.yml".format(source))
    if not bundled.exists():
        raise ConfigError(
            "Unknown scenario: {} (bundled: {})".format(
                source, ", ".join(list_scenarios())
            )
        )
    return bundled


class RunConfig:
    """A validated configuration with builders for the run objects."""

    def __init__(self, data: Dict[str, Any]):
        self.data = data

    def __getitem__(self, section):
        return self.data[section]

    @property
    def scenario(self):
        return self.data["scenario"]

    def make_grid(self) -> VelocityGrid:
        grid = self.data["grid"]
        return VelocityGrid(grid["v_max"], grid["n_axis"])

    def make_mesh(self) -> SpatialMesh:
        mesh = self.data["mesh"]
        if mesh["dim"] == 1:
            return SpatialMesh.slab(mesh["length"], mesh["n_cells"])
        return SpatialMesh.disk(mesh["radius"], mesh["n_cells"])

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            cadence=self.data["diagnostics"]["cadence"], **self.data["solver"]
        )

    def canonical_json(self):
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        """SHA-256 of the canonical sorted JSON."""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def write(self, path):
        Path(path).write_text(self.to_yaml(), encoding="utf-8")


def load_config(source=None, overrides: Mapping = None, environ=None) -> RunConfig:
    """Build a :class:`RunConfig`.

    :param source: a bundled scenario name, a YAML path or a mapping
    :param overrides: section mapping applied after the source
    :param environ: environment for ``VPL_`` overrides (``os.environ`` if None)
    :raises ConfigError: on unknown keys, invalid values or malformed YAML
    """
    data = copy.deepcopy(DEFAULT_CONFIG)
    if isinstance(source, Mapping):
        merge(data, source)
    elif source is not None:
        path = resolve_source(source)
        merge(data, read_yaml(path), origin=str(path))
        if data["scenario"] == "custom":
            data["scenario"] = path.stem
    if overrides:
        merge(data, overrides, origin="overrides")
    merge(data, env_overrides(environ), origin="environment")
    LOGGER.debug("resolved config %s", data)
    return RunConfig(data)
