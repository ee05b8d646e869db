import pytest

from vpl_kinetic.config import (
    DEFAULT_CONFIG,
    env_overrides,
    list_scenarios,
    load_config,
)
from vpl_kinetic.errors import ConfigError


def test_defaults():
    cfg = load_config(environ={})
    assert cfg.data == DEFAULT_CONFIG
    assert cfg.scenario == "custom"
    assert cfg.make_grid().n_axis == 16
    assert cfg.make_mesh().kind == "slab"


def test_bundled_scenarios():
    assert list_scenarios() == ["slab-eps1e-3", "slab-full-n12"]
    cfg = load_config("slab-full-n12", environ={})
    assert cfg.scenario == "slab-full-n12"
    assert cfg["solver"]["mode"] == "full"
    assert cfg["grid"]["n_axis"] == 12
    assert cfg["landau"]["gamma"] == -3.0


def test_unknown_scenario():
    with pytest.raises(ConfigError, match="Unknown scenario: nope"):
        load_config("nope", environ={})


def test_yaml_file(tmp_path):
    path = tmp_path.joinpath("mine.yml")
    path.write_text("solver:\n  eps0: 0.01\n  mode: full\n")
    cfg = load_config(str(path), environ={})
    assert cfg.scenario == "mine"
    assert cfg["solver"]["eps0"] == 0.01
    assert cfg.solver_config().mode == "full"


@pytest.mark.parametrize(
    "updates,message",
    [
        ({"grid": {"foo": 1}}, "Unknown option: grid.foo"),
        ({"bogus": {}}, "Unknown option: bogus"),
        ({"grid": {"n_axis": 9}}, "Invalid option value: (option: 'grid.n_axis'"),
        ({"solver": {"mode": "fast"}}, "Invalid option value: (option: 'solver.mode'"),
        ({"solver": {"eps0": -1}}, "must be non-negative"),
        ({"solver": "full"}, "expected a mapping"),
    ],
)
def test_invalid(updates, message):
    with pytest.raises(ConfigError) as info:
        load_config(overrides=updates, environ={})
    assert message in str(info.value)


def test_bad_yaml(tmp_path):
    path = tmp_path.joinpath("broken.yml")
    path.write_text("grid: [1, 2\n")
    with pytest.raises(ConfigError, match="Invalid config YAML"):
        load_config(str(path), environ={})


def test_environment_overrides():
    environ = {
        "VPL_SOLVER__EPS0": "0.002",
        "VPL_SOLVER__PHYSICAL": "yes",
        "VPL_DIAGNOSTICS__THETAS": "0,0.5",
        "PATH": "/usr/bin",
    }
    assert env_overrides(environ) == {
        "solver": {"eps0": 0.002, "physical": True},
        "diagnostics": {"thetas": "0,0.5"},
    }
    cfg = load_config(overrides={"solver": {"eps0": 0.5}}, environ=environ)
    assert cfg["solver"]["eps0"] == 0.002
    assert cfg["solver"]["physical"] is True
    assert cfg["diagnostics"]["thetas"] == [0.0, 0.5]
    with pytest.raises(ConfigError, match="Unknown option: solver.nope"):
        load_config(environ={"VPL_SOLVER__NOPE": "1"})


def test_config_hash(tmp_path):
    first = load_config("slab-eps1e-3", environ={})
    second = load_config("slab-eps1e-3", environ={})
    assert first.config_hash() == second.config_hash()
    assert len(first.config_hash()) == 64
    changed = load_config(
        "slab-eps1e-3", overrides={"solver": {"seed": 1}}, environ={}
    )
    assert changed.config_hash() != first.config_hash()
    path = tmp_path.joinpath("resolved.yml")
    first.write(path)
    assert load_config(str(path), environ={}).config_hash() == first.config_hash()


def test_builders():
    cfg = load_config(
        overrides={"mesh": {"dim": 2, "n_cells": 8}, "diagnostics": {"cadence": 3}},
        environ={},
    )
    assert cfg.make_mesh().kind == "disk"
    assert cfg.solver_config().cadence == 3
