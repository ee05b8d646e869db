import json

import numpy as np
import pytest

from vpl_kinetic import io
from vpl_kinetic.errors import FormatError
from vpl_kinetic.grid import DistributionField, SpatialMesh, VelocityGrid


@pytest.mark.parametrize(
    "value,expected",
    [
        (None, ""),
        (True, "1"),
        (False, "0"),
        (3, "3"),
        (0.1, "0.1"),
        (float("nan"), "nan"),
    ],
)
def test_format_value(value, expected):
    assert io.format_value(value) == expected


def test_checkpoint(tmp_path, grid8, slab8):
    values = np.random.default_rng(0).standard_normal((slab8.n_active,) + grid8.shape)
    field = DistributionField(values, grid8, slab8, time=0.25)
    path = tmp_path.joinpath("nested", "checkpoint.bin")
    io.write_checkpoint(path, field, 7)
    restored, time, step = io.read_checkpoint(path, grid8, slab8)
    assert np.array_equal(restored, values)
    assert (time, step) == (0.25, 7)
    with pytest.raises(FormatError):
        io.read_checkpoint(path, VelocityGrid(6.0, 10), slab8)
    with pytest.raises(FormatError):
        io.read_checkpoint(path, grid8, SpatialMesh.slab(1.0, 16))


def test_bad_magic(tmp_path, grid8, slab8):
    path = tmp_path.joinpath("kernel.bin")
    io.write_kernel_cache(path, -3.0, 6.0, 8, np.zeros(6 * 17 ** 3))
    with pytest.raises(FormatError):
        io.read_checkpoint(path, grid8, slab8)
    with pytest.raises(FormatError):
        io.read_kernel_cache(path, -2.0, 6.0, 8)
    assert io.read_kernel_cache(path, -3.0, 6.0, 8).shape == (6, 17, 17, 17)


def test_timeseries(tmp_path):
    path = tmp_path.joinpath("timeseries.csv")
    rows = [{"t": 0.0, "mass": 1e-17, "entropy_flag": False}, {"t": 0.5, "mass": None}]
    io.write_timeseries(path, ["t", "mass", "entropy_flag"], rows)
    assert path.read_text() == "t,mass,entropy_flag\n0.0,1e-17,0\n0.5,,\n"
    columns, read = io.read_timeseries(path)
    assert columns == ["t", "mass", "entropy_flag"]
    assert read == [["0.0", "1e-17", "0"], ["0.5", "", ""]]


def test_summary(tmp_path):
    path = tmp_path.joinpath("summary.json")
    io.write_summary(path, {"b": np.float64(0.5), "a": np.arange(2), "c": None})
    assert json.loads(path.read_text()) == {"a": [0, 1], "b": 0.5, "c": None}
    assert path.read_text().index('"a"') < path.read_text().index('"b"')
