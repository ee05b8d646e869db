"""On-disk formats: kernel cache, checkpoints, time series and summaries.

Binary files are a fixed little-endian header of 64-bit fields followed by a
row-major float64 payload.
"""
import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from .errors import FormatError

LOGGER = logging.getLogger(__name__)

FORMAT_VERSION = 1
KERNEL_MAGIC = int.from_bytes(b"VPLKERN\x00", "little")
CHECKPOINT_MAGIC = int.from_bytes(b"VPLCHKP\x00", "little")

KERNEL_HEADER = np.dtype(
    [
        ("magic", "<u8"),
        ("version", "<i8"),
        ("gamma", "<f8"),
        ("v_max", "<f8"),
        ("n_axis", "<i8"),
    ]
)
CHECKPOINT_HEADER = np.dtype(
    [
        ("magic", "<u8"),
        ("version", "<i8"),
        ("time", "<f8"),
        ("step_index", "<i8"),
        ("n_cells", "<i8"),
        ("n_axis", "<i8"),
        ("v_max", "<f8"),
        ("extent", "<f8"),
        ("dim", "<i8"),
    ]
)


def _write_binary(path, header, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def _read_binary(path, dtype, magic):
    data = Path(path).read_bytes()
    if len(data) < dtype.itemsize:
        raise FormatError("truncated header: {}".format(path))
    header = np.frombuffer(data[: dtype.itemsize], dtype=dtype)[0]
    if int(header["magic"]) != magic:
        raise FormatError("bad magic number: {}".format(path))
    if int(header["version"]) != FORMAT_VERSION:
        raise FormatError(
            "unsupported format version {}: {}".format(int(header["version"]), path)
        )
    payload = np.frombuffer(data[dtype.itemsize :], dtype="<f8").astype(float)
    return header, payload


def write_kernel_cache(path, gamma, v_max, n_axis, values):
    header = np.array(
        [(KERNEL_MAGIC, FORMAT_VERSION, gamma, v_max, n_axis)], dtype=KERNEL_HEADER
    )
    _write_binary(path, header, values)
    LOGGER.debug("wrote kernel cache %s", path)


def read_kernel_cache(path, gamma, v_max, n_axis):
    """Return the cached component array, validating the cache key."""
    header, payload = _read_binary(path, KERNEL_HEADER, KERNEL_MAGIC)
    key = (float(header["gamma"]), float(header["v_max"]), int(header["n_axis"]))
    if key != (float(gamma), float(v_max), int(n_axis)):
        raise FormatError(
            "kernel cache key {} does not match {}".format(key, (gamma, v_max, n_axis))
        )
    m = 2 * int(n_axis) + 1
    if payload.size != 6 * m ** 3:
        raise FormatError("kernel cache payload has wrong size: {}".format(path))
    return payload.reshape(6, m, m, m)


def write_checkpoint(path, field, step_index):
    """Write a :class:`~vpl_kinetic.grid.DistributionField` snapshot."""
    header = np.array(
        [
            (
                CHECKPOINT_MAGIC,
                FORMAT_VERSION,
                field.time,
                step_index,
                field.mesh.n_cells,
                field.grid.n_axis,
                field.grid.v_max,
                field.mesh.extent,
                field.mesh.dim,
            )
        ],
        dtype=CHECKPOINT_HEADER,
    )
    _write_binary(path, header, field.values)
    LOGGER.info("checkpoint written: %s (step %d)", path, step_index)


def read_checkpoint(path, grid, mesh):
    """Return ``(values, time, step_index)`` for the given grid and mesh."""
    header, payload = _read_binary(path, CHECKPOINT_HEADER, CHECKPOINT_MAGIC)
    found = (
        int(header["n_cells"]),
        int(header["n_axis"]),
        float(header["v_max"]),
        float(header["extent"]),
        int(header["dim"]),
    )
    expected = (mesh.n_cells, grid.n_axis, grid.v_max, mesh.extent, mesh.dim)
    if found != expected:
        raise FormatError(
            "checkpoint metadata {} does not match run {}".format(found, expected)
        )
    shape = (mesh.n_active,) + grid.shape
    if payload.size != int(np.prod(shape)):
        raise FormatError("checkpoint payload has wrong size: {}".format(path))
    return payload.reshape(shape), float(header["time"]), int(header["step_index"])


def format_value(value):
    """Canonical text for CSV cells: shortest round-trip float, empty for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def write_timeseries(path, columns, rows):
    """Write rows (mappings) with a fixed header order."""
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(name)) for name in columns])


def read_timeseries(path):
    """Return ``(columns, rows)`` where rows are lists of strings."""
    with Path(path).open(encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        columns = next(reader)
        rows = [row for row in reader]
    return columns, rows


def write_summary(path, summary):
    text = json.dumps(summary, indent=2, sort_keys=True, default=_json_default)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError("not JSON serializable: {!r}".format(value))
