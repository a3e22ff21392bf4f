"""Binary grid-field files, JSON sidecars and CSV ledgers."""
import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParameterError

MAGIC = b"SHEETFLD"
VERSION = 1
_HEADER = struct.Struct("<8sII")
_META = struct.Struct("<QQddQQ")


def write_grid_array(path, grid, values, seed, components=None):
    """Write node values in (s, t, component) order after the header and grid metadata.

    ``components`` overrides ``grid.d`` for payloads such as d*d derivative fields.
    """
    comps = grid.d if components is None else int(components)
    v = np.asarray(values, dtype="<f8").reshape(grid.n_s + 1, grid.n_t + 1, comps)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0))
        fh.write(_META.pack(grid.n_s, grid.n_t, grid.s_max, grid.t_max, comps, int(seed)))
        fh.write(np.ascontiguousarray(v).tobytes())


def read_grid_array(path):
    """Return ``(n_s, n_t, s_max, t_max, components, seed, values)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + _META.size:
        raise ParameterError(f"{path}: file too short")
    magic, version, _ = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParameterError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ParameterError(f"{path}: unsupported version {version}")
    n_s, n_t, s_max, t_max, comps, seed = _META.unpack_from(data, _HEADER.size)
    body = data[_HEADER.size + _META.size:]
    expected = (n_s + 1) * (n_t + 1) * comps * 8
    if len(body) != expected:
        raise ParameterError(f"{path}: payload has {len(body)} bytes, expected {expected}")
    values = np.frombuffer(body, dtype="<f8").reshape(n_s + 1, n_t + 1, comps).astype(np.float64)
    return n_s, n_t, s_max, t_max, comps, seed, values


def save_sheet(path, sheet):
    write_grid_array(path, sheet.grid, sheet.values, sheet.seed)


def load_sheet(path):
    from .sheet import GridSpec, SheetPath
    n_s, n_t, s_max, t_max, d, seed, values = read_grid_array(path)
    return SheetPath(GridSpec(n_s, n_t, s_max, t_max, d), values, seed)


def sidecar_path(path):
    return Path(str(path) + ".json")


def write_sidecar(path, meta):
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_sidecar(path):
    return json.loads(sidecar_path(path).read_text())


def fmt(x):
    """17 significant digits, enough to round-trip binary64."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows, append=False):
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if new:
            w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


LEDGER_HEADER = ["experiment_id", "op", "grid", "N", "mean", "stderr", "seed0"]


def append_ledger(path, experiment_id, op, grid, estimate):
    g = f"{grid.n_s}x{grid.n_t}"
    write_csv(path, LEDGER_HEADER,
              [[experiment_id, op, g, estimate.n, estimate.mean, estimate.stderr, estimate.seed0]],
              append=True)
