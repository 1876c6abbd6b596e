"""Columnar text serialization for increment tables, spectral snapshots,
noise paths, and lift tables.

Format: a small "key value" header (kind, dimensions, level, horizon, ...)
followed by one row per stored tuple: the integer index tuple, then the
values.  Floats are written with repr, which round-trips bit-exactly in
Python 3; complex numbers take two columns (re, im).
"""

from __future__ import annotations

import io

import numpy as np

from .grids import DyadicGrid
from .increments import Increment2
from .noise import NoiseParams, NoisePath
from .spectral import SpectralField, SpectralOperator, SpectralParams

MAGIC = "sewpde-table v1"


class FormatError(ValueError):
    pass


def _write(fh, header: dict, rows):
    fh.write(MAGIC + "\n")
    for k, v in header.items():
        fh.write(f"{k} {v!r}\n")
    fh.write("rows\n")
    for idx, vals in rows:
        cols = [str(i) for i in idx] + [repr(float(v)) for v in vals]
        fh.write(" ".join(cols) + "\n")


def _read(fh):
    first = fh.readline().rstrip("\n")
    if first != MAGIC:
        raise FormatError(f"not a sewpde table (got {first!r})")
    header = {}
    for line in fh:
        line = line.rstrip("\n")
        if line == "rows":
            break
        key, _, val = line.partition(" ")
        header[key] = eval(val, {"__builtins__": {}})  # repr'd python literals only
    rows = []
    for line in fh:
        parts = line.split()
        if parts:
            rows.append(parts)
    return header, rows


# ---------------------------------------------------------------------------
# increment tables


def dump_increment2(inc: Increment2, fh) -> None:
    if not inc.table:
        inc.materialize()
    header = {
        "kind": inc.kind,
        "object": "increment2",
        "dim": inc.dim,
        "level": inc.grid.level,
        "horizon": inc.grid.horizon,
    }
    rows = [((t, s), vals) for (t, s), vals in sorted(inc.table.items())]
    _write(fh, header, rows)


def load_increment2(fh) -> Increment2:
    header, rows = _read(fh)
    if header.get("object") != "increment2":
        raise FormatError(f"expected an increment2 table, got {header.get('object')!r}")
    grid = DyadicGrid(header["horizon"], header["level"])
    dim = header["dim"]
    table = {}
    for parts in rows:
        t, s = int(parts[0]), int(parts[1])
        table[(t, s)] = np.array([float(x) for x in parts[2 : 2 + dim]])
    return Increment2.from_table(grid, dim, table, kind=header["kind"])


# ---------------------------------------------------------------------------
# spectral snapshots


def dump_field(field: SpectralField, fh) -> None:
    header = {
        "kind": "field",
        "object": "spectral-field",
        "modes": field.params.nmodes,
        "horizon": field.params.horizon,
        "alpha": field.alpha,
    }
    rows = [((k,), (c.real, c.imag)) for k, c in enumerate(field.coeffs)]
    _write(fh, header, rows)


def load_field(fh) -> SpectralField:
    header, rows = _read(fh)
    if header.get("object") != "spectral-field":
        raise FormatError("expected a spectral field snapshot")
    params = SpectralParams(header["modes"], header["horizon"])
    coeffs = np.zeros(params.size, dtype=complex)
    for parts in rows:
        coeffs[int(parts[0])] = float(parts[1]) + 1j * float(parts[2])
    return SpectralField(params, coeffs, header.get("alpha", 0.0))


def dump_operator(op: SpectralOperator, fh) -> None:
    header = {
        "kind": "operator",
        "object": "spectral-operator",
        "modes": op.params.nmodes,
        "horizon": op.params.horizon,
        "beta": op.beta,
        "alpha": op.alpha,
    }
    rows = []
    for i in range(op.params.size):
        for j in range(op.params.size):
            c = op.matrix[i, j]
            rows.append(((i, j), (c.real, c.imag)))
    _write(fh, header, rows)


def load_operator(fh) -> SpectralOperator:
    header, rows = _read(fh)
    if header.get("object") != "spectral-operator":
        raise FormatError("expected a spectral operator snapshot")
    params = SpectralParams(header["modes"], header["horizon"])
    mat = np.zeros((params.size, params.size), dtype=complex)
    for parts in rows:
        mat[int(parts[0]), int(parts[1])] = float(parts[2]) + 1j * float(parts[3])
    return SpectralOperator(params, mat, header.get("beta", 0.0), header.get("alpha", 0.0))


# ---------------------------------------------------------------------------
# noise paths


def dump_noise_path(path: NoisePath, fh) -> None:
    p = path.params
    header = {
        "kind": "noise-path",
        "object": "noise-path",
        "noise": p.kind,
        "modes": p.nmodes,
        "nu": p.nu,
        "hurst": p.hurst,
        "seed": p.seed,
        "fine_level": p.fine_level,
        "horizon": p.horizon,
    }
    rows = []
    for r in range(path.dbeta.shape[0]):
        for c in range(path.dbeta.shape[1]):
            z = path.dbeta[r, c]
            rows.append(((r, c), (z.real, z.imag)))
    _write(fh, header, rows)


def load_noise_path(fh) -> NoisePath:
    header, rows = _read(fh)
    if header.get("object") != "noise-path":
        raise FormatError("expected a noise path snapshot")
    params = NoiseParams(
        kind=header["noise"],
        nmodes=header["modes"],
        nu=header["nu"],
        hurst=header["hurst"],
        seed=header["seed"],
        fine_level=header["fine_level"],
        horizon=header["horizon"],
    )
    dbeta = np.zeros((2 * params.nmodes + 1, 1 << params.fine_level), dtype=complex)
    for parts in rows:
        dbeta[int(parts[0]), int(parts[1])] = float(parts[2]) + 1j * float(parts[3])
    return NoisePath(params, dbeta)


# ---------------------------------------------------------------------------
# lift tables


def dump_lift(lift, fh) -> None:
    header = {
        "kind": "rough-lift",
        "object": "rough-lift",
        "modes": lift.params.nmodes,
        "horizon": lift.grid.horizon,
        "level": lift.grid.level,
        "orders": lift.orders,
        "eta": lift.eta,
        "kappa": lift.kappa,
    }
    rows = []
    for n in sorted(lift.levels):
        for order in sorted(lift.levels[n]):
            arr = lift.levels[n][order]
            for pos in range(arr.shape[0]):
                for i in range(arr.shape[1]):
                    for j in range(arr.shape[2]):
                        z = arr[pos, i, j]
                        rows.append(((n, order, pos, i, j), (z.real, z.imag)))
    _write(fh, header, rows)


def load_lift(fh):
    from .lift import RoughLift
    from .noise import DriverPath

    header, rows = _read(fh)
    if header.get("object") != "rough-lift":
        raise FormatError("expected a rough-lift snapshot")
    sp = SpectralParams(header["modes"], header["horizon"])
    m = sp.size
    levels: dict = {}
    for n in range(header["level"] + 1):
        levels[n] = {
            k: np.zeros((1 << n, m, m), dtype=complex) for k in range(1, header["orders"] + 1)
        }
    for parts in rows:
        n, order, pos, i, j = (int(x) for x in parts[:5])
        levels[n][order][pos, i, j] = float(parts[5]) + 1j * float(parts[6])
    grid = DyadicGrid(header["horizon"], header["level"])
    placeholder = DriverPath(
        sp, 0, np.zeros((m, 1), dtype=complex), kind="replay", meta={"replayed": True}
    )
    return RoughLift(placeholder, grid, header["orders"], levels, header["eta"], header["kappa"])


def dumps(obj) -> str:
    buf = io.StringIO()
    dump(obj, buf)
    return buf.getvalue()


def dump(obj, fh) -> None:
    from .lift import RoughLift

    if isinstance(obj, Increment2):
        dump_increment2(obj, fh)
    elif isinstance(obj, SpectralField):
        dump_field(obj, fh)
    elif isinstance(obj, SpectralOperator):
        dump_operator(obj, fh)
    elif isinstance(obj, NoisePath):
        dump_noise_path(obj, fh)
    elif isinstance(obj, RoughLift):
        dump_lift(obj, fh)
    else:
        raise FormatError(f"no serializer for {type(obj)!r}")


def loads(text: str):
    return load(io.StringIO(text))


def load(fh):
    loaders = {
        "increment2": load_increment2,
        "spectral-field": load_field,
        "spectral-operator": load_operator,
        "noise-path": load_noise_path,
        "rough-lift": load_lift,
    }
    pos = fh.tell()
    obj_kind = None
    fh.readline()  # magic
    for line in fh:
        line = line.rstrip("\n")
        if line == "rows":
            break
        k, _, v = line.partition(" ")
        if k == "object":
            obj_kind = eval(v, {"__builtins__": {}})
            break
    fh.seek(pos)
    if obj_kind not in loaders:
        raise FormatError(f"unknown object kind {obj_kind!r}")
    return loaders[obj_kind](fh)
