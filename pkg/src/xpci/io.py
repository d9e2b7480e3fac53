"""File formats: raw binary arrays with JSON sidecars, aberration lists and
provenance records.

A field lives in two files, ``name.bin`` (little-endian float64, row-major,
``(re, im)`` interleaved for complex data) and ``name.json``.  Volumes store
``delta`` and ``beta`` as float32 files beside one JSON descriptor.
"""
import json
import os
from pathlib import Path

import numpy as np

from .errors import XpciError
from .field import ComplexField, Grid2D, RealField
from .lsi import AberrationSet
from .sample import RefractiveVolume

_F64 = np.dtype("<f8")
_F32 = np.dtype("<f4")


def sidecar_path(path):
    """``x.bin -> x.json``; a path that is already ``.json`` is returned as is."""
    p = Path(path)
    return p if p.suffix == ".json" else p.with_suffix(".json")


def data_path(path):
    """``x.json`` and a bare ``x`` both map to ``x.bin``."""
    p = Path(path)
    return p.with_suffix(".bin") if p.suffix in (".json", "") else p


def _dump_json(obj, path):
    # Sorted keys and a trailing newline keep outputs byte-stable.
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise XpciError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise XpciError(f"{path}: invalid JSON ({exc})") from None


def write_field(field, path):
    """Write a :class:`RealField` or :class:`ComplexField`; returns the data path."""
    path = data_path(path)
    g = field.grid
    meta = {"nx": g.nx, "ny": g.ny, "dx_m": g.dx, "dy_m": g.dy}
    if isinstance(field, ComplexField):
        arr = np.empty(g.shape + (2,), dtype=_F64)
        arr[..., 0] = field.values.real
        arr[..., 1] = field.values.imag
        meta.update(kind="complex", wavelength_m=field.wavelength)
    else:
        arr = np.asarray(field.values, dtype=_F64)
        meta.update(kind="real", wavelength_m=None)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(arr).tobytes())
    _dump_json(meta, sidecar_path(path))
    return path


def grid_from_meta(meta):
    return Grid2D(meta["nx"], meta["ny"], meta["dx_m"], meta.get("dy_m"))


def read_field(path, wavelength=None):
    """Read a field pair written by :func:`write_field`.

    ``wavelength`` fills in (or overrides) the sidecar value for complex data.
    """
    meta = load_json(sidecar_path(path))
    try:
        grid = grid_from_meta(meta)
        kind = meta["kind"]
    except KeyError as exc:
        raise XpciError(f"{sidecar_path(path)}: missing key {exc}") from None
    raw = data_path(path)
    if not raw.exists():
        raise XpciError(f"file not found: {raw}")
    data = np.fromfile(raw, dtype=_F64)
    n = grid.nx * grid.ny
    if kind == "complex":
        if data.size != 2 * n:
            raise XpciError(f"{raw}: expected {2 * n} float64 values, found {data.size}")
        data = data.reshape(grid.shape + (2,))
        wl = wavelength if wavelength is not None else meta.get("wavelength_m")
        if wl is None:
            raise XpciError(f"{raw}: complex field needs a wavelength")
        return ComplexField(grid, data[..., 0] + 1j * data[..., 1], wl)
    if kind == "real":
        if data.size != n:
            raise XpciError(f"{raw}: expected {n} float64 values, found {data.size}")
        return RealField(grid, data.reshape(grid.shape))
    raise XpciError(f"{sidecar_path(path)}: unknown kind {kind!r}")


def write_volume(vol, path):
    """Write ``path`` (JSON) plus ``<stem>_delta.bin`` and ``<stem>_beta.bin``."""
    path = Path(path).with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    g = vol.grid
    names = {}
    for name in ("delta", "beta"):
        f = path.with_name(f"{path.stem}_{name}.bin")
        f.write_bytes(np.ascontiguousarray(getattr(vol, name), dtype=_F32).tobytes())
        names[name] = f.name
    _dump_json({"nx": g.nx, "ny": g.ny, "nz": vol.nz, "dx_m": g.dx, "dy_m": g.dy,
                "dz_m": vol.dz, "delta_file": names["delta"], "beta_file": names["beta"]}, path)
    return path


def read_volume(path, mmap=True):
    """Load a volume; voxel files are memory-mapped by default."""
    path = Path(path)
    meta = load_json(path)
    try:
        grid = grid_from_meta(meta)
        shape = (meta["nz"], grid.ny, grid.nx)
        files = [path.parent / meta[k] for k in ("delta_file", "beta_file")]
        dz = meta["dz_m"]
    except KeyError as exc:
        raise XpciError(f"{path}: missing key {exc}") from None
    arrays = []
    for f in files:
        if not f.exists():
            raise XpciError(f"file not found: {f}")
        if f.stat().st_size != int(np.prod(shape)) * _F32.itemsize:
            raise XpciError(f"{f}: size does not match {shape} float32 voxels")
        if mmap:
            arrays.append(np.memmap(f, dtype=_F32, mode="r", shape=shape))
        else:
            arrays.append(np.fromfile(f, dtype=_F32).reshape(shape))
    return RefractiveVolume(grid, dz, arrays[0], arrays[1])


def read_aberrations(path):
    data = load_json(path)
    if isinstance(data, dict):
        data = data.get("aberrations", [])
    try:
        return AberrationSet.from_records(data)
    except (KeyError, TypeError) as exc:
        raise XpciError(f"{path}: aberration records need m, n, re, im ({exc})") from None


def write_aberrations(ab, path):
    _dump_json(AberrationSet(ab).to_records(), path)


def provenance_path(out_path):
    return Path(f"{data_path(out_path)}.prov.json")


def write_provenance(out_path, command, inputs, parameters, warnings=(), info=None):
    """Write ``<out>.prov.json`` with everything needed to rerun a step."""
    from . import __version__
    record = {
        "tool": "xpci",
        "version": __version__,
        "numpy": np.__version__,
        "command": command,
        "inputs": [os.fspath(p) for p in inputs],
        "parameters": parameters,
        "warnings": list(warnings),
        "info": info or {},
    }
    path = provenance_path(out_path)
    _dump_json(_plain(record), path)
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, Path):
        return os.fspath(obj)
    if hasattr(obj, "item"):
        return _plain(obj.item())
    return obj
