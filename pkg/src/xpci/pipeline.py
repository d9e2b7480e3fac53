"""Declarative batch pipelines.

A pipeline is a JSON document with an ordered ``steps`` list.  Each step
has a unique ``id``, an ``op`` name, a ``params`` object and an ``inputs``
object mapping argument names to the ids of earlier steps.  Physical
parameters carry SI unit suffixes (``dist_m``, ``wavelength_m``); any step
that needs a wavelength may give ``energy_keV`` instead.

Running a pipeline validates the whole document, checks that every file
it reads exists, and only then executes the steps in order.  A manifest
recording versions, parameters, warnings and timings is written next to
the outputs.
"""
from dataclasses import dataclass, field as dc_field
from importlib import metadata
import json
import os
from pathlib import Path
import platform
import time
import warnings

import jsonschema
import numpy as np

from . import io
from .coherence import source_blur
from .constants import wavelength_from_kev
from .errors import XpciError, XpciWarning
from .field import ComplexField, Grid2D, RealField, intensity_and_phase
from .fokker_planck import tie_step
from .lsi import AberrationSet, apply_lsi, transfer_from_aberrations
from .multislice import multislice_propagate
from .propagation import ConeBeamGeometry, PropagationPlan, fresnel_propagate
from .retrieval import paganin_thickness
from .sample import (ProjectedObject, RefractiveVolume, apply_transmission, project_volume,
                     sphere_phantom, transmission_function)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
MANIFEST_NAME = "manifest.json"

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_NUM = {"type": "number"}
_INT = {"type": "integer", "minimum": 2}
_WAVE = {"wavelength_m": _POS, "energy_keV": _POS}
_GRID = {"nx": _INT, "ny": _INT, "dx_m": _POS, "dy_m": _POS}

# name -> (required params, optional params, input names, whether wavelength is needed)
OPS = {
    "plane_wave": (["nx", "dx_m"], {"amplitude": _NUM, **_GRID}, [], True),
    "load_field": (["path"], {"path": {"type": "string"}}, [], False),
    "load_volume": (["path"], {"path": {"type": "string"}}, [], False),
    "phantom": (["nx", "dx_m", "radius_m", "delta", "beta"],
                {**_GRID, "radius_m": _POS, "delta": _NONNEG, "beta": _NONNEG,
                 "center_x_m": _NUM, "center_y_m": _NUM}, [], True),
    "project": ([], {}, ["volume"], True),
    "transmission": ([], {}, ["object"], False),
    "transmit": ([], {}, ["field", "screen"], False),
    "propagate": (["dist_m"], {"dist_m": _NUM, "pad": {"enum": [1, 2, 4]},
                               "apodize": {"type": "boolean"}}, ["field"], False),
    "multislice": ([], {"scheme": {"enum": ["ptp", "pth"]},
                        "substeps": {"anyOf": [{"type": "integer", "minimum": 1},
                                               {"const": "auto"}]},
                        "pad": {"enum": [1, 2, 4]}}, ["field", "volume"], False),
    "lsi": (["aberrations"], {"aberrations": {"type": ["string", "array"]},
                              "allow_gain": {"type": "boolean"}}, ["field"], False),
    "intensity": ([], {}, ["field"], False),
    "phase": ([], {}, ["field"], False),
    "tie_step": (["dz_m"], {"dz_m": _NUM}, ["intensity", "phase"], True),
    "blur": (["source_d_m", "z1_m", "z2_m"],
             {"source_d_m": _NONNEG, "z1_m": _POS, "z2_m": _NONNEG,
              "profile": {"enum": ["disk", "uniform-disk", "gaussian"]}}, ["image"], False),
    "paganin": (["delta", "mu_per_m", "dist_m"],
                {"i0": _POS, "delta": _NONNEG, "mu_per_m": _POS, "dist_m": _NONNEG},
                ["image"], False),
    "save": (["path"], {"path": {"type": "string"}}, ["data"], False),
    "save_png": (["path"], {"path": {"type": "string"},
                            "normalization": {"enum": ["minmax", "log", "fixed"]},
                            "lo": _NUM, "hi": _NUM}, ["data"], False),
}

_READS = {"load_field", "load_volume"}


def _step_schema(op):
    required, props, inputs, needs_wl = OPS[op]
    props = dict(props)
    params = {"type": "object", "properties": props, "required": list(required),
              "additionalProperties": False}
    if needs_wl:
        props.update(_WAVE)
        params["oneOf"] = [{"required": ["wavelength_m"]}, {"required": ["energy_keV"]}]
    return {
        "if": {"properties": {"op": {"const": op}}},
        "then": {
            "properties": {
                "params": params,
                "inputs": {"type": "object", "required": list(inputs),
                           "properties": {n: {"type": "string"} for n in inputs},
                           "additionalProperties": False},
            },
        },
    }


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["steps"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": 1},
        "output_dir": {"type": "string"},
        "steps": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "op"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    "op": {"enum": sorted(OPS)},
                    "params": {"type": "object"},
                    "inputs": {"type": "object"},
                },
                "allOf": [_step_schema(op) for op in sorted(OPS)],
            },
        },
    },
}


class ConfigError(XpciError):
    """Invalid pipeline document; ``pointer`` is a JSON pointer to the bad key."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class StepFailure(XpciError):
    def __init__(self, index, op, message):
        super().__init__(f"step {index} ({op}): {message}")
        self.index = index
        self.op = op


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else ""


def validate(config, base_dir="."):
    """Schema, reference and file-existence checks; raises :class:`ConfigError`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(err.message, _pointer(err.absolute_path))
    seen = set()
    base = Path(base_dir)
    for i, step in enumerate(config["steps"]):
        if step["id"] in seen:
            raise ConfigError(f"duplicate step id {step['id']!r}", f"/steps/{i}/id")
        for name, ref in step.get("inputs", {}).items():
            if ref not in seen:
                raise ConfigError(f"input {ref!r} does not name an earlier step",
                                  f"/steps/{i}/inputs/{name}")
        seen.add(step["id"])
        params = step.get("params", {})
        if step["op"] in _READS and not (base / params["path"]).exists():
            raise ConfigError(f"file not found: {params['path']}", f"/steps/{i}/params/path")
        if step["op"] == "lsi" and isinstance(params["aberrations"], str):
            if not (base / params["aberrations"]).exists():
                raise ConfigError(f"file not found: {params['aberrations']}",
                                  f"/steps/{i}/params/aberrations")


def resolve_wavelength(params):
    if "wavelength_m" in params:
        return float(params["wavelength_m"])
    if "energy_keV" in params:
        return wavelength_from_kev(params["energy_keV"])
    raise XpciError("need wavelength_m or energy_keV")


def _grid(p):
    return Grid2D(p["nx"], p.get("ny", p["nx"]), p["dx_m"], p.get("dy_m"))


def _expect(value, kind, name):
    if not isinstance(value, kind):
        raise XpciError(f"input {name!r} has type {type(value).__name__}, "
                        f"expected {getattr(kind, '__name__', kind)}")
    return value


class _Runner:
    def __init__(self, base_dir, out_dir):
        self.base = Path(base_dir)
        self.out = Path(out_dir)
        self.written = []

    def path_in(self, p):
        return self.base / p

    def path_out(self, p):
        return self.out / p

    def run(self, op, p, a):
        return getattr(self, "op_" + op)(p, a)

    def op_plane_wave(self, p, a):
        return ComplexField.plane_wave(_grid(p), resolve_wavelength(p), p.get("amplitude", 1.0))

    def op_load_field(self, p, a):
        return io.read_field(self.path_in(p["path"]))

    def op_load_volume(self, p, a):
        return io.read_volume(self.path_in(p["path"]))

    def op_phantom(self, p, a):
        return sphere_phantom(_grid(p), p["radius_m"], p["delta"], p["beta"],
                              resolve_wavelength(p),
                              (p.get("center_x_m", 0.0), p.get("center_y_m", 0.0)))

    def op_project(self, p, a):
        return project_volume(_expect(a["volume"], RefractiveVolume, "volume"),
                              resolve_wavelength(p))

    def op_transmission(self, p, a):
        return transmission_function(_expect(a["object"], ProjectedObject, "object"))

    def op_transmit(self, p, a):
        return apply_transmission(_expect(a["field"], ComplexField, "field"),
                                  _expect(a["screen"], ComplexField, "screen"))

    def op_propagate(self, p, a):
        plan = PropagationPlan(p["dist_m"], p.get("pad", 2), p.get("apodize", False))
        return fresnel_propagate(_expect(a["field"], ComplexField, "field"), plan)

    def op_multislice(self, p, a):
        return multislice_propagate(_expect(a["field"], ComplexField, "field"),
                                    _expect(a["volume"], RefractiveVolume, "volume"),
                                    scheme=p.get("scheme", "ptp"),
                                    substeps=p.get("substeps", 1), pad_factor=p.get("pad", 1))

    def op_lsi(self, p, a):
        f = _expect(a["field"], ComplexField, "field")
        ab = p["aberrations"]
        ab = io.read_aberrations(self.path_in(ab)) if isinstance(ab, str) else \
            AberrationSet.from_records(ab)
        return apply_lsi(f, transfer_from_aberrations(ab, f.grid, p.get("allow_gain", False)))

    def op_intensity(self, p, a):
        return intensity_and_phase(_expect(a["field"], ComplexField, "field"))[0]

    def op_phase(self, p, a):
        return intensity_and_phase(_expect(a["field"], ComplexField, "field"))[1]

    def op_tie_step(self, p, a):
        return tie_step(_expect(a["intensity"], RealField, "intensity"),
                        _expect(a["phase"], RealField, "phase"), p["dz_m"],
                        resolve_wavelength(p))

    def op_blur(self, p, a):
        return source_blur(_expect(a["image"], RealField, "image"), p["source_d_m"],
                           ConeBeamGeometry(p["z1_m"], p["z2_m"]), p.get("profile", "disk"))

    def op_paganin(self, p, a):
        return paganin_thickness(_expect(a["image"], RealField, "image"), p.get("i0", 1.0),
                                 p["delta"], p["mu_per_m"], p["dist_m"])

    def op_save(self, p, a):
        data = a["data"]
        if isinstance(data, ProjectedObject):
            raise XpciError("save a projected object through its transmission")
        if isinstance(data, RefractiveVolume):
            path = io.write_volume(data, self.path_out(p["path"]))
        else:
            path = io.write_field(_expect(data, (RealField, ComplexField), "data"),
                                  self.path_out(p["path"]))
        self.written.append(path)
        return data

    def op_save_png(self, p, a):
        from .plotting import export_png
        data = _expect(a["data"], RealField, "data")
        path = export_png(data, self.path_out(p["path"]), p.get("normalization", "minmax"),
                          p.get("lo"), p.get("hi"))
        self.written.append(path)
        return data


@dataclass
class PipelineResult:
    status: int
    manifest: dict = dc_field(default_factory=dict)
    message: str = ""
    results: dict = dc_field(default_factory=dict, repr=False)


def _versions():
    from . import __version__
    import matplotlib
    import PIL
    return {"xpci": __version__, "numpy": np.__version__, "jsonschema": metadata.version("jsonschema"),
            "matplotlib": matplotlib.__version__, "pillow": PIL.__version__,
            "python": platform.python_version()}


def load_config(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None


def run_pipeline(config, base_dir=".", output_dir=None, on_warning=None):
    """Validate and execute a pipeline; returns a :class:`PipelineResult`.

    ``config`` is a parsed document or a path to one (relative paths inside
    it resolve against the config file's directory).  ``on_warning`` is
    called with each structured warning dict as it is raised.
    """
    try:
        if isinstance(config, (str, os.PathLike)):
            base_dir = Path(config).parent
            config = load_config(config)
        validate(config, base_dir)
    except ConfigError as exc:
        return PipelineResult(EXIT_CONFIG, message=str(exc))
    out_dir = Path(output_dir) if output_dir else Path(base_dir) / config.get("output_dir", ".")
    runner = _Runner(base_dir, out_dir)
    results = {}
    manifest = {"versions": _versions(), "steps": [], "warnings": [], "timings": {}}
    status, message = EXIT_OK, ""
    for i, step in enumerate(config["steps"]):
        params = step.get("params", {})
        args = {n: results[ref] for n, ref in step.get("inputs", {}).items()}
        entry = {"id": step["id"], "op": step["op"], "params": params,
                 "inputs": step.get("inputs", {}), "warnings": []}
        t0 = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                results[step["id"]] = runner.run(step["op"], params, args)
            except (XpciError, ValueError, OSError) as exc:
                status, message = EXIT_RUNTIME, str(StepFailure(i, step["op"], exc))
        for w in caught:
            rec = _warning_record(w, i, step)
            entry["warnings"].append(rec)
            manifest["warnings"].append(rec)
            if on_warning:
                on_warning(rec)
        manifest["timings"][step["id"]] = round(time.perf_counter() - t0, 6)
        manifest["steps"].append(entry)
        if status:
            manifest["error"] = {"step": i, "op": step["op"], "message": message}
            break
    manifest["outputs"] = [os.fspath(p.relative_to(out_dir)) for p in runner.written]
    manifest["status"] = status
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / MANIFEST_NAME).write_text(json.dumps(io._plain(manifest), indent=2,
                                                    sort_keys=True) + "\n")
    return PipelineResult(status, manifest, message, results)


def _warning_record(w, index, step):
    msg = w.message
    if isinstance(msg, XpciWarning):
        rec = msg.to_dict()
    else:
        rec = {"code": w.category.__name__, "message": str(msg), "details": {}}
    rec["step"] = index
    rec["op"] = step["op"]
    return rec
