"""``xpci`` command-line front-end.

Every subcommand reads and writes the binary+JSON field format of
:mod:`xpci.io`, prints structured warnings to stderr as JSON lines and
leaves a ``<out>.prov.json`` provenance record beside each output.

Exit status: 0 success, 1 runtime failure, 2 bad arguments or config.
"""
import argparse
import contextlib
import json
from pathlib import Path
import sys
import warnings

import numpy as np

from . import io
from .coherence import Ensemble, propagate_ensemble, source_blur, spectral_density
from .constants import wavelength_from_kev
from .errors import XpciError, XpciWarning
from .field import ComplexField, Grid2D, RealField, intensity_and_phase
from .fokker_planck import DiffusionMap, fp_step
from .lsi import (AberrationSet, Filter, Propagate, Transmission, apply_lsi, cascade,
                  transfer_from_aberrations)
from .multislice import multislice_propagate
from .pipeline import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, run_pipeline
from .propagation import ConeBeamGeometry, PropagationPlan, fresnel_propagate
from .retrieval import (AUTO, LinearTFState, ctf_retrieve, darkfield_solve,
                        paganin_thickness, schiske_combine)
from .sample import RefractiveVolume, project_volume, sphere_phantom, sphere_thickness, \
    transmission_function


class UsageError(XpciError):
    """Bad arguments or missing input files (exit status 2)."""


class _Session:
    """Collects warnings raised while a command runs."""

    def __init__(self, stream):
        self.stream = stream
        self.records = []

    def emit(self, rec):
        self.records.append(rec)
        self.stream.write(json.dumps(rec, sort_keys=True) + "\n")

    def _show(self, message, category, *_args, **_kwargs):
        if isinstance(message, XpciWarning):
            rec = message.to_dict()
        else:
            rec = {"code": category.__name__, "message": str(message), "details": {}}
        self.emit(rec)

    @contextlib.contextmanager
    def capture(self):
        # Emit as raised so provenance written later in the command sees them.
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = self._show
            yield


def _existing(path):
    p = Path(path)
    if not p.exists() and not io.sidecar_path(p).exists():
        raise UsageError(f"input file not found: {path}")
    return p


def _read_field(path, wavelength=None):
    _existing(path)
    if not io.data_path(path).exists():
        raise UsageError(f"input file not found: {io.data_path(path)}")
    return io.read_field(path, wavelength)


def _wavelength(args, required=True):
    wl = getattr(args, "wavelength", None)
    kev = getattr(args, "energy_kev", None)
    if wl is not None and kev is not None:
        raise UsageError("give --wavelength or --energy-kev, not both")
    if kev is not None:
        return wavelength_from_kev(kev)
    if wl is None and required:
        raise UsageError("--wavelength or --energy-kev is required")
    return wl


def _real_or_file(value, grid):
    """A float literal broadcast over ``grid`` or a RealField file."""
    try:
        return np.full(grid.shape, float(value))
    except ValueError:
        f = _read_field(value)
        if not isinstance(f, RealField):
            raise UsageError(f"{value}: expected a real field") from None
        return f.values


def _reg(value):
    if value == AUTO:
        return AUTO
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"--reg must be a number or 'auto', got {value!r}") from None


def _tf_from_spec(spec, grid, wavelength, base):
    """Transfer function from ``{"aberrations": file|list}`` or ``{"dist_m": z}``."""
    if "dist_m" in spec:
        ab = AberrationSet.defocus(spec["dist_m"], wavelength)
    elif isinstance(spec.get("aberrations"), str):
        ab = io.read_aberrations(_existing(base / spec["aberrations"]))
    elif "aberrations" in spec:
        ab = AberrationSet.from_records(spec["aberrations"])
    else:
        raise UsageError("each state needs 'dist_m' or 'aberrations'")
    return transfer_from_aberrations(ab, grid, spec.get("allow_gain", False))


def _manifest(path):
    path = _existing(path)
    return io.load_json(path), path.parent


def _save(session, out, obj, args, inputs, info=None):
    path = io.write_field(obj, out)
    params = {k: v for k, v in vars(args).items()
              if k not in ("func", "out") and not callable(v)}
    io.write_provenance(path, args.command, inputs, params, session.records, info)
    return path


# --- subcommands -------------------------------------------------------

def cmd_propagate(args, s):
    f = _read_field(args.input, _wavelength(args, required=False))
    out = fresnel_propagate(f, PropagationPlan(args.dist, args.pad, args.apodize))
    _save(s, args.out, out, args, [args.input])


def _write_projected(s, args, obj, inputs):
    t = transmission_function(obj)
    _save(s, args.out, t, args, inputs)
    if args.phase_out:
        _save(s, args.phase_out, obj.phase_shift, args, inputs)
    if args.attenuation_out:
        _save(s, args.attenuation_out, obj.attenuation_integral, args, inputs)


def cmd_project(args, s):
    vol = io.read_volume(_existing(args.vol))
    _write_projected(s, args, project_volume(vol, _wavelength(args)), [args.vol])


def sphere_volume(grid, radius, delta, beta, nz, center=(0.0, 0.0)):
    """Voxelise a sphere centred mid-stack into ``nz`` slices spanning 2R."""
    dz = 2 * radius / nz
    x, y = grid.coords()
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    zc = (np.arange(nz) + 0.5) * dz - radius
    inside = r2[None] + zc[:, None, None] ** 2 <= radius ** 2
    return RefractiveVolume(grid, dz, np.where(inside, delta, 0.0), np.where(inside, beta, 0.0))


def cmd_phantom(args, s):
    grid = Grid2D(args.nx, args.ny or args.nx, args.dx)
    center = (args.center_x, args.center_y)
    if args.volume_out:
        vol = sphere_volume(grid, args.radius, args.delta, args.beta, args.nz, center)
        path = io.write_volume(vol, args.volume_out)
        io.write_provenance(path, args.command, [], _params(args), s.records)
    if args.out:
        obj = sphere_phantom(grid, args.radius, args.delta, args.beta, _wavelength(args), center)
        _write_projected(s, args, obj, [])
    if args.thickness_out:
        _save(s, args.thickness_out,
              RealField(grid, sphere_thickness(grid, args.radius, center)), args, [])
    if not (args.out or args.volume_out or args.thickness_out):
        raise UsageError("phantom needs --out, --volume-out or --thickness-out")


def _params(args):
    return {k: v for k, v in vars(args).items() if k != "func" and not callable(v)}


def cmd_multislice(args, s):
    vol = io.read_volume(_existing(args.vol))
    f = _read_field(args.input, _wavelength(args, required=False))
    slices = args.slices if args.slices == "auto" else int(args.slices)
    out, info = multislice_propagate(f, vol, scheme=args.scheme, substeps=slices,
                                     pad_factor=args.pad, full_output=True)
    _save(s, args.out, out, args, [args.input, args.vol], info)


def cmd_lsi(args, s):
    f = _read_field(args.input, _wavelength(args, required=False))
    ab = io.read_aberrations(_existing(args.aberr))
    tf = transfer_from_aberrations(ab, f.grid, args.allow_gain)
    _save(s, args.out, apply_lsi(f, tf), args, [args.input, args.aberr])


def build_stages(specs, grid, wavelength, base):
    """Cascade stages from JSON: transmission, propagate or filter entries."""
    stages = []
    for i, st in enumerate(specs):
        kind = st.get("type")
        if kind == "transmission":
            stages.append(Transmission(_read_field(base / st["screen"], wavelength)))
        elif kind == "propagate":
            stages.append(Propagate(PropagationPlan(st["dist_m"], st.get("pad", 2),
                                                    st.get("apodize", False))))
        elif kind == "filter":
            stages.append(Filter(_tf_from_spec(st, grid, wavelength, base)))
        else:
            raise UsageError(f"stage {i}: unknown type {kind!r}")
    return stages


def cmd_cascade(args, s):
    spec, base = _manifest(args.pipeline)
    src = args.input or spec.get("input")
    out = args.out or spec.get("output")
    if not src or not out:
        raise UsageError("cascade needs an input and an output (flags or pipeline keys)")
    src_path = Path(src) if args.input else base / src
    f = _read_field(src_path, _wavelength(args, required=False))
    stages = build_stages(spec.get("stages", []), f.grid, f.wavelength, base)
    args.out = out if args.out else base / out
    _save(s, args.out, cascade(f, stages), args, [src_path, args.pipeline])


def _load_ensemble(path, wavelength=None):
    spec, base = _manifest(path)
    members = [_read_field(base / m["file"], wavelength) for m in spec["members"]]
    weights = [m["weight"] for m in spec["members"]]
    return Ensemble(tuple(members), tuple(weights)), base


def cmd_ensemble(args, s):
    ens, _ = _load_ensemble(args.manifest, _wavelength(args, required=False))
    if args.action == "spectral-density":
        _save(s, args.out, spectral_density(ens), args, [args.manifest])
        return
    if not args.pipeline:
        raise UsageError("ensemble propagate needs --pipeline")
    spec, base = _manifest(args.pipeline)
    stages = build_stages(spec.get("stages", []), ens.grid, ens.wavelength, base)
    out = propagate_ensemble(ens, stages, workers=args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    members = []
    for j, (m, c) in enumerate(zip(out.members, out.weights)):
        p = io.write_field(m, out_dir / f"member_{j:04d}.bin")
        members.append({"file": p.name, "weight": c})
    mpath = out_dir / "ensemble.json"
    mpath.write_text(json.dumps({"members": members}, indent=2, sort_keys=True) + "\n")
    io.write_provenance(mpath, args.command, [args.manifest, args.pipeline], _params(args),
                        s.records)


def cmd_blur(args, s):
    img = _read_field(args.input)
    if not isinstance(img, RealField):
        raise UsageError("blur acts on a real image")
    out = source_blur(img, args.source_d, ConeBeamGeometry(args.z1, args.z2), args.profile)
    _save(s, args.out, out, args, [args.input], {"d_eff_m": args.source_d * args.z2 / args.z1})


def cmd_fp_step(args, s):
    i = _read_field(args.intensity)
    ph = _read_field(args.phase)
    g = i.grid
    if args.variant == "isotropic":
        dmap = DiffusionMap.isotropic(g, _real_or_file(args.d, g))
    elif args.variant == "tensor":
        dmap = DiffusionMap.tensor(g, _real_or_file(args.dxx, g), _real_or_file(args.dyy, g),
                                   _real_or_file(args.dxy, g))
    else:
        if not args.stencil:
            raise UsageError("kernel variant needs --stencil")
        stencil = np.asarray(io.load_json(_existing(args.stencil)), dtype=float)
        dmap = DiffusionMap.kernel(g, stencil, _real_or_file(args.fraction, g))
    out = fp_step(i, ph, dmap, args.delta, _wavelength(args))
    _save(s, args.out, out, args, [args.intensity, args.phase])


def cmd_paganin(args, s):
    img = _read_field(args.input)
    t, info = paganin_thickness(img, args.i0, args.delta, args.mu, args.dist, full_output=True)
    _save(s, args.out, t, args, [args.input], info)


def cmd_schiske(args, s):
    spec, base = _manifest(args.manifest)
    wl = _wavelength(args, required=False)
    states = spec.get("states", [])
    if not states:
        raise UsageError("manifest lists no states")
    fields = [_read_field(base / st["field"], wl) for st in states]
    tfs = [_tf_from_spec(st, f.grid, f.wavelength, base) for st, f in zip(states, fields)]
    _save(s, args.out, schiske_combine(fields, tfs, _reg(args.reg)), args,
          [args.manifest] + [base / st["field"] for st in states])


def cmd_ctf_retrieve(args, s):
    spec, base = _manifest(args.manifest)
    wl = _wavelength(args)
    states = spec.get("states", [])
    if not states:
        raise UsageError("manifest lists no states")
    images = [_read_field(base / st["image"]) for st in states]
    tfs = [_tf_from_spec(st, im.grid, wl, base) for st, im in zip(states, images)]
    _save(s, args.out, ctf_retrieve(images, tfs, _reg(args.reg)), args,
          [args.manifest] + [base / st["image"] for st in states])


def _darkfield_state(path):
    spec, base = _manifest(path)
    tau = complex(spec.get("tau_re", 0.0), spec.get("tau_im", 0.0))
    return (LinearTFState(tau),
            (_read_field(base / spec["i_in"]), _read_field(base / spec["i_out"])),
            [base / spec["i_in"], base / spec["i_out"]])


def cmd_darkfield(args, s):
    sa, ma, fa = _darkfield_state(args.a)
    sb, mb, fb = _darkfield_state(args.b)
    dphi, th2, info = darkfield_solve((ma, mb), (sa, sb), _wavelength(args), full_output=True)
    inputs = [args.a, args.b] + fa + fb
    _save(s, args.out_dphi, dphi, args, inputs, info)
    _save(s, args.out_theta, th2, args, inputs, info)


def cmd_fresnel_map(args, s):
    from .plotting import fresnel_map, write_fresnel_map
    fmap = fresnel_map((args.a_min, args.a_max), (args.z_min, args.z_max), _wavelength(args),
                       args.levels, n=args.samples)
    png, csv_path = write_fresnel_map(fmap, args.out, args.csv)
    io.write_provenance(png, args.command, [], _params(args), s.records,
                        {"csv": str(csv_path)})


def cmd_export(args, s):
    from .plotting import export_png
    f = _read_field(args.input)
    if isinstance(f, ComplexField):
        inten, phase = intensity_and_phase(f)
        f = {"intensity": inten, "phase": phase,
             "real": RealField(f.grid, f.values.real),
             "imag": RealField(f.grid, f.values.imag)}[args.quantity]
    path = export_png(f, args.out, args.norm, args.lo, args.hi)
    io.write_provenance(path, args.command, [args.input], _params(args), s.records)


def cmd_run(args, s):
    res = run_pipeline(args.config, output_dir=args.out_dir, on_warning=s.emit)
    if res.status == EXIT_CONFIG:
        raise UsageError(res.message)
    if res.status == EXIT_RUNTIME:
        raise XpciError(res.message)


# --- parser ------------------------------------------------------------

def _add_wave(p):
    p.add_argument("--wavelength", type=float, help="wavelength in metres")
    p.add_argument("--energy-kev", type=float, help="photon energy in keV")


def _add_io(p, inp="--in"):
    p.add_argument(inp, dest="input", required=True)
    p.add_argument("--out", required=True)


def build_parser():
    ap = argparse.ArgumentParser(prog="xpci", description="X-ray phase-contrast imaging toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propagate", help="free-space Fresnel propagation")
    _add_io(p)
    p.add_argument("--dist", type=float, required=True, help="distance (m)")
    p.add_argument("--pad", type=int, default=2, choices=(1, 2, 4))
    p.add_argument("--apodize", action="store_true")
    _add_wave(p)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("project", help="projection approximation of a volume")
    p.add_argument("--vol", required=True)
    p.add_argument("--out", required=True, help="transmission function output")
    p.add_argument("--phase-out")
    p.add_argument("--attenuation-out")
    _add_wave(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("phantom", help="synthetic test objects")
    p.add_argument("shape", choices=("sphere",))
    p.add_argument("--nx", type=int, default=512)
    p.add_argument("--ny", type=int)
    p.add_argument("--dx", type=float, default=2e-6)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--center-x", type=float, default=0.0)
    p.add_argument("--center-y", type=float, default=0.0)
    p.add_argument("--nz", type=int, default=64, help="slices for --volume-out")
    p.add_argument("--out", help="transmission function output")
    p.add_argument("--phase-out")
    p.add_argument("--attenuation-out")
    p.add_argument("--thickness-out")
    p.add_argument("--volume-out")
    _add_wave(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("multislice", help="multi-slice propagation through a volume")
    _add_io(p)
    p.add_argument("--vol", required=True)
    p.add_argument("--scheme", default="ptp", choices=("ptp", "pth"))
    p.add_argument("--slices", default="1", help="sub-steps per voxel slice, or 'auto'")
    p.add_argument("--pad", type=int, default=1, choices=(1, 2, 4))
    _add_wave(p)
    p.set_defaults(func=cmd_multislice)

    p = sub.add_parser("lsi", help="apply an aberration transfer function")
    _add_io(p)
    p.add_argument("--aberr", required=True)
    p.add_argument("--allow-gain", action="store_true")
    _add_wave(p)
    p.set_defaults(func=cmd_lsi)

    p = sub.add_parser("cascade", help="run a stage list from JSON")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    _add_wave(p)
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("ensemble", help="partially coherent ensembles")
    p.add_argument("action", choices=("propagate", "spectral-density"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--pipeline")
    p.add_argument("--out", required=True, help="output directory or file")
    p.add_argument("--workers", type=int)
    _add_wave(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("blur", help="source-size blur")
    _add_io(p)
    p.add_argument("--source-d", type=float, required=True)
    p.add_argument("--z1", type=float, required=True)
    p.add_argument("--z2", type=float, required=True)
    p.add_argument("--profile", default="disk", choices=("disk", "uniform-disk", "gaussian"))
    p.set_defaults(func=cmd_blur)

    p = sub.add_parser("fp-step", help="Fokker-Planck forward step")
    p.add_argument("--intensity", required=True)
    p.add_argument("--phase", required=True)
    p.add_argument("--variant", default="isotropic", choices=("isotropic", "tensor", "kernel"))
    p.add_argument("--d", default="0")
    p.add_argument("--dxx", default="0")
    p.add_argument("--dyy", default="0")
    p.add_argument("--dxy", default="0")
    p.add_argument("--stencil")
    p.add_argument("--fraction", default="0")
    p.add_argument("--delta", type=float, required=True, help="propagation distance (m)")
    p.add_argument("--out", required=True)
    _add_wave(p)
    p.set_defaults(func=cmd_fp_step)

    p = sub.add_parser("paganin", help="single-material thickness retrieval")
    _add_io(p)
    p.add_argument("--i0", type=float, default=1.0)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--mu", type=float, required=True, help="attenuation coefficient (1/m)")
    p.add_argument("--dist", type=float, required=True)
    p.set_defaults(func=cmd_paganin)

    for name, fn in (("schiske", cmd_schiske), ("ctf-retrieve", cmd_ctf_retrieve)):
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True)
        p.add_argument("--reg", default=AUTO)
        p.add_argument("--out", required=True)
        _add_wave(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("darkfield", help="two-state dark-field separation")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out-dphi", required=True)
    p.add_argument("--out-theta", required=True)
    _add_wave(p)
    p.set_defaults(func=cmd_darkfield)

    p = sub.add_parser("fresnel-map", help="Fresnel-number validity map (PNG + CSV)")
    p.add_argument("--a-min", type=float, required=True)
    p.add_argument("--a-max", type=float, required=True)
    p.add_argument("--z-min", type=float, required=True)
    p.add_argument("--z-max", type=float, required=True)
    p.add_argument("--levels", type=float, nargs="*")
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    _add_wave(p)
    p.set_defaults(func=cmd_fresnel_map)

    p = sub.add_parser("export", help="16-bit PNG export")
    _add_io(p)
    p.add_argument("--norm", default="minmax", choices=("minmax", "fixed", "log"))
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--quantity", default="intensity",
                   choices=("intensity", "phase", "real", "imag"))
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("run", help="execute a JSON pipeline")
    p.add_argument("config")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None, stderr=None):
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    session = _Session(stderr)
    try:
        with session.capture():
            args.func(args, session)
    except UsageError as exc:
        stderr.write(json.dumps({"error": str(exc), "status": EXIT_CONFIG}) + "\n")
        return EXIT_CONFIG
    except (XpciError, ValueError, OSError) as exc:
        stderr.write(json.dumps({"error": str(exc), "status": EXIT_RUNTIME}) + "\n")
        return EXIT_RUNTIME
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
