"""Diagnostic figures and 16-bit image export.

Figures are rendered with the non-interactive Agg backend so they work in
batch jobs.
"""
import contextlib
import csv
from dataclasses import dataclass
import json
from pathlib import Path
import warnings

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import FuncFormatter  # noqa: E402
from PIL import Image  # noqa: E402

from .errors import XpciError, XpciWarning  # noqa: E402
from .field import Grid2D, RealField  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "xtick.top": True,
    "ytick.right": True,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "image.cmap": "viridis",
    "lines.linewidth": 1.0,
}

HIGHLIGHT_LEVEL = 10.0
U16 = 65535


@contextlib.contextmanager
def plot_style(**overrides):
    with matplotlib.rc_context({**STYLE, **overrides}):
        yield


class ExportWarning(XpciWarning):
    code = "export"


def fresnel_number_grid(a, z, wavelength):
    """``N_F[i, j] = a[j]**2 / (wavelength * z[i])``."""
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    return a[None, :] ** 2 / (wavelength * z[:, None])


def _axis(lo_hi, n):
    lo, hi = (float(v) for v in lo_hi)
    if not (lo > 0 and hi > 0):
        raise XpciError("Fresnel-map ranges must be positive")
    if hi < lo:
        raise XpciError("range upper bound is below the lower bound")
    if lo == hi:
        return np.array([lo])
    return np.logspace(np.log10(lo), np.log10(hi), n)


@dataclass
class FresnelMap:
    a: np.ndarray
    z: np.ndarray
    fresnel_number: np.ndarray
    wavelength: float
    levels: tuple

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a_m", "z_m", "fresnel_number"])
            for i, z in enumerate(self.z):
                for j, a in enumerate(self.a):
                    w.writerow([repr(float(a)), repr(float(z)),
                                repr(float(self.fresnel_number[i, j]))])


def fresnel_map(a_range, z_range, wavelength, contour_levels=None, n=256):
    """Fresnel number over log-spaced feature sizes ``a`` and distances ``z``."""
    if not wavelength > 0:
        raise XpciError("wavelength must be positive")
    a = _axis(a_range, n)
    z = _axis(z_range, n)
    nf = fresnel_number_grid(a, z, wavelength)
    if contour_levels is None:
        lo, hi = np.log10(nf.min()), np.log10(nf.max())
        contour_levels = 10.0 ** np.arange(np.floor(lo), np.ceil(hi) + 1)
    levels = tuple(sorted(float(v) for v in contour_levels if v > 0))
    return FresnelMap(a, z, nf, float(wavelength), levels)


def _power_label(v, _pos=None):
    return f"$10^{{{v:g}}}$" if float(v).is_integer() else ""


def render_fresnel_map(fmap, title=None):
    """Draw a Fresnel map; returns ``(fig, ax, highlight)``.

    Axes are in ``log10`` units so contour interpolation is exact for the
    planar ``log N_F`` surface.  ``highlight`` is the N_F = 10 contour set,
    or ``None`` when it falls outside the map.
    """
    la, lz = np.log10(fmap.a), np.log10(fmap.z)
    lnf = np.log10(fmap.fresnel_number)
    with plot_style():
        fig, ax = plt.subplots(figsize=(5, 4))
        if lnf.size == 1:
            ax.scatter(la, lz, c=lnf.ravel(), s=80)
            ax.annotate(f"N_F = {fmap.fresnel_number[0, 0]:.3g}", (la[0], lz[0]),
                        textcoords="offset points", xytext=(6, 6))
            highlight = None
        else:
            ext = (la[0], la[-1], lz[0], lz[-1])
            if la.size == 1 or lz.size == 1:
                ext = (la[0] - 0.5, la[-1] + 0.5, lz[0] - 0.5, lz[-1] + 0.5)
            im = ax.imshow(lnf, origin="lower", extent=ext, aspect="auto")
            fig.colorbar(im, ax=ax, label="log10 N_F")
            highlight = None
            if la.size > 1 and lz.size > 1:
                inside = [np.log10(v) for v in fmap.levels
                          if lnf.min() < np.log10(v) < lnf.max() and v != HIGHLIGHT_LEVEL]
                if inside:
                    cs = ax.contour(la, lz, lnf, levels=inside, colors="w", linewidths=0.6)
                    ax.clabel(cs, fmt=lambda v: f"{10 ** v:g}", fontsize=7)
                if lnf.min() < 1 < lnf.max():
                    highlight = ax.contour(la, lz, lnf, levels=[1.0], colors="r",
                                           linewidths=1.8)
        ax.xaxis.set_major_formatter(FuncFormatter(_power_label))
        ax.yaxis.set_major_formatter(FuncFormatter(_power_label))
        ax.set_xlabel("feature size a (m)")
        ax.set_ylabel("propagation distance z (m)")
        ax.set_title(title or f"Fresnel number, wavelength {fmap.wavelength:.3g} m")
    return fig, ax, highlight


def write_fresnel_map(fmap, png_path, csv_path=None):
    """Render to PNG and write the sampled values as CSV."""
    fig, _, _ = render_fresnel_map(fmap)
    png_path = Path(png_path)
    png_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(png_path)
    plt.close(fig)
    csv_path = Path(csv_path) if csv_path else png_path.with_suffix(".csv")
    fmap.write_csv(csv_path)
    return png_path, csv_path


def _normalize(values, normalization, lo=None, hi=None):
    v = np.asarray(values, dtype=float)
    if normalization == "log":
        if np.any(v <= 0):
            raise XpciError("log normalization needs strictly positive values")
        v = np.log10(v)
    elif normalization not in ("minmax", "fixed"):
        raise XpciError(f"unknown normalization {normalization!r}")
    if normalization == "fixed":
        if lo is None or hi is None or not hi > lo:
            raise XpciError("fixed normalization needs lo < hi")
    else:
        lo, hi = float(v.min()), float(v.max())
    return v, float(lo), float(hi)


def png_sidecar(path):
    """``x.png -> x.png.json``, so it never clashes with a field's ``x.json``."""
    return Path(f"{path}.json")


def export_png(field, path, normalization="minmax", lo=None, hi=None):
    """Write a 16-bit grayscale PNG plus ``<path>.json`` with the mapping.

    A constant image under ``minmax`` becomes mid-gray with a warning.
    """
    values = field.values if isinstance(field, RealField) else np.asarray(field)
    if not np.all(np.isfinite(values)):
        raise XpciError("cannot export non-finite values")
    v, lo, hi = _normalize(values, normalization, lo, hi)
    if hi == lo:
        warnings.warn(ExportWarning("constant image exported as mid-gray", value=lo),
                      stacklevel=2)
        q = np.full(v.shape, U16 // 2 + 1, dtype=np.uint16)
    else:
        q = np.rint(np.clip((v - lo) / (hi - lo), 0, 1) * U16).astype(np.uint16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q).save(path)
    meta = {"normalization": normalization, "lo": lo, "hi": hi, "bits": 16}
    if isinstance(field, RealField):
        meta.update(nx=field.grid.nx, ny=field.grid.ny, dx_m=field.grid.dx, dy_m=field.grid.dy)
    png_sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def import_png(path):
    """Inverse of :func:`export_png` using its sidecar (values up to quantization)."""
    path = Path(path)
    meta = json.loads(png_sidecar(path).read_text())
    q = np.asarray(Image.open(path), dtype=float)
    lo, hi = meta["lo"], meta["hi"]
    v = lo + q / U16 * (hi - lo) if hi > lo else np.full(q.shape, lo)
    if meta["normalization"] == "log":
        v = 10.0 ** v
    if "nx" in meta:
        return RealField(Grid2D(meta["nx"], meta["ny"], meta["dx_m"], meta["dy_m"]), v)
    return v
