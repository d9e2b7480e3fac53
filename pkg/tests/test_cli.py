import io as _io
import json

import numpy as np
import pytest

from xpci import ComplexField, Grid2D, RealField, io
from xpci.cli import build_parser, main
from xpci.lsi import AberrationSet
from xpci.propagation import PropagationPlan, fresnel_propagate

from conftest import random_field

WL = 1e-10


def run(argv):
    err = _io.StringIO()
    code = main([str(a) for a in argv], stderr=err)
    lines = [json.loads(l) for l in err.getvalue().splitlines() if l.strip()]
    return code, lines


@pytest.fixture
def field_file(tmp_path, rng):
    g = Grid2D(32, 32, 1e-6)
    f = random_field(rng, g, WL)
    return f, io.write_field(f, tmp_path / "in.bin")


def test_propagate_matches_library(tmp_path, field_file):
    f, path = field_file
    code, _ = run(["propagate", "--in", path, "--out", tmp_path / "o.bin", "--dist", 1e-3])
    assert code == 0
    out = io.read_field(tmp_path / "o.bin")
    ref = fresnel_propagate(f, PropagationPlan(1e-3))
    assert np.array_equal(out.values, ref.values)
    prov = json.loads((tmp_path / "o.bin.prov.json").read_text())
    assert prov["command"] == "propagate" and prov["parameters"]["dist"] == 1e-3


def test_missing_input_exit_2(tmp_path):
    code, lines = run(["propagate", "--in", tmp_path / "none.bin", "--out", tmp_path / "o",
                       "--dist", 1])
    assert code == 2 and lines[-1]["status"] == 2
    assert not (tmp_path / "o.bin").exists()


def test_bad_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["propagate", "--pad", "3"])
    assert exc.value.code == 2


def test_wavelength_and_energy_conflict(tmp_path):
    code, _ = run(["phantom", "sphere", "--radius", 1e-5, "--delta", 1e-6,
                   "--out", tmp_path / "t", "--wavelength", WL, "--energy-kev", 12])
    assert code == 2


def test_warnings_go_to_stderr_as_json(tmp_path):
    code, lines = run(["phantom", "sphere", "--nx", 32, "--dx", 1e-6, "--radius", 1e-4,
                       "--delta", 1e-6, "--out", tmp_path / "t", "--energy-kev", 12.4])
    assert code == 0
    assert lines[0]["code"] == "truncation"
    prov = json.loads((tmp_path / "t.bin.prov.json").read_text())
    assert prov["warnings"][0]["code"] == "truncation"


def test_phantom_volume_project_and_multislice(tmp_path):
    base = ["--nx", 32, "--dx", 1e-6, "--radius", 8e-6, "--delta", 1e-6, "--beta", 1e-9,
            "--wavelength", WL]
    code, _ = run(["phantom", "sphere", *base, "--nz", 8, "--volume-out", tmp_path / "v.json",
                   "--out", tmp_path / "T"])
    assert code == 0
    code, _ = run(["project", "--vol", tmp_path / "v.json", "--out", tmp_path / "P",
                   "--phase-out", tmp_path / "phi", "--wavelength", WL])
    assert code == 0
    assert isinstance(io.read_field(tmp_path / "phi.bin"), RealField)
    g = Grid2D(32, 32, 1e-6)
    io.write_field(ComplexField.plane_wave(g, WL), tmp_path / "pw")
    code, _ = run(["multislice", "--in", tmp_path / "pw.bin", "--vol", tmp_path / "v.json",
                   "--out", tmp_path / "ms", "--slices", 2])
    assert code == 0
    ms = io.read_field(tmp_path / "ms.bin")
    assert np.all(np.isfinite(ms.values))
    info = json.loads((tmp_path / "ms.bin.prov.json").read_text())["info"]
    assert info


def test_lsi_and_cascade_agree(tmp_path, field_file):
    f, path = field_file
    ab = AberrationSet.defocus(1e-3, WL)
    io.write_aberrations(ab, tmp_path / "ab.json")
    assert run(["lsi", "--in", path, "--out", tmp_path / "l", "--aberr", tmp_path / "ab.json"])[0] == 0
    (tmp_path / "pipe.json").write_text(json.dumps({
        "input": "in.bin", "output": "c.bin",
        "stages": [{"type": "filter", "aberrations": "ab.json"}]}))
    assert run(["cascade", "--pipeline", tmp_path / "pipe.json"])[0] == 0
    a = io.read_field(tmp_path / "l.bin").values
    b = io.read_field(tmp_path / "c.bin").values
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_cascade_unknown_stage(tmp_path, field_file):
    _, path = field_file
    (tmp_path / "pipe.json").write_text(json.dumps({"stages": [{"type": "warp"}]}))
    code, _ = run(["cascade", "--pipeline", tmp_path / "pipe.json", "--in", path,
                   "--out", tmp_path / "c"])
    assert code == 2


def test_ensemble_spectral_density_and_propagate(tmp_path, rng):
    g = Grid2D(16, 16, 1e-6)
    members = []
    for j in range(3):
        io.write_field(random_field(rng, g, WL), tmp_path / f"m{j}.bin")
        members.append({"file": f"m{j}.bin", "weight": 1 / 3})
    (tmp_path / "ens.json").write_text(json.dumps({"members": members}))
    assert run(["ensemble", "spectral-density", "--manifest", tmp_path / "ens.json",
                "--out", tmp_path / "S"])[0] == 0
    s = io.read_field(tmp_path / "S.bin")
    ref = sum(np.abs(io.read_field(tmp_path / f"m{j}.bin").values) ** 2 for j in range(3)) / 3
    assert np.allclose(s.values, ref)
    (tmp_path / "p.json").write_text(json.dumps({"stages": [{"type": "propagate",
                                                             "dist_m": 1e-3}]}))
    assert run(["ensemble", "propagate", "--manifest", tmp_path / "ens.json",
                "--pipeline", tmp_path / "p.json", "--out", tmp_path / "od"])[0] == 0
    out = json.loads((tmp_path / "od" / "ensemble.json").read_text())
    assert len(out["members"]) == 3
    assert run(["ensemble", "propagate", "--manifest", tmp_path / "ens.json",
                "--out", tmp_path / "od"])[0] == 2


def test_blur_and_export(tmp_path, rng):
    g = Grid2D(32, 32, 1e-6)
    io.write_field(RealField(g, 1 + 0.1 * rng.random(g.shape)), tmp_path / "img")
    assert run(["blur", "--in", tmp_path / "img.bin", "--out", tmp_path / "b",
                "--source-d", 5e-6, "--z1", 1, "--z2", 1])[0] == 0
    b = io.read_field(tmp_path / "b.bin")
    assert b.values.std() < io.read_field(tmp_path / "img.bin").values.std()
    assert run(["export", "--in", tmp_path / "b.bin", "--out", tmp_path / "b.png"])[0] == 0
    assert (tmp_path / "b.png").exists() and (tmp_path / "b.png.prov.json").exists()


def test_fp_step_isotropic_zero_is_tie(tmp_path):
    g = Grid2D(32, 32, 1e-6)
    x, y = g.coords()
    io.write_field(RealField(g, 1 + 0.1 * np.exp(-(x ** 2 + y ** 2) / 50e-12)), tmp_path / "i")
    io.write_field(RealField(g, np.zeros(g.shape)), tmp_path / "p")
    code, _ = run(["fp-step", "--intensity", tmp_path / "i.bin", "--phase", tmp_path / "p.bin",
                   "--delta", 1e-3, "--out", tmp_path / "o", "--wavelength", WL])
    assert code == 0
    # Flat phase and no diffusion: intensity is unchanged.
    assert np.allclose(io.read_field(tmp_path / "o.bin").values,
                       io.read_field(tmp_path / "i.bin").values)
    code, _ = run(["fp-step", "--intensity", tmp_path / "i.bin", "--phase", tmp_path / "p.bin",
                   "--variant", "kernel", "--delta", 1e-3, "--out", tmp_path / "o",
                   "--wavelength", WL])
    assert code == 2


def test_paganin_runtime_error_exit_1(tmp_path):
    g = Grid2D(16, 16, 1e-6)
    io.write_field(RealField(g, -np.ones(g.shape)), tmp_path / "neg")
    code, lines = run(["paganin", "--in", tmp_path / "neg.bin", "--out", tmp_path / "t",
                       "--delta", 1e-6, "--mu", 100, "--dist", 0.1])
    assert code == 1 and lines[-1]["status"] == 1


def test_schiske_and_ctf_commands(tmp_path, rng):
    g = Grid2D(32, 32, 1e-6)
    f = random_field(rng, g, WL)
    states = []
    for j, z in enumerate((1e-3, 3e-3)):
        out = fresnel_propagate(f, PropagationPlan(z, 1))
        io.write_field(out, tmp_path / f"s{j}.bin")
        states.append({"field": f"s{j}.bin", "dist_m": z})
    (tmp_path / "sch.json").write_text(json.dumps({"states": states}))
    assert run(["schiske", "--manifest", tmp_path / "sch.json", "--out", tmp_path / "r",
                "--reg", "1e-9"])[0] == 0
    assert run(["schiske", "--manifest", tmp_path / "sch.json", "--out", tmp_path / "r",
                "--reg", "lots"])[0] == 2
    io.write_field(RealField(g, np.ones(g.shape)), tmp_path / "I0.bin")
    (tmp_path / "ctf.json").write_text(json.dumps({"states": [{"image": "I0.bin",
                                                               "dist_m": 1e-3}]}))
    assert run(["ctf-retrieve", "--manifest", tmp_path / "ctf.json", "--out", tmp_path / "phi",
                "--wavelength", WL])[0] == 0
    assert np.allclose(io.read_field(tmp_path / "phi.bin").values, 0, atol=1e-12)


def test_darkfield_command(tmp_path):
    g = Grid2D(16, 4, 1e-6)
    io.write_field(RealField(g, np.ones(g.shape)), tmp_path / "in.bin")
    io.write_field(RealField(g, np.ones(g.shape)), tmp_path / "out.bin")
    for name, tau in (("a", 2e-8), ("b", -1e-8)):
        (tmp_path / f"{name}.json").write_text(json.dumps(
            {"tau_re": tau, "i_in": "in.bin", "i_out": "out.bin"}))
    code, _ = run(["darkfield", "--a", tmp_path / "a.json", "--b", tmp_path / "b.json",
                   "--out-dphi", tmp_path / "d", "--out-theta", tmp_path / "th",
                   "--wavelength", WL])
    assert code == 0
    assert np.allclose(io.read_field(tmp_path / "d.bin").values, 0)


def test_fresnel_map_command(tmp_path):
    code, _ = run(["fresnel-map", "--a-min", 1e-6, "--a-max", 1e-4, "--z-min", 0.01,
                   "--z-max", 10, "--energy-kev", 8.27, "--samples", 32,
                   "--out", tmp_path / "map.png"])
    assert code == 0
    assert (tmp_path / "map.png").exists() and (tmp_path / "map.csv").exists()


def test_run_command(tmp_path):
    (tmp_path / "empty.json").write_text(json.dumps({"steps": []}))
    assert run(["run", tmp_path / "empty.json"])[0] == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["steps"] == []
    (tmp_path / "bad.json").write_text(json.dumps({"steps": [{"id": "x", "op": "load_field",
                                                              "params": {"path": "no.bin"}}]}))
    code, lines = run(["run", tmp_path / "bad.json", "--out-dir", tmp_path / "o"])
    assert code == 2 and "/steps/0/params/path" in lines[-1]["error"]
