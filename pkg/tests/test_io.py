import json

import numpy as np
import pytest

from xpci import ComplexField, Grid2D, RealField, io
from xpci.errors import XpciError
from xpci.lsi import AberrationSet
from xpci.sample import RefractiveVolume

from conftest import random_field


def test_complex_field_round_trip_is_bit_exact(tmp_path, rng):
    g = Grid2D(24, 16, 0.7e-6, 0.9e-6)
    f = random_field(rng, g, 1.3e-10)
    path = io.write_field(f, tmp_path / "f.bin")
    back = io.read_field(path)
    assert isinstance(back, ComplexField)
    assert back.grid == g
    assert back.wavelength == f.wavelength
    assert np.array_equal(back.values, f.values)


def test_real_field_round_trip(tmp_path, rng):
    g = Grid2D(8, 8, 1e-6)
    f = RealField(g, rng.normal(size=g.shape))
    back = io.read_field(io.write_field(f, tmp_path / "r"))
    assert isinstance(back, RealField)
    assert np.array_equal(back.values, f.values)


def test_sidecar_layout(tmp_path, rng):
    g = Grid2D(4, 3, 1e-6)
    path = io.write_field(random_field(rng, g), tmp_path / "a.bin")
    meta = json.loads((tmp_path / "a.json").read_text())
    assert meta["kind"] == "complex" and meta["nx"] == 4 and meta["ny"] == 3
    assert path.stat().st_size == 4 * 3 * 2 * 8


def test_read_by_sidecar_name_and_wavelength_override(tmp_path, rng):
    g = Grid2D(4, 4, 1e-6)
    io.write_field(random_field(rng, g, 1e-10), tmp_path / "a.bin")
    back = io.read_field(tmp_path / "a.json", wavelength=2e-10)
    assert back.wavelength == 2e-10


def test_size_mismatch_rejected(tmp_path, rng):
    g = Grid2D(4, 4, 1e-6)
    path = io.write_field(random_field(rng, g), tmp_path / "a.bin")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(XpciError, match="expected"):
        io.read_field(path)


def test_missing_files_rejected(tmp_path, rng):
    with pytest.raises(XpciError, match="not found"):
        io.read_field(tmp_path / "nothing.bin")
    g = Grid2D(4, 4, 1e-6)
    path = io.write_field(random_field(rng, g), tmp_path / "a.bin")
    path.unlink()
    with pytest.raises(XpciError, match="not found"):
        io.read_field(tmp_path / "a.bin")


def test_bad_json_and_missing_key(tmp_path):
    (tmp_path / "b.json").write_text("{not json")
    with pytest.raises(XpciError, match="invalid JSON"):
        io.read_field(tmp_path / "b.bin")
    (tmp_path / "c.json").write_text(json.dumps({"nx": 4, "ny": 4, "dx_m": 1e-6}))
    (tmp_path / "c.bin").write_bytes(b"")
    with pytest.raises(XpciError, match="missing key"):
        io.read_field(tmp_path / "c.bin")


def test_volume_round_trip_memmap(tmp_path, rng):
    g = Grid2D(8, 6, 1e-6)
    delta = rng.uniform(0, 1e-6, size=(3,) + g.shape)
    beta = rng.uniform(0, 1e-9, size=(3,) + g.shape)
    vol = RefractiveVolume(g, 2e-6, delta, beta)
    path = io.write_volume(vol, tmp_path / "vol.json")
    back = io.read_volume(path)
    assert isinstance(back.delta, np.memmap)
    assert back.nz == 3 and back.dz == 2e-6 and back.grid == g
    assert np.array_equal(back.delta, delta.astype(np.float32))
    eager = io.read_volume(path, mmap=False)
    assert not isinstance(eager.beta, np.memmap)
    assert np.array_equal(eager.beta, beta.astype(np.float32))


def test_volume_truncated_file_rejected(tmp_path):
    g = Grid2D(4, 4, 1e-6)
    vol = RefractiveVolume(g, 1e-6, np.zeros((2, 4, 4)), np.zeros((2, 4, 4)))
    path = io.write_volume(vol, tmp_path / "v")
    f = tmp_path / "v_delta.bin"
    f.write_bytes(f.read_bytes()[:-4])
    with pytest.raises(XpciError, match="size"):
        io.read_volume(path)


def test_aberrations_round_trip(tmp_path):
    ab = AberrationSet({(2, 0): 1 + 2j, (0, 2): -0.5j})
    io.write_aberrations(ab, tmp_path / "ab.json")
    back = io.read_aberrations(tmp_path / "ab.json")
    assert back.to_records() == ab.to_records()


def test_aberrations_bad_records(tmp_path):
    (tmp_path / "ab.json").write_text(json.dumps([{"m": 1}]))
    with pytest.raises(XpciError, match="aberration"):
        io.read_aberrations(tmp_path / "ab.json")


def test_provenance_record(tmp_path, rng):
    g = Grid2D(4, 4, 1e-6)
    out = io.write_field(random_field(rng, g), tmp_path / "o.bin")
    p = io.write_provenance(out, "propagate", [tmp_path / "in.bin"], {"dist": 0.1},
                            [{"code": "sampling"}], {"tau": 1 + 2j, "n": np.int64(3)})
    assert p.name == "o.bin.prov.json"
    rec = json.loads(p.read_text())
    assert rec["command"] == "propagate"
    assert rec["parameters"] == {"dist": 0.1}
    assert rec["inputs"] == [str(tmp_path / "in.bin")]
    assert rec["info"] == {"tau": {"re": 1.0, "im": 2.0}, "n": 3}
    assert rec["warnings"] == [{"code": "sampling"}]
