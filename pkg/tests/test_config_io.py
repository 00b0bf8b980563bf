import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relboltz import io
from relboltz.config import ConfigError, RunConfig, config_from_dict, load_config


class TestConfig:
    def test_defaults_validate(self):
        cfg = RunConfig().validate()
        assert cfg.basis.n_radial == 8 and cfg.basis.l_max == 7

    def test_roundtrip(self):
        cfg = RunConfig().validate()
        again = config_from_dict(json.loads(cfg.canonical_json()))
        assert again.config_hash() == cfg.config_hash()

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict({"kernle": {}})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict({"basis": {"n_radial": 4, "lmax": 3}})

    def test_unknown_tolerance(self):
        with pytest.raises(ConfigError, match="unknown tolerance"):
            config_from_dict({"tolerances": {"no_such_tol": 1e-3}})

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            config_from_dict({"basis": {"n_radial": 0, "l_max": 3}})
        with pytest.raises(ConfigError):
            config_from_dict({"decay": {"fit_window": [10.0, 5.0]}})
        with pytest.raises(ConfigError):
            config_from_dict({"kernel": {"beta": 2.5}})
        with pytest.raises(ConfigError):
            config_from_dict({"quadrature": {"seed": -1}})

    def test_config_hash_sensitivity(self):
        a = config_from_dict({})
        b = config_from_dict({"quadrature": {"seed": 1}})
        assert a.config_hash() != b.config_hash()

    def test_load_config_errors(self, tmp_path):
        missing = tmp_path / "nope.json"
        with pytest.raises(ConfigError):
            load_config(str(missing))
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(str(bad))


class TestContainer:
    def test_real_roundtrip(self, tmp_path, rng):
        M = rng.normal(size=(7, 7))
        path = str(tmp_path / "m.rbsm")
        io.write_matrix(path, M, seed=99, kernel_id="g2_over_1plusg")
        back, meta = io.read_matrix(path)
        assert np.array_equal(back, M)
        assert meta == {"dim": 7, "seed": 99, "kernel_id": "g2_over_1plusg",
                        "complex": False}

    def test_complex_roundtrip(self, tmp_path, rng):
        M = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        path = str(tmp_path / "c.rbsm")
        io.write_matrix(path, M, seed=1)
        back, meta = io.read_matrix(path)
        assert np.array_equal(back, M)
        assert meta["complex"] is True

    def test_header_layout(self, tmp_path):
        path = str(tmp_path / "h.rbsm")
        io.write_matrix(path, np.eye(2), seed=3, kernel_id="abc")
        raw = open(path, "rb").read()
        assert raw[:4] == b"RBSM"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 2
        assert int.from_bytes(raw[12:16], "little") == 0
        assert int.from_bytes(raw[16:24], "little") == 3
        assert raw[24:40].rstrip(b"\0") == b"abc"
        assert len(raw) == 40 + 2 * 2 * 8

    def test_rejects_nonsquare(self, tmp_path):
        with pytest.raises(ValueError):
            io.write_matrix(str(tmp_path / "x.rbsm"), np.ones((2, 3)))

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rbsm"
        path.write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(ValueError):
            io.read_matrix(str(path))

    @settings(max_examples=20, deadline=None)
    @given(dim=st.integers(min_value=1, max_value=6),
           seed=st.integers(min_value=0, max_value=2**31))
    def test_roundtrip_property(self, tmp_path_factory, dim, seed):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(dim, dim)) * 10.0 ** rng.integers(-200, 200)
        path = str(tmp_path_factory.mktemp("rbsm") / "m.rbsm")
        io.write_matrix(path, M)
        back, _ = io.read_matrix(path)
        assert np.array_equal(back, M)


class TestCsvAndManifest:
    def test_csv_format(self, tmp_path):
        path = str(tmp_path / "t.csv")
        io.write_csv(path, ["a", "b"], [[1.0 / 3.0, 2], [1e-300, -5]])
        raw = open(path, "rb").read()
        assert b"\r" not in raw
        lines = raw.decode().strip().split("\n")
        assert lines[0] == "a,b"
        assert float(lines[1].split(",")[0]) == 1.0 / 3.0  # 17 digits round-trips

    def test_manifest_checksums(self, tmp_path):
        f = tmp_path / "data.csv"
        io.write_csv(str(f), ["x"], [[1.0]])
        manifest = io.write_manifest(str(tmp_path / "manifest.json"), "stage", "hash",
                                     [str(f)])
        assert manifest["files"]["data.csv"] == io.sha256_file(str(f))

    def test_atomic_write_no_partial(self, tmp_path):
        target = tmp_path / "out.bin"
        io.atomic_write_bytes(str(target), b"payload")
        assert target.read_bytes() == b"payload"
        leftovers = [p for p in os.listdir(tmp_path) if p.startswith(".tmp-")]
        assert leftovers == []
