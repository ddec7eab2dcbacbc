import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from phdct import config as cfgmod
from phdct.cli import main
from phdct.io import (DataError, export_png, from_uint16, read_png, read_raw, to_uint16,
                      write_raw)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def record(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


# --- raw files -------------------------------------------------------------------

def test_raw_round_trip_is_lossless(tmp_path, rng):
    a = rng.normal(size=(7, 9)).astype(np.float32)
    raw, meta = write_raw(tmp_path / "a", a, "sinogram", scale=2.0, note="x")
    assert raw.stat().st_size == 4 * a.size
    back, side = read_raw(tmp_path / "a")
    assert np.array_equal(back, a.astype(np.float64))
    assert side["width"] == 9 and side["height"] == 7 and side["kind"] == "sinogram"
    assert side["scale"] == 2.0 and side["note"] == "x"


def test_raw_accepts_suffixed_names(tmp_path):
    write_raw(tmp_path / "b", np.ones((2, 2)), "image")
    assert read_raw(tmp_path / "b.raw")[0].shape == (2, 2)


def test_raw_hankel_src_dims_checked(tmp_path):
    write_raw(tmp_path / "h", np.zeros((9, 9)), "hankel", src_dims=(5, 5, 3))
    assert read_raw(tmp_path / "h")[1]["src_dims"] == [5, 5, 3]
    write_raw(tmp_path / "h", np.zeros((9, 9)), "hankel", src_dims=(6, 5, 3))
    with pytest.raises(DataError):
        read_raw(tmp_path / "h")


def test_raw_corruption_detected(tmp_path):
    raw, meta = write_raw(tmp_path / "c", np.zeros((3, 3)), "image")
    raw.write_bytes(raw.read_bytes()[:-4])
    with pytest.raises(DataError):
        read_raw(tmp_path / "c")
    with pytest.raises(DataError):
        read_raw(tmp_path / "missing")
    meta.write_text('{"width": 3}')
    with pytest.raises(DataError):
        read_raw(tmp_path / "c")


def test_write_raw_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        write_raw(tmp_path / "d", np.zeros(3), "image")
    with pytest.raises(ValueError):
        write_raw(tmp_path / "d", np.zeros((2, 2)), "volume")
    with pytest.raises(ValueError):
        write_raw(tmp_path / "d", np.full((2, 2), np.nan), "image")


# --- PNG export ---------------------------------------------------------------------

def test_png_midpoint_and_clamping(tmp_path):
    img = np.full((8, 8), -10.0)
    img[:4] = (-90 + 70) / 2
    img[6:] = 500.0
    p = export_png(img, tmp_path / "w.png", -90, 70)
    q = read_png(p)
    assert q.dtype == np.uint16
    assert np.all(np.abs(q[:4].astype(int) - 32768) <= 1)
    assert np.all(to_uint16(np.array([-1000.0, -90.0]), -90, 70) == 0)
    assert np.all(q[6:] == 65535)


@given(seed=st.integers(0, 2 ** 16), low=st.floats(-1000, 0), width=st.floats(1, 2000))
def test_png_quantisation_error(seed, low, width):
    high = low + width
    v = np.random.default_rng(seed).uniform(low, high, (6, 6))
    back = from_uint16(to_uint16(v, low, high), low, high)
    assert np.abs(back - v).max() <= (high - low) / 65535 * (1 + 1e-9)


def test_png_degenerate_window(tmp_path):
    with pytest.raises(ValueError):
        export_png(np.zeros((2, 2)), tmp_path / "x.png", 1.0, 1.0)


# --- configuration ---------------------------------------------------------------------

def test_config_round_trip():
    cfg = cfgmod.RunConfig()
    back = cfgmod.from_dict(json.loads(cfg.to_json()))
    assert back == cfg and back.digest() == cfg.digest()


def test_config_defaults_carry_reported_settings():
    cfg = cfgmod.RunConfig()
    assert cfg.eta == 22000
    assert cfg.recon.rank.K == 38 and cfg.recon.window == 8 and cfg.recon.M == 2
    assert cfg.train.learning_rate == 1e-3


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"recon": {"rank": {"K": 3, "extra": 0}}},
                                 {"train": {"lr": 0.1}}, {"geometry": {"num_views": 8, "x": 1}}])
def test_config_unknown_keys_rejected(doc):
    with pytest.raises(ValueError):
        cfgmod.from_dict(doc)


def test_sub_seeds_are_named_and_distinct():
    s = cfgmod.sub_seeds(7)
    assert set(s) == set(cfgmod.STREAMS) and len(set(s.values())) == 3
    assert s == cfgmod.sub_seeds(7) and s != cfgmod.sub_seeds(8)


# --- CLI ---------------------------------------------------------------------------------

def test_defaults_prints_full_config(capsys):
    code, out, _ = run(capsys, "defaults")
    assert code == 0
    assert cfgmod.from_dict(json.loads(out)) == cfgmod.RunConfig()


def test_zero_pipeline(tmp_path, capsys):
    z = tmp_path / "z"
    rec = record(capsys, "phantom", "--size", 64, "--kind", "constant", "--value", 0, "--out", z)
    assert {"command", "inputs", "config_hash", "seed", "seeds", "timings"} <= set(rec)
    record(capsys, "project", "--in", z, "--out", tmp_path / "z_sino")
    m = record(capsys, "metrics", "--ref", tmp_path / "z_sino", "--test", tmp_path / "z_sino")
    assert m["mse"] == 0.0 and m["psnr"] is None and m["identical"] is True
    assert m["domain"] == "sinogram"


def test_lowdose_twice_is_byte_identical(tmp_path, capsys):
    record(capsys, "phantom", "--size", 64, "--out", tmp_path / "p")
    record(capsys, "project", "--in", tmp_path / "p", "--out", tmp_path / "s")
    for name in ("a", "b"):
        record(capsys, "lowdose", "--in", tmp_path / "s", "--out", tmp_path / name,
               "--intensity", 1e5, "--seed", 7)
    assert (tmp_path / "a.raw").read_bytes() == (tmp_path / "b.raw").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    record(capsys, "lowdose", "--in", tmp_path / "s", "--out", tmp_path / "c", "--seed", 8)
    assert (tmp_path / "a.raw").read_bytes() != (tmp_path / "c.raw").read_bytes()


def test_train_reconstruct_and_export(tmp_path, capsys):
    record(capsys, "phantom", "--size", 64, "--out", tmp_path / "p")
    record(capsys, "project", "--in", tmp_path / "p", "--out", tmp_path / "s")
    record(capsys, "lowdose", "--in", tmp_path / "s", "--out", tmp_path / "y")
    tr = record(capsys, "train", "--shots", tmp_path / "s", "--out", tmp_path / "models",
                "--steps", 3, "--hidden", 16)
    assert len(tr["outputs"]) == 6 and len(tr["schedule"]) == 10
    code, out, err = run(capsys, "reconstruct", "--in", tmp_path / "y", "--models", tmp_path / "models",
                         "--out", tmp_path / "r", "--truth", tmp_path / "s", "--N", 2, "--M", 1)
    assert code == 0, err
    lines = [json.loads(l) for l in err.strip().splitlines()]
    assert [l["iteration"] for l in lines] == [1, 0] and all("psnr" in l for l in lines)
    rec = json.loads(out)
    assert rec["recon"]["N"] == 2 and "sinogram_metrics" in rec
    assert read_raw(tmp_path / "r_image")[1]["kind"] == "image"
    rec = record(capsys, "export-png", "--in", tmp_path / "r_image", "--out", tmp_path / "r.png",
                 "--low", 0, "--high", 0.05)
    assert read_png(rec["outputs"][0]).shape == (64, 64)


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "phantom")[0] == 1
    assert run(capsys, "phantom", "--out", tmp_path / "x", "--kind", "triangle")[0] == 1
    assert run(capsys, "defaults", "--seed", -1)[0] == 1
    assert run(capsys)[0] == 1


def test_data_errors_exit_2(tmp_path, capsys):
    assert run(capsys, "project", "--in", tmp_path / "nope", "--out", tmp_path / "o")[0] == 2
    write_raw(tmp_path / "img", np.zeros((64, 64)), "image")
    # a sinogram command fed an image
    assert run(capsys, "lowdose", "--in", tmp_path / "img", "--out", tmp_path / "o")[0] == 2
    write_raw(tmp_path / "other", np.zeros((32, 32)), "image")
    assert run(capsys, "metrics", "--ref", tmp_path / "img", "--test", tmp_path / "other")[0] == 2
    assert run(capsys, "reconstruct", "--in", tmp_path / "img", "--models", tmp_path,
               "--out", tmp_path / "r")[0] == 2


def test_unknown_config_key_is_a_data_error(tmp_path, capsys):
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"recon": {"N": 3, "temperature": 1.0}}))
    code, _, err = run(capsys, "phantom", "--config", bad, "--out", tmp_path / "p")
    assert code == 2 and "temperature" in err


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "phdct", "defaults"], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["recon"]["N"] == 10
