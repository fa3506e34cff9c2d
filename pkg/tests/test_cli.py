import csv

import numpy as np
import pytest

from rdac.cli import run
from rdac.codec import CodecConfig, encode_sequence
from rdac.frames import load_y4m


@pytest.fixture(scope="module")
def clip(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "a.y4m"
    assert run(["synth", "--kind", "translating_texture", "--width", "48", "--height", "48",
                "--frames", "8", "--seed", "1", "--output", str(path)]) == 0
    return path


def test_encode_decode_matches_encoder(clip, tmp_path):
    bits, rec = tmp_path / "a.rdac", tmp_path / "rec.y4m"
    assert run(["encode", "--input", str(clip), "--output", str(bits), "--gop", "4",
                "--lambda", "0.02", "--mode", "temporal"]) == 0
    assert run(["decode", "--input", str(bits), "--output", str(rec)]) == 0
    frames, _ = load_y4m(clip)
    expected = encode_sequence([f.to_luma() for f in frames], CodecConfig(gop_size=4)).reconstructions
    decoded, info = load_y4m(rec)
    assert info.frame_count == 8
    for a, b in zip(decoded, expected):
        np.testing.assert_array_equal(a.y, b.y)


def test_metrics_command(clip, tmp_path):
    out = tmp_path / "m.csv"
    assert run(["metrics", "--input", str(clip), "--input", str(clip), "--out", str(out)]) == 0
    rows = [r for r in out.read_text().splitlines() if not r.startswith("#")]
    assert rows[0] == "frame,psnr,ssim,ms_ssim"
    assert len(rows) == 9


def test_rd_sweep_and_bd(clip, tmp_path):
    rd = tmp_path / "rd.csv"
    assert run(["rd-sweep", "--input", str(clip), "--gops", "2,4,8,16",
                "--lambdas", "0.005,0.02,0.08,0.32", "--mode", "temporal", "--metric", "psnr",
                "--out", str(rd)]) == 0
    rows = list(csv.DictReader(l for l in rd.read_text().splitlines() if not l.startswith("#")))
    assert len(rows) == 16
    assert {r["gop"] for r in rows} == {"2", "4", "8", "16"}
    assert any(r["on_hull"] == "1" for r in rows)
    out = tmp_path / "bd.txt"
    assert run(["bd-rate", "--input", str(rd), "--input", str(rd), "--out", str(out)]) in (0, 1)


def test_drift_and_bench(clip, tmp_path):
    d, b = tmp_path / "d.csv", tmp_path / "b.csv"
    assert run(["drift", "--input", str(clip), "--gop", "4", "--mode", "animation-only",
                "--out", str(d)]) == 0
    assert "gop slopes" in d.read_text()
    assert run(["bench", "--input", str(clip), "--gop", "4", "--repetitions", "3",
                "--out", str(b)]) == 0
    assert "frame_type,stage,mean_s,median_s,samples" in b.read_text()


def test_unknown_flag_is_usage_error(capsys):
    assert run(["encode", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_input_is_io_error(tmp_path, capsys):
    assert run(["encode", "--input", str(tmp_path / "nope.y4m"), "--output",
                str(tmp_path / "x.rdac")]) == 2
    assert not (tmp_path / "x.rdac").exists()


def test_corrupt_bitstream_exit_code(clip, tmp_path, capsys):
    bits = tmp_path / "a.rdac"
    assert run(["encode", "--input", str(clip), "--output", str(bits), "--gop", "4"]) == 0
    data = bytearray(bits.read_bytes())
    data[-12] ^= 0xFF
    bits.write_bytes(bytes(data))
    out = tmp_path / "rec.y4m"
    assert run(["decode", "--input", str(bits), "--output", str(out)]) == 3
    assert "frame 7" in capsys.readouterr().err
    assert not out.exists()
