import io
from fractions import Fraction

import numpy as np
import pytest

from rdac.frames import (BadMagicError, DimensionMismatchError, Frame, SequenceInfo,
                         TruncatedFrameError, UnsupportedColorspaceError, read_y4m,
                         write_pgm, write_y4m)
from rdac.synth import KINDS, synth_sequence


def _yuv_frame(rng, w, h, index=0):
    ch, cw = (h + 1) // 2, (w + 1) // 2
    return Frame((rng.integers(0, 256, (h, w), dtype=np.uint8),
                  rng.integers(0, 256, (ch, cw), dtype=np.uint8),
                  rng.integers(0, 256, (ch, cw), dtype=np.uint8)), index)


def test_read_header_and_frames():
    payload = bytes(range(256)) * (64 * 64 * 3 // 2 // 256)
    data = b"YUV4MPEG2 W64 H64 F30:1\n" + (b"FRAME\n" + payload) * 2
    frames, info = read_y4m(io.BytesIO(data))
    assert (info.width, info.height, info.frame_rate, info.frame_count) == (64, 64, Fraction(30, 1), 2)
    assert len(frames) == 2
    assert frames[1].planes[0].shape == (64, 64)
    assert frames[1].planes[1].shape == (32, 32)


def test_unsupported_colorspace():
    with pytest.raises(UnsupportedColorspaceError):
        read_y4m(io.BytesIO(b"YUV4MPEG2 W64 H64 F30:1 C444\nFRAME\n"))


def test_bad_magic():
    with pytest.raises(BadMagicError):
        read_y4m(io.BytesIO(b"YUV4MPEG3 W64 H64\n"))


def test_truncated_frame_names_index(rng):
    buf = io.BytesIO()
    frames = [_yuv_frame(rng, 32, 32, i) for i in range(3)]
    write_y4m(frames, SequenceInfo(32, 32), buf)
    data = buf.getvalue()[:-10]
    with pytest.raises(TruncatedFrameError) as exc:
        read_y4m(io.BytesIO(data))
    assert exc.value.frame_index == 2
    assert "frame 2" in str(exc.value)


def test_error_codes_distinct():
    codes = {BadMagicError.code, UnsupportedColorspaceError.code, TruncatedFrameError.code}
    assert len(codes) == 3


@pytest.mark.parametrize("w,h", [(64, 64), (48, 34), (33, 17)])
def test_round_trip(rng, w, h):
    frames = [_yuv_frame(rng, w, h, i) for i in range(3)]
    buf = io.BytesIO()
    n = write_y4m(frames, SequenceInfo(w, h, Fraction(25, 1)), buf)
    assert n == len(buf.getvalue())
    back, info = read_y4m(io.BytesIO(buf.getvalue()))
    assert info.frame_rate == Fraction(25, 1)
    assert len(back) == 3
    for a, b in zip(frames, back):
        for pa, pb in zip(a.planes, b.planes):
            np.testing.assert_array_equal(pa, pb)


def test_empty_round_trip():
    buf = io.BytesIO()
    write_y4m([], SequenceInfo(64, 64), buf)
    frames, info = read_y4m(io.BytesIO(buf.getvalue()))
    assert frames == [] and info.frame_count == 0


def test_mixed_dimensions_rejected(rng):
    frames = [_yuv_frame(rng, 64, 64), _yuv_frame(rng, 32, 32, 1)]
    with pytest.raises(DimensionMismatchError):
        write_y4m(frames, SequenceInfo(64, 64), io.BytesIO())


def test_luma_only_written_with_gray_chroma(rng):
    f = Frame.luma(rng.integers(0, 256, (32, 32), dtype=np.uint8))
    buf = io.BytesIO()
    write_y4m([f], SequenceInfo(32, 32), buf)
    back, _ = read_y4m(io.BytesIO(buf.getvalue()))
    np.testing.assert_array_equal(back[0].y, f.y)
    assert (back[0].planes[1] == 128).all()


def test_pgm_dump(rng):
    p = rng.integers(0, 256, (20, 30), dtype=np.uint8)
    buf = io.BytesIO()
    write_pgm(p, buf)
    data = buf.getvalue()
    assert data.startswith(b"P5\n30 20\n255\n")
    np.testing.assert_array_equal(np.frombuffer(data[-600:], np.uint8).reshape(20, 30), p)


def test_frame_rejects_tiny_planes():
    with pytest.raises(ValueError):
        Frame.luma(np.zeros((8, 8), np.uint8))


# --- synthetic sequences -----------------------------------------------------

def test_static_noise_frames_identical():
    frames = synth_sequence("static_noise", 64, 64, 5, 7)
    assert len(frames) == 5
    for f in frames[1:]:
        np.testing.assert_array_equal(f.y, frames[0].y)


def test_translating_texture_moves_one_pixel():
    frames = synth_sequence("translating_texture", 64, 48, 6, 3)
    for a, b in zip(frames, frames[1:]):
        np.testing.assert_array_equal(b.y, np.roll(a.y, 1, axis=1))


@pytest.mark.parametrize("kind", KINDS)
def test_determinism(kind):
    a = synth_sequence(kind, 40, 32, 4, 11)
    b = synth_sequence(kind, 40, 32, 4, 11)
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.y, fb.y)
    assert [f.index for f in a] == [0, 1, 2, 3]


def test_deforming_blob_deformation_grows():
    frames = synth_sequence("deforming_blob", 64, 64, 40, 0)
    d = [np.abs(f.y.astype(int) - frames[0].y).mean() for f in frames]
    assert d[0] == 0
    assert d[10] < d[20] < d[39]


@pytest.mark.parametrize("w,h", [(0, 64), (64, 0)])
def test_zero_dimensions(w, h):
    with pytest.raises(ValueError):
        synth_sequence("static_noise", w, h, 3, 0)
