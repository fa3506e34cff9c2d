import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from rdac.transform import (Q_LADDER, ZIGZAG, QuantConfig, TokenError, code_plane,
                            dct8x8, decode_plane, dequantize, detokenize, idct8x8, quantize,
                            reconstruct_plane, tokenize, to_blocks)


def test_constant_block_dc():
    c = dct8x8(np.full((8, 8), 100.0))
    assert c[0, 0] == pytest.approx(800.0, abs=1e-9)
    c[0, 0] = 0
    assert np.abs(c).max() < 1e-9


def test_zero_block():
    assert not dct8x8(np.zeros((8, 8))).any()


def test_parseval_and_inverse():
    rng = np.random.default_rng(0)
    blocks = rng.uniform(-255, 255, (1000, 8, 8))
    c = dct8x8(blocks)
    np.testing.assert_allclose((c ** 2).sum(axis=(1, 2)), (blocks ** 2).sum(axis=(1, 2)),
                               rtol=0, atol=1e-9 * 64 * 255 ** 2 / 1000)
    assert np.abs(idct8x8(c) - blocks).max() < 1e-9


def test_dct_matches_naive():
    rng = np.random.default_rng(1)
    for _ in range(5):
        b = rng.uniform(-255, 255, (8, 8))
        assert np.abs(dct8x8(b) - oracles.dct2_naive(b)).max() < 1e-9


def test_zigzag_is_jpeg_order():
    assert list(ZIGZAG) == oracles.JPEG_ZIGZAG


@pytest.mark.parametrize("c,q,idx,rec", [(23, 16, 1, 16), (-24, 16, -2, -32), (24, 16, 2, 32),
                                          (7.9, 16, 0, 0)])
def test_quantize_examples(c, q, idx, rec):
    i = quantize(np.array([c]), QuantConfig(q))
    assert i[0] == idx
    assert dequantize(i, QuantConfig(q))[0] == rec


@pytest.mark.parametrize("q", Q_LADDER)
def test_quantize_zero(q):
    assert quantize(np.zeros(4), QuantConfig(q)).tolist() == [0, 0, 0, 0]


def test_deadzone_widens_zero_bin():
    c = np.array([9.0, -9.0, 20.0])
    assert quantize(c, QuantConfig(16)).tolist() == [1, -1, 1]
    assert quantize(c, QuantConfig(16, 0.25)).tolist() == [0, 0, 1]


@given(arrays(np.float64, 64, elements=st.floats(-2000, 2000)), st.sampled_from(Q_LADDER))
def test_quantization_error_bound(c, q):
    err = np.abs(dequantize(quantize(c, QuantConfig(q)), QuantConfig(q)) - c)
    assert err.max() <= q / 2 + 1e-9


def test_bad_q_rejected():
    with pytest.raises(ValueError):
        QuantConfig(10)


def test_tokenize_examples():
    z = np.zeros((3, 8, 8), np.int32)
    assert tokenize(z) == b"\x00\x00\x00"
    one = np.zeros((1, 8, 8), np.int32)
    one[0, 0, 0] = 3
    assert tokenize(one) == bytes([0x43, 0x00])
    one[0, 0, 0] = -3
    one[0, 1, 0] = 100   # zigzag position 2
    one[0, 7, 7] = -1    # zigzag position 63
    assert tokenize(one) == bytes([0x63, 0x01, 0x80, 0x00, 0x64, 60, 0x61, 0x00])


def test_long_run_splits():
    one = np.zeros((1, 8, 8), np.int32)
    one[0, 7, 7] = 1
    assert tokenize(one) == bytes([62, 1, 0x41, 0x00])


index_planes = st.integers(1, 4).flatmap(lambda n: arrays(
    np.int32, (n, 8, 8),
    elements=st.one_of(st.just(0), st.integers(-20, 20), st.integers(-32767, 32767))))


@settings(max_examples=1000)
@given(index_planes)
def test_token_round_trip(idx):
    tokens = tokenize(idx)
    back, pos = detokenize(tokens, idx.shape[0])
    assert pos == len(tokens)
    np.testing.assert_array_equal(back, idx)


def test_detokenize_errors():
    with pytest.raises(TokenError):
        detokenize(b"\x41", 1)
    with pytest.raises(TokenError):
        detokenize(b"\x3e\x3e\x41\x00", 1)
    with pytest.raises(TokenError):
        detokenize(b"\x90\x00", 1)


def test_overflow_level_rejected():
    with pytest.raises(TokenError):
        quantize(np.array([1e7]), QuantConfig(8))


@pytest.mark.parametrize("q", Q_LADDER)
def test_zero_plane(q):
    cp = code_plane(np.zeros((24, 16), np.int16), QuantConfig(q))
    assert not cp.reconstruction.any()
    assert cp.stream.tokens == b"\x00" * 6


def test_decode_matches_encoder_reconstruction():
    rng = np.random.default_rng(2)
    for i in range(100):
        h, w = rng.integers(8, 40, 2)
        plane = rng.integers(-255, 256, (h, w)).astype(np.int16)
        for q in Q_LADDER:
            cp = code_plane(plane, QuantConfig(q))
            np.testing.assert_array_equal(decode_plane(cp.stream, QuantConfig(q)), cp.reconstruction)


def test_mse_monotone_over_ladder():
    rng = np.random.default_rng(4)
    for _ in range(5):
        plane = np.clip(rng.normal(0, 40, (32, 32)), -255, 255).astype(np.int16)
        errs = [np.mean((code_plane(plane, QuantConfig(q)).reconstruction - plane) ** 2.0)
                for q in sorted(Q_LADDER)]
        assert all(a <= b for a, b in zip(errs, errs[1:]))


def test_edge_padding_blocks():
    p = np.arange(10 * 9).reshape(9, 10)
    b = to_blocks(p)
    assert b.shape == (4, 8, 8)
    assert (b[3][:, 2:] == b[3][:, 1:2]).all()
    assert reconstruct_plane(np.zeros((4, 8, 8)), 8, 10, 9).shape == (9, 10)


def test_residual_range_enforced():
    with pytest.raises(ValueError):
        code_plane(np.full((8, 8), 300, np.int16), QuantConfig(8))
