import dataclasses
import struct
import zlib

import numpy as np
import pytest

from rdac.animation import KeypointSet, MotionConfig
from rdac.codec import (BadMagicError, BitstreamError, ChecksumError, CodecConfig, CodecState,
                        Encoder, FrameType, Mode, ResidualMode, TruncatedBitstreamError,
                        VersionMismatchError, decode_intra, decode_sequence, encode_animated,
                        encode_intra, encode_sequence, keypoint_payload, parse_keypoint_payload,
                        read_container)
from rdac.frames import Frame
from rdac.metrics import psnr
from rdac.synth import KINDS, synth_sequence


@pytest.fixture(scope="module")
def texture():
    return synth_sequence("translating_texture", 64, 64, 24, 0)


def test_intra_mid_gray():
    f = Frame.luma(np.full((32, 32), 128, np.uint8))
    record, decoded = encode_intra(f)
    assert record.frame_type is FrameType.INTRA
    np.testing.assert_array_equal(decoded.y, f.y)
    from rdac.entropy import ppm_decode
    assert ppm_decode(record.residual) == b"\x00" * 16


def test_intra_decoder_matches_encoder(rng):
    f = Frame((rng.integers(0, 256, (40, 48), dtype=np.uint8),
               rng.integers(0, 256, (20, 24), dtype=np.uint8),
               rng.integers(0, 256, (20, 24), dtype=np.uint8)))
    for q in (8, 24, 96):
        record, decoded = encode_intra(f, q)
        back = decode_intra(record, [p.shape for p in f.planes])
        for a, b in zip(back.planes, decoded.planes):
            np.testing.assert_array_equal(a, b)


def test_intra_quality_improves_with_finer_q(texture):
    f = texture[0]
    fine = psnr(encode_intra(f, 8)[1].y, f.y)
    coarse = psnr(encode_intra(f, 32)[1].y, f.y)
    assert fine >= coarse


def _gop_state(frame, config):
    _, decoded = encode_intra(frame, config.q_ref)
    from rdac.animation import detect_keypoints
    zero = tuple(np.zeros(p.shape, np.int16) for p in decoded.planes)
    return decoded, CodecState(decoded, zero, 1, detect_keypoints(decoded.y, config.motion).positions)


def test_zero_residual_when_target_is_reference(texture):
    config = CodecConfig()
    decoded, state = _gop_state(texture[0], config)
    record, new_state, out = encode_animated(decoded, state, config)
    assert all(not r.any() for r in new_state.prev_residual)
    np.testing.assert_array_equal(out.y, decoded.y)
    from rdac.entropy import ppm_decode
    assert set(ppm_decode(record.residual)) == {0}


def test_static_temporal_payload_smaller():
    frames = synth_sequence("static_noise", 64, 64, 4, 3)
    # At equal q the temporal signal carries (almost) nothing once the residual is known.
    config = CodecConfig(mode=Mode.TEMPORAL, q_ladder=(8,))
    enc_t = Encoder(config)
    enc_i = Encoder(dataclasses.replace(config, mode=Mode.INTRA_RESIDUAL))
    rt = [enc_t.encode_frame(f)[0] for f in frames]
    ri = [enc_i.encode_frame(f)[0] for f in frames]
    for t in (2, 3):
        assert len(rt[t].residual) < len(ri[t].residual)


@pytest.mark.parametrize("lam,expected", [(0.0, 96), (1e9, 8)])
def test_lambda_limits(texture, lam, expected):
    config = CodecConfig(gop_size=8, lam=lam)
    result = encode_sequence(texture[:8], config)
    qs = {r.q for r in result.records if r.frame_type is FrameType.ANIMATED}
    assert qs == {expected}


def test_gop_structure():
    frames = synth_sequence("static_noise", 32, 32, 128, 0)
    config = CodecConfig(gop_size=32, mode=Mode.ANIMATION_ONLY)
    result = encode_sequence(frames, config)
    intra = [i for i, r in enumerate(result.records) if r.frame_type is FrameType.INTRA]
    assert intra == [0, 32, 64, 96]


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mode", list(Mode))
def test_closed_loop(kind, mode):
    frames = synth_sequence(kind, 48, 40, 12, 1)
    result = encode_sequence(frames, CodecConfig(gop_size=5, mode=mode), embed_recon_crc=True)
    decoded = decode_sequence(result.bitstream)
    assert len(decoded) == 12
    for a, b in zip(decoded, result.reconstructions):
        np.testing.assert_array_equal(a.y, b.y)


def test_yuv420_closed_loop():
    frames = [f.to_yuv420() for f in synth_sequence("deforming_blob", 64, 48, 6, 0)]
    rng = np.random.default_rng(0)
    frames = [Frame((f.y, rng.integers(100, 150, f.planes[1].shape, dtype=np.uint8),
                     f.planes[2]), f.index) for f in frames]
    result = encode_sequence(frames, CodecConfig(gop_size=4, mode=Mode.ADAPTIVE),
                             embed_recon_crc=True)
    decoded = decode_sequence(result.bitstream)
    for a, b in zip(decoded, result.reconstructions):
        assert len(a.planes) == 3
        for pa, pb in zip(a.planes, b.planes):
            np.testing.assert_array_equal(pa, pb)


def test_adaptive_selects_minimum_cost(texture):
    config = CodecConfig(gop_size=12, mode=Mode.ADAPTIVE, lam=0.05)
    result = encode_sequence(texture[:12], config, log_candidates=True)
    by_frame = {}
    for c in result.candidates:
        by_frame.setdefault(c.frame_index, []).append(c)
    assert len(by_frame) == 11
    for cands in by_frame.values():
        assert len(cands) == 16
        chosen = [c for c in cands if c.selected]
        assert len(chosen) == 1
        assert chosen[0].cost <= min(c.cost for c in cands)
        record = result.records[chosen[0].frame_index]
        assert (record.residual_mode, record.q) == (chosen[0].residual_mode, chosen[0].q)


def test_keypoint_payload_static_is_small():
    kp = KeypointSet(np.arange(20).reshape(10, 2) * 3, np.full((10, 2), 2))
    payload = keypoint_payload(kp, previous_displacements=kp.displacements)
    assert len(payload) <= 10 + 16


def test_keypoint_payload_round_trip():
    rng = np.random.default_rng(1)
    positions = rng.integers(0, 1000, (10, 2))
    prev = None
    for _ in range(20):
        d = rng.integers(-40, 41, (10, 2))
        d[0] = rng.integers(-20000, 20000, 2)
        kp = KeypointSet(positions, d)
        first = prev is None
        payload = keypoint_payload(kp, prev, with_positions=first)
        back = parse_keypoint_payload(payload, 10, None if first else positions, prev)
        np.testing.assert_array_equal(back.positions, positions)
        np.testing.assert_array_equal(back.displacements, d)
        prev = d


def test_first_frame_carries_positions(texture):
    config = CodecConfig(gop_size=4)
    result = encode_sequence(texture[:4], config)
    from rdac.entropy import ppm_decode
    first = ppm_decode(result.records[1].keypoints)
    later = ppm_decode(result.records[2].keypoints)
    assert len(first) - len(later) == 4 * 10


def test_sigma_travels_in_container(texture):
    config = CodecConfig(gop_size=6, motion=MotionConfig(sigma=5.3))
    result = encode_sequence(texture[:6], config)
    header, _ = read_container(result.bitstream)
    assert header.config.motion.sigma == config.motion.sigma == round(5.3 * 16) / 16
    for a, b in zip(decode_sequence(result.bitstream), result.reconstructions):
        np.testing.assert_array_equal(a.y, b.y)


@pytest.fixture(scope="module")
def stream(texture):
    return encode_sequence(texture[:6], CodecConfig(gop_size=3), embed_recon_crc=True).bitstream


def test_bad_magic(stream):
    with pytest.raises(BadMagicError):
        decode_sequence(b"XXXX" + stream[4:])


def test_version_mismatch(stream):
    with pytest.raises(VersionMismatchError):
        decode_sequence(stream[:4] + bytes([99]) + stream[5:])


def test_truncation(stream):
    for cut in (3, 10, len(stream) // 2, len(stream) - 1):
        with pytest.raises(BitstreamError):
            decode_sequence(stream[:cut])
    with pytest.raises(TruncatedBitstreamError):
        decode_sequence(stream[:-1])


def test_checksum_names_frame(stream):
    header, records = read_container(stream)
    # Flip a byte inside the payload of the last frame.
    data = bytearray(stream)
    data[-12] ^= 0x55
    with pytest.raises(ChecksumError) as exc:
        decode_sequence(bytes(data))
    assert exc.value.frame_index == 5
    assert "5" in str(exc.value)


def test_config_validation():
    with pytest.raises(ValueError):
        CodecConfig(q_ref=10)
    with pytest.raises(ValueError):
        CodecConfig(lam=-1)
    with pytest.raises(ValueError):
        CodecConfig(gop_size=0)
    assert CodecConfig(mode="intra-residual").mode is Mode.INTRA_RESIDUAL
