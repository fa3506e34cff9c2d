"""Residual animation codec: GOP structure, closed-loop residual coding, container.

Every GOP opens with an INTRA picture coded by the block transform. The other
frames are ANIMATED: the decoded GOP reference is animated towards the target
with transmitted keypoints, and the animation residual ``R_t = X_t - X^_t`` is
coded either directly (INTRA_RES) or as the difference from the previously
decoded residual (TEMPORAL). The quantizer step, and in adaptive mode the
residual mode, minimise ``J = lambda * MSE(R_t, R~_t) + bpp`` with exact PPM
bit counts. The decoder repeats every state update from the bitstream alone.
"""

import dataclasses
import enum
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from rdac import entropy
from rdac import transform as tx
from rdac.animation import KeypointSet, MotionConfig, animate, detect_keypoints, track_keypoints
from rdac.frames import Frame

__all__ = [
    "Mode",
    "FrameType",
    "ResidualMode",
    "CodecConfig",
    "CodecState",
    "FrameRecord",
    "Candidate",
    "EncodeResult",
    "BitstreamError",
    "BadMagicError",
    "VersionMismatchError",
    "ChecksumError",
    "TruncatedBitstreamError",
    "ReconstructionMismatchError",
    "encode_intra",
    "decode_intra",
    "encode_animated",
    "decode_animated",
    "keypoint_payload",
    "parse_keypoint_payload",
    "Encoder",
    "Decoder",
    "encode_sequence",
    "decode_sequence",
    "read_container",
]

MAGIC = b"RDAC"
VERSION = 1
PPM_ORDER = entropy.DEFAULT_ORDER
RESIDUAL_LIMIT = tx.RESIDUAL_LIMIT

FLAG_LUMA_ONLY = 0x01
FLAG_RECON_CRC = 0x08
FLAG_SIGMA = 0x10
SIGMA_SCALE = 16
_HEADER = struct.Struct(">4sBBHHIHBB")


class Mode(enum.Enum):
    TEMPORAL = "temporal"
    INTRA_RESIDUAL = "intra_residual"
    ANIMATION_ONLY = "animation_only"
    ADAPTIVE = "adaptive"

    @property
    def wire(self):
        return _MODE_WIRE[self]

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        return cls(str(name).replace("-", "_"))


_MODE_WIRE = {Mode.TEMPORAL: 0, Mode.INTRA_RESIDUAL: 1, Mode.ANIMATION_ONLY: 2, Mode.ADAPTIVE: 3}
_WIRE_MODE = {v: k for k, v in _MODE_WIRE.items()}


class FrameType(enum.IntEnum):
    INTRA = 0
    ANIMATED = 1


class ResidualMode(enum.IntEnum):
    TEMPORAL = 0
    INTRA_RES = 1
    NONE = 2


class BitstreamError(ValueError):
    frame_index = None


class BadMagicError(BitstreamError):
    pass


class VersionMismatchError(BitstreamError):
    pass


class TruncatedBitstreamError(BitstreamError):
    pass


class ChecksumError(BitstreamError):
    def __init__(self, frame_index, message=None):
        super().__init__(message or f"payload checksum mismatch in frame {frame_index}")
        self.frame_index = frame_index


class ReconstructionMismatchError(ChecksumError):
    def __init__(self, frame_index):
        super().__init__(frame_index, f"decoder reconstruction diverged at frame {frame_index}")


@dataclass(frozen=True)
class CodecConfig:
    gop_size: int = 32
    lam: float = 0.02
    mode: Mode = Mode.TEMPORAL
    motion: MotionConfig = MotionConfig()
    q_ref: int = 8
    q_ladder: tuple = tx.Q_LADDER

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if not 1 <= self.gop_size <= 0xFFFF:
            raise ValueError("gop_size must be in 1..65535")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be finite and non-negative")
        if self.q_ref not in tx.Q_LADDER:
            raise ValueError(f"q_ref must be one of {tx.Q_LADDER}")
        if not self.q_ladder or any(q not in tx.Q_LADDER for q in self.q_ladder):
            raise ValueError(f"q_ladder must be a non-empty subset of {tx.Q_LADDER}")
        if self.motion.keypoints > 255:
            raise ValueError("at most 255 keypoints fit the container header")
        sigma = self.motion.sigma
        if sigma is not None:
            # The container carries sigma in 1/16 pixel units.
            fixed = int(round(sigma * SIGMA_SCALE))
            if not 1 <= fixed <= 0xFFFF:
                raise ValueError("sigma must lie in [1/16, 4095] pixels")
            if fixed != sigma * SIGMA_SCALE:
                object.__setattr__(self, "motion",
                                   dataclasses.replace(self.motion, sigma=fixed / SIGMA_SCALE))


@dataclass(frozen=True)
class FrameRecord:
    frame_type: FrameType
    residual_mode: ResidualMode
    q: int
    keypoints: bytes = b""
    residual: bytes = b""

    @property
    def payload_bytes(self):
        return len(self.keypoints) + len(self.residual)


@dataclass
class CodecState:
    """Closed-loop state mirrored by encoder and decoder."""

    reference: Frame = None
    prev_residual: tuple = None
    gop_position: int = 0
    positions: np.ndarray = None
    prev_displacements: np.ndarray = None


@dataclass(frozen=True)
class Candidate:
    """One evaluated (residual mode, q) option and its Lagrangian cost."""

    frame_index: int
    residual_mode: ResidualMode
    q: int
    cost: float
    mse: float
    bits: int
    selected: bool = False


# ---------------------------------------------------------------------------
# Plane-level helpers
# ---------------------------------------------------------------------------


def _code_planes(signal_planes, q):
    """Quantize, tokenize and reconstruct a list of signed planes at step q."""
    qcfg = tx.QuantConfig(q)
    tokens = bytearray()
    recon = []
    for s in signal_planes:
        idx = tx.quantize(tx.forward_plane(s), qcfg)
        tokens += tx.tokenize(idx)
        recon.append(tx.reconstruct_plane(idx, q, s.shape[1], s.shape[0]))
    return bytes(tokens), recon


def _decode_planes(tokens, q, shapes):
    pos = 0
    recon = []
    for h, w in shapes:
        idx, pos = tx.detokenize(tokens, tx.n_blocks_for(w, h), pos)
        recon.append(tx.reconstruct_plane(idx, q, w, h))
    if pos != len(tokens):
        raise tx.TokenError("trailing residual tokens")
    return recon


def _shapes(frame):
    return [p.shape for p in frame.planes]


def _clip_residual(x):
    return np.clip(x, -RESIDUAL_LIMIT, RESIDUAL_LIMIT).astype(np.int16)


def _add_prediction(prediction, residual, index):
    planes = tuple(
        np.clip(p.astype(np.int16) + r, 0, 255).astype(np.uint8)
        for p, r in zip(prediction.planes, residual))
    return Frame(planes, index)


# ---------------------------------------------------------------------------
# INTRA frames
# ---------------------------------------------------------------------------


def encode_intra(frame, q_ref=8):
    """Code a picture on its own; returns (record, decoded frame)."""
    signal = [p.astype(np.int16) - 128 for p in frame.planes]
    tokens, recon = _code_planes(signal, q_ref)
    decoded = tuple(np.clip(r + 128, 0, 255).astype(np.uint8) for r in recon)
    record = FrameRecord(FrameType.INTRA, ResidualMode.NONE, q_ref,
                         residual=entropy.ppm_encode(tokens, PPM_ORDER))
    return record, Frame(decoded, frame.index)


def decode_intra(record, shapes, index=0):
    tokens = entropy.ppm_decode(record.residual, PPM_ORDER)
    recon = _decode_planes(tokens, record.q, shapes)
    return Frame(tuple(np.clip(r + 128, 0, 255).astype(np.uint8) for r in recon), index)


# ---------------------------------------------------------------------------
# Keypoint payload
# ---------------------------------------------------------------------------


def _fold(v):
    return 2 * v if v >= 0 else -2 * v - 1


def _unfold(z):
    return z >> 1 if z % 2 == 0 else -((z + 1) >> 1)


def keypoint_payload(keypoints, previous_displacements=None, with_positions=False):
    """Serialize and PPM-code one frame's keypoints.

    Positions (x, y as u16 BE) are sent only when ``with_positions``; the
    displacements are sent as deltas against ``previous_displacements``.
    """
    out = bytearray()
    if with_positions:
        for x, y in keypoints.positions:
            out += struct.pack(">HH", int(x), int(y))
    prev = (np.zeros_like(keypoints.displacements) if previous_displacements is None
            else np.asarray(previous_displacements))
    if prev.shape != keypoints.displacements.shape:
        raise ValueError("previous displacements do not match the keypoint count")
    for v in (keypoints.displacements - prev).ravel().tolist():
        z = _fold(v)
        if z < 0xFF:
            out.append(z)
        else:
            if z > 0xFFFF:
                raise ValueError(f"displacement delta {v} too large")
            out.append(0xFF)
            out += z.to_bytes(2, "big")
    return entropy.ppm_encode(bytes(out), PPM_ORDER)


def parse_keypoint_payload(payload, k, positions=None, previous_displacements=None):
    """Inverse of :func:`keypoint_payload`; returns a KeypointSet.

    When ``positions`` is None they are read from the payload.
    """
    raw = entropy.ppm_decode(payload, PPM_ORDER)
    pos = 0
    if positions is None:
        if len(raw) < 4 * k:
            raise BitstreamError(f"keypoint payload holds fewer than {k} positions")
        positions = np.array(struct.unpack(f">{2 * k}H", raw[:4 * k]), dtype=np.int64).reshape(k, 2)
        pos = 4 * k
    deltas = []
    while pos < len(raw):
        z = raw[pos]
        pos += 1
        if z == 0xFF:
            if pos + 2 > len(raw):
                raise BitstreamError("truncated displacement escape")
            z = int.from_bytes(raw[pos:pos + 2], "big")
            pos += 2
        deltas.append(_unfold(z))
    if len(deltas) != 2 * k:
        raise BitstreamError(f"keypoint payload carries {len(deltas)} values, expected {2 * k}")
    d = np.array(deltas, dtype=np.int64).reshape(k, 2)
    if previous_displacements is not None:
        d = d + previous_displacements
    return KeypointSet(positions, d)


# ---------------------------------------------------------------------------
# ANIMATED frames
# ---------------------------------------------------------------------------


def _select_key(c, lam):
    # Ties prefer TEMPORAL, then the finer step; a pure-rate objective
    # (lambda == 0) prefers the coarser step instead.
    return (c.cost, int(c.residual_mode), c.q if lam > 0 else -c.q)


def encode_animated(target, state, config, candidates=None):
    """Code one ANIMATED frame.

    Returns (record, new_state, decoded_frame). When ``candidates`` is a list,
    every evaluated option is appended to it.
    """
    if state.reference is None:
        raise ValueError("ANIMATED frame without a preceding INTRA frame")
    reference = state.reference
    first = state.gop_position == 1
    positions = state.positions
    if positions is None:
        positions = detect_keypoints(reference.y, config.motion).positions
    tracked = track_keypoints(reference.y, target.y, KeypointSet(positions), config.motion)
    prediction = animate(reference, tracked, config.motion)
    kp_bytes = keypoint_payload(tracked, None if first else state.prev_displacements,
                                with_positions=first)

    residual = [t.astype(np.int16) - p.astype(np.int16)
                for t, p in zip(target.planes, prediction.planes)]
    prev = state.prev_residual
    npix = target.width * target.height

    if config.mode is Mode.ANIMATION_ONLY:
        record = FrameRecord(FrameType.ANIMATED, ResidualMode.NONE, 0, kp_bytes, b"")
        new_residual = tuple(np.zeros_like(r) for r in residual)
        decoded = Frame(prediction.planes, target.index)
    else:
        signals = {}
        if config.mode in (Mode.TEMPORAL, Mode.ADAPTIVE):
            signals[ResidualMode.TEMPORAL] = [
                _clip_residual(r.astype(np.int32) - p) for r, p in zip(residual, prev)]
        if config.mode in (Mode.INTRA_RESIDUAL, Mode.ADAPTIVE):
            signals[ResidualMode.INTRA_RES] = residual
        best = None
        evaluated = []
        all_res = np.concatenate([r.ravel() for r in residual]).astype(np.float64)
        for rmode, signal in signals.items():
            for q in config.q_ladder:
                tokens, rec = _code_planes(signal, q)
                if rmode is ResidualMode.TEMPORAL:
                    rec = [_clip_residual(d.astype(np.int32) + p) for d, p in zip(rec, prev)]
                bits = entropy.estimate_bits(tokens, PPM_ORDER)
                all_rec = np.concatenate([r.ravel() for r in rec]).astype(np.float64)
                mse = float(np.mean((all_res - all_rec) ** 2))
                cand = Candidate(target.index, rmode, q, config.lam * mse + bits / npix, mse, bits)
                evaluated.append(cand)
                if best is None or _select_key(cand, config.lam) < _select_key(best[0], config.lam):
                    best = (cand, tokens, rec)
        chosen, tokens, rec = best
        if candidates is not None:
            candidates.extend(
                Candidate(c.frame_index, c.residual_mode, c.q, c.cost, c.mse, c.bits, c is chosen)
                for c in evaluated)
        record = FrameRecord(FrameType.ANIMATED, chosen.residual_mode, chosen.q, kp_bytes,
                             entropy.ppm_encode(tokens, PPM_ORDER))
        new_residual = tuple(rec)
        decoded = _add_prediction(prediction, new_residual, target.index)

    new_state = CodecState(reference, new_residual, state.gop_position + 1,
                           positions, tracked.displacements)
    return record, new_state, decoded


def decode_animated(record, state, config, index=0):
    """Mirror of :func:`encode_animated`; returns (new_state, decoded_frame)."""
    if state.reference is None:
        raise BitstreamError("ANIMATED frame without a preceding INTRA frame", )
    reference = state.reference
    k = config.motion.keypoints
    first = state.gop_position == 1
    tracked = parse_keypoint_payload(record.keypoints, k,
                                     None if first else state.positions,
                                     None if first else state.prev_displacements)
    prediction = animate(reference, tracked, config.motion)
    shapes = _shapes(reference)
    if record.residual_mode is ResidualMode.NONE:
        new_residual = tuple(np.zeros(s, dtype=np.int16) for s in shapes)
        decoded = Frame(prediction.planes, index)
    else:
        tokens = entropy.ppm_decode(record.residual, PPM_ORDER)
        rec = _decode_planes(tokens, record.q, shapes)
        if record.residual_mode is ResidualMode.TEMPORAL:
            rec = [_clip_residual(d.astype(np.int32) + p) for d, p in zip(rec, state.prev_residual)]
        new_residual = tuple(rec)
        decoded = _add_prediction(prediction, new_residual, index)
    new_state = CodecState(reference, new_residual, state.gop_position + 1,
                           tracked.positions, tracked.displacements)
    return new_state, decoded


def _intra_state(decoded, config, detect=True):
    positions = detect_keypoints(decoded.y, config.motion).positions if detect else None
    zero = tuple(np.zeros(p.shape, dtype=np.int16) for p in decoded.planes)
    return CodecState(decoded, zero, 1, positions, None)


# ---------------------------------------------------------------------------
# Sequence encoder / decoder
# ---------------------------------------------------------------------------


class Encoder:
    """Stateful per-sequence encoder; feed frames in display order."""

    def __init__(self, config, log_candidates=False):
        self.config = config
        self.state = CodecState()
        self.count = 0
        self.candidates = [] if log_candidates else None

    def encode_frame(self, frame):
        frame = Frame(frame.planes, self.count)
        if self.count % self.config.gop_size == 0:
            record, decoded = encode_intra(frame, self.config.q_ref)
            self.state = _intra_state(decoded, self.config)
        else:
            record, self.state, decoded = encode_animated(frame, self.state, self.config,
                                                          self.candidates)
        self.count += 1
        return record, decoded


class Decoder:
    def __init__(self, config, shapes):
        self.config = config
        self.shapes = shapes
        self.state = CodecState()
        self.count = 0

    def decode_frame(self, record):
        i = self.count
        if record.frame_type is FrameType.INTRA:
            if i % self.config.gop_size:
                raise BitstreamError(f"unexpected INTRA record at frame {i}")
            decoded = decode_intra(record, self.shapes, i)
            self.state = _intra_state(decoded, self.config, detect=False)
        else:
            if i % self.config.gop_size == 0:
                raise BitstreamError(f"frame {i} must be INTRA")
            self.state, decoded = decode_animated(record, self.state, self.config, i)
        self.count += 1
        return decoded


@dataclass
class EncodeResult:
    bitstream: bytes
    reconstructions: list
    records: list
    candidates: list = field(default_factory=list)


def _frame_crc(frame):
    crc = 0
    for p in frame.planes:
        crc = zlib.crc32(np.ascontiguousarray(p).tobytes(), crc)
    return crc


def _write_header(out, config, width, height, n_frames, luma_only, recon_crc):
    flags = (FLAG_LUMA_ONLY if luma_only else 0) | (config.mode.wire << 1)
    if recon_crc:
        flags |= FLAG_RECON_CRC
    if config.motion.sigma is not None:
        flags |= FLAG_SIGMA
    out += _HEADER.pack(MAGIC, VERSION, flags, width, height, n_frames, config.gop_size,
                        config.motion.keypoints, config.q_ref)
    if config.motion.sigma is not None:
        out += struct.pack(">H", int(round(config.motion.sigma * SIGMA_SCALE)))


def _write_record(out, record, recon_crc=None):
    out += struct.pack(">BBB", int(record.frame_type), int(record.residual_mode), record.q)
    sections = [record.residual] if record.frame_type is FrameType.INTRA else [
        record.keypoints, record.residual]
    crc = 0
    for s in sections:
        out += struct.pack(">I", len(s))
        out += s
        crc = zlib.crc32(s, crc)
    out += struct.pack(">I", crc)
    if recon_crc is not None:
        out += struct.pack(">I", recon_crc)


def encode_sequence(frames, config=CodecConfig(), embed_recon_crc=False, log_candidates=False):
    """Encode a homogeneous frame list into an RDAC container."""
    if not frames:
        raise ValueError("need at least one frame")
    w, h, n_planes = frames[0].width, frames[0].height, len(frames[0].planes)
    for f in frames:
        if (f.width, f.height, len(f.planes)) != (w, h, n_planes):
            raise ValueError(f"frame {f.index} differs in geometry from frame 0")
    if w > 0xFFFF or h > 0xFFFF:
        raise ValueError("frame dimensions exceed 16 bits")
    enc = Encoder(config, log_candidates)
    out = bytearray()
    _write_header(out, config, w, h, len(frames), n_planes == 1, embed_recon_crc)
    recons, records = [], []
    for f in frames:
        record, decoded = enc.encode_frame(f)
        _write_record(out, record, _frame_crc(decoded) if embed_recon_crc else None)
        recons.append(decoded)
        records.append(record)
    return EncodeResult(bytes(out), recons, records, enc.candidates or [])


@dataclass(frozen=True)
class ContainerHeader:
    config: CodecConfig
    width: int
    height: int
    frame_count: int
    luma_only: bool
    recon_crc: bool

    @property
    def shapes(self):
        shapes = [(self.height, self.width)]
        if not self.luma_only:
            shapes += [((self.height + 1) // 2, (self.width + 1) // 2)] * 2
        return shapes


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what, frame=None):
        if self.pos + n > len(self.data):
            err = TruncatedBitstreamError(
                f"bitstream truncated while reading {what}"
                + (f" of frame {frame}" if frame is not None else ""))
            err.frame_index = frame
            raise err
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def read_container(data):
    """Parse the container into (header, [(record, payload_crc_ok, recon_crc)])."""
    data = bytes(data)
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not an RDAC bitstream")
    (_, version, flags, w, h, n, gop, k, q_ref) = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported bitstream version {version}")
    mode = _WIRE_MODE[(flags >> 1) & 0x3]
    sigma = None
    if flags & FLAG_SIGMA:
        (fixed,) = struct.unpack(">H", r.take(2, "sigma"))
        sigma = fixed / SIGMA_SCALE
    try:
        config = CodecConfig(gop, 0.0, mode, MotionConfig(keypoints=k, sigma=sigma), q_ref)
    except ValueError as exc:
        raise BitstreamError(f"invalid header: {exc}") from None
    header = ContainerHeader(config, w, h, n, bool(flags & FLAG_LUMA_ONLY),
                             bool(flags & FLAG_RECON_CRC))
    entries = []
    for i in range(n):
        ftype, rmode, q = r.take(3, "record header", i)
        try:
            ftype, rmode = FrameType(ftype), ResidualMode(rmode)
        except ValueError:
            raise ChecksumError(i, f"invalid record type in frame {i}") from None
        sections = []
        for _ in range(1 if ftype is FrameType.INTRA else 2):
            (length,) = struct.unpack(">I", r.take(4, "section length", i))
            sections.append(r.take(length, "section payload", i))
        (crc,) = struct.unpack(">I", r.take(4, "checksum", i))
        actual = 0
        for s in sections:
            actual = zlib.crc32(s, actual)
        if actual != crc:
            raise ChecksumError(i)
        recon_crc = None
        if header.recon_crc:
            (recon_crc,) = struct.unpack(">I", r.take(4, "reconstruction checksum", i))
        if ftype is FrameType.INTRA:
            record = FrameRecord(ftype, rmode, q, b"", sections[0])
        else:
            record = FrameRecord(ftype, rmode, q, sections[0], sections[1])
        entries.append((record, recon_crc))
    if r.pos != len(data):
        raise BitstreamError(f"{len(data) - r.pos} trailing bytes after the last frame")
    return header, entries


def decode_sequence(bitstream):
    """Decode a container; returns the list of reconstructed frames."""
    header, entries = read_container(bitstream)
    dec = Decoder(header.config, header.shapes)
    frames = []
    for i, (record, recon_crc) in enumerate(entries):
        try:
            decoded = dec.decode_frame(record)
        except (entropy.EntropyError, tx.TokenError, ValueError) as exc:
            if isinstance(exc, BitstreamError) and exc.frame_index is not None:
                raise
            err = BitstreamError(f"frame {i}: {exc}")
            err.frame_index = i
            raise err from exc
        if recon_crc is not None and _frame_crc(decoded) != recon_crc:
            raise ReconstructionMismatchError(i)
        frames.append(decoded)
    return frames
