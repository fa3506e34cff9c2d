"""Block-transform coding of signed residual planes.

A plane is edge-padded to a multiple of 8, cut into 8x8 blocks in raster
order, transformed with an orthonormal DCT-II, quantized with one uniform
step, zigzag scanned and serialized into byte tokens:

    0x00            EOB (always terminates a block)
    0x01..0x3E      run of 1..62 zero coefficients
    0x40 + v        level +v, v in 1..15
    0x60 + v        level -v, v in 1..15
    0x80 hi lo      any other level, 16-bit big-endian two's complement

Reconstruction (dequantize, inverse DCT, round half away from zero, clip to
[-255, 255], crop) is shared by encoder and decoder, so the encoder's local
copy is bit-exact with what the decoder produces.
"""

from dataclasses import dataclass

import numpy as np

from rdac import entropy

__all__ = [
    "Q_LADDER",
    "QuantConfig",
    "TokenError",
    "TokenStream",
    "CodedPlane",
    "ZIGZAG",
    "dct8x8",
    "idct8x8",
    "quantize",
    "dequantize",
    "round_half_away",
    "to_blocks",
    "from_blocks",
    "forward_plane",
    "reconstruct_plane",
    "tokenize",
    "detokenize",
    "code_plane",
    "decode_plane",
]

Q_LADDER = (8, 12, 16, 24, 32, 48, 64, 96)
BLOCK = 8
MAX_LEVEL = 32767
RESIDUAL_LIMIT = 255

EOB = 0x00
MAX_RUN = 0x3E
POS_BASE = 0x40
NEG_BASE = 0x60
ESC = 0x80


def _dct_matrix():
    k = np.arange(BLOCK)[:, None]
    n = np.arange(BLOCK)[None, :]
    m = np.cos(np.pi * (2 * n + 1) * k / (2 * BLOCK)) * np.sqrt(2.0 / BLOCK)
    m[0, :] = np.sqrt(1.0 / BLOCK)
    return m


_C = _dct_matrix()


def _zigzag_order():
    cells = [(i, j) for i in range(BLOCK) for j in range(BLOCK)]
    # Odd anti-diagonals run top-right to bottom-left, even ones the reverse.
    cells.sort(key=lambda ij: (ij[0] + ij[1], ij[0] if (ij[0] + ij[1]) % 2 else ij[1]))
    return np.array([i * BLOCK + j for i, j in cells], dtype=np.intp)


ZIGZAG = _zigzag_order()
_UNZIGZAG = np.argsort(ZIGZAG)


class TokenError(ValueError):
    """Malformed or unrepresentable token sequence."""


@dataclass(frozen=True)
class QuantConfig:
    q: int
    deadzone_factor: float = 0.0

    def __post_init__(self):
        if self.q not in Q_LADDER:
            raise ValueError(f"quantizer step {self.q} not in ladder {Q_LADDER}")
        if not 0.0 <= self.deadzone_factor < 1.0:
            raise ValueError("deadzone_factor must lie in [0, 1)")


@dataclass(frozen=True)
class TokenStream:
    tokens: bytes
    n_blocks: int
    width: int
    height: int

    @property
    def pad_x(self):
        return -self.width % BLOCK

    @property
    def pad_y(self):
        return -self.height % BLOCK


@dataclass(frozen=True)
class CodedPlane:
    stream: TokenStream
    reconstruction: np.ndarray
    bits: int


def dct8x8(block):
    """Orthonormal separable 2-D DCT-II of one block or a stack of blocks."""
    b = np.asarray(block, dtype=np.float64)
    tmp = np.einsum("ij,...jk->...ik", _C, b)
    return np.einsum("...ik,lk->...il", tmp, _C)


def idct8x8(coeffs):
    c = np.asarray(coeffs, dtype=np.float64)
    tmp = np.einsum("ji,...jk->...ik", _C, c)
    return np.einsum("...ik,kl->...il", tmp, _C)


def quantize(coeffs, qcfg):
    c = np.asarray(coeffs, dtype=np.float64)
    mag = np.floor(np.abs(c) / qcfg.q - qcfg.deadzone_factor + 0.5)
    idx = (np.sign(c) * np.maximum(mag, 0.0)).astype(np.int32)
    if idx.size and np.abs(idx).max() > MAX_LEVEL:
        raise TokenError("quantization index exceeds 16-bit level range")
    return idx


def dequantize(indices, qcfg):
    return np.asarray(indices, dtype=np.float64) * qcfg.q


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_blocks(plane):
    """Edge-pad to multiples of 8 and return (n_blocks, 8, 8) in raster order."""
    p = np.asarray(plane)
    h, w = p.shape
    p = np.pad(p, ((0, -h % BLOCK), (0, -w % BLOCK)), mode="edge")
    hb, wb = p.shape[0] // BLOCK, p.shape[1] // BLOCK
    return p.reshape(hb, BLOCK, wb, BLOCK).transpose(0, 2, 1, 3).reshape(-1, BLOCK, BLOCK)


def from_blocks(blocks, width, height):
    hb, wb = -(-height // BLOCK), -(-width // BLOCK)
    p = blocks.reshape(hb, wb, BLOCK, BLOCK).transpose(0, 2, 1, 3)
    return p.reshape(hb * BLOCK, wb * BLOCK)[:height, :width]


def forward_plane(plane):
    return dct8x8(to_blocks(np.asarray(plane, dtype=np.float64)))


def reconstruct_plane(indices, q, width, height):
    """Decoder-side reconstruction of a plane from its quantization indices."""
    coeffs = np.ascontiguousarray(indices, dtype=np.float64).reshape(-1, BLOCK, BLOCK) * q
    pixels = round_half_away(idct8x8(coeffs))
    pixels = np.clip(pixels, -RESIDUAL_LIMIT, RESIDUAL_LIMIT)
    return np.ascontiguousarray(from_blocks(pixels, width, height)).astype(np.int16)


def _emit_level(out, v):
    if 1 <= v <= 15:
        out.append(POS_BASE + v)
    elif -15 <= v <= -1:
        out.append(NEG_BASE - v)
    else:
        if not -MAX_LEVEL <= v <= MAX_LEVEL:
            raise TokenError(f"level {v} overflows the 16-bit escape")
        out.append(ESC)
        out += (v & 0xFFFF).to_bytes(2, "big")


def tokenize(indices):
    """Serialize (n_blocks, 8, 8) quantization indices into token bytes."""
    zz = np.asarray(indices).reshape(-1, BLOCK * BLOCK)[:, ZIGZAG]
    out = bytearray()
    for row in zz:
        prev = -1
        for p in np.flatnonzero(row).tolist():
            run = p - prev - 1
            while run > MAX_RUN:
                out.append(MAX_RUN)
                run -= MAX_RUN
            if run:
                out.append(run)
            _emit_level(out, int(row[p]))
            prev = p
        out.append(EOB)
    return bytes(out)


def detokenize(tokens, n_blocks, offset=0):
    """Parse ``n_blocks`` blocks starting at ``offset``.

    Returns the (n_blocks, 8, 8) index array and the offset just past the last
    consumed token.
    """
    zz = np.zeros((n_blocks, BLOCK * BLOCK), dtype=np.int32)
    pos = offset
    end = len(tokens)
    for b in range(n_blocks):
        k = 0
        while True:
            if pos >= end:
                raise TokenError(f"token stream ends inside block {b}")
            t = tokens[pos]
            pos += 1
            if t == EOB:
                break
            if t <= MAX_RUN:
                k += t
                if k >= BLOCK * BLOCK:
                    raise TokenError(f"zero run overflows block {b}")
                continue
            if POS_BASE < t <= POS_BASE + 15:
                v = t - POS_BASE
            elif NEG_BASE < t <= NEG_BASE + 15:
                v = NEG_BASE - t
            elif t == ESC:
                if pos + 2 > end:
                    raise TokenError(f"truncated escape in block {b}")
                v = int.from_bytes(tokens[pos:pos + 2], "big", signed=True)
                pos += 2
            else:
                raise TokenError(f"invalid token 0x{t:02x} in block {b}")
            if k >= BLOCK * BLOCK:
                raise TokenError(f"too many coefficients in block {b}")
            zz[b, k] = v
            k += 1
    return zz[:, _UNZIGZAG].reshape(n_blocks, BLOCK, BLOCK), pos


def n_blocks_for(width, height):
    return (-(-width // BLOCK)) * (-(-height // BLOCK))


def code_plane(plane, qcfg, max_order=entropy.DEFAULT_ORDER):
    """Code one signed plane; returns tokens, exact reconstruction and PPM bits."""
    p = np.asarray(plane)
    if p.size and np.abs(p.astype(np.int32)).max() > RESIDUAL_LIMIT:
        raise ValueError("residual samples must lie in [-255, 255]")
    h, w = p.shape
    indices = quantize(forward_plane(p), qcfg)
    tokens = tokenize(indices)
    stream = TokenStream(tokens, indices.shape[0], w, h)
    recon = reconstruct_plane(indices, qcfg.q, w, h)
    return CodedPlane(stream, recon, entropy.estimate_bits(tokens, max_order))


def decode_plane(stream, qcfg):
    indices, pos = detokenize(stream.tokens, stream.n_blocks)
    if pos != len(stream.tokens):
        raise TokenError("trailing tokens after the last block")
    return reconstruct_plane(indices, qcfg.q, stream.width, stream.height)
