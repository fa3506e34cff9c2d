"""Lossless entropy layer: PPM context model driving a byte-wise range coder.

Payload format: 4-byte big-endian decoded length followed by the range-coder
bytes. Model: PPM with escape method C, no exclusions, contexts of order
``max_order`` down to 0 and a uniform order -1 fallback over 256 symbols.
Counts increment by 1; a context whose symbol total exceeds 2**14 has all
counts halved.

The coder is the carry-propagating 32-bit range coder popularised by LZMA
(64-bit ``low``, cache byte + pending 0xFF run). The leading byte it always
emits is zero and is not stored.

The hot loops are compiled with numba; model and coder state live in flat
arrays so encoder and decoder share every helper.
"""

import numpy as np
from numba import njit

__all__ = [
    "EntropyError",
    "TruncatedStreamError",
    "LengthMismatchError",
    "DEFAULT_ORDER",
    "MAX_ORDER",
    "RESCALE_LIMIT",
    "ppm_encode",
    "ppm_decode",
    "estimate_bits",
]

DEFAULT_ORDER = 3
MAX_ORDER = 4
RESCALE_LIMIT = 1 << 14
HEADER_BYTES = 4

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
# Per input symbol the model codes at most one escape per order plus the
# order -1 symbol; each coding step costs < 17 bits.
_MAX_BYTES_PER_SYMBOL = 3

# Decoder status codes returned by the compiled kernel.
_OK = 0
_TRUNCATED = 1


class EntropyError(ValueError):
    """Base class for malformed entropy payloads."""


class TruncatedStreamError(EntropyError):
    pass


class LengthMismatchError(EntropyError):
    pass


# ---------------------------------------------------------------------------
# PPM model storage
#
# Contexts are keyed by (order << 32) | packed previous bytes and found via an
# open-addressing table. Each context owns a singly linked list of
# (symbol, count) nodes; new symbols are pushed at the head.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _hash(key, mask):
    x = np.uint64(key)
    x ^= x >> np.uint64(33)
    x *= np.uint64(0xFF51AFD7ED558CCD)
    x ^= x >> np.uint64(33)
    return np.int64(x & np.uint64(mask))


@njit(cache=True)
def _find_context(keys, ctx_count, key, create):
    mask = keys.shape[0] - 1
    slot = _hash(key, mask)
    while True:
        k = keys[slot, 0]
        if k == key:
            return keys[slot, 1]
        if k == -1:
            if not create:
                return -1
            idx = ctx_count[0]
            ctx_count[0] += 1
            keys[slot, 0] = key
            keys[slot, 1] = idx
            return idx
        slot = (slot + 1) & mask


@njit(cache=True)
def _alloc_model(n_symbols, max_order):
    n_ctx = n_symbols * (max_order + 1) + 2
    size = 1
    while size < 2 * n_ctx:
        size <<= 1
    keys = np.full((size, 2), -1, dtype=np.int64)
    # head, symbol total, distinct symbols
    ctx = np.zeros((n_ctx, 3), dtype=np.int32)
    ctx[:, 0] = -1
    # symbol, count, next
    nodes = np.zeros((n_symbols * (max_order + 1) + 257, 3), dtype=np.int32)
    counters = np.zeros(2, dtype=np.int64)  # contexts used, nodes used
    return keys, ctx, nodes, counters


@njit(cache=True)
def _context_key(order, history):
    if order == 0:
        return np.int64(0)
    return (np.int64(order) << 32) | (history & ((np.int64(1) << (8 * order)) - 1))


@njit(cache=True)
def _update_model(keys, ctx, nodes, counters, history, top_order, symbol):
    for order in range(top_order + 1):
        key = _context_key(order, history)
        c = _find_context(keys, counters[0:1], key, True)
        node = ctx[c, 0]
        while node != -1 and nodes[node, 0] != symbol:
            node = nodes[node, 2]
        if node == -1:
            node = counters[1]
            counters[1] += 1
            nodes[node, 0] = symbol
            nodes[node, 1] = 1
            nodes[node, 2] = ctx[c, 0]
            ctx[c, 0] = node
            ctx[c, 2] += 1
        else:
            nodes[node, 1] += 1
        ctx[c, 1] += 1
        if ctx[c, 1] > 16384:
            total = 0
            node = ctx[c, 0]
            while node != -1:
                nodes[node, 1] = (nodes[node, 1] + 1) >> 1
                total += nodes[node, 1]
                node = nodes[node, 2]
            ctx[c, 1] = total


# ---------------------------------------------------------------------------
# Range coder. Encoder state: [low, range, cache, cache_size, out_pos].
# Decoder state: [code, range, in_pos, r, overread].
# ---------------------------------------------------------------------------


@njit(cache=True)
def _shift_low(st, out):
    low = st[0]
    if (low & 0xFFFFFFFF) < 0xFF000000 or (low >> 32) != 0:
        carry = low >> 32
        temp = st[2]
        while True:
            out[st[4]] = (temp + carry) & 0xFF
            st[4] += 1
            temp = 0xFF
            st[3] -= 1
            if st[3] == 0:
                break
        st[2] = (low >> 24) & 0xFF
    st[3] += 1
    st[0] = (low & 0x00FFFFFF) << 8


@njit(cache=True)
def _rc_encode(st, out, start, size, total):
    r = st[1] // total
    st[0] += r * start
    st[1] = r * size
    while st[1] < 16777216:
        st[1] <<= 8
        _shift_low(st, out)


@njit(cache=True)
def _next_byte(st, data):
    pos = st[2]
    st[2] += 1
    if pos < data.shape[0]:
        return np.int64(data[pos])
    st[4] += 1
    return np.int64(0)


@njit(cache=True)
def _rc_decode_freq(st, total):
    r = st[1] // total
    st[3] = r
    v = st[0] // r
    if v >= total:
        v = total - 1
    return v


@njit(cache=True)
def _rc_decode_update(st, data, start, size):
    r = st[3]
    st[0] -= r * start
    st[1] = r * size
    while st[1] < 16777216:
        st[0] = ((st[0] << 8) | _next_byte(st, data)) & 0xFFFFFFFF
        st[1] <<= 8


@njit(cache=True)
def _encode_kernel(data, max_order):
    n = data.shape[0]
    keys, ctx, nodes, counters = _alloc_model(n, max_order)
    out = np.zeros(n * (max_order + 2) * 3 + 16, dtype=np.uint8)
    st = np.zeros(5, dtype=np.int64)
    st[1] = 0xFFFFFFFF
    st[3] = 1
    history = np.int64(0)
    for i in range(n):
        s = np.int32(data[i])
        top = min(max_order, i)
        coded = False
        for order in range(top, -1, -1):
            c = _find_context(keys, counters[0:1], _context_key(order, history), False)
            if c < 0 or ctx[c, 1] == 0:
                continue
            total = np.int64(ctx[c, 1])
            escape = np.int64(ctx[c, 2])
            cum = np.int64(0)
            node = ctx[c, 0]
            while node != -1:
                if nodes[node, 0] == s:
                    break
                cum += nodes[node, 1]
                node = nodes[node, 2]
            if node != -1:
                _rc_encode(st, out, cum, np.int64(nodes[node, 1]), total + escape)
                coded = True
                break
            _rc_encode(st, out, total, escape, total + escape)
        if not coded:
            _rc_encode(st, out, np.int64(s), np.int64(1), np.int64(256))
        _update_model(keys, ctx, nodes, counters, history, top, s)
        history = ((history << 8) | s) & 0xFFFFFFFF
    for _ in range(5):
        _shift_low(st, out)
    # The first emitted byte is always zero.
    return out[1:st[4]].copy()


@njit(cache=True)
def _decode_kernel(data, n, max_order):
    keys, ctx, nodes, counters = _alloc_model(n, max_order)
    out = np.zeros(n, dtype=np.uint8)
    st = np.zeros(5, dtype=np.int64)
    st[1] = 0xFFFFFFFF
    for _ in range(4):
        st[0] = (st[0] << 8) | _next_byte(st, data)
    history = np.int64(0)
    for i in range(n):
        top = min(max_order, i)
        s = np.int32(-1)
        for order in range(top, -1, -1):
            c = _find_context(keys, counters[0:1], _context_key(order, history), False)
            if c < 0 or ctx[c, 1] == 0:
                continue
            total = np.int64(ctx[c, 1])
            escape = np.int64(ctx[c, 2])
            target = _rc_decode_freq(st, total + escape)
            if target >= total:
                _rc_decode_update(st, data, total, escape)
                continue
            cum = np.int64(0)
            node = ctx[c, 0]
            while True:
                cnt = np.int64(nodes[node, 1])
                if target < cum + cnt:
                    break
                cum += cnt
                node = nodes[node, 2]
            _rc_decode_update(st, data, cum, cnt)
            s = nodes[node, 0]
            break
        if s < 0:
            s = np.int32(_rc_decode_freq(st, np.int64(256)))
            _rc_decode_update(st, data, np.int64(s), np.int64(1))
        out[i] = s
        _update_model(keys, ctx, nodes, counters, history, top, s)
        history = ((history << 8) | s) & 0xFFFFFFFF
        if st[4] > 0:
            return out, _TRUNCATED, st[2]
    return out, _OK, st[2]


def _check_order(max_order):
    if not 0 <= max_order <= MAX_ORDER:
        raise ValueError(f"PPM order must be in 0..{MAX_ORDER}, got {max_order}")


def ppm_encode(data, max_order=DEFAULT_ORDER):
    """Compress ``data`` into a self-contained payload."""
    _check_order(max_order)
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    if buf.size >= 1 << 32:
        raise ValueError("input too long for a 32-bit length header")
    header = buf.size.to_bytes(HEADER_BYTES, "big")
    if buf.size == 0:
        return header
    return header + _encode_kernel(buf, max_order).tobytes()


def ppm_decode(payload, max_order=DEFAULT_ORDER):
    """Inverse of :func:`ppm_encode` (``max_order`` must match)."""
    _check_order(max_order)
    payload = bytes(payload)
    if len(payload) < HEADER_BYTES:
        raise TruncatedStreamError("payload shorter than its 4-byte length header")
    n = int.from_bytes(payload[:HEADER_BYTES], "big")
    body = np.frombuffer(payload, dtype=np.uint8, offset=HEADER_BYTES)
    if n == 0:
        if body.size:
            raise LengthMismatchError("empty payload carries trailing bytes")
        return b""
    # Rescaling caps any symbol probability, so each coded bit carries a
    # bounded number of symbols; anything beyond that is a corrupt header.
    if n > (body.size + 1) * 8 * 2 * RESCALE_LIMIT:
        raise LengthMismatchError(
            f"declared length {n} overruns what {body.size} coded bytes can hold")
    out, status, consumed = _decode_kernel(body, n, max_order)
    if status == _TRUNCATED:
        raise TruncatedStreamError(
            f"range-coder stream ended after {body.size} bytes, "
            f"before all {n} declared symbols were decoded")
    if consumed != body.size:
        raise LengthMismatchError(
            f"decoded {n} symbols using {consumed} of {body.size} coded bytes")
    return out.tobytes()


def estimate_bits(data, max_order=DEFAULT_ORDER):
    """Exact coded payload size in bits, excluding the 32-bit length header."""
    _check_order(max_order)
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    if buf.size == 0:
        return 0
    return 8 * _encode_kernel(buf, max_order).size
