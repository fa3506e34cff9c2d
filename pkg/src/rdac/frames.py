"""Frame containers and raw video I/O (YUV4MPEG2 4:2:0, binary PGM)."""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "MIN_DIM",
    "Frame",
    "SequenceInfo",
    "Y4MError",
    "BadMagicError",
    "UnsupportedColorspaceError",
    "TruncatedFrameError",
    "DimensionMismatchError",
    "chroma_shape",
    "read_y4m",
    "write_y4m",
    "load_y4m",
    "save_y4m",
    "write_pgm",
]

MIN_DIM = 16
Y4M_MAGIC = b"YUV4MPEG2"
FRAME_MAGIC = b"FRAME"
_420_TAGS = {"420", "420jpeg", "420paldv", "420mpeg2"}


class Y4MError(ValueError):
    code = "y4m"


class BadMagicError(Y4MError):
    code = "bad-magic"


class UnsupportedColorspaceError(Y4MError):
    code = "unsupported-colorspace"


class TruncatedFrameError(Y4MError):
    code = "truncated-frame"

    def __init__(self, index, message):
        super().__init__(message)
        self.frame_index = index


class DimensionMismatchError(ValueError):
    code = "dimension-mismatch"


def chroma_shape(width, height):
    return (height + 1) // 2, (width + 1) // 2


@dataclass(frozen=True)
class Frame:
    """One picture: a luma plane, optionally followed by two 4:2:0 chroma planes.

    Planes are 2-D ``uint8`` arrays, shape (height, width).
    """

    planes: tuple
    index: int = 0

    def __post_init__(self):
        planes = tuple(np.asarray(p) for p in self.planes)
        if len(planes) not in (1, 3):
            raise ValueError("a frame holds 1 (luma) or 3 (YUV 4:2:0) planes")
        h, w = planes[0].shape
        if w < MIN_DIM or h < MIN_DIM:
            raise ValueError(f"frame {w}x{h} is smaller than {MIN_DIM}x{MIN_DIM}")
        if len(planes) == 3 and any(p.shape != chroma_shape(w, h) for p in planes[1:]):
            raise DimensionMismatchError("chroma planes must be half resolution")
        if self.index < 0:
            raise ValueError("frame index must be non-negative")
        object.__setattr__(self, "planes", planes)

    @classmethod
    def luma(cls, plane, index=0):
        return cls((np.asarray(plane, dtype=np.uint8),), index)

    @property
    def y(self):
        return self.planes[0]

    @property
    def width(self):
        return self.planes[0].shape[1]

    @property
    def height(self):
        return self.planes[0].shape[0]

    @property
    def luma_only(self):
        return len(self.planes) == 1

    def to_yuv420(self):
        """Return a 3-plane frame, filling absent chroma with mid-gray."""
        if not self.luma_only:
            return self
        c = np.full(chroma_shape(self.width, self.height), 128, dtype=np.uint8)
        return Frame((self.y, c, c.copy()), self.index)

    def to_luma(self):
        return self if self.luma_only else Frame((self.y,), self.index)


@dataclass(frozen=True)
class SequenceInfo:
    width: int
    height: int
    frame_rate: Fraction = Fraction(30, 1)
    frame_count: int = 0
    extra: dict = field(default_factory=dict, compare=False)


def _parse_header(line):
    tokens = line.split(b" ")
    if tokens[0] != Y4M_MAGIC:
        raise BadMagicError("stream does not start with YUV4MPEG2")
    width = height = None
    rate = Fraction(30, 1)
    extra = {}
    for tok in tokens[1:]:
        if not tok:
            continue
        tag, val = chr(tok[0]), tok[1:].decode("ascii")
        if tag == "W":
            width = int(val)
        elif tag == "H":
            height = int(val)
        elif tag == "F":
            num, den = val.split(":")
            rate = Fraction(int(num), int(den))
        elif tag == "C":
            if val not in _420_TAGS:
                raise UnsupportedColorspaceError(f"unsupported colorspace C{val}")
            extra["C"] = val
        else:
            extra[tag] = val
    if width is None or height is None:
        raise Y4MError("header lacks W or H")
    if width <= 0 or height <= 0:
        raise Y4MError("zero frame dimensions")
    return width, height, rate, extra


def read_y4m(stream):
    """Read a 4:2:0 8-bit Y4M stream; returns (frames, SequenceInfo)."""
    header = stream.readline()
    if not header.endswith(b"\n"):
        if not header.startswith(Y4M_MAGIC):
            raise BadMagicError("stream does not start with YUV4MPEG2")
        raise Y4MError("header line is not terminated")
    width, height, rate, extra = _parse_header(header.rstrip(b"\n"))
    ch, cw = chroma_shape(width, height)
    luma_n, chroma_n = width * height, cw * ch
    frame_n = luma_n + 2 * chroma_n
    frames = []
    while True:
        line = stream.readline()
        if not line:
            break
        if not line.startswith(FRAME_MAGIC):
            raise BadMagicError(f"frame {len(frames)} lacks FRAME marker")
        if not line.endswith(b"\n"):
            raise TruncatedFrameError(len(frames), f"frame {len(frames)} header is truncated")
        payload = stream.read(frame_n)
        if len(payload) != frame_n:
            raise TruncatedFrameError(
                len(frames),
                f"frame {len(frames)} truncated: {len(payload)} of {frame_n} bytes")
        buf = np.frombuffer(payload, dtype=np.uint8)
        y = buf[:luma_n].reshape(height, width)
        u = buf[luma_n:luma_n + chroma_n].reshape(ch, cw)
        v = buf[luma_n + chroma_n:].reshape(ch, cw)
        frames.append(Frame((y.copy(), u.copy(), v.copy()), len(frames)))
    return frames, SequenceInfo(width, height, rate, len(frames), extra)


def write_y4m(frames, info, stream):
    """Write frames as 4:2:0 Y4M; luma-only frames get mid-gray chroma.

    Returns the number of bytes written.
    """
    rate = Fraction(info.frame_rate)
    header = (f"YUV4MPEG2 W{info.width} H{info.height} "
              f"F{rate.numerator}:{rate.denominator} Ip A1:1 C420jpeg\n").encode("ascii")
    for f in frames:
        if (f.width, f.height) != (info.width, info.height):
            raise DimensionMismatchError(
                f"frame {f.index} is {f.width}x{f.height}, expected {info.width}x{info.height}")
    written = stream.write(header)
    for f in frames:
        written += stream.write(FRAME_MAGIC + b"\n")
        for p in f.to_yuv420().planes:
            written += stream.write(np.ascontiguousarray(p, dtype=np.uint8).tobytes())
    return written


def load_y4m(path):
    with open(path, "rb") as fh:
        return read_y4m(fh)


def save_y4m(path, frames, info):
    with open(path, "wb") as fh:
        return write_y4m(frames, info, fh)


def write_pgm(plane, stream):
    """Dump one 8-bit plane as binary PGM (P5)."""
    p = np.asarray(plane)
    if p.dtype != np.uint8:
        p = np.clip(p, 0, 255).astype(np.uint8)
    h, w = p.shape
    return stream.write(f"P5\n{w} {h}\n255\n".encode("ascii") + p.tobytes())
