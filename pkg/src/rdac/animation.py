"""Keypoint-driven animation of a reference picture.

Classical stand-ins for a learned keypoint detector and motion network:
corners of the minimum-eigenvalue structure-tensor response are picked on the
decoded reference, tracked into the target by exhaustive SAD block matching,
spread into a dense field by Gaussian kernel regression and applied with
backward bilinear warping.

Displacements point from reference to target. Warping samples the reference
at ``p - u(p)``, i.e. with the negated interpolated displacement as the
backward field.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from rdac.frames import Frame

__all__ = [
    "MotionConfig",
    "KeypointSet",
    "MotionField",
    "corner_response",
    "detect_keypoints",
    "track_keypoints",
    "dense_motion",
    "sample_bilinear",
    "warp",
    "animate",
    "predict_frame",
]

WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class MotionConfig:
    keypoints: int = 10
    sigma: float = None  # None -> max(width, height) / 8
    block: int = 16
    search_radius: int = 16

    def __post_init__(self):
        if self.keypoints < 1:
            raise ValueError("need at least one keypoint")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.block < 8 or self.block % 2:
            raise ValueError("block must be even and >= 8")
        if self.search_radius < 1:
            raise ValueError("search_radius must be >= 1")

    def sigma_for(self, width, height):
        return self.sigma if self.sigma is not None else max(width, height) / 8.0


@dataclass(frozen=True)
class KeypointSet:
    """K reference positions (x, y) and optional integer displacements (dx, dy)."""

    positions: np.ndarray
    displacements: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64).reshape(-1, 2)
        if len(pos) == 0:
            raise ValueError("a keypoint set cannot be empty")
        object.__setattr__(self, "positions", pos)
        if self.displacements is not None:
            d = np.asarray(self.displacements, dtype=np.int64).reshape(-1, 2)
            if d.shape != pos.shape:
                raise ValueError("one displacement per keypoint required")
            object.__setattr__(self, "displacements", d)

    def __len__(self):
        return len(self.positions)

    def with_displacements(self, displacements):
        return KeypointSet(self.positions, displacements)


@dataclass(frozen=True)
class MotionField:
    ux: np.ndarray
    uy: np.ndarray

    def scaled(self, factor, step=1):
        return MotionField(self.ux[::step, ::step] * factor, self.uy[::step, ::step] * factor)


def corner_response(plane):
    """Minimum eigenvalue of the 3x3-summed Sobel structure tensor."""
    p = np.asarray(plane, dtype=np.float64)
    gx = ndimage.sobel(p, axis=1, mode="nearest")
    gy = ndimage.sobel(p, axis=0, mode="nearest")
    # Window sums of integer products stay exact in float64.
    sxx = ndimage.uniform_filter(gx * gx, 3, mode="nearest") * 9.0
    syy = ndimage.uniform_filter(gy * gy, 3, mode="nearest") * 9.0
    sxy = ndimage.uniform_filter(gx * gy, 3, mode="nearest") * 9.0
    sxx, syy, sxy = np.round(sxx), np.round(syy), np.round(sxy)
    half_tr = 0.5 * (sxx + syy)
    return half_tr - np.sqrt((0.5 * (sxx - syy)) ** 2 + sxy * sxy)


def _grid_positions(k, width, height):
    g = int(np.ceil(np.sqrt(k)))
    xs = ((np.arange(g) + 0.5) * width / g).astype(np.int64)
    ys = ((np.arange(g) + 0.5) * height / g).astype(np.int64)
    return [(int(x), int(y)) for y in ys for x in xs]


def detect_keypoints(reference, config=MotionConfig()):
    """Top-K corner maxima; grid fill when fewer than K positive maxima exist.

    Accepted corners keep a Chebyshev distance of at least ``block // 2``.
    """
    p = np.asarray(reference)
    h, w = p.shape
    if h < 2 * config.block or w < 2 * config.block:
        raise ValueError(f"plane {w}x{h} smaller than twice the {config.block}-pixel block")
    r = corner_response(p)
    peaks = (r > 0) & (r >= ndimage.maximum_filter(r, size=3, mode="constant", cval=-np.inf))
    ys, xs = np.nonzero(peaks)
    order = np.lexsort((xs, ys, -r[ys, xs]))
    spacing = config.block // 2
    chosen = []
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        if all(max(abs(x - cx), abs(y - cy)) >= spacing for cx, cy in chosen):
            chosen.append((x, y))
            if len(chosen) == config.keypoints:
                break
    for pos in _grid_positions(config.keypoints, w, h):
        if len(chosen) == config.keypoints:
            break
        if pos not in chosen:
            chosen.append(pos)
    return KeypointSet(np.array(chosen, dtype=np.int64))


def _patch_origin(c, block, size):
    return min(max(c - block // 2, 0), size - block)


def track_keypoints(reference, target, keypoints, config=MotionConfig()):
    """Integer displacement per keypoint by exhaustive SAD block matching."""
    ref = np.asarray(reference, dtype=np.int32)
    tgt = np.asarray(target, dtype=np.int32)
    if ref.shape != tgt.shape:
        raise ValueError("reference and target shapes differ")
    h, w = ref.shape
    b, rad = config.block, config.search_radius
    padded = np.pad(tgt, rad, mode="edge")
    span = np.arange(-rad, rad + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    dy, dx = dy.ravel(), dx.ravel()
    norm = dy * dy + dx * dx
    out = np.zeros((len(keypoints), 2), dtype=np.int64)
    for k, (x, y) in enumerate(keypoints.positions):
        x0, y0 = _patch_origin(int(x), b, w), _patch_origin(int(y), b, h)
        patch = ref[y0:y0 + b, x0:x0 + b]
        region = padded[y0:y0 + b + 2 * rad, x0:x0 + b + 2 * rad]
        sad = np.abs(sliding_window_view(region, (b, b)) - patch).sum(axis=(2, 3)).ravel()
        best = np.lexsort((dx, dy, norm, sad))[0]
        out[k] = dx[best], dy[best]
    return keypoints.with_displacements(out)


def dense_motion(keypoints, width, height, sigma):
    """Gaussian kernel regression of keypoint displacements onto every pixel."""
    if keypoints is None or len(keypoints) == 0:
        raise ValueError("dense motion needs at least one keypoint")
    pos = keypoints.positions.astype(np.float64)
    d = keypoints.displacements.astype(np.float64)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dist2 = (xx[None] - pos[:, 0, None, None]) ** 2 + (yy[None] - pos[:, 1, None, None]) ** 2
    wts = np.exp(-dist2 / (2.0 * sigma * sigma))
    total = wts.sum(axis=0)
    ok = total >= WEIGHT_FLOOR
    safe = np.where(ok, total, 1.0)
    ux = np.einsum("khw,k->hw", wts, d[:, 0]) / safe
    uy = np.einsum("khw,k->hw", wts, d[:, 1]) / safe
    if not ok.all():
        nearest = np.argmin(dist2, axis=0)
        ux = np.where(ok, ux, d[nearest, 0])
        uy = np.where(ok, uy, d[nearest, 1])
    return MotionField(ux, uy)


def sample_bilinear(plane, sx, sy):
    """Bilinear samples of ``plane`` at real coordinates, clamped to its bounds."""
    p = np.asarray(plane, dtype=np.float64)
    h, w = p.shape
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx, fy = sx - x0, sy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = (1.0 - fx) * p[y0, x0] + fx * p[y0, x1]
    bottom = (1.0 - fx) * p[y1, x0] + fx * p[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def warp(reference, field):
    """Backward warp: out(p) = reference(p + u(p)), rounded to 8 bits."""
    h, w = np.asarray(reference).shape
    if field.ux.shape != (h, w) or field.uy.shape != (h, w):
        raise ValueError("motion field does not match plane geometry")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    v = sample_bilinear(reference, xx + field.ux, yy + field.uy)
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def animate(reference, keypoints, config=MotionConfig()):
    """Decoder-side prediction from the decoded reference and transmitted keypoints."""
    w, h = reference.width, reference.height
    field = dense_motion(keypoints, w, h, config.sigma_for(w, h))
    backward = MotionField(-field.ux, -field.uy)
    planes = [warp(reference.y, backward)]
    for c in reference.planes[1:]:
        chroma_field = backward.scaled(0.5, step=2)
        planes.append(warp(c, chroma_field))
    return Frame(tuple(planes), reference.index)


def predict_frame(reference_decoded, target, config=MotionConfig(), keypoints=None):
    """Animate the decoded reference towards ``target``.

    ``keypoints`` holds detected positions to reuse (per-GOP cache); when
    omitted they are detected on the reference. Only tracking reads the target.
    """
    if (reference_decoded.width, reference_decoded.height) != (target.width, target.height):
        raise ValueError("reference and target dimensions differ")
    if keypoints is None:
        keypoints = detect_keypoints(reference_decoded.y, config)
    tracked = track_keypoints(reference_decoded.y, target.y, keypoints, config)
    return animate(reference_decoded, tracked, config), tracked
