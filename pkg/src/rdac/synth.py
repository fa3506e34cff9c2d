"""Deterministic synthetic test sequences (luma-only)."""

import numpy as np
from scipy import ndimage

from rdac.frames import Frame

__all__ = ["KINDS", "synth_sequence"]

KINDS = ("translating_texture", "deforming_blob", "static_noise", "zoom_pan")


def _smooth_texture(rng, height, width, sigma):
    noise = rng.standard_normal((height, width))
    tex = ndimage.gaussian_filter(noise, sigma, mode="wrap")
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return 16.0 + 223.0 * tex


def _to_u8(x):
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def _translating_texture(rng, h, w, n):
    tex = _to_u8(_smooth_texture(rng, h, w, 1.5))
    return [np.roll(tex, t, axis=1) for t in range(n)]


def _static_noise(rng, h, w, n):
    base = rng.integers(0, 256, (h, w), dtype=np.uint8)
    return [base.copy() for _ in range(n)]


def _deforming_blob(rng, h, w, n):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = 0.35 * _smooth_texture(rng, h, w, 2.0)
    for _ in range(4):
        cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        r = rng.uniform(0.08, 0.18) * min(h, w)
        base += rng.uniform(60, 140) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    base = np.clip(base, 0, 255)
    phase = rng.uniform(0, 2 * np.pi, 2)
    # Smooth non-rigid field; amplitude grows linearly to ~6 px over 128 frames.
    fx = np.sin(2 * np.pi * yy / h + phase[0]) * np.cos(np.pi * xx / w)
    fy = np.sin(2 * np.pi * xx / w + phase[1]) * np.cos(np.pi * yy / h)
    frames = []
    for t in range(n):
        amp = 0.05 * t
        coords = np.stack([yy + amp * fy, xx + amp * fx])
        frames.append(_to_u8(ndimage.map_coordinates(base, coords, order=1, mode="nearest")))
    return frames


def _zoom_pan(rng, h, w, n):
    tex = _smooth_texture(rng, 2 * h, 2 * w, 3.0)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = h - 0.5, w - 0.5
    frames = []
    for t in range(n):
        scale = 1.0 / (1.0 + 0.004 * t)
        sy = cy + (yy - h / 2) * scale + 0.25 * t
        sx = cx + (xx - w / 2) * scale + 0.5 * t
        frames.append(_to_u8(ndimage.map_coordinates(tex, np.stack([sy, sx]), order=1, mode="wrap")))
    return frames


_GENERATORS = {
    "translating_texture": _translating_texture,
    "deforming_blob": _deforming_blob,
    "static_noise": _static_noise,
    "zoom_pan": _zoom_pan,
}


def synth_sequence(kind, width, height, n_frames, seed=0):
    """Generate ``n_frames`` luma frames of the given kind.

    translating_texture: a smooth random texture moving right 1 px/frame with wrap.
    deforming_blob: blobs on a soft texture under a slowly growing smooth warp.
    static_noise: one uniform-noise picture repeated.
    zoom_pan: slow zoom-out combined with a diagonal pan over a larger texture.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown sequence kind {kind!r}; choose from {KINDS}")
    if width <= 0 or height <= 0:
        raise ValueError("sequence dimensions must be positive")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    planes = _GENERATORS[kind](rng, height, width, n_frames)
    return [Frame.luma(p, i) for i, p in enumerate(planes)]
