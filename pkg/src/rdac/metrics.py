"""Full-reference quality metrics: PSNR, SSIM and MS-SSIM.

All metrics are computed on single planes (luma in every report this package
writes). SSIM uses uniform 8x8 windows at stride 1 with population
statistics; MS-SSIM uses five dyadic scales built by 2x2 mean pooling.
"""

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "PSNR_LOSSLESS",
    "SSIM_WINDOW",
    "MS_SSIM_WEIGHTS",
    "MetricError",
    "QualityReport",
    "mse",
    "psnr",
    "ssim",
    "ms_ssim",
    "metric_fn",
    "quality_report",
    "write_metrics_csv",
]

PSNR_LOSSLESS = 99.0
PEAK = 255.0
C1 = (0.01 * PEAK) ** 2
C2 = (0.03 * PEAK) ** 2
SSIM_WINDOW = 8
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_DIM = 32


class MetricError(ValueError):
    pass


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise MetricError(f"plane shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """PSNR in dB at peak 255; identical planes give ``PSNR_LOSSLESS``."""
    m = mse(a, b)
    if m == 0.0:
        return PSNR_LOSSLESS
    return float(10.0 * np.log10(PEAK * PEAK / m))


def _ssim_terms(a, b):
    """Mean luminance term and mean (contrast*structure) / full SSIM maps."""
    win = min(SSIM_WINDOW, a.shape[0], a.shape[1])
    wa = sliding_window_view(a, (win, win))
    wb = sliding_window_view(b, (win, win))
    axes = (-2, -1)
    mu_a = wa.mean(axis=axes)
    mu_b = wb.mean(axis=axes)
    var_a = (wa * wa).mean(axis=axes) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=axes) - mu_b * mu_b
    cov = (wa * wb).mean(axis=axes) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + C1) / (mu_a * mu_a + mu_b * mu_b + C1)
    cs = (2.0 * cov + C2) / (var_a + var_b + C2)
    return float(np.mean(cs)), float(np.mean(lum * cs))


def ssim(a, b):
    a, b = _pair(a, b)
    return _ssim_terms(a, b)[1]


def _pool2(x):
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b):
    """Five-scale MS-SSIM; negative per-scale terms are clamped to 0.

    Coarse scales narrower than 8 pixels use a window equal to the scale size.
    """
    a, b = _pair(a, b)
    if min(a.shape) < MS_SSIM_MIN_DIM:
        raise MetricError(
            f"MS-SSIM needs at least {MS_SSIM_MIN_DIM}x{MS_SSIM_MIN_DIM}, got {a.shape[1]}x{a.shape[0]}")
    value = 1.0
    last = len(MS_SSIM_WEIGHTS) - 1
    for j, weight in enumerate(MS_SSIM_WEIGHTS):
        cs, full = _ssim_terms(a, b)
        term = full if j == last else cs
        value *= max(term, 0.0) ** weight
        if j < last:
            a, b = _pool2(a), _pool2(b)
    return float(value)


_METRICS = {"psnr": psnr, "ssim": ssim, "msssim": ms_ssim, "ms_ssim": ms_ssim}


def metric_fn(name):
    try:
        return _METRICS[name]
    except KeyError:
        raise MetricError(f"unknown metric {name!r}; choose psnr, ssim or msssim") from None


@dataclass(frozen=True)
class QualityReport:
    """Per-frame luma metrics for a decoded sequence."""

    psnr: tuple
    ssim: tuple
    ms_ssim: tuple
    lossless: tuple

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim))

    @property
    def mean_ms_ssim(self):
        return float(np.mean(self.ms_ssim))


def quality_report(originals, decoded):
    if len(originals) != len(decoded):
        raise MetricError(f"sequence lengths differ: {len(originals)} vs {len(decoded)}")
    p, s, m, lossless = [], [], [], []
    for o, d in zip(originals, decoded):
        p.append(psnr(o.y, d.y))
        s.append(ssim(o.y, d.y))
        m.append(ms_ssim(o.y, d.y))
        lossless.append(bool(np.array_equal(o.y, d.y)))
    return QualityReport(tuple(p), tuple(s), tuple(m), tuple(lossless))


def write_metrics_csv(report, stream, comments=()):
    for line in comments:
        stream.write(f"# {line}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["frame", "psnr", "ssim", "ms_ssim"])
    for i, row in enumerate(zip(report.psnr, report.ssim, report.ms_ssim)):
        w.writerow([i, *(f"{v:.6f}" for v in row)])
