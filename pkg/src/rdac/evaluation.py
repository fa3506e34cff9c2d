"""Rate-distortion evaluation: sweeps, RD convex hulls, BD-rate, drift, timing."""

import csv
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from rdac.codec import CodecConfig, Decoder, Encoder, FrameType, Mode, decode_sequence, encode_sequence
from rdac.metrics import metric_fn

__all__ = [
    "DEFAULT_GOPS",
    "RdPoint",
    "DriftSeries",
    "BenchReport",
    "rd_sweep",
    "convex_hull",
    "curve_for",
    "bd_rate",
    "bpp_at_quality",
    "least_squares_slope",
    "drift_analysis",
    "bench",
    "write_rd_csv",
    "read_rd_csv",
    "write_drift_csv",
    "write_bench_csv",
    "format_bd",
]

DEFAULT_GOPS = (16, 32, 64, 128)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    quality: float
    metric: str = "msssim"
    mode: str = "temporal"
    gop: int = 0
    lam: float = 0.0
    on_hull: bool = False


def _measure(frames, config, metric):
    result = encode_sequence(frames, config)
    decoded = decode_sequence(result.bitstream)
    fn = metric_fn(metric)
    quality = float(np.mean([fn(o.y, d.y) for o, d in zip(frames, decoded)]))
    w, h = frames[0].width, frames[0].height
    bpp = 8 * len(result.bitstream) / (len(frames) * w * h)
    return RdPoint(bpp, quality, metric, config.mode.value, config.gop_size, config.lam)


def rd_sweep(frames, gop_list, lambda_list, mode=Mode.TEMPORAL, metric="msssim",
             base=CodecConfig(), jobs=1):
    """Encode, decode and measure every (gop, lambda) pair.

    Quality is the mean per-frame luma metric; bpp counts the whole container.
    """
    if not frames or not gop_list or not lambda_list:
        raise EvaluationError("rd_sweep needs frames, GOP sizes and lambdas")
    mode = Mode.parse(mode)
    configs = [replace(base, gop_size=int(g), lam=float(lam), mode=mode)
               for g in gop_list for lam in lambda_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_measure, [frames] * len(configs), configs,
                                   [metric] * len(configs)))
    else:
        points = [_measure(frames, c, metric) for c in configs]
    return sorted(points, key=lambda p: (p.gop, p.lam))


def _xy(points):
    out = []
    for p in points:
        if isinstance(p, RdPoint):
            out.append((float(p.bpp), float(p.quality), p))
        else:
            b, q = p
            out.append((float(b), float(q), None))
    return out


def convex_hull(points):
    """Upper-left RD envelope: Pareto-optimal points on the concave upper hull.

    Accepts RdPoints or (bpp, quality) pairs and returns the same kind, sorted
    by increasing bpp. RdPoints come back with ``on_hull=True``.
    """
    pts = _xy(points)
    if not pts:
        raise EvaluationError("cannot hull an empty point set")
    pts.sort(key=lambda t: (t[0], -t[1]))
    pareto = []
    for b, q, src in pts:
        if pareto and b == pareto[-1][0]:
            continue
        if pareto and q <= pareto[-1][1]:
            continue
        pareto.append((b, q, src))
    hull = []
    for p in pareto:
        while len(hull) >= 2:
            (b0, q0, _), (b1, q1, _) = hull[-2], hull[-1]
            # Drop the middle point when it lies strictly below the chord.
            if (q1 - q0) * (p[0] - b0) < (p[1] - q0) * (b1 - b0):
                hull.pop()
            else:
                break
        hull.append(p)
    return [replace(src, on_hull=True) if src is not None else (b, q) for b, q, src in hull]


def curve_for(points, **tags):
    """Subset of RdPoints whose attributes match ``tags`` (e.g. gop=32)."""
    return [p for p in points if all(getattr(p, k) == v for k, v in tags.items())]


def _bd_curve(points, name):
    pts = sorted(((q, b) for b, q, _ in _xy(points)))
    if len(pts) < 4:
        raise EvaluationError(f"{name} curve needs at least 4 points, got {len(pts)}")
    q = np.array([p[0] for p in pts])
    b = np.array([p[1] for p in pts])
    if np.any(np.diff(q) <= 0):
        raise EvaluationError(f"{name} curve quality is not strictly increasing")
    if np.any(np.diff(b) <= 0):
        raise EvaluationError(f"{name} curve is not monotonic; hull it first")
    if np.any(b <= 0):
        raise EvaluationError(f"{name} curve has non-positive bpp")
    return q, np.log10(b)


def bd_rate(anchor, test):
    """Bjontegaard delta bitrate of ``test`` relative to ``anchor``, in percent.

    log10(bpp) is interpolated as a monotone piecewise cubic of quality and
    the mean log-rate gap over the shared quality interval is converted back
    to a rate ratio. Negative values mean ``test`` needs fewer bits.
    """
    qa, ra = _bd_curve(anchor, "anchor")
    qt, rt = _bd_curve(test, "test")
    lo, hi = max(qa[0], qt[0]), min(qa[-1], qt[-1])
    if not hi > lo:
        raise EvaluationError("anchor and test curves share no quality range")
    ia = PchipInterpolator(qa, ra).integrate(lo, hi)
    it = PchipInterpolator(qt, rt).integrate(lo, hi)
    mean_diff = (it - ia) / (hi - lo)
    return float((10.0 ** mean_diff - 1.0) * 100.0)


def bpp_at_quality(curve, quality):
    """Rate needed to reach ``quality`` by linear interpolation along a hulled curve."""
    pts = _xy(curve)
    b = np.array([p[0] for p in pts])
    q = np.array([p[1] for p in pts])
    if quality < q[0] or quality > q[-1]:
        raise EvaluationError("quality outside the curve range")
    return float(np.interp(quality, q, b))


def format_bd(value):
    return f"bd_br_percent,{value:.6f}"


# ---------------------------------------------------------------------------
# Drift
# ---------------------------------------------------------------------------


def least_squares_slope(values):
    y = np.asarray(values, dtype=np.float64)
    if y.size < 2:
        return 0.0
    x = np.arange(y.size, dtype=np.float64)
    x -= x.mean()
    return float(np.dot(x, y - y.mean()) / np.dot(x, x))


@dataclass(frozen=True)
class DriftSeries:
    metric: str
    values: tuple
    gop_size: int
    slopes: tuple  # one least-squares slope per GOP, quality units per frame

    @property
    def minimum(self):
        return min(self.values)


def drift_analysis(original, decoded, gop_size, metric="msssim"):
    """Per-frame quality and per-GOP quality slope of a decoded sequence."""
    if len(original) != len(decoded):
        raise EvaluationError(f"sequence lengths differ: {len(original)} vs {len(decoded)}")
    if gop_size < 1:
        raise EvaluationError("gop_size must be >= 1")
    fn = metric_fn(metric)
    values = [fn(o.y, d.y) for o, d in zip(original, decoded)]
    slopes = tuple(least_squares_slope(values[s:s + gop_size])
                   for s in range(0, len(values), gop_size))
    return DriftSeries(metric, tuple(values), gop_size, slopes)


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchReport:
    """Per-frame wall-clock seconds; each sample is one repetition's mean."""

    samples: dict  # (frame_type name, "encode"|"decode") -> list of seconds

    def rows(self):
        for (ftype, stage), s in sorted(self.samples.items()):
            yield ftype, stage, statistics.fmean(s), statistics.median(s), len(s)


def bench(frames, config=CodecConfig(), repetitions=3):
    """Time per-frame encoding and decoding, split by frame type."""
    if repetitions < 3:
        raise EvaluationError("bench needs at least 3 repetitions")
    samples = {}
    shapes = [p.shape for p in frames[0].planes]
    for _ in range(repetitions):
        per = {}
        enc = Encoder(config)
        records = []
        for f in frames:
            t0 = time.perf_counter()
            record, _ = enc.encode_frame(f)
            per.setdefault((record.frame_type.name, "encode"), []).append(time.perf_counter() - t0)
            records.append(record)
        dec = Decoder(config, shapes)
        for record in records:
            t0 = time.perf_counter()
            dec.decode_frame(record)
            per.setdefault((record.frame_type.name, "decode"), []).append(time.perf_counter() - t0)
        for key, times in per.items():
            samples.setdefault(key, []).append(statistics.fmean(times))
    return BenchReport(samples)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

RD_HEADER = ["mode", "gop", "lambda", "bpp", "metric", "quality", "on_hull"]


def _comments(stream, comments):
    for line in comments:
        stream.write(f"# {line}\n")


def write_rd_csv(points, stream, comments=()):
    """Write points; ``on_hull`` is recomputed over the whole set."""
    hull = {(p.bpp, p.quality) for p in convex_hull(points)} if points else set()
    _comments(stream, comments)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RD_HEADER)
    for p in points:
        w.writerow([p.mode, p.gop, repr(float(p.lam)), repr(float(p.bpp)), p.metric,
                    repr(float(p.quality)), int((p.bpp, p.quality) in hull)])


def read_rd_csv(stream):
    rows = [line for line in stream if line.strip() and not line.startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames != RD_HEADER:
        raise EvaluationError(f"unexpected RD CSV header {reader.fieldnames}")
    return [RdPoint(float(r["bpp"]), float(r["quality"]), r["metric"], r["mode"],
                    int(r["gop"]), float(r["lambda"]), bool(int(r["on_hull"])))
            for r in reader]


def write_drift_csv(series, stream, comments=()):
    _comments(stream, comments)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["frame", "metric", "value"])
    for i, v in enumerate(series.values):
        w.writerow([i, series.metric, repr(float(v))])


def write_bench_csv(report, stream, comments=()):
    _comments(stream, comments)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["frame_type", "stage", "mean_s", "median_s", "samples"])
    for ftype, stage, mean, median, n in report.rows():
        w.writerow([ftype, stage, f"{mean:.6f}", f"{median:.6f}", n])
