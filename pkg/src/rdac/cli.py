"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 bitstream error.
"""

import argparse
import io
import os
import sys
import tempfile
from fractions import Fraction

from rdac import __version__
from rdac.animation import MotionConfig
from rdac.codec import BitstreamError, CodecConfig, Mode, decode_sequence, encode_sequence
from rdac.entropy import EntropyError
from rdac.evaluation import (EvaluationError, bd_rate, bench, convex_hull, drift_analysis,
                             format_bd, rd_sweep, read_rd_csv, write_bench_csv,
                             write_drift_csv, write_rd_csv)
from rdac.frames import Frame, SequenceInfo, Y4MError, read_y4m, write_y4m
from rdac.metrics import MetricError, quality_report, write_metrics_csv
from rdac.synth import KINDS, synth_sequence

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_BITSTREAM = 0, 1, 2, 3
METRIC_NAMES = {"psnr": "psnr", "ssim": "ssim", "msssim": "msssim"}


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _add_codec_flags(p, gop=True):
    if gop:
        p.add_argument("--gop", type=int, default=32)
    p.add_argument("--lambda", dest="lam", type=float, default=0.02)
    p.add_argument("--mode", default="temporal",
                   choices=["temporal", "intra-residual", "animation-only", "adaptive"])
    p.add_argument("--keypoints", type=int, default=10)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--q-ref", dest="q_ref", type=int, default=8)
    p.add_argument("--yuv420", action="store_true",
                   help="code chroma too (default: luma only)")


def build_parser():
    parser = _Parser(prog="rdac", description="Residual animation codec experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="encode a Y4M file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_codec_flags(p)

    p = sub.add_parser("decode", help="decode an RDAC bitstream to Y4M")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("metrics", help="per-frame luma PSNR/SSIM/MS-SSIM of two Y4M files")
    p.add_argument("--input", action="append", required=True,
                   help="original, then reconstruction")
    p.add_argument("--out")

    p = sub.add_parser("rd-sweep", help="RD points over GOP sizes and lambdas")
    p.add_argument("--input", required=True)
    p.add_argument("--gops", type=_csv_list(int), default=[16, 32, 64, 128])
    p.add_argument("--lambdas", type=_csv_list(float), default=[0.005, 0.02, 0.08, 0.32])
    p.add_argument("--metric", choices=sorted(METRIC_NAMES), default="msssim")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--plot")
    _add_codec_flags(p, gop=False)

    p = sub.add_parser("bd-rate", help="BD-rate between two rd-sweep CSVs")
    p.add_argument("--input", action="append", required=True, help="anchor CSV, then test CSV")
    p.add_argument("--metric", choices=sorted(METRIC_NAMES))
    p.add_argument("--out")

    p = sub.add_parser("drift", help="per-frame quality and per-GOP slope")
    p.add_argument("--input", action="append", required=True,
                   help="original Y4M, optionally followed by a decoded Y4M")
    p.add_argument("--metric", choices=sorted(METRIC_NAMES), default="msssim")
    p.add_argument("--out")
    p.add_argument("--plot")
    _add_codec_flags(p)

    p = sub.add_parser("bench", help="per-frame encode/decode timing")
    p.add_argument("--input", required=True)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out")
    _add_codec_flags(p)

    p = sub.add_parser("synth", help="write a synthetic Y4M sequence")
    p.add_argument("--kind", choices=KINDS, default="translating_texture")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _check_input(path):
    if not os.path.isfile(path):
        raise InputError(f"input not found: {path}")


def _check_output(path):
    if path is None:
        return
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise InputError(f"output directory does not exist: {parent}")


def _write_atomic(path, data):
    """Write bytes or text to ``path`` via a temp file and rename; None -> stdout."""
    if path is None:
        if isinstance(data, bytes):
            sys.stdout.buffer.write(data)
        else:
            sys.stdout.write(data)
        return
    parent = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".rdac-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data if isinstance(data, bytes) else data.encode("utf-8"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load(path, luma_only=True):
    try:
        with open(path, "rb") as fh:
            frames, info = read_y4m(fh)
    except Y4MError as exc:
        raise InputError(f"{path}: {exc}") from None
    if not frames:
        raise InputError(f"{path}: no frames")
    if luma_only:
        frames = [f.to_luma() for f in frames]
    return frames, info


def _config(args, gop=None):
    motion = MotionConfig(keypoints=args.keypoints, sigma=args.sigma)
    return CodecConfig(gop_size=gop if gop is not None else args.gop, lam=args.lam,
                       mode=Mode.parse(args.mode), motion=motion, q_ref=args.q_ref)


def _echo(args):
    skip = {"command", "plot", "out", "output"}
    items = [f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in skip]
    return [f"rdac {args.command}", *items, "metrics computed on luma",
            "ppm order 3, per-payload model reset"]


def _plot(path, series, xlabel, ylabel):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    _write_atomic(path, buf.getvalue())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_encode(args):
    _check_input(args.input)
    _check_output(args.output)
    frames, _ = _load(args.input, luma_only=not args.yuv420)
    result = encode_sequence(frames, _config(args))
    _write_atomic(args.output, result.bitstream)


def cmd_decode(args):
    _check_input(args.input)
    _check_output(args.output)
    with open(args.input, "rb") as fh:
        data = fh.read()
    frames = decode_sequence(data)
    info = SequenceInfo(frames[0].width, frames[0].height, Fraction(30, 1), len(frames)) \
        if frames else SequenceInfo(16, 16)
    buf = io.BytesIO()
    write_y4m(frames, info, buf)
    _write_atomic(args.output, buf.getvalue())


def cmd_metrics(args):
    if len(args.input) != 2:
        raise UsageError("metrics needs --input ORIGINAL --input RECONSTRUCTION")
    for p in args.input:
        _check_input(p)
    _check_output(args.out)
    orig, _ = _load(args.input[0])
    rec, _ = _load(args.input[1])
    report = quality_report(orig, rec)
    buf = io.StringIO()
    write_metrics_csv(report, buf, _echo(args))
    _write_atomic(args.out, buf.getvalue())


def cmd_rd_sweep(args):
    _check_input(args.input)
    _check_output(args.out)
    _check_output(args.plot)
    if not args.gops or not args.lambdas:
        raise UsageError("--gops and --lambdas must be non-empty")
    frames, _ = _load(args.input, luma_only=not args.yuv420)
    base = _config(args, gop=args.gops[0])
    points = rd_sweep(frames, args.gops, args.lambdas, base.mode, args.metric, base, args.jobs)
    buf = io.StringIO()
    write_rd_csv(points, buf, _echo(args))
    _write_atomic(args.out, buf.getvalue())
    if args.plot:
        series = {}
        for g in args.gops:
            pts = sorted((p.bpp, p.quality) for p in points if p.gop == g)
            series[f"GOP {g}"] = ([b for b, _ in pts], [q for _, q in pts])
        hull = convex_hull(points)
        series["hull"] = ([p.bpp for p in hull], [p.quality for p in hull])
        _plot(args.plot, series, "bpp", args.metric)


def cmd_bd_rate(args):
    if len(args.input) != 2:
        raise UsageError("bd-rate needs --input ANCHOR.csv --input TEST.csv")
    for p in args.input:
        _check_input(p)
    _check_output(args.out)
    curves = []
    for path in args.input:
        with open(path, newline="") as fh:
            try:
                pts = read_rd_csv(fh)
            except (EvaluationError, KeyError, ValueError) as exc:
                raise InputError(f"{path}: {exc}") from None
        if args.metric:
            pts = [p for p in pts if p.metric == args.metric]
        if not pts:
            raise InputError(f"{path}: no RD points")
        curves.append(convex_hull(pts))
    value = bd_rate(curves[0], curves[1])
    _write_atomic(args.out, format_bd(value) + "\n")


def cmd_drift(args):
    if len(args.input) not in (1, 2):
        raise UsageError("drift takes one or two --input files")
    for p in args.input:
        _check_input(p)
    _check_output(args.out)
    _check_output(args.plot)
    orig, _ = _load(args.input[0], luma_only=not args.yuv420)
    if len(args.input) == 2:
        decoded, _ = _load(args.input[1])
    else:
        decoded = encode_sequence(orig, _config(args)).reconstructions
    series = drift_analysis(orig, decoded, args.gop, args.metric)
    buf = io.StringIO()
    comments = _echo(args) + ["gop slopes " + ",".join(f"{s:.6g}" for s in series.slopes)]
    write_drift_csv(series, buf, comments)
    _write_atomic(args.out, buf.getvalue())
    if args.plot:
        _plot(args.plot, {args.mode: (list(range(len(series.values))), list(series.values))},
              "frame", args.metric)


def cmd_bench(args):
    _check_input(args.input)
    _check_output(args.out)
    if args.repetitions < 3:
        raise UsageError("--repetitions must be >= 3")
    frames, _ = _load(args.input, luma_only=not args.yuv420)
    report = bench(frames, _config(args), args.repetitions)
    buf = io.StringIO()
    write_bench_csv(report, buf, _echo(args) + ["timings are machine dependent"])
    _write_atomic(args.out, buf.getvalue())


def cmd_synth(args):
    _check_output(args.output)
    frames = synth_sequence(args.kind, args.width, args.height, args.frames, args.seed)
    buf = io.BytesIO()
    write_y4m(frames, SequenceInfo(args.width, args.height, Fraction(30, 1), len(frames)), buf)
    _write_atomic(args.output, buf.getvalue())


COMMANDS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "metrics": cmd_metrics,
    "rd-sweep": cmd_rd_sweep,
    "bd-rate": cmd_bd_rate,
    "drift": cmd_drift,
    "bench": cmd_bench,
    "synth": cmd_synth,
}


def run(argv=None):
    """Run one subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip("\n") + "\n")
        return EXIT_USAGE
    except (BitstreamError, EntropyError) as exc:
        where = f" (frame {exc.frame_index})" if getattr(exc, "frame_index", None) is not None else ""
        sys.stderr.write(f"rdac: bitstream error{where}: {exc}\n")
        return EXIT_BITSTREAM
    except (InputError, OSError) as exc:
        sys.stderr.write(f"rdac: {exc}\n")
        return EXIT_IO
    except (EvaluationError, MetricError, ValueError) as exc:
        sys.stderr.write(f"rdac: {exc}\n")
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
