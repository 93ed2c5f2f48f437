"""Command-line interface: ``compress``, ``eval``, ``bench``, ``inspect``.

Exit codes: 0 success, 1 usage error, 2 data error (missing/malformed input),
3 numeric failure (non-finite weights, SVD non-convergence).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evalkit, microinfer, pipeline
from .errors import CompressKitError, LayerError, NumericError
from .svgplot import pr_svg
from .weightstore import load_store, save_store, tensor_stats

log = logging.getLogger("compresskit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _same_file(a, b) -> bool:
    return Path(a).resolve() == Path(b).resolve()


# ---------------------------------------------------------------------------
# compress
# ---------------------------------------------------------------------------

def cmd_compress(args) -> int:
    for out in (args.out, args.report, args.table):
        if out and (_same_file(out, args.input) or _same_file(out, args.config)):
            raise UsageError(f"output path {out} would overwrite an input file")
    store = load_store(args.input)
    config = pipeline.CompressionConfig.from_json(args.config)
    result, report = pipeline.run_pipeline(store, config)
    written = save_store(result, args.out)
    if written != report.bytes_after:
        raise RuntimeError(f"wrote {written} bytes, report says {report.bytes_after}")
    pipeline.write_report(report, args.report, args.table)
    sys.stdout.write(report.to_text())
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _curve_stem(curve: evalkit.PRCurve) -> str:
    return "pooled" if curve.class_id is None else f"class_{curve.class_id}"


def cmd_eval(args) -> int:
    gts = evalkit.load_labels(args.labels, args.num_classes)
    dets = evalkit.load_predictions(args.preds, args.num_classes)
    report = evalkit.evaluate(dets, gts, args.iou, args.method)
    data = report.to_dict()
    if args.pr_dir:
        pr_dir = Path(args.pr_dir)
        pr_dir.mkdir(parents=True, exist_ok=True)
        curves = [c.curve for c in report.classes] + [report.pooled]
        files = []
        for curve in curves:
            stem = _curve_stem(curve)
            evalkit.write_pr_csv(curve, pr_dir / f"{stem}.csv")
            title = f"PR curve, {curve.label} (IoU {args.iou:g})"
            (pr_dir / f"{stem}.svg").write_text(pr_svg(curve.points, title), encoding="utf-8")
            files.append({"curve": curve.label, "csv": f"{stem}.csv", "svg": f"{stem}.svg"})
        data["pr_curves"] = files
    text = _dump(data)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _parse_shape(s: str) -> list[int]:
    try:
        dims = [int(d) for d in s.lower().replace(",", "x").split("x")]
    except ValueError:
        raise UsageError(f"--input must look like CxHxW, got {s!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise UsageError(f"--input must look like CxHxW with positive sizes, got {s!r}")
    return dims


def cmd_bench(args) -> int:
    if args.runs < 3:
        raise UsageError(f"--runs must be at least 3, got {args.runs}")
    if args.warmup < 1:
        raise UsageError(f"--warmup must be at least 1, got {args.warmup}")
    shape = _parse_shape(args.input)
    layers = microinfer.load_network(args.net)
    store = load_store(args.weights)
    result = microinfer.benchmark(layers, store, shape, args.runs, args.warmup, args.seed)
    text = result.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------

def inspect_store(path) -> dict:
    store = load_store(path)
    size = Path(path).stat().st_size
    tensors = []
    for e in store:
        st = tensor_stats(e.tensor)
        tensors.append({
            "name": e.name, "role": e.role, "shape": list(e.shape), "numel": e.numel,
            "nonzero": st.nonzero_count, "nonzero_pct": 100.0 * st.nonzero_fraction,
            "nonfinite": st.nonfinite_count, "l1": st.l1_sum, "min": st.min, "max": st.max,
            "bytes": 4 * e.numel,
        })
    groups = []
    for base in pipeline.factored_bases(store):
        f = pipeline.load_factored(store, base)
        orig, fact = pipeline.param_counts(f)
        groups.append({
            "name": base, "orig_shape": list(f.orig_shape), "reshape": f.mode, "rank": f.rank,
            "orig_params": orig, "factored_params": fact,
            "stored_elements": sum(store.entry(base + s).numel for s in pipeline.FACTOR_SUFFIXES),
        })
    return {
        "path": str(path),
        "metadata": dict(store.metadata),
        "tensors": tensors,
        "factored": groups,
        "totals": {
            "tensors": len(store),
            "params": store.numel(),
            "data_bytes": 4 * store.numel(),
            "file_bytes": size,
            "factored_orig_params": sum(g["orig_params"] for g in groups),
            "factored_params": sum(g["factored_params"] for g in groups),
        },
    }


def _inspect_text(info: dict) -> str:
    from .pipeline import _table

    rows = [[t["name"], t["role"], "x".join(map(str, t["shape"])), str(t["numel"]),
             f"{t['nonzero_pct']:.1f}", str(t["bytes"]) + (" !nonfinite" if t["nonfinite"] else "")]
            for t in info["tensors"]]
    parts = [f"{info['path']}", "",
             _table(["Name", "Role", "Shape", "Params", "Nonzero %", "Bytes"], rows)]
    if info["factored"]:
        frows = [[g["name"], "x".join(map(str, g["orig_shape"])), str(g["rank"]),
                  str(g["orig_params"]), str(g["factored_params"])] for g in info["factored"]]
        parts += ["", "Factored layers (.u/.s/.v)", "",
                  _table(["Layer", "Origin", "R", "OIK^2", "R(IK^2+1+O)"], frows)]
    t = info["totals"]
    parts += ["", f"tensors: {t['tensors']}  parameters: {t['params']}  "
                  f"serialized size: {t['file_bytes']} bytes ({t['file_bytes'] / 1e6:.3f} MB)"]
    if info["metadata"]:
        parts.append("metadata: " + json.dumps(info["metadata"]))
    return "\n".join(parts) + "\n"


def cmd_inspect(args) -> int:
    info = inspect_store(args.input)
    sys.stdout.write(_dump(info) if args.json else _inspect_text(info))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="compresskit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compress", help="prune and/or SVD-factor a .wstore")
    c.add_argument("--in", dest="input", required=True, help="input .wstore")
    c.add_argument("--config", required=True, help="compression config JSON")
    c.add_argument("--out", required=True, help="output .wstore")
    c.add_argument("--report", required=True, help="compression report JSON")
    c.add_argument("--table", help="also write the plain-text report table here")
    c.set_defaults(func=cmd_compress)

    e = sub.add_parser("eval", help="mAP@IoU and PR curves from YOLO-format txt files")
    e.add_argument("--labels", required=True, help="directory of ground-truth .txt files")
    e.add_argument("--preds", required=True, help="directory of prediction .txt files")
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--method", choices=evalkit.METHODS, default="all-points")
    e.add_argument("--num-classes", type=int)
    e.add_argument("--out", help="write the report JSON here")
    e.add_argument("--pr-dir", help="write per-class and pooled PR curves (CSV + SVG) here")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time a forward pass of a network spec")
    b.add_argument("--net", required=True, help="network spec JSON")
    b.add_argument("--weights", required=True, help=".wstore holding the referenced weights")
    b.add_argument("--input", required=True, help="input shape CxHxW")
    b.add_argument("--runs", type=int, default=5)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="also write the result JSON here")
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("inspect", help="manifest, per-tensor stats and sizes of a .wstore")
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--json", action="store_true", help="machine-readable output")
    i.set_defaults(func=cmd_inspect)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, LayerError):
        exc = exc.cause
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"compresskit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CompressKitError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"compresskit {args.command}: error: {msg}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
