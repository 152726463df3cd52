"""Command-line entry points: addition benchmarks, mapping comparison, sparsity sweep, runs and traces."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from fatsim import __version__, tensor_io
from fatsim.cost_model import (
    AddScheme,
    CostError,
    compare_mappings,
    layer_cost,
    load_calibration,
    scalar_add_cp,
    scalar_add_latency,
    simulate_sparsity,
    sparsity_speedup,
    vector_add_cp,
    vector_add_latency,
)
from fatsim.inference import ModelError, load_model, reference_network, run_network
from fatsim.mapping import RESNET18_LAYER10, ConvShape, HwConfig, MapScheme, PlanError
from fatsim.memory_array import ArrayError
from fatsim.sparse_control import WeightError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _meta(args, cal) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "output")}
    return {"tool": f"fatsim {__version__}", "command": args.command,
            "config_hash": _digest(cfg), "calibration_hash": _digest(cal.to_dict()),
            "calibration": cal.source}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def emit(args, cal, rows: list[dict]) -> None:
    meta = _meta(args, cal)
    if args.format == "json":
        text = json.dumps({"meta": meta, "rows": rows}, indent=2, sort_keys=True, default=float) + "\n"
    else:
        buf = io.StringIO()
        for k in sorted(meta):
            buf.write(f"# {k}: {meta[k]}\n")
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})
        text = buf.getvalue()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


# ---- subcommands ----------------------------------------------------------


def cmd_add_bench(args, cal) -> int:
    t = cal.timing
    schemes = [AddScheme.parse(args.scheme)] if args.scheme else list(AddScheme)
    rows = []
    for s in schemes:
        for kind in (["scalar", "vector"] if args.kind == "both" else [args.kind]):
            if kind == "scalar":
                cp, lat = scalar_add_cp(s, args.bitwidth, t), scalar_add_latency(s, args.bitwidth, t)
            else:
                cp = vector_add_cp(s, args.bitwidth, t)
                lat = vector_add_latency(s, args.bitwidth, args.length, args.cols, t)
            rows.append({"scheme": s.value, "kind": kind, "bits": args.bitwidth, "cp_ns": cp, "latency_ns": lat})
    emit(args, cal, rows)
    return EXIT_OK


def _parse_layer(text: str | None) -> ConvShape:
    if not text:
        return RESNET18_LAYER10
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError("--layer expects comma-separated integers n,c,h,w,kn,k,s,p") from None
    if len(vals) != 8:
        raise UsageError("--layer expects n,c,h,w,kn,k,s,p")
    n, c, h, w, kn, k, s, p = vals
    return ConvShape(n, c, h, w, kn, k, k, s, p)


def cmd_map_compare(args, cal) -> int:
    shape = _parse_layer(args.layer)
    hw = HwConfig(num_cmas=args.cmas, unroll_l=args.unroll, cs_footprint=args.cs_footprint)
    emit(args, cal, compare_mappings(shape, hw, cal))
    return EXIT_OK


def cmd_sweep_sparsity(args, cal) -> int:
    lo, hi, step = args.from_, args.to, args.step
    if not (0 <= lo <= hi < 1) or step <= 0:
        raise UsageError("need 0 <= from <= to < 1 and step > 0")
    rows = []
    n = int(round((hi - lo) / step + 1e-9))
    for k in range(n + 1):
        s = round(lo + k * step, 10)
        cf = sparsity_speedup(s, cal)
        sim = simulate_sparsity(s, cal, seed=args.seed)
        if abs(sim[0] / cf[0] - 1) > 0.02 or abs(sim[1] / cf[1] - 1) > 0.02:
            raise InvariantError(f"closed form and simulation disagree at sparsity {s}")
        rows.append({"sparsity": s, "speedup_closed": cf[0], "speedup_sim": sim[0],
                     "energy_eff_closed": cf[1], "energy_eff_sim": sim[1]})
    emit(args, cal, rows)
    return EXIT_OK


def _load_hw(path) -> HwConfig:
    if not path:
        return HwConfig()
    try:
        return HwConfig(**json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ModelError(f"cannot read hardware config {path}: {exc}") from exc


def _load_input(args, model):
    if args.input:
        return tensor_io.load(args.input)
    if model.input_shape is None:
        raise UsageError("model has no input_shape; pass --input")
    return np.random.default_rng(args.seed).integers(0, 1 << model.activation_bits, model.input_shape)


def cmd_run(args, cal) -> int:
    model = load_model(args.model)
    x = _load_input(args, model)
    hw = _load_hw(args.hw)
    res = run_network(model, x, hw, args.scheme)
    ref_y, ref_a = reference_network(model, x)
    ok = np.array_equal(res.outputs, ref_y) and np.array_equal(res.activations, ref_a)
    report = res.report()
    for entry, layer in zip(report["layers"], res.layers):
        cost = layer_cost(layer.ledger, layer.plan, cal)
        entry["time_ns"], entry["energy"] = cost.time_ns, cost.energy
        entry["phases_ns"] = cost.phases
    report["meta"] = _meta(args, cal)
    report["verification"] = "PASS" if ok else "FAIL"
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor_io.save(out / "output.fatb", res.activations.astype(np.uint8))
    tensor_io.save(out / "preactivation.fatb", res.outputs.astype(np.int64))
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"verification: {'PASS' if ok else 'FAIL'} against reference convolution")
    if not ok:
        raise InvariantError("simulated outputs differ from the reference")
    return EXIT_OK


def cmd_trace(args, cal) -> int:
    model = load_model(args.model)
    x = _load_input(args, model)
    if not 0 <= args.layer < len(model.layers):
        raise UsageError(f"--layer must be in 0..{len(model.layers) - 1}")
    model.layers = model.layers[: args.layer + 1]
    res = run_network(model, x, _load_hw(args.hw), args.scheme, record_trace=True)
    text = "".join(t.to_jsonl() for t in res.layers[-1].traces[: args.limit])
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---- wiring ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fat-sim", description=__doc__)
    p.add_argument("--calibration", help="calibration JSON (default: $FAT_CALIBRATION or packaged)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("-o", "--output", help="write report here instead of stdout")

    a = sub.add_parser("add-bench", help="addition latency per scheme")
    a.add_argument("--scheme", help="one of FAT, STT-CiM, ParaPIM, GraphS (default all)")
    a.add_argument("--bitwidth", type=int, default=8)
    a.add_argument("--kind", choices=("scalar", "vector", "both"), default="both")
    a.add_argument("--length", type=int, default=None)
    a.add_argument("--cols", type=int, default=256)
    common(a)
    a.set_defaults(func=cmd_add_bench)

    m = sub.add_parser("map-compare", help="compare mapping schemes on one layer")
    m.add_argument("--layer", help="n,c,h,w,kn,k,s,p (default ResNet-18 layer 10)")
    m.add_argument("--cmas", type=int, default=4096)
    m.add_argument("--unroll", type=int, default=1)
    m.add_argument("--cs-footprint", choices=("is", "verbatim"), default="is")
    common(m)
    m.set_defaults(func=cmd_map_compare)

    s = sub.add_parser("sweep-sparsity", help="speedup and energy efficiency over sparsity")
    s.add_argument("--from", dest="from_", type=float, default=0.0)
    s.add_argument("--to", type=float, default=0.8)
    s.add_argument("--step", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    common(s)
    s.set_defaults(func=cmd_sweep_sparsity)

    functional = [m.value for m in MapScheme if m is not MapScheme.DIRECT_OS]
    for name, func, helptext in (("run", cmd_run, "run a model and verify it"),
                                 ("trace", cmd_trace, "dump activation traces as JSON lines")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--model", required=True)
        r.add_argument("--input", help="FATB input tensor (default: random from --seed)")
        r.add_argument("--scheme", choices=functional, default="img2col-cs")
        r.add_argument("--hw", help="hardware config JSON")
        r.add_argument("--seed", type=int, default=0)
        if name == "run":
            r.add_argument("--out-dir", default="fat-run")
        else:
            r.add_argument("--layer", type=int, default=0)
            r.add_argument("--limit", type=int, default=8, help="number of dot products to dump")
            r.add_argument("-o", "--output")
        r.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cal = load_calibration(args.calibration)
        return args.func(args, cal)
    except UsageError as exc:
        print(f"fat-sim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CostError, ModelError, PlanError, WeightError, tensor_io.BlobError) as exc:
        print(f"fat-sim: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantError, ArrayError) as exc:
        print(f"fat-sim: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
