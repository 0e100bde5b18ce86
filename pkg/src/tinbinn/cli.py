"""Command-line entry point: classify, compare, opcount, genmodel, bench.

Exit codes: 0 success, 1 verification mismatch, 2 usage or format error.
Reports go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine, oracle
from .fxcore import OverflowLog
from .model_io import (
    Model,
    ModelFormatError,
    PPMError,
    RawFrame,
    center_crop32,
    gen_random_model,
    load_image_ppm,
    preprocess,
    read_model,
    save_model,
)
from .netgraph import NetworkSpec, builtin_network, count_ops, parse_network, reduction, render_network

HOST_LABEL = "host measurement; not comparable to the 24 MHz FPGA overlay timings"


class CLIError(Exception):
    """Usage or input problem; reported on stderr with exit code 2."""


@dataclass
class RunReport:
    scores: list[int]
    label: int
    macs: int
    total_seconds: float
    macs_per_second: float
    layer_seconds: list[dict] = field(default_factory=list)
    overflow_events: int | None = None

    def to_text(self) -> str:
        lines = [f"scores: {' '.join(str(s) for s in self.scores)}", f"argmax: {self.label}"]
        lines.append(f"MACs: {self.macs}")
        lines.append(f"time: {self.total_seconds * 1e3:.3f} ms ({self.macs_per_second:.3e} MAC/s, {HOST_LABEL})")
        for row in self.layer_seconds:
            lines.append(f"  layer {row['layer']:>2} {row['kind']:<4} {row['seconds'] * 1e3:8.3f} ms")
        if self.overflow_events is not None:
            lines.append(f"overflow events: {self.overflow_events}")
        return "\n".join(lines)


def _network_arg(value: str) -> NetworkSpec:
    try:
        return parse_network(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _builtin_arg(value: str) -> NetworkSpec:
    try:
        return builtin_network(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_model(path) -> Model:
    try:
        return read_model(path)
    except OSError as exc:
        raise CLIError(f"cannot read model {path}: {exc.strerror or exc}") from None
    except ModelFormatError as exc:
        raise CLIError(f"{path}: {exc}") from None


def _load_input(path, camera_path: bool):
    try:
        image = load_image_ppm(path)
    except OSError as exc:
        raise CLIError(f"cannot read image {path}: {exc.strerror or exc}") from None
    except (PPMError, ValueError) as exc:
        raise CLIError(f"{path}: {exc}") from None
    if isinstance(image, RawFrame):
        if not camera_path:
            raise CLIError(f"{path}: 40x30 camera frame given; pass --camera-path or supply a 32x32 image")
        planes, window = preprocess(image)
        return center_crop32(planes, window)
    if camera_path:
        raise CLIError(f"{path}: --camera-path needs a 40x30 frame, got a 32x32 image")
    return image


def _run(model: Model, image, overflow: OverflowLog | None = None) -> tuple[engine.ForwardResult, float]:
    t0 = time.perf_counter()
    res = engine.forward(model, image, overflow=overflow, keep_trace=False)
    return res, time.perf_counter() - t0


def _report(model: Model, res: engine.ForwardResult, seconds: float, overflow: OverflowLog | None) -> RunReport:
    macs = count_ops(model.spec).total
    return RunReport(
        scores=[int(s) for s in res.scores],
        label=res.label,
        macs=macs,
        total_seconds=seconds,
        macs_per_second=macs / seconds if seconds > 0 else float("inf"),
        layer_seconds=[{"layer": i + 1, "kind": k, "seconds": t} for i, (k, t) in enumerate(res.timings)],
        overflow_events=None if overflow is None else overflow.total,
    )


def cmd_classify(args) -> int:
    model = _load_model(args.model)
    image = _load_input(args.image, args.camera_path)
    overflow = OverflowLog() if args.debug_overflow else None
    try:
        res, seconds = _run(model, image, overflow)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    report = _report(model, res, seconds, overflow)
    print(json.dumps(asdict(report), indent=2) if args.json else report.to_text())
    return 0


def _instances(args):
    """Yield (model, image) pairs for compare."""
    if args.image is not None:
        if args.model is None:
            raise CLIError("--image needs --model")
        yield _load_model(args.model), _load_input(args.image, args.camera_path)
        return
    if args.random is None:
        raise CLIError("give --model and --image, or --random N")
    if args.random < 1:
        raise CLIError("--random must be at least 1")
    fixed_model = _load_model(args.model) if args.model else None
    spec = args.network or builtin_network("reduced")
    rng = np.random.default_rng(args.seed)
    for _ in range(args.random):
        model_seed = int(rng.integers(0, 2**63))
        image = rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
        yield (fixed_model or gen_random_model(spec, model_seed)), image


def _compare_one(pair):
    model, image = pair
    fixed = engine.forward(model, image)
    naive = oracle.fixed_forward_naive(model, image)
    real = oracle.float_forward(model, image)
    return oracle.first_mismatch(model, fixed.trace, naive.trace), fixed.scores, real


def cmd_compare(args) -> int:
    pairs = list(_instances(args))
    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            results = list(pool.map(_compare_one, pairs))
    else:
        results = [_compare_one(p) for p in pairs]
    mismatches = [(i, m) for i, (m, _, _) in enumerate(results) if m is not None]
    deltas = np.concatenate([real - fixed.astype(np.float64) for _, fixed, real in results])
    agree = sum(int(np.argmax(fixed)) == int(np.argmax(real)) for _, fixed, real in results)
    report = {
        "instances": len(results),
        "fixed_vs_naive_mismatches": len(mismatches),
        "first_mismatch": None if not mismatches else {"instance": mismatches[0][0], **asdict(mismatches[0][1])},
        "float_minus_fixed_mean_abs": float(np.mean(np.abs(deltas))),
        "float_minus_fixed_max_abs": float(np.max(np.abs(deltas))),
        "argmax_agreement": agree / len(results),
    }
    if len(results) == 1:
        report["fixed_scores"] = [int(s) for s in results[0][1]]
        report["float_scores"] = [float(s) for s in results[0][2]]
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"instances: {report['instances']}")
        print(f"fixed vs naive mismatches: {report['fixed_vs_naive_mismatches']}")
        if mismatches:
            i, m = mismatches[0]
            print(f"first mismatch: instance {i}, {m}")
        if len(results) == 1:
            print("fixed scores: " + " ".join(str(s) for s in report["fixed_scores"]))
            print("float scores: " + " ".join(f"{s:.3f}" for s in report["float_scores"]))
        print(f"float-fixed |delta|: mean {report['float_minus_fixed_mean_abs']:.3f}, max {report['float_minus_fixed_max_abs']:.3f}")
        print(f"argmax agreement: {report['argmax_agreement']:.3f}")
    return 1 if mismatches else 0


def cmd_opcount(args) -> int:
    networks = args.networks or []
    if not networks:
        raise CLIError("give at least one --network or --builtin")
    counts = [count_ops(n) for n in networks]
    out = {"networks": []}
    for spec, oc in zip(networks, counts):
        out["networks"].append(
            {
                "notation": render_network(spec),
                "layers": [{"layer": l, "macs": m} for l, m in zip(oc.labels, oc.per_layer)],
                "total": oc.total,
            }
        )
    if len(counts) >= 2:
        out["reduction"] = reduction(counts[0], counts[-1])
    if args.json:
        print(json.dumps(out, indent=2))
        return 0
    for net in out["networks"]:
        print(net["notation"])
        for i, row in enumerate(net["layers"]):
            print(f"  {i + 1:>2} {row['layer']:<8} {row['macs']:>14,}")
        print(f"  total       {net['total']:>14,}")
    if "reduction" in out:
        print(f"reduction: {out['reduction'] * 100:.2f}%")
    return 0


def cmd_genmodel(args) -> int:
    spec = args.network or builtin_network("reduced")
    try:
        model = gen_random_model(spec, args.seed)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    try:
        size = save_model(model, args.out)
    except OSError as exc:
        raise CLIError(f"cannot write {args.out}: {exc.strerror or exc}") from None
    bits = model.sign_bits
    print(f"network: {render_network(spec)}")
    print(f"sign payload: {bits} bits ({bits // 8 + (bits % 8 > 0)} bytes)")
    print(f"file size: {size} bytes")
    return 0


_CLASSES = {"C3": "conv", "MP2": "pool", "FC": "dense", "SVM": "dense"}


def cmd_bench(args) -> int:
    if args.iterations < 1:
        raise CLIError("--iterations must be at least 1")
    model = _load_model(args.model)
    if args.image:
        image = _load_input(args.image, args.camera_path)
    else:
        image = np.random.default_rng(args.seed).integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
    samples: dict[str, list[float]] = {"conv": [], "pool": [], "dense": [], "total": []}
    res = None
    for _ in range(args.iterations):
        res, seconds = _run(model, image)
        per_class = dict.fromkeys(("conv", "pool", "dense"), 0.0)
        for kind, t in res.timings:
            per_class[_CLASSES[kind]] += t
        for k, v in per_class.items():
            samples[k].append(v)
        samples["total"].append(seconds)
    macs = count_ops(model.spec).total
    med = statistics.median(samples["total"])
    report = {
        "note": HOST_LABEL,
        "iterations": args.iterations,
        "macs": macs,
        "macs_per_second": macs / med if med > 0 else float("inf"),
        "timing": {k: {"median": statistics.median(v), "min": min(v)} for k, v in samples.items()},
        "scores": [int(s) for s in res.scores],
        "label": res.label,
    }
    if args.json:
        print(json.dumps(report, indent=2))
        return 0
    print(f"# {HOST_LABEL}")
    print(f"iterations: {args.iterations}")
    print(f"MACs: {macs}")
    for k, v in report["timing"].items():
        print(f"  {k:<5} median {v['median'] * 1e3:9.3f} ms   min {v['min'] * 1e3:9.3f} ms")
    print(f"throughput: {report['macs_per_second']:.3e} MAC/s")
    print(f"argmax: {res.label}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tinbinn", description="Binarized-weight CNN inference engine")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", help="run one image through a model")
    c.add_argument("--model", required=True)
    c.add_argument("--image", required=True)
    c.add_argument("--camera-path", action="store_true", help="treat a 40x30 image as a camera frame")
    c.add_argument("--debug-overflow", action="store_true", help="count 16b group-accumulation overflows")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_classify)

    c = sub.add_parser("compare", help="pipeline vs reference vs float")
    c.add_argument("--model")
    c.add_argument("--image")
    c.add_argument("--camera-path", action="store_true")
    c.add_argument("--random", type=int, metavar="N")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--network", type=_network_arg, help="topology for random models (default: reduced)")
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_compare)

    c = sub.add_parser("opcount", help="multiply-accumulate counts")
    c.add_argument("--network", dest="networks", action="append", type=_network_arg, metavar="NOTATION")
    c.add_argument("--builtin", dest="networks", action="append", type=_builtin_arg, metavar="{original,reduced}")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_opcount)

    c = sub.add_parser("genmodel", help="write a deterministic random model file")
    c.add_argument("--network", type=_network_arg)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_genmodel)

    c = sub.add_parser("bench", help="time the host pipeline")
    c.add_argument("--model", required=True)
    c.add_argument("--iterations", type=int, default=10)
    c.add_argument("--image")
    c.add_argument("--camera-path", action="store_true")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"tinbinn {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
