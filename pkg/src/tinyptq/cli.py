"""Command-line surface: stats, quantize, eval and ablate.

Exit codes: 0 success, 1 usage error, 2 file-format error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import container, metrics
from .engine import EngineError, MODEL_NAMES, build_model
from .modelio import load_quantized_model, save_quantized_model
from .pipeline import ConfigError, PipelineConfig, run_pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_RUNTIME = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="tinyptq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    st = sub.add_parser("stats", help="print model statistics and cost model")
    st.add_argument("--model", required=True, choices=MODEL_NAMES)
    st.add_argument("--bits-w", type=int, default=None)
    st.add_argument("--bits-a", type=int, default=None)
    st.add_argument("--json", action="store_true", help="machine-readable output")

    qz = sub.add_parser("quantize", help="run the PTQ pipeline and save the result")
    qz.add_argument("--model", required=True, choices=MODEL_NAMES)
    qz.add_argument("--weights", required=True, help="TQT1 parameter container")
    qz.add_argument("--calib", required=True, help="TQT1 dataset file (labels optional)")
    qz.add_argument("--bits-w", type=int, required=True)
    qz.add_argument("--bits-a", type=int, required=True)
    qz.add_argument("--init", choices=("minmax", "mse"), default="mse")
    qz.add_argument("--init-w", choices=("minmax", "mse"), default=None)
    qz.add_argument("--init-a", choices=("minmax", "mse"), default=None)
    qz.add_argument("--cle", action="store_true")
    qz.add_argument("--opt", choices=("qparam", "weights", "bits", "round"), required=True)
    qz.add_argument("--granularity", choices=("layer", "block"), default="layer")
    qz.add_argument("--bias-tune", action="store_true")
    qz.add_argument("--seed", type=int, default=0)
    qz.add_argument("--iters", type=int, default=2000)
    qz.add_argument("--lr", type=float, default=None)
    qz.add_argument("--batch-size", type=int, default=32)
    qz.add_argument("--calib-size", type=int, default=1024)
    qz.add_argument("--out", required=True)
    qz.add_argument("--log", default=None, help="run-log JSON path (default: <out>.log.json)")

    ev = sub.add_parser("eval", help="top-1 accuracy of a model on a dataset")
    ev.add_argument("--model", required=True, choices=MODEL_NAMES)
    ev.add_argument("--weights", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--limit", type=int, default=None)

    ab = sub.add_parser("ablate", help="seed x bitwidth x strategy sweep from a JSON config")
    ab.add_argument("--config", required=True)
    return p


def _config_from_args(args) -> PipelineConfig:
    return PipelineConfig(
        b_w=args.bits_w,
        b_a=args.bits_a,
        w_init=args.init_w or args.init,
        a_init=args.init_a or args.init,
        cle=args.cle,
        strategy=args.opt,
        granularity="blockwise" if args.granularity == "block" else "layerwise",
        bias_tune=args.bias_tune,
        calib_size=args.calib_size,
        iters=args.iters,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def _cmd_stats(args) -> int:
    graph = build_model(args.model, seed=0)
    st = metrics.model_stats(graph)
    payload = {
        "model": args.model,
        "macs": st.macs,
        "params": st.params,
        "params_folded": st.params_folded,
        "peak_activation": st.peak_activation,
    }
    if args.bits_w and args.bits_a:
        bits = metrics.peak_memory_bits(st.params_folded, st.peak_activation, args.bits_w, args.bits_a)
        payload["bop"] = metrics.bop_count(st.macs, args.bits_w, args.bits_a)
        payload["peak_memory_bits"] = bits
        payload["peak_memory_bytes"] = bits / 8
    if args.json:
        print(json.dumps(payload, indent=2))
        return EXIT_OK
    print(f"model:            {args.model}")
    print(f"MACs:             {st.macs:,}")
    print(f"params:           {st.params:,} (pre-fold, batchnorm included)")
    print(f"params (folded):  {st.params_folded:,}")
    print(f"peak activation:  {st.peak_activation:,} elements")
    if "bop" in payload:
        print(f"BOP ({args.bits_w}W{args.bits_a}A):       {payload['bop']:,}")
        print(f"peak memory:      {payload['peak_memory_bytes']:,.1f} bytes")
    return EXIT_OK


def _cmd_quantize(args) -> int:
    config = _config_from_args(args)
    weights = container.load_weights(args.weights)
    graph = build_model(args.model, weights=weights)
    calib, _ = container.load_dataset(args.calib, limit=None)
    qg, log = run_pipeline(graph, calib, config)
    save_quantized_model(qg, args.model, args.out)
    log_path = args.log or (args.out + ".log.json")
    with open(log_path, "w") as fh:
        json.dump(log, fh, indent=2, sort_keys=False)
    final = [r for r in log["records"] if r["step"] == "bias_tune"] or log["records"]
    if final:
        print(f"final loss: {min(r['loss'] for r in final):.6g}")
    print(f"wrote {args.out} and {log_path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    entries = container.load(args.weights)
    inputs, labels = container.load_dataset(args.dataset, limit=args.limit)
    if labels is None:
        raise container.FormatError(0, "dataset has no labels; cannot evaluate accuracy")
    if "meta.model" in entries:
        model, name = load_quantized_model(args.weights)
        if name != args.model:
            raise _UsageError(f"file holds a {name!r} model, --model says {args.model!r}")
    else:
        model = build_model(args.model, weights=entries)
    acc = metrics.evaluate(model, inputs, labels)
    print(f"accuracy: {acc:.4f} ({len(labels)} samples)")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    with open(args.config) as fh:
        spec = json.load(fh)
    model_name = spec["model"]
    weights = container.load_weights(spec["weights"]) if spec.get("weights") else None
    graph = build_model(model_name, weights=weights, seed=int(spec.get("model_seed", 0)))
    calib, _ = container.load_dataset(spec["calib"])
    dataset = spec.get("dataset")
    if dataset:
        eval_inputs, eval_labels = container.load_dataset(dataset, limit=spec.get("eval_limit"))
    else:
        eval_inputs = eval_labels = None

    st = metrics.model_stats(graph)
    runs = []
    fp_accuracy = spec.get("fp_accuracy")
    if fp_accuracy is None and eval_labels is not None:
        fp_accuracy = metrics.evaluate(graph, eval_inputs, eval_labels)
    base = {
        k: spec[k]
        for k in ("iters", "lr", "batch_size", "calib_size", "eval_every")
        if k in spec
    }
    for b_w, b_a in spec.get("bitwidths", [[8, 8]]):
        for strategy in spec.get("strategies", ["round"]):
            for seed in spec.get("seeds", [0]):
                config = PipelineConfig(
                    b_w=b_w,
                    b_a=b_a,
                    strategy=strategy,
                    w_init=spec.get("init", "mse"),
                    a_init=spec.get("init", "mse"),
                    cle=bool(spec.get("cle", True)),
                    granularity=spec.get("granularity", "layerwise"),
                    bias_tune=bool(spec.get("bias_tune", True)),
                    seed=seed,
                    **base,
                )
                qg, _ = run_pipeline(graph, calib, config)
                acc = (
                    metrics.evaluate(qg, eval_inputs, eval_labels)
                    if eval_labels is not None
                    else float("nan")
                )
                runs.append(
                    metrics.CostReport(
                        model=model_name,
                        b_w=b_w,
                        b_a=b_a,
                        strategy=strategy,
                        init=spec.get("init", "mse"),
                        cle=bool(spec.get("cle", True)),
                        bias_tune=bool(spec.get("bias_tune", True)),
                        seed=seed,
                        accuracy=acc,
                        macs=st.macs,
                        params=st.params_folded,
                        peak_activation=st.peak_activation,
                        bop=metrics.bop_count(st.macs, b_w, b_a),
                        peak_memory_bits=metrics.peak_memory_bits(
                            st.params_folded, st.peak_activation, b_w, b_a
                        ),
                    )
                )
    csv_text, report = metrics.emit_report(runs, fp_accuracy=fp_accuracy)
    out_csv = spec.get("out_csv", "ablate.csv")
    out_json = spec.get("out_json", "ablate.json")
    with open(out_csv, "w") as fh:
        fh.write(csv_text)
    with open(out_json, "w") as fh:
        fh.write(metrics.report_json(report))
    print(f"wrote {out_csv} and {out_json} ({len(runs)} runs)")
    return EXIT_OK


_COMMANDS = {
    "stats": _cmd_stats,
    "quantize": _cmd_quantize,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except container.FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (EngineError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
