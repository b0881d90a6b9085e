"""Command-line entry point: ``xbarsec <command> --seed N [options]``.

Successful commands print their result (JSON or CSV) on stdout and exit 0.
Failures print one JSON line ``{"error": ..., "type": ...}`` on stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import adversary, experiment
from .crossbar import CrossbarArray, load_csv, save_csv
from .device import KNOWN_NODES, load_node_config, tech_node_params, write_node_config
from .permutor import PermKey, generate_key, key_space_bits, transistor_overhead
from .watermark import PLACEMENTS, WatermarkSpec, check_array, embed_watermark, make_watermark

EXIT_ERROR = 1
EXIT_VERIFY_FAILED = 3


def _size(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 256x128, got {text!r}") from None


def _emit(payload, fmt: str, out: str | None):
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _node_table(args):
    return load_node_config(args.config) if args.config else None


def cmd_simulate(args) -> int:
    table = _node_table(args)
    node = tech_node_params(args.node, table)
    rows, cols = args.size
    batch = experiment.input_batch(rows, args.seed, args.dataset, args.dataset_path, args.batch)
    res = experiment.run_config(node, (rows, cols), args.security, batch.voltages(node.v_read), args.seed)
    _emit({
        "node": res.node, "rows": res.rows, "cols": res.cols, "config": res.config,
        "mean_current_A": res.mean_current, "delay_s": res.delay, "power_W": res.power,
        "column_currents_A": res.column_currents.tolist(),
    }, "json", args.output)
    return 0


def _grid(args) -> experiment.ExperimentGrid:
    return experiment.ExperimentGrid(
        nodes=tuple(args.nodes), sizes=tuple(args.sizes), configs=tuple(args.configs), seed=args.seed,
        dataset=args.dataset, dataset_path=args.dataset_path, batch=args.batch,
    )


def cmd_sweep(args) -> int:
    rows = experiment.overhead_report(experiment.sweep(_grid(args), _node_table(args)))
    text = experiment.emit_report(rows, args.format)
    _emit(text, args.format, args.output)
    return 0


def cmd_calibrate(args) -> int:
    node = tech_node_params(args.node, _node_table(args))
    fit = experiment.calibrate(tuple(args.targets), node, args.size, tuple(args.free_params), args.seed,
                               max_evals=args.max_evals)
    if args.write_config:
        table = experiment.apply_calibration(fit.params, KNOWN_NODES, tuple(args.free_params), node.node_id)
        write_node_config(args.write_config, table)
    _emit({
        "residual": fit.residual, "evaluations": fit.evaluations,
        "overheads_pct": dict(zip(("current_drop", "delay_inc", "power_inc"), fit.overheads)),
        "params": {k: getattr(fit.params, k) for k in args.free_params},
    }, "json", args.output)
    return 0


def cmd_attack(args) -> int:
    node = tech_node_params(args.node, _node_table(args))
    rows, cols = args.size
    victim = experiment.build_array(node, rows, cols, "permutor", args.seed)
    clone = adversary.extract_and_clone(victim)
    probes = experiment.input_batch(rows, args.seed + 1, count=args.batch).voltages(node.v_read)
    report = adversary.extraction_fidelity(victim, clone, probes)
    _emit({
        **report.to_dict(),
        "rows": rows, "cols": cols,
        "key_space_bits": key_space_bits(rows),
        "expected_row_accuracy": adversary.expected_row_accuracy(rows),
        "brute_force_seconds": adversary.brute_force_cost(rows, args.rate),
        "transistor_overhead": transistor_overhead(rows, cols),
    }, "json", args.output)
    return 0


def cmd_keygen(args) -> int:
    key = generate_key(args.rows, args.seed)
    _emit({"key": key.to_hex(), "bits": key_space_bits(args.rows)}, "json", args.output)
    return 0


def cmd_wm_embed(args) -> int:
    node = tech_node_params(args.node, _node_table(args))
    rows, cols = args.size
    array = experiment.build_array(node, rows, cols, "permutor" if args.permutor else "baseline", args.seed)
    spec = make_watermark(rows, args.seed, args.placement, node, cols=cols, tolerance=args.tolerance)
    marked = embed_watermark(array, spec)
    save_csv(marked, args.array)
    record = {"watermark": spec.to_dict(), "key": marked.key.to_hex() if marked.key else None}
    with open(args.spec, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _emit({"array": args.array, "spec": args.spec, "columns": list(spec.column_indices)}, "json", None)
    return 0


def cmd_wm_verify(args) -> int:
    grid, header = load_csv(args.array)
    with open(args.spec) as fh:
        record = json.load(fh)
    node = tech_node_params(header["node"], _node_table(args))
    spec = WatermarkSpec.from_dict(record["watermark"], node)
    key = PermKey.from_hex(record["key"]) if record.get("key") else None
    # reattach the spec without re-embedding: the grid already holds it
    array = CrossbarArray(grid, header["M"], header["N"], node, key=key, watermark=spec)
    rep = check_array(array, spec)
    _emit({"passed": rep.passed, "worst_deviation": rep.worst_deviation, "tolerance": spec.tolerance,
           "columns": list(rep.columns)}, "json", args.output)
    return 0 if rep.passed else EXIT_VERIFY_FAILED


def cmd_report(args) -> int:
    with open(args.input) as fh:
        rows = experiment.parse_report_csv(fh.read())
    if args.max_overhead is not None:
        over = [r for r in rows if r.config != "baseline" and
                max(r.current_drop_pct, r.delay_inc_pct, r.power_inc_pct) >= args.max_overhead]
        for r in over:
            print(f"over bound: {r.node} {r.rows}x{r.cols} {r.config}", file=sys.stderr)
    text = experiment.emit_report(rows, args.format)
    _emit(text, args.format, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="seed for weights, inputs, keys and watermarks")
    common.add_argument("--config", help="INI file with node-parameter overrides")
    common.add_argument("--output", "-o", help="write the result here instead of stdout")
    common.add_argument("--log-level", default="WARNING")

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument("--dataset", default="uniform-random", choices=("uniform-random", "lora", "csv", "mnist"))
    data_opts.add_argument("--dataset-path", help="IDX image file or CSV vectors")
    data_opts.add_argument("--batch", type=int, default=experiment.DEFAULT_BATCH)

    p = argparse.ArgumentParser(prog="xbarsec", description="Secured memristive crossbar experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, data_opts], help="simulate one configuration")
    s.add_argument("--node", default="45nm")
    s.add_argument("--size", type=_size, default=(10, 10))
    s.add_argument("--security", default="both", choices=experiment.CONFIGS)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common, data_opts], help="node x size x config grid with overheads")
    s.add_argument("--nodes", nargs="+", default=list(KNOWN_NODES))
    s.add_argument("--sizes", nargs="+", type=_size, default=list(experiment.PAPER_SIZES))
    s.add_argument("--configs", nargs="+", default=list(experiment.CONFIGS), choices=experiment.CONFIGS)
    s.add_argument("--format", default="csv", choices=("csv", "json"))
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("calibrate", parents=[common], help="fit free parameters to target overheads")
    s.add_argument("--targets", nargs=3, type=float, default=list(experiment.TARGET_OVERHEADS),
                   metavar=("CURRENT_DROP", "DELAY_INC", "POWER_INC"))
    s.add_argument("--node", default="45nm")
    s.add_argument("--size", type=_size, default=(256, 128))
    s.add_argument("--free-params", nargs="+", default=list(experiment.CALIBRATION_PARAMS),
                   choices=experiment.CALIBRATION_PARAMS)
    s.add_argument("--max-evals", type=int, default=200)
    s.add_argument("--write-config", help="write the fitted parameters for every node to this INI file")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("attack", parents=[common], help="white-box extraction against a permuted array")
    s.add_argument("--node", default="45nm")
    s.add_argument("--size", type=_size, default=(128, 10))
    s.add_argument("--batch", type=int, default=64, help="probe inputs for the clone MSE")
    s.add_argument("--rate", type=float, default=1e9, help="attacker key trials per second")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("keygen", parents=[common], help="generate a permutor key")
    s.add_argument("--rows", type=int, required=True)
    s.set_defaults(func=cmd_keygen)

    wm = sub.add_parser("watermark", help="embed or verify watermark columns")
    wsub = wm.add_subparsers(dest="action", required=True)
    s = wsub.add_parser("embed", parents=[common])
    s.add_argument("--node", default="45nm")
    s.add_argument("--size", type=_size, default=(10, 10))
    s.add_argument("--placement", default="end", choices=PLACEMENTS)
    s.add_argument("--tolerance", type=float, default=0.02)
    s.add_argument("--permutor", action="store_true", help="also attach a seeded permutor key")
    s.add_argument("--array", required=True, help="output CSV for the programmed grid")
    s.add_argument("--spec", required=True, help="output JSON watermark record")
    s.set_defaults(func=cmd_wm_embed)
    s = wsub.add_parser("verify", parents=[common])
    s.add_argument("--array", required=True)
    s.add_argument("--spec", required=True)
    s.set_defaults(func=cmd_wm_verify)

    s = sub.add_parser("report", parents=[common], help="re-emit a sweep CSV, optionally flagging overheads")
    s.add_argument("--input", required=True)
    s.add_argument("--format", default="csv", choices=("csv", "json"))
    s.add_argument("--max-overhead", type=float, help="flag secured rows with any overhead at or above this %%")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # report every failure as one machine-readable line
        err = {"error": str(exc), "type": type(exc).__name__, "command": args.command}
        if isinstance(exc, experiment.CalibrationError):
            err["residual"] = exc.residual
        print(json.dumps(err), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
