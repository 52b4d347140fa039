"""Command-line entry point: ``segfree <gen-data|train|simulate|evaluate|curve>``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or malformed files), 3 runtime error.  Failures print one JSON
record on stderr.
"""

import argparse
import json
import os
import sys

from .evaluation import emit_curve, read_curve
from .exceptions import ConfigurationError, SegFreeError
from .experiment import (
    ExperimentConfig,
    evaluate_outcomes,
    make_data,
    read_data,
    read_models,
    read_traces,
    simulate,
    train_models,
    write_data,
    write_models,
    write_report,
    write_traces,
)

OUTPUT_ROOT_ENV = "SEGFREE_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser():
    parser = _Parser(prog="segfree", description="Segmentation-free streaming translation experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("gen-data", "generate the synthetic train/dev/test corpora and lexicon"),
        ("train", "train the reverse model and length regression, tune feature weights"),
        ("simulate", "run streaming sessions for every mode, k and test document"),
        ("evaluate", "score traces: BLEU, Average Lagging, significance, curve"),
        ("curve", "rewrite the BLEU-vs-AL curve from an evaluation report"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--output-dir", help="run directory (relative paths resolve under $%s)" % OUTPUT_ROOT_ENV)
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field (JSON value)")
        if name == "simulate":
            p.add_argument("--modes", nargs="+")
            p.add_argument("--k-min", type=int)
            p.add_argument("--k-max", type=int)
        if name == "curve":
            p.add_argument("--systems", nargs="+", help="keep only these systems")
            p.add_argument("--out", help="curve file path (default: <run>/eval/curve.csv)")
    return parser


def load_config(args):
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        data[key.replace("-", "_")] = _parse_value(value)
    for key in ("seed", "output_dir", "modes", "k_min", "k_max"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    try:
        return ExperimentConfig.from_dict(data)
    except (ConfigurationError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def run_dir(config):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(config.output_dir):
        return os.path.join(root, config.output_dir)
    return config.output_dir


def cmd_gen_data(config):
    out = os.path.join(run_dir(config), "data")
    data = make_data(config)
    write_data(data, out)
    return {"data_dir": out, "documents": {k: len(v) for k, v in data.splits.items()}}


def cmd_train(config):
    root = run_dir(config)
    data = read_data(os.path.join(root, "data"))
    models = train_models(config, data)
    write_models(models, os.path.join(root, "models"))
    return {"models_dir": os.path.join(root, "models"), **models.summary()}


def cmd_simulate(config):
    root = run_dir(config)
    data = read_data(os.path.join(root, "data"))
    needs_models = any(m in ("segfree", "naive") for m in config.modes)
    models = read_models(config, os.path.join(root, "models")) if needs_models else None
    outcomes = simulate(config, data, models)
    manifest = write_traces(outcomes, os.path.join(root, "traces"))
    aborted = [m for m in manifest if m["status"] != "ok"]
    return {"traces_dir": os.path.join(root, "traces"), "traces": len(manifest), "aborted": len(aborted)}


def cmd_evaluate(config):
    root = run_dir(config)
    data = read_data(os.path.join(root, "data"))
    outcomes, missing = read_traces(os.path.join(root, "traces"))
    report, results = evaluate_outcomes(config, data, outcomes, missing=missing)
    write_report(report, results, os.path.join(root, "eval"))
    return {"eval_dir": os.path.join(root, "eval"), "status": report["status"], "systems": len(report["systems"])}


def cmd_curve(config, systems=None, out=None):
    root = run_dir(config)
    report_path = os.path.join(root, "eval", "report.json")
    if not os.path.exists(report_path):
        raise ConfigurationError(f"missing report {report_path}; run evaluate first")
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    rows = [s for s in report["systems"] if not systems or s["system"] in systems]
    path = out or os.path.join(root, "eval", "curve.csv")
    emit_curve(rows, path)
    return {"curve": path, "rows": len(read_curve(path))}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def _fail(code, kind, message, command=None):
    record = {"error": kind, "message": message, "exit_code": code, "command": command}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        config = load_config(args)
        if command == "curve":
            result = cmd_curve(config, args.systems, args.out)
        else:
            result = COMMANDS[command](config)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc), command)
    except (ConfigurationError, OSError, json.JSONDecodeError, KeyError) as exc:
        return _fail(EXIT_DATA, "data", f"{type(exc).__name__}: {exc}", command)
    except SegFreeError as exc:
        return _fail(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}", command)
    except Exception as exc:  # noqa: BLE001 - every failure must yield a record
        return _fail(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}", command)
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
