"""Command-line entry point: ``fortune <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every command writes into ``--out`` through a staging directory, so a failed
run never leaves partial outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .corpus import CANONICAL_SEED, build_corpus
from .counters import APPENDIX_SCORES, ChannelScore, evaluate_channels, scores_csv, select_top
from .detector import (
    DetectorConfig, error_stream, first_alarm, flag_stream, latency_ms, parse_d_grid,
    parse_tau_grid,
)
from .experiment import compare, evaluate_model
from .modelio import ModelFormatError, format_model, load_model
from .report import config_hash, render_report, write_files
from .rnn import TrainConfig, TrainingError, evaluate_mse, train
from .synth import (
    attack_footprint, attack_from_dict, inject, parse_spec_text, synth_attack, synth_benign,
    workload_from_dict,
)
from .trace import TraceError, format_trace, load_trace, load_trace_dir, trim_idle

log = logging.getLogger("fortune")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _cell(text):
    t = str(text).lower()
    if t not in ("lstm", "gru"):
        raise argparse.ArgumentTypeError(f"cell must be lstm or gru, got {text!r}")
    return t.upper()


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common(p, out_required=True):
    p.add_argument("--config", help="key = value file; explicit flags override it")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", required=out_required, help="output directory")


def _training(p, hidden=128):
    p.add_argument("--window", type=int, default=100, help="sliding window W (default 100)")
    p.add_argument("--hidden", type=int, default=hidden, help=f"hidden units (default {hidden})")
    p.add_argument("--epochs", type=int, default=10, help="training epochs (default 10)")
    p.add_argument("--cell", type=_cell, default="LSTM", help="lstm or gru (default lstm)")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--trim-idle", type=_bool, nargs="?", const=True, default=False,
                   help="drop leading/trailing idle samples before training")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fortune", description="Counter-trace anomaly detection with "
                 "recurrent next-step predictors.")
    ap.add_argument("--version", action="version", version=f"fortune {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate trace-csv files from workload specs or the benchmark corpus")
    p.add_argument("specs", nargs="*", help="key = value workload spec files")
    p.add_argument("--corpus", action="store_true",
                   help="write the seeded benchmark corpus (train/ and test/) instead")
    p.add_argument("--n-train", type=int, default=36)
    p.add_argument("--n-benign", type=int, default=60)
    p.add_argument("--n-attack", type=int, default=30)
    _common(p)
    p.set_defaults(seed=None)

    p = sub.add_parser("train", help="train a predictor on benign traces")
    p.add_argument("--trace-dir", required=True)
    _training(p)
    _common(p)

    p = sub.add_parser("detect", help="flag one trace with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True, help="trace-csv file")
    p.add_argument("--tau", type=float, required=True, help="error threshold")
    p.add_argument("--decision", type=int, required=True, help="decision window D")
    _common(p)

    p = sub.add_parser("sweep", help="sweep (tau, D) over labelled test traces")
    p.add_argument("--model", required=True)
    p.add_argument("--trace-dir", required=True, help="directory of labelled test traces")
    p.add_argument("--tau-grid", help="lo:hi:n, log-spaced (default: from the observed errors)")
    p.add_argument("--d-grid", default="1:100:1", help="lo:hi:step (default 1:100:1)")
    _common(p)

    p = sub.add_parser("window-sweep", help="held-out error versus window size")
    p.add_argument("--trace-dir", required=True)
    p.add_argument("--windows", type=_int_list, default=list(range(25, 301, 25)),
                   help="ascending comma-separated W values (default 25..300 step 25)")
    p.add_argument("--holdout", type=int, default=4, help="traces held out for scoring")
    _training(p, hidden=64)
    _common(p)

    p = sub.add_parser("measure-sweep", help="held-out error versus number of training traces")
    p.add_argument("--trace-dir", required=True)
    p.add_argument("--counts", type=_int_list, default=[1, 2, 4, 8, 16, 24, 36],
                   help="ascending comma-separated trace counts")
    p.add_argument("--holdout", type=int, default=4, help="traces held out for scoring")
    _training(p, hidden=64)
    _common(p)

    p = sub.add_parser("select", help="rank channels by per-channel detection F-score")
    p.add_argument("--benign-dir")
    p.add_argument("--attack-dir")
    p.add_argument("--appendix", action="store_true",
                   help="rank the published 36-counter score table instead of training")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--subset-size", type=int, default=3)
    p.add_argument("--decision", type=int, default=10, help="decision window D for scoring")
    _training(p, hidden=32)
    _common(p)

    p = sub.add_parser("compare", help="RNN detector versus CPD, DTW and Gaussian-pdf baselines")
    p.add_argument("--model", required=True)
    p.add_argument("--trace-dir", required=True, help="directory of labelled test traces")
    p.add_argument("--train-dir", help="benign traces used to calibrate the baselines")
    p.add_argument("--baselines", help="key = value baseline config (cpd.*, dtw.*, pdf.*)")
    p.add_argument("--techniques", default="CPD,DTW,Normal Dist.",
                   help="comma-separated baselines to run; empty for RNN only")
    p.add_argument("--tau-grid")
    p.add_argument("--d-grid", default="1:100:1")
    _common(p)
    return ap


def _read_config(path) -> dict:
    if not os.path.isfile(path):
        raise TraceError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_spec_text(fh.read())


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a file argument")
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv):
    """Parse ``argv``; values from ``--config`` become defaults that flags override."""
    ap = build_parser()
    path = _config_path(argv)
    choices = ap._subparsers._group_actions[0].choices
    command = next((t for t in argv if t in choices), None)
    if path and command:
        cfg = _read_config(path)
        sub = choices[command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, val in cfg.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {command}")
            act = known[dest]
            if act.type is not None:
                try:
                    val = act.type(val)
                except (argparse.ArgumentTypeError, ValueError) as e:
                    raise UsageError(f"config key {key!r}: {e}") from None
            elif act.const is True and act.nargs == 0:  # store_true flags
                val = val.lower() in ("1", "true", "yes", "on")
            defaults[dest] = val
        sub.set_defaults(**defaults)
        for act in sub._actions:
            if act.dest in defaults:
                act.required = False
    args = ap.parse_args(argv)
    if args.command is None:
        raise UsageError("fortune: a command is required (see --help)")
    return args


def _echo(args) -> dict:
    """Run parameters for summaries: everything except output location and verbosity."""
    skip = {"out", "verbose", "config", "func"}
    return {k: (v if not isinstance(v, list) else list(v))
            for k, v in sorted(vars(args).items()) if k not in skip}


def _load_dir(path, what="trace"):
    if not path or not os.path.isdir(path):
        raise TraceError(f"{what} directory not found: {path}")
    traces = load_trace_dir(path)
    if not traces:
        raise TraceError(f"no *.csv traces in {path}")
    return traces


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed)


def _check_training(args):
    if args.window < 1:
        raise ValueError("--window must be >= 1")
    if args.hidden < 1:
        raise ValueError("--hidden must be >= 1")


# commands

def cmd_synth(args):
    files = {}
    if args.corpus:
        seed = CANONICAL_SEED if args.seed is None else args.seed
        c = build_corpus(seed=seed, n_train=args.n_train, n_benign=args.n_benign,
                         n_attack=args.n_attack)
        for i, (tr, kind) in enumerate(zip(c.train, _train_kinds(c))):
            files[f"train/train-{kind}-{i:03d}.csv"] = format_trace(tr)
        for i, (tr, kind) in enumerate(zip(c.benign, c.benign_kinds)):
            files[f"test/{kind}-{i:03d}.csv"] = format_trace(tr)
        for i, (tr, kind) in enumerate(zip(c.attack, c.attack_kinds)):
            files[f"test/attack-{kind}-{i:03d}.csv"] = format_trace(tr)
        files["corpus.json"] = json.dumps({"seed": seed, **c.meta}, indent=2, sort_keys=True) + "\n"
    else:
        if not args.specs:
            raise UsageError("synth: give spec files or --corpus")
        for path in args.specs:
            spec_text = _read_config(path)
            if args.seed is not None:
                spec_text["seed"] = str(args.seed)
            spec = workload_from_dict(spec_text)
            attack = attack_from_dict(spec_text)
            stem = os.path.splitext(os.path.basename(path))[0]
            if attack is None:
                tr = synth_benign(spec)
            elif "attack_offset" in spec_text:
                tr, _ = inject(synth_benign(spec), attack_footprint(attack, spec),
                               int(spec_text["attack_offset"]))
            else:
                tr = synth_attack(attack, spec)
            files[f"{stem}.csv"] = format_trace(tr)
    write_files(args.out, files)
    print(f"wrote {len(files)} files to {args.out}")


def _train_kinds(c):
    from .corpus import FAMILIES
    return [FAMILIES[i % len(FAMILIES)] for i in range(len(c.train))]


def _prepare(traces, args):
    return [trim_idle(t) for t in traces] if args.trim_idle else traces


def cmd_train(args):
    _check_training(args)
    traces = _prepare(_load_dir(args.trace_dir), args)
    cfg = _train_cfg(args)
    header = (f"# cell={args.cell} W={args.window} h={args.hidden} epochs={args.epochs} "
              f"seed={args.seed} traces={len(traces)} (reference setting: W=100, 10 epochs)")
    print(header)
    res = train(args.cell, traces, args.window, args.hidden, cfg,
                progress=lambda e, v: print(f"epoch {e} validation_error {v:.6g}"))
    lines = [header, "epoch,val_error"]
    lines += [f"{i},{v:.10g}" for i, v in enumerate(res.curve, start=1)]
    write_files(args.out, {"model.txt": format_model(res.model),
                           "train_log.csv": "\n".join(lines) + "\n"})
    print(f"model written to {os.path.join(args.out, 'model.txt')}")


def cmd_detect(args):
    model = load_model(args.model)
    trace = load_trace(args.trace)
    cfg = DetectorConfig(args.tau, args.decision)
    status = "ok"
    if trace.T < model.W + 1:
        flags, errs = np.zeros(0, dtype=np.int8), np.zeros(0)
        status = f"warning: trace length {trace.T} shorter than W+1={model.W + 1}"
    else:
        es = error_stream(model, trace)
        errs = es.errors
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = flag_stream(es, cfg)
        flags, status = res.flags, res.status
        if trace.T < model.W + cfg.D:
            status = f"warning: trace length {trace.T} shorter than W+D={model.W + cfg.D}"
    idx = first_alarm(flags)
    lines = ["t,error,flag"]
    lines += [f"{model.W + k},{e:.10g},{f}" for k, (e, f) in enumerate(zip(errs, flags))]
    first = None if idx is None else model.W + idx
    summary = {
        "status": status, "tau": cfg.tau, "D": cfg.D, "trace": os.path.basename(args.trace),
        "first_alarm_sample": first,
        "first_alarm_ms": latency_ms(first, trace.sample_period),
        "alarm_intervals": [[model.W + a, model.W + b] for a, b in _intervals(flags)],
    }
    write_files(args.out, {"flags.csv": "\n".join(lines) + "\n",
                           "detect.json": json.dumps(summary, indent=2, sort_keys=True) + "\n"})
    if status != "ok":
        print(status, file=sys.stderr)
    if first is None:
        print("first alarm: none")
    else:
        print(f"first alarm: sample {first} ({summary['first_alarm_ms']} ms)")


def _intervals(flags):
    from .detector import alarm_intervals
    return alarm_intervals(flags) if len(flags) else []


def _split_labelled(traces):
    benign = [t for t in traces if t.label == "benign"]
    attack = [t for t in traces if t.label == "attack"]
    if not benign or not attack:
        raise TraceError("need both benign- and attack-labelled traces "
                         f"(found {len(benign)} benign, {len(attack)} attack)")
    return benign, attack


def _evaluate(args):
    model = load_model(args.model)
    benign, attack = _split_labelled(_load_dir(args.trace_dir))
    tau_grid = parse_tau_grid(args.tau_grid) if args.tau_grid else None
    ev = evaluate_model(model, benign, attack, tau_grid, parse_d_grid(args.d_grid))
    return model, benign, attack, ev


def _summary(model, ev):
    return {"cell": model.kind, "W": model.W, "h": model.h, "model_meta": model.meta,
            "auc": ev.roc.auc, "roc_score": ev.roc.score}


def cmd_sweep(args):
    model, _, _, ev = _evaluate(args)
    far = {(g, model.kind): r for g, r in ev.false_alarms.items()}
    render_report(args.out, config=_echo(args), sweep=ev.sweep,
                  rocs={model.kind.lower(): ev.roc}, false_alarms=far,
                  summary=_summary(model, ev))
    sw = ev.sweep
    print(f"operating point tau={sw.tau:.6g} D={sw.D} F={sw.fscore:.4f} "
          f"FPR={sw.fpr:.4f} FNR={sw.fnr:.4f} AUC={ev.roc.auc:.4f}")


def _holdout_split(traces, holdout):
    if not 1 <= holdout < len(traces):
        raise ValueError(f"--holdout must lie in [1, {len(traces) - 1}] for {len(traces)} traces")
    return traces[:-holdout], traces[-holdout:]


def _ascending(values, flag):
    if not values or any(b <= a for a, b in zip(values, values[1:])) or values[0] < 1:
        raise ValueError(f"{flag} must be positive and strictly ascending, got {values}")


def cmd_window_sweep(args):
    _check_training(args)
    _ascending(args.windows, "--windows")
    fit, held = _holdout_split(_prepare(_load_dir(args.trace_dir), args), args.holdout)
    lines = ["W,train_error,heldout_error,epochs_run"]
    for W in args.windows:
        res = train(args.cell, fit, W, args.hidden, _train_cfg(args))
        err = evaluate_mse(res.model, held)
        lines.append(f"{W},{res.curve[-1]:.10g},{err:.10g},{len(res.curve)}")
        print(f"W={W} heldout_error={err:.6g}")
    write_files(args.out, {"window_sweep.csv": "\n".join(lines) + "\n",
                           "README-run.txt": _run_readme(args)})


def cmd_measure_sweep(args):
    _check_training(args)
    _ascending(args.counts, "--counts")
    fit, held = _holdout_split(_prepare(_load_dir(args.trace_dir), args), args.holdout)
    if args.counts[-1] > len(fit):
        raise ValueError(f"--counts goes up to {args.counts[-1]} but only {len(fit)} "
                         "training traces remain after the holdout")
    lines = ["measurements,train_error,heldout_error,epochs_run"]
    for n in args.counts:
        res = train(args.cell, fit[:n], args.window, args.hidden, _train_cfg(args))
        err = evaluate_mse(res.model, held)
        lines.append(f"{n},{res.curve[-1]:.10g},{err:.10g},{len(res.curve)}")
        print(f"measurements={n} heldout_error={err:.6g}")
    write_files(args.out, {"measure_sweep.csv": "\n".join(lines) + "\n",
                           "README-run.txt": _run_readme(args)})


def _run_readme(args):
    echo = _echo(args)
    lines = ["fortune run", f"command: {args.command}", f"config_hash: {config_hash(echo)}",
             f"seed: {args.seed}"]
    return "\n".join(lines) + "\n"


def cmd_select(args):
    if args.appendix:
        scores = [ChannelScore(n, f, float("nan"), 0) for n, f in APPENDIX_SCORES.items()]
    else:
        _check_training(args)
        benign = _load_dir(args.benign_dir, "benign")
        attack = _load_dir(args.attack_dir, "attack")
        cfg = _train_cfg(args)
        scores = evaluate_channels(benign, attack, args.subset_size, args.window, args.hidden,
                                   args.decision, cfg)
    top = select_top(scores, args.k)
    write_files(args.out, {"ranking.csv": scores_csv(scores),
                           "selected.txt": "\n".join(top) + "\n",
                           "README-run.txt": _run_readme(args)})
    print("selected: " + ", ".join(top))


def cmd_compare(args):
    model, benign, attack, ev = _evaluate(args)
    bcfg = _read_config(args.baselines) if args.baselines else {}
    techniques = tuple(t.strip() for t in args.techniques.split(",") if t.strip())
    unknown = set(techniques) - {"CPD", "DTW", "Normal Dist."}
    if unknown:
        raise UsageError(f"unknown techniques: {', '.join(sorted(unknown))}")
    train_traces = _load_dir(args.train_dir, "training") if techniques else []
    table = compare(ev, train_traces, benign, attack, bcfg, techniques)
    render_report(args.out, config={**_echo(args), "baseline_config": bcfg}, sweep=ev.sweep,
                  rocs={model.kind.lower(): ev.roc}, comparison=table,
                  summary=_summary(model, ev))
    print(table.text(), end="")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "detect": cmd_detect,
    "sweep": cmd_sweep,
    "window-sweep": cmd_window_sweep,
    "measure-sweep": cmd_measure_sweep,
    "select": cmd_select,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except (TraceError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="raise", invalid="raise", divide="ignore", under="ignore"):
            COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TraceError, ModelFormatError, ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
