"""Command-line entry point.

Subcommands: ``prepare``, ``train``, ``sweep``, ``tune``, ``bounds``.
Exit codes: 0 success, 1 input error, 2 divergence, 3 transport failure.

``train --listen HOST:PORT`` runs the passive party and ``train --connect
HOST:PORT`` the active party of a two-process session; each process reads
only its own CSV. The two CSVs must already list the same ids in the same
order (``prepare`` writes them that way).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import data as data_mod
from .errors import DivergenceError, InputError, TransportError
from .glm import make_loss, make_penalty
from .harness import (MODES, BENCHMARK_DEFAULTS, ExperimentConfig, bound_report, cross_validate,
                      emit_metrics, load_pair, run_experiment, summarize, tune)
from .privacy import NO_PRIVACY, Hyperparams
from .protocol import ActiveParty, PassiveParty
from .transport import Listener, connect, parse_address


EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_TRANSPORT = 0, 1, 2, 3

log = logging.getLogger("hdpvfl")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which here means divergence.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _epsilon(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number or 'inf': {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("epsilon must be > 0")
    return value


def _list_of(kind):
    def parse(text: str):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    d = BENCHMARK_DEFAULTS
    p.add_argument("--loss", default="logistic", help="logistic, least_squares, l2_svm, edf:<family>")
    p.add_argument("--penalty", default="l2", choices=["l2", "l1", "elastic_net"])
    p.add_argument("--lambda", dest="lam", type=float, default=0.001)
    p.add_argument("--mu", type=float, default=0.0, help="elastic-net L2 share")
    p.add_argument("--delta", type=float, default=d.delta)
    p.add_argument("--eta", type=float, default=d.learning_rate)
    p.add_argument("--batch", type=int, default=d.batch_size)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--clip", type=float, default=d.clip_norm)
    p.add_argument("--seed", type=int, default=d.seed)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--active-csv")
    p.add_argument("--passive-csv")
    p.add_argument("--dataset", help="bundled benchmark used when no CSVs are given (breast)")


def _hyperparams(args, epsilon: float = NO_PRIVACY) -> Hyperparams:
    return Hyperparams(epsilon=epsilon, delta=args.delta, learning_rate=args.eta,
                       batch_size=args.batch, epochs=args.epochs, clip_norm=args.clip,
                       seed=args.seed)


def _config(args, modes, epsilons, repeats) -> ExperimentConfig:
    make_loss(args.loss)
    return ExperimentConfig(modes=tuple(modes), h=_hyperparams(args), loss=args.loss,
                            penalty=args.penalty, lam=args.lam, mu=args.mu,
                            epsilon_grid=tuple(epsilons), repeats=repeats,
                            active_csv=args.active_csv, passive_csv=args.passive_csv,
                            out=None)


def _pair(args, cfg: ExperimentConfig):
    if args.active_csv or args.passive_csv:
        return load_pair(cfg)
    if args.dataset:
        return data_mod.benchmark_pair(args.dataset, seed=args.seed)
    raise InputError("give --active-csv and --passive-csv, or --dataset")


def _print_summary(records) -> None:
    print("mode\tepsilon\truns\tdiverged\tmean_accuracy\tstd_accuracy")
    for row in summarize(records):
        mean = "nan" if row["mean_accuracy"] is None else f"{row['mean_accuracy']:.4f}"
        std = "nan" if row["std_accuracy"] is None else f"{row['std_accuracy']:.4f}"
        print(f"{row['mode']}\t{row['epsilon']:g}\t{row['runs']}\t{row['diverged']}\t{mean}\t{std}")


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n",
                          encoding="utf-8")


def cmd_prepare(args) -> int:
    if args.input:
        full = data_mod.load_raw_table(args.input, standardize=args.standardize)
        name = args.dataset or Path(args.input).stem
    elif args.dataset:
        if args.dataset.lower() != "breast":
            raise InputError(f"dataset {args.dataset!r} is not bundled; pass --input")
        full, name = data_mod.load_breast(), "breast"
    else:
        raise InputError("give --input or --dataset")
    id_counted = False
    if args.d_active is not None:
        d_active = args.d_active
    elif name.lower() in data_mod.DATASET_SPLITS:
        n_attr = len({c.split("=", 1)[0] for c in full.column_names})
        d_active, id_counted = data_mod.default_active_attributes(name, n_attr)
    else:
        raise InputError("--d-active is required for datasets without a default split")
    pair = data_mod.prepare(full, args.out, d_active=d_active, seed=args.seed, dataset=name,
                            standardize_targets=args.loss in ("least_squares",),
                            id_counted=id_counted)
    print(f"wrote {pair.n} aligned rows: {pair.active.d} active / {pair.passive.d} passive "
          f"columns to {args.out}")
    return EXIT_OK


def _train_wire(args) -> int:
    host, port = parse_address(args.listen or args.connect)
    if args.listen:
        if not args.passive_csv:
            raise InputError("--listen runs the passive party and needs --passive-csv")
        table = data_mod.load_csv(args.passive_csv, has_label=False)
        listener = Listener(host, port)
        log.info("passive party listening on %s:%d", *listener.address)
        channel = listener.accept(args.timeout)
        w = PassiveParty(table.X).run(channel)
        channel.close()
        result = {"role": "passive", "w_b": w.tolist(), "columns": table.column_names}
    else:
        if not args.active_csv:
            raise InputError("--connect runs the active party and needs --active-csv")
        table = data_mod.load_csv(args.active_csv, has_label=True)
        h = _hyperparams(args, args.epsilon)
        party = ActiveParty(table.X, table.y, h, make_loss(args.loss),
                            make_penalty(args.penalty, args.lam, args.mu))
        channel = connect(host, port, timeout=args.timeout, retry_for=args.timeout or 0.0)
        w = party.run(channel)
        channel.close()
        result = {"role": "active", "w_a": w.tolist(), "columns": table.column_names,
                  "history": party.history}
        for row in party.history:
            print(f"epoch {row['epoch']}: train_loss={row['train_loss']:.6f}")
    if args.out:
        _write_json(result, args.out)
    print(f"{result['role']} party finished")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.listen and args.connect:
        raise InputError("--listen and --connect are mutually exclusive")
    if args.listen or args.connect:
        return _train_wire(args)
    cfg = _config(args, [args.mode], [args.epsilon], args.repeats)
    records = run_experiment(cfg, _pair(args, cfg))
    if args.out:
        emit_metrics(records, args.out)
    _print_summary(records)
    return EXIT_DIVERGED if any(r.status == "diverged" for r in records) else EXIT_OK


def cmd_sweep(args) -> int:
    modes = args.mode or ["vfl_dp"]
    cfg = _config(args, modes, args.epsilon, args.repeats)
    records = run_experiment(cfg, _pair(args, cfg))
    if args.out:
        emit_metrics(records, args.out)
    _print_summary(records)
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = replace(_config(args, ["vfl_dp"], [args.epsilon], 1), folds=args.folds)
    pair = _pair(args, cfg)
    for row in cross_validate(cfg, pair, args.e_grid, args.k_grid):
        print(f"e={row['epochs']}\tk={row['clip_norm']:g}\tcv_accuracy={row['cv_accuracy']:.4f}")
    best = tune(cfg, args.e_grid, args.k_grid, pair)
    print(f"selected epochs={best.epochs} clip={best.clip_norm:g}")
    if args.out:
        _write_json(best.to_dict(), args.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    h = _hyperparams(args, args.epsilon).resolve(args.n)
    report = bound_report(h, make_loss(args.loss))
    print(report.format())
    if args.out:
        _write_json({k: v for k, v in report.__dict__.items()}, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdpvfl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="split and normalise a raw labelled CSV")
    p.add_argument("--input", help="raw CSV with an 'id' first column and a 'label' column")
    p.add_argument("--dataset", help="benchmark name; selects the default active/passive split")
    p.add_argument("--d-active", type=int, help="attributes given to the active party")
    p.add_argument("--standardize", action="store_true", help="z-score feature columns first")
    p.add_argument("--loss", default="logistic", help="least_squares also standardises targets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="one training run")
    _add_model_flags(p)
    _add_data_flags(p)
    p.add_argument("--mode", default="vfl_dp", choices=MODES)
    p.add_argument("--epsilon", type=_epsilon, default=BENCHMARK_DEFAULTS.epsilon)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", help="metrics file (or weights JSON in wire mode)")
    p.add_argument("--listen", metavar="HOST:PORT", help="run the passive party as a server")
    p.add_argument("--connect", metavar="HOST:PORT", help="run the active party as a client")
    p.add_argument("--timeout", type=float, default=60.0, help="wire-mode timeout in seconds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="accuracy over an epsilon grid")
    _add_model_flags(p)
    _add_data_flags(p)
    p.add_argument("--mode", action="append", choices=MODES,
                   help="repeatable; defaults to vfl_dp")
    p.add_argument("--epsilon", type=_list_of(_epsilon), default=[0.1, 1.0, 10.0, NO_PRIVACY],
                   help="comma-separated, e.g. 0.1,1,10,inf")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--out", help="metrics file; a .summary.tsv is written alongside")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tune", help="cross-validate epochs and clipping bound")
    _add_model_flags(p)
    _add_data_flags(p)
    p.add_argument("--epsilon", type=_epsilon, default=BENCHMARK_DEFAULTS.epsilon)
    p.add_argument("--e-grid", type=_list_of(int), default=[5, 10, 15])
    p.add_argument("--k-grid", type=_list_of(float), default=[0.1, 0.5, 1.0])
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", help="write the selected hyperparameters as JSON")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("bounds", help="sensitivities, noise scales and utility bound")
    _add_model_flags(p)
    p.add_argument("--epsilon", type=_epsilon, default=BENCHMARK_DEFAULTS.epsilon)
    p.add_argument("--n", type=int, required=True, help="number of aligned training samples")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InputError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
