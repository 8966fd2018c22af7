"""Command line interface.

Exit codes: 0 success, 2 partial recovery, 3 budget exhausted, 4 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

import numpy as np

from . import network
from .deeper import ExtractionConfig, extract_network
from .harness import ExperimentConfig, report, run_sweep
from .isomorphism import align
from .layer1 import Layer1Config, recover_layer1
from .model import RecoveredModel
from .network import ConfigError
from .oracle import BudgetExhausted, Oracle, OracleIOError, QueryBudget, connect, serve
from .render import render_boundaries_2d

logger = logging.getLogger("relu_extract")

EXIT_OK, EXIT_PARTIAL, EXIT_BUDGET, EXIT_CONFIG = 0, 2, 3, 4


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def cmd_generate(args) -> int:
    net = network.init_he(args.widths, args.seed)
    _write_net(net, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train_memorization

    net = network.load(args.net) if args.net else network.init_he(args.widths, args.seed)
    res = train_memorization(net, n_points=args.n_points, epochs=args.epochs, seed=args.seed,
                             batch_size=args.batch_size or None)
    logger.info("training accuracy %.4f, loss %.4g", res.accuracy, res.loss)
    _write_net(res.net, args.out)
    return EXIT_OK


def _write_net(net, out):
    if out:
        network.save(net, out)
    else:
        print(network.dumps(net))


def cmd_serve(args) -> int:
    net = network.load(args.net)
    server = serve(net, args.listen, background=True)
    print(server.endpoint, flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


def _oracle(args) -> Oracle:
    budget = QueryBudget(args.budget)
    if args.oracle:
        return connect(args.oracle, budget)
    if args.net:
        return Oracle.from_network(network.load(args.net), budget)
    raise ConfigError("extract needs --oracle tcp://HOST:PORT or --net FILE")


def cmd_extract(args) -> int:
    oracle = _oracle(args)
    exhausted = False
    try:
        if args.layers == 1:
            hint = args.widths_hint[0] if args.widths_hint else None
            model = RecoveredModel(oracle.input_dim, [])
            try:
                est, _ = recover_layer1(oracle, Layer1Config(target=hint), np.random.default_rng(args.seed))
                model.complete = True
            except BudgetExhausted as exc:
                est, exhausted = exc.partial[0], True
                model.notes.append(str(exc))
            model.layers.append(est)
            model.query_count = oracle.query_count
            model.queries_by_stage["layer1"] = oracle.query_count
        else:
            cfg = ExtractionConfig(widths_hint=args.widths_hint, max_layers=args.layers,
                                   recover_output=args.layers is None, seed=args.seed)
            model = extract_network(oracle, cfg)
            cap = oracle.budget.max_queries
            exhausted = cap is not None and oracle.query_count >= cap
    finally:
        oracle.close()

    if args.out:
        model.save(args.out)
        if args.layers == 1:
            Path(str(args.out) + ".provenance.json").write_text(json.dumps(model.provenance_records()))
    else:
        print(model.dumps())
    if args.report:
        rep = {"summary": model.summary()}
        if args.truth:
            rep["alignment"] = align(model, network.load(args.truth), n_samples=args.samples, seed=args.seed).to_dict()
        Path(args.report).write_text(json.dumps(rep, indent=2, default=float) + "\n")
    logger.info("queries: %d  complete: %s", model.query_count, model.complete)
    if exhausted:
        return EXIT_BUDGET
    return EXIT_OK if model.complete else EXIT_PARTIAL


def cmd_compare(args) -> int:
    est = RecoveredModel.load(args.est)
    truth = network.load(args.truth)
    rep = align(est, truth, n_samples=args.samples, seed=args.seed)
    line = json.dumps(rep.to_dict(), default=float)
    if args.out:
        with open(args.out, "a") as fh:
            fh.write(line + "\n")
    else:
        print(line)
    print(rep.table())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed_given:
        cfg.seeds = [args.seed]
    if args.budget is not None:
        cfg.budget = args.budget
    if args.out:
        cfg.out_dir = args.out
    records = run_sweep(cfg)
    paths = report(records, cfg)
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return EXIT_PARTIAL if any(r.partial for r in records) else EXIT_OK


def cmd_render(args) -> int:
    net = network.load(args.net) if args.net else network.init_he(args.widths, args.seed)
    svg, csv_path, lines = render_boundaries_2d(net, tuple(args.bbox), args.resolution, args.out or "boundaries")
    print(f"{len(lines)} polylines -> {svg}, {csv_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--budget", type=int, default=None, help="maximum number of oracle queries")
    common.add_argument("--out", default=None, help="output file (or directory for sweep)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="relu-extract", description="Recover ReLU network weights from queries.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="random He-initialized network")
    g.add_argument("--widths", type=_ints, required=True, help="e.g. 10,10,10,2")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train on the random memorization task")
    t.add_argument("--net", help="start from this network file")
    t.add_argument("--widths", type=_ints, default=[10, 20, 20, 2])
    t.add_argument("--n-points", type=int, default=1000)
    t.add_argument("--epochs", type=int, default=1000)
    t.add_argument("--batch-size", type=int, default=32, help="0 for full batch")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("serve", parents=[common], help="answer queries over TCP")
    s.add_argument("--net", required=True)
    s.add_argument("--listen", default="127.0.0.1:0", help="HOST:PORT (port 0 picks one)")
    s.set_defaults(func=cmd_serve)

    e = sub.add_parser("extract", parents=[common], help="recover weights from an oracle")
    e.add_argument("--oracle", help="tcp://HOST:PORT")
    e.add_argument("--net", help="query a local network file instead")
    e.add_argument("--widths-hint", type=_ints, default=None, help="hidden widths, when known")
    e.add_argument("--layers", type=int, default=None, help="stop after this many hidden layers")
    e.add_argument("--report", help="write query counts (and errors with --truth) as JSON")
    e.add_argument("--truth", help="true network, for the report")
    e.add_argument("--samples", type=int, default=1000, help="points for the functional comparison")
    e.set_defaults(func=cmd_extract)

    c = sub.add_parser("compare", parents=[common], help="score an estimate against the truth")
    c.add_argument("--est", required=True)
    c.add_argument("--truth", required=True)
    c.add_argument("--samples", type=int, default=1000)
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", parents=[common], help="run an experiment config")
    w.add_argument("--config", required=True, help="JSON experiment config")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("render", parents=[common], help="draw boundaries of a 2-input network")
    r.add_argument("--net")
    r.add_argument("--widths", type=_ints, default=[2, 5, 5, 1])
    r.add_argument("--bbox", type=_floats, default=[-3.0, 3.0, -3.0, 3.0], help="xmin,xmax,ymin,ymax")
    r.add_argument("--resolution", type=int, default=512)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExhausted as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_BUDGET
    except OracleIOError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
