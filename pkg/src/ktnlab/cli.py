"""Command line entry point: ``ktnlab <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, synthgen
from . import experiments as ex
from .baselines import ep_predict
from .graph import GraphError
from .hgnn import forward
from .io import load_graph, load_truth, save_graph
from .ktn import split_source
from .metrics import accuracy

PRESETS = {
    "toy": synthgen.toy_config,
    "easy": lambda seed: synthgen.scenario_config("easy", seed),
    "hard": lambda seed: synthgen.scenario_config("hard", seed),
    "indirect": synthgen.indirect_config,
}


def resolve_config(args):
    """Experiment config from --config, then individual flag overrides."""
    cfg = ex.ExperimentConfig.load(args.config) if args.config else ex.ExperimentConfig()
    over = {}
    for flag, name in [("seed", "seed"), ("lam", "lam"), ("metapath_max_len", "metapath_max_len"),
                       ("loss_ktn", "loss_ktn"), ("sharing", "sharing"), ("epochs", "epochs")]:
        v = getattr(args, flag, None)
        if v is not None:
            over[name] = v
    if getattr(args, "deterministic", False):
        over["deterministic"] = True
    try:
        return cfg.replace(**over) if over else cfg
    except ex.ConfigError as exc:
        raise ex.ConfigError(f"command line: {exc}") from None


def synth_from_file(path, seed=None):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ex.ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ex.ConfigError(f"{path}:{exc.lineno}: malformed JSON: {exc.msg}") from None
    if "preset" in doc:
        name = doc["preset"]
        if name not in PRESETS:
            raise ex.ConfigError(f"{path}: field 'preset': unknown preset {name!r}")
        cfg = PRESETS[name](int(doc.get("seed", 0)))
    else:
        try:
            cfg = synthgen.SynthConfig.from_dict(doc)
        except TypeError as exc:
            raise ex.ConfigError(f"{path}: {exc}") from None
    if seed is not None:
        cfg.seed = seed
    try:
        cfg.check()
    except ValueError as exc:
        raise ex.ConfigError(f"{path}: {exc}") from None
    return cfg


def cmd_generate(args):
    cfg = synth_from_file(args.config, args.seed)
    sg = synthgen.generate(cfg)
    save_graph(sg.graph, args.out, truth=sg.truth)
    Path(args.out, "synth.json").write_text(cfg.to_json() + "\n")
    print(f"wrote {sum(sg.graph.num_nodes.values())} nodes to {args.out}")


def cmd_train(args):
    cfg = resolve_config(args)
    g = load_graph(args.graph)
    rel = ex.target_relevance(g, load_truth(args.graph), cfg.source, cfg.target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with ex.run_context(cfg.deterministic):
        if args.source_only:
            model, tlog = ex.run_source_only(g, cfg, rel)
            mapper = None
        else:
            model, mapper, tlog = ex.run_ktn(g, cfg, rel)
    ex.write_train_log(out / "train_log.csv", tlog)
    ex.write_grad_norms(out / "grad_norms.csv", tlog)
    ex.save_checkpoint(out / "checkpoint.json", model, mapper, cfg)
    ex.write_run_json(out / "run.json", "train", cfg,
                      {"graph": str(args.graph), "source_only": args.source_only,
                       "final": tlog.rows[-1]})
    print(json.dumps(tlog.rows[-1], default=ex.fmt))


def cmd_eval(args):
    model, mapper, _ = checkpoint.load(args.checkpoint)
    g = load_graph(args.graph)
    res = ex.evaluate(model, mapper, g, load_truth(args.graph), args.source, args.target)
    text = json.dumps(res, indent=2, default=ex.fmt)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_toy(args):
    cfg = resolve_config(args)
    res = ex.run_toy(cfg, args.out)
    for k, v in res["summary"].items():
        print(f"{k:20s} {v:.4f}")


def cmd_sweep(args):
    cfg = resolve_config(args)
    values = [float(v) for v in args.values.split(",")] if args.values else None
    seeds = range(args.seeds) if args.seeds else None
    rows = ex.run_sweep(args.scenario, args.pair, cfg, args.out, values, seeds, args.jobs)
    for (pair, method, sigma), acc in sorted(ex.sweep_means(rows).items()):
        print(f"{pair:12s} {method:4s} sigma={sigma:<5g} tgt_acc={acc:.4f}")


def cmd_baseline(args):
    cfg = resolve_config(args)
    g = load_graph(args.graph)
    rel = ex.target_relevance(g, load_truth(args.graph), cfg.source, cfg.target)
    if rel is None:
        raise ex.ConfigError(f"{args.graph}: no target relevance (needs truth_*.csv or target labels)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with ex.run_context(cfg.deterministic):
        if args.method == "lp":
            train_idx, eval_idx = split_source(
                g.labels[cfg.source], cfg.train_frac, np.random.SeedSequence(cfg.seed).spawn(2)[0]
            )
            Y = ex.lp_scores(g, cfg, train_idx)
            y = g.labels[cfg.source]
            src = accuracy(Y[cfg.source][eval_idx], y[eval_idx])
            tgt = accuracy(Y[cfg.target], rel)
        else:
            model, tlog = ex.run_source_only(g, cfg)
            H = forward(model, g)
            src = ex.source_accuracy(model, g, cfg, tlog.eval_idx, H)
            tgt = accuracy(ep_predict(model, g, cfg.source, cfg.target, H[cfg.source]), rel)
    ex.write_csv(out / "baseline.csv", ["method", "src_acc", "tgt_acc"],
                 [{"method": args.method, "src_acc": src, "tgt_acc": tgt}])
    ex.write_run_json(out / "run.json", "baseline", cfg,
                      {"method": args.method, "graph": str(args.graph)})
    print(f"{args.method} src_acc={src:.4f} tgt_acc={tgt:.4f}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int)
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded BLAS and timing-free outputs")
    common.add_argument("--lambda", dest="lam", type=float, help="weight of the transfer loss")
    common.add_argument("--metapath-max-len", type=int)
    common.add_argument("--loss-ktn", choices=["mse", "frobenius"])
    common.add_argument("--sharing", choices=["full", "v1", "v2"])
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ktnlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic graph")
    g.add_argument("--config", required=True,
                   help='generator JSON, or {"preset": "toy|easy|hard|indirect", "seed": n}')
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("-v", "--verbose", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train HGNN (+ KTN) on a graph directory")
    t.add_argument("--graph", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--source-only", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a graph directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--graph", required=True)
    e.add_argument("--source")
    e.add_argument("--target")
    e.add_argument("--out")
    e.add_argument("-v", "--verbose", action="store_true")
    e.set_defaults(func=cmd_eval)

    y = sub.add_parser("toy", parents=[common], help="feature-extractor study on the toy graph")
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_toy)

    s = sub.add_parser("sweep", parents=[common], help="SNR sensitivity sweep")
    s.add_argument("--scenario", choices=["easy", "hard"], default="easy")
    s.add_argument("--pair", default="edge:s-t",
                   help=f"one of {', '.join(synthgen.SWEEP_PAIRS)} or 'all'")
    s.add_argument("--values", help="comma-separated SNR values (default 1,4,10)")
    s.add_argument("--seeds", type=int, help="number of seeds (default 5)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("baseline", parents=[common], help="run LP or EP on a graph directory")
    b.add_argument("--method", choices=["lp", "ep"], required=True)
    b.add_argument("--graph", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ex.ConfigError, GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
