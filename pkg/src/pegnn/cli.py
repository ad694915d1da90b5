"""Command-line entry point: ``pegnn <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import plotting
from .datasets import SbmConfig, load_graph, save_graph, sbm_generate, write_results, write_rows
from .errors import PegError
from .factorization import factorization_pe
from .model import ModelConfig, build_model
from .nn import load_checkpoint, save_checkpoint
from .pipeline import (TrainConfig, domain_shift_eval, edge_weight_curve, evaluate_task,
                       make_task, monotone_trend, perturb_graph, sample_negatives, split_links,
                       train)
from .spectral import eigengap_table

log = logging.getLogger("pegnn")


def _metric(text):
    if text == "auc" or (text.startswith("hits@") and text[5:].isdigit()):
        return text
    raise argparse.ArgumentTypeError(f"metric must be auc or hits@K, got {text!r}")


def _add_graph_args(p):
    p.add_argument("--graph", required=True, help="edge list, one 'u v' pair per line")
    p.add_argument("--features", help="node feature CSV (default: node degree)")


def _add_train_args(p):
    _add_graph_args(p)
    p.add_argument("--pe", choices=["le", "deepwalk"], default="le")
    p.add_argument("--dim", type=int, default=16, help="PE dimension p")
    p.add_argument("--folds", type=int, choices=[0, 10], default=0,
                   help="10 enables fold rotation between supervision and PE")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1, help="independent seeds seed..seed+runs-1")
    p.add_argument("--metric", type=_metric, default="auc")
    p.add_argument("--config", help="model config JSON")
    p.add_argument("--out-dir", required=True)


def _train_config(args, seed):
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       seed=seed, pe_method=args.pe, pe_dim=args.dim, use_folds=args.folds > 0,
                       num_folds=max(args.folds, 1), eval_metric=args.metric)


def cmd_diagnose(args):
    g = load_graph(args.graph)
    rows = eigengap_table(g, args.p_max)
    os.makedirs(args.out_dir, exist_ok=True)
    path = write_rows(os.path.join(args.out_dir, "eigengaps.csv"),
                      ["p", "lambda_p", "gap_p", "rho_p"], rows)
    plotting.plot_eigengaps(rows, os.path.join(args.out_dir, "eigengaps.png"))
    print(path)
    return 0


def cmd_pe(args):
    g = load_graph(args.graph)
    pe = factorization_pe(g, args.dim, args.method, window=args.window, seed=args.seed,
                          max_iters=args.iters)
    np.savetxt(args.out, pe.z, delimiter=",", fmt="%.17g")
    print(args.out)
    return 0


def _load_run(run_dir):
    with open(os.path.join(run_dir, "run.json")) as fh:
        run = json.load(fh)
    with open(os.path.join(run_dir, "model_config.json")) as fh:
        config = ModelConfig.from_json(fh.read())
    model = build_model(config, 0)
    model.load_state(load_checkpoint(os.path.join(run_dir, "model.pegw")))
    cfg = TrainConfig(**run["train_config"])
    g = load_graph(run["graph"], run.get("features"))
    ds = split_links(g, tuple(run["ratios"]), seed=cfg.seed)
    return model, cfg, ds


def cmd_train(args):
    g = load_graph(args.graph, args.features)
    if args.config:
        with open(args.config) as fh:
            config = ModelConfig.from_json(fh.read())
    else:
        config = ModelConfig(in_dim=max(g.num_features, 1), pe_dim=args.dim)
    ratios = (0.85, 0.05, 0.10)
    results = {"val_" + args.metric: [], "test_" + args.metric: []}
    os.makedirs(args.out_dir, exist_ok=True)
    for r in range(args.runs):
        seed = args.seed + r
        cfg = _train_config(args, seed)
        ds = split_links(g, ratios, seed=seed)
        model = build_model(config, seed)
        res = train(model, ds, cfg)
        test = make_task(model, ds.train_graph, ds.test_pos, ds.test_neg, cfg)
        results["val_" + args.metric].append(res.best_val)
        results["test_" + args.metric].append(evaluate_task(model, test, args.metric))
        log.info("run %d: best epoch %d, val %.4f", r, res.best_epoch, res.best_val)
        if r == 0:
            first, first_hist, first_cfg, first_test = model, res.history, cfg, test
    save_checkpoint(os.path.join(args.out_dir, "model.pegw"), first.named_parameters())
    with open(os.path.join(args.out_dir, "model_config.json"), "w") as fh:
        fh.write(config.to_json())
    with open(os.path.join(args.out_dir, "run.json"), "w") as fh:
        json.dump({"graph": os.path.abspath(args.graph),
                   "features": os.path.abspath(args.features) if args.features else None,
                   "ratios": ratios, "train_config": first_cfg.__dict__}, fh, indent=2)
    write_results(results, first_hist, args.out_dir)
    plotting.plot_history(first_hist, os.path.join(args.out_dir, "history.png"))
    curve, sampled = edge_weight_curve(first, ds.train_graph, first_test.z, seed=args.seed)
    write_rows(os.path.join(args.out_dir, "edge_weights.csv"), ["distance", "weight", "kind"],
               [(float(d), float(w), "curve") for d, w in curve]
               + [(float(d), float(w), "sample") for d, w in sampled])
    plotting.plot_edge_weights(curve, sampled, os.path.join(args.out_dir, "edge_weights.png"))
    trend = monotone_trend(curve)
    for name, vals in results.items():
        print(f"{name}\t{np.mean(vals):.4f}\t{np.std(vals):.4f}")
    print(f"phi_nondecreasing_fraction\t{trend['nondecreasing_fraction']:.3f}")
    return 0


def cmd_eval(args):
    model, cfg, ds = _load_run(args.run_dir)
    task = make_task(model, ds.train_graph, ds.test_pos, ds.test_neg, cfg)
    value = evaluate_task(model, task, args.metric)
    out = args.out_dir or args.run_dir
    write_results({"test_" + args.metric: [value]}, [], out, "eval_metrics.json",
                  "eval_history.csv")
    print(f"test_{args.metric}\t{value:.4f}")
    return 0


def cmd_perturb(args):
    model, cfg, ds = _load_run(args.run_dir)
    levels = [0.0] + [float(v) for v in args.levels.split(",")]
    rows = []
    for level in levels:
        gp = perturb_graph(ds.train_graph, args.mode, level, seed=args.seed)
        task = make_task(model, gp, ds.test_pos, ds.test_neg, cfg)
        rows.append((level, evaluate_task(model, task, args.metric)))
    out = args.out_dir or args.run_dir
    os.makedirs(out, exist_ok=True)
    write_rows(os.path.join(out, f"perturb_{args.mode}.csv"), ["fraction", args.metric], rows)
    plotting.plot_perturbation([r[0] for r in rows], [r[1] for r in rows],
                               os.path.join(out, f"perturb_{args.mode}.png"), args.metric)
    for level, value in rows:
        print(f"{level:.2f}\t{value:.4f}")
    return 0


def cmd_domain_shift(args):
    model, cfg, _ = _load_run(args.run_dir)
    g = load_graph(args.graph, args.features)
    rng = np.random.default_rng(args.seed)
    e = g.edge_array()
    e = e[e[:, 0] != e[:, 1]]
    count = max(1, int(round(args.test_fraction * len(e))))
    pos = e[np.sort(rng.choice(len(e), count, replace=False))]
    neg = sample_negatives(g, count, rng)
    value = domain_shift_eval(model, g, cfg, pos, neg, project=not args.no_projection,
                              seed=args.seed)
    out = args.out_dir or args.run_dir
    write_results({"domain_shift_auc": [value]}, [], out, "domain_shift_metrics.json",
                  "domain_shift_history.csv")
    print(f"domain_shift_auc\t{value:.4f}")
    return 0


def cmd_sbm(args):
    blocks = tuple(int(b) for b in args.blocks.split(","))
    cfg = SbmConfig(blocks, args.p_in, args.p_out, args.seed, args.feature_mode, args.feature_dim)
    g = sbm_generate(cfg)
    feat = args.out + ".features.csv" if g.num_features else None
    save_graph(g, args.out, feat)
    print(args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="pegnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagnose", help="eigengap and stability-ratio table")
    p.add_argument("--graph", required=True)
    p.add_argument("--p-max", type=int, default=20)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_diagnose)

    pe = sub.add_parser("pe", help="positional encodings")
    pe_sub = pe.add_subparsers(dest="pe_command", required=True)
    p = pe_sub.add_parser("factorize", help="LINE / DeepWalk factorization PE")
    p.add_argument("--graph", required=True)
    p.add_argument("--method", choices=["line", "deepwalk"], default="deepwalk")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pe)

    p = sub.add_parser("train", help="train a PEG link predictor")
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "test metric of a trained run"),
                                 ("perturb-eval", cmd_perturb, "metric under edge perturbation"),
                                 ("domain-shift", cmd_domain_shift, "evaluate on another graph")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--run-dir", required=True, help="output directory of 'train'")
        p.add_argument("--out-dir")
        p.add_argument("--metric", type=_metric, default="auc")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        if name == "perturb-eval":
            p.add_argument("--mode", choices=["add", "drop"], default="drop")
            p.add_argument("--levels", default="0.1,0.2,0.3")
        if name == "domain-shift":
            _add_graph_args(p)
            p.add_argument("--test-fraction", type=float, default=0.1)
            p.add_argument("--no-projection", action="store_true")

    p = sub.add_parser("sbm", help="generate a stochastic block model graph")
    p.add_argument("--blocks", default="500,500")
    p.add_argument("--p-in", type=float, default=0.3)
    p.add_argument("--p-out", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feature-mode", choices=["none", "degree", "random"], default="degree")
    p.add_argument("--feature-dim", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sbm)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
