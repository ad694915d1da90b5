"""Graph file IO, the stochastic block model generator, and result files.

Edge lists are plain text, one ``u<TAB>v`` pair per line with 0-based node
ids; blank lines and anything after ``#`` are ignored.  Features are a
header-less CSV with one row per node.
"""
from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DuplicateEdgeWarning, FeatureRowMismatch, IndexOutOfRange, ParseError
from .graph import Graph

RESULTS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SbmConfig:
    blocks: tuple = (500, 500)
    p_within: float = 0.3
    p_between: float = 0.1
    seed: int = 0
    feature_mode: str = "degree"
    feature_dim: int = 1

    def __post_init__(self):
        if not (0 <= self.p_within <= 1 and 0 <= self.p_between <= 1):
            raise ValueError("SBM probabilities must lie in [0, 1]")
        if not self.blocks or min(self.blocks) <= 0:
            raise ValueError("block sizes must be positive")
        if self.feature_mode not in ("none", "degree", "random"):
            raise ValueError(f"unknown feature mode {self.feature_mode!r}")


def sbm_labels(cfg):
    return np.repeat(np.arange(len(cfg.blocks)), cfg.blocks)


def sbm_generate(cfg):
    """Sample an undirected SBM; no self-loops.  Block ``b`` occupies a contiguous id range."""
    rng = np.random.default_rng(cfg.seed)
    labels = sbm_labels(cfg)
    n = len(labels)
    iu, ju = np.triu_indices(n, 1)
    prob = np.where(labels[iu] == labels[ju], cfg.p_within, cfg.p_between)
    hit = rng.random(len(iu)) < prob
    edges = np.stack([iu[hit], ju[hit]], 1)
    g = Graph.from_edges(n, edges)
    if cfg.feature_mode == "degree":
        x = g.degree_info().degrees[:, None]
    elif cfg.feature_mode == "random":
        x = rng.random((n, cfg.feature_dim))
    else:
        x = None
    return g if x is None else g.with_features(x)


def load_graph(edge_path, feature_path=None, num_nodes=None):
    pairs = []
    with open(edge_path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(lineno, f"expected two node ids, got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(lineno, f"non-integer node id in {line!r}") from None
            if u < 0 or v < 0:
                raise IndexOutOfRange(f"line {lineno}: negative node id")
            pairs.append((u, v))
    e = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    x = None
    if feature_path is not None:
        x = np.loadtxt(feature_path, delimiter=",", ndmin=2)
    n = num_nodes
    if n is None:
        n = x.shape[0] if x is not None else (int(e.max()) + 1 if e.size else 1)
    if e.size and e.max() >= n:
        raise IndexOutOfRange(f"node id {int(e.max())} outside [0, {n})")
    if x is not None and x.shape[0] != n:
        raise FeatureRowMismatch(f"feature file has {x.shape[0]} rows, graph has {n} nodes")
    lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
    unique = len(np.unique(lo * n + hi))
    if unique < len(e):
        warnings.warn(f"merged {len(e) - unique} duplicate edge lines", DuplicateEdgeWarning,
                      stacklevel=2)
    return Graph.from_edges(n, e, x)


def save_graph(g, edge_path, feature_path=None):
    e = g.edge_array()
    with open(edge_path, "w") as fh:
        fh.write(f"# {g.num_nodes} nodes, {len(e)} edges\n")
        for u, v in e:
            fh.write(f"{u}\t{v}\n")
    if feature_path is not None:
        np.savetxt(feature_path, g.features, delimiter=",", fmt="%.17g")


def summarize_runs(values):
    runs = [float(v) for v in values]
    arr = np.asarray(runs)
    return {"mean": float(arr.mean()) if runs else float("nan"),
            "std": float(arr.std()) if runs else float("nan"),
            "runs": runs}


def write_results(metrics, history, out_dir, metrics_name="metrics.json",
                  history_name="history.csv"):
    """Write ``metrics.json`` and ``history.csv``; returns the two paths.

    ``metrics`` maps a name to a list of per-run values (population std).
    ``history`` is a sequence of ``(epoch, loss, val_metric)``.
    """
    os.makedirs(out_dir, exist_ok=True)
    mpath = os.path.join(out_dir, metrics_name)
    hpath = os.path.join(out_dir, history_name)
    payload = {"schema_version": RESULTS_SCHEMA_VERSION,
               "metrics": {k: summarize_runs(v if np.ndim(v) else [v])
                           for k, v in metrics.items()}}
    with open(mpath, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    with open(hpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "val_metric"])
        for row in history:
            w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2]))])
    return mpath, hpath


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path
