"""Link-prediction data handling, training and evaluation for PEG models."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .datasets import SbmConfig, sbm_generate, sbm_labels
from .errors import (MultipleEigenvalueWarning, NegativeSamplingExhausted, NotEnoughEdges,
                     WidthMismatch)
from .factorization import factorization_pe
from .graph import Graph, apply_permutation
from .metrics import hits_at_k, roc_auc
from .model import ModelConfig, build_model, pe_statistic
from .nn import AdamState, adam_step, mlp_apply
from .spectral import PositionalEncoding, laplacian_eigenmap

log = logging.getLogger(__name__)


@dataclass
class LinkDataset:
    base_graph: Graph
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    fold_of_train_edge: np.ndarray | None = None

    @property
    def train_graph(self):
        """Message-passing graph: base graph with validation and test links removed."""
        held = np.concatenate([self.val_pos, self.test_pos])
        return self.base_graph.without_edges(held) if len(held) else self.base_graph

    def permuted(self, perm):
        def m(e):
            return perm.map_edges(e) if len(e) else e

        return LinkDataset(apply_permutation(self.base_graph, perm), m(self.train_pos),
                           m(self.val_pos), m(self.test_pos), m(self.train_neg),
                           m(self.val_neg), m(self.test_neg), self.fold_of_train_edge)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-2
    seed: int = 0
    pe_method: str = "le"
    pe_dim: int = 16
    use_folds: bool = False
    num_folds: int = 10
    eval_metric: str = "auc"
    feature_mode: str = "auto"
    deepwalk_window: int = 5
    deepwalk_iters: int = 1000


def _pair_keys(pairs, n):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo, hi = np.minimum(pairs[:, 0], pairs[:, 1]), np.maximum(pairs[:, 0], pairs[:, 1])
    return lo * n + hi


def sample_negatives(g, count, rng, exclude_keys=(), max_rejections=None):
    """Uniform node pairs ``u != v`` that are neither edges nor excluded, without repeats."""
    n = g.num_nodes
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    forbidden = set(_pair_keys(g.edge_array(), n).tolist())
    forbidden.update(int(k) for k in exclude_keys)
    limit = 100 * count if max_rejections is None else max_rejections
    chosen, rejected = [], 0
    while len(chosen) < count:
        cand = rng.integers(0, n, size=(max(2 * (count - len(chosen)), 16), 2))
        for u, v in cand:
            key = min(u, v) * n + max(u, v)
            if u == v or key in forbidden:
                rejected += 1
                if rejected > limit:
                    raise NegativeSamplingExhausted(
                        f"{rejected} rejections while sampling {count} negatives")
                continue
            forbidden.add(key)
            chosen.append((min(u, v), max(u, v)))
            if len(chosen) == count:
                break
    return np.array(chosen, dtype=np.int64)


def split_links(g, ratios=(0.85, 0.05, 0.10), seed=0):
    """Shuffle the edges into train/val/test positives and pair each with as many negatives."""
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    e = g.edge_array()
    e = e[e[:, 0] != e[:, 1]]
    m = len(e)
    n_val = int(round(ratios[1] * m))
    n_test = int(round(ratios[2] * m))
    n_train = m - n_val - n_test
    if n_train <= 0:
        raise NotEnoughEdges(f"{m} edges cannot fill split {ratios}")
    e = e[rng.permutation(m)]
    train, val, test = e[:n_train], e[n_train:n_train + n_val], e[n_train + n_val:]
    neg = sample_negatives(g, m, rng)
    return LinkDataset(g, train, val, test, neg[:n_train], neg[n_train:n_train + n_val],
                       neg[n_train + n_val:])


def fold_partition(ds, k=10, seed=0):
    """Assign every training link (and its paired negative) to one of ``k`` balanced folds."""
    if len(ds.train_pos) == 0:
        raise NotEnoughEdges("no training links to partition")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(ds.train_pos), dtype=np.int64)
    fold[rng.permutation(len(ds.train_pos))] = np.arange(len(ds.train_pos)) % k
    return replace(ds, fold_of_train_edge=fold)


def compute_pe(g, method, p, seed=0, window=5, iters=1000):
    if method == "le":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MultipleEigenvalueWarning)
            return laplacian_eigenmap(g, p)
    if method in ("deepwalk", "line"):
        return factorization_pe(g, p, method, window=window, seed=seed, max_iters=iters)
    raise ValueError(f"unknown PE method {method!r}")


def node_features(g, mode="auto"):
    """Input features: the given ones, or node degree when the graph has none.

    Columns are divided by their mean absolute value so graphs of different
    density land on a comparable scale; this is permutation equivariant.
    """
    if mode == "given" or (mode == "auto" and g.num_features):
        x = g.features.copy()
    elif mode in ("degree", "auto"):
        x = g.degree_info().degrees[:, None]
    else:
        raise ValueError(f"unknown feature mode {mode!r}")
    s = np.abs(x).mean(axis=0)
    return x / np.where(s > 0, s, 1.0)


@dataclass
class LinkTask:
    """A message-passing graph with its PE, input features and labelled pairs."""

    prep: object
    x: np.ndarray
    z: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    @property
    def pairs(self):
        return np.concatenate([self.pos, self.neg]).reshape(-1, 2)

    @property
    def labels(self):
        return np.concatenate([np.ones(len(self.pos)), np.zeros(len(self.neg))])


def make_task(model, g, pos, neg, cfg, pe=None, x=None):
    pe = compute_pe(g, cfg.pe_method, cfg.pe_dim, cfg.seed, cfg.deepwalk_window,
                    cfg.deepwalk_iters) if pe is None else pe
    z = pe.z if isinstance(pe, PositionalEncoding) else np.asarray(pe)
    x = node_features(g, cfg.feature_mode) if x is None else x
    if x.shape[1] != model.config.in_dim:
        raise WidthMismatch(f"features have width {x.shape[1]}, model expects "
                            f"{model.config.in_dim}")
    return LinkTask(model.prepare(g, z), x, z, np.asarray(pos, dtype=np.int64).reshape(-1, 2),
                    np.asarray(neg, dtype=np.int64).reshape(-1, 2))


def score_pairs(model, task, pairs=None, chunk=65536):
    x_hat = model.encode(task.prep, task.x)
    x_hat = ad.Tensor(x_hat.data)
    pairs = task.pairs if pairs is None else pairs
    out = [model.pair_logits(x_hat, task.z, pairs[s:s + chunk]).data[:, 0]
           for s in range(0, len(pairs), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def evaluate_task(model, task, metric="auc"):
    scores = score_pairs(model, task)
    npos = len(task.pos)
    if metric == "auc":
        return roc_auc(scores, task.labels)
    if metric.startswith("hits@"):
        return hits_at_k(scores[:npos], scores[npos:], int(metric.split("@")[1]))
    raise ValueError(f"unknown metric {metric!r}")


def evaluate_tasks(model, tasks, metric="auc"):
    return float(np.mean([evaluate_task(model, t, metric) for t in tasks]))


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("-inf")


def fit(model, tasks_for_epoch, val_tasks, cfg, batch_size=None, metric=None):
    """Minibatch BCE training with best-validation checkpointing (earliest epoch on ties).

    ``tasks_for_epoch(epoch)`` returns the supervision tasks of that epoch;
    pairs of each task are shuffled and batched separately, graphs are never
    merged.
    """
    rng = np.random.default_rng(cfg.seed)
    bs = cfg.batch_size if batch_size is None else batch_size
    metric = cfg.eval_metric if metric is None else metric
    params = model.parameters()
    adam = AdamState(lr=cfg.learning_rate)
    result = TrainResult(model)
    best_state = model.state()
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for task in tasks_for_epoch(epoch):
            pairs, labels = task.pairs, task.labels
            order = rng.permutation(len(pairs))
            for s in range(0, len(order), bs):
                idx = order[s:s + bs]
                for p in params:
                    p.zero_grad()
                x_hat = model.encode(task.prep, task.x)
                logits = model.pair_logits(x_hat, task.z, pairs[idx])
                loss = ad.bce_with_logits(logits, labels[idx][:, None])
                loss.backward()
                adam_step(adam, params)
                for layer in model.layers:
                    layer.phi.enforce_lipschitz()
                total += loss.item() * len(idx)
                count += len(idx)
        val = evaluate_tasks(model, val_tasks, metric) if val_tasks else float("nan")
        result.history.append((epoch, total / max(count, 1), val))
        log.debug("epoch %d loss %.5f val %.4f", epoch, total / max(count, 1), val)
        if val_tasks and val > result.best_val:
            result.best_val, result.best_epoch = val, epoch
            best_state = model.state()
    if cfg.epochs and val_tasks:
        model.load_state(best_state)
    return result


def train(model, ds, cfg):
    """Train on ``ds``; with ``cfg.use_folds`` rotate supervision folds.

    Fold ``j`` (epoch ``j mod k``) supervises while PE and message passing
    use the training graph with that fold's links removed.
    """
    g_train = ds.train_graph
    full = make_task(model, g_train, ds.train_pos, ds.train_neg, cfg)
    val_tasks = [replace(full, pos=ds.val_pos, neg=ds.val_neg)] if len(ds.val_pos) else []
    if cfg.use_folds:
        if ds.fold_of_train_edge is None:
            ds = fold_partition(ds, cfg.num_folds, cfg.seed)
        fold = ds.fold_of_train_edge
        k = int(fold.max()) + 1
        fold_tasks = []
        for j in range(k):
            sel = fold == j
            g_j = g_train.without_edges(ds.train_pos[sel])
            fold_tasks.append(make_task(model, g_j, ds.train_pos[sel], ds.train_neg[sel], cfg))

        def tasks_for_epoch(epoch):
            return [fold_tasks[epoch % k]]
    else:
        def tasks_for_epoch(epoch):
            return [full]
    return fit(model, tasks_for_epoch, val_tasks, cfg)


def fold_pes(ds, cfg):
    """Precompute one PE per fold on the training graph minus that fold's links."""
    g_train = ds.train_graph
    fold = ds.fold_of_train_edge
    out = []
    for j in range(int(fold.max()) + 1):
        g_j = g_train.without_edges(ds.train_pos[fold == j])
        out.append(compute_pe(g_j, cfg.pe_method, cfg.pe_dim, cfg.seed))
    return out


def perturb_graph(g, mode, fraction, seed=0):
    """Drop or add ``round(fraction * |E|)`` uniformly chosen edges."""
    if not 0 <= fraction <= 0.5:
        raise ValueError(f"fraction must lie in [0, 0.5], got {fraction}")
    rng = np.random.default_rng(seed)
    e = g.edge_array()
    e = e[e[:, 0] != e[:, 1]]
    count = int(round(fraction * len(e)))
    if count == 0:
        return g
    if mode == "drop":
        return g.without_edges(e[rng.choice(len(e), count, replace=False)])
    if mode == "add":
        return g.with_edges(sample_negatives(g, count, rng))
    raise ValueError(f"unknown perturbation mode {mode!r}")


def random_projection(x, width, seed=0):
    """Gaussian projection to ``width`` columns followed by row L2 normalisation."""
    rng = np.random.default_rng(seed)
    h = x @ rng.standard_normal((x.shape[1], width))
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    return h / np.where(norms > 0, norms, 1.0)


def domain_shift_eval(model, g_test, cfg, test_pos, test_neg, project=True, seed=0):
    """Frozen-model ROC-AUC on another graph; PE is computed there with test links removed."""
    g = g_test.without_edges(test_pos)
    x = node_features(g, cfg.feature_mode)
    if x.shape[1] != model.config.in_dim:
        if not project:
            raise WidthMismatch(f"test features have width {x.shape[1]}, model expects "
                                f"{model.config.in_dim}")
        x = random_projection(x, model.config.in_dim, seed)
    task = make_task(model, g, test_pos, test_neg, cfg, x=x)
    return evaluate_task(model, task, "auc")


def edge_weight_curve(model, g, z, samples=500, seed=0, layer=0, points=200):
    """phi of a trained layer over the observed PE-distance range plus sampled edges.

    Returns ``(curve, sampled)``: two arrays of ``(distance, weight)`` rows.
    """
    zd = z.z if isinstance(z, PositionalEncoding) else np.asarray(z)
    peg = model.layers[layer]
    e = g.edge_array()
    e = e[e[:, 0] != e[:, 1]]
    dist = pe_statistic(zd, e[:, 0], e[:, 1], peg.weighting)
    grid = np.linspace(dist.min(), dist.max(), points)
    rng = np.random.default_rng(seed)
    pick = np.sort(dist[rng.choice(len(dist), min(samples, len(dist)), replace=False)])

    def phi(d):
        return mlp_apply(peg.phi, ad.Tensor(d[:, None])).data[:, 0]

    return np.stack([grid, phi(grid)], 1), np.stack([pick, phi(pick)], 1)


def monotone_trend(curve):
    """Fraction of nondecreasing steps and Spearman correlation of a ``(d, w)`` curve."""
    from scipy.stats import spearmanr

    w = curve[:, 1]
    steps = np.diff(w)
    rho = spearmanr(curve[:, 0], w).statistic if np.ptp(w) > 0 else 0.0
    return {"nondecreasing_fraction": float((steps >= 0).mean()) if len(steps) else 1.0,
            "spearman": float(rho)}


# --- stochastic block model experiment -------------------------------------------------

@dataclass
class SbmExperimentConfig:
    blocks: tuple = (500, 500)
    p_within: float = 0.3
    p_between: float = 0.1
    n_train: int = 1
    n_val: int = 2
    n_test: int = 10
    link_fraction: float = 0.1
    intra_block_positives: bool = True
    perturb_levels: tuple = (0.1, 0.2, 0.3)
    perturb_mode: str = "drop"
    seed: int = 0


@dataclass
class SbmRun:
    model: object
    history: list
    test_auc: list
    perturbed_auc: dict
    bayes_auc: list


def sbm_link_sample(g, labels, fraction, rng, intra_only=True):
    """Positive links (optionally intra-block only) with an equal number of missing pairs."""
    e = g.edge_array()
    if intra_only:
        e = e[labels[e[:, 0]] == labels[e[:, 1]]]
    count = max(1, int(round(fraction * len(e))))
    pos = e[np.sort(rng.choice(len(e), count, replace=False))]
    neg = sample_negatives(g, count, rng)
    return pos, neg


def block_oracle_auc(labels, pos, neg):
    """AUC of scoring a pair 1 when both ends share a block, else 0."""
    s = np.concatenate([labels[pos[:, 0]] == labels[pos[:, 1]],
                        labels[neg[:, 0]] == labels[neg[:, 1]]]).astype(float)
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return roc_auc(s, y)


def _sbm_graphs(exp, count, seed_base):
    out = []
    for i in range(count):
        scfg = SbmConfig(tuple(exp.blocks), exp.p_within, exp.p_between,
                         seed=seed_base + i, feature_mode="none")
        g = sbm_generate(scfg)
        rng = np.random.default_rng(seed_base + 7919 * (i + 1))
        labels = sbm_labels(scfg)
        pos, neg = sbm_link_sample(g, labels, exp.link_fraction, rng, exp.intra_block_positives)
        out.append((g.without_edges(pos), pos, neg, labels))
    return out


def sbm_experiment(exp, cfg, model_config=None):
    """Train on ``n_train`` SBM graphs, select on ``n_val``, test on ``n_test`` fresh graphs.

    Held-out links are removed from each graph before PE and message
    passing.  Also reports test AUC after perturbing the test graphs and
    the block-membership oracle AUC of each test sample.
    """
    mc = model_config or ModelConfig(in_dim=1, pe_dim=cfg.pe_dim)
    model = build_model(mc, cfg.seed)
    base = 1_000_003 * (exp.seed + 1)
    train_g = _sbm_graphs(exp, exp.n_train, base)
    val_g = _sbm_graphs(exp, exp.n_val, base + 10_000)
    test_g = _sbm_graphs(exp, exp.n_test, base + 20_000)
    train_tasks = [make_task(model, g, pos, neg, cfg) for g, pos, neg, _ in train_g]
    val_tasks = [make_task(model, g, pos, neg, cfg) for g, pos, neg, _ in val_g]
    res = fit(model, lambda epoch: train_tasks, val_tasks, cfg)
    test_auc = [evaluate_task(model, make_task(model, g, pos, neg, cfg))
                for g, pos, neg, _ in test_g]
    bayes = [block_oracle_auc(lab, pos, neg) for _, pos, neg, lab in test_g]
    perturbed = {}
    for level in exp.perturb_levels:
        aucs = []
        for i, (g, pos, neg, _) in enumerate(test_g):
            gp = perturb_graph(g, exp.perturb_mode, level, seed=exp.seed * 131 + i)
            aucs.append(evaluate_task(model, make_task(model, gp, pos, neg, cfg)))
        perturbed[level] = aucs
    return SbmRun(model, res.history, test_auc, perturbed, bayes)
