"""Ranking metrics for link prediction."""
import numpy as np
from scipy.stats import rankdata

from .errors import ShapeMismatch, SingleClass, TooFewNegatives


def roc_auc(scores, labels):
    """Mann-Whitney U over all positive/negative pairs; ties count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ShapeMismatch(f"{s.shape} scores for {y.shape} labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def hits_at_k(pos_scores, neg_scores, k):
    """Fraction of positives scoring strictly above the k-th highest negative."""
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if len(neg) < k:
        raise TooFewNegatives(f"need at least {k} negatives, got {len(neg)}")
    threshold = np.sort(neg)[-k]
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    return float((pos > threshold).mean())
