"""Matplotlib figures written next to the CSV/JSON reports (Agg backend, no display)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_eigengaps(rows, path):
    """``rows`` are ``(p, lambda_p, gap_p, rho_p)``; rho is drawn on a log axis."""
    rows = np.asarray(rows, dtype=float)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(rows[:, 0], rows[:, 1], "o-")
    a1.set_xlabel("p")
    a1.set_ylabel("eigenvalue")
    rho = np.where(np.isfinite(rows[:, 3]), rows[:, 3], np.nan)
    a2.semilogy(rows[:, 0], rho, "s-")
    inf = ~np.isfinite(rows[:, 3])
    if inf.any():
        top = np.nanmax(rho) if np.isfinite(rho).any() else 1.0
        a2.plot(rows[inf, 0], np.full(inf.sum(), top * 10), "rx", label="infinite")
        a2.legend()
    a2.set_xlabel("p")
    a2.set_ylabel("stability ratio")
    return _save(fig, path)


def plot_history(history, path):
    h = np.asarray(history, dtype=float).reshape(-1, 3)
    fig, a1 = plt.subplots(figsize=(5, 3.5))
    a1.plot(h[:, 0], h[:, 1], color="tab:blue")
    a1.set_xlabel("epoch")
    a1.set_ylabel("train loss", color="tab:blue")
    a2 = a1.twinx()
    a2.plot(h[:, 0], h[:, 2], color="tab:orange")
    a2.set_ylabel("validation metric", color="tab:orange")
    return _save(fig, path)


def plot_perturbation(levels, scores, path, label="ROC-AUC"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.asarray(levels) * 100, scores, "o-")
    ax.set_xlabel("perturbed edges (%)")
    ax.set_ylabel(label)
    return _save(fig, path)


def plot_edge_weights(curve, sampled, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(curve[:, 0], curve[:, 1], "-", label="phi")
    ax.plot(sampled[:, 0], sampled[:, 1], ".", alpha=0.4, label="sampled edges")
    ax.set_xlabel("PE distance")
    ax.set_ylabel("edge weight")
    ax.legend()
    return _save(fig, path)
