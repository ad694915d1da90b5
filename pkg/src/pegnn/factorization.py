"""Matrix-factorization positional encodings (LINE / DeepWalk targets).

The encoder maximises ``tr(f+ g(M) + f- g(-M))`` over ``M = Z' Z^T`` with
``Z', Z`` both ``N x p``, where ``g`` is the element-wise log-sigmoid.
Because ``tr(F g(M)) = sum_ij F_ij g(M_ji)``, the gradient with respect to
``M`` is ``f+^T * sigma(-M) - f-^T * sigma(M)``.  The returned encoding is
the top-``p`` right-singular basis of the optimised ``M``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BadDimension, DidNotConverge, IsolatedNode, TooLarge
from .graph import degree_info
from .spectral import PositionalEncoding

MAX_DEEPWALK_NODES = 3000


def log_sigmoid(x):
    """``x - log(1 + e^x)`` without overflow; works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x <= 0, x - np.log1p(np.exp(np.minimum(x, 0.0))),
                   -np.log1p(np.exp(-np.maximum(x, 0.0))))
    return float(out) if out.ndim == 0 else out


def _sigmoid(x):
    return np.exp(log_sigmoid(x))


@dataclass(frozen=True)
class FactorizationObjective:
    f_plus: np.ndarray
    f_minus: np.ndarray
    c: float
    method: str

    @property
    def num_nodes(self):
        return self.f_plus.shape[0]

    def value(self, m):
        """``tr(f+ g(M) + f- g(-M))`` at a dense ``M``."""
        mt = m.T
        return float((self.f_plus * log_sigmoid(mt)).sum()
                     + (self.f_minus * log_sigmoid(-mt)).sum())

    def gradient(self, m):
        """Derivative of :meth:`value` with respect to ``M``."""
        return self.f_plus.T * _sigmoid(-m) - self.f_minus.T * _sigmoid(m)

    def entrywise_optimum(self):
        """Supremum of the objective with the rank constraint dropped.

        Each entry separates: with ``a = f+_ij`` and ``b = f-_ij`` both
        positive the best value sits at ``M_ji = log(a / b)``; when either
        is zero the term is pushed to its supremum ``0``.
        """
        a, b = self.f_plus, self.f_minus
        both = (a > 0) & (b > 0)
        m = np.log(a[both] / b[both])
        return float((a[both] * log_sigmoid(m) + b[both] * log_sigmoid(-m)).sum())


def _default_c(g, c):
    return 1.0 / g.num_nodes if c is None else float(c)


def line_targets(g, c=None):
    """LINE: ``f+ = A`` and ``f- = c 1 1^T D^{3/4}`` (column ``j`` scaled by ``d_j^{3/4}``)."""
    c = _default_c(g, c)
    a = g.dense_adjacency()
    if not a.any():
        a = np.eye(g.num_nodes)
    deg = a.sum(axis=1)
    f_minus = c * np.ones((g.num_nodes, 1)) * (deg ** 0.75)[None, :]
    return FactorizationObjective(a, f_minus, c, "line")


def deepwalk_targets(g, window=5, c=None):
    """DeepWalk: ``f+ = sum_{k<=T} (D Phi^k + (Phi^k)^T D)``, ``f- = c D 1 1^T D``."""
    if not 1 <= window <= 10:
        raise BadDimension(f"window must lie in [1, 10], got {window}")
    if g.num_nodes > MAX_DEEPWALK_NODES:
        raise TooLarge(f"dense DeepWalk targets limited to {MAX_DEEPWALK_NODES} nodes")
    c = _default_c(g, c)
    a = g.adjacency()
    deg = degree_info(g).degrees
    if np.any(deg <= 0):
        raise IsolatedNode("DeepWalk targets need every node to have an edge")
    # D Phi^k = A (D^-1 A)^{k-1}; build it by repeated sparse-dense products
    term = a.toarray()
    acc = np.zeros_like(term)
    for k in range(window):
        if k:
            term = (a @ (term / deg[:, None]))
        acc += term + term.T
    f_minus = c * np.outer(deg, deg)
    return FactorizationObjective(acc, f_minus, c, "deepwalk")


@dataclass
class SolverTrace:
    iterations: int
    grad_norm: float
    converged: bool
    best_objective: list = field(default_factory=list)


@dataclass
class FactorizationPE:
    z: np.ndarray
    z_prime: np.ndarray
    objective_value: float
    trace: SolverTrace

    @property
    def m_star(self):
        return self.z_prime @ self.z.T

    def to_pe(self):
        return PositionalEncoding(self.z, "factorization", np.zeros(0))


def right_singular_basis(z_prime, z):
    """Orthonormal ``Z`` with ``Z' Z_raw^T = Z'' Z^T``: the right-singular vectors of ``M``."""
    q1, r1 = np.linalg.qr(z_prime)
    q2, r2 = np.linalg.qr(z)
    u, s, vt = np.linalg.svd(r1 @ r2.T)
    return q1 @ u * s, q2 @ vt.T


def solve_factorization(obj, p, seed=0, max_iters=2000, lr=0.01, tol=None, init=None,
                        orthonormalize=True, record_every=1):
    """Adam ascent on the factored objective.

    Stops when ``||grad||_F < tol`` (default ``1e-5 N``) or after
    ``max_iters`` steps, and returns the best iterate seen.  ``init`` may
    supply ``(Z', Z)``; otherwise entries are drawn from ``N(0, 1/sqrt(p))``.
    """
    n = obj.num_nodes
    if not 1 <= p <= n:
        raise BadDimension(f"p must lie in [1, {n}], got {p}")
    tol = 1e-5 * n if tol is None else tol
    if init is None:
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(np.sqrt(p))
        zp = rng.normal(0.0, scale, (n, p))
        z = rng.normal(0.0, scale, (n, p))
    else:
        zp, z = (np.array(a, dtype=np.float64) for a in init)
    m1 = [np.zeros_like(zp), np.zeros_like(z)]
    m2 = [np.zeros_like(zp), np.zeros_like(z)]
    b1, b2, eps = 0.9, 0.999, 1e-8

    m = zp @ z.T
    best = (obj.value(m), zp.copy(), z.copy())
    history = [best[0]]
    grad = obj.gradient(m)
    gnorm = float(np.sqrt(np.linalg.norm(grad @ z) ** 2 + np.linalg.norm(grad.T @ zp) ** 2))
    it = 0
    while it < max_iters and gnorm >= tol:
        it += 1
        grads = (grad @ z, grad.T @ zp)
        for i, (param, g) in enumerate(zip((zp, z), grads)):
            m1[i] = b1 * m1[i] + (1 - b1) * g
            m2[i] = b2 * m2[i] + (1 - b2) * g * g
            # ascent
            param += lr * (m1[i] / (1 - b1 ** it)) / (np.sqrt(m2[i] / (1 - b2 ** it)) + eps)
        m = zp @ z.T
        val = obj.value(m)
        if val > best[0]:
            best = (val, zp.copy(), z.copy())
        if it % record_every == 0:
            history.append(best[0])
        grad = obj.gradient(m)
        gnorm = float(np.sqrt(np.linalg.norm(grad @ z) ** 2 + np.linalg.norm(grad.T @ zp) ** 2))
    converged = gnorm < tol
    if not converged and max_iters > 0:
        warnings.warn(f"factorization stopped at {it} iterations with |grad| = {gnorm:.3e}",
                      DidNotConverge, stacklevel=2)
    value, zp, z = best
    if orthonormalize:
        zp, z = right_singular_basis(zp, z)
    return FactorizationPE(z, zp, value, SolverTrace(it, gnorm, converged, history))


def factorization_pe(g, p, method="deepwalk", window=5, c=None, seed=0, max_iters=2000,
                     lr=0.01):
    obj = line_targets(g, c) if method == "line" else deepwalk_targets(g, window, c)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DidNotConverge)
        return solve_factorization(obj, p, seed, max_iters, lr).to_pe()
