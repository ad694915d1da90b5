"""Matching positional encodings over O(p) and over sign flips."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class ProcrustesResult:
    q_star: np.ndarray
    eta: float


def _check(z1, z2):
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ShapeMismatch(f"{z1.shape} vs {z2.shape}")
    return z1, z2


def pe_match(z1, z2):
    """Orthogonal Procrustes: ``Q* = argmin_{Q in O(p)} ||Z1 - Z2 Q||_F``.

    With ``Z2^T Z1 = V S W^T`` the minimiser is ``V W^T`` (reflections
    allowed).  On a rank-deficient cross-covariance the null directions are
    completed as close to the identity as orthogonality permits; every
    completion attains the same cost.
    """
    z1, z2 = _check(z1, z2)
    c = z2.T @ z1
    v, s, wt = np.linalg.svd(c)
    tol = max(c.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    r = int((s > tol).sum())
    q = v[:, :r] @ wt[:r]
    if r < c.shape[0]:
        vn, wn = v[:, r:], wt[r:].T
        a, _, bt = np.linalg.svd(vn.T @ wn)
        q = q + vn @ (a @ bt) @ wn.T
    return ProcrustesResult(q, float(np.linalg.norm(z1 - z2 @ q)))


def eta(z1, z2):
    return pe_match(z1, z2).eta


def sign_match(z1, z2):
    """Best ``S in SN(p)`` for ``||Z1 - Z2 S||_F``; columns are chosen independently.

    Returns ``(S, distance)``; ``S`` is a diagonal +/-1 matrix.
    """
    z1, z2 = _check(z1, z2)
    plus = ((z1 - z2) ** 2).sum(axis=0)
    minus = ((z1 + z2) ** 2).sum(axis=0)
    signs = np.where(minus < plus, -1.0, 1.0)
    dist = float(np.sqrt(np.minimum(plus, minus).sum()))
    return np.diag(signs), dist


def random_orthogonal(p, rng):
    """QR of a Gaussian matrix with the diagonal of R forced positive."""
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))
