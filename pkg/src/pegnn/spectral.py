"""Eigendecompositions, Laplacian eigenmaps and eigenspace perturbation tools."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (BadDimension, ConvergenceFailure, EpsTooLarge,
                     MultipleEigenvalues, MultipleEigenvalueWarning, NotSymmetric,
                     TooFewEigenvalues, ZeroEigengap)
from .graph import normalized_laplacian
from .procrustes import sign_match

DENSE_CUTOFF = 5000
EQUAL_TOL = 1e-9
SIGN_ENUM_MAX = 16


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        u, lam = self.eigenvectors, self.eigenvalues
        return (u * lam) @ u.T


@dataclass(frozen=True)
class PositionalEncoding:
    z: np.ndarray
    method: str = "laplacian_eigenmap"
    eigenvalues_used: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def p(self):
        return self.z.shape[1]

    @property
    def num_nodes(self):
        return self.z.shape[0]

    def rotated(self, q):
        return PositionalEncoding(self.z @ q, self.method, self.eigenvalues_used)

    def permuted(self, perm):
        return PositionalEncoding(perm.apply_rows(self.z), self.method,
                                  self.eigenvalues_used)


@dataclass(frozen=True)
class EigengapDiagnostics:
    p: int
    gap_p: float
    min_consecutive_gap: float
    stability_ratio: float
    delta: float


def canonical_signs(u):
    """Flip each column so its largest-magnitude entry is positive (first index on ties)."""
    u = np.array(u, dtype=np.float64, copy=True)
    if u.size == 0:
        return u
    idx = np.argmax(np.abs(u), axis=0)
    s = np.sign(u[idx, np.arange(u.shape[1])])
    s[s == 0] = 1.0
    return u * s


def _nearly_equal(a, b, tol=EQUAL_TOL):
    return abs(b - a) <= tol * max(1.0, abs(a), abs(b))


def symmetric_eig(b, k=None, dense_cutoff=DENSE_CUTOFF, maxiter=None):
    """Ascending eigendecomposition of a real symmetric matrix.

    Dense LAPACK up to ``dense_cutoff`` rows.  Beyond that, and only when
    ``k`` smallest pairs are requested, a Lanczos solver is used.
    """
    if sp.issparse(b):
        n = b.shape[0]
        asym = abs(b - b.T).max() if b.nnz else 0.0
        scale = max(1.0, abs(b).max() if b.nnz else 0.0)
    else:
        b = np.asarray(b, dtype=np.float64)
        n = b.shape[0]
        if b.ndim != 2 or b.shape[1] != n:
            raise NotSymmetric(f"matrix of shape {b.shape} is not square")
        asym = np.abs(b - b.T).max() if n else 0.0
        scale = max(1.0, np.abs(b).max() if n else 0.0)
    if asym > 1e-10 * scale:
        raise NotSymmetric(f"max |B - B^T| = {asym:.3e}")
    if k is not None and n > dense_cutoff and k < n - 1:
        op = sp.csr_matrix(b) if sp.issparse(b) else b
        try:
            vals, vecs = spla.eigsh(op, k=k, which="SA", maxiter=maxiter, tol=1e-12)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceFailure(str(exc)) from exc
        order = np.argsort(vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]
    else:
        dense = b.toarray() if sp.issparse(b) else b
        vals, vecs = np.linalg.eigh((dense + dense.T) / 2)
        if k is not None:
            vals, vecs = vals[:k], vecs[:, :k]
    return SpectralDecomposition(vals, canonical_signs(vecs))


def laplacian_eigenmap(g, p, warn=True):
    """Eigenvectors of the ``p`` smallest normalized-Laplacian eigenvalues.

    Emits :class:`MultipleEigenvalueWarning` when ``lambda_p == lambda_{p+1}``,
    where the columns are only determined up to a rotation.
    """
    n = g.num_nodes
    if not 1 <= p < n:
        raise BadDimension(f"p must lie in [1, {n - 1}], got {p}")
    lap = normalized_laplacian(g)
    dec = symmetric_eig(lap if n > DENSE_CUTOFF else lap.toarray(), k=p + 1)
    lam = dec.eigenvalues
    if warn and _nearly_equal(lam[p - 1], lam[p]):
        warnings.warn(
            f"lambda_{p} = lambda_{p + 1} = {lam[p]:.6g}; eigenmap not unique",
            MultipleEigenvalueWarning, stacklevel=2)
    return PositionalEncoding(dec.eigenvectors[:, :p], "laplacian_eigenmap", lam[:p].copy())


def eigengap_diagnostics(eigs, p):
    """Gap at ``p``, smallest gap among the first ``p`` and their ratio rho_p.

    ``eigs`` are ascending; ``p`` is 1-based.  ``delta`` is ``inf`` when
    the gap at ``p`` vanishes to the equality tolerance.
    """
    lam = np.asarray(eigs, dtype=np.float64)
    if p < 1 or len(lam) < p + 1:
        raise TooFewEigenvalues(f"need {p + 1} eigenvalues, got {len(lam)}")
    gap_p = float(lam[p] - lam[p - 1])
    min_gap = float(np.min(np.abs(np.diff(lam[:p + 1]))))
    rho = gap_p / min_gap if min_gap > 0 else math.inf
    delta = math.inf if _nearly_equal(lam[p - 1], lam[p]) else 1.0 / gap_p
    return EigengapDiagnostics(p, gap_p, min_gap, rho, delta)


def eigengap_table(g, p_max):
    """Rows ``(p, lambda_p, gap_p, rho_p)`` for ``p = 1..p_max`` of the normalized Laplacian."""
    lam = symmetric_eig(normalized_laplacian(g).toarray()).eigenvalues
    p_max = min(p_max, len(lam) - 1)
    rows = []
    for p in range(1, p_max + 1):
        d = eigengap_diagnostics(lam, p)
        rows.append((p, float(lam[p - 1]), d.gap_p, d.stability_ratio))
    return rows


def _smallest_pe(b, p):
    dec = symmetric_eig(b)
    return dec, dec.eigenvectors[:, :p]


def min_sign_distance(z1, z2):
    """``min_{S in SN(p)} ||Z1 - Z2 S||_F``.

    Exhaustive over ``2^p`` sign matrices for ``p <= 16``; otherwise
    per-column, which is equivalent since the columns decouple.
    """
    p = z1.shape[1]
    if p > SIGN_ENUM_MAX:
        return sign_match(z1, z2)[1]
    best = math.inf
    for signs in itertools.product((1.0, -1.0), repeat=p):
        best = min(best, float(np.linalg.norm(z1 - z2 * np.asarray(signs))))
    return best


def adversarial_perturbation(b, p, eps):
    """Rotate the eigenpair with the smallest gap among the first ``p+1``.

    With ``k`` the (1-based) index minimising ``lambda_{k+1} - lambda_k``
    over ``k <= p``, ``u_k`` and ``u_{k+1}`` are mixed by an angle
    ``asin(eps)`` and ``B' = sum_i lambda_i u'_i u'_i^T`` is rebuilt.

    Returns ``(B', ratio)`` with ``ratio`` the sign-matched eigenvector
    change divided by ``||B' - B||_F``.  ``eps == 0`` gives ``(B, 0.0)``.
    """
    b = np.asarray(b, dtype=np.float64)
    if eps < 0 or eps > 0.05:
        raise EpsTooLarge(f"eps must lie in [0, 0.05], got {eps}")
    dec, pe = _smallest_pe(b, p)
    lam, u = dec.eigenvalues, dec.eigenvectors
    if len(lam) < p + 1:
        raise BadDimension(f"p = {p} needs at least {p + 1} eigenvalues")
    for i in range(p):
        if _nearly_equal(lam[i], lam[i + 1]):
            raise MultipleEigenvalues(f"lambda_{i + 1} = lambda_{i + 2}")
    if eps == 0:
        return b.copy(), 0.0
    k = int(np.argmin(np.diff(lam[:p + 1])))  # 0-based
    c = math.sqrt(1.0 - eps * eps)
    u2 = u.copy()
    u2[:, k] = c * u[:, k] + eps * u[:, k + 1]
    u2[:, k + 1] = -eps * u[:, k] + c * u[:, k + 1]
    # only the rotated plane changes: build the difference directly to avoid cancellation
    delta = lam[k] * (np.outer(u2[:, k], u2[:, k]) - np.outer(u[:, k], u[:, k])) \
        + lam[k + 1] * (np.outer(u2[:, k + 1], u2[:, k + 1]) - np.outer(u[:, k + 1], u[:, k + 1]))
    b2 = b + delta
    b2 = (b2 + b2.T) / 2
    _, pe2 = _smallest_pe(b2, p)
    dnorm = float(np.linalg.norm(b2 - b))
    change = min_sign_distance(pe, pe2)
    return b2, change / dnorm


def inverse_gap_bound(eigs, p):
    """``max_{1<=i<=p} |lambda_{i+1} - lambda_i|^-1``."""
    lam = np.asarray(eigs)
    return float(np.max(1.0 / np.abs(np.diff(lam[:p + 1]))))


def davis_kahan_delta(b1, b2, p):
    """``min_i (lambda_{p+1}^(i) - lambda_p^(i))^-1``; ``inf`` if both gaps vanish."""
    deltas = []
    for b in (b1, b2):
        lam = symmetric_eig(b).eigenvalues
        deltas.append(eigengap_diagnostics(lam, p).delta)
    return min(deltas)


def davis_kahan_bound(b1, b2, p, perm):
    """``2^{3/2} delta min(sqrt(p) ||D||_op, ||D||_F)`` with ``D = B1 - P B2 P^T``."""
    b1 = np.asarray(b1, dtype=np.float64)
    b2 = np.asarray(b2, dtype=np.float64)
    delta = davis_kahan_delta(b1, b2, p)
    if math.isinf(delta):
        raise ZeroEigengap(f"lambda_{p} = lambda_{p + 1} in both matrices")
    diff = b1 - perm.conjugate(b2)
    diff = (diff + diff.T) / 2
    op = float(np.max(np.abs(symmetric_eig(diff).eigenvalues))) if diff.size else 0.0
    fro = float(np.linalg.norm(diff))
    return 2 ** 1.5 * delta * min(math.sqrt(p) * op, fro)
