"""The PEG layer, the stacked link-prediction model and stability checks."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import IndexOutOfRange, ShapeMismatch, TooLarge, UnboundedPhi, ZeroEigengap
from .graph import (MAX_MATCH_NODES, Permutation, apply_permutation, brute_force_match,
                    degree_info, normalized_adjacency, normalized_laplacian)
from .nn import MlpParams, glorot, make_mlp, mlp_apply
from .procrustes import eta, random_orthogonal
from .spectral import PositionalEncoding, eigengap_diagnostics, laplacian_eigenmap, symmetric_eig


@dataclass
class PreparedGraph:
    """CSR entries of ``A_hat`` plus the per-entry PE statistic fed to phi."""

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    ahat: np.ndarray
    pe_stat: np.ndarray


def prepare(g, z, self_loops=True, weighting="distance"):
    if self_loops:
        g = g.with_self_loops()
    zd = z.z if isinstance(z, PositionalEncoding) else np.asarray(z, dtype=np.float64)
    if zd.shape[0] != g.num_nodes:
        raise IndexOutOfRange(f"PE has {zd.shape[0]} rows for {g.num_nodes} nodes")
    a = normalized_adjacency(g)
    dst = np.repeat(np.arange(g.num_nodes), np.diff(a.indptr))
    src = a.indices.astype(np.int64)
    return PreparedGraph(g.num_nodes, src, dst, a.data.copy(),
                         pe_statistic(zd, src, dst, weighting))


def pe_statistic(z, src, dst, weighting="distance"):
    if weighting == "distance":
        return np.linalg.norm(z[src] - z[dst], axis=1)
    if weighting == "inner_product":
        return np.einsum("ij,ij->i", z[src], z[dst])
    raise ValueError(f"unknown edge weighting {weighting!r}")


def edge_weights(z, edges, phi, weighting="distance"):
    """``Xi_uv = phi(||Z_u - Z_v||)`` for each listed edge (numpy in, numpy out)."""
    zd = z.z if isinstance(z, PositionalEncoding) else np.asarray(z, dtype=np.float64)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= zd.shape[0]):
        raise IndexOutOfRange("edge endpoint outside the PE rows")
    stat = pe_statistic(zd, e[:, 0], e[:, 1], weighting)
    return mlp_apply(phi, ad.Tensor(stat[:, None])).data[:, 0]


@dataclass
class PegParams:
    w: ad.Tensor
    phi: MlpParams
    psi: str = "relu"
    weighting: str = "distance"
    self_loops: bool = True

    def __post_init__(self):
        if self.phi.in_dim != 1 or self.phi.out_dim != 1:
            raise ShapeMismatch("phi must map R -> R")

    @property
    def lipschitz_psi(self):
        return ad.lipschitz_of(self.psi)

    @property
    def lipschitz_phi(self):
        return self.phi.lipschitz_bound()

    def parameters(self):
        return [self.w] + self.phi.parameters()

    def prepare(self, g, z):
        return prepare(g, z, self.self_loops, self.weighting)

    def apply(self, prep, x):
        """``psi((A_hat * Xi) X W)`` on a prepared graph; ``x`` may be a Tensor."""
        x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ShapeMismatch(f"features {x.shape} for weight {self.w.shape}")
        xi = mlp_apply(self.phi, ad.Tensor(prep.pe_stat[:, None]))
        wts = ad.mul(ad.Tensor(prep.ahat[:, None]), xi)
        f_in, f_out = self.w.shape
        if f_in <= f_out:
            h = ad.matmul(ad.edge_aggregate(prep.src, prep.dst, wts, x, prep.num_nodes), self.w)
        else:
            h = ad.edge_aggregate(prep.src, prep.dst, wts, ad.matmul(x, self.w), prep.num_nodes)
        return ad.activation(self.psi)(h)

    def forward(self, g, x, z):
        return self.apply(self.prepare(g, z), x).data


def peg_forward(layer, g, x, z):
    """One PEG layer on ``(A, X, Z)``; returns ``(X_hat, Z)`` with ``Z`` untouched."""
    return layer.forward(g, x, z), z


def make_peg_layer(f_in, f_out, rng, psi="relu", phi_hidden=32, phi_act="tanh",
                   phi_cap=None, w_cap=None, weighting="distance", self_loops=True):
    w = glorot(rng, f_in, f_out)
    if w_cap is not None:
        s = np.linalg.norm(w, 2)
        if s > w_cap:
            w *= w_cap / s
    phi = make_mlp([1, phi_hidden, 1], phi_act, rng, lipschitz_cap=phi_cap)
    return PegParams(ad.Tensor(w, True), phi, psi, weighting, self_loops)


class NaivePeLayer:
    """``psi(A_hat (X + MLP(Z)) W)``: PE added to features, as a non-equivariant control."""

    def __init__(self, w, z_mlp, psi="relu"):
        self.w, self.z_mlp, self.psi = w, z_mlp, psi

    def forward(self, g, x, z):
        zd = z.z if isinstance(z, PositionalEncoding) else np.asarray(z)
        a = normalized_adjacency(g.with_self_loops())
        h = np.asarray(x) + mlp_apply(self.z_mlp, ad.Tensor(zd)).data
        return ad.activation(self.psi)(ad.Tensor(a @ h @ self.w)).data


@dataclass
class ModelConfig:
    in_dim: int = 1
    hidden: list = field(default_factory=lambda: [128, 128])
    psi: str = "relu"
    phi_hidden: int = 32
    phi_act: str = "tanh"
    phi_cap: float | None = None
    pe_method: str = "le"
    pe_dim: int = 128
    decoder_hidden: list = field(default_factory=lambda: [32])
    decoder_mode: str = "inner_product"
    edge_weighting: str = "distance"
    self_loops: bool = True

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Embedding:
    x_hat: np.ndarray
    z: np.ndarray


@dataclass
class PegModel:
    layers: list
    decoder: MlpParams
    config: ModelConfig

    @property
    def pe_config(self):
        return (self.config.pe_method, self.config.pe_dim)

    def parameters(self):
        out = []
        for layer in self.layers:
            out += layer.parameters()
        return out + self.decoder.parameters()

    def named_parameters(self):
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"layers.{i}.w"] = layer.w
            named.update(layer.phi.named_parameters(f"layers.{i}.phi"))
        named.update(self.decoder.named_parameters("decoder"))
        return named

    def state(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state(self, state):
        named = self.named_parameters()
        if set(named) != set(state):
            raise ShapeMismatch("checkpoint parameters do not match the model")
        for k, v in named.items():
            if v.data.shape != state[k].shape:
                raise ShapeMismatch(f"{k}: {state[k].shape} vs {v.data.shape}")
            v.data[...] = state[k]

    def prepare(self, g, z):
        first = self.layers[0]
        return prepare(g, z, first.self_loops, first.weighting)

    def encode(self, prep, x):
        h = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        for layer in self.layers:
            h = layer.apply(prep, h)
        return h

    def pair_logits(self, x_hat, z, pairs):
        """Decoder logits for ``pairs`` (``B x 2``) as a ``B x 1`` tensor."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        n = x_hat.shape[0]
        if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
            raise IndexOutOfRange("pair endpoint outside the graph")
        zt = z if isinstance(z, ad.Tensor) else ad.Tensor(z)
        xu, xv = ad.gather_rows(x_hat, pairs[:, 0]), ad.gather_rows(x_hat, pairs[:, 1])
        zu, zv = ad.gather_rows(zt, pairs[:, 0]), ad.gather_rows(zt, pairs[:, 1])
        if self.config.decoder_mode == "inner_product":
            h = ad.concat([ad.row_dot(xu, xv), ad.row_dot(zu, zv)])
        elif self.config.decoder_mode == "hadamard":
            h = ad.concat([ad.mul(xu, xv), ad.mul(zu, zv)])
        else:
            raise ValueError(f"unknown decoder mode {self.config.decoder_mode!r}")
        return mlp_apply(self.decoder, h)

    def embed(self, g, x, z):
        zd = z.z if isinstance(z, PositionalEncoding) else np.asarray(z, dtype=np.float64)
        return Embedding(self.encode(self.prepare(g, zd), x).data, zd)

    def copy(self):
        clone = build_model(self.config, 0)
        clone.load_state(self.state())
        return clone


def build_model(config, seed):
    rng = np.random.default_rng(seed)
    widths = [config.in_dim] + list(config.hidden)
    layers = [make_peg_layer(a, b, rng, config.psi, config.phi_hidden, config.phi_act,
                             config.phi_cap, weighting=config.edge_weighting,
                             self_loops=config.self_loops)
              for a, b in zip(widths[:-1], widths[1:])]
    dec_in = 2 if config.decoder_mode == "inner_product" else widths[-1] + config.pe_dim
    decoder = make_mlp([dec_in] + list(config.decoder_hidden) + [1], "relu", rng)
    return PegModel(layers, decoder, config)


def link_logit(model, emb, u, v):
    """Decoder output for the pair ``(u, v)`` given a cached :class:`Embedding`."""
    n = emb.x_hat.shape[0]
    if not (0 <= u < n and 0 <= v < n):
        raise IndexOutOfRange(f"pair ({u}, {v}) outside [0, {n})")
    return float(model.pair_logits(ad.Tensor(emb.x_hat), emb.z, [[u, v]]).data[0, 0])


@dataclass(frozen=True)
class StabilityCertificate:
    delta: float
    x_opnorm: float
    d_max: float
    constant_c: float
    distance: float
    lhs: float
    rhs: float
    holds: bool


def stability_constant(delta, x_opnorm, d_max, l_psi, l_phi, w_opnorm):
    return (7 * delta * x_opnorm + 2 * d_max) * l_psi * l_phi * w_opnorm + 3 * delta


def verify_stability(layer, g1, g2, p):
    """Measure both sides of the PEG stability inequality on two tiny graphs.

    Both graphs are taken as the layer sees them (self-loops added when
    the layer adds them), so eigenmaps, ``d_max`` and the matching
    distance all refer to the same operator the layer propagates with.
    """
    if not layer.phi.lipschitz_constrained:
        raise UnboundedPhi("phi must be Lipschitz-constrained to certify stability")
    if max(g1.num_nodes, g2.num_nodes) > MAX_MATCH_NODES:
        raise TooLarge(f"stability check needs <= {MAX_MATCH_NODES} nodes")
    if layer.self_loops:
        g1, g2 = g1.with_self_loops(), g2.with_self_loops()
    pes, deltas = [], []
    for g in (g1, g2):
        pe = laplacian_eigenmap(g, p, warn=False)
        lam = symmetric_eig(normalized_laplacian(g).toarray()).eigenvalues
        deltas.append(eigengap_diagnostics(lam, p).delta)
        pes.append(pe)
    delta = min(deltas)
    if math.isinf(delta):
        raise ZeroEigengap(f"lambda_{p} = lambda_{p + 1} in both graphs")
    match = brute_force_match(g1, g2)
    perm = match.permutation
    x1 = layer.forward(g1, g1.features, pes[0])
    x2 = layer.forward(g2, g2.features, pes[1])
    lhs = float(np.linalg.norm(x1 - perm.apply_rows(x2))
                + eta(pes[0].z, perm.apply_rows(pes[1].z)))
    x_op = float(np.linalg.norm(g1.features, 2)) if g1.num_features else 0.0
    d_max = degree_info(g2).d_max
    c = stability_constant(delta, x_op, d_max, layer.lipschitz_psi, layer.lipschitz_phi,
                           float(np.linalg.norm(layer.w.data, 2)))
    rhs = c * match.distance
    return StabilityCertificate(delta, x_op, d_max, c, match.distance, lhs, rhs,
                                bool(lhs <= rhs + 1e-8))


def equivariance_check(layer, g, x, z, trials, rng=None):
    """Largest violation of permutation equivariance and O(p) invariance.

    For random ``P`` and ``Q`` compares ``g(PAP^T, PX, PZ)`` with
    ``P g(A, X, Z)`` and ``g(A, X, ZQ)`` with ``g(A, X, Z)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    zd = z.z if isinstance(z, PositionalEncoding) else np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    base = layer.forward(g, x, zd)
    worst = 0.0
    for _ in range(trials):
        perm = Permutation.random(g.num_nodes, rng)
        q = random_orthogonal(zd.shape[1], rng)
        gp = apply_permutation(g, perm)
        out_p = layer.forward(gp, perm.apply_rows(x), perm.apply_rows(zd))
        worst = max(worst, float(np.linalg.norm(out_p - perm.apply_rows(base))))
        out_q = layer.forward(g, x, zd @ q)
        worst = max(worst, float(np.linalg.norm(out_q - base)))
    return worst
