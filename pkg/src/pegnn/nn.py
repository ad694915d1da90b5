"""MLPs with Lipschitz bookkeeping, Adam, and the PEGW checkpoint format."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch

MAGIC = b"PEGW"
CHECKPOINT_VERSION = 1


@dataclass
class Dense:
    weight: ad.Tensor
    bias: ad.Tensor
    act: str = "identity"


@dataclass
class MlpParams:
    layers: list
    lipschitz_cap: float | None = None

    @property
    def in_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].weight.shape[1]

    def parameters(self):
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def named_parameters(self, prefix):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.weight"] = layer.weight
            out[f"{prefix}.{i}.bias"] = layer.bias
        return out

    def lipschitz_bound(self):
        """Product of exact operator norms times activation constants."""
        bound = 1.0
        for layer in self.layers:
            bound *= np.linalg.norm(layer.weight.data, 2) * ad.lipschitz_of(layer.act)
        return float(bound)

    @property
    def lipschitz_constrained(self):
        return self.lipschitz_cap is not None

    def enforce_lipschitz(self, iters=20):
        """Rescale each weight so its estimated operator norm is at most ``cap ** (1/L)``."""
        if self.lipschitz_cap is None:
            return
        per_layer = self.lipschitz_cap ** (1.0 / len(self.layers))
        for layer in self.layers:
            sigma = spectral_norm_estimate(layer.weight.data, iters)
            exact = np.linalg.norm(layer.weight.data, 2)
            # power iteration approaches from below; fall back to the exact norm if it undershoots
            if abs(exact - sigma) > 1e-4 * max(exact, 1e-12):
                sigma = exact
            if sigma > per_layer:
                layer.weight.data *= per_layer / sigma

    def copy(self):
        return MlpParams([Dense(ad.Tensor(l.weight.data.copy(), True),
                                ad.Tensor(l.bias.data.copy(), True), l.act)
                          for l in self.layers], self.lipschitz_cap)


def spectral_norm_estimate(w, iters=20):
    w = np.asarray(w)
    v = np.ones(w.shape[1]) / np.sqrt(w.shape[1])
    sigma = 0.0
    for _ in range(iters):
        u = w @ v
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        v = w.T @ (u / nu)
        sigma = np.linalg.norm(v)
        v = v / sigma
    return float(sigma)


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def make_mlp(widths, hidden_act, rng, out_act="identity", lipschitz_cap=None):
    """Glorot-initialised MLP ``widths[0] -> ... -> widths[-1]``."""
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        act = out_act if i == len(widths) - 2 else hidden_act
        layers.append(Dense(ad.Tensor(glorot(rng, a, b), True),
                            ad.Tensor(np.zeros((1, b)), True), act))
    mlp = MlpParams(layers, lipschitz_cap)
    mlp.enforce_lipschitz()
    return mlp


def identity_mlp(width=1):
    return MlpParams([Dense(ad.Tensor(np.eye(width), True),
                            ad.Tensor(np.zeros((1, width)), True), "identity")])


def constant_mlp(value, width=1):
    return MlpParams([Dense(ad.Tensor(np.zeros((width, 1)), True),
                            ad.Tensor(np.full((1, 1), float(value)), True), "identity")])


def mlp_apply(params, x):
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    if x.data.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeMismatch(f"MLP expects width {params.in_dim}, got {x.shape}")
    h = x
    for layer in params.layers:
        h = ad.activation(layer.act)(ad.add_bias(ad.matmul(h, layer.weight), layer.bias))
    return h


@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state, params, grads=None):
    """One bias-corrected Adam update in place; ``grads`` default to ``p.grad``."""
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeMismatch("Adam state does not match parameter list")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient {g.shape} for parameter {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def save_checkpoint(path, named):
    """Write ``{name: array}`` as PEGW: magic, u32 version, then one record per tensor.

    Record: u32 name length, utf-8 name, u32 rank, rank x u64 dims,
    little-endian f64 data.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in named.items():
            arr = np.asarray(arr.data if isinstance(arr, ad.Tensor) else arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    out = {}
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not a PEGW checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        while True:
            head = fh.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims)
            out[name] = data.astype(np.float64)
    return out
