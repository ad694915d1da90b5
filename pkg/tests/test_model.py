import numpy as np
import pytest

from conftest import assert_grads_close, numeric_grad, random_graph
from pegnn import autodiff as ad
from pegnn.errors import IndexOutOfRange, ShapeMismatch, UnboundedPhi
from pegnn.graph import Graph, Permutation, apply_permutation
from pegnn.model import (ModelConfig, NaivePeLayer, PegParams, build_model, edge_weights,
                         equivariance_check, link_logit, make_peg_layer, peg_forward,
                         verify_stability)
from pegnn.nn import constant_mlp, identity_mlp, make_mlp
from pegnn.procrustes import random_orthogonal
from pegnn.spectral import laplacian_eigenmap

C4 = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])


def test_hand_computed_four_cycle():
    layer = PegParams(ad.Tensor(np.eye(1)), identity_mlp(), psi="identity", self_loops=False)
    z = np.array([[0.0], [1.0], [3.0], [6.0]])
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    out, z_out = peg_forward(layer, C4, x, z)
    np.testing.assert_allclose(out, [[13.0], [3.5], [8.0], [7.5]])
    assert z_out is z


def test_edge_weights_constant_and_range():
    z = np.array([[0.0], [1.0], [3.0], [6.0]])
    np.testing.assert_allclose(edge_weights(z, [(0, 1), (1, 3)], identity_mlp()), [1.0, 5.0])
    np.testing.assert_allclose(edge_weights(z, [(0, 1)], constant_mlp(0.3)), [0.3])
    with pytest.raises(IndexOutOfRange):
        edge_weights(z, [(0, 4)], identity_mlp())


def test_feature_width_error(rng):
    layer = make_peg_layer(3, 4, rng)
    with pytest.raises(ShapeMismatch):
        layer.forward(C4, np.zeros((4, 2)), np.zeros((4, 2)))


@pytest.mark.parametrize("weighting", ["distance", "inner_product"])
def test_equivariance(rng, weighting):
    for _ in range(20):
        n = int(rng.integers(3, 20))
        g = random_graph(rng, n, density=0.3)
        p = int(rng.integers(1, min(n, 8)))
        layer = make_peg_layer(3, 5, rng, weighting=weighting)
        x, z = rng.standard_normal((n, 3)), rng.standard_normal((n, p))
        assert equivariance_check(layer, g, x, z, 3, rng) <= 1e-9


def test_z_rotates_with_q(rng):
    g = random_graph(rng, 8)
    layer = make_peg_layer(2, 3, rng)
    x, z = rng.standard_normal((8, 2)), rng.standard_normal((8, 3))
    q = random_orthogonal(3, rng)
    _, z_out = peg_forward(layer, g, x, z @ q)
    np.testing.assert_allclose(z_out, z @ q)


def test_naive_layer_breaks_invariance(rng):
    g = random_graph(rng, 10, density=0.4)
    naive = NaivePeLayer(rng.standard_normal((3, 4)), make_mlp([3, 16, 3], "tanh", rng))
    x, z = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
    assert equivariance_check(naive, g, x, z, 5, rng) > 0.1


def test_link_logit_symmetric(rng):
    g = random_graph(rng, 9, connected=True)
    for mode in ("inner_product", "hadamard"):
        model = build_model(ModelConfig(in_dim=2, hidden=[6, 6], pe_dim=3, decoder_mode=mode), 1)
        emb = model.embed(g, rng.standard_normal((9, 2)), laplacian_eigenmap(g, 3))
        for u, v in [(0, 1), (2, 7), (3, 3)]:
            assert link_logit(model, emb, u, v) == link_logit(model, emb, v, u)
        with pytest.raises(IndexOutOfRange):
            link_logit(model, emb, 0, 9)


def test_end_to_end_loss_gradient(rng):
    g = random_graph(rng, 7, connected=True)
    model = build_model(ModelConfig(in_dim=2, hidden=[4, 3], phi_hidden=5, pe_dim=2,
                                    decoder_hidden=[4]), 3)
    x, z = rng.standard_normal((7, 2)), rng.standard_normal((7, 2))
    pairs = np.array([[0, 1], [2, 5], [3, 6], [4, 4]])
    labels = np.array([[1.0], [0.0], [1.0], [0.0]])
    prep = model.prepare(g, z)
    params = model.parameters()

    def loss():
        return ad.bce_with_logits(model.pair_logits(model.encode(prep, x), z, pairs), labels)

    for p in params:
        p.zero_grad()
    loss().backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    assert_grads_close(analytic, numeric_grad(lambda: loss().item(), [p.data for p in params]))


def test_config_roundtrip():
    cfg = ModelConfig(in_dim=3, hidden=[8], decoder_mode="hadamard", phi_cap=1.0)
    assert ModelConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        ModelConfig.from_json('{"bogus": 1}')


def test_state_roundtrip(rng):
    model = build_model(ModelConfig(in_dim=1, hidden=[4], pe_dim=2), 0)
    clone = model.copy()
    other = build_model(ModelConfig(in_dim=1, hidden=[4], pe_dim=2), 5)
    other.load_state(model.state())
    for k, v in other.state().items():
        np.testing.assert_array_equal(v, clone.state()[k])


def test_stability_one_edge_removed(rng):
    g1 = Graph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)],
                          rng.standard_normal((6, 2)))
    g2 = g1.without_edges([(0, 3)])
    layer = make_peg_layer(2, 3, rng, phi_cap=1.0, w_cap=1.0)
    cert = verify_stability(layer, g1, g2, 2)
    assert cert.holds
    assert cert.lhs <= cert.rhs + 1e-8


def test_stability_requires_constrained_phi(rng):
    layer = make_peg_layer(1, 1, rng)
    with pytest.raises(UnboundedPhi):
        verify_stability(layer, C4, C4, 1)


def test_forward_on_permuted_graph_matches(rng):
    g = random_graph(rng, 6, features=2)
    layer = make_peg_layer(2, 2, rng)
    z = rng.standard_normal((6, 2))
    perm = Permutation.random(6, rng)
    out = layer.forward(g, g.features, z)
    outp = layer.forward(apply_permutation(g, perm), perm.apply_rows(g.features),
                         perm.apply_rows(z))
    np.testing.assert_allclose(outp, perm.apply_rows(out), atol=1e-12)
