import numpy as np
import pytest

import oracles
from conftest import tiny_records
from relcap import tensor as T
from relcap.gcn import EdgeArrays, GcnEncoder, encode_for_decoder, gcn_forward
from relcap.graph import build_hierarchical_graph, renormalize
from relcap.gradcheck import check_gradients


def _complete_edges(n, m, rng, n_rel=3):
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    scores = rng.dirichlet(np.ones(m), len(pairs))
    rel = rng.integers(-1, n_rel, len(pairs))
    return EdgeArrays(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]), scores, rel)


def _complete(n):
    return np.ones((n, n)) - np.eye(n)


def _encoder(d_in, d, layers=1, m=3, seed=0, **kw):
    return GcnEncoder(d_in, d, layers, m, n_relations=3, d_rel=4, seed=seed, **kw)


def test_single_node_identity_weight(rng):
    enc = _encoder(3, 3)
    enc.layers[0].w.data = np.eye(3)
    h = rng.normal(size=(1, 3))
    out = enc.forward(h, renormalize(np.zeros((1, 1))), None)
    np.testing.assert_array_equal(out.data, np.maximum(h, 0))


def test_two_node_hand_case():
    enc = _encoder(2, 2, gates=False)
    enc.layers[0].w.data = np.array([[1.0, -1.0], [0.5, 2.0]])
    h = np.array([[1.0, 2.0], [-3.0, 0.5]])
    # A_hat = 0.5 everywhere: aggregated rows are both (-1, 1.25)
    expected = np.maximum(np.array([[-1.0, 1.25], [-1.0, 1.25]]) @ enc.layers[0].w.data, 0)
    np.testing.assert_allclose(enc.forward(h, renormalize(_complete(2)), None).data, expected, atol=1e-12)


def test_gates_off_match_textbook_oracle(rng):
    for n in range(1, 6):
        a = np.triu((rng.random((n, n)) < 0.6).astype(float), 1)
        a_hat = renormalize(a + a.T)
        enc = _encoder(4, 5, layers=2, gates=False, seed=n)
        h = rng.normal(size=(n, 4))
        edges = _complete_edges(n, 3, rng)
        got = enc.forward(h, a_hat, edges).data
        expected = oracles.gcn_textbook(a_hat, h, [l.w.data for l in enc.layers])
        assert np.max(np.abs(got - expected)) < 1e-12


def test_zero_gate_parameters_halve_annotated_entries(rng):
    n = 4
    enc = _encoder(3, 3)
    for layer in enc.layers:
        layer.gate_w.data[:] = 0.0
        layer.gate_b.data[...] = 0.0
    a_hat = renormalize(_complete(n))
    edges = _complete_edges(n, 3, rng)
    h = rng.normal(size=(n, 3))
    scaled = a_hat * np.where(np.eye(n, dtype=bool), 1.0, 0.5)
    expected = oracles.gcn_textbook(scaled, h, [enc.layers[0].w.data])
    np.testing.assert_allclose(enc.forward(h, a_hat, edges).data, expected, atol=1e-12)


def test_unannotated_edges_keep_gate_one(rng):
    enc = _encoder(3, 3)
    a_hat = renormalize(_complete(3))
    h = rng.normal(size=(3, 3))
    edges = EdgeArrays(np.array([0]), np.array([1]), np.array([[0.2, 0.3, 0.5]]), np.array([1]))
    g = 1 / (1 + np.exp(-(enc.edge_inputs(edges).data[0] @ enc.layers[0].gate_w.data + enc.layers[0].gate_b.data)))
    s = np.ones((3, 3))
    s[0, 1] = g
    expected = oracles.gcn_textbook(a_hat * s, h, [enc.layers[0].w.data])
    np.testing.assert_allclose(enc.forward(h, a_hat, edges).data, expected, atol=1e-12)


def test_permutation_equivariance(rng):
    n = 6
    enc = _encoder(4, 5, layers=2, seed=3)
    a = np.triu((rng.random((n, n)) < 0.5).astype(float), 1)
    a = a + a.T
    h = rng.normal(size=(n, 4))
    edges = _complete_edges(n, 3, rng)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    a_p = a[np.ix_(perm, perm)]
    edges_p = EdgeArrays(inv[edges.rows], inv[edges.cols], edges.scores, edges.relations)
    out = enc.forward(h, renormalize(a), edges).data
    out_p = enc.forward(h[perm], renormalize(a_p), edges_p).data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_locality_on_path_graph(rng, layers):
    n = 7
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1
    a_hat = renormalize(a)
    enc = _encoder(3, 3, layers=layers, gates=False, seed=1)
    for l in enc.layers:
        l.w.data = np.abs(l.w.data) + 0.1  # positive weights keep relu units active
    h = np.abs(rng.normal(size=(n, 3))) + 0.5
    base = enc.forward(h, a_hat, None).data
    for u in range(n):
        hp = h.copy()
        hp[u] += 1.0
        changed = np.any(np.abs(enc.forward(hp, a_hat, None).data - base) > 0, axis=1)
        np.testing.assert_array_equal(changed, [abs(u - v) <= layers for v in range(n)])


@pytest.mark.parametrize("soft", [False, True])
def test_gcn_gradients(rng, soft):
    n = 4
    enc = _encoder(3, 4, layers=2, seed=2, soft_relation=soft)
    a_hat = renormalize(_complete(n))
    edges = _complete_edges(n, 3, rng)
    if soft:
        edges.relation_dists = rng.dirichlet(np.ones(3), len(edges.rows))
    h = rng.normal(size=(n, 3))
    r = rng.normal(size=(n, 4))
    params = list(enc.params.values())
    report = check_gradients(lambda: (enc.forward(h, a_hat, edges) * T.Tensor(r)).sum(), params)
    assert max(report.values()) < 1e-4, report


def test_dimension_mismatch():
    enc = _encoder(3, 4)
    with pytest.raises(T.ShapeError):
        enc.forward(np.zeros((2, 5)), renormalize(_complete(2)), None)


def test_encode_for_decoder_selects_and_ignores_other_images():
    recs = tiny_records(4)
    enc = GcnEncoder(recs[0].regions[0].feature.shape[0] + 3, 8, 2, 2, 1, 4, seed=0, gates=False)
    graph = build_hierarchical_graph(recs[:3])
    scene = gcn_forward(graph, None, enc)
    rows = encode_for_decoder(scene, recs[1].image_id).data
    assert rows.shape == (len(recs[1].regions), 8)
    # reversing the other images' order relabels their nodes but not the answer
    graph2 = build_hierarchical_graph([recs[2], recs[1], recs[0]])
    rows2 = encode_for_decoder(gcn_forward(graph2, None, enc), recs[1].image_id).data
    np.testing.assert_allclose(rows, rows2, atol=1e-12)
    with pytest.raises(KeyError):
        encode_for_decoder(scene, recs[3].image_id)
