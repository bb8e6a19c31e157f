import numpy as np
import pytest

from selar import autodiff as ad
from selar.autodiff import Tensor
from selar.errors import HeadKindError, ShapeError
from selar.gnn import (
    ARCHS,
    EncoderConfig,
    GraphContext,
    TaskHead,
    class_logits,
    encode,
    init_encoder,
    pair_probabilities,
    predict_node_class,
    predict_pair,
)
from selar.gradcheck import COMPOSITE_TOL, composite_check
from selar.hetgraph import HeteroGraph, random_hetero


def _params(config, graph, seed=0):
    arrays = init_encoder(config, graph, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    for k in arrays:
        if k.endswith(".b"):
            arrays[k] = rng.normal(size=arrays[k].shape)
    return arrays


def test_gcn_matches_dense_reference():
    g = random_hetero(15, 2, 3, density=0.3, seed=4, feature_dim=5)
    config = EncoderConfig("GCN", num_layers=2, hidden_dim=6)
    arrays = _params(config, g)
    z = encode(GraphContext(g), config, ad.parameters(arrays)).data
    a = g.union_adjacency().toarray().astype(float)
    a = ((a + a.T) > 0).astype(float)
    np.fill_diagonal(a, 0)
    a_hat = a + np.eye(15)
    d = 1 / np.sqrt(a_hat.sum(1))
    norm = d[:, None] * a_hat * d[None, :]
    h = np.maximum(norm @ g.features @ arrays["enc.layer0.W"] + arrays["enc.layer0.b"], 0)
    ref = norm @ h @ arrays["enc.layer1.W"] + arrays["enc.layer1.b"]
    np.testing.assert_allclose(z, ref, atol=1e-10, rtol=0)


def test_sgc_k0_is_linear_map():
    g = random_hetero(10, 2, 2, seed=0, feature_dim=4)
    config = EncoderConfig("SGC", sgc_k=0, hidden_dim=3)
    arrays = _params(config, g)
    z = encode(GraphContext(g), config, ad.parameters(arrays)).data
    np.testing.assert_allclose(z, g.features @ arrays["enc.W"] + arrays["enc.b"], atol=1e-12)


@pytest.mark.parametrize("arch", ARCHS)
def test_permutation_equivariance(arch):
    g = random_hetero(12, 2, 3, density=0.3, seed=7, feature_dim=4)
    config = EncoderConfig(arch, hidden_dim=5, heads=2)
    arrays = _params(config, g)
    z = encode(GraphContext(g), config, ad.parameters(arrays)).data
    perm = np.random.default_rng(1).permutation(12)
    inv = np.argsort(perm)
    adj = {t: m[perm][:, perm] for t, m in g.adjacency.items()}
    gp = HeteroGraph(g.node_types, g.edge_types, g.node_type_of[perm], adj, g.endpoints, g.features[perm])
    zp = encode(GraphContext(gp), config, ad.parameters(arrays)).data
    np.testing.assert_allclose(zp[inv], z, atol=1e-10)


@pytest.mark.parametrize("arch", ARCHS)
def test_composite_gradients(arch):
    result = composite_check(seed=2, arch=arch)
    assert result.error <= COMPOSITE_TOL


def test_embedding_table_without_features():
    g = random_hetero(10, 2, 2, seed=0)
    config = EncoderConfig("GCN", hidden_dim=3, embed_dim=7)
    arrays = init_encoder(config, g, np.random.default_rng(0))
    assert arrays["enc.emb"].shape == (10, 7)
    assert encode(GraphContext(g), config, ad.parameters(arrays)).shape == (10, 3)


def test_feature_width_mismatch():
    g = random_hetero(10, 2, 2, seed=0, feature_dim=4)
    with pytest.raises(ShapeError):
        init_encoder(EncoderConfig("GCN", input_dim=3), g, np.random.default_rng(0))


def _identity_head(d=2):
    return TaskHead("pair", Tensor(np.eye(d)), Tensor(np.zeros(d)))


def test_pair_decoder_examples():
    z = Tensor(np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert predict_pair(z, 0, 0, _identity_head()) == 0.5
    assert predict_pair(z, 1, 1, _identity_head()) == pytest.approx(1 / (1 + np.exp(-1)), abs=1e-12)
    head = TaskHead("class", Tensor(np.eye(2)), Tensor(np.zeros(2)))
    with pytest.raises(HeadKindError):
        pair_probabilities(z, [0], [1], head)
    with pytest.raises(HeadKindError):
        class_logits(z, [0], _identity_head())


def test_zero_weights_give_half():
    g = random_hetero(10, 2, 2, seed=0, feature_dim=3)
    config = EncoderConfig("GCN", hidden_dim=4)
    arrays = {k: np.zeros_like(v) for k, v in init_encoder(config, g, np.random.default_rng(0)).items()}
    z = encode(GraphContext(g), config, ad.parameters(arrays))
    p = pair_probabilities(z, np.arange(10), np.arange(10)[::-1], _identity_head(4))
    assert np.all(p.data == 0.5)


def test_class_head_softmax():
    head = lambda w: TaskHead("class", Tensor(w), Tensor(np.zeros(w.shape[1])))  # noqa: E731
    np.testing.assert_array_equal(predict_node_class(Tensor(np.zeros((1, 3))), 0, head(np.eye(3))), np.full(3, 1 / 3))
    p = predict_node_class(Tensor(np.array([[10.0, -10.0]])), 0, head(np.eye(2)))
    np.testing.assert_allclose(p, [1, 0], atol=1e-8)
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(20, 4)) * 3
    direct = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    np.testing.assert_allclose(ad.softmax(Tensor(logits)).data, direct, atol=1e-12, rtol=0)
    with pytest.raises(HeadKindError):
        predict_node_class(Tensor(np.zeros((1, 2))), 0, _identity_head())
