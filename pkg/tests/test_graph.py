"""Interaction graphs, the GCN layer and the graph autoencoder."""

import numpy as np
import pytest
from conftest import make_frame, two_event_script

from sa_assess.errors import DimensionError, ValidationError
from sa_assess.graph import (
    EMBED_DIM,
    HIDDEN_DIM,
    NODE_DIM,
    GcnAutoencoder,
    InteractionGraph,
    assemble_graph,
    embed,
    embed_batch,
    fully_connected_adjacency,
    gcn_layer,
    node_attributes,
    train_autoencoder,
    video_node_attributes,
)
from sa_assess.numerics import Tensor
from sa_assess.synth import generate_scenario


def dense_gcn_oracle(phi, a, w, act):
    """Triple loop σ(A Φ W), no numpy matmul."""
    n, d_in = phi.shape
    d_out = w.shape[1]
    ap = [[sum(a[i][k] * phi[k][j] for k in range(n)) for j in range(d_in)] for i in range(n)]
    z = [[sum(ap[i][k] * w[k][j] for k in range(d_in)) for j in range(d_out)] for i in range(n)]
    z = np.array(z)
    return np.maximum(z, 0.0) if act == "relu" else z


def test_gcn_layer_hand_example():
    out = gcn_layer(Tensor([[1.0], [2.0]]), np.ones((2, 2)), Tensor([[1.0]]), "relu").data
    np.testing.assert_array_equal(out, [[3.0], [3.0]])


def test_gcn_layer_identity_case():
    phi = np.random.default_rng(0).normal(size=(4, 4))
    out = gcn_layer(Tensor(phi), np.eye(4), Tensor(np.eye(4)), "identity").data
    np.testing.assert_array_equal(out, phi)


def test_gcn_layer_relu_zeroes_negatives():
    out = gcn_layer(Tensor([[-1.0]]), np.ones((1, 1)), Tensor([[2.0]]), "relu").data
    assert out[0, 0] == 0.0


def test_gcn_layer_matches_dense_oracle_random():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n, d_in, d_out = rng.integers(1, 6), rng.integers(1, 8), rng.integers(1, 8)
        phi, a, w = rng.normal(size=(n, d_in)), rng.normal(size=(n, n)), rng.normal(size=(d_in, d_out))
        for act in ("relu", "identity"):
            ours = gcn_layer(Tensor(phi), a, Tensor(w), act).data
            np.testing.assert_allclose(ours, dense_gcn_oracle(phi, a, w, act), atol=1e-10, rtol=0)


def test_gcn_layer_shape_errors():
    with pytest.raises(DimensionError):
        gcn_layer(Tensor(np.ones((4, 3))), np.ones((3, 3)), Tensor(np.ones((3, 2))))
    with pytest.raises(DimensionError):
        gcn_layer(Tensor(np.ones((4, 3))), np.ones((4, 4)), Tensor(np.ones((5, 2))))


def test_encoder_shapes_37_16_8():
    model = GcnAutoencoder(seed=0)
    phi = np.random.default_rng(1).uniform(size=(4, NODE_DIM))
    h = gcn_layer(Tensor(phi), model.adjacency, model.enc0, "relu")
    g = gcn_layer(h, model.adjacency, model.enc1, "relu")
    assert (NODE_DIM, HIDDEN_DIM, EMBED_DIM) == (37, 16, 8)
    assert h.shape == (4, 16) and g.shape == (4, 8)
    assert model.decode(g).shape == (4, 37)
    emb = embed(model, phi)
    assert emb.G.shape == (4, 8) and emb.flattened.shape == (32,)
    np.testing.assert_array_equal(emb.G, g.data)


def test_adjacency_default_all_ones():
    np.testing.assert_array_equal(fully_connected_adjacency(), np.ones((4, 4)))
    norm = fully_connected_adjacency(normalize=True)
    np.testing.assert_allclose(norm, np.full((4, 4), 0.25))


def test_assemble_graph_layout():
    frame = make_frame("v", 0)
    g = assemble_graph(frame, frame_size=(1000.0, 1000.0))
    assert isinstance(g, InteractionGraph)
    assert g.node_attrs.shape == (4, 37)
    np.testing.assert_array_equal(g.node_attrs[3, 3:], 0.0)
    by = frame.objects["bystander"]
    cx, cy = by.center
    assert g.node_attrs[0, 0] == pytest.approx(cx / 1000.0)
    assert g.node_attrs[0, 1] == pytest.approx(cy / 1000.0)
    assert np.all((g.node_attrs >= 0) & (g.node_attrs <= 1))


def test_assemble_graph_missing_role():
    frame = make_frame("v", 0)
    del frame.objects["drone"]
    with pytest.raises(ValidationError, match="drone"):
        node_attributes(frame)


def test_depth_min_max_per_video():
    frames = [make_frame("v", i) for i in range(3)]
    for i, f in enumerate(frames):
        for j, obj in enumerate(f.objects.values()):
            obj.depth = 2.0 + i + j
    phi = video_node_attributes(frames)
    assert phi[:, :, 2].min() == 0.0 and phi[:, :, 2].max() == 1.0


def test_middle_row_permutation_equivariance():
    rng = np.random.default_rng(5)
    model = GcnAutoencoder(seed=2)
    phi = rng.uniform(size=(4, NODE_DIM))
    perm = [0, 2, 1, 3]
    a = model.adjacency.data
    base = gcn_layer(Tensor(phi), a, model.enc0, "relu").data
    swapped = gcn_layer(Tensor(phi[perm]), a[np.ix_(perm, perm)], model.enc0, "relu").data
    np.testing.assert_allclose(swapped, base[perm], atol=1e-12)


def test_identical_graphs_reduce_loss_and_embed_identically():
    phi = np.tile(np.random.default_rng(0).uniform(size=(1, 4, NODE_DIM)), (40, 1, 1))
    model, history = train_autoencoder(phi, epochs=20, seed=0)
    assert history[-1] < history[0]
    emb = embed_batch(model, phi)
    assert np.all(emb == emb[0])


def test_zero_epochs_keep_initialization():
    init = GcnAutoencoder(seed=3).state_dict()
    model, history = train_autoencoder(np.zeros((5, 4, NODE_DIM)), epochs=0, seed=3)
    assert history == []
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, init[k])


def test_autoencoder_halves_loss_on_synthetic_graphs():
    sc = generate_scenario(two_event_script(n=250, noise=2.0))
    phi = video_node_attributes(sc.frames)
    assert phi.shape == (500, 4, 37)
    _, history = train_autoencoder(phi, epochs=50, seed=0)
    assert all(np.isfinite(history))
    assert history[-1] <= 0.5 * history[0]
    trailing = np.convolve(history, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(trailing) <= 1e-12)
