import numpy as np
import pytest

from molmamba.encoders import AtomGNN, DescriptorEncoder, FragmentGNN, GINLayer, descriptor_inputs, rbf_expand
from molmamba.errors import ValidationError
from molmamba.molgraph import N_DESCRIPTORS, graph_matrices, relabel
from molmamba.synth import synth_corpus
from molmamba.tensor import Tensor, seeded_rng


def test_gin_hand_computation():
    layer = GINLayer(seeded_rng(0), 3, mlp=lambda x: x)
    a, b = np.array([1.0, 2.0, 3.0]), np.array([-0.5, 4.0, 0.25])
    out = layer(Tensor(np.stack([a, b])), np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_array_equal(out.data, [a + b, a + b])


def test_gnn_f_single_fragment_is_mlp_stack():
    gnn = FragmentGNN(seeded_rng(1), vocab_size=10, width=8, depth=6)
    out = gnn(np.array([4]), np.zeros((1, 1)))
    h = gnn.norm(gnn.embed(np.array([4])))
    for layer in gnn.layers:
        h = layer.mlp(h * (1.0 + layer.eps.data[0]))
    np.testing.assert_allclose(out.data, h.data, rtol=0, atol=1e-14)


def test_gnn_f_permutation_equivariant():
    gnn = FragmentGNN(seeded_rng(2), vocab_size=10, width=8, depth=3)
    ids = np.array([1, 5, 5, 9, 0])
    adj = np.zeros((5, 5))
    for i, j in [(0, 1), (1, 2), (2, 3), (1, 4)]:
        adj[i, j] = adj[j, i] = 1
    perm = np.random.default_rng(0).permutation(5)
    base = gnn(ids, adj).data
    moved = gnn(ids[perm], adj[np.ix_(perm, perm)]).data
    np.testing.assert_allclose(moved, base[perm], atol=1e-9)


def test_gnn_f_rejects_large_id():
    with pytest.raises(ValidationError):
        FragmentGNN(seeded_rng(0), vocab_size=3, width=4, depth=1)(np.array([3]), np.zeros((1, 1)))


def test_rbf_geometry():
    near, far = rbf_expand(np.array([0.0, 8.0]))
    assert near.argmax() == 0 and far.argmax() == 15
    assert near[0] == 1.0 and far[15] == 1.0
    spacing = 8.0 / 15
    assert rbf_expand(np.array([0.0]))[0, 1] == pytest.approx(np.exp(-1.0))
    assert rbf_expand(np.array([spacing / 2]))[0, 0] == pytest.approx(np.exp(-0.25))


def test_gnn_a_isolated_atom_keeps_embedding():
    gnn = AtomGNN(seeded_rng(3), width=8, depth=6)
    elements = np.array([6, 8, 7])
    adj = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    dist = np.array([[0, 1.4, 3.0], [1.4, 0, 2.0], [3.0, 2.0, 0]])
    out = gnn(elements, adj, dist).data
    start = gnn.norm(gnn.embed(elements)).data
    np.testing.assert_array_equal(out[2], start[2])
    assert not np.allclose(out[0], start[0])


def test_gnn_a_permutation_equivariant():
    gnn = AtomGNN(seeded_rng(4), width=8, depth=3)
    for seed in range(3):
        mol = synth_corpus(1, seed=seed)[0]
        perm = np.random.default_rng(seed).permutation(mol.n_atoms)
        base = graph_matrices(mol)
        moved_mol = relabel(mol, perm)
        moved = graph_matrices(moved_mol)
        a = gnn(mol.elements, base.adjacency, base.distance).data
        b = gnn(moved_mol.elements, moved.adjacency, moved.distance).data
        np.testing.assert_allclose(b, a[perm], atol=1e-9)
        assert np.linalg.norm(a, axis=1).max() <= 1e3


def _values(seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.normal(size=N_DESCRIPTORS) * 50, rng.normal(size=N_DESCRIPTORS)])


def test_masked_rows_hide_values():
    enc = DescriptorEncoder(seeded_rng(5), 8)
    mask = np.zeros(N_DESCRIPTORS, dtype=bool)
    mask[[3, 40, 90]] = True
    a, b = _values(0), _values(0)
    b[40] = [999.0, -3.0]
    ta, tb = enc(a, mask).data, enc(b, mask).data
    np.testing.assert_array_equal(ta[40], tb[40])
    feats = descriptor_inputs(b, mask)
    np.testing.assert_array_equal(feats[40, :2], 0.0)
    assert feats[40, 2] == 1.0


def test_segment_boundary_rows_differ_only_in_one_hot():
    values = np.ones((N_DESCRIPTORS, 2))
    feats = descriptor_inputs(values, np.zeros(N_DESCRIPTORS, dtype=bool))
    diff = np.flatnonzero(feats[24] != feats[25])
    np.testing.assert_array_equal(diff, [3, 4])
    np.testing.assert_array_equal(feats[24, 3:], [1, 0, 0, 0])
    np.testing.assert_array_equal(feats[25, 3:], [0, 1, 0, 0])
    enc = DescriptorEncoder(seeded_rng(6), 8)
    tokens = enc(values, np.zeros(N_DESCRIPTORS, dtype=bool)).data
    assert not np.allclose(tokens[24], tokens[25])
    np.testing.assert_array_equal(tokens[25], tokens[26])


def test_descriptor_input_log_compression():
    values = np.zeros((N_DESCRIPTORS, 2))
    values[0, 0], values[1, 0] = np.e - 1, -(np.e - 1)
    feats = descriptor_inputs(values, np.zeros(N_DESCRIPTORS, dtype=bool))
    assert feats[0, 0] == pytest.approx(1.0) and feats[1, 0] == pytest.approx(-1.0)
