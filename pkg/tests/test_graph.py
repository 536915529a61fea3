import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgcn_kit.graph import (
    TEMPLATES, GraphError, SkeletonGraph, UnknownTemplateError, build_adjacency,
    get_template, normalize_adjacency, sgcn_backward, sgcn_forward,
)
from stgcn_kit.tensor import ParameterStore, ShapeError, grad_check

from conftest import all_graphs, dense_normalize_oracle, power_iteration_spectral_radius


def test_build_adjacency_symmetric_zero_diagonal():
    A = build_adjacency(3, [(0, 1), (1, 2)])
    np.testing.assert_array_equal(A, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def test_duplicate_and_reversed_edges_collapse():
    np.testing.assert_array_equal(build_adjacency(3, [(0, 1), (1, 0), (0, 1)]),
                                  build_adjacency(3, [(0, 1)]))


def test_chain3_normalized_values():
    A_norm = normalize_adjacency(build_adjacency(3, [(0, 1), (1, 2)]))
    # degrees with self loops are (2, 3, 2)
    assert A_norm[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert A_norm[0, 1] == pytest.approx(1 / np.sqrt(6), abs=1e-12)
    assert A_norm[1, 1] == pytest.approx(1 / 3, abs=1e-12)
    np.testing.assert_allclose(A_norm.sum(axis=1), [0.90825, 1.14982, 0.90825], atol=1e-4)


def test_clique2_is_uniform_half():
    np.testing.assert_allclose(normalize_adjacency(build_adjacency(2, [(0, 1)])), 0.5, atol=1e-15)


def test_isolated_joint_keeps_unit_self_weight():
    A_norm = normalize_adjacency(build_adjacency(3, [(0, 1)]))
    assert A_norm[2, 2] == 1.0 and A_norm[2, :2].sum() == 0.0


def test_single_joint():
    np.testing.assert_array_equal(normalize_adjacency(np.zeros((1, 1))), [[1.0]])


@pytest.mark.parametrize("edges", [[(0, 3)], [(1, 1)], [(-1, 0)]])
def test_invalid_edges_rejected(edges):
    with pytest.raises(GraphError):
        build_adjacency(3, edges)


@pytest.mark.parametrize("A, err", [
    (np.zeros((2, 3)), ShapeError),
    (np.array([[0.0, 1], [0, 0]]), GraphError),
    (np.array([[0.0, 0.5], [0.5, 0]]), GraphError),
    (np.array([[1.0, 0], [0, 0]]), GraphError),
])
def test_normalize_rejects_bad_matrices(A, err):
    with pytest.raises(err):
        normalize_adjacency(A)


@pytest.mark.parametrize("J", [1, 2, 3, 4, 5])
def test_exhaustive_small_graphs_match_oracle(J):
    for A in all_graphs(J):
        np.testing.assert_allclose(normalize_adjacency(A), dense_normalize_oracle(A), rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.data())
def test_normalized_properties(J, data):
    pairs = [(i, j) for i in range(J) for j in range(i + 1, J)]
    chosen = data.draw(st.lists(st.sampled_from(pairs), unique=True) if pairs else st.just([]))
    A = build_adjacency(J, chosen)
    M = normalize_adjacency(A)
    np.testing.assert_allclose(M, M.T, atol=0)
    assert np.all(M >= 0)
    assert np.all(np.diag(M) > 0)
    # spectral radius is exactly 1 for the symmetric normalization
    lam = power_iteration_spectral_radius(M)
    assert lam <= 1.0 + 1e-9
    # permutation equivariance
    perm = np.array(data.draw(st.permutations(range(J))))
    Pm = np.eye(J)[perm]
    np.testing.assert_allclose(normalize_adjacency(Pm @ A @ Pm.T), Pm @ M @ Pm.T, atol=1e-12)


def test_templates_are_valid():
    for t in TEMPLATES.values():
        g = t.graph()
        assert g.adjacency.shape == (t.joint_count,) * 2
        assert (g.degrees() >= 1).all()
    assert get_template("ntu25").joint_count == 25
    assert len(get_template("ntu25").edges) == 24


def test_unknown_template():
    with pytest.raises(UnknownTemplateError, match="known"):
        get_template("nope")


def test_graph_arrays_read_only():
    g = SkeletonGraph.from_edges(3, [(0, 1)])
    with pytest.raises(ValueError):
        g.normalized_adjacency[0, 0] = 2.0


# -- S-GCN ---------------------------------------------------------------------

def test_sgcn_identity_on_isolated_joints(rng):
    f = rng.normal(size=(2, 4, 5))
    np.testing.assert_allclose(sgcn_forward(f, np.eye(2), np.eye(4)), f)


def test_sgcn_matches_einsum_oracle(rng):
    f = rng.normal(size=(3, 5, 7))
    W = rng.normal(size=(3, 4))
    A = normalize_adjacency(build_adjacency(5, [(0, 1), (1, 2), (3, 4)]))
    expected = np.zeros((4, 5, 7))
    for o in range(4):
        for i in range(5):
            for c in range(3):
                for j in range(5):
                    expected[o, i] += A[i, j] * W[c, o] * f[c, j]
    np.testing.assert_allclose(sgcn_forward(f, W, A), expected, atol=1e-12)


def test_sgcn_shape_errors(rng):
    with pytest.raises(ShapeError):
        sgcn_forward(rng.normal(size=(3, 5, 7)), rng.normal(size=(4, 2)), np.eye(5))
    with pytest.raises(ShapeError):
        sgcn_forward(rng.normal(size=(3, 5, 7)), rng.normal(size=(3, 2)), np.eye(4))


def test_sgcn_linear_in_input(rng):
    f, g = rng.normal(size=(2, 2, 2, 6))
    W = rng.normal(size=(2, 3))
    A = normalize_adjacency(build_adjacency(2, [(0, 1)]))
    np.testing.assert_allclose(sgcn_forward(2 * f - g, W, A),
                               2 * sgcn_forward(f, W, A) - sgcn_forward(g, W, A), atol=1e-12)


@pytest.mark.parametrize("batched", [False, True])
def test_sgcn_backward_finite_differences(rng, batched):
    shape = (2, 3, 4, 5) if batched else (3, 4, 5)
    A = normalize_adjacency(build_adjacency(4, [(0, 1), (1, 2), (1, 3)]))
    store = ParameterStore()
    store.add("f", rng.normal(size=shape))
    store.add("W", rng.normal(size=(3, 2)))
    up = rng.normal(size=shape[:-3] + (2, 4, 5))

    def loss(store, backward):
        out = sgcn_forward(store["f"], store["W"], A)
        if backward:
            gf, gW = sgcn_backward(store["f"], store["W"], A, up)
            store.accumulate("f", gf)
            store.accumulate("W", gW)
        return float((out * up).sum())

    assert grad_check(loss, store) < 1e-6
