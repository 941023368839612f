import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from realizability import potentials as P
from realizability.errors import DeterminantSignError, LaminateSpecError, NotRankOneError
from realizability.laminate import (
    Child,
    LaminateNode,
    LaminateSpec,
    Leaf,
    check_rank_one,
    conductivity_spec,
    evaluate_laminate_field,
    jump_residual,
    laminate_realizability,
    laminate_sigma,
    node_average,
    quasi_affinity_check,
)
from realizability.matrix import cofactor

I2, I3 = np.eye(2), np.eye(3)
E = np.eye(3)
SAW_P = np.array([[0.0, -1.0], [1.0, 1.0]])
SAW_Q = np.array([[-1.0, -2.0], [1.0, 1.0]])


def two_phase(P, Q, theta=0.5, xi=(1.0, 0.0), kind="field"):
    return LaminateSpec(LaminateNode(np.array(xi), 1, [Child(theta, Leaf(P, kind)), Child(1 - theta, Leaf(Q, kind))]))


def rank_one_pair(rng, d):
    while True:
        P = rng.normal(size=(d, d)) + 2 * np.eye(d)
        xi = rng.normal(size=d)
        xi /= np.linalg.norm(xi)
        Q = P - np.outer(xi, rng.normal(size=d))
        if np.linalg.det(P) > 0.05 and np.linalg.det(Q) > 0.05:
            return P, Q, xi


def test_node_average_examples():
    assert np.array_equal(node_average(Leaf(SAW_P)), SAW_P)
    spec = two_phase(SAW_P, SAW_Q)
    avg = node_average(spec)
    np.testing.assert_array_equal(avg, (SAW_P + SAW_Q) / 2)
    # columns are the mean gradients of the sawtooth pair
    np.testing.assert_allclose(avg[:, 0], P.mean_gradient(P.sawtooth()))
    np.testing.assert_allclose(avg[:, 1], P.mean_gradient(P.sawtooth_partner()))


def test_check_rank_one_examples():
    conn = check_rank_one(I2, I2 - np.outer([1, 0], [0, 1]))
    np.testing.assert_allclose(conn.xi, [1, 0])
    np.testing.assert_allclose(conn.eta, [0, 1])
    assert conn.residual <= 1e-10
    deg = check_rank_one(I2, I2)
    assert deg.degenerate and np.all(deg.eta == 0) and deg.xi is None
    with pytest.raises(NotRankOneError):
        check_rank_one(I2 + np.eye(2), I2)
    with pytest.raises(ValueError):
        check_rank_one(I2, I3)


def test_jump_residual_examples():
    assert jump_residual(I2, I2 + np.outer(E[0, :2], E[1, :2]), [1, 0]) == 0.0
    np.testing.assert_array_equal(cofactor(I2 + np.outer(E[0, :2], E[1, :2])), [[1, 0], [-1, 1]])
    assert jump_residual(SAW_P, SAW_P, [0.3, 0.4]) == 0.0
    assert jump_residual(I3, I3 + np.outer(E[0], E[2]), E[0]) == 0.0


def test_quasi_affinity_examples():
    Q = I3 + np.outer(E[0], E[1])
    assert quasi_affinity_check(I3, Q, 0.5) <= 1e-15
    np.testing.assert_allclose(0.5 * cofactor(I3) + 0.5 * cofactor(Q), I3 - 0.5 * np.outer(E[1], E[0]))
    assert quasi_affinity_check(SAW_P, SAW_P, 0.3) == 0.0
    assert quasi_affinity_check(I3, 2 * I3, 0.5) == pytest.approx(np.linalg.norm(0.25 * I3))
    with pytest.raises(ValueError):
        quasi_affinity_check(I3, I3, 1.5)


def test_laminate_sigma_examples():
    np.testing.assert_array_equal(laminate_sigma(I2), I2)
    np.testing.assert_allclose(laminate_sigma(np.diag([1.0, 2.0])), np.diag([2.0, 0.5]))
    with pytest.raises(DeterminantSignError, match="determinant positivity"):
        laminate_sigma([I2, np.diag([1.0, -1.0])])


@pytest.mark.parametrize("d", [2, 3])
def test_random_rank_one_pairs(d):
    rng = np.random.default_rng(d)
    for _ in range(50):
        P_, Q, xi = rank_one_pair(rng, d)
        conn = check_rank_one(P_, Q)
        assert abs(abs(conn.xi @ xi) - 1) < 1e-8
        assert jump_residual(P_, Q, xi) <= 1e-10
        for theta in (0.0, 0.25, 0.5, 0.75, 1.0):
            assert quasi_affinity_check(P_, Q, theta) <= 1e-10


@given(
    arrays(np.float64, 3, elements=st.floats(-2, 2)),
    arrays(np.float64, 3, elements=st.floats(-2, 2)),
)
def test_cofactor_rank_one_identity(xi, lam):
    A = np.eye(3) + np.outer(xi, lam)
    expected = (1 + xi @ lam) * np.eye(3) - np.outer(xi, lam)
    np.testing.assert_allclose(cofactor(A).T, expected, atol=1e-12)


def test_cofactor_rank_one_identity_singular():
    xi = np.array([1.0, 2.0, -1.0])
    lam = np.array([-1.0, 0.0, 0.0])
    assert xi @ lam == -1.0
    A = np.eye(3) + np.outer(xi, lam)
    np.testing.assert_allclose(cofactor(A).T, -np.outer(xi, lam), atol=1e-15)


@given(arrays(np.float64, (2, 2), elements=st.floats(-3, 3)),
       arrays(np.float64, (2, 2), elements=st.floats(-3, 3)),
       st.floats(0, 1))
def test_planar_cofactor_is_linear(A, B, theta):
    assert quasi_affinity_check(A, B, theta) <= 1e-12


@given(arrays(np.float64, (3, 3), elements=st.floats(-2, 2)))
def test_sigma_times_field_is_cofactor(A):
    A = A + 3 * np.eye(3)
    if np.linalg.det(A) <= 1e-3:
        return
    np.testing.assert_allclose(laminate_sigma(A) @ A, cofactor(A), atol=1e-9 * np.abs(cofactor(A)).max())


def test_realizability_reports():
    rep = laminate_realizability(LaminateSpec(Leaf(I2)))
    assert rep.verdict == "realizable" and not rep.interfaces
    rep = laminate_realizability(two_phase(SAW_P, SAW_Q))
    assert rep.verdict == "realizable"
    assert [leaf["det"] for leaf in rep.leaves] == pytest.approx([1.0, 1.0])
    d = rep.to_dict()
    json.dumps(d)
    assert len(d["interfaces"]) == 1 and d["interfaces"][0]["jump_residual"] == 0.0
    bad = laminate_realizability(two_phase(I2, np.diag([1.0, -1.0]), xi=(0.0, 1.0)))
    assert bad.verdict == "not realizable" and "determinant positivity" in bad.reasons
    # connection direction must match the node's normal
    wrong = laminate_realizability(two_phase(SAW_P, SAW_Q, xi=(0.0, 1.0)))
    assert "rank-one connection" in wrong.reasons and "jump condition" in wrong.reasons
    with pytest.raises(LaminateSpecError):
        laminate_realizability(two_phase(I2, I2, kind="sigma"))


def test_three_children_check_wrap_pair():
    A = np.diag([2.0, 1.0])
    B = A + np.outer([0, 1], [0.5, 0.0])
    C = A + np.outer([0, 1], [0.0, 0.5])
    spec = LaminateSpec(LaminateNode(np.array([0.0, 1.0]), 1, [Child(0.25, Leaf(A)), Child(0.25, Leaf(B)), Child(0.5, Leaf(C))]))
    rep = laminate_realizability(spec)
    assert [e["pair"] for e in rep.interfaces] == [[0, 1], [1, 2], [2, 0]]
    assert rep.verdict == "realizable"


def nested_spec():
    inner = LaminateNode(np.array([0.0, 1.0]), 2, [Child(0.5, Leaf(SAW_P)), Child(0.5, Leaf(SAW_P + np.outer([0, 1], [0.5, 0.5])))])
    return LaminateSpec(LaminateNode(np.array([1.0, 0.0]), 1, [Child(0.5, inner), Child(0.5, Leaf(SAW_Q))]))


def test_field_evaluation():
    spec = two_phase(SAW_P, SAW_Q)
    vals = evaluate_laminate_field(spec, np.array([[0.1, 0.3], [0.6, 0.3], [1.2, -5.0]]), [1.0])
    np.testing.assert_array_equal(vals, [SAW_P, SAW_Q, SAW_P])
    np.testing.assert_array_equal(evaluate_laminate_field(LaminateSpec(Leaf(I2)), np.zeros((4, 2)), [1.0]), [I2] * 4)
    with pytest.raises(ValueError):
        evaluate_laminate_field(nested_spec(), np.zeros((1, 2)), [0.1, 0.5])
    with pytest.raises(ValueError):
        evaluate_laminate_field(nested_spec(), np.zeros((1, 2)), [0.5])


def test_field_cell_average_matches_node_average():
    spec = nested_spec()
    n = 64
    t = (np.arange(n) + 0.5) / n
    X = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
    vals = evaluate_laminate_field(spec, X, [0.5, 0.125])
    np.testing.assert_allclose(vals.mean(axis=(0, 1)), node_average(spec), atol=1e-14)


def test_json_roundtrip(tmp_path):
    spec = conductivity_spec(nested_spec())
    path = tmp_path / "lam.json"
    path.write_text(json.dumps(spec.to_dict()))
    back = LaminateSpec.load(path)
    assert back.to_dict() == spec.to_dict()
    assert all(leaf.kind == "sigma" for _, leaf in back.leaves())
    bare = LaminateSpec.from_dict({"node": {"xi": [1, 0], "scale": 1, "children": [
        {"theta": 0.5, "leaf": [[1, 0], [0, 1]]}, {"theta": 0.5, "leaf": {"P": [[2, 0], [0, 1]]}}]}})
    assert [p for p, _ in bare.leaves()] == ["root/0", "root/1"]


@pytest.mark.parametrize("data,needle", [
    ({"node": {"xi": [1, 0], "scale": 1, "children": [{"theta": 0.4, "leaf": [[1, 0], [0, 1]]},
                                                       {"theta": 0.4, "leaf": [[1, 0], [0, 1]]}]}}, "sum"),
    ({"node": {"xi": [1, 0], "scale": 1, "children": [{"theta": -0.5, "leaf": [[1, 0], [0, 1]]},
                                                       {"theta": 1.5, "leaf": [[1, 0], [0, 1]]}]}}, "positive"),
    ({"node": {"xi": [0, 0], "scale": 1, "children": [{"theta": 1.0, "leaf": [[1, 0], [0, 1]]}]}}, "nonzero"),
    ({"node": {"xi": [1, 0], "scale": 2, "children": [
        {"theta": 1.0, "node": {"xi": [0, 1], "scale": 2, "children": [{"theta": 1.0, "leaf": [[1, 0], [0, 1]]}]}}]}},
     "root/0: scale"),
    ({"node": {"xi": [1, 0], "scale": 1, "children": [{"theta": 1.0, "leaf": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}]}},
     "dimension"),
    ({"node": {"xi": [1, 0], "children": []}}, "malformed"),
    ({"node": {"xi": [1, 0], "scale": 1, "children": [{"leaf": [[1, 0], [0, 1]]}]}}, "theta"),
    ({"leaf": {"Q": [[1]]}}, "'P' or 'sigma'"),
])
def test_validation_errors(data, needle):
    with pytest.raises(LaminateSpecError, match=needle):
        LaminateSpec.from_dict(data)
