from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from realizability import potentials as P
from realizability.errors import OrientationError
from realizability.fields import TensorConductivityField
from realizability.planar import (
    PlanarPair,
    orientation_condition,
    orientation_determinant,
    pair_conductivity,
    planar_conductivity,
    planar_field,
    rot,
    stream_consistency_check,
)
from realizability.verify import weak_divergence_residual

vec = st.tuples(st.floats(-3, 3), st.floats(-3, 3))


def _frac(rows):
    return [[Fraction(c) for c in r] for r in rows]


def sawtooth_pair():
    return PlanarPair(P.sawtooth(), P.sawtooth_partner())


def test_sawtooth_phases_exact(golden):
    for (gu, gv), key in zip(P.SAWTOOTH_PHASE_GRADIENTS, ("phase1", "phase2")):
        gu = np.array([Fraction(c) for c in gu], dtype=object)
        gv = np.array([Fraction(c) for c in gv], dtype=object)
        got = planar_conductivity(gu, gv)
        assert got.tolist() == _frac(golden["planar_phases"][key])


def test_identity_pair():
    S = planar_conductivity(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    np.testing.assert_array_equal(S, np.eye(2))


def test_drift_with_coordinate_partner():
    pair = PlanarPair(P.drift_cosine(), P.linear([0.0, 1.0]))
    x = np.random.default_rng(3).uniform(-1, 1, (50, 2))
    S = pair_conductivity(pair, x)
    np.testing.assert_allclose(np.einsum("nij,nj->ni", S, P.drift_cosine().gradient(x)),
                               np.tile([1.0, 0.0], (50, 1)), atol=1e-13)
    assert stream_consistency_check(pair, x) < 1e-13


def test_rot_and_determinant():
    np.testing.assert_array_equal(rot([1.0, 2.0]), [-2.0, 1.0])
    assert orientation_determinant([1.0, 2.0], [3.0, 4.0]) == -2.0


@given(gu=vec, gv=vec)
def test_determinant_and_positivity(gu, gv):
    gu, gv = np.array(gu), np.array(gv)
    a = orientation_determinant(gu, gv)
    assume(a > 1e-2 and np.linalg.norm(gu) > 1e-1)
    S = planar_conductivity(gu, gv)
    q = gu @ gu
    np.testing.assert_allclose(S, S.T)
    assert np.linalg.det(S) == pytest.approx(q**-2, rel=1e-8)
    assert np.min(np.linalg.eigvalsh(S)) > 0
    np.testing.assert_allclose(S @ gu, -rot(gv), atol=1e-8 * max(1.0, np.abs(S).max()))


def test_orientation_errors():
    with pytest.raises(OrientationError):
        planar_conductivity(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    with pytest.raises(OrientationError):
        planar_conductivity(np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 1.0], [2.0, 0.0]]))


def test_pair_validation():
    with pytest.raises(ValueError):
        PlanarPair(P.monotone_1d(d=3), P.linear([0.0, 1.0, 0.0]))


def test_sawtooth_orientation_and_stream():
    pair = sawtooth_pair()
    rep = orientation_condition(pair)
    assert rep.positive and rep.min_det == 1.0
    x = np.random.default_rng(1).uniform(-2, 2, (200, 2))
    assert stream_consistency_check(pair, x) == 0.0


def test_sawtooth_current_weak_residual():
    pair = sawtooth_pair()
    u = pair.u

    def current(x):
        return np.einsum("...ij,...j->...i", pair_conductivity(pair, x), u.gradient(x))

    rep = weak_divergence_residual(current, [0, 0], [1, 1], 64, interfaces=pair.interfaces)
    assert rep.passed(1e-10)
    # the laminate current chi (e1 + e2) + (1 - chi) e1
    chi = lambda x: (np.mod(x[..., 0], 1.0) <= 0.5).astype(float)
    lam = lambda x: np.stack([np.ones(x.shape[:-1]), chi(x)], axis=-1)
    assert weak_divergence_residual(lam, [0, 0], [1, 1], 64, interfaces=pair.interfaces).passed(1e-10)


def test_planar_field_export(tmp_path):
    pair = PlanarPair(P.trig_perturbation(), P.linear([0.0, 1.0]))
    fld = planar_field(pair, [0, 0], [1, 1], 8)
    s = fld.summary()
    assert s["max_asymmetry"] == 0.0 and s["min_eigenvalue"] > 0
    fld.write(tmp_path / "s.csv", tmp_path / "s.json")
    back = TensorConductivityField.read(tmp_path / "s.csv", tmp_path / "s.json")
    np.testing.assert_array_equal(back.sigma, fld.sigma)
    assert back.meta["u"]["name"] == "trig_perturbation"
