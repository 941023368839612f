import numpy as np
import pytest

from realizability import potentials as P
from realizability.errors import DegenerateLoadingError
from realizability.grids import Interface, midpoint_grid
from realizability.iso import log_conductivity_batch
from realizability.verify import (
    Bump,
    TestFunctionBattery,
    effective_conductivity,
    strong_divergence_residual,
    weak_divergence_residual,
)

LAYERS = (Interface(axis=0, positions=(0.0, 0.5), period=1.0),)


def layered_sigma(s1, s2):
    return lambda x: np.where(np.mod(x[..., 0], 1.0) < 0.5, s1, s2)


def layered_potential(s1, s2):
    """Piecewise linear ``u`` with ``sigma u' = 1`` across the layers."""
    h = 0.5 / s1 + 0.5 / s2

    def jet(x):
        f = np.mod(x[..., 0], 1.0)
        g = np.zeros(x.shape)
        g[..., 0] = np.where(f < 0.5, 1.0 / s1, 1.0 / s2)
        u = np.floor(x[..., 0]) * h + np.where(f < 0.5, f / s1, 0.5 / s1 + (f - 0.5) / s2)
        return u, g, np.zeros(x.shape + (2,))

    return P.ScalarPotential("layered", jet, P.PeriodLattice.unit(2), np.array([h, 0.0]),
                             smooth=False, interfaces=LAYERS)


def test_bump_gradient_matches_differences():
    b = Bump((0.5, 0.4), 0.3)
    x = np.array([[0.6, 0.45], [0.45, 0.3]])
    h = 1e-6
    fd = np.stack([(b.value(x + e) - b.value(x - e)) / (2 * h) for e in np.eye(2) * h], -1)
    np.testing.assert_allclose(b.gradient(x), fd, atol=1e-7)
    assert b.value(np.array([0.9, 0.9])) == 0.0


def test_default_battery():
    bat = TestFunctionBattery.default([0, 0], [1, 2])
    assert len(bat.bumps) == 5
    assert bat.bumps[0].center == (0.5, 1.0) and bat.bumps[0].radius == pytest.approx(0.3)
    assert bat.inside([0, 0], [1, 2])
    assert len(TestFunctionBattery.default([0, 0, 0], [1, 1, 1]).bumps) == 9
    with pytest.raises(ValueError):
        weak_divergence_residual(lambda x: x, [0, 0], [1, 1], 8, battery=TestFunctionBattery([Bump((0.9, 0.5), 0.3)]))


def test_constant_current():
    rep = weak_divergence_residual(lambda x: np.ones(x.shape), [0, 0], [1, 1], 16)
    assert rep.max_weak < 1e-14 and rep.passed(1e-10)
    d = rep.to_dict()
    assert d["rule"] == "midpoint" and len(d["weak"]) == 5 and "coarse" in d


def test_divergent_current_fails():
    rep = weak_divergence_residual(lambda x: x, [0, 0], [1, 1], 32)
    assert rep.max_weak > 0.1 and not rep.passed(1e-6)


def test_presampled_matches_callable():
    f = lambda x: np.stack([np.sin(x[..., 1]), np.cos(x[..., 0])], -1)
    pts, _, _ = midpoint_grid([0, 0], [1, 1], 16)
    a = weak_divergence_residual(f, [0, 0], [1, 1], 16)
    b = weak_divergence_residual(f(pts), [0, 0], [1, 1], 16)
    assert a.weak == b.weak and b.coarse is None


def test_decay_under_refinement():
    # rot of a smooth stream function; the bumps are only finitely smooth
    def j(x):
        a, b = 2 * np.pi * x[..., 0], 2 * np.pi * x[..., 1]
        return np.stack([-np.sin(a) * np.sin(b), -np.cos(a) * np.cos(b)], -1) * 2 * np.pi

    r = [weak_divergence_residual(j, [0.1, 0.0], [0.9, 0.7], n, refine=False).max_weak for n in (16, 32, 64)]
    assert r[0] > r[1] > r[2]
    assert np.log2(r[1] / r[2]) >= 1.9


def test_aligned_piecewise_current_is_exact():
    chi = lambda x: (np.mod(x[..., 0], 1.0) <= 0.5).astype(float)
    j = lambda x: np.stack([np.ones(x.shape[:-1]), chi(x)], axis=-1)
    rep = weak_divergence_residual(j, [0, 0], [1, 1], 32, interfaces=LAYERS)
    assert rep.rule == "midpoint-aligned" and rep.max_weak < 1e-14


def test_matrix_current_columns():
    J = lambda x: np.stack([np.ones(x.shape), x[..., ::-1] * [1.0, 1.0]], axis=-1)
    rep = weak_divergence_residual(J, [0, 0], [1, 1], 32)
    assert rep.max_weak < 1e-14


def test_strong_residual_examples():
    t = np.linspace(0, 1, 11)
    X = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
    assert strong_divergence_residual(np.ones_like(X), 0.1) == 0.0
    assert strong_divergence_residual(X[..., ::-1], 0.1) == 0.0
    J = np.stack([X[..., 0], np.zeros_like(X[..., 0])], -1)
    assert strong_divergence_residual(J, 0.1) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        strong_divergence_residual(np.ones((2, 5, 2)), 0.1)


def test_effective_constant():
    loads = [P.linear([1.0, 0.0]), P.linear([0.0, 1.0])]
    S = effective_conductivity(lambda x: np.full(len(x), 2.5), loads, n=8)
    np.testing.assert_array_equal(S, 2.5 * np.eye(2))


def test_effective_monotone(golden):
    p = P.monotone_1d()
    xi0 = golden["monotone"]["xi0"]
    sigma = lambda x: np.exp(log_conductivity_batch(p, x))
    S = effective_conductivity(sigma, [p, P.linear([0.0, 1.0])], n=[64, 2])
    assert S[0, 0] == pytest.approx(1 + 0.5 * np.sin(2 * np.pi * xi0), abs=1e-8)
    assert S[1, 0] == pytest.approx(0.0, abs=1e-12)


def test_effective_laminate(golden):
    ref = golden["lamination"]
    s1, s2 = ref["sigma"]
    loads = [layered_potential(s1, s2), P.linear([0.0, 1.0])]
    S = effective_conductivity(layered_sigma(s1, s2), loads, n=10)
    np.testing.assert_allclose(S, np.diag([ref["harmonic"], ref["arithmetic"]]), atol=1e-12)


def test_effective_relabel_and_scaling():
    p = P.trig_perturbation()
    q = P.linear([0.3, 1.0])
    sig = lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x[..., 0]) ** 2
    S = effective_conductivity(sig, [p, q], n=16)
    np.testing.assert_allclose(effective_conductivity(sig, [q, p], n=16), S, atol=1e-13)
    np.testing.assert_allclose(effective_conductivity(lambda x: 3 * sig(x), [p, q], n=16), 3 * S, atol=1e-13)


def test_effective_tensor_field():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    S = effective_conductivity(lambda x: np.broadcast_to(A, x.shape[:-1] + (2, 2)),
                               [P.linear([1.0, 0.0]), P.linear([0.0, 1.0])], n=4)
    np.testing.assert_allclose(S, A)


def test_degenerate_loading():
    with pytest.raises(DegenerateLoadingError):
        effective_conductivity(lambda x: np.ones(len(x)), [P.linear([1.0, 0.0]), P.linear([2.0, 0.0])], n=4)
    with pytest.raises(DegenerateLoadingError):
        effective_conductivity(lambda x: np.ones(len(x)), [P.linear([1.0, 0.0])], n=4)
