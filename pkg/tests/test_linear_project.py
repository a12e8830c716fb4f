import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from zlpflow.chain import FlowChain, LinearProjectLayer
from zlpflow.linear_project import (
    ConstraintError,
    LPParams,
    LPVariant,
    central_ag_log_pdf,
    kent_constraint_interval,
    lp_forward,
    lp_forward_log_det,
    lp_inverse,
    lp_log_density_update,
    make_constrained_sc,
    sigma_from_unconstrained,
    unconstrained_from_sigma,
)
from zlpflow.sphere import numeric_density_update, uniform_sample


def _ag_reference(x, lam):
    """Central angular Gaussian written out directly."""
    dim = len(lam)
    area = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
    quad = np.einsum("ni,ij,nj->n", x, np.linalg.inv(lam), x)
    return -math.log(area) - 0.5 * math.log(np.linalg.det(lam)) - dim / 2 * np.log(quad)


def test_kent_constraint_interval_values():
    lo, hi = kent_constraint_interval(100.0, 3)
    assert hi == pytest.approx(math.sqrt(103 / 3), rel=1e-15)
    assert lo == pytest.approx(1 / hi, rel=1e-15)
    with pytest.raises(ValueError):
        kent_constraint_interval(0.0, 3)


def test_constrained_scaling_validation():
    p = make_constrained_sc(1.5, 100.0)
    np.testing.assert_array_equal(np.diag(p.matrix), [1.5, 1 / 1.5, 1.0])
    with pytest.raises(ConstraintError):
        make_constrained_sc(3.0, 10.0)
    # the interval is open
    _, hi = kent_constraint_interval(10.0, 3)
    with pytest.raises(ConstraintError):
        LPParams.constrained([hi, 1.0], 10.0)
    assert LPParams.constrained([3.0, 1 / 3], 10.0, check=False).variant is LPVariant.CONSTRAINED_SC
    with pytest.raises(ValueError):
        make_constrained_sc(1.2, 10.0, dim=4)


def test_matrix_structure_validation():
    with pytest.raises(ValueError):
        LPParams(LPVariant.FULL, np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        LPParams(LPVariant.DIAGONAL_S, np.array([[1.0, 0.1], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        LPParams(LPVariant.FULL, np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        LPParams.diagonal([1.0, -1.0])
    with pytest.raises(ValueError):
        LPParams.lower(np.ones((3, 3)))


def test_constructors_normalize_determinant(rng):
    a = rng.normal(size=(4, 4)) + 3 * np.eye(4)
    p = LPParams.from_matrix(a)
    assert np.linalg.det(p.matrix) == pytest.approx(1.0, rel=1e-12)
    lam = a @ a.T
    np.testing.assert_allclose(p.matrix @ p.matrix.T, lam / np.linalg.det(lam) ** 0.25, rtol=1e-12)
    q = LPParams.full([0.1, -0.3, 0.5, 0.2], rng.normal(size=6))
    assert q.log_det == pytest.approx(0.0, abs=1e-14)
    r = LPParams.full(q.log_scales(), q.lower_entries())
    np.testing.assert_allclose(r.matrix, q.matrix, rtol=1e-14)


@given(arrays(np.float64, 2, elements=st.floats(-20, 20)), st.floats(0.01, 1e6))
def test_sigma_transform_round_trip(theta, kappa):
    sig = sigma_from_unconstrained(theta, kappa, 3)
    lo, hi = kent_constraint_interval(kappa, 3)
    assert np.all(sig > lo) and np.all(sig < hi)
    LPParams.constrained(sig, kappa)
    np.testing.assert_allclose(sigma_from_unconstrained(unconstrained_from_sigma(sig, kappa, 3), kappa, 3), sig, rtol=1e-12)
    if np.all(np.abs(theta) < 5):
        np.testing.assert_allclose(unconstrained_from_sigma(sig, kappa, 3), theta, rtol=1e-8, atol=1e-8)


def test_unconstrained_from_sigma_rejects_boundary():
    _, hi = kent_constraint_interval(5.0, 3)
    with pytest.raises(ConstraintError):
        unconstrained_from_sigma([hi, 1.0], 5.0, 3)


@pytest.mark.parametrize("dim", [2, 3, 5, 8])
def test_forward_inverse_round_trip(dim, rng):
    p = LPParams.from_matrix(rng.normal(size=(dim, dim)) + 2 * np.eye(dim))
    x = uniform_sample(rng, dim, 500)
    np.testing.assert_allclose(lp_inverse(lp_forward(x, p), p), x, atol=1e-12)


@pytest.mark.parametrize("dim", [3, 4, 6])
def test_density_update_matches_finite_differences(dim, rng):
    p = LPParams.from_matrix(rng.normal(size=(dim, dim)) + 2 * np.eye(dim))
    x = uniform_sample(rng, dim, 200)
    num = numeric_density_update(lambda z: lp_forward(z, p), x)
    np.testing.assert_allclose(lp_forward_log_det(x, p), np.log(num), rtol=1e-6, atol=1e-7)
    # inverse form evaluated at the image equals minus the forward form
    np.testing.assert_allclose(lp_log_density_update(lp_forward(x, p), p), -lp_forward_log_det(x, p), atol=1e-12)


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_pushforward_of_uniform_is_central_angular_gaussian(dim, rng):
    a = np.tril(rng.normal(size=(dim, dim)), -1) + np.diag(np.exp(rng.normal(size=dim)))
    p = LPParams.lower(a)
    chain = FlowChain(dim, [LinearProjectLayer(p)])
    x = uniform_sample(rng, dim, 300)
    lam = a @ a.T
    np.testing.assert_allclose(chain.log_prob(x), _ag_reference(x, lam), rtol=0, atol=1e-12)
    np.testing.assert_allclose(central_ag_log_pdf(x, lam), _ag_reference(x, lam), rtol=0, atol=1e-12)


def test_central_ag_scale_invariant_and_antipodal(rng):
    lam = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.5]])
    x = uniform_sample(rng, 3, 50)
    np.testing.assert_allclose(central_ag_log_pdf(x, 7 * lam), central_ag_log_pdf(x, lam), atol=1e-13)
    np.testing.assert_allclose(central_ag_log_pdf(-x, lam), central_ag_log_pdf(x, lam), atol=1e-13)
    assert central_ag_log_pdf(np.eye(3)[0], np.eye(3)) == pytest.approx(-math.log(4 * math.pi))


def test_central_ag_validation():
    with pytest.raises(ValueError):
        central_ag_log_pdf(np.eye(3)[0], np.array([[1.0, 2.0, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(ValueError):
        central_ag_log_pdf(np.eye(3)[0], -np.eye(3))
