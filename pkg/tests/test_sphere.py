import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from zlpflow.sphere import (
    Rotation,
    as_points,
    log_surface_volume,
    normalize,
    north_pole,
    numeric_density_update,
    random_rotation,
    rotation_from_vector,
    rotation_to,
    surface_volume,
    tangent_basis,
    uniform_log_density,
    uniform_sample,
    vector_from_rotation,
)


@pytest.mark.parametrize("dim,expected", [(2, 2 * math.pi), (3, 4 * math.pi), (4, 2 * math.pi**2), (5, 8 * math.pi**2 / 3)])
def test_surface_volume_known_values(dim, expected):
    assert surface_volume(dim) == pytest.approx(expected, rel=1e-14)
    assert log_surface_volume(dim) == pytest.approx(math.log(expected), rel=1e-14)


def test_log_surface_volume_large_dimension():
    # |S^(D-1)| underflows double precision long before D = 2000
    assert np.isfinite(log_surface_volume(2000))
    assert log_surface_volume(2000) < -2000


def test_uniform_log_density_d3():
    assert uniform_log_density(3) == pytest.approx(-math.log(4 * math.pi), rel=1e-15)


vectors = arrays(np.float64, st.integers(2, 9), elements=st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 1e-3)


@given(vectors)
def test_rotation_to_maps_pole_to_target(v):
    mu = normalize(v)
    r = rotation_to(mu)
    np.testing.assert_allclose(r.apply(north_pole(len(v))), mu, atol=1e-13)
    np.testing.assert_allclose(r.matrix.T @ r.matrix, np.eye(len(v)), atol=1e-13)
    assert np.linalg.det(r.matrix) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("dim", [2, 3, 6])
def test_rotation_to_special_directions(dim):
    for mu in (north_pole(dim), -north_pole(dim), np.eye(dim)[0]):
        np.testing.assert_allclose(rotation_to(mu).apply(north_pole(dim)), mu, atol=1e-14)
    near = -north_pole(dim)
    near[0] = 1e-14
    mu = normalize(near)
    np.testing.assert_allclose(rotation_to(mu).apply(north_pole(dim)), mu, atol=1e-14)


def test_rotation_validation():
    with pytest.raises(ValueError):
        Rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Rotation(np.ones((3, 3)))


@given(arrays(np.float64, 6, elements=st.floats(-1, 1)))
def test_rotation_vector_round_trip(theta):
    r = rotation_from_vector(theta, 4)
    np.testing.assert_allclose(vector_from_rotation(r), theta, atol=1e-10)


def test_random_rotation_is_rotation(rng):
    for dim in (2, 3, 7):
        r = random_rotation(rng, dim)
        np.testing.assert_allclose(r.matrix @ r.matrix.T, np.eye(dim), atol=1e-13)
        np.testing.assert_allclose(r.apply_inverse(r.apply(np.eye(dim))), np.eye(dim), atol=1e-14)


def test_uniform_sample_on_sphere_and_centered(rng):
    x = uniform_sample(rng, 5, 200_000)
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-15)
    assert np.all(np.abs(x.mean(axis=0)) < 5 / math.sqrt(200_000))


def test_as_points_validation():
    with pytest.raises(ValueError):
        as_points([1.0, 0.1, 0.0])
    with pytest.raises(ValueError):
        as_points([[1.0, 0.0]], dim=3)
    np.testing.assert_allclose(as_points([0.0, 0.0, 1.0 + 1e-14]), [0, 0, 1], atol=1e-15)


def test_tangent_basis_orthonormal_and_tangent(rng):
    x = uniform_sample(rng, 4, 10)
    e = tangent_basis(x)
    for xi, ei in zip(x, e):
        np.testing.assert_allclose(ei.T @ ei, np.eye(3), atol=1e-13)
        np.testing.assert_allclose(xi @ ei, 0.0, atol=1e-13)


def test_numeric_density_update_rotation_is_one(rng):
    r = random_rotation(rng, 3)
    x = uniform_sample(rng, 3, 50)
    np.testing.assert_allclose(numeric_density_update(r.apply, x), 1.0, atol=1e-9)


def test_numeric_density_update_step_range():
    with pytest.raises(ValueError):
        numeric_density_update(lambda x: x, north_pole(3), step=1e-2)
