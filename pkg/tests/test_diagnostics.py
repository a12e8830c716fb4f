import numpy as np
import pytest

from zlpflow.chain import FlowChain
from zlpflow.diagnostics import (
    count_grid_extrema,
    equirect_points,
    grid_normalization,
    kent_constraint_failures,
    kent_tangent_gaussian_check,
    layer_jacobian_errors,
    mc_normalization,
    round_trip_error,
    run_checks,
    unimodality_check,
)
from zlpflow.presets import FamilyPreset, build_preset, random_preset


def test_equirect_points_on_sphere():
    pts, theta, phi = equirect_points(16)
    assert pts.shape == (8, 16, 3)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=-1), 1.0, atol=1e-15)
    with pytest.raises(ValueError):
        equirect_points(7)


def test_count_grid_extrema_simple_cases():
    assert count_grid_extrema(np.zeros((8, 16))) == (1, 1)
    pts, _, _ = equirect_points(64)
    # x_1 has one maximum and one minimum on the sphere
    assert count_grid_extrema(pts[..., 0]) == (1, 1)
    # x_1^2 has two of each
    assert count_grid_extrema(pts[..., 0] ** 2) == (2, 2)


def test_vmf_unimodal_and_bingham_bimodal():
    vmf = build_preset(FamilyPreset("vmf", 3, {"kappa": 20.0, "mu": [0.3, 0.5, 0.81]}))
    assert unimodality_check(vmf, n_lon=240) == (1, 1)
    bing = build_preset(FamilyPreset("bingham", 3, {"scales": [3.0, 1.0, 1 / 3], "mu": [0.1, 0.2, 0.97]}))
    assert unimodality_check(bing, n_lon=240) == (2, 2)


def test_kent_random_draws_unimodal(rng):
    for _ in range(5):
        chain = build_preset(random_preset("kent", 3, rng))
        assert unimodality_check(chain, n_lon=240) == (1, 1)


def test_grid_normalization_vmf():
    chain = build_preset(FamilyPreset("vmf", 3, {"kappa": 10.0}))
    assert grid_normalization(chain, 720) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("u", [1.0, 1.5])
def test_kent_tangent_limit(u):
    err, sig = kent_tangent_gaussian_check(1e4, u)
    assert err < 2e-2
    assert sig == pytest.approx((u / 100, 1 / (100 * u)))


def test_tangent_limit_worse_at_low_concentration():
    assert kent_tangent_gaussian_check(100.0, 1.5)[0] > kent_tangent_gaussian_check(1e4, 1.5)[0]
    with pytest.raises(ValueError):
        kent_tangent_gaussian_check(10.0, 1.5)


def test_generic_checks(rng):
    chain = build_preset(random_preset("fb6", 4, rng))
    assert round_trip_error(chain, rng, 300) < 1e-9
    mean, se = mc_normalization(chain, rng, 100_000, batch=30_000)
    assert abs(mean - 1) < 4 * se
    errs = layer_jacobian_errors(chain, rng, 200)
    assert [k for k, _ in errs] == [l.kind for l in chain.layers]
    assert max(e for _, e in errs) < 1e-5


def test_constraint_failures_reported():
    chain = build_preset(FamilyPreset("kent", 3, {"kappa": 10.0, "u": 3.0}), validate=False)
    assert len(kent_constraint_failures(chain)) == 1
    results = run_checks(chain, "fast", family="kent")
    assert not results[0].passed and "outside" in results[0].detail


def test_run_checks_uniform_all_pass():
    results = run_checks(FlowChain(3, []), "fast")
    assert all(r.passed for r in results)
    assert all(r.line().startswith("PASS") for r in results)


def test_run_checks_full_kent_has_tangent_line():
    chain = build_preset(FamilyPreset("kent", 3, {"kappa": 1e4, "u": 1.5}))
    names = [r.name for r in run_checks(chain, "full", family="kent")]
    assert "tangent gaussian limit" in names and "unimodality grid" in names
    with pytest.raises(ValueError):
        run_checks(chain, "medium")
