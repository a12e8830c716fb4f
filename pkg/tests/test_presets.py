import numpy as np
import pytest

from zlpflow.diagnostics import mc_normalization
from zlpflow.linear_project import ConstraintError, LPVariant, central_ag_log_pdf
from zlpflow.presets import FAMILIES, FamilyPreset, build_preset, random_preset
from zlpflow.sphere import rotation_to, uniform_sample

LAYOUT = {
    "vmf": ["rotation", "zoom"],
    "fb4": ["rotation", "zoom", "linear_project"],
    "kent": ["rotation", "linear_project", "zoom"],
    "fb6": ["rotation", "linear_project", "zoom", "linear_project"],
    "fb8": ["rotation", "linear_project", "zoom", "linear_project"],
}


@pytest.mark.parametrize("family", sorted(LAYOUT))
def test_layer_layout(family, rng):
    chain = build_preset(random_preset(family, 3, rng))
    assert [l.kind for l in chain.layers] == LAYOUT[family]


def test_bingham_layouts(rng):
    full = build_preset(random_preset("bingham", 4, rng))
    assert [l.kind for l in full.layers] == ["linear_project"]
    diag = build_preset(FamilyPreset("bingham", 3, {"mu": [1, 0, 0], "scales": [1, 2, 3]}))
    assert [l.kind for l in diag.layers] == ["rotation", "linear_project"]


def test_generic_block_count(rng):
    chain = build_preset(random_preset("generic", 3, rng, n_blocks=5))
    assert len(chain) == 15
    assert [l.kind for l in chain.layers[:3]] == ["rotation", "zoom", "linear_project"]


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("dim", [3, 5])
def test_random_presets_are_normalized(family, dim, rng):
    chain = build_preset(random_preset(family, dim, rng, n_blocks=3))
    mean, se = mc_normalization(chain, rng, 200_000)
    assert abs(mean - 1) < 4 * se + 1e-12


def test_bingham_full_matrix_uses_gram_matrix(rng):
    a = rng.normal(size=(3, 3)) + 2 * np.eye(3)
    chain = build_preset(FamilyPreset("bingham", 3, {"matrix": a}))
    x = uniform_sample(rng, 3, 100)
    np.testing.assert_allclose(chain.log_prob(x), central_ag_log_pdf(x, a @ a.T), atol=1e-12)


def test_kent_mode_at_mu(rng):
    mu = np.array([0.3, 0.4, np.sqrt(0.75)])
    chain = build_preset(FamilyPreset("kent", 3, {"kappa": 50.0, "u": 1.2, "mu": mu}))
    x = uniform_sample(rng, 3, 5000)
    assert chain.log_prob(mu) > chain.log_prob(x).max()


def test_kent_constraint_enforced_and_skippable():
    bad = FamilyPreset("kent", 3, {"kappa": 10.0, "u": 3.0})
    with pytest.raises(ConstraintError):
        build_preset(bad)
    chain = build_preset(bad, validate=False)
    assert chain.layers[1].params.variant is LPVariant.CONSTRAINED_SC


def test_fb4_symmetric_scaling():
    chain = build_preset(FamilyPreset("fb4", 4, {"kappa": 3.0, "sigma": 2.0}))
    d = np.diag(chain.layers[2].params.matrix)
    np.testing.assert_allclose(d[:-1], d[0])
    assert np.prod(d) == pytest.approx(1.0)
    with pytest.raises(ConstraintError):
        build_preset(FamilyPreset("fb4", 3, {"kappa": 3.0, "scales": [1.0, 2.0, 0.5], "symmetric": True}))


def test_preset_parameter_errors():
    with pytest.raises(ValueError):
        FamilyPreset("nope", 3)
    with pytest.raises(ValueError):
        build_preset(FamilyPreset("vmf", 3, {}))
    with pytest.raises(ValueError):
        build_preset(FamilyPreset("vmf", 3, {"kappa": 1.0, "mu": [0, 1]}))
    with pytest.raises(ValueError):
        build_preset(FamilyPreset("kent", 4, {"kappa": 1.0, "u": 1.1}))
    with pytest.raises(ValueError):
        build_preset(FamilyPreset("vmf", 3, {"kappa": 1.0, "mu": [0, 0, 1], "rotation": np.eye(3)}))
    with pytest.raises(ValueError):
        build_preset(FamilyPreset("generic", 3, {"blocks": []}))


def test_generic_inner_blocks_need_triangular_matrices(rng):
    full = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    blocks = [{"kappa": 1.0, "matrix": np.eye(3)}, {"kappa": 1.0, "matrix": full}]
    build_preset(FamilyPreset("generic", 3, {"blocks": blocks}))  # innermost block: any matrix
    with pytest.raises(ValueError):
        build_preset(FamilyPreset("generic", 3, {"blocks": blocks[::-1]}))


def test_rotation_placement_matches_mu():
    mu = np.array([-0.6, 0.0, -0.8])
    chain = build_preset(FamilyPreset("vmf", 3, {"kappa": 5.0, "mu": mu}))
    np.testing.assert_allclose(chain.layers[0].rotation.matrix, rotation_to(mu).matrix)
