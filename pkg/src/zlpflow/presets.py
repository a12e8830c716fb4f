"""Named compositions of zoom, linear-project and rotation layers.

============  =========================================
family        layers (written order, last acts first)
============  =========================================
vmf           R, Z
bingham       LP (full)   or   R, LP_S
fb4           R, Z, LP_S
kent          R, LP_Sc, Z
fb6           R, LP_Sc, Z, LP_S
fb8           R, LP_Sc, Z, LP (full)
generic       (R, Z, LP) repeated N times
============  =========================================

``Z`` zooms toward e_D, ``LP_S`` is a diagonal scaling with unit
determinant, ``LP_Sc`` a diagonal scaling with ``S_DD = 1`` whose other
entries lie inside :func:`kent_constraint_interval` for the zoom's kappa,
and ``R`` moves e_D to the mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .chain import FlowChain, LinearProjectLayer, RotationLayer, ZoomLayer
from .linear_project import ConstraintError, LPParams, kent_constraint_interval
from .sphere import Rotation, random_rotation, rotation_to
from .zoom import ZoomParams

FAMILIES = ("vmf", "bingham", "fb4", "kent", "fb6", "fb8", "generic")
GENERIC_DEFAULT_BLOCKS = 15


@dataclass(frozen=True, eq=False)
class FamilyPreset:
    """Family name, dimension and a parameter block.

    Recognised keys: ``mu`` or ``rotation`` (mode placement), ``kappa``,
    ``u`` (D=3) or ``sigmas`` for the constrained scaling, ``scales`` or
    ``sigma`` for the unit-determinant scaling, ``matrix`` for a full linear
    map, ``symmetric`` (fb4) and ``blocks`` (generic: a list of blocks each
    holding ``rotation``/``mu``, ``kappa`` and ``matrix``).
    """

    name: str
    dim: int
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        name = self.name.lower()
        if name not in FAMILIES:
            raise ValueError(f"unknown family {self.name!r}; choose from {', '.join(FAMILIES)}")
        object.__setattr__(self, "name", name)
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")


def _rotation(params, dim) -> Rotation:
    if "rotation" in params and "mu" in params:
        raise ValueError("give either rotation or mu, not both")
    if "rotation" in params:
        return Rotation(np.asarray(params["rotation"], dtype=float))
    if "mu" in params:
        mu = np.asarray(params["mu"], dtype=float)
        if mu.shape != (dim,):
            raise ValueError(f"mu must have {dim} entries")
        return rotation_to(mu)
    return Rotation.identity(dim)


def _kappa(params) -> float:
    if "kappa" not in params:
        raise ValueError("family needs kappa")
    return float(params["kappa"])


def _constrained(params, dim, kappa, validate) -> LPParams:
    if "u" in params and "sigmas" in params:
        raise ValueError("give either u or sigmas, not both")
    if "u" in params:
        if dim != 3:
            raise ValueError("u is the D=3 parametrization; use sigmas otherwise")
        u = float(params["u"])
        sig = [u, 1.0 / u]
    else:
        sig = np.asarray(params.get("sigmas", np.ones(dim - 1)), dtype=float)
        if sig.shape != (dim - 1,):
            raise ValueError(f"sigmas must have {dim - 1} entries")
    return LPParams.constrained(sig, kappa, check=validate)


def _scaling(params, dim, symmetric: bool) -> LPParams:
    if "sigma" in params and "scales" in params:
        raise ValueError("give either sigma or scales, not both")
    if "sigma" in params:
        sigma = float(params["sigma"])
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        return LPParams.diagonal(np.append(np.full(dim - 1, sigma), 1.0))
    scales = np.asarray(params.get("scales", np.ones(dim)), dtype=float)
    if scales.shape != (dim,):
        raise ValueError(f"scales must have {dim} entries")
    if symmetric and not np.allclose(scales[:-1], scales[0], rtol=1e-12, atol=0):
        raise ConstraintError("symmetric fb4 needs a shared scale S_ii = sigma for i < D")
    return LPParams.diagonal(scales)


def _full(params, dim, innermost: bool) -> LPParams:
    """Full LP parameters. A layer acting directly on the uniform base only
    sees ``A A^T``, so any invertible matrix is accepted there and replaced by
    its Cholesky factor; deeper layers need the triangular form itself."""
    if "matrix" not in params:
        raise ValueError("family needs a full matrix")
    a = np.asarray(params["matrix"], dtype=float)
    if a.shape != (dim, dim):
        raise ValueError(f"matrix must be {dim}x{dim}")
    if np.all(np.triu(a, 1) == 0) and np.all(np.diag(a) > 0):
        return LPParams.lower(a)
    if not innermost:
        raise ValueError("full LP matrices after the first layer must be lower triangular with positive diagonal")
    return LPParams.from_matrix(a)


def build_preset(preset: FamilyPreset, validate: bool = True) -> FlowChain:
    """Chain for a family preset.

    ``validate=False`` skips the constrained-scaling interval check so that
    diagnostics can load and report on out-of-range parameters.
    """
    p, dim, name = preset.params, preset.dim, preset.name
    if name == "generic":
        blocks = p.get("blocks")
        if not blocks:
            raise ValueError("generic family needs a non-empty list of blocks")
        layers = []
        for i, block in enumerate(blocks):
            layers += [
                RotationLayer(_rotation(block, dim)),
                ZoomLayer(ZoomParams(_kappa(block), dim)),
                LinearProjectLayer(_full(block, dim, innermost=i == len(blocks) - 1)),
            ]
        return FlowChain(dim, layers)

    if name == "bingham":
        if "matrix" in p:
            if "rotation" in p or "mu" in p or "scales" in p:
                raise ValueError("bingham takes either a full matrix or rotation + scales")
            return FlowChain(dim, [LinearProjectLayer(_full(p, dim, innermost=True))])
        return FlowChain(dim, [RotationLayer(_rotation(p, dim)), LinearProjectLayer(_scaling(p, dim, False))])

    rot = RotationLayer(_rotation(p, dim))
    kappa = _kappa(p)
    zoom = ZoomLayer(ZoomParams(kappa, dim))
    if name == "vmf":
        return FlowChain(dim, [rot, zoom])
    if name == "fb4":
        symmetric = bool(p.get("symmetric", "sigma" in p))
        return FlowChain(dim, [rot, zoom, LinearProjectLayer(_scaling(p, dim, symmetric))])
    sc = LinearProjectLayer(_constrained(p, dim, kappa, validate))
    if name == "kent":
        return FlowChain(dim, [rot, sc, zoom])
    if name == "fb6":
        return FlowChain(dim, [rot, sc, zoom, LinearProjectLayer(_scaling(p, dim, False))])
    if name == "fb8":
        return FlowChain(dim, [rot, sc, zoom, LinearProjectLayer(_full(p, dim, innermost=True))])
    raise AssertionError(name)  # pragma: no cover


# random parameter draws -------------------------------------------------------


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def random_lower_triangular(rng, dim, spread: float = 0.3, shear: float = 0.3):
    """Random full LP matrix ``diag(e^s) L`` with moderate conditioning."""
    s = rng.normal(0.0, spread, dim)
    tri = np.eye(dim)
    tri[np.tril_indices(dim, -1)] = rng.normal(0.0, shear, dim * (dim - 1) // 2)
    return np.exp(s - s.mean())[:, None] * tri


def random_preset(
    name: str,
    dim: int,
    rng,
    kappa_range: tuple[float, float] = (0.5, 100.0),
    n_blocks: int = GENERIC_DEFAULT_BLOCKS,
) -> FamilyPreset:
    """Valid random parameters for a family.

    Concentrations are log-uniform in ``kappa_range``; constrained scales are
    drawn strictly inside their interval (as ``u`` when D=3). Generic chains use concentrations
    capped at 3 per block so the composed flow stays moderately concentrated.
    """
    name = name.lower()
    params: dict[str, Any] = {}
    if name != "generic":
        params["rotation"] = random_rotation(rng, dim).matrix
    if name in ("vmf", "fb4", "kent", "fb6", "fb8"):
        params["kappa"] = _log_uniform(rng, *kappa_range)
    if name in ("kent", "fb6", "fb8"):
        _, hi = kent_constraint_interval(params["kappa"], dim)
        if dim == 3:
            params["u"] = float(np.exp(rng.uniform(-0.9, 0.9) * np.log(hi)))
        else:
            params["sigmas"] = np.exp(rng.uniform(-0.9, 0.9, dim - 1) * np.log(hi))
    if name == "bingham":
        params = {"matrix": random_lower_triangular(rng, dim, 0.5, 0.5)}
    elif name == "fb4":
        params["sigma"] = float(np.exp(rng.normal(0.0, 0.3)))
    elif name == "fb6":
        params["scales"] = np.exp(rng.normal(0.0, 0.3, dim))
    elif name == "fb8":
        params["matrix"] = random_lower_triangular(rng, dim)
    elif name == "generic":
        params["blocks"] = [
            {
                "rotation": random_rotation(rng, dim).matrix,
                "kappa": _log_uniform(rng, 0.1, min(3.0, kappa_range[1])),
                "matrix": random_lower_triangular(rng, dim, 0.2, 0.2),
            }
            for _ in range(n_blocks)
        ]
    return FamilyPreset(name, dim, params)
