"""Numerical self-checks of flows: round trips, normalization, Jacobian
oracles, grid extrema and the high-concentration tangent limit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import FlowChain, LinearProjectLayer, RotationLayer, ZoomLayer
from .linear_project import ConstraintError, LPVariant, kent_constraint_interval
from .presets import FamilyPreset, build_preset
from .sphere import numeric_density_update, surface_volume, uniform_sample


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28s} {self.detail}"


# grids --------------------------------------------------------------------


def equirect_points(n_lon: int):
    """Cell centres of an equirectangular grid with ``n_lon`` longitudes and
    ``n_lon // 2`` colatitude rows; returns ``(points, theta, phi)`` with
    points of shape (rows, n_lon, 3)."""
    if n_lon < 4 or n_lon % 2:
        raise ValueError("n_lon must be an even number >= 4")
    n_lat = n_lon // 2
    theta = (np.arange(n_lat) + 0.5) * np.pi / n_lat
    phi = (np.arange(n_lon) + 0.5) * 2.0 * np.pi / n_lon
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    pts = np.stack([st * np.cos(phi), st * np.sin(phi), np.broadcast_to(ct, (n_lat, n_lon))], axis=-1)
    return pts, theta, phi


def _neighbour_stack(v):
    """The eight neighbours of every cell, shape (8, rows, cols).

    Longitude wraps around; across a pole the neighbours of a polar row are
    the same row shifted by half a turn.
    """
    n_lat, n_lon = v.shape
    half = n_lon // 2
    padded = np.empty((n_lat + 2, n_lon + 2))
    padded[1:-1, 1:-1] = v
    padded[0, 1:-1] = np.roll(v[0], half)
    padded[-1, 1:-1] = np.roll(v[-1], half)
    padded[:, 0] = padded[:, -2]
    padded[:, -1] = padded[:, 1]
    return np.stack(
        [
            padded[1 + di : n_lat + 1 + di, 1 + dj : n_lon + 1 + dj]
            for di in (-1, 0, 1)
            for dj in (-1, 0, 1)
            if di or dj
        ]
    )


def _neighbour_index(i, j, n_lat, n_lon):
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if not (di or dj):
                continue
            ii, jj = i + di, (j + dj) % n_lon
            if ii < 0 or ii >= n_lat:
                ii = i
                jj = (jj + n_lon // 2) % n_lon
            yield ii, jj


def _count_plateaus(mask, values):
    """Connected groups of candidate cells sharing the same value."""
    n_lat, n_lon = mask.shape
    seen = np.zeros_like(mask)
    count = 0
    for i, j in zip(*np.nonzero(mask)):
        if seen[i, j]:
            continue
        count += 1
        stack = [(i, j)]
        seen[i, j] = True
        while stack:
            a, b = stack.pop()
            for c, d in _neighbour_index(a, b, n_lat, n_lon):
                if mask[c, d] and not seen[c, d] and values[c, d] == values[a, b]:
                    seen[c, d] = True
                    stack.append((c, d))
    return count


def count_grid_extrema(values):
    """Local maxima and minima of an equirectangular grid.

    A cell is a maximum when no neighbour is larger and every equal
    neighbour belongs to the same flat patch; each connected patch counts
    once. Ties only arise from exact symmetries (a mode sitting on a pole,
    or a constant density), so this matches the strict definition otherwise.
    """
    v = np.asarray(values, dtype=float)
    nb = _neighbour_stack(v)
    is_max = np.all(v >= nb, axis=0)
    is_min = np.all(v <= nb, axis=0)
    if is_max.all():
        # constant grid: one flat patch that is both maximum and minimum
        return 1, 1
    return _count_plateaus(is_max, v), _count_plateaus(is_min, v)


def _grid_candidates(values, sign):
    nb = _neighbour_stack(sign * values)
    return np.argwhere(np.all(sign * values >= nb, axis=0))


def refine_extrema(chain: FlowChain, seeds, sign: float = 1.0, merge_tol: float = 1e-4):
    """Polish grid extrema with BFGS in a tangent chart and merge duplicates.

    ``sign=+1`` looks for maxima, ``-1`` for minima. Returns the distinct
    refined points. On a lattice one anisotropic, obliquely oriented peak
    can produce several cells that each beat their eight neighbours; they
    all climb to the same continuous extremum and are merged here.
    """
    from scipy.optimize import minimize

    from .sphere import normalize, tangent_basis

    found = []
    for seed in np.atleast_2d(seeds):
        basis = tangent_basis(seed)

        def objective(v, seed=seed, basis=basis):
            return -sign * float(chain.log_prob(normalize(seed + basis @ v)))

        res = minimize(objective, np.zeros(chain.dim - 1), method="BFGS", options={"gtol": 1e-10, "xrtol": 1e-12})
        point = normalize(seed + basis @ res.x)
        if not any(np.arccos(np.clip(point @ q, -1.0, 1.0)) < merge_tol for q in found):
            found.append(point)
    return found


def unimodality_check(chain: FlowChain, n_lon: int = 720, refine: bool = True) -> tuple[int, int]:
    """Numbers of maxima and minima of a D=3 flow's density.

    Extrema are located on an equirectangular grid (eight-neighbour
    definition). With ``refine`` the grid candidates are polished and merged
    by :func:`refine_extrema`, so only distinct continuous extrema count.
    """
    if chain.dim != 3:
        raise ValueError("grid checks need D=3")
    pts, _, _ = equirect_points(n_lon)
    logp = chain.log_prob(pts.reshape(-1, 3)).reshape(pts.shape[:2])
    if not refine:
        return count_grid_extrema(logp)
    counts = []
    for sign in (1.0, -1.0):
        idx = _grid_candidates(logp, sign)
        counts.append(len(refine_extrema(chain, pts[idx[:, 0], idx[:, 1]], sign)))
    return counts[0], counts[1]


def grid_normalization(chain: FlowChain, n_lon: int = 1440) -> float:
    """Midpoint-rule integral of the density over an equirectangular grid."""
    pts, theta, _ = equirect_points(n_lon)
    logp = chain.log_prob(pts.reshape(-1, 3)).reshape(pts.shape[:2])
    cell = (np.pi / len(theta)) * (2.0 * np.pi / n_lon)
    return float(np.sum(np.exp(logp) * np.sin(theta)[:, None]) * cell)


# tangent-space limit ------------------------------------------------------


def kent_tangent_gaussian_check(kappa: float, u: float, n_grid: int = 201):
    """Compare a D=3 Kent flow with its tangent-plane Gaussian limit.

    The flow has its mode at e_3; its density is mapped to orthographic
    tangent coordinates ``(a, b)`` (area factor ``1 / x_3``) and compared
    with the Gaussian of standard deviations ``(u, 1/u) / sqrt(kappa)`` on an
    ``n_grid`` x ``n_grid`` grid. Returns the maximum relative density error
    inside the 3-sigma ellipse and the two standard deviations.
    """
    chain = build_preset(FamilyPreset("kent", 3, {"kappa": kappa, "u": u}))
    sig = np.array([u, 1.0 / u]) / np.sqrt(kappa)
    if 3.0 * sig.max() >= 1.0:
        raise ValueError("the 3-sigma ellipse does not fit on the tangent disk; increase kappa")
    ga = np.linspace(-3.0, 3.0, n_grid)
    a, b = np.meshgrid(ga * sig[0], ga * sig[1], indexing="ij")
    inside = (a / sig[0]) ** 2 + (b / sig[1]) ** 2 <= 9.0
    a, b = a[inside], b[inside]
    z = np.sqrt(1.0 - a * a - b * b)
    pts = np.stack([a, b, z], axis=-1)
    log_tangent = chain.log_prob(pts) - np.log(z)
    log_gauss = -np.log(2.0 * np.pi * sig[0] * sig[1]) - 0.5 * ((a / sig[0]) ** 2 + (b / sig[1]) ** 2)
    err = float(np.max(np.abs(np.expm1(log_tangent - log_gauss))))
    return err, (float(sig[0]), float(sig[1]))


# generic checks --------------------------------------------------------------


def round_trip_error(chain: FlowChain, rng, n: int = 1000) -> float:
    x = uniform_sample(rng, chain.dim, n)
    return float(np.max(np.abs(chain.inverse(chain.forward(x)) - x)))


def mc_normalization(chain: FlowChain, rng, n: int = 10**6, batch: int = 200_000):
    """Importance estimate of the total mass under uniform proposals and its
    standard error."""
    total = total_sq = 0.0
    vol = surface_volume(chain.dim)
    done = 0
    while done < n:
        m = min(batch, n - done)
        w = np.exp(chain.log_prob(uniform_sample(rng, chain.dim, m))) * vol
        total += w.sum()
        total_sq += (w * w).sum()
        done += m
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return float(mean), float(np.sqrt(var / n))


def layer_jacobian_errors(chain: FlowChain, rng, n: int = 1000, step: float = 1e-5):
    """Max relative error of each layer's forward log Jacobian against finite
    differences, on points distributed as that layer's input."""
    x = uniform_sample(rng, chain.dim, n)
    out = []
    for layer in reversed(chain.layers):
        y, ld = layer.forward(x)
        num = numeric_density_update(lambda p, layer=layer: layer.forward(p)[0], x, step)
        out.append((layer.kind, float(np.max(np.abs(np.exp(ld) / num - 1.0)))))
        x = y
    return out[::-1]


def kent_constraint_failures(chain: FlowChain) -> list[str]:
    """Constrained scalings whose entries leave the interval for their zoom."""
    bad = []
    for layer in chain.layers:
        if isinstance(layer, LinearProjectLayer) and layer.params.variant is LPVariant.CONSTRAINED_SC:
            lo, hi = kent_constraint_interval(layer.params.kappa, chain.dim)
            sig = np.diag(layer.params.matrix)[:-1]
            if np.any(sig <= lo) or np.any(sig >= hi):
                bad.append(f"sigmas {np.array2string(sig, precision=4)} outside ({lo:.4g}, {hi:.4g})")
    return bad


def run_checks(chain: FlowChain, level: str = "fast", rng=None, family: str | None = None) -> list[CheckResult]:
    """Verification suite used by the command line ``check`` command."""
    if level not in ("fast", "full"):
        raise ValueError("level must be fast or full")
    rng = np.random.default_rng(0) if rng is None else rng
    full = level == "full"
    results = []

    bad = kent_constraint_failures(chain)
    results.append(CheckResult("kent constraints", not bad, "; ".join(bad) or "all scalings inside interval"))

    err = round_trip_error(chain, rng, 1000 if full else 200)
    results.append(CheckResult("round trip", err < 1e-9, f"max |inv(fwd(x)) - x| = {err:.3g}"))

    n_mc = 10**6 if full else 20_000
    mean, se = mc_normalization(chain, rng, n_mc)
    ok = abs(mean - 1.0) <= 3.0 * se + 1e-12
    results.append(CheckResult("normalization (MC)", ok, f"{mean:.6f} +- {se:.2g} ({n_mc} samples)"))

    if chain.layers:
        worst = layer_jacobian_errors(chain, rng, 1000 if full else 100)
        e = max(v for _, v in worst)
        results.append(CheckResult("jacobian vs finite diff", e < 1e-5, f"max rel err {e:.3g} over {len(worst)} layers"))

    kappas = [l.params.kappa for l in chain.layers if isinstance(l, ZoomLayer)]
    if full and chain.dim == 3 and max(kappas, default=0.0) <= 1e3:
        # the midpoint rule resolves modes of width >= 1/sqrt(1e3) at res 1440
        g = grid_normalization(chain, 1440)
        results.append(CheckResult("normalization (grid)", abs(g - 1.0) <= 1e-3, f"{g:.8f} (res 1440)"))

    if full and chain.dim == 3 and family == "kent":
        kappa = next(l.params.kappa for l in chain.layers if isinstance(l, ZoomLayer))
        if not bad:
            n_max, n_min = unimodality_check(chain)
            results.append(CheckResult("unimodality grid", n_max == 1 and n_min == 1, f"{n_max} max, {n_min} min"))
        sc = next(l.params for l in chain.layers if isinstance(l, LinearProjectLayer))
        u = float(sc.matrix[0, 0])
        if abs(u * sc.matrix[1, 1] - 1.0) < 1e-12:
            try:
                err, sig = kent_tangent_gaussian_check(max(kappa, 1e4), u)
            except ValueError as exc:
                results.append(CheckResult("tangent gaussian limit", True, f"skipped: {exc}"))
            else:
                results.append(CheckResult("tangent gaussian limit", err < 2e-2, f"rel err {err:.3g}, sigma_t = ({sig[0]:.4g}, {sig[1]:.4g})"))
        else:
            results.append(CheckResult("tangent gaussian limit", True, "skipped: scales not of the form (u, 1/u)"))
    return results


__all__ = [
    "CheckResult",
    "ConstraintError",
    "count_grid_extrema",
    "equirect_points",
    "grid_normalization",
    "kent_constraint_failures",
    "kent_tangent_gaussian_check",
    "layer_jacobian_errors",
    "mc_normalization",
    "round_trip_error",
    "run_checks",
    "unimodality_check",
]
