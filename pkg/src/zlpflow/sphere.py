"""Geometry of the unit sphere S^(D-1) embedded in R^D."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

UNIT_TOL = 1e-12


class SingularJacobianError(ArithmeticError):
    """Finite-difference Jacobian is rank deficient on the tangent space."""


def surface_volume(dim: int) -> float:
    """Total surface measure of S^(dim-1), i.e. ``2 pi^(D/2) / Gamma(D/2)``."""
    if dim < 2:
        raise ValueError("dimension must be >= 2")
    return float(np.exp(log_surface_volume(dim)))


def log_surface_volume(dim: int) -> float:
    return float(np.log(2.0) + 0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim))


def row_norm(x):
    """Euclidean norm along the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.einsum("...i,...i->...", x, x))


def normalize(x):
    x = np.asarray(x, dtype=float)
    return x / row_norm(x)[..., None]


def as_points(x, dim: int | None = None, tol: float = UNIT_TOL):
    """Validate an (N, D) or (D,) array of unit vectors and renormalize it."""
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2):
        raise ValueError("points must be a vector or an (N, D) array")
    if x.shape[-1] < 2:
        raise ValueError("points need D >= 2 coordinates")
    if dim is not None and x.shape[-1] != dim:
        raise ValueError(f"expected dimension {dim}, got {x.shape[-1]}")
    norms = row_norm(x)
    if not np.all(np.abs(norms - 1.0) <= tol):
        raise ValueError(f"points are not on the unit sphere (max |norm - 1| = {np.max(np.abs(norms - 1.0)):.3g})")
    return x / norms[..., None]


def north_pole(dim: int):
    e = np.zeros(dim)
    e[-1] = 1.0
    return e


@dataclass(frozen=True, eq=False)
class Rotation:
    """Element of SO(D), stored as its matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("rotation matrix must be square")
        if np.max(np.abs(m.T @ m - np.eye(len(m)))) > 1e-12:
            raise ValueError("rotation matrix is not orthogonal")
        if abs(np.linalg.det(m) - 1.0) > 1e-10:
            raise ValueError("rotation matrix must have det +1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, x):
        return np.asarray(x) @ self.matrix.T

    def apply_inverse(self, x):
        return np.asarray(x) @ self.matrix

    @classmethod
    def identity(cls, dim: int) -> "Rotation":
        return cls(np.eye(dim))


def _householder(v):
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    return np.eye(len(v)) - 2.0 * np.outer(v, v)


def rotation_to(mu) -> Rotation:
    """Rotation taking the north pole e_D to ``mu``.

    Built from two Householder reflections: one exchanging the pole with
    ``-mu`` and one flipping ``-mu`` to ``mu``. Within 1e-12 of the antipode
    the pole is first turned by pi in the (e_1, e_D) plane, so the
    construction stays well conditioned.
    """
    mu = normalize(mu)
    dim = len(mu)
    perp2 = float(mu[:-1] @ mu[:-1])
    # 1 + mu_D without cancellation
    one_plus = 1.0 + mu[-1] if mu[-1] >= 0 else perp2 / (1.0 - mu[-1])
    if one_plus >= 1e-12:
        a = mu.copy()
        a[-1] = one_plus
        r = _householder(mu) @ _householder(a)
    else:
        flip = np.eye(dim)
        flip[0, 0] = flip[-1, -1] = -1.0
        # maps -e_D to mu; mu - e_D has length ~2 here
        a = mu.copy()
        a[-1] = mu[-1] - 1.0
        r = _householder(mu) @ _householder(a) @ flip
    return Rotation(r)


def skew_from_vector(theta, dim: int):
    """Skew-symmetric matrix from its D(D-1)/2 upper-triangle entries."""
    w = np.zeros((dim, dim))
    iu = np.triu_indices(dim, 1)
    w[iu] = theta
    return w - w.T


def rotation_from_vector(theta, dim: int) -> Rotation:
    """Unconstrained parametrization of SO(D) through the matrix exponential."""
    return Rotation(_orthonormalize(linalg.expm(skew_from_vector(theta, dim))))


def vector_from_rotation(r: Rotation):
    """Inverse of :func:`rotation_from_vector` (principal logarithm)."""
    w = np.real(linalg.logm(r.matrix))
    w = 0.5 * (w - w.T)
    return w[np.triu_indices(r.dim, 1)]


def _orthonormalize(m):
    # one polar-decomposition clean-up step removes expm round-off
    u, _, vt = np.linalg.svd(m)
    return u @ vt


def random_rotation(rng, dim: int) -> Rotation:
    """Haar-distributed rotation."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Rotation(q)


def tangent_basis(x):
    """Orthonormal basis E(x) of the tangent space at ``x``, shape (D, D-1).

    For a stack of points of shape (N, D) returns (N, D, D-1).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return rotation_to(x).matrix[:, :-1]
    return np.stack([rotation_to(p).matrix[:, :-1] for p in x])


def uniform_sample(rng, dim: int, n: int | None = None):
    """Uniform points on S^(dim-1) from normalized Gaussians."""
    size = (dim,) if n is None else (n, dim)
    return normalize(rng.standard_normal(size))


def uniform_log_density(dim: int) -> float:
    return -log_surface_volume(dim)


def numeric_density_update(f, x, step: float = 1e-5):
    """Density update of a sphere map ``f`` at ``x`` by central differences.

    Differentiates along the tangent basis at ``x`` (points are pushed back
    onto the sphere before calling ``f``), projects the result on the
    tangent basis at ``f(x)`` and returns ``sqrt(det(J^T J))``. This is the
    independent check for every analytic update in the package.
    """
    if not 1e-7 <= step <= 1e-4:
        raise ValueError("step must lie in [1e-7, 1e-4]")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    n, dim = pts.shape
    e_in = tangent_basis(pts)
    y = np.atleast_2d(f(pts))
    e_out = tangent_basis(y)
    jac = np.empty((n, dim, dim - 1))
    for k in range(dim - 1):
        d = step * e_in[:, :, k]
        plus = np.atleast_2d(f(normalize(pts + d)))
        minus = np.atleast_2d(f(normalize(pts - d)))
        jac[:, :, k] = (plus - minus) / (2.0 * step)
    jt = np.einsum("ndi,ndk->nik", e_out, jac)
    det = np.abs(np.linalg.det(jt))
    if np.any(det < 1e-300) or not np.all(np.isfinite(det)):
        raise SingularJacobianError("finite-difference Jacobian is rank deficient on the tangent space")
    return float(det[0]) if single else det
