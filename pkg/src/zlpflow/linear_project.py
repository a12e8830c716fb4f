"""Linear-project layer: ``x -> A x / |A x|`` on S^(D-1).

Applied to the uniform distribution this gives the central angular Gaussian
with ``Lambda = A A^T``; the density only depends on ``A`` up to a positive
scalar, so the full and diagonal variants are normalized to ``det A = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .sphere import log_surface_volume, normalize, row_norm


class ConstraintError(ValueError):
    """Parameters violate the bounds that keep the flow unimodal."""


class LPVariant(str, Enum):
    FULL = "full"
    DIAGONAL_S = "diagonal_s"
    CONSTRAINED_SC = "constrained_sc"


def kent_constraint_interval(kappa: float, dim: int) -> tuple[float, float]:
    """Open interval ``(sqrt(D / (kappa + D)), sqrt((kappa + D) / D))`` that keeps
    a scaling followed by a Fisher zoom unimodal."""
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    hi = float(np.sqrt((kappa + dim) / dim))
    return 1.0 / hi, hi


@dataclass(frozen=True, eq=False)
class LPParams:
    """Matrix of a linear-project layer together with its parametrization.

    ``kappa`` is only used by the constrained variant, where it is the
    concentration of the zoom that follows and fixes the admissible range of
    the scales.
    """

    variant: LPVariant
    matrix: np.ndarray
    kappa: float | None = None
    check_constraints: bool = field(default=True, repr=False)

    def __post_init__(self):
        variant = LPVariant(self.variant)
        object.__setattr__(self, "variant", variant)
        a = np.array(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
            raise ValueError("LP matrix must be square with D >= 2")
        if not np.all(np.isfinite(a)):
            raise ValueError("LP matrix has non-finite entries")
        sign, logdet = np.linalg.slogdet(a)
        if sign == 0 or logdet < np.log(1e-30):
            raise ValueError("LP matrix is singular (|det A| <= 1e-30)")
        off_diag = a - np.diag(np.diag(a))
        if variant is LPVariant.FULL:
            if np.any(np.triu(a, 1) != 0) or np.any(np.diag(a) <= 0):
                raise ValueError("full LP matrix must be lower triangular with positive diagonal")
        else:
            if np.any(off_diag != 0) or np.any(np.diag(a) <= 0):
                raise ValueError("LP scaling matrix must be diagonal and positive")
        if variant is LPVariant.CONSTRAINED_SC:
            if a[-1, -1] != 1.0:
                raise ValueError("constrained scaling needs S_DD = 1")
            if self.kappa is None:
                raise ValueError("constrained scaling needs the zoom concentration kappa")
            if self.check_constraints:
                lo, hi = kent_constraint_interval(self.kappa, len(a))
                sig = np.diag(a)[:-1]
                if np.any(sig <= lo) or np.any(sig >= hi):
                    raise ConstraintError(f"scales {sig} outside ({lo:.6g}, {hi:.6g}) for kappa={self.kappa:g}")
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def inverse_matrix(self):
        h = np.linalg.inv(self.matrix)
        h.setflags(write=False)
        return h

    @cached_property
    def log_det(self) -> float:
        """``log |det A|``; zero for the gauge-fixed variants."""
        return float(np.sum(np.log(np.diag(self.matrix))))

    # constructors -----------------------------------------------------------

    @classmethod
    def identity(cls, dim: int) -> "LPParams":
        return cls(LPVariant.DIAGONAL_S, np.eye(dim))

    @classmethod
    def full(cls, log_scales, lower) -> "LPParams":
        """``A = diag(exp(s - mean s)) L`` with ``L`` unit lower triangular.

        ``lower`` holds the strictly lower entries of ``L`` row by row
        (D(D-1)/2 numbers).
        """
        s = np.asarray(log_scales, dtype=float)
        dim = len(s)
        tri = np.eye(dim)
        tri[np.tril_indices(dim, -1)] = np.asarray(lower, dtype=float)
        return cls(LPVariant.FULL, np.exp(s - s.mean())[:, None] * tri)

    @classmethod
    def from_matrix(cls, a) -> "LPParams":
        """Full variant for an arbitrary invertible ``A``.

        Only ``Lambda = A A^T`` matters up to scale, so ``A`` is replaced by
        the Cholesky factor of ``Lambda`` normalized to unit determinant.
        The factor is taken from a QR decomposition of ``A^T`` so that the
        condition number of ``A`` is not squared by forming ``Lambda``.
        """
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("full LP matrix must be square")
        r = np.linalg.qr(a.T, mode="r")
        d = np.diag(r)
        if np.any(d == 0) or not np.all(np.isfinite(r)):
            raise np.linalg.LinAlgError("full LP matrix is singular")
        chol = (r * np.sign(d)[:, None]).T
        chol /= np.exp(np.mean(np.log(np.diag(chol))))
        return cls(LPVariant.FULL, chol)

    @classmethod
    def lower(cls, a) -> "LPParams":
        """Full variant from a lower-triangular matrix with positive diagonal,
        rescaled to unit determinant (the map itself is unchanged)."""
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or np.any(np.triu(a, 1) != 0) or np.any(np.diag(a) <= 0):
            raise ValueError("full LP matrix must be lower triangular with positive diagonal")
        return cls(LPVariant.FULL, a / np.exp(np.mean(np.log(np.diag(a)))))

    @classmethod
    def diagonal(cls, scales) -> "LPParams":
        """Positive diagonal scaling normalized to determinant one."""
        s = np.asarray(scales, dtype=float)
        if np.any(s <= 0):
            raise ValueError("scales must be positive")
        return cls(LPVariant.DIAGONAL_S, np.diag(s / np.exp(np.mean(np.log(s)))))

    @classmethod
    def constrained(cls, sigmas, kappa: float, check: bool = True) -> "LPParams":
        """``diag(sigma_1, ..., sigma_{D-1}, 1)`` with every sigma inside
        :func:`kent_constraint_interval`."""
        sig = np.asarray(sigmas, dtype=float)
        return cls(LPVariant.CONSTRAINED_SC, np.diag(np.append(sig, 1.0)), kappa, check)

    # unconstrained parametrizations used by the fitter ----------------------

    def log_scales(self):
        return np.log(np.diag(self.matrix))

    def lower_entries(self):
        d = np.diag(self.matrix)
        return (self.matrix / d[:, None])[np.tril_indices(self.dim, -1)]


def make_constrained_sc(u: float, kappa: float, dim: int = 3) -> LPParams:
    """``diag(u, 1/u, 1)``: the one-parameter constrained scaling in D=3."""
    if dim != 3:
        raise ValueError("the u parametrization is defined for D=3")
    return LPParams.constrained([u, 1.0 / u], kappa)


def sigma_from_unconstrained(theta, kappa: float, dim: int):
    """``sigma = exp(tanh(theta) log hi)``: maps R onto the open constraint
    interval, symmetric about sigma = 1."""
    lo, hi = kent_constraint_interval(kappa, dim)
    sig = np.exp(np.tanh(np.asarray(theta, dtype=float)) * np.log(hi))
    # tanh saturates to +-1 in double precision; stay strictly inside
    return np.clip(sig, np.nextafter(lo, np.inf), np.nextafter(hi, 0.0))


def unconstrained_from_sigma(sigma, kappa: float, dim: int):
    lo, hi = kent_constraint_interval(kappa, dim)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= lo) or np.any(sigma >= hi):
        raise ConstraintError("sigma outside the open constraint interval")
    r = np.log(sigma) / np.log(hi)
    edge = np.nextafter(1.0, 0.0)
    return np.arctanh(np.clip(r, -edge, edge))


# maps and densities ---------------------------------------------------------


def lp_forward(x, p: LPParams):
    return normalize(np.asarray(x, dtype=float) @ p.matrix.T)


def lp_inverse(y, p: LPParams):
    return normalize(np.asarray(y, dtype=float) @ p.inverse_matrix.T)


def lp_log_density_update(y, p: LPParams):
    """``log det H - D log |H y|`` with ``H = A^-1``: the log density change
    at an output point ``y`` when pushing a density through the layer."""
    hy = np.asarray(y, dtype=float) @ p.inverse_matrix.T
    return -p.log_det - p.dim * np.log(row_norm(hy))


def lp_forward_log_det(x, p: LPParams):
    """Log Jacobian of the forward map at an input point: ``log det A - D log |A x|``."""
    ax = np.asarray(x, dtype=float) @ p.matrix.T
    return p.log_det - p.dim * np.log(row_norm(ax))


def central_ag_log_pdf(x, lam):
    """Log density of the central angular Gaussian with shape matrix ``lam``."""
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 2 or lam.shape[0] != lam.shape[1] or not np.allclose(lam, lam.T, rtol=1e-12, atol=0):
        raise ValueError("Lambda must be a symmetric matrix")
    try:
        chol = np.linalg.cholesky(lam)
    except np.linalg.LinAlgError as err:
        raise ValueError("Lambda must be positive definite") from err
    dim = len(lam)
    x = np.asarray(x, dtype=float)
    # x^T Lambda^-1 x = |L^-1 x|^2
    z = np.linalg.solve(chol, np.atleast_2d(x).T).T
    quad = np.sum(z * z, axis=-1)
    half_logdet = np.sum(np.log(np.diag(chol)))
    out = -log_surface_volume(dim) - half_logdet - 0.5 * dim * np.log(quad)
    return out if x.ndim > 1 else float(out[0])
