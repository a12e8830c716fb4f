"""Fisher-zoom layer: the axis-symmetric diffeomorphism that turns the uniform
distribution on S^(D-1) into a von Mises-Fisher distribution around e_D.

The one-dimensional building blocks are the CDFs of the last coordinate
under the uniform distribution (``U``) and under vMF (``F_kappa``). They are
handled in *axis-logit* coordinates ``xi = log((1 + t) / (1 - t))`` and return
logits of CDF values, so both poles keep full precision even at
``kappa ~ 1e6``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import betaln, gammaln

from .special import (
    DEFAULT_NEWTON,
    LOG2,
    LogitNewtonConfig,
    log1mexp,
    log_bessel_i,
    log_expit,
    log_expm1,
    log_kummer_1f1,
    log_reg_inc_beta_pair,
    solve_logit,
)
from .sphere import log_surface_volume, row_norm

# --------------------------------------------------------------------------
# axis coordinates


def axis_logit(t):
    """``log((1 + t) / (1 - t))`` for an axis coordinate ``t`` in [-1, 1]."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log1p(t) - np.log1p(-t)


def axis_logit_of_points(x):
    """Axis logit of the last coordinate, using the other coordinates for the
    complement ``1 - x_D^2`` so nothing cancels near the poles."""
    x = np.asarray(x, dtype=float)
    xd = x[..., -1]
    perp = x[..., :-1]
    r2 = np.einsum("...i,...i->...", perp, perp)
    with np.errstate(divide="ignore", invalid="ignore"):
        one_plus = np.where(xd >= 0, 1.0 + xd, r2 / (1.0 - xd))
        one_minus = np.where(xd >= 0, r2 / (1.0 + xd), 1.0 - xd)
        return np.log(one_plus) - np.log(one_minus)


def _log_one_pm(xi):
    """``(log(1 + t), log(1 - t))`` from the axis logit."""
    return LOG2 + log_expit(xi), LOG2 + log_expit(-xi)


def _log_one_minus_t2(xi):
    lp, lm = _log_one_pm(xi)
    return lp + lm


# --------------------------------------------------------------------------
# quadrature in the polar angle


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
_PANEL_RATIO = 1.5
# panels whose integrand stays this many nats below the peak are dropped
_DROP = 50.0


def _log_polar_integral(k: float, n: float, a, shifted: bool = False):
    """``log int_0^a exp(k (cos psi - 1) + n log sin psi) dpsi`` for a in [0, pi].

    Composite Gauss-Legendre on panels graded geometrically away from the
    integrand's maximum on [0, a]. The panel scale comes from the local
    curvature (interior peak) or slope (maximum at the endpoint), which
    keeps every panel well resolved no matter how concentrated the
    integrand is. The integrand is unimodal, so panels lying entirely more
    than ``_DROP`` nats below the peak are skipped.

    ``shifted=True`` returns the integral times ``e^(2k)``, folding the
    offset into the integrand as ``2k cos^2(psi/2)`` so a large offset never
    cancels in floating point.
    """
    a = np.asarray(a, dtype=float)
    shape = a.shape
    a = a.ravel()
    out = np.full(a.shape, -np.inf)
    pos = a > 0
    if not pos.any():
        return out.reshape(shape)
    a = a[pos]

    def f(psi):
        # cos(psi) - 1 written as -2 sin^2(psi/2): no cancellation at small psi
        if shifted:
            c_half = np.cos(0.5 * psi)
            base = 2.0 * k * c_half * c_half
        else:
            s_half = np.sin(0.5 * psi)
            base = -2.0 * k * s_half * s_half
        with np.errstate(divide="ignore"):
            return base + (n * np.log(np.sin(psi)) if n else 0.0)

    # unique critical point (a maximum) of the log-integrand on (0, pi)
    if n == 0:
        peak = 0.0 if k > 0 else (np.pi if k < 0 else 0.5 * np.pi)
    else:
        c = 2.0 * k / (n + np.hypot(n, 2.0 * k))
        peak = float(np.arccos(np.clip(c, -1.0, 1.0)))
    p = np.minimum(peak, a)
    sp, cp = np.sin(p), np.cos(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.where(sp > 0, -k * sp + n * cp / sp, 0.0)
        d2 = np.where(sp > 0, -k * cp - n / sp**2, -k)
    scale = 1.0 / (np.abs(d1) + np.sqrt(np.abs(d2)) + 1e-300)
    reach = np.maximum(p, a - p)
    w0 = np.maximum(0.25 * np.minimum(scale, a), 1e-16 * reach)
    ratio = _PANEL_RATIO
    n_side = int(np.ceil(np.max(np.log1p(reach * (ratio - 1.0) / w0) / np.log(ratio)))) + 1
    dist = w0[:, None] * (ratio ** np.arange(n_side + 1) - 1.0) / (ratio - 1.0)
    left = np.clip(p[:, None] - dist, 0.0, None)
    right = np.minimum(p[:, None] + dist, a[:, None])
    left[:, -1] = 0.0
    right[:, -1] = a
    f_top = f(p)
    # panel j on each side spans dist[j]..dist[j+1]; its largest value sits
    # at the edge nearer the peak
    near_left, far_left = left[:, :-1], left[:, 1:]
    near_right, far_right = right[:, :-1], right[:, 1:]
    keep_left = (near_left > far_left) & (f(near_left) > f_top[:, None] - _DROP)
    keep_right = (far_right > near_right) & (f(near_right) > f_top[:, None] - _DROP)
    rows = np.concatenate([np.nonzero(keep_left)[0], np.nonzero(keep_right)[0]])
    lo = np.concatenate([far_left[keep_left], near_right[keep_right]])
    hi = np.concatenate([near_left[keep_left], far_right[keep_right]])
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[:, None] + half[:, None] * _GL_NODES
    with np.errstate(under="ignore"):
        vals = np.exp(f(nodes) - f_top[rows, None]) @ _GL_WEIGHTS * half
    total = np.bincount(rows, weights=vals, minlength=len(a))
    with np.errstate(divide="ignore"):
        out[pos] = f_top + np.log(total)
    return out.reshape(shape)


def _polar_angles(xi):
    """Polar angle from the pole and from the antipole, both without cancellation."""
    xi = np.asarray(xi, dtype=float)
    with np.errstate(over="ignore"):
        return 2.0 * np.arctan(np.exp(-0.5 * xi)), 2.0 * np.arctan(np.exp(0.5 * xi))


# --------------------------------------------------------------------------
# marginals


class _AxisMarginal:
    """CDF of the last coordinate, evaluated in axis-logit space."""

    dim: int
    newton: LogitNewtonConfig

    def log_cdf_pair(self, xi):  # pragma: no cover - interface
        raise NotImplementedError

    def log_pdf(self, t):  # pragma: no cover - interface
        raise NotImplementedError

    def _log_pdf_xi(self, xi):
        raise NotImplementedError

    def logit_cdf(self, xi):
        lo, hi = self.log_cdf_pair(xi)
        return lo - hi

    def dlogit_cdf(self, xi):
        """Derivative of ``logit_cdf`` with respect to ``xi``."""
        lo, hi = self.log_cdf_pair(xi)
        return np.exp(self._log_pdf_xi(xi) + _log_one_minus_t2(xi) - LOG2 - lo - hi)

    def _logit_and_slope(self, xi):
        lo, hi = self.log_cdf_pair(xi)
        slope = np.exp(self._log_pdf_xi(xi) + _log_one_minus_t2(xi) - LOG2 - lo - hi)
        return lo - hi, slope

    def cdf(self, t):
        lo, _ = self.log_cdf_pair(axis_logit(t))
        out = np.exp(lo)
        return out if out.ndim else float(out)

    def inverse_logit(self, target, x0=None):
        """Axis logit ``xi`` with ``logit_cdf(xi) = target``."""
        if x0 is None:
            x0 = self._initial_guess(np.asarray(target, dtype=float))
        return solve_logit(self._logit_and_slope, target, x0, self.newton)

    def _initial_guess(self, target):
        return target


@dataclass(frozen=True)
class UniformMarginal(_AxisMarginal):
    """``U(t) = I_{(t+1)/2}((D-1)/2, (D-1)/2)``.

    ``method``: ``"auto"`` (closed form for D=3, binomial sum for odd D,
    incomplete beta otherwise), or force ``"closed"``, ``"finite_sum"``,
    ``"beta"`` or ``"quadrature"``.
    """

    dim: int
    method: str = "auto"
    newton: LogitNewtonConfig = DEFAULT_NEWTON

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")
        if self.route == "closed" and self.dim != 3:
            raise ValueError("closed form exists only for D=3")
        if self.route == "finite_sum" and self.dim % 2 == 0:
            raise ValueError("finite sums need odd D")

    @property
    def shape_param(self) -> float:
        return 0.5 * (self.dim - 1)

    @cached_property
    def route(self) -> str:
        if self.method != "auto":
            return self.method
        if self.dim == 3:
            return "closed"
        return "finite_sum" if self.dim % 2 else "beta"

    @cached_property
    def log_norm(self) -> float:
        """``log int_{-1}^{1} (1 - t^2)^((D-3)/2) dt``."""
        a = self.shape_param
        return (self.dim - 2) * LOG2 + float(betaln(a, a))

    def log_pdf(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return 0.5 * (self.dim - 3) * np.log1p(-t * t) - self.log_norm

    def _log_pdf_xi(self, xi):
        return 0.5 * (self.dim - 3) * _log_one_minus_t2(xi) - self.log_norm

    def log_cdf_pair(self, xi):
        xi = np.asarray(xi, dtype=float)
        # y = (1 + t) / 2 and its complement
        log_y, log_yc = log_expit(xi), log_expit(-xi)
        if self.route == "closed":
            return log_y, log_yc
        if self.route == "finite_sum":
            return _binomial_upper_pair(log_y, log_yc, self.dim)
        if self.route == "beta":
            a = self.shape_param
            return log_reg_inc_beta_pair(log_y, log_yc, a, a)
        if self.route == "quadrature":
            return _quadrature_pair(0.0, self.dim, xi)
        raise ValueError(f"unknown method {self.method!r}")

    def logit_cdf(self, xi):
        if self.route == "closed":
            return np.array(xi, dtype=float)
        return super().logit_cdf(xi)

    def inverse_logit(self, target, x0=None):
        if self.route == "closed":
            return np.array(target, dtype=float)
        return super().inverse_logit(target, x0)

    def _initial_guess(self, target):
        # logit slope at the origin is 2 U'(0)
        slope0 = 2.0 * np.exp(-self.log_norm)
        return target / slope0


def _mul_log(k, log_v):
    """``k * log_v`` with the convention ``0 * log 0 = 0``."""
    with np.errstate(invalid="ignore"):
        return np.where(k == 0, 0.0, k * log_v)


def _binomial_upper_pair(log_y, log_yc, dim):
    """``sum_{i=A}^{n} C(n, i) y^i (1-y)^(n-i)`` and its complement, in logs."""
    n = dim - 2
    a = (dim - 1) // 2
    i = np.arange(n + 1)
    log_c = gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
    terms = log_c + _mul_log(i, log_y[..., None]) + _mul_log(n - i, log_yc[..., None])
    upper = _logsumexp(terms[..., a:])
    lower = _logsumexp(terms[..., :a])
    return upper, lower


def _logsumexp(v):
    top = np.max(v, axis=-1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.sum(np.exp(v - safe[..., None]), axis=-1))


def _quadrature_pair(kappa, dim, xi):
    """``(log F, log(1 - F))`` by quadrature in the polar angle.

    ``F`` is the mass below axis coordinate t; ``1 - F`` the mass of the
    cap around the pole.
    """
    phi, phi_c = _polar_angles(xi)
    n = dim - 2
    log_cap = _log_polar_integral(kappa, n, phi)
    log_rest = _log_polar_integral(-kappa, n, phi_c, shifted=True)
    total = np.logaddexp(log_cap, log_rest)
    return log_rest - total, log_cap - total


@dataclass(frozen=True)
class FisherMarginal(_AxisMarginal):
    """vMF marginal CDF ``F_kappa`` of the last coordinate.

    ``method``: ``"auto"`` (closed form for D=3, Kummer-weighted finite sum
    for odd D, quadrature for even D), or force one of ``"closed"``,
    ``"finite_sum"``, ``"quadrature"``.
    """

    kappa: float
    dim: int
    method: str = "auto"
    newton: LogitNewtonConfig = DEFAULT_NEWTON

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError("kappa must be finite and > 0")
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")
        if self.route == "closed" and self.dim != 3:
            raise ValueError("closed form exists only for D=3")
        if self.route == "finite_sum" and self.dim % 2 == 0:
            raise ValueError("finite sums need odd D")

    @cached_property
    def route(self) -> str:
        if self.method != "auto":
            return self.method
        if self.dim == 3:
            return "closed"
        return "finite_sum" if self.dim % 2 else "quadrature"

    @cached_property
    def log_norm(self) -> float:
        """``log int_{-1}^{1} e^(kappa t) (1 - t^2)^((D-3)/2) dt`` via Bessel I."""
        nu = 0.5 * self.dim - 1.0
        k = float(self.kappa)
        return (
            log_bessel_i(abs(nu), k)
            + 0.5 * np.log(np.pi)
            + float(gammaln(0.5 * (self.dim - 1)))
            + nu * np.log(2.0 / k)
        )

    def log_pdf(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self.kappa * t + 0.5 * (self.dim - 3) * np.log1p(-t * t) - self.log_norm

    def _log_pdf_xi(self, xi):
        t = np.tanh(0.5 * np.asarray(xi, dtype=float))
        return self.kappa * t + 0.5 * (self.dim - 3) * _log_one_minus_t2(xi) - self.log_norm

    def log_cdf_pair(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.route == "closed":
            return _fisher3_pair(self.kappa, xi)
        if self.route == "finite_sum":
            return _fisher_finite_sum_pair(self.kappa, self.dim, xi)
        if self.route == "quadrature":
            return _quadrature_pair(self.kappa, self.dim, xi)
        raise ValueError(f"unknown method {self.method!r}")

    def logit_cdf(self, xi):
        if self.route == "closed":
            return _fisher3_logit(self.kappa, xi)
        return super().logit_cdf(xi)

    def inverse_logit(self, target, x0=None):
        if self.route == "closed":
            return _fisher3_inverse(self.kappa, np.asarray(target, dtype=float))
        return super().inverse_logit(target, x0)

    def _initial_guess(self, target):
        # start from the D=3 inverse; its logit-logit shape is close enough
        return _fisher3_inverse(self.kappa * 3.0 / max(self.dim, 3), target) if self.dim > 2 else target


def _fisher3_logit(kappa, xi):
    """D=3: logit of ``F(t) = (e^(kappa (1+t)) - 1) / (e^(2 kappa) - 1)``.

    With ``u = kappa (1 + t)`` and ``v = kappa (1 - t)`` the logit is
    ``log(1 - e^-u) - log(e^v - 1)``, free of cancellation at both poles.
    """
    xi = np.asarray(xi, dtype=float)
    with np.errstate(over="ignore"):
        u = 2.0 * kappa / (1.0 + np.exp(-xi))
        v = 2.0 * kappa / (1.0 + np.exp(xi))
    with np.errstate(divide="ignore"):
        return log1mexp(u) - log_expm1(v)


def _fisher3_pair(kappa, xi):
    logit = _fisher3_logit(kappa, xi)
    return log_expit(logit), log_expit(-logit)


def log_sub_exp(la, lb):
    return la + log1mexp(la - lb)


def _fisher3_inverse(kappa, target):
    """Closed-form inverse of the D=3 marginal in logit coordinates."""
    log_p, log_q = log_expit(target), log_expit(-target)
    k2 = 2.0 * kappa
    # h = 1 + log(p + q e^(-2 kappa)) / kappa, written for both complements
    with np.errstate(divide="ignore", invalid="ignore"):
        log_one_minus = np.log(-np.logaddexp(log_p, log_q - k2)) - np.log(kappa)
        log_one_plus = np.log(np.logaddexp(log_p + k2, log_q)) - np.log(kappa)
        out = log_one_plus - log_one_minus
    out = np.where(target == np.inf, np.inf, np.where(target == -np.inf, -np.inf, out))
    return out


def _fisher_finite_sum_pair(kappa, dim, xi):
    """Odd D: binomial sum weighted by ratios of Kummer functions.

    The lower tail uses the weights ``1F1(A; i+1; 2 kappa y)``; the upper tail
    is the same sum reflected to the pole with Kummer's transformation, so
    both come out as sums of positive terms.
    """
    n = dim - 2
    a = (dim - 1) // 2
    i = np.arange(a, n + 1, dtype=float)
    log_c = gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
    log_y, log_yc = log_expit(xi), log_expit(-xi)
    y, yc = np.exp(log_y), np.exp(log_yc)
    log_den = log_kummer_1f1(a, 2 * a, 2.0 * kappa)
    lower_terms = (
        log_c
        + _mul_log(i, log_y[..., None])
        + _mul_log(n - i, log_yc[..., None])
        + log_kummer_1f1(a, i + 1, 2.0 * kappa * y[..., None])
    )
    upper_terms = (
        log_c
        + _mul_log(i, log_yc[..., None])
        + _mul_log(n - i, log_y[..., None])
        + log_kummer_1f1(i + 1 - a, i + 1, 2.0 * kappa * yc[..., None])
    )
    log_lower = _logsumexp(lower_terms) - log_den
    log_upper = _logsumexp(upper_terms) - 2.0 * kappa * yc + 2.0 * kappa - log_den
    # evaluate the smaller tail directly, the other from it
    small_lower = log_lower < log_upper
    log_lower, log_upper = (
        np.where(small_lower, log_lower, log1mexp(-np.minimum(log_upper, 0.0))),
        np.where(small_lower, log1mexp(-np.minimum(log_lower, 0.0)), log_upper),
    )
    return log_lower, log_upper


# --------------------------------------------------------------------------
# the 1-d maps h and h^-1


def h_forward_xi(xi, kappa: float, dim: int, method: str = "auto"):
    """Axis-logit form of ``h = F_kappa^-1 o U``."""
    u = UniformMarginal(dim, method if method in ("auto", "quadrature") else "auto")
    f = FisherMarginal(kappa, dim, method)
    return f.inverse_logit(u.logit_cdf(xi))


def h_inverse_xi(xi, kappa: float, dim: int, method: str = "auto"):
    """Axis-logit form of ``h^-1 = U^-1 o F_kappa``."""
    u = UniformMarginal(dim, method if method in ("auto", "quadrature") else "auto")
    f = FisherMarginal(kappa, dim, method)
    return u.inverse_logit(f.logit_cdf(xi))


def h_forward(t, kappa: float, dim: int, method: str = "auto"):
    """Map of the last coordinate under the Fisher zoom."""
    out = np.tanh(0.5 * h_forward_xi(axis_logit(t), kappa, dim, method))
    return out if np.ndim(out) else float(out)


def h_inverse(z, kappa: float, dim: int, method: str = "auto"):
    out = np.tanh(0.5 * h_inverse_xi(axis_logit(z), kappa, dim, method))
    return out if np.ndim(out) else float(out)


def u_cdf(t, dim: int):
    _check_axis(t)
    return UniformMarginal(dim).cdf(t)


def f_cdf(t, kappa: float, dim: int, method: str = "auto"):
    _check_axis(t)
    return FisherMarginal(kappa, dim, method).cdf(t)


def _check_axis(t):
    t = np.asarray(t, dtype=float)
    if np.any(np.isnan(t)) or np.any(np.abs(t) > 1):
        raise ValueError("axis coordinate must lie in [-1, 1]")


def h_prime(t, kappa: float, dim: int):
    """``h'(t) = U'(t) / F'(h(t))`` from the two marginal densities."""
    u = UniformMarginal(dim)
    f = FisherMarginal(kappa, dim)
    h = h_forward(t, kappa, dim)
    return np.exp(u.log_pdf(t) - f.log_pdf(h))


def log_norm_ratio(kappa: float, dim: int) -> float:
    """``log(N_F / N_U)``, the constant part of the zoom density update."""
    return FisherMarginal(kappa, dim).log_norm - UniformMarginal(dim).log_norm


def zoom_log_density_update(t, kappa: float, dim: int):
    """Log density update of the zoom at a point with last coordinate ``t``.

    Equals ``log h'(t) + (D-3)/2 log((1 - h^2) / (1 - t^2))``. Writing
    ``h'`` as the ratio of the two marginal densities the ``t`` dependence
    cancels and leaves ``log(N_F / N_U) - kappa h(t)``, which stays finite up
    to and including the poles.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1):
        raise ValueError("axis coordinate must lie in [-1, 1]")
    return log_norm_ratio(kappa, dim) - kappa * h_forward(t, kappa, dim)


def scaling_constant(dim: int, kappa: float) -> float:
    """Leading-order contraction ``C / sqrt(kappa)`` of tangent coordinates at
    the pole, with ``C = ((2 pi)^((D-1)/2) / |S^(D-1)|)^(1/(D-1))``."""
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    log_c = (0.5 * (dim - 1) * np.log(2 * np.pi) - log_surface_volume(dim)) / (dim - 1)
    return float(np.exp(log_c) / np.sqrt(kappa))


# --------------------------------------------------------------------------
# the layer


@dataclass(frozen=True)
class ZoomParams:
    kappa: float
    dim: int

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError("kappa must be finite and > 0")
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")


def _move_along_axis(x, xi_new):
    """Replace the axis logit of points ``x`` by ``xi_new``, keeping the
    direction of the perpendicular part."""
    x = np.asarray(x, dtype=float)
    perp = x[..., :-1]
    r = row_norm(perp)
    half = 0.5 * xi_new
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        radius = 1.0 / np.cosh(half)
        scale = np.where(r > 0, radius / r, 0.0)
    out = np.empty_like(x)
    out[..., :-1] = perp * scale[..., None]
    out[..., -1] = np.tanh(half)
    return out / row_norm(out)[..., None]


def zoom_forward(x, p: ZoomParams):
    """Push points through the zoom (base side to target side)."""
    return _move_along_axis(x, h_forward_xi(axis_logit_of_points(x), p.kappa, p.dim))


def zoom_inverse(y, p: ZoomParams):
    return _move_along_axis(y, h_inverse_xi(axis_logit_of_points(y), p.kappa, p.dim))


def vmf_log_density(x, kappa: float, dim: int):
    """Log density of the zoom applied to the uniform base, mean e_D."""
    x = np.asarray(x, dtype=float)
    return -log_surface_volume(dim) - log_norm_ratio(kappa, dim) + kappa * x[..., -1]
