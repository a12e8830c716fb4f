"""Special functions and monotone inversion used by the Fisher-zoom layer.

Everything here works in log space or logit space so that both tails of a
CDF keep full relative precision.  Functions are vectorized over numpy
arrays unless noted otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special as sc

LOG2 = float(np.log(2.0))


class InversionError(ArithmeticError):
    """Safeguarded Newton iteration did not reach its tolerance."""


class ConvergenceError(ArithmeticError):
    """A series or continued fraction hit its term cap."""


# --------------------------------------------------------------------------
# small log-space helpers


def log_expit(x):
    """``log(1 / (1 + exp(-x)))`` without overflow."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def logit(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(p) - np.log1p(-p)


def log1mexp(x):
    """``log(1 - exp(-x))`` for ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x < LOG2, np.log(-np.expm1(-x)), np.log1p(-np.exp(-x)))


def log_expm1(x):
    """``log(exp(x) - 1)`` for ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x < 30.0, np.log(np.expm1(np.minimum(x, 30.0))), x + np.log1p(-np.exp(-x)))


def log_sub(la, lb):
    """``log(exp(la) - exp(lb))`` for ``la >= lb``."""
    la = np.asarray(la, dtype=float)
    with np.errstate(invalid="ignore"):
        return la + log1mexp(la - lb)


# --------------------------------------------------------------------------
# regularized incomplete beta


def _betacf(x, a, b, max_terms=10000, eps=1e-16):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, max_terms + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < eps
        if done.all():
            return h
    raise ConvergenceError(f"incomplete beta continued fraction did not converge (a={a}, b={b})")


def log_reg_inc_beta_pair(log_x, log_xc, a: float, b: float):
    """Return ``(log I_x(a, b), log(1 - I_x(a, b)))``.

    The argument is passed as ``log x`` and ``log(1 - x)`` so that callers
    holding both complements (e.g. from a logit) lose nothing near 0 or 1.
    The smaller tail is always evaluated directly by the continued fraction;
    the other tail follows from it.
    """
    log_x = np.asarray(log_x, dtype=float)
    log_xc = np.asarray(log_xc, dtype=float)
    log_x, log_xc = np.broadcast_arrays(log_x, log_xc)
    x = np.exp(log_x)
    xc = np.exp(log_xc)
    lbeta = sc.betaln(a, b)
    # direct side: x below the pivot (a + 1) / (a + b + 2)
    direct = x < (a + 1.0) / (a + b + 2.0)
    xs = np.where(direct, x, xc)
    aa = np.where(direct, a, b)
    bb = np.where(direct, b, a)
    log_front = np.where(direct, a * log_x + b * log_xc, b * log_xc + a * log_x) - np.log(aa) - lbeta
    cf = np.empty_like(xs)
    for sel, (p, q) in ((direct, (a, b)), (~direct, (b, a))):
        if sel.any():
            cf[sel] = _betacf(xs[sel], p, q)
    with np.errstate(divide="ignore"):
        log_small = log_front + np.log(cf)
    log_small = np.minimum(log_small, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_large = np.log1p(-np.exp(log_small))
    log_i = np.where(direct, log_small, log_large)
    log_ic = np.where(direct, log_large, log_small)
    # exact endpoints
    log_i = np.where(log_x == -np.inf, -np.inf, np.where(log_xc == -np.inf, 0.0, log_i))
    log_ic = np.where(log_x == -np.inf, 0.0, np.where(log_xc == -np.inf, -np.inf, log_ic))
    return log_i, log_ic


def reg_inc_beta(x, a: float, b: float):
    """Regularized incomplete beta ``I_x(a, b)`` for ``x`` in [0, 1]."""
    x = np.asarray(x, dtype=float)
    if a <= 0 or b <= 0:
        raise ValueError("reg_inc_beta requires a > 0 and b > 0")
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("reg_inc_beta requires 0 <= x <= 1")
    with np.errstate(divide="ignore"):
        log_i, _ = log_reg_inc_beta_pair(np.log(x), np.log1p(-x), a, b)
    out = np.exp(log_i)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# modified Bessel function of the first kind


def _log_bessel_i_series(nu, kappa, max_terms=500):
    q = 0.25 * kappa * kappa
    log_term = np.zeros_like(kappa)
    log_sum = np.zeros_like(kappa)
    with np.errstate(divide="ignore"):
        log_q = np.log(q)
    for j in range(1, max_terms + 1):
        log_term = log_term + log_q - np.log(j) - np.log(nu + j)
        log_sum = np.logaddexp(log_sum, log_term)
        if np.all(log_term < log_sum - 40.0):
            break
    return nu * np.log(0.5 * kappa) - sc.gammaln(nu + 1.0) + log_sum


def log_bessel_i(nu: float, kappa):
    """``log I_nu(kappa)`` for ``nu >= 0`` and ``kappa > 0``.

    Uses the exponentially scaled Bessel function, so ``kappa`` up to 1e8
    and beyond is fine. Where the scaled value underflows (tiny ``kappa``,
    large ``nu``) the ascending series is summed in log space instead.
    """
    kappa = np.asarray(kappa, dtype=float)
    if nu < 0:
        raise ValueError("log_bessel_i requires nu >= 0")
    if np.any(kappa <= 0):
        raise ValueError("log_bessel_i requires kappa > 0")
    with np.errstate(divide="ignore"):
        out = np.log(sc.ive(nu, kappa)) + kappa
    bad = ~np.isfinite(out) | (sc.ive(nu, kappa) < 1e-290)
    if np.any(bad):
        out = np.array(out, dtype=float, copy=True)
        out[bad] = _log_bessel_i_series(nu, kappa[bad] if kappa.ndim else kappa)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Kummer confluent hypergeometric function 1F1


def _log1f1_series(a, b, x, max_terms):
    """Ascending series, all terms positive, summed in log space."""
    log_term = np.zeros_like(x)
    log_sum = np.zeros_like(x)
    with np.errstate(divide="ignore"):
        log_x = np.log(x)
    active = x > 0
    for k in range(max_terms):
        if not active.any():
            return log_sum
        log_term = log_term + np.log((a + k) / ((b + k) * (k + 1.0))) + log_x
        log_sum = np.where(active, np.logaddexp(log_sum, log_term), log_sum)
        # terms decrease once k exceeds roughly x; stop when negligible
        shrinking = (a + k) * x < (b + k) * (k + 1.0)
        active &= ~(shrinking & (log_term < log_sum - 38.0))
    if active.any():
        raise ConvergenceError("1F1 ascending series hit its term cap")
    return log_sum


def _log1f1_asymptotic(a, b, x, max_terms=400):
    """Large-x expansion ``Gamma(b)/Gamma(a) e^x x^(a-b) sum_k (b-a)_k (1-a)_k / (k! x^k)``.

    For positive integer ``a`` the sum terminates and is exact up to a
    relative ``O(e^-x)`` remainder. Returns the log value and the
    cancellation ratio ``sum |t_k| / |sum t_k|``, which is infinite when a
    divergent expansion cannot reach double precision.
    """
    term = np.ones_like(x)
    total = np.ones_like(x)
    abs_total = np.ones_like(x)
    prev = np.full_like(x, np.inf)
    live = np.ones(x.shape, dtype=bool)
    terminating = _is_nonpos_int(1.0 - a) | _is_nonpos_int(b - a)
    for k in range(max_terms):
        term = term * (b - a + k) * (1.0 - a + k) / ((k + 1.0) * x)
        mag = np.abs(term)
        # terminating sums run to the end; divergent ones stop at the
        # smallest term
        live &= (mag > 0) & ((mag < prev) | terminating)
        total = np.where(live, total + term, total)
        abs_total = np.where(live, abs_total + mag, abs_total)
        prev = np.where(live, mag, prev)
        if not live.any():
            break
    with np.errstate(divide="ignore", invalid="ignore"):
        val = sc.gammaln(b) - sc.gammaln(a) + x + (a - b) * np.log(x) + np.log(total)
        cond = abs_total / np.abs(total)
        # a divergent tail leaves an error of about its smallest term
        trunc = np.where(terminating, 0.0, prev / np.abs(total))
    return val, np.where(trunc < 1e-17, cond, np.inf)


def _is_nonpos_int(v):
    return (v <= 0) & (v == np.round(v))


def _recessive_log_bound(a, b, x, max_terms=200):
    """Log of ``sum_k |(a)_k (a-b+1)_k / k!| x^-k``, the recessive series."""
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(max_terms):
        term = term * np.abs((a + k) * (a - b + 1.0 + k)) / ((k + 1.0) * x)
        total = total + term
        if not np.any(term > 1e-18 * total):
            break
    with np.errstate(divide="ignore"):
        return np.log(total)


def _asymptotic_ok(a, b, x):
    """True where the large-x form is accurate to double precision."""
    is_int_a = np.abs(a - np.round(a)) == 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # size of the recessive part Gamma(b)/Gamma(b-a) (-x)^-a 2F0(..)
        # relative to the dominant one
        bma = b - a
        rgamma_bma = sc.rgamma(bma)
        log_rec = np.where(
            rgamma_bma == 0,
            -np.inf,
            sc.gammaln(a) - sc.gammaln(np.where(rgamma_bma == 0, 1.0, bma)) + (b - 2 * a) * np.log(x) - x,
        )
        cand = is_int_a & (log_rec < -40.0) & (x > 0)
        if cand.any():
            log_rec[cand] += _recessive_log_bound(a[cand], b[cand], x[cand])
    ok_int = is_int_a & (log_rec < -40.0)
    ok_gen = (~is_int_a) & (x >= 40.0 * b) & (x > 60.0)
    return (ok_int | ok_gen) & (x > 0)


def log_kummer_1f1(a, b, x, max_terms=200000):
    """``log 1F1(a; b; x)`` for ``a > 0``, ``b > 0``, ``x >= 0``.

    Uses the ascending series (positive terms, log-sum-exp accumulation)
    unless the large-argument expansion is accurate to double precision
    and free of cancellation, in which case that is used instead.
    """
    a, b, x = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, x)))
    shape = a.shape
    a, b, x = (np.ravel(v) for v in (a, b, x))
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("log_kummer_1f1 requires a > 0 and b > 0")
    if np.any(x < 0):
        raise ValueError("log_kummer_1f1 requires x >= 0")
    out = np.zeros(a.shape, dtype=float)
    use_asym = _asymptotic_ok(a, b, x)
    if use_asym.any():
        idx = np.flatnonzero(use_asym)
        val, cond = _log1f1_asymptotic(a[idx], b[idx], x[idx])
        good = np.isfinite(val) & (cond < 1e3)
        out[idx[good]] = val[good]
        use_asym[idx[~good]] = False
    ser = ~use_asym
    if ser.any():
        out[ser] = _log1f1_series(a[ser], b[ser], x[ser], max_terms)
    out = out.reshape(shape)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# safeguarded Newton in logit space


@dataclass(frozen=True)
class LogitNewtonConfig:
    """Settings for :func:`solve_logit`.

    ``tolerance`` is measured on the logit of the CDF, relative to
    ``max(1, |target|)`` because far-tail logits are large numbers.
    """

    max_iterations: int = 100
    tolerance: float = 1e-12
    bisection_fallback: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")


DEFAULT_NEWTON = LogitNewtonConfig()

# axis-logit bracket; |xi| = 1500 is already 1 -+ t ~ 1e-651
XI_BRACKET = 1500.0


def solve_logit(fn, target, x0=None, cfg: LogitNewtonConfig = DEFAULT_NEWTON):
    """Solve ``L(xi) = target`` for a strictly increasing ``L``.

    ``fn(xi)`` returns ``(L, dL/dxi)`` elementwise. Both the unknown and the
    function value live in logit space: ``xi = log((1 + t) / (1 - t))`` for
    an axis coordinate ``t`` and ``L`` is the logit of a CDF. Newton steps
    that leave the current bracket (or fail to shrink it fast enough) are
    replaced by bisection. Infinite targets map to infinite ``xi``.
    """
    target = np.asarray(target, dtype=float)
    shape = target.shape
    tgt = target.ravel()
    xi = np.zeros_like(tgt) if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), shape).ravel().copy()
    out = np.empty_like(tgt)
    inf = np.isinf(tgt)
    out[inf] = tgt[inf]
    if np.any(np.isnan(tgt)):
        raise ValueError("solve_logit target contains NaN")
    idx = np.flatnonzero(~inf)
    xi = np.clip(xi[idx], -XI_BRACKET, XI_BRACKET)
    tgt = tgt[idx]
    lo = np.full_like(xi, -XI_BRACKET)
    hi = np.full_like(xi, XI_BRACKET)
    step_old = np.full_like(xi, 2 * XI_BRACKET)
    tol = cfg.tolerance * np.maximum(1.0, np.abs(tgt))
    for _ in range(cfg.max_iterations):
        if idx.size == 0:
            break
        with np.errstate(all="ignore"):
            val, dval = fn(xi)
            g = val - tgt
        done = np.abs(g) <= tol
        # bracket collapsed to rounding: nothing more to gain
        done |= (hi - lo) <= 4e-16 * np.maximum(1.0, np.abs(xi))
        out[idx[done]] = xi[done]
        keep = ~done
        if not keep.any():
            idx = idx[:0]
            break
        idx, xi, tgt, lo, hi, g, dval, tol, step_old = (
            v[keep] for v in (idx, xi, tgt, lo, hi, g, dval, tol, step_old)
        )
        g_nan = np.isnan(g)
        lo = np.where(~g_nan & (g < 0), xi, lo)
        hi = np.where(~g_nan & (g > 0), xi, hi)
        with np.errstate(all="ignore"):
            step = g / dval
            x_new = xi - step
        bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi) | g_nan
        if cfg.bisection_fallback:
            bad |= np.abs(2.0 * step) > np.abs(step_old)
        mid = 0.5 * (lo + hi)
        x_new = np.where(bad, mid, x_new)
        step_old = np.where(bad, hi - lo, step)
        xi = x_new
    if idx.size:
        raise InversionError(
            f"logit Newton did not converge for {idx.size} value(s) in {cfg.max_iterations} iterations"
        )
    return out.reshape(shape)


def _numeric_logit_fn(f: Callable, h: float = 1e-6):
    """Wrap a CDF on [-1, 1] as a logit-space function with FD derivative."""

    def lf(xi):
        return logit(f(np.tanh(0.5 * xi)))

    def fn(xi):
        val = lf(xi)
        dval = (lf(xi + h) - lf(xi - h)) / (2 * h)
        return val, dval

    return fn


def invert_monotone_logit(f, target=None, cfg: LogitNewtonConfig = DEFAULT_NEWTON, *, target_logit=None, x0=None):
    """Invert a strictly increasing CDF ``f: [-1, 1] -> [0, 1]``.

    ``f`` is either a plain callable (its logit derivative is then taken
    by central differences) or an axis marginal exposing ``logit_cdf`` and
    ``dlogit_cdf`` in axis-logit coordinates. Pass ``target`` as a CDF value
    or ``target_logit`` directly when the tail is beyond double range.
    Returns the axis coordinate ``t`` with ``logit f(t)`` matching the target.
    """
    if (target is None) == (target_logit is None):
        raise ValueError("give exactly one of target or target_logit")
    tl = logit(target) if target_logit is None else np.asarray(target_logit, dtype=float)
    if hasattr(f, "logit_cdf"):
        fn = lambda xi: (f.logit_cdf(xi), f.dlogit_cdf(xi))  # noqa: E731
    else:
        fn = _numeric_logit_fn(f)
    xi0 = None if x0 is None else 2.0 * np.arctanh(np.clip(x0, -1 + 1e-16, 1 - 1e-16))
    xi = solve_logit(fn, tl, xi0, cfg)
    t = np.tanh(0.5 * xi)
    return t if np.ndim(t) else float(t)
