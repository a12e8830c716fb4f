"""Maximum-likelihood fitting of family presets to samples on the sphere.

Parameters live in a flat unconstrained vector:

* rotations: ``R = R0 expm(W(theta))`` with a skew matrix ``W`` around a
  data-driven anchor ``R0``,
* concentrations: ``kappa = exp(theta)``, capped at ``kappa_max``,
* constrained scales: ``sigma = exp(tanh(theta) log hi(kappa))`` (a single
  ``u`` with ``sigma = (u, 1/u)`` for Kent-type scalings in D=3),
* unit-determinant scalings and full matrices: log scales (centred) and
  free lower-triangular entries.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm, expm_frechet, logm

from .chain import FlowChain
from .linear_project import LPParams, kent_constraint_interval, sigma_from_unconstrained, unconstrained_from_sigma
from .presets import FAMILIES, FamilyPreset, build_preset
from .special import log_bessel_i
from .sphere import Rotation, as_points, log_surface_volume, rotation_to, skew_from_vector

log = logging.getLogger(__name__)

DEFAULT_KAPPA_MAX = 1e8


class DivergenceError(ArithmeticError):
    """The optimizer ran far past the uniform baseline."""


class KappaCapWarning(RuntimeWarning):
    """A fitted concentration sits at the cap of its transform."""


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("Adam needs 0 <= beta < 1 and eps > 0")


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings. ``optimizer`` is ``"adam"`` or ``"sgd"``;
    ``gradient`` is ``"central"`` (finite differences with ``fd_step``) or
    ``"analytic"`` (used where available, central differences otherwise)."""

    iterations: int = 2000
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    adam: AdamConfig = field(default_factory=AdamConfig)
    gradient: str = "analytic"
    fd_step: float = 1e-5
    seed: int = 0
    batch_size: int | None = None
    n_starts: int | None = None
    kappa_max: float = DEFAULT_KAPPA_MAX
    divergence_margin: float = 10.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be adam or sgd")
        if self.gradient not in ("central", "analytic"):
            raise ValueError("gradient must be central or analytic")
        if not 1e-7 <= self.fd_step <= 1e-3:
            raise ValueError("fd_step must lie in [1e-7, 1e-3]")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_starts is not None and self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if not self.kappa_max > 0:
            raise ValueError("kappa_max must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        if "adam" in d:
            d["adam"] = AdamConfig(**d["adam"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**d)


# parameter vector -------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    name: str
    kind: str  # rotation | log_kappa | sigma_c | u | log_scales | log_sigma | full
    size: int
    anchor: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ParamCodec:
    """Maps a flat unconstrained vector to a family preset and back."""

    family: str
    dim: int
    blocks: tuple
    kappa_max: float = DEFAULT_KAPPA_MAX

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"parameter vector must have {self.size} entries")
        out, i = [], 0
        for b in self.blocks:
            out.append(theta[i : i + b.size])
            i += b.size
        return out

    def _decode_group(self, parts, start):
        """Decode blocks from ``start`` up to the next rotation block."""
        d = self.dim
        params = {}
        i = start
        kappa = None
        while i < len(self.blocks):
            b, v = self.blocks[i], parts[i]
            if b.kind == "rotation" and i > start:
                break
            if b.kind == "rotation":
                params["rotation"] = b.anchor @ _expm_skew(v, d)
            elif b.kind == "log_kappa":
                kappa = min(float(np.exp(v[0])), self.kappa_max)
                params["kappa"] = kappa
            elif b.kind == "u":
                params["u"] = float(sigma_from_unconstrained(v[0], kappa, d))
            elif b.kind == "sigma_c":
                params["sigmas"] = sigma_from_unconstrained(v, kappa, d)
            elif b.kind == "log_scales":
                params["scales"] = np.exp(v - v.mean())
            elif b.kind == "log_sigma":
                params["sigma"] = float(np.exp(v[0]))
            elif b.kind == "full":
                params["matrix"] = LPParams.full(v[:d], v[d:]).matrix
            i += 1
        return params, i

    def decode(self, theta) -> FamilyPreset:
        parts = self.split(theta)
        if self.family == "generic":
            blocks, i = [], 0
            while i < len(self.blocks):
                params, i = self._decode_group(parts, i)
                blocks.append(params)
            return FamilyPreset("generic", self.dim, {"blocks": blocks})
        params, _ = self._decode_group(parts, 0)
        return FamilyPreset(self.family, self.dim, params)

    def chain(self, theta) -> FlowChain:
        return build_preset(self.decode(theta))

    def encode(self, preset: FamilyPreset):
        """Unconstrained vector reproducing ``preset`` (inverse of decode)."""
        if preset.name != self.family or preset.dim != self.dim:
            raise ValueError("preset does not match the codec family")
        groups = preset.params["blocks"] if self.family == "generic" else [preset.params]
        d = self.dim
        out = []
        gi = -1
        kappa = None
        for b in self.blocks:
            if b.kind == "rotation":
                gi += 1
            p = groups[max(gi, 0)]
            if b.kind == "rotation":
                rot = _preset_rotation(p, d)
                w = np.real(logm(b.anchor.T @ rot))
                out.append(0.5 * (w - w.T)[np.triu_indices(d, 1)])
            elif b.kind == "log_kappa":
                kappa = float(p["kappa"])
                out.append([np.log(kappa)])
            elif b.kind == "u":
                if "u" in p:
                    u = float(p["u"])
                else:
                    sig = np.asarray(p["sigmas"], dtype=float)
                    if abs(sig[0] * sig[1] - 1.0) > 1e-12:
                        raise ValueError("the D=3 codec needs sigmas of the form (u, 1/u)")
                    u = float(sig[0])
                out.append([float(unconstrained_from_sigma(u, kappa, d))])
            elif b.kind == "sigma_c":
                out.append(unconstrained_from_sigma(p["sigmas"], kappa, d))
            elif b.kind == "log_scales":
                s = np.log(np.asarray(p["scales"], dtype=float))
                out.append(s - s.mean())
            elif b.kind == "log_sigma":
                out.append([np.log(float(p["sigma"]))])
            elif b.kind == "full":
                lp = LPParams.lower(p["matrix"]) if np.all(np.triu(p["matrix"], 1) == 0) else LPParams.from_matrix(p["matrix"])
                out.append(np.concatenate([lp.log_scales(), lp.lower_entries()]))
        return np.concatenate([np.asarray(v, dtype=float).ravel() for v in out]) if out else np.zeros(0)


def _preset_rotation(p, dim):
    if "rotation" in p:
        return np.asarray(p["rotation"], dtype=float)
    if "mu" in p:
        return rotation_to(p["mu"]).matrix
    return np.eye(dim)


def _expm_skew(v, dim):
    if not np.any(v):
        return np.eye(dim)
    return expm(skew_from_vector(v, dim))


def _rot_block(dim, anchor):
    return Block("rotation", "rotation", dim * (dim - 1) // 2, np.asarray(anchor, dtype=float))


def make_codec(
    family: str,
    dim: int,
    anchors: Sequence | None = None,
    *,
    n_blocks: int = 15,
    symmetric_fb4: bool = True,
    bingham_full: bool = True,
    kappa_max: float = DEFAULT_KAPPA_MAX,
) -> ParamCodec:
    """Parameter layout for a family; ``anchors`` are the rotation anchors
    (identity by default)."""
    family = family.lower()
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    n_rot = n_blocks if family == "generic" else (0 if family == "bingham" and bingham_full else 1)
    anchors = list(anchors) if anchors is not None else [np.eye(dim)] * n_rot
    if len(anchors) != n_rot:
        raise ValueError(f"need {n_rot} rotation anchors")
    full = Block("matrix", "full", dim + dim * (dim - 1) // 2)
    kappa = Block("kappa", "log_kappa", 1)
    sc = Block("u", "u", 1) if dim == 3 else Block("sigmas", "sigma_c", dim - 1)
    blocks: list[Block] = []
    if family == "vmf":
        blocks = [_rot_block(dim, anchors[0]), kappa]
    elif family == "bingham":
        blocks = [full] if bingham_full else [_rot_block(dim, anchors[0]), Block("scales", "log_scales", dim)]
    elif family == "fb4":
        s = Block("sigma", "log_sigma", 1) if symmetric_fb4 else Block("scales", "log_scales", dim)
        blocks = [_rot_block(dim, anchors[0]), kappa, s]
    elif family == "kent":
        blocks = [_rot_block(dim, anchors[0]), kappa, sc]
    elif family == "fb6":
        blocks = [_rot_block(dim, anchors[0]), kappa, sc, Block("scales", "log_scales", dim)]
    elif family == "fb8":
        blocks = [_rot_block(dim, anchors[0]), kappa, sc, full]
    elif family == "generic":
        for a in anchors:
            blocks += [_rot_block(dim, a), kappa, full]
    return ParamCodec(family, dim, tuple(blocks), kappa_max)


# objective ------------------------------------------------------------------------


def nll(codec: ParamCodec, theta, samples) -> float:
    """Mean negative log-likelihood of ``samples``."""
    samples = np.atleast_2d(samples)
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    return float(-np.mean(codec.chain(theta).log_prob(samples)))


def uniform_nll(dim: int) -> float:
    return log_surface_volume(dim)


def fd_gradient(codec: ParamCodec, theta, samples, step: float = 1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        g[j] = (nll(codec, theta + e, samples) - nll(codec, theta - e, samples)) / (2.0 * step)
    return g


def has_analytic_gradient(codec: ParamCodec) -> bool:
    return codec.family == "vmf"


def _log_bessel_ratio(dim, kappa):
    """``log(I_{D/2}(kappa) / I_{D/2-1}(kappa))``: the mean resultant length."""
    return log_bessel_i(0.5 * dim, kappa) - log_bessel_i(abs(0.5 * dim - 1.0), kappa)


def analytic_gradient(codec: ParamCodec, theta, samples):
    """Exact NLL gradient for the vMF family.

    ``log p = log c_D(kappa) + kappa mu.x`` with ``mu = R e_D``. The
    concentration derivative uses ``d log c_D / d kappa = -A_D(kappa)``
    (a Bessel ratio); the rotation derivative uses the Frechet derivative of
    the matrix exponential along each skew generator.
    """
    if not has_analytic_gradient(codec):
        raise NotImplementedError(f"no analytic gradient for family {codec.family}")
    d = codec.dim
    rot_theta, lk = codec.split(theta)
    anchor = codec.blocks[0].anchor
    samples = np.atleast_2d(samples)
    xbar = samples.mean(axis=0)
    capped = lk[0] >= np.log(codec.kappa_max)
    kappa = float(np.exp(min(lk[0], np.log(codec.kappa_max))))
    w = skew_from_vector(rot_theta, d)
    mu = anchor @ expm(w)[:, -1]
    mean_res = float(np.exp(_log_bessel_ratio(d, kappa)))
    g_lk = 0.0 if capped else -kappa * (xbar @ mu - mean_res)
    g_rot = np.zeros(rot_theta.size)
    iu = np.triu_indices(d, 1)
    for j, (a, b) in enumerate(zip(*iu)):
        gen = np.zeros((d, d))
        gen[a, b], gen[b, a] = 1.0, -1.0
        dmu = anchor @ expm_frechet(w, gen, compute_expm=False)[:, -1]
        g_rot[j] = -kappa * (xbar @ dmu)
    return np.concatenate([g_rot, [g_lk]])


def gradient(codec: ParamCodec, theta, samples, cfg: FitConfig):
    if cfg.gradient == "analytic" and has_analytic_gradient(codec):
        return analytic_gradient(codec, theta, samples)
    return fd_gradient(codec, theta, samples, cfg.fd_step)


def grad_check(codec: ParamCodec, theta, samples, step: float = 1e-5) -> float:
    """Largest deviation between analytic and central-difference gradients,
    relative to ``max(1, |fd gradient|_inf)``; 0 for an empty vector."""
    theta = np.asarray(theta, dtype=float)
    if theta.size == 0:
        return 0.0
    ga = analytic_gradient(codec, theta, samples)
    gf = fd_gradient(codec, theta, samples, step)
    return float(np.max(np.abs(ga - gf)) / max(1.0, np.max(np.abs(gf))))


# initialisation --------------------------------------------------------------


def _vmf_kappa_guess(mean_len, dim):
    r = min(mean_len, 1.0 - 1e-12)
    return max(r * (dim - r * r) / (1.0 - r * r), 1e-3)


def initial_guess(family: str, samples, *, n_blocks: int = 15, kappa_max: float = DEFAULT_KAPPA_MAX, symmetric_fb4: bool = True):
    """Codec and starting vector from moments of the data.

    The mode is placed at the mean direction and the concentration taken
    from the mean resultant length. Kent-type families align the tangent
    axes with the principal axes of the tangent-plane scatter and take the
    scale ratio from its eigenvalues.
    """
    family = family.lower()
    x = as_points(np.atleast_2d(samples), tol=1e-9)
    n, d = x.shape
    m = x.mean(axis=0)
    mean_len = float(np.linalg.norm(m))
    mu = m / mean_len if mean_len > 0 else np.eye(d)[-1]
    anchor = rotation_to(mu).matrix
    kappa = min(_vmf_kappa_guess(mean_len, d), kappa_max)
    params: dict = {}
    if family == "bingham":
        scatter = x.T @ x / n + 1e-9 * np.eye(d)
        codec = make_codec("bingham", d, kappa_max=kappa_max)
        return codec, codec.encode(FamilyPreset("bingham", d, {"matrix": np.linalg.cholesky(scatter)}))
    if family in ("kent", "fb6", "fb8") and n > d:
        local = x @ anchor
        tang = local[:, :-1] / np.maximum(local[:, -1:], 1e-3)
        tang = tang - tang.mean(axis=0)
        evals, evecs = np.linalg.eigh(tang.T @ tang / n)
        evals = np.maximum(evals[::-1], 1e-300)
        evecs = evecs[:, ::-1]
        if np.linalg.det(evecs) < 0:
            evecs[:, -1] = -evecs[:, -1]
        turn = np.eye(d)
        turn[:-1, :-1] = evecs
        anchor = anchor @ turn
        kappa_t = 1.0 / np.exp(np.mean(np.log(evals)))
        if np.isfinite(kappa_t) and 0 < kappa_t < kappa_max:
            kappa = kappa_t
        lo, hi = kent_constraint_interval(kappa, d)
        sig = np.sqrt(evals * kappa)
        sig = np.clip(sig, lo * 1.01, hi / 1.01)
        if d == 3:
            u = float(np.clip(np.sqrt(sig[0] / sig[1]), lo * 1.01, hi / 1.01))
            params["u"] = u
        else:
            params["sigmas"] = sig
    if family in ("kent", "fb6", "fb8") and not params:
        # too few samples for a scatter estimate: start isotropic
        params["u" if d == 3 else "sigmas"] = 1.0 if d == 3 else np.ones(d - 1)
    anchors = [anchor] * (n_blocks if family == "generic" else 1)
    codec = make_codec(family, d, anchors, n_blocks=n_blocks, kappa_max=kappa_max, symmetric_fb4=symmetric_fb4)
    if family == "generic":
        blocks = [
            {"rotation": anchor, "kappa": kappa if i == 0 else 0.1, "matrix": np.eye(d)} for i in range(n_blocks)
        ]
        return codec, codec.encode(FamilyPreset("generic", d, {"blocks": blocks}))
    params.update({"rotation": anchor, "kappa": kappa})
    if family == "fb4":
        params["sigma" if symmetric_fb4 else "scales"] = 1.0 if symmetric_fb4 else np.ones(d)
    if family == "fb6":
        params["scales"] = np.ones(d)
    if family == "fb8":
        params["matrix"] = np.eye(d)
    return codec, codec.encode(FamilyPreset(family, d, params))


# optimisation ------------------------------------------------------------------


@dataclass
class FitResult:
    chain: FlowChain
    preset: FamilyPreset
    theta: np.ndarray
    nll: float
    trace: list = field(default_factory=list)  # NLL per iteration (current iterate)
    best_trace: list = field(default_factory=list)  # best-so-far NLL per iteration
    capped: bool = False


def _optimize(codec: ParamCodec, theta0, samples, cfg: FitConfig, rng) -> FitResult:
    theta = np.array(theta0, dtype=float)
    n = len(samples)
    baseline = uniform_nll(codec.dim)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_theta, best = theta.copy(), np.inf
    trace, best_trace = [], []
    b1, b2, eps = cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps
    for it in range(1, cfg.iterations + 1):
        batch = samples if cfg.batch_size is None or cfg.batch_size >= n else samples[rng.choice(n, cfg.batch_size, replace=False)]
        value = nll(codec, theta, samples)
        if not np.isfinite(value) or value > baseline + cfg.divergence_margin:
            raise DivergenceError(
                f"NLL {value:.6g} at iteration {it} exceeds the uniform baseline {baseline:.6g} by more than {cfg.divergence_margin} nats"
            )
        trace.append(value)
        if value < best:
            best, best_theta = value, theta.copy()
        best_trace.append(best)
        if it == cfg.iterations:
            break
        g = gradient(codec, theta, batch, cfg)
        if cfg.optimizer == "adam":
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta = theta - cfg.learning_rate * (m / (1 - b1**it)) / (np.sqrt(v / (1 - b2**it)) + eps)
        else:
            theta = theta - cfg.learning_rate * g
        # keep log-concentrations inside the cap so they can come back down
        i = 0
        for blk in codec.blocks:
            if blk.kind == "log_kappa":
                theta[i] = min(theta[i], np.log(codec.kappa_max))
            i += blk.size
    preset = codec.decode(best_theta)
    capped = _at_cap(codec, best_theta)
    return FitResult(build_preset(preset), preset, best_theta, best, trace, best_trace, capped)


def _at_cap(codec, theta):
    i = 0
    for blk in codec.blocks:
        if blk.kind == "log_kappa" and theta[i] >= np.log(codec.kappa_max) - 1e-12:
            return True
        i += blk.size
    return False


def _coincident(x, tol: float = 1e-9) -> bool:
    return bool(np.max(np.linalg.norm(x - x[0], axis=-1)) < tol)


def fit(family: str, samples, cfg: FitConfig | None = None, **codec_options) -> FitResult:
    """Fit a family to samples by maximum likelihood.

    Returns the parameters with the best NLL seen. Generic chains are
    started from ``n_starts`` (default 4) perturbed initial points and the
    best run wins. When all samples coincide the likelihood has no maximum;
    the moment estimate (concentration at ``kappa_max``) is returned as is
    and a :class:`KappaCapWarning` is issued.
    """
    cfg = cfg or FitConfig()
    family = family.lower()
    samples = as_points(np.atleast_2d(samples), tol=1e-9)
    codec, theta0 = initial_guess(family, samples, kappa_max=cfg.kappa_max, **codec_options)
    if _coincident(samples):
        # unbounded likelihood: the moment estimate already sits at the cap
        log.info("all samples coincide; skipping optimisation")
        best = _optimize(codec, theta0, samples, dataclasses.replace(cfg, iterations=1), np.random.default_rng(cfg.seed))
        if best.capped:
            warnings.warn(f"samples coincide; kappa set to the cap {cfg.kappa_max:g}", KappaCapWarning, stacklevel=2)
        return best
    n_starts = cfg.n_starts or (4 if family == "generic" else 1)
    best = None
    for start in range(n_starts):
        rng = np.random.default_rng([cfg.seed, start])
        theta = theta0 if start == 0 else theta0 + rng.normal(0.0, 0.1, theta0.shape)
        res = _optimize(codec, theta, samples, cfg, rng)
        log.info("start %d: NLL %.6f", start, res.nll)
        if best is None or res.nll < best.nll:
            best = res
    if best.capped:
        warnings.warn(f"fitted kappa reached the cap {cfg.kappa_max:g}", KappaCapWarning, stacklevel=2)
    return best


__all__ = [
    "AdamConfig",
    "Block",
    "DivergenceError",
    "FitConfig",
    "FitResult",
    "KappaCapWarning",
    "ParamCodec",
    "analytic_gradient",
    "fd_gradient",
    "fit",
    "grad_check",
    "initial_guess",
    "make_codec",
    "nll",
    "uniform_nll",
]
