"""Inverse Gaussian (IG) and generalized inverse Gaussian (GIG) mathematics.

The IG law with mean ``mu`` and shape ``lam`` has density

    f(n) = sqrt(lam / (2 pi n^3)) * exp(-lam (n - mu)^2 / (2 mu^2 n)),  n > 0,

and is the first-passage time of a Wiener process with positive drift.
An optional location ``shift`` moves the support to ``(shift, inf)``.

All functions accept scalars or arrays for the time argument and return a
numpy scalar or array of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy import optimize, special

from aign._quad import gk_integrate, neg_f_log_f

LOG_2PI = np.log(2.0 * np.pi)
# Relative spread allowed between the per-part kappa values in Property-2 sums.
KAPPA_RTOL = 1e-9
# Order step for the finite-difference Bessel order derivative.
DORDER_STEP = 1e-5


class DomainError(ValueError):
    """A Bessel-based quantity left the range where it can be evaluated."""


@dataclass(frozen=True)
class IgParams:
    """Parameters of the (optionally shifted) inverse Gaussian law.

    Attributes
    ----------
    mu : float
        Mean first-arrival time in seconds (``d / v``).
    lam : float
        Shape in seconds (``d**2 / sigma2``).
    shift : float
        Location parameter ``t0``; the support is ``(shift, inf)``.
    """

    mu: float
    lam: float
    shift: float = 0.0

    def __post_init__(self):
        for name in ("mu", "lam", "shift"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu!r}")
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam!r}")
        if self.shift < 0:
            raise ValueError(f"shift must be non-negative, got {self.shift!r}")

    @property
    def mean(self) -> float:
        return self.shift + self.mu

    @property
    def var(self) -> float:
        return self.mu**3 / self.lam

    @property
    def mode(self) -> float:
        r = 1.5 * self.mu / self.lam
        return self.shift + self.mu * (np.sqrt(1.0 + r * r) - r)

    def unshifted(self) -> IgParams:
        return IgParams(self.mu, self.lam)


@dataclass(frozen=True)
class GigParams:
    """Generalized inverse Gaussian ``GIG(gamma, mu, lam)``.

    ``gamma = -1/2`` is ``IG(mu, lam)``.  ``lam == 0`` is accepted by the
    constructor but the density is not normalizable there, so evaluating
    anything on it raises :class:`DomainError`.
    """

    gamma: float
    mu: float
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and np.isfinite(self.mu) and np.isfinite(self.lam)):
            raise ValueError("GIG parameters must be finite")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu!r}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam!r}")


def _out(x: np.ndarray):
    return x[()] if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# IG density, cdf, survival
# ---------------------------------------------------------------------------

def ig_logpdf(n: ArrayLike, p: IgParams):
    """Log-density; ``-inf`` for ``n <= shift``."""
    x = np.asarray(n, dtype=float) - p.shift
    out = np.full(x.shape, -np.inf)
    ok = x > 0
    xs = x[ok]
    # far tails overflow to -inf, which is the right log-density
    with np.errstate(over="ignore"):
        out[ok] = (
            -1.5 * np.log(xs)
            + 0.5 * (np.log(p.lam) - LOG_2PI)
            - p.lam * (xs - p.mu) ** 2 / (2.0 * p.mu**2 * xs)
        )
    return _out(out)


def ig_pdf(n: ArrayLike, p: IgParams):
    """Density, exactly 0 for ``n <= shift``."""
    return np.exp(ig_logpdf(n, p))


def _cdf_args(x: np.ndarray, p: IgParams):
    r = np.sqrt(p.lam / x)
    return r * (x / p.mu - 1.0), -r * (x / p.mu + 1.0)


def ig_cdf(n: ArrayLike, p: IgParams):
    """Distribution function.

    The ``exp(2 lam / mu) * Phi(-...)`` product is formed in log space so
    it stays finite when ``lam / mu`` is in the hundreds or more.
    """
    x = np.asarray(n, dtype=float) - p.shift
    out = np.zeros(x.shape)
    ok = x > 0
    a, b = _cdf_args(x[ok], p)
    second = np.exp(2.0 * p.lam / p.mu + special.log_ndtr(b))
    out[ok] = np.clip(special.ndtr(a) + second, 0.0, 1.0)
    return _out(out)


def ig_logsf(n: ArrayLike, p: IgParams):
    """Log of the survival function ``1 - F``, accurate deep in the tail."""
    x = np.asarray(n, dtype=float) - p.shift
    out = np.zeros(x.shape)
    ok = x > 0
    xs = x[ok]
    a, b = _cdf_args(xs, p)
    log_upper = special.log_ndtr(-a)
    log_second = 2.0 * p.lam / p.mu + special.log_ndtr(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = log_upper + np.log1p(-np.exp(np.minimum(log_second - log_upper, 0.0)))
        cdf = special.ndtr(a) + np.exp(log_second)
        body = np.log1p(-np.minimum(cdf, 1.0))
    out[ok] = np.where(cdf < 0.5, body, tail)
    return _out(out)


def ig_sf(n: ArrayLike, p: IgParams):
    return np.exp(ig_logsf(n, p))


def ig_cutoff(p: IgParams, tol: float = 1e-12) -> float:
    """Smallest ``t`` (to solver precision) with ``1 - F(t) <= tol``."""
    target = np.log(tol)
    hi = p.mu + 10.0 * np.sqrt(p.var)
    while ig_logsf(p.shift + hi, p) > target:
        hi *= 2.0
    lo = 0.5 * hi
    while lo > 1e-300 and ig_logsf(p.shift + lo, p) <= target:
        lo *= 0.5
    x = optimize.brentq(lambda t: ig_logsf(p.shift + t, p) - target, lo, hi, xtol=1e-12 * hi)
    return p.shift + x


def ig_integrate(fn, p: IgParams, lower: float | None = None, upper: float | None = None) -> float:
    """Integrate ``fn`` over ``[lower, upper]`` clipped to the IG support.

    With ``upper`` omitted the range ends at :func:`ig_cutoff`; the mode and
    mean are used as breakpoints.
    """
    a = p.shift if lower is None else max(lower, p.shift)
    b = ig_cutoff(p) if upper is None else upper
    return gk_integrate(fn, a, b, breakpoints=(p.mode, p.mean))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def draw_ig(rng: np.random.Generator, mu: float, lam: float, size) -> np.ndarray:
    """Michael-Schucany-Haas transform draws from ``IG(mu, lam)``.

    A chi-square(1) variate fixes the two roots ``x1 <= mu <= x2 = mu^2/x1``
    of the transformed equation; ``x1`` is kept with probability
    ``mu / (mu + x1)``.  The larger root is formed first to avoid
    cancellation when ``lam / mu`` is large.
    """
    y = rng.standard_normal(size) ** 2
    my = mu * y
    big = mu + (mu * my + mu * np.sqrt(4.0 * lam * my + my * my)) / (2.0 * lam)
    small = mu * mu / big
    u = rng.random(size)
    return np.where(u <= mu / (mu + small), small, big)


def ig_sample(p: IgParams, count: int, seed: int | np.random.SeedSequence) -> np.ndarray:
    """``count`` i.i.d. draws from the shifted law, deterministic per seed."""
    if count < 1:
        raise ValueError("count must be a positive integer")
    rng = np.random.default_rng(seed)
    return p.shift + draw_ig(rng, p.mu, p.lam, count)


# ---------------------------------------------------------------------------
# Bessel functions of the third kind
# ---------------------------------------------------------------------------

def exp1_scaled(x: float) -> float:
    """``exp(x) * E1(x)`` without overflow for large ``x``."""
    if x <= 0:
        raise DomainError(f"E1 needs a positive argument, got {x!r}")
    if x < 600.0:
        return float(np.exp(x) * special.exp1(x))
    # Tricomi U(1, 1, x) == exp(x) E1(x)
    return float(special.hyperu(1.0, 1.0, x))


def bessel_k(order: float, z: ArrayLike):
    """Modified Bessel function of the third kind ``K_order(z)``."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("bessel_k needs z > 0")
    k = special.kv(order, z)
    if not np.all(np.isfinite(k)):
        raise DomainError(f"K_{order}(z) overflows for z this close to 0")
    return _out(np.asarray(k))


def _kve_dorder_ratio(order: float, z: float) -> float:
    """``(dK_nu/dnu) / K_nu`` at ``nu = order``, evaluated on scaled Bessels."""
    if abs(abs(order) - 0.5) < 1e-15:
        return float(np.sign(order)) * exp1_scaled(2.0 * z)
    h = DORDER_STEP

    def central(step):
        return (special.kve(order + step, z) - special.kve(order - step, z)) / (2.0 * step)

    deriv = (4.0 * central(h / 2.0) - central(h)) / 3.0
    return deriv / special.kve(order, z)


def bessel_k_dorder(order: float, z: float) -> float:
    """Derivative of ``K_nu(z)`` with respect to the order ``nu``.

    At ``nu = +-1/2`` the closed form
    ``+-sqrt(pi / (2 z)) * exp(z) * E1(2 z)`` is used; elsewhere a
    Richardson-extrapolated central difference in the order.
    """
    if z <= 0:
        raise ValueError("bessel_k_dorder needs z > 0")
    if abs(abs(order) - 0.5) < 1e-15:
        value = np.sign(order) * np.sqrt(np.pi / (2.0 * z)) * np.exp(-z) * exp1_scaled(2.0 * z)
    else:
        h = DORDER_STEP

        def central(step):
            return (special.kv(order + step, z) - special.kv(order - step, z)) / (2.0 * step)

        value = (4.0 * central(h / 2.0) - central(h)) / 3.0
    if not np.isfinite(value):
        raise DomainError(f"dK/dnu at nu={order} overflows for z={z!r}")
    return float(value)


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------

def _gig_entropy(gamma: float, mu: float, lam: float) -> float:
    z = lam / mu
    if z <= 0:
        raise DomainError("entropy needs lam / mu > 0")
    k = special.kve(gamma, z)
    if not np.isfinite(k) or k <= 0:
        raise DomainError(f"K_{gamma}({z!r}) cannot be evaluated")
    dratio = _kve_dorder_ratio(gamma, z)
    neighbours = (special.kve(gamma + 1.0, z) + special.kve(gamma - 1.0, z)) / k
    h = np.log(2.0 * k * mu) - z - (gamma - 1.0) * dratio + 0.5 * z * neighbours
    if not np.isfinite(h):
        raise DomainError(f"entropy diverges for gamma={gamma}, mu={mu}, lam={lam}")
    return float(h)


def ig_entropy(p: IgParams) -> float:
    """Differential entropy in nats, via Bessel functions at order -1/2.

    The shift does not enter.  Bessel values are carried in the
    exponentially scaled form so large ``lam / mu`` does not underflow.
    """
    return _gig_entropy(-0.5, p.mu, p.lam)


def ig_entropy_closed_form(p: IgParams) -> float:
    """Half-order closed form ``1/2 log(2 pi e mu^3/lam) - 3/2 e^{2z} E1(2z)``."""
    z = p.lam / p.mu
    return float(0.5 * np.log(2.0 * np.pi * np.e * p.mu**3 / p.lam) - 1.5 * exp1_scaled(2.0 * z))


def ig_entropy_quad(p: IgParams) -> float:
    """``-int f log f`` by truncated Gauss-Kronrod quadrature."""
    return ig_integrate(lambda n: neg_f_log_f(float(ig_pdf(n, p))), p)


# ---------------------------------------------------------------------------
# GIG
# ---------------------------------------------------------------------------

def gig_logpdf(x: ArrayLike, g: GigParams):
    if g.lam == 0:
        raise DomainError("GIG density is not normalizable at lam == 0")
    x = np.asarray(x, dtype=float)
    z = g.lam / g.mu
    log_norm = np.log(2.0) + g.gamma * np.log(g.mu) + np.log(special.kve(g.gamma, z)) - z
    out = np.full(x.shape, -np.inf)
    ok = x > 0
    xs = x[ok]
    out[ok] = (g.gamma - 1.0) * np.log(xs) - 0.5 * (g.lam / xs + g.lam * xs / g.mu**2) - log_norm
    return _out(out)


def gig_pdf(x: ArrayLike, g: GigParams):
    """GIG density; 0 for ``x <= 0``."""
    return np.exp(gig_logpdf(x, g))


def gig_entropy(g: GigParams) -> float:
    """Differential entropy of ``GIG(gamma, mu, lam)`` in nats."""
    if g.lam == 0:
        raise DomainError("GIG entropy is undefined at lam == 0")
    return _gig_entropy(g.gamma, g.mu, g.lam)


# ---------------------------------------------------------------------------
# Additivity
# ---------------------------------------------------------------------------

def ig_additive_combine(parts: Sequence[tuple[float, IgParams]]) -> IgParams:
    """Law of ``sum(c_i N_i)`` for IG variables sharing ``kappa = lam_i/(c_i mu_i^2)``.

    Shifts combine linearly.  Raises ``ValueError`` when a weight is not
    positive or the ``kappa`` values disagree.
    """
    if not parts:
        raise ValueError("need at least one part")
    weights = np.array([float(c) for c, _ in parts])
    if np.any(weights <= 0):
        raise ValueError("all weights c_i must be positive")
    kappas = np.array([q.lam / (c * q.mu**2) for c, q in parts])
    kappa = kappas[0]
    if np.any(np.abs(kappas - kappa) > KAPPA_RTOL * kappa):
        raise ValueError(f"lam_i/(c_i mu_i^2) must agree across parts, got {kappas.tolist()}")
    total = float(sum(c * q.mu for c, q in parts))
    shift = float(sum(c * q.shift for c, q in parts))
    return IgParams(total, kappa * total**2, shift)
