"""Output entropies, mutual information and capacity bounds of the AIGN
channel under a mean constraint ``E[X] <= m``.  Everything is in nats."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy import special

from aign._quad import gk_integrate, neg_f_log_f
from aign.ig_core import IgParams, draw_ig, ig_cdf, ig_cutoff, ig_entropy, ig_logpdf, ig_sf

EXPONENTIAL_OUTPUT = "exponential-output"
IG_INPUT = "ig-input"
UNIFORM_INPUT = "uniform-input"
EXPONENTIAL_INPUT = "exponential-input"
KINDS = (EXPONENTIAL_OUTPUT, IG_INPUT, UNIFORM_INPUT, EXPONENTIAL_INPUT)

# Mass left beyond the integration range of an output density.
TAIL_TOL = 1e-12
REGIME_MARGIN = 1e-12


class RegimeError(ValueError):
    """The exponential-input density needs ``v^2 > 2 sigma2 / m``."""


@dataclass(frozen=True)
class InputLaw:
    """One of the four input/output laws used to probe the capacity.

    ``exponential-output`` and ``ig-input`` reach the upper and lower
    bounds; ``uniform-input`` is uniform on ``[0, 2m]`` and
    ``exponential-input`` is exponential with mean ``m``.
    """

    kind: str
    m: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown input law {self.kind!r}; expected one of {KINDS}")
        if not (np.isfinite(self.m) and self.m > 0):
            raise ValueError(f"mean constraint m must be positive, got {self.m!r}")


def capacity_upper_bound(m: float, p: IgParams) -> float:
    """``log((m + mu) e) - h(N)``: exponential output of mean ``m + mu``."""
    if m <= 0:
        raise ValueError("m must be positive")
    return float(np.log((m + p.mu) * np.e) - ig_entropy(p))


def ig_input_output_law(m: float, p: IgParams) -> IgParams:
    """Output law when ``X ~ IG(m, lam m^2 / mu^2)``: ``IG(m + mu, lam (m + mu)^2 / mu^2)``."""
    total = m + p.mu
    return IgParams(total, p.lam / p.mu**2 * total**2, p.shift)


def capacity_lower_bound(m: float, p: IgParams) -> float:
    """``h(IG(m + mu, lam (m + mu)^2 / mu^2)) - h(IG(mu, lam))``."""
    if m <= 0:
        raise ValueError("m must be positive")
    return float(ig_entropy(ig_input_output_law(m, p)) - ig_entropy(p))


def exponential_input_valid(m: float, p: IgParams) -> bool:
    """``v^2 > 2 sigma2 / m`` written as ``lam / mu^2 > 2 / m``."""
    return p.lam / p.mu**2 > (2.0 / m) * (1.0 + REGIME_MARGIN)


def _exp_input_logpdf(y: np.ndarray, m: float, p: IgParams) -> np.ndarray:
    # With mu = d/v and lam = d^2/sigma2: k/sigma = sqrt(lam/mu^2 - 2/m),
    # k d/sigma2 = sqrt(lam) k/sigma and d v/sigma2 = lam/mu.
    k_over_sigma = np.sqrt(p.lam / p.mu**2 - 2.0 / m)
    kd = np.sqrt(p.lam) * k_over_sigma
    root = np.sqrt(y)
    alpha = (k_over_sigma * y - np.sqrt(p.lam)) / root
    beta = -(k_over_sigma * y + np.sqrt(p.lam)) / root
    mix = np.logaddexp(-kd + special.log_ndtr(alpha), kd + special.log_ndtr(beta))
    return -np.log(m) - y / m + p.lam / p.mu + mix


def output_pdf(y: ArrayLike, law: InputLaw, p: IgParams):
    """Density of ``Y = X + N`` for the given law.

    Raises :class:`RegimeError` for ``exponential-input`` outside its
    validity region.
    """
    y = np.asarray(y, dtype=float)
    x = y - p.shift
    out = np.zeros(x.shape)
    ok = x > 0
    xs = x[ok]
    m = law.m
    base = p.unshifted()
    if law.kind == EXPONENTIAL_OUTPUT:
        scale = m + p.mu
        out[ok] = np.exp(-xs / scale) / scale
    elif law.kind == IG_INPUT:
        out[ok] = np.exp(ig_logpdf(xs, ig_input_output_law(m, base)))
    elif law.kind == UNIFORM_INPUT:
        # F(y) - F(y - 2m) taken on the survival side to keep precision in the tail
        late = xs > 2.0 * m
        vals = ig_cdf(xs, base) / (2.0 * m)
        vals = np.where(late, (ig_sf(np.where(late, xs - 2.0 * m, 1.0), base) - ig_sf(xs, base)) / (2.0 * m), vals)
        out[ok] = np.maximum(vals, 0.0)
    else:
        if not exponential_input_valid(m, p):
            raise RegimeError(
                f"exponential input needs v^2 > 2 sigma2/m (lam/mu^2={p.lam / p.mu**2:.6g}, 2/m={2.0 / m:.6g})"
            )
        out[ok] = np.exp(_exp_input_logpdf(xs, m, p))
    return out[()] if out.ndim == 0 else out


def _support(law: InputLaw, p: IgParams) -> tuple[float, list[float]]:
    """Upper integration limit (relative to the shift) and breakpoints."""
    m = law.m
    base = p.unshifted()
    if law.kind == EXPONENTIAL_OUTPUT:
        return (m + p.mu) * np.log(1.0 / TAIL_TOL), [m + p.mu]
    if law.kind == IG_INPUT:
        q = ig_input_output_law(m, base)
        return ig_cutoff(q, TAIL_TOL), [q.mode, q.mean]
    if law.kind == UNIFORM_INPUT:
        n_hi = ig_cutoff(base, TAIL_TOL)
        pts = [base.mode, base.mu, 2.0 * m, 2.0 * m + base.mode, 2.0 * m + base.mu]
        return 2.0 * m + n_hi, pts
    upper = max(2.0 * m * np.log(2.0 / TAIL_TOL), 2.0 * ig_cutoff(base, TAIL_TOL / 2.0))
    return upper, [base.mode, base.mu, m + base.mu]


def output_entropy_quad(law: InputLaw, p: IgParams) -> float:
    """``h(Y) = -int f_Y log f_Y`` by truncated Gauss-Kronrod quadrature."""
    upper, pts = _support(law, p)
    value = gk_integrate(
        lambda y: neg_f_log_f(float(output_pdf(y, law, p.unshifted()))), 0.0, upper, breakpoints=pts
    )
    return value


def output_entropy_closed(law: InputLaw, p: IgParams) -> float | None:
    """Closed-form ``h(Y)`` where one exists, otherwise ``None``."""
    if law.kind == EXPONENTIAL_OUTPUT:
        return float(np.log((law.m + p.mu) * np.e))
    if law.kind == IG_INPUT:
        return ig_entropy(ig_input_output_law(law.m, p))
    return None


def mutual_information(law: InputLaw, p: IgParams, method: str = "auto") -> float:
    """``I(X; Y) = h(Y) - h(N)`` in nats.

    ``method="auto"`` uses the closed-form output entropy for the two bound
    laws and quadrature for the others; ``method="quad"`` always integrates.
    """
    if method not in ("auto", "quad"):
        raise ValueError(f"unknown method {method!r}")
    if law.kind == EXPONENTIAL_INPUT and not exponential_input_valid(law.m, p):
        raise RegimeError("exponential input needs v^2 > 2 sigma2/m")
    h_y = output_entropy_closed(law, p) if method == "auto" else None
    if h_y is None:
        h_y = output_entropy_quad(law, p)
    return float(h_y - ig_entropy(p))


def output_sample(law: InputLaw, p: IgParams, count: int, seed: int) -> np.ndarray:
    """Draw ``Y = X + N``; for ``exponential-output`` ``Y`` is drawn directly."""
    rng = np.random.default_rng(seed)
    m = law.m
    if law.kind == EXPONENTIAL_OUTPUT:
        return p.shift + rng.exponential(m + p.mu, count)
    if law.kind == IG_INPUT:
        x = draw_ig(rng, m, p.lam / p.mu**2 * m**2, count)
    elif law.kind == UNIFORM_INPUT:
        x = rng.uniform(0.0, 2.0 * m, count)
    else:
        if not exponential_input_valid(m, p):
            raise RegimeError("exponential input needs v^2 > 2 sigma2/m")
        x = rng.exponential(m, count)
    return x + p.shift + draw_ig(rng, p.mu, p.lam, count)
