"""Receivers for the AIGN channel: ML estimation, MAP detection with one or
many molecules, symbol error probability (exact, bounded and simulated),
the high-velocity error exponent, and training-based noise estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy import optimize

from aign.channel import Observation, trial_rng
from aign.ig_core import IgParams, draw_ig, ig_cdf, ig_sf

PRIOR_TOL = 1e-12
THRESHOLD_XTOL = 1e-10
CHUNK = 8192


class ThresholdError(RuntimeError):
    """The decision threshold could not be bracketed or is not unique."""


class DegenerateSampleError(ValueError):
    """Training arrivals do not determine the shape parameter."""


@dataclass(frozen=True)
class Constellation:
    """Release times ``t_1 < ... < t_T`` with prior probabilities."""

    times: tuple[float, ...]
    priors: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        priors = tuple(float(q) for q in self.priors)
        if len(times) < 2:
            raise ValueError("a constellation needs at least two symbols")
        if len(priors) != len(times):
            raise ValueError("times and priors must have the same length")
        if times[0] < 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("times must be non-negative and strictly increasing")
        if any(q < 0 for q in priors) or abs(sum(priors) - 1.0) > PRIOR_TOL:
            raise ValueError("priors must be non-negative and sum to 1")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "priors", priors)

    @classmethod
    def equiprobable(cls, times: Sequence[float]) -> Constellation:
        return cls(tuple(times), tuple([1.0 / len(times)] * len(times)))

    @classmethod
    def uniform_grid(cls, T: int, start: float = 1.0, stop: float = 2.0) -> Constellation:
        """Equiprobable ``t_i = start + (i - 1)(stop - start)/(T - 1)``."""
        return cls.equiprobable(np.linspace(start, stop, T))

    @property
    def size(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class DetectionReport:
    """Decision of a detector.

    ``decided`` is 1-based.  ``llr`` and ``threshold`` are filled in for
    binary constellations observed through a single statistic.
    """

    decided: int
    llr: float | None = None
    threshold: float | None = None


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

def ml_estimate(y: ArrayLike, p: IgParams):
    """Closed-form ML estimate of the release time from one arrival ``y``."""
    y = np.asarray(y, dtype=float)
    r = p.lam / p.mu
    est = y - p.shift + (p.mu**2 / p.lam) * (1.5 - np.sqrt(2.25 + r * r))
    return est[()] if est.ndim == 0 else est


def log_likelihood(t: ArrayLike, y: ArrayLike, p: IgParams):
    """``Lambda(t)``: log-likelihood of release time ``t`` given arrival ``y``.

    Drops the constant ``1/2 log(lam / 2 pi)``; ``-inf`` when ``y <= t``.
    The shift, if any, is treated as extra known delay.
    """
    gap = np.asarray(y, dtype=float) - np.asarray(t, dtype=float) - p.shift
    out = np.full(gap.shape, -np.inf)
    ok = gap > 0
    g = gap[ok]
    out[ok] = -1.5 * np.log(g) - p.lam / (2.0 * p.mu**2) * (g - p.mu) ** 2 / g
    return out[()] if out.ndim == 0 else out


def llr(y: ArrayLike, t1: float, t2: float, p: IgParams):
    """``L(y) = Lambda(t2) - Lambda(t1)``; ``-inf`` for ``y <= t2``.

    For ``y > t2``::

        L = 3/2 log((y - t1)/(y - t2))
            - lam/(2 mu^2) (mu^2 (1/(y - t2) - 1/(y - t1)) + t1 - t2)

    ``L`` rises from ``-inf`` just above ``t2`` (the noise needed by ``t2``
    would be implausibly short), peaks, and then settles onto
    ``lam (t2 - t1) / (2 mu^2)`` from above.
    """
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    y = np.asarray(y, dtype=float) - p.shift
    out = np.full(y.shape, -np.inf)
    ok = y > t2
    ys = y[ok]
    a, b = ys - t1, ys - t2
    out[ok] = 1.5 * np.log(a / b) - p.lam / (2.0 * p.mu**2) * (
        p.mu**2 * (1.0 / b - 1.0 / a) + t1 - t2
    )
    return out[()] if out.ndim == 0 else out


def decision_threshold(t1: float, t2: float, priors: Sequence[float], p: IgParams) -> float:
    """Arrival time ``y_th > t2`` where ``L(y_th) = log(p1 / p2)``.

    ``t1`` is decided below the threshold and ``t2`` above it.  The root is
    unique when ``log(p1 / p2)`` lies below the large-``y`` limit
    ``lam (t2 - t1) / (2 mu^2)``.  Above that limit ``L`` either never
    reaches the target or crosses it twice around its peak, so ``t2`` wins
    only on a bounded interval; both cases raise ``ThresholdError``.
    """
    p1, p2 = priors
    if p1 <= 0 or p2 <= 0:
        raise ThresholdError("both priors must be positive for a finite threshold")
    target = np.log(p1 / p2)
    base = p.unshifted()

    def f(y):
        return float(llr(y, t1, t2, base)) - target

    if base.lam * (t2 - t1) / (2.0 * base.mu**2) <= target:
        probe = t2 + base.mu * np.geomspace(1e-9, 1e9, 4096)
        if np.any(np.asarray(llr(probe, t1, t2, base)) > target):
            raise ThresholdError("L(y) = log(p1/p2) has two roots; t2 is decided only on a bounded interval")
        raise ThresholdError("L(y) never reaches log(p1/p2); t1 is always preferred")

    lo = t2 + 1e-12 * max(1.0, t2)
    hi = t2 + base.mu
    for _ in range(2000):
        if f(hi) > 0:
            break
        hi = t2 + 2.0 * (hi - t2)
    else:
        raise ThresholdError("could not bracket the threshold")
    if f(lo) >= 0:
        raise ThresholdError("L(y) is not below log(p1/p2) next to t2")
    grid = t2 + (hi - t2) * np.geomspace(1e-9, 1.0, 256)
    signs = np.sign(np.asarray(llr(grid, t1, t2, base)) - target)
    if np.count_nonzero(np.diff(signs[signs != 0])) > 1:
        raise ThresholdError("L(y) - log(p1/p2) changes sign more than once")
    return float(optimize.brentq(f, lo, hi, xtol=THRESHOLD_XTOL, rtol=4 * np.finfo(float).eps))


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------

def _map_scores(arrivals: np.ndarray, c: Constellation, p: IgParams) -> np.ndarray:
    """Per-hypothesis MAP scores for a batch of observations.

    ``arrivals`` has shape ``(batch, M)``; the result ``(batch, T)``.
    """
    times = np.asarray(c.times)
    ll = log_likelihood(times[None, None, :], arrivals[:, :, None], p).sum(axis=1)
    with np.errstate(divide="ignore"):
        return ll + np.log(np.asarray(c.priors))[None, :]


def _decide(scores: np.ndarray) -> np.ndarray:
    # argmax keeps the first maximum, so ties go to the smaller index
    return np.argmax(scores, axis=1)


def detect(obs: Observation, c: Constellation, p: IgParams) -> DetectionReport:
    """MAP decision over all ``M`` arrivals (ML with equal priors).

    A hypothesis later than any arrival scores ``-inf``.  Raises
    ``ValueError`` when every hypothesis is impossible.
    """
    arrivals = np.asarray(obs.arrivals)[None, :]
    scores = _map_scores(arrivals, c, p)
    if not np.isfinite(scores).any():
        raise ValueError("no hypothesis precedes the earliest arrival")
    idx = int(_decide(scores)[0])
    if c.size == 2 and len(obs) == 1:
        y = float(arrivals[0, 0])
        try:
            th = decision_threshold(c.times[0], c.times[1], c.priors, p) + p.shift
        except ThresholdError:
            th = None
        return DetectionReport(idx + 1, float(llr(y, c.times[0], c.times[1], p)), th)
    return DetectionReport(idx + 1)


def averaged_params(p: IgParams, M: int) -> IgParams:
    """Noise law seen by the sample mean of ``M`` arrivals: ``IG(mu, M lam)``."""
    return IgParams(p.mu, M * p.lam, p.shift)


def linear_filter_detect(obs: Observation, c: Constellation, p: IgParams) -> DetectionReport:
    """Average the arrivals, then detect as if one molecule saw ``IG(mu, M lam)``."""
    z = float(np.mean(obs.arrivals))
    return detect(Observation([z]), c, averaged_params(p, len(obs)))


# ---------------------------------------------------------------------------
# Error probability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SepResult:
    analytic: float | None
    simulated: float
    stderr: float
    trials: int


@dataclass(frozen=True)
class DetectionRun:
    """Error counts of the ML and linear-filter detectors on shared draws."""

    trials: int
    ml_errors: int
    linear_errors: int

    def rate(self, which: str = "ml") -> tuple[float, float]:
        k = self.ml_errors if which == "ml" else self.linear_errors
        q = k / self.trials
        return q, float(np.sqrt(q * (1.0 - q) / self.trials))


def simulate_detection(
    c: Constellation, p: IgParams, M: int, trials: int, seed: int, *key: int
) -> DetectionRun:
    """Monte Carlo of transmit + detect with ``M`` molecules per symbol.

    Chunk ``j`` of ``CHUNK`` trials draws from stream ``(seed, *key, j)``,
    so the counts do not depend on how chunks are scheduled.  Both
    detectors see the same arrivals.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    times = np.asarray(c.times)
    cum = np.cumsum(c.priors)
    cum[-1] = 1.0
    avg = averaged_params(p, M)
    ml_err = lin_err = 0
    for j, start in enumerate(range(0, trials, CHUNK)):
        n = min(CHUNK, trials - start)
        rng = trial_rng(seed, *key, j)
        sent = np.searchsorted(cum, rng.random(n), side="right")
        arrivals = times[sent][:, None] + p.shift + draw_ig(rng, p.mu, p.lam, (n, M))
        ml_err += int(np.count_nonzero(_decide(_map_scores(arrivals, c, p)) != sent))
        if M == 1:
            lin = _decide(_map_scores(arrivals, c, avg))
        else:
            lin = _decide(_map_scores(arrivals.mean(axis=1, keepdims=True), c, avg))
        lin_err += int(np.count_nonzero(lin != sent))
    return DetectionRun(trials, ml_err, lin_err)


def sep_analytic(c: Constellation, p: IgParams) -> float:
    """Exact binary SEP ``p1 (1 - F(y_th - t1)) + p2 F(y_th - t2)``."""
    if c.size != 2:
        raise ValueError("exact SEP is only available for T = 2")
    (t1, t2), (p1, p2) = c.times, c.priors
    base = p.unshifted()
    th = decision_threshold(t1, t2, (p1, p2), base)
    return float(p1 * ig_sf(th - t1, base) + p2 * ig_cdf(th - t2, base))


def sep_exact(c: Constellation, p: IgParams, trials: int, seed: int) -> SepResult:
    """Analytic binary SEP next to a Monte Carlo estimate of the same detector."""
    analytic = sep_analytic(c, p)
    run = simulate_detection(c, p, 1, trials, seed)
    q, se = run.rate("ml")
    return SepResult(analytic, q, se, trials)


def sep_upper_bound(c: Constellation, p: IgParams) -> float:
    """``sum_i p_i (1 - F(t_{i+1} - t_i))`` for non-increasing priors."""
    if any(b > a + PRIOR_TOL for a, b in zip(c.priors, c.priors[1:])):
        raise ValueError("the SEP bound needs non-increasing priors p1 >= p2 >= ...")
    gaps = np.diff(c.times)
    base = p.unshifted()
    return float(np.sum(np.asarray(c.priors[:-1]) * ig_sf(gaps, base)))


def asymptotic_logpe_bound(v: float, sigma2: float, d: float, c_gap: float, M: int = 1) -> float:
    """High-velocity log SEP bound ``-x - 1/2 log(2 pi) - 1/2 log(x)``, ``x = M c v^2/sigma2``.

    These are the constants ``C1 = 1, C2 = -1/2 log(2 pi), C3 = -1/2`` of the
    erf tail expansion.  ``d`` drops out of the final expression but is
    validated with the other physical inputs.
    """
    for name, value in (("v", v), ("sigma2", sigma2), ("d", d), ("c_gap", c_gap)):
        if not value > 0:
            raise ValueError(f"{name} must be positive")
    if M < 1:
        raise ValueError("M must be at least 1")
    x = M * c_gap * v**2 / sigma2
    return float(-x - 0.5 * np.log(2.0 * np.pi) - 0.5 * np.log(x))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def estimate_noise_params(t0: float, arrivals: Sequence[float]) -> IgParams:
    """ML estimates of ``(mu, lam)`` from arrivals of molecules released at ``t0``.

    ``mu = mean(Y) - t0`` and
    ``1/lam = mean(1/(Y_j - t0) - 1/(mean(Y) - t0))``.
    """
    y = np.asarray(arrivals, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("need at least two training arrivals")
    if np.any(y <= t0):
        raise ValueError("every training arrival must come after t0")
    if np.all(y == y[0]):
        raise DegenerateSampleError("all training arrivals are equal; lam is undefined")
    gaps = y - t0
    mu_hat = gaps.mean()
    inv = np.mean(1.0 / gaps - 1.0 / mu_hat)
    if not inv > 0:
        raise DegenerateSampleError("training arrivals give a non-positive 1/lam estimate")
    return IgParams(float(mu_hat), float(1.0 / inv))
