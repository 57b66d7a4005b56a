"""Physical channel: parameter mapping, the additive timing channel, and a
Wiener first-passage simulator used as ground truth for the IG noise law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from aign.ig_core import IgParams, draw_ig

MAX_STEPS = 10**9
# dt must resolve the mean passage time.
DT_FRACTION = 0.01


class FirstPassageTruncated(RuntimeError):
    """No absorption happened within the step budget."""


@dataclass(frozen=True)
class ChannelParams:
    """Physical quantities of the fluid medium.

    ``d`` is the transmitter-receiver distance, ``v`` the drift velocity and
    ``sigma2`` the Wiener variance coefficient (``D / 2`` for free diffusion
    coefficient ``D``).  All must be positive.
    """

    d: float
    v: float
    sigma2: float

    def __post_init__(self):
        for name in ("d", "v", "sigma2"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")


def to_ig(params: ChannelParams) -> IgParams:
    """``mu = d / v`` and ``lam = d^2 / sigma2``."""
    return IgParams(params.d / params.v, params.d**2 / params.sigma2)


def as_ig(params: ChannelParams | IgParams) -> IgParams:
    return to_ig(params) if isinstance(params, ChannelParams) else params


@dataclass(frozen=True, eq=False)
class Observation:
    """Arrival times recorded in one channel use."""

    arrivals: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.arrivals, dtype=float))
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("an observation needs at least one arrival time")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("arrival times must be finite and positive")
        arr.setflags(write=False)
        object.__setattr__(self, "arrivals", arr)

    def __len__(self):
        return self.arrivals.size


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *key)``.

    Streams are independent of each other and of evaluation order, so
    parallel and serial runs draw the same numbers.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def transmit(x: float, M: int, params: ChannelParams | IgParams, seed: int) -> Observation:
    """Release ``M`` molecules at time ``x``; return their arrival times."""
    if x < 0:
        raise ValueError("release time must be non-negative")
    if M < 1:
        raise ValueError("M must be at least 1")
    p = as_ig(params)
    rng = np.random.default_rng(seed)
    return Observation(x + p.shift + draw_ig(rng, p.mu, p.lam, M))


# ---------------------------------------------------------------------------
# First-passage simulation
# ---------------------------------------------------------------------------

def _check_dt(params: ChannelParams, dt: float, strict: bool):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if strict and dt > DT_FRACTION * params.d / params.v:
        raise ValueError(
            f"dt={dt} is too coarse for mu={params.d / params.v}; need dt <= mu/100"
        )


def _first_passage(
    params: ChannelParams,
    dt: float,
    rng: np.random.Generator,
    bridge: bool,
    max_steps: int,
) -> float:
    d, drift, scale = params.d, params.v * dt, np.sqrt(params.sigma2 * dt)
    two_over_var = 2.0 / (params.sigma2 * dt)
    mu_steps = params.d / params.v / dt
    block = int(min(max(1.5 * mu_steps + 64, 64), 1 << 15))
    w, done = 0.0, 0
    while done < max_steps:
        n = min(block, max_steps - done)
        path = w + np.cumsum(drift + scale * rng.standard_normal(n))
        crossed = path >= d
        if bridge:
            prev = np.concatenate(([w], path[:-1]))
            gap = np.maximum((d - prev) * (d - path), 0.0)
            crossed |= rng.random(n) < np.exp(-two_over_var * gap)
        hits = np.flatnonzero(crossed)
        if hits.size:
            k = hits[0]
            # midpoint of the crossing step when the bridge is on, step end otherwise
            return (done + k + (0.5 if bridge else 1.0)) * dt
        w = path[-1]
        done += n
        block = min(block * 2, 1 << 18)
    raise FirstPassageTruncated(f"no absorption within {max_steps} steps")


def wiener_first_passage(
    params: ChannelParams,
    dt: float,
    seed: int,
    *,
    trial: int = 0,
    bridge: bool = True,
    strict_dt: bool = True,
    max_steps: int = MAX_STEPS,
) -> float:
    """Simulate one molecule until it is absorbed at ``d``; return the time.

    Increments are Gaussian with mean ``v dt`` and variance ``sigma2 dt``.
    With ``bridge`` on, a step from ``w0`` to ``w1 < d`` also counts as a
    crossing with probability ``exp(-2 (d - w0)(d - w1) / (sigma2 dt))``,
    the chance a Brownian bridge between the two points touches ``d``.
    Without it the discrete path misses mid-step excursions and the
    arrival times come out late.

    ``trial`` selects the stream ``(seed, trial)``; the batch function
    uses the same streams, so results line up element by element.
    """
    _check_dt(params, dt, strict_dt)
    return _first_passage(params, dt, trial_rng(seed, trial), bridge, max_steps)


def wiener_first_passage_times(
    params: ChannelParams,
    dt: float,
    count: int,
    seed: int,
    *,
    bridge: bool = True,
    strict_dt: bool = True,
    max_steps: int = MAX_STEPS,
) -> np.ndarray:
    """``count`` independent first-passage times, trial ``i`` on stream ``(seed, i)``."""
    _check_dt(params, dt, strict_dt)
    return np.array(
        [_first_passage(params, dt, trial_rng(seed, i), bridge, max_steps) for i in range(count)]
    )


def wiener_positions(params: ChannelParams, x: float, dt: float, count: int, seed: int) -> np.ndarray:
    """Free (unabsorbed) Wiener positions ``W(x)`` built from ``dt`` increments."""
    steps = int(round(x / dt))
    if steps < 1:
        raise ValueError("x must span at least one step")
    rng = np.random.default_rng(seed)
    incr = params.v * dt + np.sqrt(params.sigma2 * dt) * rng.standard_normal((count, steps))
    return incr.sum(axis=1)
