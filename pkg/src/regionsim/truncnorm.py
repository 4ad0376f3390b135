"""Moment-matched, symmetrically truncated normal distributions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, ndtr, ndtri

log = logging.getLogger(__name__)

SQRT2PI = math.sqrt(2.0 * math.pi)
CLAMP_FRACTION = 0.98  # of the uniform-limit variance h^2/3
BRACKET = (1e-6, 50.0)  # sigma0 search range, in units of the half-width
MAX_ITER = 200


class InfeasibleMean(ValueError):
    """Target mean lies outside the open interval (L, U)."""


@dataclass(frozen=True)
class Bounds:
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"invalid bounds [{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class TruncSpec:
    """Pre-truncation ``mu0, sigma0`` on ``[a, b]``.

    ``sigma0 == 0`` denotes a deterministic spec that always yields ``mu0``.
    ``clamped`` is set when the target variance was at or beyond the
    reachable limit and had to be scaled down.
    """

    mu0: float
    sigma0: float
    a: float
    b: float
    clamped: bool = False

    @property
    def deterministic(self) -> bool:
        return self.sigma0 == 0.0

    @classmethod
    def point(cls, value: float) -> "TruncSpec":
        return cls(value, 0.0, value, value)


def _pdf(z):
    return np.exp(-0.5 * np.square(z)) / SQRT2PI


def feasible_halfwidth(m: float, bounds: Bounds) -> float:
    """Largest half-width ``h`` with ``[m - h, m + h]`` inside the bounds."""
    if not bounds.lower < m < bounds.upper:
        raise InfeasibleMean(f"mean {m} outside ({bounds.lower}, {bounds.upper})")
    return min(m - bounds.lower, bounds.upper - m)


# below this alpha the closed form cancels badly; use its Taylor series
SERIES_ALPHA = 0.02
SERIES = (1.0 / 3.0, -2.0 / 45.0, 2.0 / 945.0, 2.0 / 14175.0)


def _series(a2):
    return a2 * (SERIES[0] + a2 * (SERIES[1] + a2 * (SERIES[2] + a2 * SERIES[3])))


def _symmetric_var_ratio(alpha):
    """Var / sigma^2 of a standard normal truncated to [-alpha, alpha]."""
    alpha = np.asarray(alpha, dtype=float)
    small = alpha < SERIES_ALPHA
    safe = np.where(small, 1.0, alpha)
    direct = 1.0 - 2.0 * safe * _pdf(safe) / erf(safe / math.sqrt(2.0))
    return np.where(small, _series(alpha * alpha), direct)


def _ratio_scalar(alpha: float) -> float:
    if alpha < SERIES_ALPHA:
        return _series(alpha * alpha)
    z = math.erf(alpha / math.sqrt(2.0))
    return 1.0 - 2.0 * alpha * math.exp(-0.5 * alpha * alpha) / SQRT2PI / z


def trunc_moments(spec: TruncSpec) -> tuple[float, float]:
    """Mean and variance of the truncated normal described by ``spec``."""
    if spec.deterministic:
        return spec.mu0, 0.0
    s = spec.sigma0
    alpha, beta = (spec.a - spec.mu0) / s, (spec.b - spec.mu0) / s
    if (spec.b - spec.a) / s < 1e-10:
        raise ValueError("interval too narrow relative to sigma0")
    if math.isinf(alpha) and math.isinf(beta):
        return spec.mu0, s * s
    if math.isfinite(alpha) and math.isfinite(beta) and abs(alpha + beta) <= 1e-12 * max(abs(beta), 1.0):
        return spec.mu0, float(s * s * _symmetric_var_ratio(beta))
    # evaluate in the lower tail for accuracy
    if alpha > 0:
        mean, var = trunc_moments(TruncSpec(-spec.mu0, s, -spec.b, -spec.a))
        return -mean, var
    Z = ndtr(beta) - ndtr(alpha)
    pa = 0.0 if math.isinf(alpha) else _pdf(alpha)
    pb = 0.0 if math.isinf(beta) else _pdf(beta)
    aa = 0.0 if math.isinf(alpha) else alpha * pa
    bb = 0.0 if math.isinf(beta) else beta * pb
    shift = (pa - pb) / Z
    var = s * s * (1.0 + (aa - bb) / Z - shift * shift)
    return float(spec.mu0 + s * shift), float(var)


def match_moments(m: float, s2: float, bounds: Bounds) -> TruncSpec:
    """Solve for ``sigma0`` so the truncated variance equals ``s2``.

    The interval is symmetric about ``m``, so the truncated mean is ``m``
    for any ``sigma0`` and the variance increases monotonically with it.
    Targets at or above 98% of the uniform limit ``h^2/3`` are clamped.
    """
    h = feasible_halfwidth(m, bounds)
    if s2 < 0:
        raise ValueError(f"negative variance {s2}")
    if s2 == 0:
        return TruncSpec.point(m)
    if math.isinf(h):
        return TruncSpec(m, math.sqrt(s2), -math.inf, math.inf)
    a, b = m - h, m + h
    limit = CLAMP_FRACTION * h * h / 3.0
    clamped = s2 >= limit
    if clamped:
        log.debug("variance %.4g at/above limit %.4g for mean %.4g; clamping", s2, limit, m)
        s2 = limit
    target = s2 / (h * h)  # solve in units of h
    lo, hi = BRACKET
    # var(sigma)/h^2 = (sigma/h)^2 * ratio(h/sigma); bisect on log(sigma/h)
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(MAX_ITER):
        mid = 0.5 * (llo + lhi)
        sig = math.exp(mid)
        v = sig * sig * _ratio_scalar(1.0 / sig)
        if v < target:
            llo = mid
        else:
            lhi = mid
        if abs(v - target) <= 1e-12 * target or lhi - llo < 1e-15:
            break
    return TruncSpec(m, sig * h, a, b, clamped)


def sample(spec: TruncSpec, rng: np.random.Generator, size: int | None = None):
    """Inverse-CDF draws; always inside ``[a, b]``."""
    if spec.deterministic:
        return spec.mu0 if size is None else np.full(size, spec.mu0)
    s = spec.sigma0
    alpha, beta = (spec.a - spec.mu0) / s, (spec.b - spec.mu0) / s
    flip = alpha > 0  # both bounds in the upper tail: sample the mirror image
    if flip:
        alpha, beta = -beta, -alpha
    lo, hi = ndtr(alpha), ndtr(beta)
    u = rng.uniform(lo, hi, size=size)
    z = ndtri(u)
    if flip:
        z = -z
    x = np.clip(spec.mu0 + s * z, spec.a, spec.b)
    return float(x) if size is None else x
