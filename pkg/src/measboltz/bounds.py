"""Explicit envelopes for moments and stability, and the supporting inequalities.

Envelopes are :class:`BoundEnvelope` objects: a kind, the named constants they
were built from, and a callable of time. The remaining functions are the
elementary inequalities (binomial sandwich, beta-function sums, a stationary
phase asymptote, an ODE comparison) that the envelopes rest on, each in a form
that can be checked numerically.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .measure import DiscreteMeasure, moment_norm

# Lanczos approximation, g = 7, nine terms
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def lgamma(x: float) -> float:
    """``log |Gamma(x)|``."""
    if x < 0.5:
        return math.log(math.pi / abs(math.sin(math.pi * x))) - lgamma(1.0 - x)
    x -= 1.0
    acc = _LANCZOS[0]
    for i, c in enumerate(_LANCZOS[1:], start=1):
        acc += c / (x + i)
    t = x + _LANCZOS_G + 0.5
    return 0.5 * math.log(2.0 * math.pi) + (x + 0.5) * math.log(t) - t + math.log(acc)


def gamma(x: float) -> float:
    if x < 0.5:
        return math.pi / (math.sin(math.pi * x) * gamma(1.0 - x))
    if x > 140.0:
        return math.exp(lgamma(x))
    # direct power form: avoids amplifying the rounding of a large logarithm
    x -= 1.0
    acc = _LANCZOS[0]
    for i, c in enumerate(_LANCZOS[1:], start=1):
        acc += c / (x + i)
    t = x + _LANCZOS_G + 0.5
    half = t ** (0.5 * (x + 0.5))
    return math.sqrt(2.0 * math.pi) * half * math.exp(-t) * half * acc


def beta(x: float, y: float) -> float:
    return math.exp(lgamma(x) + lgamma(y) - lgamma(x + y))


def stirling_gamma(x: float, terms: int = 6) -> float:
    """Stirling series for ``Gamma(x)``; accurate for large ``x`` only."""
    coeffs = (1.0 / 12, -1.0 / 360, 1.0 / 1260, -1.0 / 1680, 1.0 / 1188, -691.0 / 360360)
    corr = sum(c / x ** (2 * i + 1) for i, c in enumerate(coeffs[:terms]))
    return math.sqrt(2.0 * math.pi / x) * (x / math.e) ** x * math.exp(corr)


def binom(p: float, k: int) -> float:
    """Generalised binomial coefficient ``p (p-1) ... (p-k+1) / k!``."""
    out = 1.0
    for i in range(k):
        out *= (p - i) / (i + 1)
    return out


def log_binom(p: float, k: float) -> float:
    return lgamma(p + 1.0) - lgamma(k + 1.0) - lgamma(p - k + 1.0)


def half_index(p: float) -> int:
    """``floor((p + 1) / 2)``."""
    return int(math.floor((p + 1.0) / 2.0))


@dataclass(frozen=True)
class BoundEnvelope:
    kind: str
    constants: dict = field(default_factory=dict)
    func: Callable[[float], float] = field(default=lambda t: math.nan, repr=False)

    def evaluate(self, t: float) -> float:
        return float(self.func(t))

    def __call__(self, t: float) -> float:
        return self.evaluate(t)


def moment_production_envelope(mass: float, energy_norm: float, A2: float, gamma: float, s: float) -> BoundEnvelope:
    """``K_s (1 + 1/t)^((s-2)/gamma)`` with ``K_s`` built from mass, second moment, ``A2`` and ``gamma``."""
    if not mass > 0:
        raise ValueError("mass must be positive")
    if s < 2:
        raise ValueError("moment order must be at least 2")
    expo = (s - 2.0) / gamma
    base = 2.0 ** (s + 7.0) * (energy_norm / mass) * (1.0 + 1.0 / (16.0 * energy_norm * A2 * gamma))
    K = energy_norm * base ** expo
    return BoundEnvelope(
        "moment_production",
        {"K_s": K, "s": s, "gamma": gamma, "exponent": expo, "mass": mass, "energy_norm": energy_norm, "A2": A2},
        lambda t: K * (1.0 + 1.0 / t) ** expo,
    )


def exponential_envelope(mass: float, energy_norm: float, A2: float, gamma: float, s0: float = 8.0) -> BoundEnvelope:
    """Time-dependent exponent ``alpha(t)`` for which the exponential moment stays below ``2 * mass``."""
    if s0 <= 1:
        raise ValueError("s0 must exceed 1")
    b = 16.0 * energy_norm * A2 * gamma
    alpha_inf = 2.0 ** (-s0) * mass / energy_norm
    return BoundEnvelope(
        "exponential",
        {
            "beta": b,
            "s0": s0,
            "alpha_inf": alpha_inf,
            "gamma": gamma,
            "mass": mass,
            "energy_norm": energy_norm,
            "bound": 2.0 * mass,
            "Theta": 2.0 ** (s0 - 1.0) * energy_norm / mass,
        },
        lambda t: alpha_inf * -math.expm1(-b * t),
    )


def exponential_general(envelope: BoundEnvelope, s: float, c: float, t: float) -> float:
    """Bound on ``int exp(alpha_s(t) <v>^s) dF_t`` for ``0 < s < gamma`` and any ``c > 0``."""
    g = envelope.constants["gamma"]
    if not 0 < s < g:
        raise ValueError("need 0 < s < gamma")
    if not c > 0:
        raise ValueError("c must be positive")
    a = envelope.evaluate(t)
    a_s = c * (c / a) ** (s / (g - s))
    return (math.exp(a_s) + 2.0) * envelope.constants["mass"]


def exponential_general_envelope(envelope: BoundEnvelope, s: float, c: float) -> BoundEnvelope:
    return BoundEnvelope(
        "exponential_general",
        dict(envelope.constants, s=s, c=c),
        lambda t: exponential_general(envelope, s, c, t),
    )


def _exp_or_inf(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def stability_tau_constant(A0: float, K: float, energy_norm: float, tau: float) -> float:
    """Growth rate ``4 A0 (K_{2+gamma} + ||F0||_2)(1 + 1/tau)`` of the distance after time ``tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return 4.0 * A0 * (K + energy_norm) * (1.0 + 1.0 / tau)


def stability_tau_envelope(A0: float, K: float, energy_norm: float, tau: float, d_tau: float) -> BoundEnvelope:
    c = stability_tau_constant(A0, K, energy_norm, tau)
    return BoundEnvelope(
        "stability_tau",
        {"c_tau": c, "tau": tau, "d_tau": d_tau, "A0": A0, "K": K, "energy_norm": energy_norm},
        lambda t: d_tau * _exp_or_inf(c * (t - tau)),
    )


def stability_zero_envelope(psi: Callable[[float], float], C: float, d0: float, t: float) -> float:
    """``Psi(d0) exp(C (1 + t))`` with ``Psi`` the energy localisation functional of the initial datum."""
    if not C > 0:
        raise ValueError("C must be positive")
    if d0 < 0:
        raise ValueError("d0 must be nonnegative")
    return psi(d0) * math.exp(C * (1.0 + t))


def ode_comparison_Y(A: float, B: float, eps: float, t: float) -> float:
    """Solution of ``Y' = A Y - B Y^(1+eps)`` that blows up at ``t = 0``."""
    if not t > 0:
        raise ValueError("t must be positive")
    return (A / (B * -math.expm1(-eps * A * t))) ** (1.0 / eps)


def ode_comparison_envelope(A: float, B: float, eps: float) -> BoundEnvelope:
    return BoundEnvelope(
        "ode_comparison", {"A": A, "B": B, "eps": eps, "limit": (A / B) ** (1.0 / eps)}, lambda t: ode_comparison_Y(A, B, eps, t)
    )


def verify_ode_comparison(times: Sequence[float], u: Sequence[float], A: float, B: float, eps: float) -> bool:
    """True iff every sample satisfies ``u(t) <= Y(t) (1 + 1e-9)``."""
    times = np.asarray(times, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(times <= 0):
        raise ValueError("sample times must be positive")
    if np.any(u < 0):
        raise ValueError("trajectory must be nonnegative")
    y = np.array([ode_comparison_Y(A, B, eps, t) for t in times])
    return bool(np.all(u <= y * (1.0 + 1e-9)))


def binomial_sandwich(p: float, x: float, y: float) -> tuple[float, float]:
    """Truncated expansions of ``(x + y)^p`` that bracket it from below and above."""
    if p < 1:
        raise ValueError("p must be at least 1")
    kp = half_index(p)

    def term(k):
        return binom(p, k) * (x ** k * y ** (p - k) + x ** (p - k) * y ** k)

    lower = sum(term(k) for k in range(kp))
    return lower, lower + term(kp)


def partial_binomial_sum(p: float, n: int) -> float:
    return sum(binom(p, k) for k in range(n + 1))


def beta_sum_estimates(p: float, a: float = 1.0) -> tuple[float, float]:
    """Sum of ``C(p,k) B(a k, a (p-k))`` over ``1 <= k <= floor((p+1)/2)`` and its bound shape.

    For ``a = 1`` the bound ``4 log p`` is explicit; for ``a > 1`` the shape
    ``(a p)^(1-a)`` is returned and holds up to a constant depending on ``a``.
    """
    if p < 3:
        raise ValueError("p must be at least 3")
    if a < 1:
        raise ValueError("a must be at least 1")
    kp = half_index(p)
    if a == 1.0:
        total = sum(p / (k * (p - k)) for k in range(1, kp + 1))
        return total, 4.0 * math.log(p)
    total = sum(math.exp(log_binom(p, k) + lgamma(a * k) + lgamma(a * (p - k)) - lgamma(a * p)) for k in range(1, kp + 1))
    return total, (a * p) ** (1.0 - a)


def beta_sum_remainder(p: float, a: float) -> tuple[float, float]:
    """Sum of ``C(p-2,k) B(a(k+1), a(p-k-1))`` over ``0 <= k < floor((p+1)/2)`` and the shape ``(a p)^(-a)``."""
    if p < 3:
        raise ValueError("p must be at least 3")
    if a <= 1:
        raise ValueError("a must exceed 1")
    kp = half_index(p)
    total = sum(
        math.exp(log_binom(p - 2, k) + lgamma(a * (k + 1)) + lgamma(a * (p - k - 1)) - lgamma(a * p)) for k in range(kp)
    )
    return total, (a * p) ** (-a)


def empirical_ca(a: float, p_grid: Iterable[float]) -> tuple[float, float]:
    """Largest observed ratios sum/shape for the two beta sums over ``p_grid``."""
    r1 = r2 = 0.0
    for p in p_grid:
        s, b = beta_sum_estimates(p, a)
        r1 = max(r1, s / b)
        s, b = beta_sum_remainder(p, a)
        r2 = max(r2, s / b)
    return r1, r2


def _derivative(f: Callable[[float], float], x: float, h: float) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h) if x - h >= 0 else (-3.0 * f(x) + 4.0 * f(x + h) - f(x + 2.0 * h)) / (2.0 * h)


def stationary_phase_check(
    alpha: float,
    g: Callable[[float], float],
    S: Callable[[float], float],
    R: float,
    lambdas: Sequence[float],
    dS0: float | None = None,
) -> list[tuple[float, float, float, float]]:
    """Compare ``int_0^R x^(alpha-1) g e^(lambda S)`` with ``Gamma(alpha) (-lambda S'(0))^(-alpha) g(0)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if abs(S(0.0)) > 1e-12:
        raise ValueError("S(0) must vanish")
    slope = dS0 if dS0 is not None else _derivative(S, 0.0, 1e-6 * max(R, 1.0))
    if slope >= 0:
        raise ValueError("S'(0) must be negative")
    grid = np.linspace(0.0, R, 401)[:-1]
    h = 1e-6 * max(R, 1.0)
    if any(_derivative(S, float(x), h) >= 0 for x in grid[1:]):
        raise ValueError("S' must be negative on [0, R)")
    out = []
    for lam in lambdas:
        split = min(R, 50.0 / (lam * -slope))
        head, _ = integrate.quad(lambda x: g(x) * math.exp(lam * S(x)), 0.0, split, weight="alg", wvar=(alpha - 1.0, 0.0), epsabs=0.0, epsrel=1e-12, limit=200)
        tail = 0.0
        if split < R:
            tail, _ = integrate.quad(lambda x: x ** (alpha - 1.0) * g(x) * math.exp(lam * S(x)), split, R, epsabs=0.0, epsrel=1e-12, limit=200)
        value = head + tail
        asym = gamma(alpha) * (-lam * slope) ** (-alpha) * g(0.0)
        out.append((float(lam), value, asym, value / asym))
    return out


def theta_from_s0(s0: float, mass: float, energy_norm: float) -> float:
    """``2^(s0-1) ||F0||_2 / ||F0||_0``, the scale that makes ``alpha(t) = (1 - e^(-beta t)) / (2 Theta)``."""
    return 2.0 ** (s0 - 1.0) * energy_norm / mass


def Z_q(mu: DiscreteMeasure, q: float, gamma_: float, mass0: float) -> float:
    """Moment of order ``gamma q`` normalised by ``Gamma(q)`` and the initial mass."""
    return moment_norm(mu, gamma_ * q) / (gamma(q) * mass0)


def Y_q(t: float, Theta: float, beta_: float, q: float) -> float:
    return (Theta / -math.expm1(-beta_ * t)) ** q


ENVELOPE_HEADER = ("t", "envelope_kind", "s_or_q", "value")


def envelope_rows(envelopes: Sequence[tuple[float, BoundEnvelope]], times: Sequence[float]) -> list[tuple]:
    """Rows ``(t, kind, s_or_q, value)`` for each ``(label, envelope)`` at each time."""
    rows = []
    for t in times:
        for label, env in envelopes:
            rows.append((float(t), env.kind, float(label), env.evaluate(float(t))))
    return rows


def write_envelope_csv(path, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENVELOPE_HEADER)
        for t, kind, label, value in rows:
            w.writerow([repr(t), kind, repr(label), repr(value)])
