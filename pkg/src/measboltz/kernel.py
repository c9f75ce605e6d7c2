"""Collision kernels ``B(z, sigma) = |z|^gamma b(cos theta)`` and their angular constants."""
from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq

from .quadrature import QuadratureError, ThetaIntegral, integrate_theta, sphere_area

LABELS = ("H0", "H1", "H2", "H3", "H4")
H3_EXPONENT_PROBES = (2.0, 1.5, 1.1, 1.01)


class KernelAssumptionError(ValueError):
    """The kernel does not satisfy an integrability assumption an operation needs."""


@dataclass(frozen=True)
class ConstantAngular:
    value: float

    kind = "constant"

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("angular profile must be nonnegative")

    def __call__(self, theta):
        return np.full(np.shape(theta), float(self.value))

    def exponents(self):
        return (0.0, 0.0)

    def is_zero(self) -> bool:
        return self.value == 0.0

    def to_document(self) -> dict:
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class InversePowerAngular:
    """Grazing profile with ``b(cos theta) sin theta ~ c_prime theta^(-1-2/(s-1))``, mirrored at pi."""

    s: float
    c_prime: float = 1.0

    kind = "inverse_power"

    def __post_init__(self):
        if self.s <= 5:
            raise ValueError("inverse-power exponent s must exceed 5 for hard potentials")
        if self.c_prime <= 0:
            raise ValueError("c_prime must be positive")

    @property
    def kappa(self) -> float:
        return 1.0 + 2.0 / (self.s - 1.0)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = self.kappa
        return self.c_prime * (theta ** (-k) + (math.pi - theta) ** (-k)) / np.sin(theta)

    def exponents(self):
        return (-(self.kappa + 1.0), -(self.kappa + 1.0))

    def is_zero(self) -> bool:
        return False

    def to_document(self) -> dict:
        return {"kind": self.kind, "s": self.s, "c_prime": self.c_prime}


@dataclass(frozen=True)
class TableAngular:
    """Piecewise-linear ``b(t)`` on increasing nodes ``t`` in (-1, 1), constant beyond the ends."""

    t: tuple
    values: tuple
    singular_exponent: Optional[float] = None

    kind = "table"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        b = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != b.shape or t.size < 2:
            raise ValueError("table needs matching 1-d node and value lists")
        if np.any(np.diff(t) <= 0) or t[0] <= -1 or t[-1] >= 1:
            raise ValueError("table nodes must increase strictly inside (-1, 1)")
        if np.any(b < 0):
            raise ValueError("angular profile must be nonnegative")
        object.__setattr__(self, "t", tuple(float(x) for x in t))
        object.__setattr__(self, "values", tuple(float(x) for x in b))

    def __call__(self, theta):
        return np.interp(np.cos(np.asarray(theta, dtype=float)), self.t, self.values)

    def exponents(self):
        if self.singular_exponent is None:
            return (None, None)
        return (-float(self.singular_exponent), 0.0)

    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)

    def kinks(self) -> tuple[float, ...]:
        return tuple(float(x) for x in np.arccos(self.t))

    def to_document(self) -> dict:
        return {"kind": self.kind, "t": list(self.t), "b": list(self.values), "singular_exponent": self.singular_exponent}


Angular = Union[ConstantAngular, InversePowerAngular, TableAngular]


@dataclass(frozen=True)
class KernelSpec:
    dimension: int
    gamma: float
    angular: Angular
    truncation: Optional[float] = None

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 2:
            raise ValueError("dimension must be an integer >= 2")
        if not 0.0 < self.gamma <= 2.0:
            raise ValueError("gamma must lie in (0, 2]")
        if self.truncation is not None and not self.truncation > 0:
            raise ValueError("truncation level must be positive")

    def b(self, theta):
        """Effective angular factor, capped at the truncation level when one is set."""
        raw = self.angular(theta)
        if self.truncation is None:
            return raw
        return np.minimum(raw, self.truncation)

    def kinetic(self, r):
        """Effective kinetic factor ``|z|^gamma``, capped at the truncation level when one is set."""
        out = np.asarray(r, dtype=float) ** self.gamma
        if self.truncation is None:
            return out
        return np.minimum(out, self.truncation)

    def b_exponents(self):
        if self.truncation is not None:
            return (0.0, 0.0)
        return self.angular.exponents()

    def breakpoints(self) -> tuple[float, ...]:
        """Kinks of the profile and angles where the truncation cap switches on or off."""
        kinks = tuple(self.angular.kinks()) if hasattr(self.angular, "kinks") else ()
        if self.truncation is None:
            return kinks
        g = np.geomspace(1e-12, 0.5 * math.pi, 400)
        grid = np.unique(np.concatenate([g, math.pi - g]))
        excess = self.angular(grid) - self.truncation
        pts = []
        for i in np.nonzero(np.sign(excess[:-1]) * np.sign(excess[1:]) < 0)[0]:
            pts.append(brentq(lambda th: float(self.angular(th)) - self.truncation, grid[i], grid[i + 1], xtol=1e-15))
        return tuple(sorted(set(kinks) | set(pts)))

    def to_document(self) -> dict:
        return {"N": self.dimension, "gamma": self.gamma, "angular": self.angular.to_document(), "truncation": self.truncation}


def angular_from_document(doc: dict) -> Angular:
    kind = doc.get("kind")
    if kind == "constant":
        return ConstantAngular(float(doc["value"]))
    if kind == "inverse_power":
        return InversePowerAngular(float(doc["s"]), float(doc.get("c_prime", 1.0)))
    if kind == "table":
        return TableAngular(tuple(doc["t"]), tuple(doc["b"]), doc.get("singular_exponent"))
    raise ValueError(f"unknown angular kind {kind!r}")


def spec_from_document(doc: dict) -> KernelSpec:
    trunc = doc.get("truncation")
    return KernelSpec(int(doc["N"]), float(doc["gamma"]), angular_from_document(doc["angular"]), None if trunc is None else float(trunc))


def hard_spheres(dimension: int = 3) -> KernelSpec:
    """``gamma = 1`` with the isotropic profile normalised so that ``A0 = 1``."""
    total = sphere_area(dimension - 2) * _sin_power_integral(dimension - 2)
    return KernelSpec(dimension, 1.0, ConstantAngular(1.0 / total))


def _sin_power_integral(m: int) -> float:
    return math.sqrt(math.pi) * math.gamma((m + 1) / 2.0) / math.gamma(m / 2.0 + 1.0)


def inverse_power_law(s: float, N: int = 3, c_prime: float = 1.0) -> KernelSpec:
    if N != 3:
        raise ValueError("inverse-power preset is defined for N = 3")
    if s <= 5:
        raise ValueError("s must exceed 5 for hard potentials")
    return KernelSpec(3, (s - 5.0) / (s - 1.0), InversePowerAngular(float(s), float(c_prime)))


def truncate(spec: KernelSpec, n: float) -> KernelSpec:
    if not n > 0:
        raise ValueError("truncation level must be positive")
    return dataclasses.replace(spec, truncation=float(n))


def _weighted_integral(
    spec: KernelSpec, sin_power: float, tol: float, b_power: float = 1.0, log_weight: bool = False, b_scale: float = 1.0
) -> ThetaIntegral:
    """Integral of ``(b / b_scale)^b_power sin^sin_power`` (times ``1 + |log sin|`` if asked) over (0, pi)."""
    e0, e1 = spec.b_exponents()

    def f(theta):
        s = np.sin(theta)
        out = (spec.b(theta) / b_scale) ** b_power * s ** sin_power
        if log_weight:
            out = out * (1.0 + np.abs(np.log(s)))
        return out

    exps = tuple(None if e is None else b_power * e + sin_power for e in (e0, e1))
    return integrate_theta(f, exps, tol=tol, breakpoints=spec.breakpoints())


@dataclass(frozen=True)
class KernelConstants:
    A0: float
    A2: float
    Ap_star: Optional[tuple[float, float]]
    quadrature_error_estimate: float


@functools.lru_cache(maxsize=256)
def constants(spec: KernelSpec, p1: Optional[float] = None, tol: float = 1e-10) -> KernelConstants:
    if p1 is not None and p1 <= 1:
        raise ValueError("p1 must exceed 1")
    area = sphere_area(spec.dimension - 2)
    n = spec.dimension
    if spec.angular.is_zero():
        return KernelConstants(0.0, 0.0, None if p1 is None else (p1, 0.0), 0.0)
    i0 = _weighted_integral(spec, n - 2, tol)
    i2 = _weighted_integral(spec, n, tol)
    a0 = math.inf if i0.diverged else area * i0.value
    a2 = math.inf if i2.diverged else area * i2.value
    err = area * (i2.error + (0.0 if i0.diverged else i0.error))
    star = None
    if p1 is not None and abs(spec.gamma - 2.0) < 1e-12:
        # rescale b so that b^p1 stays O(1) and the absolute tolerance stays meaningful
        probe = spec.b(np.linspace(0.05, math.pi - 0.05, 64))
        scale = float(np.max(probe)) if np.all(np.isfinite(probe)) and np.max(probe) > 0 else 1.0
        ip = _weighted_integral(spec, n - 2, tol, b_power=p1, b_scale=scale)
        star = (p1, math.inf if ip.diverged else area * scale * ip.value ** (1.0 / p1))
    return KernelConstants(a0, a2, star, err)


def b_integrability(spec: KernelSpec, tol: float = 1e-10) -> dict[str, bool]:
    """Finiteness of the angular integrals behind each assumption, ignoring the gamma ranges."""
    n = spec.dimension
    if spec.angular.is_zero():
        return {k: True for k in LABELS}

    def finite(sin_power, **kw):
        return not _weighted_integral(spec, sin_power, tol, **kw).diverged

    nu = 2.0 - 2.0 / spec.gamma
    out = {
        "H0": finite(n),
        "H1": finite(n, log_weight=True),
        "H2": finite(n - 2.0 * nu),
        "H4": finite(n - 2),
    }
    out["H3"] = any(finite(n - 2, b_power=p) for p in H3_EXPONENT_PROBES)
    return out


def classify_assumptions(spec: KernelSpec, tol: float = 1e-10) -> set[str]:
    if spec.angular.is_zero():
        return set(LABELS)
    ok = b_integrability(spec, tol)
    if not 1.0 < spec.gamma < 2.0:
        ok["H2"] = False
    if abs(spec.gamma - 2.0) >= 1e-12:
        ok["H3"] = False
    return {k for k in LABELS if ok[k]}


def _inner_t_integral(a: np.ndarray, p: float) -> np.ndarray:
    """``int_0^1 t (1 - a t)^(p-2) dt`` for ``0 <= a <= 1/2``."""
    a = np.asarray(a, dtype=float)
    m = p - 2.0
    if float(p).is_integer():
        mi = int(m)
        out = np.empty_like(a)
        small = a * max(mi, 1) < 0.5
        # alternating binomial series; terms shrink geometrically while a*m < 1/2
        asm = a[small]
        term = np.full_like(asm, 0.5)
        acc = term.copy()
        coef = 1.0
        for k in range(1, mi + 1):
            coef *= (mi - k + 1) / k
            term = coef * (-asm) ** k / (k + 2)
            acc += term
            if np.all(np.abs(term) < 1e-18 * np.abs(acc)):
                break
        out[small] = acc
        ab = a[~small]
        q = 1.0 - ab
        out[~small] = ((1.0 - q ** (mi + 1)) / (mi + 1) - (1.0 - q ** (mi + 2)) / (mi + 2)) / ab ** 2
        return out
    x, w = np.polynomial.legendre.leggauss(48)
    t = 0.5 * (x + 1.0)
    vals = t[None, :] * (1.0 - a[:, None] * t[None, :]) ** m
    return 0.5 * vals @ w


def epsilon_p(spec: KernelSpec, p: float, tol: float = 1e-10) -> float:
    """Cutoff remainder: normalised angular average of the inner ``t``-integral against ``b sin^N``."""
    if p < 3:
        raise ValueError("p must be at least 3")
    c = constants(spec, tol=tol)
    if c.A2 == 0.0:
        raise KernelAssumptionError("A2 = 0: remainder undefined")
    if not math.isfinite(c.A2):
        raise KernelAssumptionError("A2 infinite: kernel violates H0")
    n = spec.dimension
    e0, e1 = spec.b_exponents()

    def f(theta):
        s = np.sin(theta)
        return _inner_t_integral(0.5 * s * s, p) * spec.b(theta) * s ** n

    exps = tuple(None if e is None else e + n for e in (e0, e1))
    res = integrate_theta(f, exps, tol=tol, breakpoints=spec.breakpoints())
    return 2.0 / c.A2 * sphere_area(n - 2) * res.value


def h3_threshold(spec: KernelSpec, p1: float) -> float:
    """Smallest ``p`` for which the quadratic-gamma moment bound applies: ``(12 A*/A0)^(2 q1)``."""
    c = constants(spec, p1=p1)
    if c.Ap_star is None:
        raise KernelAssumptionError("threshold needs gamma = 2")
    q1 = p1 / (p1 - 1.0)
    return (12.0 * c.Ap_star[1] / c.A0) ** (2.0 * q1)


__all__ = [
    "QuadratureError",
    "KernelAssumptionError",
    "ConstantAngular",
    "InversePowerAngular",
    "TableAngular",
    "KernelSpec",
    "KernelConstants",
    "LABELS",
    "angular_from_document",
    "spec_from_document",
    "hard_spheres",
    "inverse_power_law",
    "truncate",
    "constants",
    "b_integrability",
    "classify_assumptions",
    "epsilon_p",
    "h3_threshold",
]
