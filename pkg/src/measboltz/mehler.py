"""Mehler regularisation of an atomic measure.

The regularised density is the Gaussian mixture with one component per atom,
centred at ``v0 + sqrt(1 - e^{-2n}) (v_j - v0)`` with isotropic variance
``T e^{-2n}``. It keeps mass, mean velocity and energy of the source exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .measure import DiscreteMeasure, TestDictionary, conserved_triple, default_dictionary

SEARCH_CAP = 2.0 ** 20
MAX_POINTS = 96


class DegenerateMeasureError(ValueError):
    """The source is a single Dirac mass (zero temperature)."""


class SearchCapExceeded(RuntimeError):
    """No truncation level below the cap met the defect target."""


@dataclass(frozen=True)
class MehlerParams:
    rho: float
    v0: np.ndarray
    T: float
    n: Optional[float] = None

    @property
    def degenerate(self) -> bool:
        return self.T == 0.0


def mehler_params(F0: DiscreteMeasure, n: Optional[float] = None) -> MehlerParams:
    rho, mom, _ = conserved_triple(F0)
    if not rho > 0:
        raise ValueError("source measure has zero mass")
    v0 = mom / rho
    support = F0.velocities[F0.weights > 0]
    if np.all(support == support[0]):
        return MehlerParams(rho, support[0].copy(), 0.0, n)
    d = F0.velocities - v0
    T = float(np.dot(F0.weights, np.sum(d * d, axis=1))) / (F0.dimension * rho)
    return MehlerParams(rho, v0, T, n)


def _mixture(F0: DiscreteMeasure, n: float) -> tuple[MehlerParams, np.ndarray, float]:
    if not n > 0:
        raise ValueError("regularisation index n must be positive")
    par = mehler_params(F0, n)
    if par.degenerate:
        raise DegenerateMeasureError("Dirac source has zero temperature")
    shrink = math.sqrt(-math.expm1(-2.0 * n))
    centers = par.v0 + shrink * (F0.velocities - par.v0)
    return par, centers, par.T * math.exp(-2.0 * n)


def mehler_density(F0: DiscreteMeasure, n: float, v) -> np.ndarray:
    """Regularised density at ``v`` (shape ``(..., N)``)."""
    par = mehler_params(F0, n)
    if par.degenerate:
        raise DegenerateMeasureError("Dirac source has zero temperature")
    v = np.asarray(v, dtype=float)
    N = F0.dimension
    shrink = math.sqrt(-math.expm1(-2.0 * n))
    scale = math.exp(n)
    x = scale * (v[..., None, :] - par.v0 - shrink * (F0.velocities - par.v0))
    maxwell = np.exp(-np.sum(x * x, axis=-1) / (2.0 * par.T)) / (2.0 * math.pi * par.T) ** (N / 2.0)
    return math.exp(N * n) * (maxwell @ F0.weights)


def analytic_moments(F0: DiscreteMeasure, n: float) -> tuple[float, np.ndarray, float]:
    """Closed-form mass, momentum and energy of the regularised density."""
    _, centers, var = _mixture(F0, n)
    w = F0.weights
    mass = float(np.sum(w))
    mom = w @ centers
    energy = float(np.dot(w, np.sum(centers * centers, axis=1) + F0.dimension * var))
    return mass, mom, energy


def moment_defects(F0: DiscreteMeasure, n: float) -> dict[str, float]:
    m, p, e = analytic_moments(F0, n)
    m0, p0, e0 = conserved_triple(F0)
    return {"mass": abs(m - m0), "momentum": float(np.max(np.abs(p - p0))), "energy": abs(e - e0)}


def _rng(seed: Union[int, np.random.Generator, None]) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def mehler_sample(F0: DiscreteMeasure, n: float, count: int, seed: Union[int, np.random.Generator, None] = None) -> DiscreteMeasure:
    """Equal-weight sample of the regularised density (component pick plus Gaussian noise)."""
    if count < 1:
        raise ValueError("count must be positive")
    par, centers, var = _mixture(F0, n)
    rng = _rng(seed)
    idx = rng.choice(len(F0), size=count, p=F0.weights / np.sum(F0.weights))
    v = centers[idx] + math.sqrt(var) * rng.standard_normal((count, F0.dimension))
    return DiscreteMeasure(F0.dimension, v, np.full(count, par.rho / count))


def quadrature_measure(F0: DiscreteMeasure, n: float, points: int = 16) -> DiscreteMeasure:
    """Gauss-Hermite product rule for the regularised density, as an atomic measure."""
    _, centers, var = _mixture(F0, n)
    N = F0.dimension
    x, w = np.polynomial.hermite_e.hermegauss(points)
    w = w / math.sqrt(2.0 * math.pi)
    grids = np.meshgrid(*([x] * N), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1) * math.sqrt(var)
    wgrid = np.ones(1)
    for _ in range(N):
        wgrid = np.outer(wgrid, w).reshape(-1)
    vel = (centers[:, None, :] + nodes[None, :, :]).reshape(-1, N)
    wts = (F0.weights[:, None] * wgrid[None, :]).reshape(-1)
    return DiscreteMeasure(N, vel, wts)


def weak_defects(F0: DiscreteMeasure, n: float, dictionary: Optional[TestDictionary] = None, points: int = 24) -> list[dict]:
    dictionary = dictionary or default_dictionary(F0.dimension)
    qm = quadrature_measure(F0, n, points)
    return [
        {"phi": e.name, "value": abs(qm.integrate(e.func) - F0.integrate(e.func)) / e.sup_norm}
        for e in dictionary.entries
        if e.weight_order <= 2
    ]


@dataclass(frozen=True)
class Truncation:
    """Cap ``K`` with ``min(f, K) exp(-|v|^2 / K)`` meeting the weighted L1 defect target."""

    K: float
    defect: float
    target: float
    error_estimate: float


def truncation_defect(F0: DiscreteMeasure, n: float, K: float, points: int = 32) -> tuple[float, float]:
    """Weighted L1 distance between the density and its capped, damped version; with an error estimate."""

    def at(m):
        qm = quadrature_measure(F0, n, m)
        f = mehler_density(F0, n, qm.velocities)
        s2 = np.sum(qm.velocities ** 2, axis=1)
        ratio = np.minimum(1.0, K / f)
        # weights of qm already carry the density, so integrate (1 - capped/f) <v>^2
        return float(np.dot(qm.weights, (1.0 - ratio * np.exp(-s2 / K)) * (1.0 + s2)))

    fine = at(points)
    coarse = at(max(points // 2, 4))
    return fine, abs(fine - coarse)


def mehler_truncate(
    F0: DiscreteMeasure, n: float, search_cap: float = SEARCH_CAP, points: int = 32, max_points: int = MAX_POINTS
) -> Truncation:
    """Smallest ``K`` on the grid ``2n, 4n, ...`` whose defect is at most ``mass / (2n)``.

    The rule is refined while its error estimate cannot separate the defect from the target.
    """
    rho = float(np.sum(F0.weights))
    target = rho / (2.0 * n)
    K = 2.0 * n
    while K <= search_cap:
        m = points
        d, err = truncation_defect(F0, n, K, m)
        while err > abs(d - target) and m < max_points:
            m = min(2 * m, max_points)
            d, err = truncation_defect(F0, n, K, m)
        if d <= target:
            return Truncation(K, d, target, err)
        K *= 2.0
    raise SearchCapExceeded(f"no K <= {search_cap:g} met the defect target {target:g}")


def mehler_report(F0: DiscreteMeasure, n: float, dictionary: Optional[TestDictionary] = None) -> dict:
    par = mehler_params(F0, n)
    return {
        "rho": par.rho,
        "v0": [float(x) for x in par.v0],
        "T": par.T,
        "n": n,
        "moment_defects": moment_defects(F0, n),
        "weak_defects": weak_defects(F0, n, dictionary),
    }
