"""Deflection-angle quadrature on (0, pi) and product rules on spheres.

Angular kernels may blow up like a power of theta (and of pi - theta), so the
theta rules here use Gauss-Legendre panels that shrink geometrically toward
both endpoints. Adaptive integration adds a geometric tail correction once the
panel contributions decay like a power law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DIVERGENCE_THRESHOLD = 1e12


class QuadratureError(RuntimeError):
    """The integrand near an endpoint neither decays nor clearly diverges."""


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere ``S^d`` in ``R^(d+1)`` (``S^0`` has two points)."""
    return 2.0 * math.pi ** ((d + 1) / 2.0) / math.gamma((d + 1) / 2.0)


def _gl(m: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(m)


def _panel_nodes(a: float, b: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _gl(m)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def _split(edges: list[float], breakpoints: Sequence[float]) -> list[float]:
    pts = set(edges)
    lo, hi = min(edges), max(edges)
    for p in breakpoints:
        if lo < p < hi:
            pts.add(float(p))
    return sorted(pts)


def graded_rule(
    levels: int = 24,
    order: int = 8,
    breakpoints: Sequence[float] = (),
    ends: tuple[bool, bool] = (True, True),
) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on (0, pi) with panels halving toward graded ends."""
    half = 0.5 * math.pi
    left = [0.0] + ([half * 2.0 ** (-k) for k in range(levels + 1)] if ends[0] else [half])
    right = [math.pi] + ([math.pi - half * 2.0 ** (-k) for k in range(levels + 1)] if ends[1] else [half])
    edges = _split(sorted(set(left) | set(right)), breakpoints)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = _panel_nodes(a, b, order)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def gauss_rule(count: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Plain Gauss-Legendre rule with ``count`` nodes on (0, pi)."""
    return _panel_nodes(0.0, math.pi, count)


@dataclass
class ThetaIntegral:
    value: float
    error: float
    diverged: bool


def _half_sum(
    f: Callable[[np.ndarray], np.ndarray],
    toward_zero: bool,
    tol: float,
    order: int,
    breakpoints: Sequence[float],
    max_levels: int,
    exponent: float | None,
) -> ThetaIntegral:
    """Integrate over one half of (0, pi), panel by panel toward the endpoint."""
    half = 0.5 * math.pi
    total = 0.0
    err = 0.0
    prev = None
    prev_est = None
    ratios: list[float] = []
    for k in range(max_levels):
        hi_d, lo_d = half * 2.0 ** (-k), half * 2.0 ** (-k - 1)
        a, b = (lo_d, hi_d) if toward_zero else (math.pi - hi_d, math.pi - lo_d)
        edges = _split([a, b], breakpoints)
        panel = 0.0
        coarse = 0.0
        for pa, pb in zip(edges[:-1], edges[1:]):
            x, w = _panel_nodes(pa, pb, order)
            panel += float(np.dot(w, f(x)))
            x2, w2 = _panel_nodes(pa, pb, max(order // 2, 2))
            coarse += float(np.dot(w2, f(x2)))
        if not np.isfinite(panel):
            return ThetaIntegral(math.inf, math.inf, True)
        err += abs(panel - coarse)
        total += panel
        if abs(total) > DIVERGENCE_THRESHOLD:
            return ThetaIntegral(math.inf, math.inf, True)
        if prev is not None and prev != 0.0:
            ratios.append(abs(panel / prev))
        prev = panel
        if k < 3:
            continue
        if panel == 0.0:
            break
        r = ratios[-1] if ratios else 0.0
        if exponent is not None:
            # declared power law: the tail is geometric up to a relative defect |observed - r| / r
            rd = 2.0 ** (-(exponent + 1.0))
            tail = math.copysign(abs(panel) * rd / (1.0 - rd), panel)
            est = total + tail
            change = abs(est - prev_est) if prev_est is not None else math.inf
            prev_est = est
            if abs(tail) <= tol * max(1.0, abs(total)) or change <= 0.01 * tol * max(1.0, abs(total)) or lo_d < 1e-12:
                total = est
                err += min(abs(tail), change)
                break
        elif r < 0.95:
            tail = abs(panel) * r / (1.0 - r)
            if tail <= tol * max(1.0, abs(total)):
                total += math.copysign(tail, panel)
                err += tail
                break
        elif len(ratios) >= 6 and min(ratios[-6:]) >= 1.0:
            return ThetaIntegral(math.inf, math.inf, True)
    else:
        if exponent is None:
            raise QuadratureError("endpoint integrand neither decays nor diverges under refinement")
    return ThetaIntegral(total, err, False)


def integrate_theta(
    f: Callable[[np.ndarray], np.ndarray],
    exponents: tuple[float | None, float | None] = (None, None),
    tol: float = 1e-10,
    order: int = 16,
    breakpoints: Sequence[float] = (),
    max_levels: int = 200,
) -> ThetaIntegral:
    """Integrate ``f`` over (0, pi).

    ``exponents`` gives the local power of the integrand at each endpoint
    (``f ~ theta^e``). A declared exponent ``<= -1`` means the integral is infinite.
    ``None`` means unknown; decay is then assessed from the panel sums.
    """
    for e in exponents:
        if e is not None and e <= -1.0:
            return ThetaIntegral(math.inf, math.inf, True)
    parts = []
    for toward_zero, e in ((True, exponents[0]), (False, exponents[1])):
        parts.append(_half_sum(f, toward_zero, tol, order, breakpoints, max_levels, e))
        if parts[-1].diverged:
            return parts[-1]
    return ThetaIntegral(parts[0].value + parts[1].value, parts[0].error + parts[1].error, False)


@dataclass(frozen=True)
class SphereRule:
    """Nodes and weights on the unit sphere ``S^d`` embedded in ``R^(d+1)``."""

    points: np.ndarray
    weights: np.ndarray


def sphere_rule(d: int, azimuth_nodes: int = 32, polar_nodes: int | None = None) -> SphereRule:
    """Product rule on ``S^d``: two points for d=0, trapezoid for d=1, recursive Gauss in the polar angle beyond."""
    if d == 0:
        return SphereRule(np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
    if d == 1:
        phi = (np.arange(azimuth_nodes) + 0.5) * (2.0 * math.pi / azimuth_nodes)
        pts = np.column_stack([np.cos(phi), np.sin(phi)])
        return SphereRule(pts, np.full(azimuth_nodes, 2.0 * math.pi / azimuth_nodes))
    sub = sphere_rule(d - 1, azimuth_nodes, polar_nodes)
    m = polar_nodes or max(azimuth_nodes // 2, 4)
    psi, wpsi = gauss_rule(m)
    pts, wts = [], []
    for p, wp in zip(psi, wpsi):
        pts.append(np.column_stack([np.full(len(sub.weights), math.cos(p)), math.sin(p) * sub.points]))
        wts.append(wp * math.sin(p) ** (d - 1) * sub.weights)
    return SphereRule(np.vstack(pts), np.concatenate(wts))
