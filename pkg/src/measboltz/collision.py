"""Binary elastic collisions and the collision operator on atomic measures.

Scattering directions are parametrised as ``sigma = cos(theta) n + sin(theta) omega``
with ``n`` the unit relative velocity and ``omega`` on the unit sphere of the
hyperplane orthogonal to ``n``. All sphere integrals use a fixed product rule
(:class:`SphereQuadrature`), so every evaluation is deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bounds import binom
from .kernel import KernelAssumptionError, KernelSpec, constants
from .measure import DiscreteMeasure, SignedMeasure, bracket, jordan_decompose, moment_norm
from .quadrature import QuadratureError, gauss_rule, graded_rule, sphere_area, sphere_rule

UNIT_TOL = 1e-12
PAIR_CHUNK = 64


def _unit_or_e1(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalise rows of ``z``; zero rows map to ``e1``. Returns (unit vectors, norms)."""
    r = np.linalg.norm(z, axis=-1)
    out = np.zeros_like(z)
    out[..., 0] = 1.0
    nz = r > 0
    out[nz] = z[nz] / r[nz, None]
    return out, r


def post_collision(v, v_star, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Outgoing velocities ``(v', v*')`` for incoming ``(v, v*)`` scattered along unit ``sigma``."""
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(np.abs(np.linalg.norm(sigma, axis=-1) - 1.0) > UNIT_TOL):
        raise ValueError("sigma must be a unit vector")
    center = 0.5 * (v + v_star)
    half = 0.5 * np.linalg.norm(v - v_star, axis=-1)[..., None]
    return center + half * sigma, center - half * sigma


def orthonormal_complement(n: np.ndarray) -> np.ndarray:
    """Orthonormal bases of ``n^perp`` for rows of ``n``, shape ``(P, N-1, N)``.

    The basis depends on ``n`` only up to sign, so ``n`` and ``-n`` share the same
    frame; combined with a symmetric omega rule this makes the node sets of the
    pairs ``(v, v*)`` and ``(v*, v)`` mirror images of each other.
    """
    n = np.atleast_2d(np.asarray(n, dtype=float))
    p, dim = n.shape
    piv = np.argmax(np.abs(n), axis=1)
    rows = np.arange(p)
    m = n * np.where(n[rows, piv] < 0, -1.0, 1.0)[:, None]
    # Householder reflection sending m to -e_piv; pivot on the largest entry avoids cancellation
    u = m.copy()
    u[rows, piv] += 1.0
    h = np.eye(dim)[None] - 2.0 * u[:, :, None] * u[:, None, :] / np.sum(u * u, axis=1)[:, None, None]
    keep = np.arange(dim)[None, :] != piv[:, None]
    return h[keep].reshape(p, dim - 1, dim)


def energy_representations(v, v_star, theta: float, omega) -> tuple[tuple[float, float], tuple[float, float]]:
    """Post-collision values of ``<v'>^2`` and ``<v*'>^2`` computed two ways.

    The first pair uses the direction ``h`` of ``v + v*``; the second splits the
    energy with ``cos^2(theta/2)`` and ``sin^2(theta/2)`` weights and a transverse
    term along ``j``, the component of ``h`` orthogonal to ``n``.
    """
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    omega = np.asarray(omega, dtype=float)
    n, r = _unit_or_e1(v - v_star)
    if abs(np.dot(omega, n)) > 1e-10 or abs(np.linalg.norm(omega) - 1.0) > 1e-10:
        raise ValueError("omega must be a unit vector orthogonal to n")
    sigma = math.cos(theta) * n + math.sin(theta) * omega
    bv2 = 1.0 + float(v @ v)
    bs2 = 1.0 + float(v_star @ v_star)

    h, rs = _unit_or_e1(v + v_star)
    osc = 0.5 * rs * r * float(h @ sigma)
    h_form = (0.5 * (bv2 + bs2) + osc, 0.5 * (bv2 + bs2) - osc)

    hn = float(h @ n)
    if abs(hn) < 1.0:
        j = (h - hn * n) / math.sqrt(max(1.0 - hn * hn, 0.0))
    else:
        j = np.zeros_like(h)
        j[0] = 1.0
    cross = math.sqrt(max(float(v @ v) * float(v_star @ v_star) - float(v @ v_star) ** 2, 0.0))
    c2, s2 = math.cos(0.5 * theta) ** 2, math.sin(0.5 * theta) ** 2
    tr = cross * math.sin(theta) * float(j @ omega)
    j_form = (bv2 * c2 + bs2 * s2 + tr, bv2 * s2 + bs2 * c2 - tr)
    return h_form, j_form


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    """Product rule in ``(theta, omega)`` for integrals over ``S^(N-1)``.

    ``theta_weights`` exclude the Jacobian ``sin^(N-2) theta``; ``omega_ref`` lists
    nodes of ``S^(N-2)`` in the coordinates of an orthonormal basis of ``n^perp``.
    """

    dimension: int
    theta: np.ndarray = field(repr=False)
    theta_weights: np.ndarray = field(repr=False)
    omega_ref: np.ndarray = field(repr=False)
    omega_weights: np.ndarray = field(repr=False)

    @classmethod
    def gauss(cls, dimension: int, theta_nodes: int = 64, azimuth_nodes: int = 32) -> SphereQuadrature:
        th, w = gauss_rule(theta_nodes)
        rule = sphere_rule(dimension - 2, azimuth_nodes)
        return cls(dimension, th, w, rule.points, rule.weights)

    @classmethod
    def graded(cls, dimension: int, levels: int = 24, order: int = 8, azimuth_nodes: int = 32, breakpoints=()) -> SphereQuadrature:
        th, w = graded_rule(levels, order, breakpoints)
        rule = sphere_rule(dimension - 2, azimuth_nodes)
        return cls(dimension, th, w, rule.points, rule.weights)

    @classmethod
    def for_kernel(cls, spec: KernelSpec, theta_nodes: int = 64, azimuth_nodes: int = 32, levels: int = 24) -> SphereQuadrature:
        """Plain Gauss rule for smooth profiles; graded panels when ``b`` is singular or capped."""
        if spec.b_exponents() == (0.0, 0.0) and spec.truncation is None:
            return cls.gauss(spec.dimension, theta_nodes, azimuth_nodes)
        return cls.graded(spec.dimension, levels=levels, azimuth_nodes=azimuth_nodes, breakpoints=spec.breakpoints())

    @classmethod
    def from_document(cls, dimension: int, doc: dict) -> SphereQuadrature:
        return cls.gauss(dimension, int(doc["theta_nodes"]), int(doc["azimuth_nodes"]))

    def to_document(self) -> dict:
        return {"theta_nodes": int(self.theta.size), "azimuth_nodes": int(self.omega_weights.size)}

    def refined(self) -> SphereQuadrature:
        """Rule with doubled theta and omega resolution (used as a convergence check)."""
        th = self.theta.size
        az = self.omega_weights.size
        if self.dimension == 2:
            az_new = 2
        elif self.dimension == 3:
            az_new = 2 * az
        else:
            az_new = 2 * int(round(az ** (1.0 / (self.dimension - 2)))) if az > 1 else 2
        return type(self).gauss(self.dimension, 2 * th, az_new)

    def total_weight(self) -> float:
        """Integral of 1 over ``S^(N-1)`` under this rule."""
        return float(np.dot(self.theta_weights, np.sin(self.theta) ** (self.dimension - 2)) * np.sum(self.omega_weights))

    def directions(self, n: np.ndarray) -> np.ndarray:
        """Scattering directions for each unit ``n`` row: shape ``(P, K, M, N)``."""
        basis = orthonormal_complement(n)
        omega = np.einsum("md,pdn->pmn", self.omega_ref, basis)
        c = np.cos(self.theta)[None, :, None, None]
        s = np.sin(self.theta)[None, :, None, None]
        return c * n[:, None, None, :] + s * omega[:, None, :, :]


@dataclass(frozen=True)
class SmoothTestFunction:
    """Vectorised ``C^2`` test function: arrays of shape ``(..., N)`` map to ``(...)``."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    growth_order: float

    def __call__(self, v):
        return self.value(np.asarray(v, dtype=float))


def constant_function(c: float = 1.0) -> SmoothTestFunction:
    return SmoothTestFunction(
        "constant",
        lambda v: np.full(v.shape[:-1], float(c)),
        lambda v: np.zeros_like(v),
        lambda v: np.zeros(v.shape + (v.shape[-1],)),
        0.0,
    )


def coordinate_function(i: int) -> SmoothTestFunction:
    def grad(v):
        g = np.zeros_like(v)
        g[..., i] = 1.0
        return g

    return SmoothTestFunction(
        f"v{i + 1}", lambda v: v[..., i], grad, lambda v: np.zeros(v.shape + (v.shape[-1],)), 1.0
    )


def energy_function() -> SmoothTestFunction:
    return SmoothTestFunction(
        "speed2",
        lambda v: np.sum(v * v, axis=-1),
        lambda v: 2.0 * v,
        lambda v: 2.0 * np.broadcast_to(np.eye(v.shape[-1]), v.shape + (v.shape[-1],)),
        2.0,
    )


def bracket_power(p: float) -> SmoothTestFunction:
    """``<v>^(2p)``."""

    def value(v):
        return (1.0 + np.sum(v * v, axis=-1)) ** p

    def grad(v):
        return 2.0 * p * ((1.0 + np.sum(v * v, axis=-1)) ** (p - 1.0))[..., None] * v

    def hess(v):
        q = 1.0 + np.sum(v * v, axis=-1)
        eye = np.eye(v.shape[-1])
        return 2.0 * p * (q ** (p - 1.0))[..., None, None] * eye + 4.0 * p * (p - 1.0) * (q ** (p - 2.0))[
            ..., None, None
        ] * (v[..., :, None] * v[..., None, :])

    return SmoothTestFunction(f"bracket^{2 * p:g}", value, grad, hess, 2.0 * p)


def gaussian_bump(center, width: float = 1.0) -> SmoothTestFunction:
    """``exp(-|v - c|^2 / (2 width^2))``."""
    c = np.asarray(center, dtype=float)
    a = 1.0 / (width * width)

    def value(v):
        d = v - c
        return np.exp(-0.5 * a * np.sum(d * d, axis=-1))

    def grad(v):
        return -a * (v - c) * value(v)[..., None]

    def hess(v):
        d = v - c
        eye = np.eye(v.shape[-1])
        return value(v)[..., None, None] * (a * a * d[..., :, None] * d[..., None, :] - a * eye)

    return SmoothTestFunction("gauss_bump", value, grad, hess, 0.0)


def cosine_function(xi) -> SmoothTestFunction:
    xi = np.asarray(xi, dtype=float)
    return SmoothTestFunction(
        "cos",
        lambda v: np.cos(v @ xi),
        lambda v: -np.sin(v @ xi)[..., None] * xi,
        lambda v: -np.cos(v @ xi)[..., None, None] * np.outer(xi, xi),
        0.0,
    )


def delta_phi(phi: SmoothTestFunction, v, v_star, sigma) -> np.ndarray:
    """``phi(v') + phi(v*') - phi(v) - phi(v*)``."""
    vp, vsp = post_collision(v, v_star, sigma)
    return phi(vp) + phi(vsp) - phi(np.asarray(v, dtype=float)) - phi(np.asarray(v_star, dtype=float))


def _lb_delta_pairs(phi: SmoothTestFunction, v: np.ndarray, vs: np.ndarray, spec: KernelSpec, quad: SphereQuadrature) -> np.ndarray:
    """Dual collision kernel for rows of ``(v, vs)``.

    The omega-integral of the increment is formed first and divided by
    ``sin^2 theta``; only then is it weighted by the (possibly singular)
    ``b sin^N theta``.
    """
    out = np.empty(v.shape[0])
    sin = np.sin(quad.theta)
    outer = quad.theta_weights * spec.b(quad.theta) * sin ** spec.dimension
    for lo in range(0, v.shape[0], PAIR_CHUNK):
        a = v[lo : lo + PAIR_CHUNK]
        b = vs[lo : lo + PAIR_CHUNK]
        n, r = _unit_or_e1(a - b)
        sig = quad.directions(n)
        center = 0.5 * (a + b)[:, None, None, :]
        half = 0.5 * r[:, None, None, None]
        inc = phi(center + half * sig) + phi(center - half * sig) - (phi(a) + phi(b))[:, None, None]
        inner = inc @ quad.omega_weights
        out[lo : lo + PAIR_CHUNK] = spec.kinetic(r) * ((inner / sin ** 2) @ outer)
    return out


def L_B_delta(
    phi: SmoothTestFunction,
    v,
    v_star,
    spec: KernelSpec,
    quad: Optional[SphereQuadrature] = None,
    check_tol: Optional[float] = None,
) -> float:
    """Sphere integral of ``B`` times the collision increment of ``phi``.

    With ``check_tol`` set the value is recomputed on a refined rule and a
    :class:`QuadratureError` is raised when the two differ by more than that.
    """
    quad = quad or SphereQuadrature.for_kernel(spec)
    a = np.asarray(v, dtype=float)[None, :]
    b = np.asarray(v_star, dtype=float)[None, :]
    val = float(_lb_delta_pairs(phi, a, b, spec, quad)[0])
    if check_tol is not None:
        fine = float(_lb_delta_pairs(phi, a, b, spec, quad.refined())[0])
        if abs(fine - val) > check_tol * max(1.0, abs(fine)):
            raise QuadratureError(f"refinement changed L_B by {abs(fine - val):.3e}")
    return val


def Q_weak(mu: DiscreteMeasure, phi: SmoothTestFunction, spec: KernelSpec, quad: Optional[SphereQuadrature] = None) -> float:
    """Weak form of ``Q(mu, mu)`` tested against ``phi``: half the double sum of the dual kernel."""
    quad = quad or SphereQuadrature.for_kernel(spec)
    k = len(mu)
    if k == 0:
        return 0.0
    ii, jj = np.triu_indices(k, 1)
    if ii.size == 0:
        return 0.0
    vals = _lb_delta_pairs(phi, mu.velocities[ii], mu.velocities[jj], spec, quad)
    # off-diagonal pairs counted once: L is symmetric in (v, v*) and the diagonal vanishes
    return float(np.sum(mu.weights[ii] * mu.weights[jj] * vals))


def _require_cutoff(spec: KernelSpec) -> float:
    a0 = constants(spec).A0
    if not math.isfinite(a0):
        raise KernelAssumptionError("gain/loss split needs a finite A0; truncate the kernel first")
    return a0


def Q_gain(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    spec: KernelSpec,
    quad: Optional[SphereQuadrature] = None,
    snap: Optional[float] = None,
) -> DiscreteMeasure:
    """Atomic pushforward of ``B dsigma dmu dnu`` to ``v'``, one atom per (pair, node)."""
    _require_cutoff(spec)
    quad = quad or SphereQuadrature.for_kernel(spec)
    n_dim = spec.dimension
    ii, jj = np.nonzero(np.outer(mu.weights, nu.weights) != 0)
    a, b = mu.velocities[ii], nu.velocities[jj]
    keep = np.any(a != b, axis=1)
    ii, jj, a, b = ii[keep], jj[keep], a[keep], b[keep]
    if ii.size == 0:
        return DiscreteMeasure.empty(n_dim)
    node_w = (
        (quad.theta_weights * spec.b(quad.theta) * np.sin(quad.theta) ** (n_dim - 2))[:, None]
        * quad.omega_weights[None, :]
    )
    n, r = _unit_or_e1(a - b)
    vel = []
    wts = []
    for lo in range(0, ii.size, PAIR_CHUNK):
        sl = slice(lo, lo + PAIR_CHUNK)
        sig = quad.directions(n[sl])
        center = 0.5 * (a[sl] + b[sl])[:, None, None, :]
        vp = center + 0.5 * r[sl, None, None, None] * sig
        pw = mu.weights[ii[sl]] * nu.weights[jj[sl]] * spec.kinetic(r[sl])
        vel.append(vp.reshape(-1, n_dim))
        wts.append((pw[:, None, None] * node_w[None]).reshape(-1))
    out = DiscreteMeasure(n_dim, np.vstack(vel), np.concatenate(wts))
    return out.merged(snap) if snap is not None else out


def Q_loss(mu: DiscreteMeasure, nu: DiscreteMeasure, spec: KernelSpec) -> DiscreteMeasure:
    """Atoms of ``mu`` reweighted by the total collision rate ``int A(v - v*) dnu(v*)``."""
    a0 = _require_cutoff(spec)
    if len(mu) == 0 or len(nu) == 0:
        return DiscreteMeasure.empty(spec.dimension)
    dist = np.linalg.norm(mu.velocities[:, None, :] - nu.velocities[None, :, :], axis=-1)
    rate = a0 * spec.kinetic(dist) @ nu.weights
    return DiscreteMeasure(spec.dimension, mu.velocities, mu.weights * rate)


def povzner_rhs(x, y, p: float, A2: float, eps_p: float, gamma: float) -> np.ndarray:
    """Upper bound for the dual kernel applied to ``<.>^(2p)`` when ``gamma < 2``.

    ``x`` and ``y`` are the brackets ``<v>`` and ``<v*>``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g = gamma
    kp = int(math.floor((p + 1) / 2))
    out = -0.25 * A2 * (x ** (2 * p + g) + y ** (2 * p + g))
    out = out + 0.5 * A2 * (x ** (2 * p) * y ** g + y ** (2 * p) * x ** g)
    for k in range(1, kp + 1):
        c = A2 * binom(p, k)
        out = out + c * (x ** (2 * k + g) * y ** (2 * (p - k)) + x ** (2 * (p - k) + g) * y ** (2 * k))
        out = out + c * (x ** (2 * k) * y ** (2 * (p - k) + g) + x ** (2 * (p - k)) * y ** (2 * k + g))
    lead = 2.0 * p * (p - 1.0) * A2 * eps_p
    for k in range(0, kp):
        c = lead * binom(p - 2, k)
        out = out + c * (x ** (2 * (k + 1) + g) * y ** (2 * (p - 1 - k)) + x ** (2 * (p - 1 - k) + g) * y ** (2 * (k + 1)))
        out = out + c * (x ** (2 * (k + 1)) * y ** (2 * (p - 1 - k) + g) + x ** (2 * (p - 1 - k)) * y ** (2 * (k + 1) + g))
    return out


def povzner_rhs_quadratic(x, y, p: float, A0: float, A_star: float, p1: float) -> np.ndarray:
    """Upper bound for the dual kernel applied to ``<.>^(2p)`` when ``gamma = 2``.

    Valid for ``p >= (12 A_star / A0)^(2 q1)`` with ``q1`` the conjugate of ``p1``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    q1 = p1 / (p1 - 1.0)
    eta = 1.0 / (2.0 * q1)
    kp = int(math.floor((p + 1) / 2))
    lead = 12.0 * A_star / p ** eta
    out = np.zeros(np.broadcast(x, y).shape)
    for k in range(1, kp + 1):
        c = lead * binom(p, k)
        out = out + c * (x ** (2 * (k + 1)) * y ** (2 * (p - k)) + x ** (2 * (p - k + 1)) * y ** (2 * k))
        out = out + c * (x ** (2 * k) * y ** (2 * (p - k + 1)) + x ** (2 * (p - k)) * y ** (2 * (k + 1)))
    out = out + 0.5 * A0 * (x ** (2 * p) * y ** 2 + y ** (2 * p) * x ** 2)
    out = out - 0.25 * A0 * (x ** (2 * (p + 1)) + y ** (2 * (p + 1)))
    return out


def lipschitz_bound(mu: SignedMeasure, nu: SignedMeasure, s: float, gamma: float, A0: float) -> float:
    """Bound on ``||Q^+-(mu, nu)||_s``: ``2^((s+g)/2) A0 (|mu|_{s+g}|nu|_0 + |mu|_0|nu|_{s+g})``."""
    g = gamma
    return 2.0 ** ((s + g) / 2.0) * A0 * (
        moment_norm(mu, s + g) * moment_norm(nu, 0) + moment_norm(mu, 0) * moment_norm(nu, s + g)
    )


def lipschitz_difference_bound(mu: DiscreteMeasure, nu: DiscreteMeasure, s: float, gamma: float, A0: float) -> float:
    """Bound on ``||Q^+-(mu, mu) - Q^+-(nu, nu)||_s`` in terms of ``mu + nu`` and ``mu - nu``."""
    return lipschitz_bound(mu + nu, mu - nu, s, gamma, A0)


def total_difference_bound(mu: DiscreteMeasure, nu: DiscreteMeasure, gamma: float, A0: float) -> float:
    """Bound on ``||Q(mu, mu) - Q(nu, nu)||_0``."""
    return 2.0 * lipschitz_bound(mu + nu, mu - nu, 0.0, gamma, A0)


def signed_estimate(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    phi: Callable[[np.ndarray], np.ndarray],
    spec: KernelSpec,
    quad: Optional[SphereQuadrature] = None,
    kappa_off_support: float = 1.0,
) -> tuple[float, float]:
    """Both sides of the one-sided estimate for ``int phi kappa d(Q(mu,mu) - Q(nu,nu))``.

    ``kappa`` is 1 where ``mu - nu`` is positive, 0 where it is negative and
    ``kappa_off_support`` elsewhere; ``phi`` must satisfy ``0 <= phi <= <v>^2``.
    Returns ``(lhs, rhs)``.
    """
    a0 = _require_cutoff(spec)
    g = spec.gamma
    pos, neg = jordan_decompose(mu - nu)
    pos_keys = {tuple(v) for v in pos.velocities}
    neg_keys = {tuple(v) for v in neg.velocities}

    def test(v):
        k = np.array([1.0 if tuple(x) in pos_keys else 0.0 if tuple(x) in neg_keys else kappa_off_support for x in v])
        return np.asarray(phi(v), dtype=float) * k

    lhs = 0.0
    for m, sgn in ((mu, 1.0), (nu, -1.0)):
        lhs += sgn * (Q_gain(m, m, spec, quad).integrate(test) - Q_loss(m, m, spec).integrate(test))
    x = bracket(mu.velocities)
    e_phi = a0 * 2.0 ** g * moment_norm(mu, g) * float(np.sum(mu.weights * (x ** 2 - phi(mu.velocities)) * x ** g))
    diff = mu - nu
    rhs = e_phi + 2.0 ** (g / 2.0) * a0 * (
        moment_norm(mu, 2 + g) * moment_norm(diff, 0) + moment_norm(mu, 2) * moment_norm(diff, g)
    )
    return lhs, rhs


def sphere_weight_check(quad: SphereQuadrature) -> float:
    """Relative error of the rule's total weight against the exact sphere area."""
    exact = sphere_area(quad.dimension - 1)
    return abs(quad.total_weight() - exact) / exact
