"""Stochastic particle integrator for the space-homogeneous collision dynamics.

Equal-weight particles collide in disjoint random pairs (Nanbu-Babovsky with
acceptance-rejection against a majorant of the collision rate). Every
accepted collision updates both partners with the elastic rule, so mass,
momentum and energy are conserved up to rounding.

Randomness for step ``k`` comes from ``SeedSequence([seed, k])`` (candidate
count and pairing) and ``SeedSequence([seed, k, part + 1])`` (per-pair
uniforms of each partition); runs with the same seed and partition count are
bit-identical. Runs that differ only in the kernel share their random numbers
pair by pair, and with a common ``majorant_a0`` kernels that agree away from
grazing angles perform the same large-angle collisions.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri
from scipy.stats import poisson

from .bounds import moment_production_envelope
from .collision import orthonormal_complement
from .kernel import KernelAssumptionError, KernelSpec, constants
from .measure import DiscreteMeasure, bracket, conserved_triple
from .mehler import mehler_sample

log = logging.getLogger(__name__)

TABLE_SIZE = 4096
CANDIDATE_FRACTION = 0.1
_INIT_STREAM = 2 ** 32


class DiracSourceError(ValueError):
    """The initial measure is a single Dirac mass; it is stationary and is not simulated."""

    def __init__(self, velocity: np.ndarray, mass: float):
        super().__init__("Dirac initial measure is stationary")
        self.velocity = velocity
        self.mass = mass


@dataclass(frozen=True)
class MehlerSource:
    measure: DiscreteMeasure
    n: float


@dataclass(frozen=True)
class MaxwellianSource:
    dimension: int
    rho: float
    mean: tuple
    temperature: float


Source = Union[DiscreteMeasure, MehlerSource, MaxwellianSource]


@dataclass
class SimConfig:
    kernel: KernelSpec
    particle_count: int
    t_end: float
    seed: int = 0
    dt: Optional[float] = None
    record_moments: Sequence[float] = (2.0, 3.0, 4.0)
    record_interval: Optional[float] = None
    majorant_refresh: int = 1
    threads: int = 1
    envelope: bool = False
    majorant_a0: Optional[float] = None

    def __post_init__(self):
        if self.particle_count < 2:
            raise ValueError("need at least two particles")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.majorant_refresh < 1 or self.threads < 1:
            raise ValueError("majorant_refresh and threads must be positive")
        a0 = constants(self.kernel).A0
        if not math.isfinite(a0):
            raise KernelAssumptionError("particle dynamics need a finite A0; truncate the kernel first")
        if self.majorant_a0 is not None and not self.majorant_a0 >= a0:
            raise ValueError("majorant_a0 must be at least the kernel's A0")


@dataclass
class SimState:
    velocities: np.ndarray
    weight: float
    seed: int
    time: float = 0.0
    step_index: int = 0
    candidates: int = 0
    accepted: int = 0
    v_max: float = 0.0

    def __post_init__(self):
        self.refresh()

    @property
    def count(self) -> int:
        return self.velocities.shape[0]

    @property
    def mass(self) -> float:
        return self.weight * self.count

    def refresh(self) -> None:
        self.v_max = float(np.sqrt(np.max(np.sum(self.velocities ** 2, axis=1)))) if self.count else 0.0

    def measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.velocities.shape[1], self.velocities, np.full(self.count, self.weight))

    def moment(self, s: float) -> float:
        return self.weight * float(np.sum(bracket(self.velocities, s)))

    def copy(self) -> SimState:
        out = SimState(self.velocities.copy(), self.weight, self.seed, self.time, self.step_index, self.candidates, self.accepted)
        return out


def _dirac_check(mu: DiscreteMeasure) -> None:
    support = mu.velocities[mu.weights > 0]
    if support.shape[0] and np.all(support == support[0]):
        raise DiracSourceError(support[0].copy(), mu.mass)


def init(source: Source, config: SimConfig) -> SimState:
    """Equal-weight ensemble for ``source``."""
    count = config.particle_count
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _INIT_STREAM]))
    if isinstance(source, MehlerSource):
        _dirac_check(source.measure)
        sample = mehler_sample(source.measure, source.n, count, rng)
        return SimState(np.array(sample.velocities), float(sample.weights[0]), config.seed)
    if isinstance(source, MaxwellianSource):
        v = np.asarray(source.mean, dtype=float) + math.sqrt(source.temperature) * rng.standard_normal((count, source.dimension))
        return SimState(v, source.rho / count, config.seed)
    mu = source
    if not mu.mass > 0:
        raise ValueError("source has zero mass")
    _dirac_check(mu)
    k = len(mu)
    if np.all(mu.weights == mu.weights[0]) and count % k == 0:
        reps = np.full(k, count // k)
    else:
        reps = rng.multinomial(count, mu.weights / mu.mass)
    v = np.repeat(mu.velocities, reps, axis=0)
    return SimState(v, mu.mass / count, config.seed)


class AngularSampler:
    """Inverse-CDF sampler for the deflection angle with density proportional to ``b sin^(N-2)``."""

    def __init__(self, spec: KernelSpec, size: int = TABLE_SIZE):
        if not math.isfinite(constants(spec).A0):
            raise KernelAssumptionError("angular table needs an integrable profile; truncate the kernel first")
        self.dimension = spec.dimension
        edges = np.linspace(0.0, math.pi, size + 1)
        x, w = np.polynomial.legendre.leggauss(6)
        h = edges[1] - edges[0]
        nodes = edges[:-1, None] + 0.5 * h * (x[None, :] + 1.0)
        dens = spec.b(nodes) * np.sin(nodes) ** (spec.dimension - 2)
        cell = 0.5 * h * dens @ w
        if not np.all(np.isfinite(cell)) or cell.sum() <= 0:
            raise KernelAssumptionError("angular table build failed")
        self.edges = edges
        self.cdf = np.concatenate([[0.0], np.cumsum(cell)]) / cell.sum()

    def theta(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in [0, 1) to deflection angles (piecewise-uniform within table cells)."""
        i = np.clip(np.searchsorted(self.cdf, u, side="right") - 1, 0, self.edges.size - 2)
        lo, hi = self.cdf[i], self.cdf[i + 1]
        frac = np.where(hi > lo, (u - lo) / np.where(hi > lo, hi - lo, 1.0), 0.5)
        return self.edges[i] + frac * (self.edges[i + 1] - self.edges[i])

    def sigma(self, n: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Scattering directions around unit rows ``n`` from uniforms ``u`` of shape ``(P, N)``."""
        theta = self.theta(u[:, 0])
        basis = orthonormal_complement(n)
        if self.dimension == 2:
            omega = basis[:, 0, :] * np.where(u[:, 1] < 0.5, 1.0, -1.0)[:, None]
        else:
            g = ndtri(np.clip(u[:, 1 : self.dimension], 1e-300, 1.0 - 1e-16))
            omega = np.einsum("pk,pkn->pn", g, basis)
            omega /= np.linalg.norm(omega, axis=1, keepdims=True)
        return np.cos(theta)[:, None] * n + np.sin(theta)[:, None] * omega


@lru_cache(maxsize=32)
def angular_sampler(spec: KernelSpec) -> AngularSampler:
    return AngularSampler(spec)


def sample_sigma(spec: KernelSpec, rng: np.random.Generator, n=None, size: Optional[int] = None) -> np.ndarray:
    """Random scattering direction(s) about ``n`` (default ``e1``)."""
    sampler = angular_sampler(spec)
    m = 1 if size is None else size
    if n is None:
        n = np.zeros(spec.dimension)
        n[0] = 1.0
    nn = np.broadcast_to(np.asarray(n, dtype=float), (m, spec.dimension))
    out = sampler.sigma(np.ascontiguousarray(nn), rng.random((m, spec.dimension)))
    return out[0] if size is None else out


def majorant(state: SimState, spec: KernelSpec, rate_a0: Optional[float] = None) -> float:
    """Upper bound on the pair collision rate; ``rate_a0`` replaces ``A0`` to share one bound across kernels."""
    a0 = constants(spec).A0 if rate_a0 is None else rate_a0
    return a0 * float(spec.kinetic(2.0 * state.v_max))


def auto_dt(state: SimState, spec: KernelSpec, rate_a0: Optional[float] = None) -> float:
    """Step giving on average ``CANDIDATE_FRACTION * count`` candidate pairs."""
    lam = majorant(state, spec, rate_a0)
    if lam <= 0:
        return math.inf
    return 2.0 * CANDIDATE_FRACTION * state.count / ((state.count - 1) * state.mass * lam)


def _collide_block(vel: np.ndarray, i: np.ndarray, j: np.ndarray, u: np.ndarray, spec: KernelSpec, a0: float, lam: float):
    """Accept/reject one block of disjoint pairs and apply the accepted collisions in place.

    The deflection angle reuses the acceptance uniform: given acceptance, ``u / prob`` is
    uniform and is read as the angular mass above the angle, counted from ``theta = pi``.
    Kernels that agree away from grazing angles therefore produce identical large-angle
    collisions under a shared majorant.
    """
    z = vel[i] - vel[j]
    r = np.sqrt(np.sum(z * z, axis=1))
    prob = a0 * spec.kinetic(r) / lam
    if prob.size and np.max(prob) > 1.0 + 1e-12:
        return None
    acc = u[:, 0] < prob
    if not np.any(acc):
        return 0
    ia, ja, ra = i[acc], j[acc], r[acc]
    n = z[acc] / ra[:, None]
    tail = u[acc, 0] / prob[acc]
    sig = angular_sampler(spec).sigma(n, np.column_stack([1.0 - tail, u[acc, 1:]]))
    center = 0.5 * (vel[ia] + vel[ja])
    half = 0.5 * ra[:, None] * sig
    vel[ia] = center + half
    vel[ja] = center - half
    return int(acc.sum())


def step(
    state: SimState, dt: float, spec: KernelSpec, threads: int = 1, refresh: bool = True, rate_a0: Optional[float] = None
) -> SimState:
    """Advance ``state`` in place by ``dt`` (sub-stepping when the candidate load is too high)."""
    a0 = constants(spec).A0
    np_ = state.count
    lam = majorant(state, spec, rate_a0)
    mean = (np_ - 1) * state.mass * lam * dt / 2.0
    cap = CANDIDATE_FRACTION * np_
    if mean > cap:
        sub = int(math.ceil(mean / cap))
        for _ in range(sub):
            step(state, dt / sub, spec, threads, refresh, rate_a0)
        return state
    for _attempt in range(2):
        rng = np.random.default_rng(np.random.SeedSequence([state.seed, state.step_index]))
        m = int(min(poisson.ppf(rng.random(), mean), np_ // 2)) if mean > 0 else 0
        perm = rng.permutation(np_)
        pairs_i, pairs_j = perm[:m], perm[m : 2 * m]
        bounds = np.linspace(0, m, threads + 1).astype(int)
        blocks = []
        for part in range(threads):
            lo, hi = bounds[part], bounds[part + 1]
            prng = np.random.default_rng(np.random.SeedSequence([state.seed, state.step_index, part + 1]))
            blocks.append((pairs_i[lo:hi], pairs_j[lo:hi], prng.random((hi - lo, spec.dimension))))
        trial = state.velocities.copy()
        if threads == 1:
            results = [_collide_block(trial, i, j, u, spec, a0, lam) for i, j, u in blocks]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda b: _collide_block(trial, b[0], b[1], b[2], spec, a0, lam), blocks))
        if all(r is not None for r in results):
            state.velocities = trial
            state.candidates += m
            state.accepted += sum(results)
            break
        # stale majorant: recompute the speed bound and redraw this step
        state.refresh()
        lam = majorant(state, spec, rate_a0)
        mean = (np_ - 1) * state.mass * lam * dt / 2.0
    else:
        raise RuntimeError("majorant refresh did not restore acceptance probabilities <= 1")
    state.time += dt
    state.step_index += 1
    if refresh:
        state.refresh()
    return state


@dataclass
class MomentSeries:
    rows: list = field(default_factory=list)
    final_state: Optional[SimState] = None
    initial_state: Optional[SimState] = None
    analytic_dirac: bool = False

    HEADER = ("t", "s", "moment", "envelope")

    def times(self) -> np.ndarray:
        return np.unique([r[0] for r in self.rows])

    def moments(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        sel = [(r[0], r[2]) for r in self.rows if r[1] == s]
        return np.array([a for a, _ in sel]), np.array([b for _, b in sel])

    def envelopes(self, s: float) -> np.ndarray:
        return np.array([np.nan if r[3] is None else r[3] for r in self.rows if r[1] == s])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for t, s, m, e in self.rows:
            w.writerow([repr(float(t)), repr(float(s)), repr(float(m)), "" if e is None else repr(float(e))])
        return buf.getvalue()


def record_times(t_end: float, interval: Optional[float]) -> np.ndarray:
    if t_end == 0:
        return np.array([0.0])
    if interval is None:
        interval = t_end / 100.0
    k = int(math.floor(t_end / interval + 1e-9))
    ts = interval * np.arange(k + 1)
    if t_end - ts[-1] > 1e-12 * t_end:
        ts = np.append(ts, t_end)
    return ts


def _record(series: MomentSeries, state: SimState, orders: Sequence[float], envs: dict) -> None:
    for s in orders:
        env = envs.get(s)
        value = None if env is None or state.time <= 0 else env.evaluate(state.time)
        series.rows.append((state.time, float(s), state.moment(s), value))


def simulate(state: SimState, config: SimConfig, until: float, series: Optional[MomentSeries] = None, envs: Optional[dict] = None) -> SimState:
    """Advance ``state`` to time ``until``, recording moments at the configured times."""
    spec = config.kernel
    envs = envs or {}
    targets = [t for t in record_times(config.t_end, config.record_interval) if t > state.time + 1e-12 and t <= until + 1e-12]
    if until > state.time + 1e-12 and (not targets or abs(targets[-1] - until) > 1e-12):
        targets.append(until)
    for target in targets:
        while state.time < target - 1e-12:
            dt = config.dt if config.dt is not None else auto_dt(state, spec, config.majorant_a0)
            dt = min(dt, target - state.time)
            refresh = (state.step_index + 1) % config.majorant_refresh == 0
            step(state, dt, spec, config.threads, refresh, config.majorant_a0)
        state.time = target
        if series is not None:
            _record(series, state, config.record_moments, envs)
        log.info("t=%.6g accepted=%d candidates=%d", state.time, state.accepted, state.candidates)
    return state


def run(source: Source, config: SimConfig) -> MomentSeries:
    """Simulate from ``source`` to ``config.t_end``, recording moments (and envelopes if requested)."""
    series = MomentSeries()
    try:
        state = init(source, config)
    except DiracSourceError as dirac:
        series.analytic_dirac = True
        for t in record_times(config.t_end, config.record_interval):
            for s in config.record_moments:
                series.rows.append((float(t), float(s), dirac.mass * float(bracket(dirac.velocity, s)), None))
        return series
    series.initial_state = state.copy()
    envs = {}
    if config.envelope:
        a2 = constants(config.kernel).A2
        e2 = state.moment(2.0)
        envs = {s: moment_production_envelope(state.mass, e2, a2, config.kernel.gamma, s) for s in config.record_moments}
    _record(series, state, config.record_moments, envs)
    simulate(state, config, config.t_end, series, envs)
    series.final_state = state
    return series


def conservation_drift(initial: SimState, final: SimState) -> dict[str, float]:
    """Relative drift of mass, momentum (scaled by ``sqrt(mass * energy)``) and energy."""
    m0, p0, e0 = conserved_triple(initial.measure())
    m1, p1, e1 = conserved_triple(final.measure())
    scale = math.sqrt(max(m0 * e0, 0.0)) or 1.0
    return {
        "mass": abs(m1 - m0) / m0,
        "momentum": float(np.linalg.norm(p1 - p0)) / scale,
        "energy": abs(e1 - e0) / (e0 if e0 > 0 else 1.0),
    }


def standard_error(state: SimState, values: np.ndarray) -> float:
    """Monte-Carlo standard error of ``weight * sum(values)`` as an estimate of its mean-field limit."""
    return state.mass * float(np.std(values, ddof=1)) / math.sqrt(state.count)


def moment_standard_error(state: SimState, s: float) -> float:
    return standard_error(state, bracket(state.velocities, s))
