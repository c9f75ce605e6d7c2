"""Atomic measures on velocity space and the algebra used throughout the package.

A measure is a finite list of atoms ``(v_i, w_i)`` in ``R^N``. Positive measures
(:class:`DiscreteMeasure`) stand in for finite-energy velocity distributions;
:class:`SignedMeasure` carries differences of those and supports the Jordan
decomposition.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

EXPONENT_CAP = 700.0


class ExponentOverflowError(OverflowError):
    """Raised when an exponential weight would overflow double precision."""


def bracket(v: np.ndarray, power: float = 1.0) -> np.ndarray:
    """Japanese bracket ``(1 + |v|^2)^(power/2)`` along the last axis."""
    v = np.asarray(v, dtype=float)
    sq = 1.0 + np.sum(v * v, axis=-1)
    return np.sqrt(sq) if power == 1.0 else sq ** (0.5 * power)


def _as_arrays(dimension: int, velocities, weights) -> tuple[np.ndarray, np.ndarray]:
    if dimension < 2:
        raise ValueError(f"dimension must be >= 2, got {dimension}")
    vel = np.asarray(velocities, dtype=float)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if vel.size == 0:
        vel = np.zeros((0, dimension))
    vel = vel.reshape(-1, vel.shape[-1]) if vel.ndim > 1 else vel.reshape(1, -1)
    if vel.shape[1] != dimension:
        raise ValueError(f"velocity length {vel.shape[1]} does not match dimension {dimension}")
    if vel.shape[0] != w.shape[0]:
        raise ValueError("velocities and weights differ in length")
    if not (np.all(np.isfinite(vel)) and np.all(np.isfinite(w))):
        raise ValueError("atoms must be finite")
    vel = vel.copy()
    w = w.copy()
    vel.flags.writeable = False
    w.flags.writeable = False
    return vel, w


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    """Finite atomic measure with real weights."""

    dimension: int
    velocities: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        vel, w = _as_arrays(self.dimension, self.velocities, self.weights)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, dimension: int):
        return cls(dimension, np.zeros((0, dimension)), np.zeros(0))

    @classmethod
    def from_atoms(cls, dimension: int, atoms: Sequence[tuple[Sequence[float], float]]):
        if len(atoms) == 0:
            return cls.empty(dimension)
        vel = [list(v) for v, _ in atoms]
        w = [float(x) for _, x in atoms]
        return cls(dimension, vel, w)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dimension={self.dimension}, atoms={len(self)})"

    def atoms(self) -> list[tuple[tuple[float, ...], float]]:
        return [(tuple(v), float(w)) for v, w in zip(self.velocities, self.weights)]

    def integrate(self, func: Callable[[np.ndarray], np.ndarray]) -> float:
        """Return the integral of a vectorised test function ``func((k, N)) -> (k,)``."""
        if len(self) == 0:
            return 0.0
        return float(np.dot(self.weights, np.asarray(func(self.velocities), dtype=float)))

    def merged(self, snap: float | None = None):
        """Merge atoms with identical velocities (exact comparison unless ``snap`` is given)."""
        if len(self) == 0:
            return self
        vel = self.velocities
        if snap is not None:
            vel = np.round(vel / snap) * snap
        uniq, inverse = np.unique(vel, axis=0, return_inverse=True)
        w = np.bincount(inverse.reshape(-1), weights=self.weights, minlength=uniq.shape[0])
        return type(self)(self.dimension, uniq, w)

    def scaled(self, c: float):
        return type(self)(self.dimension, self.velocities, c * self.weights)

    def __add__(self, other: SignedMeasure) -> SignedMeasure:
        _check_dims(self, other)
        # merge each side first so equal operands produce bit-identical partial sums
        a, b = self.merged(), other.merged()
        return SignedMeasure(
            self.dimension,
            np.concatenate([a.velocities, b.velocities]),
            np.concatenate([a.weights, b.weights]),
        ).merged()

    def __neg__(self) -> SignedMeasure:
        return SignedMeasure(self.dimension, self.velocities, -self.weights)

    def __sub__(self, other: SignedMeasure) -> SignedMeasure:
        return self + (-SignedMeasure(other.dimension, other.velocities, other.weights))

    def to_json(self) -> str:
        return json.dumps(to_document(self))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"v{i + 1}" for i in range(self.dimension)] + ["w"])
        for v, w in zip(self.velocities, self.weights):
            writer.writerow([repr(float(x)) for x in v] + [repr(float(w))])
        return buf.getvalue()


@dataclass(frozen=True, eq=False, repr=False)
class DiscreteMeasure(SignedMeasure):
    """Finite atomic measure with nonnegative weights."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.weights < 0):
            raise ValueError("DiscreteMeasure weights must be nonnegative")

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))


def _check_dims(a: SignedMeasure, b: SignedMeasure) -> None:
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")


def to_document(mu: SignedMeasure) -> dict:
    return {
        "dimension": mu.dimension,
        "atoms": [[float(x) for x in v] + [float(w)] for v, w in zip(mu.velocities, mu.weights)],
    }


def from_document(doc: dict, signed: bool = False) -> SignedMeasure:
    dim = int(doc["dimension"])
    rows = np.asarray(doc["atoms"], dtype=float).reshape(-1, dim + 1)
    cls = SignedMeasure if signed else DiscreteMeasure
    return cls(dim, rows[:, :dim], rows[:, dim])


def from_json(text: str, signed: bool = False) -> SignedMeasure:
    return from_document(json.loads(text), signed=signed)


def from_csv(text: str, signed: bool = False) -> SignedMeasure:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    dim = len(header) - 1
    if header != [f"v{i + 1}" for i in range(dim)] + ["w"]:
        raise ValueError(f"unexpected measure CSV header {header}")
    rows = np.asarray([[float(x) for x in r] for r in reader if r], dtype=float).reshape(-1, dim + 1)
    cls = SignedMeasure if signed else DiscreteMeasure
    return cls(dim, rows[:, :dim], rows[:, dim])


def moment_norm(mu: SignedMeasure, s: float) -> float:
    """Weighted total variation ``sum |w_i| <v_i>^s``."""
    if not np.isfinite(s):
        raise ValueError("moment order must be finite")
    if len(mu) == 0:
        return 0.0
    return float(np.sum(np.abs(mu.weights) * bracket(mu.velocities, s)))


def conserved_triple(mu: SignedMeasure) -> tuple[float, np.ndarray, float]:
    """Mass, momentum vector and kinetic energy ``sum w |v|^2``."""
    w = mu.weights
    v = mu.velocities
    return float(np.sum(w)), w @ v, float(np.dot(w, np.sum(v * v, axis=1)))


def jordan_decompose(mu: SignedMeasure) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    m = mu.merged()
    pos = m.weights > 0
    neg = m.weights < 0
    return (
        DiscreteMeasure(m.dimension, m.velocities[pos], m.weights[pos]),
        DiscreteMeasure(m.dimension, m.velocities[neg], -m.weights[neg]),
    )


def absolute(mu: SignedMeasure) -> DiscreteMeasure:
    m = mu.merged()
    keep = m.weights != 0
    return DiscreteMeasure(m.dimension, m.velocities[keep], np.abs(m.weights[keep]))


def _as_dict(mu: SignedMeasure) -> dict[tuple[float, ...], float]:
    out: dict[tuple[float, ...], float] = {}
    for v, w in zip(mu.velocities, mu.weights):
        key = tuple(float(x) for x in v)
        out[key] = out.get(key, 0.0) + float(w)
    return out


def tv_identity_check(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = 1e-12) -> bool:
    """Check ``|mu - nu| = nu - mu + 2 (mu - nu)^+`` atom by atom."""
    _check_dims(mu, nu)
    diff = mu - nu
    lhs = _as_dict(absolute(diff))
    pos, _ = jordan_decompose(diff)
    rhs = _as_dict(nu - mu + pos.scaled(2.0))
    for key in set(lhs) | set(rhs):
        a = lhs.get(key, 0.0)
        b = rhs.get(key, 0.0)
        if abs(a - b) > tol * max(1.0, abs(a), abs(b)):
            return False
    return True


def psi_localization(mu: DiscreteMeasure, r: float) -> float:
    """Energy localisation functional ``r + r^(1/3) + sum_{|v| > r^(-1/3)} w |v|^2``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    if r == 0:
        return 0.0
    speed2 = np.sum(mu.velocities ** 2, axis=1)
    tail = speed2 > r ** (-2.0 / 3.0)
    return float(r + r ** (1.0 / 3.0) + np.dot(mu.weights[tail], speed2[tail]))


def exponential_moment(mu: DiscreteMeasure, a: float, gamma: float, cap: float = EXPONENT_CAP) -> float:
    """``sum w exp(a <v>^gamma)``; raises when an exponent exceeds ``cap``."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    if len(mu) == 0:
        return 0.0
    expo = a * bracket(mu.velocities, gamma)
    if np.max(expo) > cap:
        raise ExponentOverflowError(f"exponent {np.max(expo):.3g} exceeds cap {cap}")
    return float(np.dot(mu.weights, np.exp(expo)))


@dataclass(frozen=True)
class DictionaryEntry:
    name: str
    func: Callable[[np.ndarray], np.ndarray]
    weight_order: float
    sup_norm: float


@dataclass(frozen=True)
class TestDictionary:
    """Finite family of test functions with known weighted sup norms."""

    __test__ = False  # not a pytest class

    entries: tuple[DictionaryEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return [e.name for e in self.entries]


def default_frequencies(dimension: int) -> np.ndarray:
    rng = np.random.default_rng(8)
    dirs = rng.normal(size=(8, dimension))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * np.array([0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5])[:, None]


def default_dictionary(dimension: int) -> TestDictionary:
    entries = [DictionaryEntry("one", lambda v: np.ones(v.shape[0]), 0.0, 1.0)]
    for i in range(dimension):
        entries.append(DictionaryEntry(f"v{i + 1}", lambda v, i=i: v[:, i], 1.0, 1.0))
    entries.append(DictionaryEntry("speed2", lambda v: np.sum(v * v, axis=1), 2.0, 1.0))
    entries.append(DictionaryEntry("gauss", lambda v: np.exp(-0.5 * np.sum(v * v, axis=1)), 0.0, 1.0))
    for m, xi in enumerate(default_frequencies(dimension)):
        entries.append(DictionaryEntry(f"cos{m}", lambda v, xi=xi: np.cos(v @ xi), 0.0, 1.0))
    return TestDictionary(tuple(entries))


def dictionary_distance(F: SignedMeasure, G: SignedMeasure, dictionary: TestDictionary | None = None) -> float:
    """Weak-distance proxy ``max_phi |int phi d(F - G)| / sup_norm``; never exceeds the weighted norm of order 2."""
    _check_dims(F, G)
    if dictionary is None:
        dictionary = default_dictionary(F.dimension)
    if len(dictionary) == 0:
        raise ValueError("dictionary is empty")
    best = 0.0
    for e in dictionary.entries:
        if e.weight_order > 2:
            raise ValueError(f"entry {e.name} has weight order {e.weight_order} > 2")
        best = max(best, abs(F.integrate(e.func) - G.integrate(e.func)) / e.sup_norm)
    return best


def product_difference(mu: DiscreteMeasure, nu: DiscreteMeasure) -> SignedMeasure:
    """Signed measure ``mu x mu - nu x nu`` on ``R^(2N)``, atoms merged."""
    _check_dims(mu, nu)

    def tensor(m: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
        k = len(m)
        a = np.repeat(m.velocities, k, axis=0)
        b = np.tile(m.velocities, (k, 1))
        return np.hstack([a, b]), np.outer(m.weights, m.weights).reshape(-1)

    va, wa = tensor(mu)
    vb, wb = tensor(nu)
    return SignedMeasure(2 * mu.dimension, np.vstack([va, vb]), np.concatenate([wa, -wb])).merged()


def exchange_symmetry_check(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    psis: Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]],
    tol: float = 1e-12,
) -> bool:
    """Swapping the two velocity slots leaves integrals against the product
    difference, its absolute value and its positive part unchanged."""
    lam = product_difference(mu, nu)
    n = mu.dimension
    pos, _ = jordan_decompose(lam)
    parts = [lam, absolute(lam), pos]
    for psi in psis:
        for part in parts:
            if len(part) == 0:
                continue
            v, vs = part.velocities[:, :n], part.velocities[:, n:]
            direct = np.asarray(psi(v, vs), dtype=float)
            swapped = np.asarray(psi(vs, v), dtype=float)
            a = float(np.dot(part.weights, direct))
            b = float(np.dot(part.weights, swapped))
            scale = max(1.0, float(np.dot(np.abs(part.weights), np.abs(direct))))
            if abs(a - b) > tol * scale:
                return False
    return True
