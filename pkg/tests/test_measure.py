import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from measboltz.measure import (
    DictionaryEntry,
    DiscreteMeasure,
    ExponentOverflowError,
    SignedMeasure,
    TestDictionary,
    absolute,
    conserved_triple,
    default_dictionary,
    dictionary_distance,
    exchange_symmetry_check,
    exponential_moment,
    from_csv,
    from_json,
    jordan_decompose,
    moment_norm,
    product_difference,
    psi_localization,
    tv_identity_check,
)

E1 = [1.0, 0.0, 0.0]

coords = st.floats(-5, 5, allow_nan=False).map(lambda x: round(x, 3))


def measures(dim=3, max_atoms=6, signed=False):
    w = st.floats(-2, 2, allow_nan=False) if signed else st.floats(0, 2, allow_nan=False)
    return st.integers(1, max_atoms).flatmap(
        lambda k: st.tuples(
            arrays(float, (k, dim), elements=coords),
            arrays(float, (k,), elements=w),
        )
    ).map(lambda t: (SignedMeasure if signed else DiscreteMeasure)(dim, t[0], t[1]))


class TestMomentNorm:
    def test_unit_atom_at_origin(self):
        mu = DiscreteMeasure(3, [[0.0, 0.0, 0.0]], [1.0])
        for s in (0.0, 1.0, 2.5, 7.0):
            assert moment_norm(mu, s) == 1.0

    def test_single_atom(self):
        assert moment_norm(DiscreteMeasure(3, [E1], [2.0]), 2) == pytest.approx(4.0, rel=1e-15)

    def test_two_atoms(self):
        mu = DiscreteMeasure(3, [E1, [0.0, 2.0, 0.0]], [1.0, 0.5])
        assert moment_norm(mu, 2) == pytest.approx(4.5, rel=1e-15)

    def test_empty(self):
        assert moment_norm(DiscreteMeasure.empty(3), 4) == 0.0

    def test_infinite_order_rejected(self):
        with pytest.raises(ValueError):
            moment_norm(DiscreteMeasure(3, [E1], [1.0]), math.inf)

    @given(measures(), st.floats(0, 6), st.floats(0, 6))
    def test_monotone_in_order(self, mu, s, t):
        lo, hi = sorted((s, t))
        assert moment_norm(mu, lo) <= moment_norm(mu, hi) * (1 + 1e-12)

    @given(measures(), st.floats(0, 5))
    def test_zero_order_is_mass(self, mu, _s):
        assert moment_norm(mu, 0) == pytest.approx(float(np.sum(mu.weights)), rel=1e-12, abs=1e-300)

    @given(measures(), st.floats(2, 8), st.floats(0, 1))
    def test_holder_interpolation(self, mu, s, frac):
        if s == 2 or moment_norm(mu, 0) == 0:
            return
        r = 2 + frac * (s - 2)
        bound = moment_norm(mu, 2) ** ((s - r) / (s - 2)) * moment_norm(mu, s) ** ((r - 2) / (s - 2))
        assert moment_norm(mu, r) <= bound * (1 + 1e-9)

    @given(measures(max_atoms=4))
    def test_merging_preserves_moments(self, mu):
        doubled = DiscreteMeasure(3, np.vstack([mu.velocities, mu.velocities]), np.concatenate([mu.weights, mu.weights]) / 2)
        merged = doubled.merged()
        for s in (0, 1, 2, 3.5):
            assert moment_norm(merged, s) == pytest.approx(moment_norm(mu, s), rel=1e-12, abs=1e-300)


class TestConservedTriple:
    def test_origin(self):
        m, p, e = conserved_triple(DiscreteMeasure(3, [[0, 0, 0]], [1.0]))
        assert (m, e) == (1.0, 0.0) and np.all(p == 0)

    def test_symmetric_pair(self, two_atom):
        m, p, e = conserved_triple(two_atom)
        assert m == 1.0 and np.all(p == 0) and e == 1.0

    @given(measures(), st.floats(0.1, 10))
    def test_linearity(self, mu, c):
        m, p, e = conserved_triple(mu)
        mc, pc, ec = conserved_triple(mu.scaled(c))
        assert mc == pytest.approx(c * m, rel=1e-12, abs=1e-300)
        assert ec == pytest.approx(c * e, rel=1e-12, abs=1e-300)
        np.testing.assert_allclose(pc, c * p, rtol=1e-12, atol=1e-12)


class TestValidation:
    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            DiscreteMeasure(3, [E1], [-1.0])

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ValueError):
            DiscreteMeasure(3, [[1.0, 0.0]], [1.0])

    def test_immutable(self, two_atom):
        with pytest.raises(ValueError):
            two_atom.weights[0] = 3.0


class TestJordan:
    def test_single_negative_atom(self):
        pos, neg = jordan_decompose(SignedMeasure(3, [E1], [-3.0]))
        assert len(pos) == 0 and neg.atoms() == [(tuple(E1), 3.0)]

    def test_merge_then_split(self):
        pos, neg = jordan_decompose(SignedMeasure(3, [E1, E1], [2.0, -5.0]))
        assert len(pos) == 0 and neg.atoms() == [(tuple(E1), 3.0)]

    def test_all_positive(self, two_atom):
        pos, neg = jordan_decompose(SignedMeasure(3, two_atom.velocities, two_atom.weights))
        assert len(neg) == 0 and sorted(pos.atoms()) == sorted(two_atom.merged().atoms())

    @given(measures(signed=True))
    def test_minimality_and_disjointness(self, mu):
        pos, neg = jordan_decompose(mu)
        merged = mu.merged()
        assert moment_norm(merged, 0) == pytest.approx(moment_norm(pos, 0) + moment_norm(neg, 0), rel=1e-12, abs=1e-300)
        assert not {tuple(v) for v in pos.velocities} & {tuple(v) for v in neg.velocities}
        back = (pos - neg).merged()
        np.testing.assert_allclose(back.integrate(lambda v: v[:, 0] + 2 * v[:, 1]), merged.integrate(lambda v: v[:, 0] + 2 * v[:, 1]), atol=1e-9)


class TestTotalVariationIdentity:
    def test_equal_measures(self, two_atom):
        assert tv_identity_check(two_atom, two_atom)
        assert len(absolute(two_atom - two_atom)) == 0

    def test_two_diracs(self):
        a = DiscreteMeasure(3, [E1], [1.0])
        b = DiscreteMeasure(3, [[0.0, 1.0, 0.0]], [1.0])
        assert tv_identity_check(a, b)
        assert moment_norm(absolute(a - b), 0) == 2.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            tv_identity_check(DiscreteMeasure(3, [E1], [1.0]), DiscreteMeasure(2, [[1.0, 0.0]], [1.0]))

    def test_random_shared_support(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            support = rng.integers(-2, 3, size=(10, 3)).astype(float)
            a = DiscreteMeasure(3, support, rng.uniform(0, 1, 10))
            b = DiscreteMeasure(3, support[rng.permutation(10)], rng.uniform(0, 1, 10))
            assert tv_identity_check(a, b)


class TestPsi:
    def test_zero(self, two_atom):
        assert psi_localization(two_atom, 0.0) == 0.0

    def test_origin_atom(self):
        assert psi_localization(DiscreteMeasure(3, [[0, 0, 0]], [1.0]), 0.001) == pytest.approx(0.101, rel=1e-12)

    def test_tail_term(self):
        mu = DiscreteMeasure(3, [[20.0, 0, 0]], [1.0])
        assert psi_localization(mu, 0.001) == pytest.approx(400.101, rel=1e-12)

    def test_negative_rejected(self, two_atom):
        with pytest.raises(ValueError):
            psi_localization(two_atom, -1.0)

    @given(measures(), st.floats(0, 10), st.floats(0, 10))
    def test_nondecreasing(self, mu, r1, r2):
        lo, hi = sorted((r1, r2))
        assert psi_localization(mu, lo) <= psi_localization(mu, hi) + 1e-12

    def test_continuous_at_zero(self, two_atom):
        vals = [psi_localization(two_atom, 10.0 ** -k) for k in range(2, 30, 3)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-9


class TestExponentialMoment:
    def test_zero_exponent(self, two_atom):
        assert exponential_moment(two_atom, 0.0, 1.0) == 1.0

    def test_origin(self):
        assert exponential_moment(DiscreteMeasure(3, [[0, 0, 0]], [1.0]), 0.5, 1.0) == pytest.approx(math.exp(0.5), rel=1e-14)

    def test_gamma_two(self, two_atom):
        assert exponential_moment(two_atom, 0.5, 2.0) == pytest.approx(math.e, rel=1e-14)

    def test_overflow_cap(self):
        with pytest.raises(ExponentOverflowError):
            exponential_moment(DiscreteMeasure(3, [[800.0, 0, 0]], [1.0]), 1.0, 1.0)


class TestDictionaryDistance:
    def test_sup_norms_dominate_on_grid(self):
        d = default_dictionary(3)
        g = np.linspace(-30, 30, 41)
        grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        grid = np.vstack([grid, np.random.default_rng(0).normal(scale=3, size=(5000, 3))])
        weight = 1.0 + np.sum(grid ** 2, axis=1)
        for e in d.entries:
            assert np.all(np.abs(e.func(grid)) * weight ** (-e.weight_order / 2) <= e.sup_norm * (1 + 1e-12)), e.name

    def test_equal_measures(self, two_atom):
        assert dictionary_distance(two_atom, two_atom) == 0.0

    def test_energy_entry(self):
        d = TestDictionary((DictionaryEntry("b2", lambda v: 1 + np.sum(v * v, axis=1), 2.0, 1.0),))
        F = DiscreteMeasure(3, [[0, 0, 0]], [1.0])
        G = DiscreteMeasure(3, [E1], [1.0])
        assert dictionary_distance(F, G, d) == 1.0
        assert moment_norm(F - G, 2) == 3.0

    def test_constant_entry_gives_mass_difference(self, two_atom):
        d = TestDictionary((DictionaryEntry("one", lambda v: np.ones(v.shape[0]), 0.0, 1.0),))
        assert dictionary_distance(two_atom, two_atom.scaled(3.0), d) == pytest.approx(2.0)

    def test_empty_dictionary(self, two_atom):
        with pytest.raises(ValueError):
            dictionary_distance(two_atom, two_atom, TestDictionary(()))

    @given(measures(), measures())
    def test_lower_bound_of_weighted_norm(self, F, G):
        assert dictionary_distance(F, G) <= moment_norm(F - G, 2) * (1 + 1e-12) + 1e-12


class TestSerialization:
    def test_json_round_trip(self, two_atom):
        doc = json.loads(two_atom.to_json())
        assert doc == {"dimension": 3, "atoms": [[1.0, 0.0, 0.0, 0.5], [-1.0, 0.0, 0.0, 0.5]]}
        back = from_json(two_atom.to_json())
        assert back.atoms() == two_atom.atoms()

    def test_csv_round_trip(self, two_atom):
        text = two_atom.to_csv()
        assert text.splitlines()[0] == "v1,v2,v3,w"
        assert from_csv(text).atoms() == two_atom.atoms()


class TestExchangeSymmetry:
    def test_random_planar_instances(self):
        rng = np.random.default_rng(5)
        psis = [
            lambda v, w: np.sum(v * v, axis=1) * np.exp(-np.sum(w * w, axis=1)),
            lambda v, w: np.cos(v[:, 0] + 2 * w[:, 1]),
            lambda v, w: np.linalg.norm(v - w, axis=1) * (1 + v[:, 0]),
        ]
        for _ in range(1000):
            k1, k2 = rng.integers(1, 6, size=2)
            mu = DiscreteMeasure(2, rng.integers(-2, 3, size=(k1, 2)).astype(float), rng.uniform(0.1, 1, k1))
            nu = DiscreteMeasure(2, rng.integers(-2, 3, size=(k2, 2)).astype(float), rng.uniform(0.1, 1, k2))
            assert exchange_symmetry_check(mu, nu, psis)

    def test_product_measure_is_symmetric(self):
        mu = DiscreteMeasure(2, [[0, 0], [1, 0]], [1.0, 2.0])
        nu = DiscreteMeasure(2, [[0, 1]], [1.5])
        lam = product_difference(mu, nu)
        table = {tuple(v): w for v, w in lam.atoms()}
        for key, w in table.items():
            assert table[key[2:] + key[:2]] == w
        assert sum(table.values()) == pytest.approx(9.0 - 2.25)
