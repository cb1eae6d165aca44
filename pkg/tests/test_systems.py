import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualbarrier.systems import (
    ArcsineMeasure,
    DiscreteMeasure,
    DomainError,
    IndexOrdering,
    TruncationPlan,
    UniformMeasure,
    UnivariateBasis,
    build_constructive_system,
    build_frame_system,
    build_threshold_system,
    chebyshev_1d,
    christoffel_density,
    christoffel_sample,
    default_c_eta,
    discrete_system,
    legendre_1d,
    lower_gram,
    tensor_evaluate,
    uniform_bound_constant,
    whiten,
)

FOURIER = UnivariateBasis("fourier")
LEGENDRE = UnivariateBasis("legendre")
CHEBYSHEV = UnivariateBasis("chebyshev")


def quad_rule(basis, order=64):
    if basis.family == "fourier":
        # equispaced nodes integrate trigonometric polynomials of degree < order exactly
        x = np.arange(order) / order
        return x, np.full(order, 1.0 / order)
    nodes, w = basis.measure().quadrature(order)
    return nodes[:, 0], w


class TestBases:
    @pytest.mark.parametrize("basis", [FOURIER, LEGENDRE, CHEBYSHEV], ids=lambda b: b.family)
    def test_orthonormal(self, basis):
        order = IndexOrdering("univariate", 1, basis.integer_frequencies)
        idx = order.first(33)
        x, w = quad_rule(basis, 128 if basis.family == "fourier" else 64)
        V = tensor_evaluate(basis, idx, x)
        G = (V.T * w) @ V.conj()
        assert np.max(np.abs(G - np.eye(33))) < 1e-8

    def test_fourier_constant(self):
        assert tensor_evaluate(FOURIER, [[0]], [0.37])[0, 0] == 1.0

    def test_legendre_endpoint(self):
        assert tensor_evaluate(LEGENDRE, [[1]], [1.0])[0, 0] == pytest.approx(math.sqrt(3.0))

    def test_chebyshev_endpoint(self):
        assert tensor_evaluate(CHEBYSHEV, [[2]], [1.0])[0, 0] == pytest.approx(math.sqrt(2.0))

    def test_legendre_recurrence_against_closed_form(self):
        x = np.linspace(0, 1, 11)
        P = legendre_1d(x, 3)
        t = 2 * x - 1
        assert np.allclose(P[:, 2], math.sqrt(5) * 0.5 * (3 * t ** 2 - 1))
        assert np.allclose(P[:, 3], math.sqrt(7) * 0.5 * (5 * t ** 3 - 3 * t))

    def test_legendre_stable_high_degree(self):
        x = np.linspace(0, 1, 101)
        P = legendre_1d(x, 1000)
        assert np.all(np.isfinite(P))
        assert P[-1, 1000] == pytest.approx(math.sqrt(2001), rel=1e-10)

    def test_chebyshev_values(self):
        x = np.array([0.0, 0.25, 0.5])
        T = chebyshev_1d(x, 2)
        assert np.allclose(T[:, 1], math.sqrt(2) * (2 * x - 1))

    def test_tensor_product(self):
        X = np.array([[0.2, 0.7]])
        v = tensor_evaluate(LEGENDRE, [[1, 2]], X)[0, 0]
        assert v == pytest.approx(legendre_1d([0.2], 1)[0, 1] * legendre_1d([0.7], 2)[0, 2])

    def test_theta_validation(self):
        with pytest.raises(ValueError):
            UnivariateBasis("fourier", theta=0.25)
        with pytest.raises(ValueError):
            UnivariateBasis("haar")


class TestUniformBound:
    x = np.linspace(0.0, 1.0, 2048)

    def partial_sums(self, basis, ell_max):
        order = IndexOrdering("univariate", 1, basis.integer_frequencies)
        V = np.abs(tensor_evaluate(basis, order.first(ell_max), self.x)) ** 2
        return np.cumsum(V, axis=1)

    def test_fourier_equality(self):
        S = self.partial_sums(FOURIER, 64)
        assert np.allclose(S, np.arange(1, 65)[None, :])

    @pytest.mark.parametrize("basis", [FOURIER, CHEBYSHEV, LEGENDRE], ids=lambda b: b.family)
    def test_declared_constants(self, basis):
        order = IndexOrdering("univariate", 1, basis.integer_frequencies)
        c = default_c_eta(basis, order, 64)
        S = self.partial_sums(basis, 64)
        ell = np.arange(1, 65)
        assert np.all(S <= c ** 2 * ell[None, :] ** (2 * basis.theta) * (1 + 1e-12))

    def test_legendre_constant_is_measured(self):
        order = IndexOrdering("univariate", 1)
        measured = uniform_bound_constant(LEGENDRE, order, 64)
        # sum_{k<l} (2k+1) = l^2 at x = 1
        assert measured == pytest.approx(1.0, rel=1e-12)
        assert default_c_eta(LEGENDRE, order, 64) == pytest.approx(1.05 * measured)

    def test_tensor_chebyshev_constant(self):
        order = IndexOrdering("isotropic", 2)
        c = default_c_eta(CHEBYSHEV, order, 50)
        assert c == pytest.approx(2.0)
        assert uniform_bound_constant(CHEBYSHEV, order, 50, grid=1024, theta=0.5) <= c + 1e-12


class TestOrderings:
    def test_isotropic_sigma(self):
        o = IndexOrdering("isotropic", 2, True)
        assert o.sigma([[0, 0]])[0] == 1.0
        assert o.sigma([[1, -2]])[0] == pytest.approx(2 * math.pi * 5)

    def test_mixed_sigma(self):
        o = IndexOrdering("mixed", 2, True)
        assert o.sigma([[0, 3]])[0] == pytest.approx(6 * math.pi)
        assert o.sigma([[2, -3]])[0] == pytest.approx((4 * math.pi) * (6 * math.pi))

    @pytest.mark.parametrize("kind,dim,integer", [("isotropic", 2, True), ("mixed", 2, True),
                                                  ("isotropic", 2, False), ("mixed", 2, False),
                                                  ("univariate", 1, True), ("univariate", 1, False)])
    def test_nested_sets(self, kind, dim, integer):
        o = IndexOrdering(kind, dim, integer)
        full = o.first(10 ** 4)
        assert full.shape == (10 ** 4, dim)
        assert len({tuple(r) for r in full}) == 10 ** 4
        sig = o.sigma(full)
        assert np.all(np.diff(sig) >= 0)
        for ell in [1, 2, 7, 50, 333, 2048, 9999]:
            assert np.array_equal(o.first(ell), full[:ell])

    def test_lexicographic_ties(self):
        o = IndexOrdering("univariate", 1, True)
        assert o.first(5)[:, 0].tolist() == [0, -1, 1, -2, 2]

    def test_invalid(self):
        with pytest.raises(ValueError):
            IndexOrdering("univariate", 2)
        with pytest.raises(ValueError):
            IndexOrdering("isotropic", 3)


class TestTruncationPlan:
    def test_example(self):
        p = TruncationPlan(0.5, 1.0, 4)
        assert (p.N, p.t) == (16, 0.75)

    def test_single_function(self):
        p = TruncationPlan(0.5, 2.0, 1)
        assert (p.N, p.t) == (1, 1.25)
        s = build_constructive_system(FOURIER, IndexOrdering(), p)
        assert s.m == 1 and s.N == 0

    def test_rejects_alpha0(self):
        with pytest.raises(ValueError):
            TruncationPlan(0.5, 0.5, 4)

    def test_trace_matches_direct_sum(self):
        p = TruncationPlan(0.5, 1.0, 4)
        s = build_constructive_system(FOURIER, IndexOrdering(), p)
        direct = sum(k ** -1.5 for k in range(5, 17))
        assert s.trace_j == pytest.approx(direct, rel=1e-14)
        assert p.trace_tail == pytest.approx(direct, rel=1e-14)
        assert p.lambda_m == pytest.approx(5 ** -1.5)

    def test_invariants(self):
        for m in range(1, 40):
            p = TruncationPlan(0.5, 1.3, m)
            assert p.t > 0.5 and p.N >= m
            assert p.N == math.ceil(m ** (1.3 / 0.8) - 1e-9)


class TestSystems:
    def test_constructive_structure(self):
        p = TruncationPlan(0.5, 1.0, 4)
        s = build_constructive_system(FOURIER, IndexOrdering(), p)
        assert (s.m, s.N) == (4, 12)
        assert np.allclose(s.j_diag, np.arange(5, 17) ** -1.5)
        a, b = s.evaluate([[0.3]])
        idx = IndexOrdering("univariate", 1, True).first(16)
        assert np.allclose(b[0], np.exp(2j * np.pi * idx[4:, 0] * 0.3) * np.arange(5, 17) ** -0.75)

    def test_adjoined_constant(self):
        p = TruncationPlan(0.5, 1.0, 4)
        s = build_constructive_system(FOURIER, IndexOrdering(), p, adjoin_constant=True)
        assert s.N == 13
        assert s.j_diag[0] == pytest.approx(p.lambda_m)
        assert s.upper([[0.9]])[0, 0] == pytest.approx(math.sqrt(p.lambda_m))

    def test_missing_constant(self):
        from dualbarrier.systems import _check_constant

        with pytest.raises(ValueError, match="constant"):
            _check_constant(np.array([[1], [2]]))

    def test_domain_violation(self):
        s = build_frame_system(LEGENDRE, IndexOrdering(), 3, 6)
        with pytest.raises(DomainError):
            s.evaluate([[1.5]])
        with pytest.raises(DomainError):
            s.evaluate(np.zeros((2, 2)))

    def test_threshold_system(self):
        s = build_threshold_system(CHEBYSHEV, IndexOrdering("isotropic", 2), 100.0, 1000.0)
        o = IndexOrdering("isotropic", 2)
        assert s.m == int(np.sum(o.sigma(o.below(100.0)) <= 100.0))
        assert s.j_diag[0] == 1.0 and np.all(s.j_diag[1:] <= (1 / 100.0) ** 2)

    def test_frame_scalings(self):
        s = build_frame_system(FOURIER, IndexOrdering(), 3, 10, scaling="unit")
        assert np.all(s.j_diag == 1.0)
        s = build_frame_system(FOURIER, IndexOrdering(), 3, 10, scaling="inverse_sigma",
                               include_constant=True)
        assert s.N == 8 and s.j_diag[0] == 1.0


class TestWhiten:
    def make(self, rng, gram=None):
        nodes = np.linspace(0, 1, 30)
        T = rng.standard_normal((3, 3))
        Araw = legendre_1d(nodes, 2) @ T.T
        return discrete_system(Araw, whiten_lower=False), Araw

    def test_identity_noop(self):
        s = build_frame_system(FOURIER, IndexOrdering(), 3, 6)
        w = whiten(s, np.eye(3))
        assert np.allclose(w.whitening, np.eye(3))

    def test_diagonal(self):
        s = build_frame_system(LEGENDRE, IndexOrdering(), 2, 4)
        w = whiten(s, np.diag([4.0, 1.0]))
        assert np.allclose(w.whitening, np.diag([0.5, 1.0]))

    def test_random_gram_whitened(self, rng):
        s, _ = self.make(rng)
        w = whiten(s)
        G = lower_gram(w, raw=False)
        assert np.max(np.abs(G - np.eye(3))) < 1e-10
        assert w.is_whitened()

    def test_idempotent(self, rng):
        s, _ = self.make(rng)
        w = whiten(s)
        again = whiten(w)
        assert np.max(np.abs(again.whitening - w.whitening)) < 1e-10
        assert np.max(np.abs(lower_gram(again, raw=False) - np.eye(3))) < 1e-10

    def test_not_positive_definite(self):
        s = build_frame_system(FOURIER, IndexOrdering(), 2, 4)
        with pytest.raises(ValueError, match="smallest eigenvalue -1"):
            whiten(s, np.diag([1.0, -1.0]))

    def test_polynomial_quadrature_gram(self):
        s = build_frame_system(LEGENDRE, IndexOrdering(), 5, 8)
        assert np.max(np.abs(lower_gram(s) - np.eye(5))) < 1e-12


class TestDiscrete:
    def test_j_diagonal_sorted(self, rng):
        A = rng.standard_normal((20, 2))
        B = rng.standard_normal((20, 4)) @ rng.standard_normal((4, 4))
        s = discrete_system(A, B)
        assert np.all(np.diff(s.j_diag) <= 0)
        b = s.upper(s.measure.nodes)
        J = (b.T * s.measure.probs) @ b.conj()
        assert np.allclose(J, np.diag(s.j_diag), atol=1e-12)

    def test_rank_deficient_upper_projected(self, rng):
        A = rng.standard_normal((20, 2))
        B = rng.standard_normal((20, 2))
        s = discrete_system(A, np.hstack([B, B]))
        assert s.N == 2

    def test_adjoin_requires_mean_zero(self, rng):
        A = rng.standard_normal((20, 2))
        with pytest.raises(ValueError, match="mean-zero"):
            discrete_system(A, np.ones((20, 1)), adjoin_constant=True)

    def test_measure_lookup(self):
        mu = DiscreteMeasure([0.0, 0.5, 1.0])
        assert mu.index([[0.5]]).tolist() == [1]
        with pytest.raises(DomainError):
            mu.index([[0.2]])
        with pytest.raises(ValueError):
            DiscreteMeasure([0.0, 0.0])


class TestChristoffel:
    def test_fourier_no_rejections(self, rng):
        s = build_frame_system(FOURIER, IndexOrdering("isotropic", 2), 9, 20)
        X, rej = christoffel_sample(s, rng, 500)
        assert rej == 0 and X.shape == (500, 2)
        assert np.allclose(christoffel_density(s, X), 1.0)

    def test_constant_family_rejection_rate(self, rng):
        # envelope is c_eta^2 = 1.05^2 against a flat density of 1
        s = build_frame_system(LEGENDRE, IndexOrdering(), 1, 3)
        X, rej = christoffel_sample(s, rng, 2000)
        assert rej / (rej + 2000) == pytest.approx(1 - 1 / 1.05 ** 2, abs=0.03)

    @pytest.mark.parametrize("basis,order", [(LEGENDRE, IndexOrdering()),
                                             (CHEBYSHEV, IndexOrdering("isotropic", 2))])
    def test_density_integrates_to_one(self, basis, order):
        s = build_frame_system(basis, order, 6, 10)
        nodes, w = s.measure.quadrature(64)
        assert w @ christoffel_density(s, nodes) == pytest.approx(1.0, abs=1e-8)

    def test_chebyshev_histogram(self):
        s = build_frame_system(CHEBYSHEV, IndexOrdering(), 2, 4)
        rng = np.random.default_rng(2024)
        size = 10 ** 4
        X, _ = christoffel_sample(s, rng, size)
        edges = np.linspace(0, 1, 21)
        counts, _ = np.histogram(X[:, 0], edges)
        # bin probabilities under rho: arcsine CDF weighted by (1 + 2 (2x-1)^2)/2
        nodes, w = ArcsineMeasure().quadrature(4000)
        dens = christoffel_density(s, nodes)
        probs = np.array([np.sum((w * dens)[(nodes[:, 0] >= lo) & (nodes[:, 0] < hi)])
                          for lo, hi in zip(edges[:-1], edges[1:])])
        band = 3 * np.sqrt(size * probs * (1 - probs))
        assert np.all(np.abs(counts - size * probs) <= band)

    def test_broken_envelope(self, rng):
        s = build_frame_system(LEGENDRE, IndexOrdering(), 4, 6)
        s.christoffel_bound = 1e-9
        with pytest.raises(RuntimeError, match="envelope"):
            christoffel_sample(s, rng, 5, max_rejections=1000)


@given(st.integers(1, 3000))
def test_measures_sample_in_domain(seed):
    rng = np.random.default_rng(seed)
    for mu in (UniformMeasure(2), ArcsineMeasure(1)):
        X = mu.sample(rng, 10)
        assert np.all(mu.contains(X))
