import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_instance
from dualbarrier.barrier import DenseUpperBarrier, TraceUpperBarrier, WoodburyUpperBarrier
from dualbarrier.systems import (
    IndexOrdering,
    UnivariateBasis,
    build_frame_system,
    discrete_system,
)
from dualbarrier.sparsifier import (
    SelectionConfig,
    SelectionError,
    admissible,
    barrier_params,
    certify,
    choose_weight,
    initialize,
    lower_gram_sum,
    select,
    upper_gram_span,
)


def fourier_frame(m=4, N=12, dim=1, kind="univariate"):
    return build_frame_system(UnivariateBasis("fourier"), IndexOrdering(kind, dim), m, N)


class TestInitialization:
    def test_identity_example(self):
        # m = 2, n = 4 gives r = 1/2, delta = 1/8 and A0 = (delta m / r) I = I/2
        s = discrete_system(np.random.default_rng(0).standard_normal((30, 2)))
        lower, upper, prm = initialize(SelectionConfig(n=4), s)
        assert prm.r == 0.5 and prm.delta == 0.125
        assert np.allclose(lower.A, 0.5 * np.eye(2))

    @pytest.mark.parametrize("m,n,N", [(2, 4, 6), (3, 9, 20), (5, 7, 40), (4, 16, 300)])
    def test_potential_identities(self, m, n, N):
        s = fourier_frame(m, m + N)
        lower, upper, prm = initialize(SelectionConfig(n=n), s)
        assert 1 / prm.delta - lower.potential() == pytest.approx(n, rel=1e-12)
        assert 1 / prm.zeta + upper.potential() == pytest.approx(n, rel=1e-12)

    def test_representation_switch(self):
        _, up, _ = initialize(SelectionConfig(n=8), fourier_frame(4, 30))
        assert isinstance(up, DenseUpperBarrier)
        _, up, _ = initialize(SelectionConfig(n=8, dense_threshold=10), fourier_frame(4, 30))
        assert isinstance(up, WoodburyUpperBarrier)

    def test_edges(self):
        s = fourier_frame(1, 2)
        lower, upper, prm = initialize(SelectionConfig(n=3), s)
        assert prm.lower_edge and prm.upper_edge
        assert isinstance(upper, TraceUpperBarrier)
        assert lower.verify(np.ones((1, 1)))[0] == pytest.approx(3.0)

    def test_n_below_m(self):
        with pytest.raises(ValueError, match="n >= m"):
            barrier_params(2, 3, np.ones(2), lambda r: 0.0)

    def test_not_whitened(self):
        s = discrete_system(np.random.default_rng(0).standard_normal((30, 2)), whiten_lower=False)
        with pytest.raises(ValueError, match="whiten"):
            initialize(SelectionConfig(n=4), s)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SelectionConfig(n=0)
        with pytest.raises(ValueError):
            SelectionConfig(n=2, weight_rule="largest")
        with pytest.raises(ValueError):
            SelectionConfig(n=2, oracle="grid")
        with pytest.raises(ValueError):
            SelectionConfig(n=2, epsilon_mode="loose")

    def test_epsilon_modes(self):
        assert SelectionConfig(n=4).epsilon(0.5) == 0.0
        assert SelectionConfig(n=4, oracle="christoffel").epsilon(0.5) == 0.125
        assert SelectionConfig(n=4, epsilon_mode=0.1).epsilon(0.5) == 0.1
        with pytest.raises(ValueError, match="custom epsilon"):
            SelectionConfig(n=4, epsilon_mode=0.25).epsilon(0.5)

    def test_weight_rules(self):
        assert choose_weight(4.0, 2.0, "minimal") == 0.25
        assert choose_weight(4.0, 2.0, "maximal") == 0.5
        assert choose_weight(4.0, 2.0, "midpoint") == pytest.approx(1 / 3)
        assert choose_weight(4.0, 0.0, "maximal") == 0.25

    def test_admissible(self):
        assert admissible([1.0, 1.0, 0.0, 2.0], [1.0, 1.5, 0.0, np.inf]).tolist() == [
            True, False, False, False]


class TestSelection:
    def test_fifty_point_example(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((50, 3))
        s = discrete_system(A)
        run = select(SelectionConfig(n=9, oracle="finite_scan"), s)
        c = math.sqrt(2 / 9)
        lo = np.linalg.eigvalsh(lower_gram_sum(run.points, run.weights, s, raw=False))
        assert (1 - c) ** 2 - 1e-9 <= lo[0] and lo[-1] <= (1 + c) ** 2 + 1e-9
        assert run.certificate.passed

    def test_single_step(self):
        s = fourier_frame(1, 1)
        run = select(SelectionConfig(n=1, oracle="iid_measure"), s)
        assert run.weights.tolist() == [1.0]
        assert run.certificate.lower_eig == pytest.approx(1.0)

    def test_equal_weights_for_flat_fourier(self):
        s = fourier_frame(4, 4)
        run = select(SelectionConfig(n=8, weight_rule="minimal"), s)
        assert run.certificate.passed
        assert np.all(run.weights > 0)

    @pytest.mark.parametrize("rule", ["minimal", "maximal", "midpoint"])
    def test_sandwich(self, rule, rng):
        s = random_instance(rng, K=80, m=4, N=6, same=False)
        run = select(SelectionConfig(n=10, oracle="finite_scan", weight_rule=rule), s)
        for st_ in run.steps:
            assert st_["U"] - 1e-12 <= 1 / st_["weight"] <= st_["L"] + 1e-12
        assert run.certificate.passed

    def test_relaxed_targets(self):
        s = fourier_frame(5, 20)
        exact = select(SelectionConfig(n=10, epsilon_mode="exact"), s)
        relaxed = select(SelectionConfig(n=10, oracle="christoffel"), s)
        assert relaxed.certificate.target_lower == pytest.approx(0.5 * exact.certificate.target_lower)
        assert relaxed.certificate.passed and exact.certificate.passed

    def test_retesting_reuses_points(self):
        s = fourier_frame(1, 1)
        run = select(SelectionConfig(n=5, retest_previous=True), s)
        assert len(run.points) == 1
        assert sum(st_["retested"] for st_ in run.steps) == 4
        assert run.weights[0] == pytest.approx(sum(st_["weight"] for st_ in run.steps))
        assert run.certificate.passed

    def test_potential_traces(self):
        s = fourier_frame(4, 16)
        run = select(SelectionConfig(n=8), s)
        assert len(run.phi_trace) == len(run.psi_trace) == 9
        for k, st_ in enumerate(run.steps, start=1):
            assert run.phi_trace[k] == pytest.approx(st_["phi_closed_form"], rel=1e-9)
            assert run.psi_trace[k] == pytest.approx(st_["psi_closed_form"], rel=1e-9)

    def test_determinism(self):
        s = fourier_frame(4, 40, dim=2, kind="isotropic")
        a = select(SelectionConfig(n=8, seed=11, batch=512, threads=1), s)
        b = select(SelectionConfig(n=8, seed=11, batch=512, threads=4), s)
        c = select(SelectionConfig(n=8, seed=11, batch=512, threads=1), s)
        assert np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.points, c.points)

    def test_thread_env(self, monkeypatch):
        s = fourier_frame(3, 9)
        base = select(SelectionConfig(n=6, seed=2, batch=64), s)
        monkeypatch.setenv("SUBSAMPLE_THREADS", "3")
        again = select(SelectionConfig(n=6, seed=2, batch=64), s)
        assert np.array_equal(base.points, again.points)

    def test_dense_and_woodbury_agree(self):
        s = fourier_frame(4, 60)
        d = select(SelectionConfig(n=10, seed=5), s)
        w = select(SelectionConfig(n=10, seed=5, dense_threshold=8), s)
        assert w.meta["representation"] == "WoodburyUpperBarrier"
        assert np.array_equal(d.points, w.points)
        assert np.allclose(d.weights, w.weights, rtol=1e-9)

    def test_failure_keeps_partial_run(self):
        s = fourier_frame(4, 12)
        # two candidates can never support four orthonormal functions
        with pytest.raises(SelectionError) as err:
            select(SelectionConfig(n=8, oracle="finite_scan", candidates=[[0.1], [0.6]]), s)
        run = err.value.run
        assert run is not None and len(run.points) == len(run.steps) < 8

    def test_proposal_cap(self):
        s = fourier_frame(4, 12)
        with pytest.raises(SelectionError, match="cap"):
            select(SelectionConfig(n=8, max_proposals=1, batch=1), s)

    def test_snapshots(self):
        s = fourier_frame(3, 9)
        run = select(SelectionConfig(n=7, snapshot_every=3), s)
        assert [sn["iteration"] for sn in run.snapshots] == [3, 6, 7]
        assert select(SelectionConfig(n=7), s).snapshots == []

    def test_observer(self):
        seen = []
        s = fourier_frame(3, 9)
        select(SelectionConfig(n=5), s, observer=lambda i, lo, up: seen.append(i))
        assert seen == list(range(6))


class TestCertify:
    def test_certificate_of_identity_design(self):
        # all K nodes of a discrete Fourier system with weights p_k give the Gram exactly
        K = 8
        x = np.arange(K) / K
        A = np.exp(2j * np.pi * np.outer(x, [0, 1, -1]))
        B = np.exp(2j * np.pi * np.outer(x, [2, -2, 3]))
        s = discrete_system(A, B, nodes=x)
        run = select(SelectionConfig(n=6, oracle="finite_scan"), s)
        run.points, run.weights = x[:, None], np.full(K, 1 / K)
        rep = certify(run, s)
        assert rep.lower_eig == pytest.approx(1.0)
        assert rep.upper_eig == pytest.approx(1.0)

    def test_span_matrix_spectrum(self, rng):
        s = random_instance(rng, K=40, m=3, N=5, same=False)
        run = select(SelectionConfig(n=6, oracle="finite_scan"), s)
        K = upper_gram_span(run.points, run.weights, s)
        Bm = s.upper(run.points)
        G = (Bm.T * run.weights) @ Bm.conj()
        big = np.sort(np.linalg.eigvalsh(G))[::-1][:3]
        small = np.sort(np.linalg.eigvalsh(K))[::-1][:3]
        assert np.allclose(big, small, atol=1e-10)

    def test_to_dict(self):
        run = select(SelectionConfig(n=4), fourier_frame(2, 4))
        d = run.to_dict()
        assert d["certificate"]["pass"] is True and len(d["weights"]) == 4


@given(st.integers(0, 10 ** 6))
def test_random_instances_certify(seed):
    rng = np.random.default_rng(seed)
    s = random_instance(rng, K=int(rng.integers(10, 60)))
    n = s.m + int(rng.integers(0, 3 * s.m + 1))
    # scanning every node of a finite measure always finds an admissible candidate
    run = select(SelectionConfig(n=n, oracle="finite_scan", seed=seed), s)
    assert run.certificate.passed
    for st_ in run.steps:
        assert st_["L"] >= st_["U"] * (1 - 1e-14) and st_["L"] > 0
        assert st_["U"] * (1 - 1e-14) <= 1 / st_["weight"] <= st_["L"] * (1 + 1e-14)


def test_exact_ties_accepted():
    # b = a with one function: every candidate has L == U in exact arithmetic
    s = discrete_system(np.random.default_rng(9).standard_normal((40, 1)))
    run = select(SelectionConfig(n=4, oracle="finite_scan", weight_rule="maximal"), s)
    assert run.certificate.passed
