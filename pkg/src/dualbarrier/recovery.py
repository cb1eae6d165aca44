"""Least-squares recovery on selected points and its error certificates.

Coefficients are always expressed in the raw lower family of the system,
so for an orthonormal basis the L2 error follows from Parseval exactly.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .sparsifier import SelectionConfig, select, upper_gram_span
from .systems import IndexOrdering, build_constructive_system, tensor_evaluate

SERIES_TOL = 1e-16
RANK_TOL = 1e-12
# absolute floor for error-vs-bound comparisons (bounds vanish for in-space targets)
ROUNDOFF = 1e-12


class RankDeficientError(ValueError):
    """The weighted design matrix does not have full column rank."""


# ------------------------------------------------------------ least squares

def _design(system, points):
    return np.asarray(system.lower_raw(points))


def solve_weighted(design, y, weights, rank_tol=RANK_TOL):
    """Minimize ``sum_i w_i |y_i - (design @ c)_i|^2`` through the normal equations."""
    V = np.asarray(design)
    y = np.asarray(y)
    w = np.asarray(weights, dtype=float)
    if V.ndim != 2 or y.shape != (V.shape[0],) or w.shape != (V.shape[0],):
        raise ValueError("design, observations and weights have inconsistent shapes")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    G = (V.conj().T * w) @ V
    G = 0.5 * (G + G.conj().T)
    lam = np.linalg.eigvalsh(G)
    if lam.size and lam[0] <= rank_tol * max(lam[-1], 1.0):
        raise RankDeficientError(
            f"weighted Gram is singular (smallest eigenvalue {lam[0]:.3g}); points are not certified")
    rhs = V.conj().T @ (w * y)
    return linalg.cho_solve(linalg.cho_factor(G, lower=True), rhs)


def weighted_least_squares(system, points, weights, observations):
    """Coefficients of the weighted least-squares fit in the lower family."""
    return solve_weighted(_design(system, points), observations, weights)


def plain_least_squares(system, points, observations):
    """Unweighted least squares (all weights one)."""
    V = _design(system, points)
    return solve_weighted(V, observations, np.ones(V.shape[0]))


# ------------------------------------------------------- spectral profiles

@dataclass(frozen=True)
class SpectralProfile:
    """Singular values ``sigma_0 >= sigma_1 >= ...`` of the embedding into L2.

    Zero-based: ``V_m`` spans the first ``m`` singular functions, so
    ``lambda_m = sigma_m^2`` and ``Tr(K_m) = sum_{k >= m} sigma_k^2``.
    """

    sigmas: tuple

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=float)
        if s.ndim != 1 or s.size == 0 or np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("sigmas must be a nonempty finite nonnegative sequence")
        if np.any(np.diff(s) > 0):
            raise ValueError("sigmas must be nonincreasing")
        object.__setattr__(self, "sigmas", tuple(float(v) for v in s))

    @classmethod
    def from_plan(cls, plan):
        return cls(tuple(np.arange(1, plan.N + 1, dtype=float) ** (-plan.t)))

    def _arr(self):
        return np.asarray(self.sigmas)

    def sigma(self, k):
        return self.sigmas[k] if k < len(self.sigmas) else 0.0

    def lambda_m(self, m):
        return self.sigma(m) ** 2

    def trace_k(self, m):
        """``Tr(K_m)``, the squared tail from index ``m`` on."""
        return float(np.sum(self._arr()[m:] ** 2))

    def trace_tail(self, m):
        """``sum_{k > m} sigma_k^2 = Tr(K_m) - lambda_m``."""
        return float(np.sum(self._arr()[m + 1:] ** 2))


def _check_mn(m, n):
    if m < 1 or n < m:
        raise ValueError(f"need 1 <= m <= n (got m={m}, n={n})")


def lower_factor(m, n, epsilon=0.0):
    """Square root of the certified lower frame bound: ``sqrt((1 - r)^2 - epsilon)``."""
    r = math.sqrt((m - 1) / n)
    val = (1.0 - r) ** 2 - epsilon
    if val <= 0:
        raise ValueError("epsilon leaves no lower frame bound")
    return math.sqrt(val)


@dataclass
class RecoveryCertificate:
    mode: str
    m: int
    n: int
    r: float
    s: float
    lambda_m: float
    prefactor: float
    bound: float = None

    def to_dict(self):
        return dict(self.__dict__)


def recovery_certificate(profile, m, n, mode="exact", h_norm=None, noise=0.0,
                         epsilon=0.0, adjoined=False):
    """Prefactor and bound for least-squares recovery from ``n`` certified points.

    ``mode="exact"``: ``||f - f~|| <= (1 + (1 + s)/(1 - r)) sqrt(lambda_m) ||f - P_m f||_H``.
    ``mode="noisy"``: ``||f - f~|| <= (1 + s~)/(1 - r) (2 sqrt(lambda_m) ||f - P_m f||_H + ||e||_inf)``.

    With ``epsilon > 0`` the relaxed lower bound replaces ``1 - r``. In exact
    mode ``adjoined=True`` uses ``s~`` (the upper bound carried by a run
    whose upper family includes the constant). ``h_norm`` is
    ``||f - P_m f||_H``; when given, ``bound`` is filled in.
    """
    _check_mn(m, n)
    lam = profile.lambda_m(m)
    if lam <= 0:
        raise ValueError("lambda_m must be positive")
    low = lower_factor(m, n, epsilon)
    r = math.sqrt((m - 1) / n)
    s_tilde = math.sqrt(profile.trace_k(m) / (n * lam))
    if mode == "exact":
        s = s_tilde if adjoined else math.sqrt(profile.trace_tail(m) / (n * lam))
        pref = 1.0 + (1.0 + s) / low
        bound = None if h_norm is None else pref * math.sqrt(lam) * h_norm
    elif mode == "noisy":
        s = s_tilde
        pref = (1.0 + s) / low
        bound = None if h_norm is None else pref * (2.0 * math.sqrt(lam) * h_norm + noise)
    else:
        raise ValueError("mode must be 'exact' or 'noisy'")
    return RecoveryCertificate(mode=mode, m=m, n=n, r=r, s=s, lambda_m=lam,
                               prefactor=pref, bound=bound)


def sampling_number_prefactor(m, n):
    """``1 + 1/(1 - r)`` with ``r = sqrt((m - 1)/n)``."""
    _check_mn(m, n)
    return 1.0 + 1.0 / (1.0 - math.sqrt((m - 1) / n))


def printed_prefactor(m, n):
    """Integer constants for the cases ``n = m`` (``2m + 1``) and ``n = 2m`` (``5``)."""
    if n == m:
        return 2 * m + 1
    if n == 2 * m:
        return 5
    raise ValueError("printed constants exist only for n = m and n = 2m")


def sampling_number_bound(profile, m, n, printed=False):
    """Upper bound on the n-th sampling number of the unit ball in L2.

    ``printed=True`` uses the simplified integer prefactor at ``n = m`` or
    ``n = 2m``; it dominates the exact one.
    """
    pref = printed_prefactor(m, n) if printed else sampling_number_prefactor(m, n)
    return pref * (profile.sigma(m) + math.sqrt(profile.trace_tail(m) / n))


# ------------------------------------------------------ truncation bounds

def dyadic_series(rate, power, tol=SERIES_TOL, max_terms=100000):
    """``sum_{l >= 1} 2^(l rate) l^power`` for ``rate < 0``."""
    if rate >= 0:
        raise ValueError("series diverges")
    # terms increase up to l = power / (-rate ln 2), then decay geometrically
    peak = power / (-rate * math.log(2.0)) if power > 0 else 0.0
    total = 0.0
    for ell in range(1, max_terms + 1):
        term = 2.0 ** (ell * rate) * ell ** power
        total += term
        if ell > peak and term < tol * max(total, 1.0):
            return total
    raise RuntimeError("dyadic series did not converge")


@dataclass
class TruncationBounds:
    c_h: float
    c_inf: float
    constant: float
    h_norm_bound: float
    sup_bound: float
    certificate: float

    def to_dict(self):
        return dict(self.__dict__)


def _log2_power(x, beta):
    return 1.0 if beta == 0 else math.log2(x) ** beta


def truncation_error_bounds(plan, c_f, alpha, beta=0.0, c_eta=1.0):
    """Dyadic truncation constants and the final recovery certificate.

    Returns ``C_H``, ``C_inf``, the assembled constant ``C`` and the bounds
    ``C_f C_H m^(t - alpha) log^beta m`` (H-norm tail),
    ``C_f C_inf N^(theta - alpha) log^beta N`` (sup-norm tail) and
    ``C_f C m^-alpha log^beta m``. Logarithms are base 2.
    """
    if alpha < plan.alpha0:
        raise ValueError("alpha must be at least alpha0")
    if alpha <= plan.t:
        raise ValueError("alpha must exceed t for the H-norm series to converge")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    t, theta, a0, m, N = plan.t, plan.theta, plan.alpha0, plan.m, plan.N
    c_h = 2.0 ** (t + beta) * math.sqrt(1.0 + dyadic_series(2 * t - 2 * alpha, 2 * beta))
    c_inf = c_eta * 2.0 ** theta * (1.0 + dyadic_series(theta - alpha, beta))
    C = (1.0 + 32.0 * c_h + 16.0 * c_inf) * (2.0 * a0 / (a0 - theta)) ** (beta + 0.5)
    return TruncationBounds(
        c_h=c_h, c_inf=c_inf, constant=C,
        h_norm_bound=c_f * c_h * m ** (t - alpha) * _log2_power(m, beta),
        sup_bound=c_f * c_inf * N ** (theta - alpha) * _log2_power(N, beta),
        certificate=c_f * C * m ** (-alpha) * _log2_power(m, beta),
    )


# --------------------------------------------------------- target functions

def basis_sup(basis, indices):
    """Exact sup norm of each tensor basis function."""
    idx = np.abs(np.asarray(indices, dtype=int))
    if basis.family == "fourier":
        return np.ones(idx.shape[0])
    if basis.family == "legendre":
        return np.prod(np.sqrt(2.0 * idx + 1.0), axis=1)
    return np.prod(np.where(idx > 0, math.sqrt(2.0), 1.0), axis=1)


@dataclass
class TargetFunction:
    """Finite expansion ``f = sum_k c_k eta_k`` over ranks of an ordering (rank 1 first)."""

    basis: object
    ordering: IndexOrdering
    coeffs: np.ndarray
    indices: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.ordering.integer != self.basis.integer_frequencies:
            self.ordering = IndexOrdering(self.ordering.kind, self.ordering.dimension,
                                          self.basis.integer_frequencies)
        self.coeffs = np.asarray(self.coeffs)
        self.indices = self.ordering.first(self.coeffs.shape[0])

    @property
    def K(self):
        return self.coeffs.shape[0]

    def __call__(self, X, upto=None):
        k = self.K if upto is None else min(int(upto), self.K)
        return tensor_evaluate(self.basis, self.indices[:k], X) @ self.coeffs[:k]

    def tail_l2(self, ell):
        """``||f - f_ell||_2``."""
        return float(np.sqrt(np.sum(np.abs(self.coeffs[int(ell):]) ** 2)))

    def h_norm(self, m, N, t):
        """``||f_N - f_m||_H`` for the weights ``k^t``."""
        k = np.arange(m + 1, min(N, self.K) + 1, dtype=float)
        return float(np.sqrt(np.sum(k ** (2 * t) * np.abs(self.coeffs[m:len(k) + m]) ** 2)))

    def sup_tail(self, N):
        """Upper bound on ``||f - f_N||_inf`` from the coefficient tail."""
        if N >= self.K:
            return 0.0
        return float(np.sum(np.abs(self.coeffs[N:]) * basis_sup(self.basis, self.indices[N:])))

    def decay_constant(self, alpha, beta=0.0):
        """Smallest ``C_f`` with ``||f - f_l||_2 <= C_f l^-alpha log^beta l``.

        The condition is checked for ``l >= 1`` (``l >= 2`` when ``beta > 0``,
        where the right side vanishes at ``l = 1``).
        """
        tails = np.sqrt(np.cumsum(np.abs(self.coeffs[::-1]) ** 2)[::-1])
        start = 2 if beta > 0 else 1
        ell = np.arange(start, self.K + 1, dtype=float)
        vals = tails[start - 1:] * ell ** alpha
        if beta > 0:
            vals = vals / np.log2(ell) ** beta
        return float(np.max(vals, initial=0.0))


def power_law_target(basis, ordering, alpha, K, rng, beta=0.0):
    """Coefficients ``|c_k| = k^-(alpha + 1/2) log^beta`` with random phases (signs for real bases)."""
    k = np.arange(1, K + 1, dtype=float)
    mag = k ** (-(alpha + 0.5))
    if beta > 0:
        mag = mag * np.maximum(np.log2(k), 1.0) ** beta
    if basis.integer_frequencies:
        phase = np.exp(2j * math.pi * rng.random(K))
    else:
        phase = rng.choice([-1.0, 1.0], size=K)
    return TargetFunction(basis, ordering, mag * phase)


def random_noise(rng, size, level, complex_valued):
    if complex_valued:
        return level * np.exp(2j * math.pi * rng.random(size))
    return level * rng.choice([-1.0, 1.0], size=size)


# ---------------------------------------------------------- end to end

@dataclass
class RecoveryReport:
    m: int
    n: int
    N: int
    measured_error: float
    truncation_certificate: float
    truncated_error: float
    exact_data_bound: float
    aposteriori_bound: float
    noisy_error: float
    noise_level: float
    noise_sup: float
    noisy_data_bound: float
    truncation: TruncationBounds
    c_f: float
    lower_eig: float
    upper_eig: float
    weight_sum: float
    selection_certified: bool
    proposals_total: int

    @property
    def passed(self):
        checks = [self.selection_certified,
                  self.measured_error <= self.truncation_certificate + ROUNDOFF,
                  self.truncated_error <= self.exact_data_bound + ROUNDOFF,
                  self.noisy_error <= self.noisy_data_bound + ROUNDOFF]
        return bool(all(checks))

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "truncation"}
        d["truncation"] = self.truncation.to_dict()
        d["pass"] = self.passed
        return d


def _l2_error(target, coeffs_hat, upto=None):
    c = target.coeffs if upto is None else target.coeffs[:upto]
    m = coeffs_hat.shape[0]
    head = np.sum(np.abs(c[:m] - coeffs_hat) ** 2)
    return float(math.sqrt(head + np.sum(np.abs(c[m:]) ** 2)))


def end_to_end_recover(basis, ordering, plan, target, *, alpha, beta=0.0, seed=0,
                       noise=0.0, n=None, selection=None):
    """Build, select (relaxed Christoffel), solve and certify one recovery.

    ``target`` is a :class:`TargetFunction` of the same basis and ordering.
    Three errors are measured by Parseval:

    * ``measured_error``: ``||f - f~||`` from exact data ``f(x_i)``, against
      the truncation certificate ``C C_f m^-alpha log^beta m``;
    * ``truncated_error``: ``||f_N - f~||`` from data ``f_N(x_i)``, against
      the exact-data recovery bound;
    * ``noisy_error``: ``||f_N - f~||`` from ``f(x_i) + e_i`` with
      ``|e_i| = noise``, against the noisy-data bound with
      ``||f - f_N||_inf`` folded into the noise.
    """
    m = plan.m
    n = 2 * m if n is None else int(n)
    system = build_constructive_system(basis, ordering, plan, adjoin_constant=True)
    cfg = selection or SelectionConfig(n=n, oracle="christoffel", epsilon_mode="relaxed", seed=seed)
    run = select(cfg, system)
    eps = run.params.epsilon
    X, w = run.points, run.weights

    if target.ordering.kind != ordering.kind:
        raise ValueError("target and system orderings differ")
    c_f = target.decay_constant(alpha, beta)
    c_eta = system.meta["c_eta"]
    trunc = truncation_error_bounds(plan, c_f, alpha, beta, c_eta=c_eta)

    full = weighted_least_squares(system, X, w, target(X))
    measured = _l2_error(target, full)

    fN = target(X, upto=plan.N)
    coeffs_N = weighted_least_squares(system, X, w, fN)
    truncated = _l2_error(target, coeffs_N, upto=plan.N)

    profile = SpectralProfile.from_plan(plan)
    h = target.h_norm(m, plan.N, plan.t)
    exact_cert = recovery_certificate(profile, m, n, "exact", h_norm=h, epsilon=eps, adjoined=True)

    rng = np.random.default_rng([seed, 1])
    y = target(X) + random_noise(rng, X.shape[0], noise, basis.integer_frequencies)
    noise_sup = float(np.max(np.abs(y - fN))) if X.shape[0] else 0.0
    noisy = _l2_error(target, weighted_least_squares(system, X, w, y), upto=plan.N)
    noisy_cert = recovery_certificate(profile, m, n, "noisy", h_norm=h, noise=noise_sup, epsilon=eps)

    cert = run.certificate
    K = upper_gram_span(X, w, system)
    gamma = float(np.linalg.eigvalsh(0.5 * (K + K.conj().T))[-1])
    g_l2 = float(np.sqrt(np.sum(np.abs(target.coeffs[m:plan.N]) ** 2)))
    apost = g_l2 + math.sqrt(gamma / cert.lower_eig) * h
    return RecoveryReport(
        m=m, n=n, N=plan.N,
        measured_error=measured, truncation_certificate=trunc.certificate,
        truncated_error=truncated, exact_data_bound=exact_cert.bound, aposteriori_bound=apost,
        noisy_error=noisy, noise_level=float(noise), noise_sup=noise_sup, noisy_data_bound=noisy_cert.bound,
        truncation=trunc, c_f=c_f, lower_eig=cert.lower_eig, upper_eig=cert.upper_eig,
        weight_sum=float(np.sum(w)), selection_certified=cert.passed,
        proposals_total=run.proposals_total,
    )
