"""Measure spaces, orthonormal bases, index orderings and function systems.

A :class:`FunctionSystem` pairs a lower family ``a`` (``m`` functions, the
approximation space) with an upper family ``b`` (``N`` functions, diagonal
Gram ``J``). Both are evaluated row-wise: ``system.evaluate(X)`` returns
arrays of shape ``(k, m)`` and ``(k, N)`` for ``k`` points.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg

TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------- measures

class UniformMeasure:
    """Lebesgue measure on ``[0, 1]^dim``."""

    name = "uniform"

    def __init__(self, dim=1):
        self.dim = int(dim)

    def sample(self, rng, size):
        return rng.random((size, self.dim))

    def quadrature(self, order=64):
        x, w = npleg.leggauss(order)
        return _tensor_rule(0.5 * (x + 1.0), 0.5 * w, self.dim)

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        return np.all((X >= 0.0) & (X <= 1.0), axis=1)


class ArcsineMeasure:
    """Product arcsine density ``1 / (pi sqrt(x (1 - x)))`` on ``[0, 1]^dim``."""

    name = "arcsine"

    def __init__(self, dim=1):
        self.dim = int(dim)

    def sample(self, rng, size):
        return 0.5 * (1.0 - np.cos(math.pi * rng.random((size, self.dim))))

    def quadrature(self, order=64):
        k = np.arange(1, order + 1)
        x = 0.5 * (1.0 + np.cos((2 * k - 1) * math.pi / (2 * order)))
        return _tensor_rule(x, np.full(order, 1.0 / order), self.dim)

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        return np.all((X >= 0.0) & (X <= 1.0), axis=1)


class DiscreteMeasure:
    """Probability measure on finitely many nodes."""

    name = "discrete"

    def __init__(self, nodes, probs=None):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        self.nodes = nodes
        K = nodes.shape[0]
        probs = np.full(K, 1.0 / K) if probs is None else np.asarray(probs, dtype=float)
        if probs.shape != (K,) or np.any(probs <= 0):
            raise ValueError("probs must be positive, one per node")
        self.probs = probs / probs.sum()
        self._lookup = {tuple(row): i for i, row in enumerate(nodes)}
        if len(self._lookup) != K:
            raise ValueError("nodes must be distinct")

    @property
    def dim(self):
        return self.nodes.shape[1]

    def sample(self, rng, size):
        return self.nodes[rng.choice(len(self.probs), size=size, p=self.probs)]

    def quadrature(self, order=None):
        return self.nodes, self.probs

    def index(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        try:
            return np.array([self._lookup[tuple(row)] for row in X], dtype=int)
        except KeyError as exc:
            raise DomainError(f"point {exc.args[0]} is not a node of the discrete measure") from None

    def contains(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.array([tuple(row) in self._lookup for row in X])


def _tensor_rule(x, w, dim):
    if dim == 1:
        return x[:, None], w
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    weights = np.meshgrid(*([w] * dim), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    return nodes, np.prod(np.stack([v.reshape(-1) for v in weights]), axis=0)


# ------------------------------------------------------- univariate bases

def fourier_1d(x, freqs):
    """``exp(2 pi i k x)`` for each frequency ``k``; shape ``(len(x), len(freqs))``."""
    return np.exp(TWO_PI * 1j * np.outer(x, freqs))


def legendre_1d(x, degree):
    """Orthonormal shifted Legendre polynomials on ``[0, 1]`` up to ``degree``.

    Three-term recurrence on ``t = 2x - 1``; column ``k`` is
    ``sqrt(2k + 1) P_k(2x - 1)``.
    """
    x = np.asarray(x, dtype=float)
    t = 2.0 * x - 1.0
    P = np.empty((x.shape[0], degree + 1))
    P[:, 0] = 1.0
    if degree >= 1:
        P[:, 1] = t
    for k in range(1, degree):
        P[:, k + 1] = ((2 * k + 1) * t * P[:, k] - k * P[:, k - 1]) / (k + 1)
    return P * np.sqrt(2.0 * np.arange(degree + 1) + 1.0)


def chebyshev_1d(x, degree):
    """Chebyshev polynomials orthonormal for the arcsine density on ``[0, 1]``."""
    x = np.asarray(x, dtype=float)
    phi = np.arccos(np.clip(2.0 * x - 1.0, -1.0, 1.0))
    out = np.sqrt(2.0) * np.cos(np.outer(phi, np.arange(degree + 1)))
    out[:, 0] = 1.0
    return out


FAMILIES = ("fourier", "legendre", "chebyshev")


@dataclass(frozen=True)
class UnivariateBasis:
    """A univariate orthonormal system with its uniform-bound parameters.

    ``theta`` and ``c_eta`` describe the bound
    ``sum_{k in I_l} |eta_k(x)|^2 <= c_eta^2 l^(2 theta)``.
    """

    family: str
    theta: float = None
    c_eta: float = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        defaults = {"fourier": (0.5, 1.0), "chebyshev": (0.5, math.sqrt(2.0)),
                    "legendre": (1.0, None)}
        theta, c = defaults[self.family]
        if self.theta is None:
            object.__setattr__(self, "theta", theta)
        if self.c_eta is None and c is not None:
            object.__setattr__(self, "c_eta", c)
        if self.theta < 0.5:
            raise ValueError("theta must be at least 1/2")

    @property
    def integer_frequencies(self):
        return self.family == "fourier"

    def measure(self, dim=1):
        return ArcsineMeasure(dim) if self.family == "chebyshev" else UniformMeasure(dim)

    def evaluate_1d(self, x, indices):
        indices = np.asarray(indices, dtype=int)
        if self.family == "fourier":
            return fourier_1d(x, indices)
        if indices.size == 0:
            return np.ones((len(x), 0))
        table = (legendre_1d if self.family == "legendre" else chebyshev_1d)(x, int(indices.max()))
        return table[:, indices]


def tensor_evaluate(basis, indices, X):
    """Evaluate ``prod_i eta_{k_i}(x_i)`` for each multi-index row of ``indices``."""
    indices = np.asarray(indices, dtype=int)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if indices.ndim == 1:
        indices = indices[:, None]
    dtype = complex if basis.integer_frequencies else float
    out = np.ones((X.shape[0], indices.shape[0]), dtype=dtype)
    for axis in range(indices.shape[1]):
        col = indices[:, axis]
        uniq, inv = np.unique(col, return_inverse=True)
        out *= basis.evaluate_1d(X[:, axis], uniq)[:, inv]
    return out


# ------------------------------------------------------------- orderings

@dataclass(frozen=True)
class IndexOrdering:
    """Orders multi-indices by a smoothness weight ``sigma``.

    ``isotropic``: ``max(1, 2 pi |k|^2)``; ``mixed``: ``prod max(1, 2 pi |k_i|)``;
    ``univariate``: ``max(1, 2 pi |k|)`` in one dimension. Ties are broken
    lexicographically. ``integer`` selects ``Z^d`` (Fourier) instead of ``N_0^d``.
    """

    kind: str = "univariate"
    dimension: int = 1
    integer: bool = False

    def __post_init__(self):
        if self.kind not in ("isotropic", "mixed", "univariate"):
            raise ValueError(f"unknown ordering {self.kind!r}")
        if self.dimension not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        if self.kind == "univariate" and self.dimension != 1:
            raise ValueError("univariate ordering requires dimension 1")

    def sigma(self, indices):
        k = np.abs(np.asarray(indices, dtype=np.int64).reshape(-1, self.dimension))
        if self.kind == "isotropic":
            return np.maximum(1.0, TWO_PI * np.sum(k * k, axis=1).astype(float))
        if self.kind == "univariate":
            return np.maximum(1.0, TWO_PI * k[:, 0].astype(float))
        # exact tie structure: (2 pi)^(#nonzero) * prod of nonzero |k_i|
        nz = np.sum(k > 0, axis=1)
        prod = np.prod(np.maximum(k, 1), axis=1).astype(float)
        return TWO_PI ** nz * prod

    def _axis_range(self, kmax):
        lo = -kmax if self.integer else 0
        return np.arange(lo, kmax + 1)

    def below(self, T):
        """All multi-indices with ``sigma <= T``, unsorted."""
        if T < 1:
            return np.zeros((0, self.dimension), dtype=int)
        if self.kind == "univariate":
            k = self._axis_range(int(math.floor(T / TWO_PI)))
            return k[:, None]
        if self.kind == "isotropic":
            r = int(math.floor(math.sqrt(T / TWO_PI)))
            ax = self._axis_range(r)
            if self.dimension == 1:
                idx = ax[:, None]
            else:
                J, K = np.meshgrid(ax, ax, indexing="ij")
                idx = np.stack([J.reshape(-1), K.reshape(-1)], axis=1)
            return idx[self.sigma(idx) <= T]
        if self.dimension == 1:
            idx = self._axis_range(int(math.floor(T / TWO_PI)))[:, None]
            return idx[self.sigma(idx) <= T]
        rows = []
        for j in self._axis_range(int(math.floor(T / TWO_PI))):
            wj = max(1.0, TWO_PI * abs(j))
            ks = self._axis_range(int(math.floor(T / wj / TWO_PI)))
            rows.append(np.stack([np.full(ks.shape, j), ks], axis=1))
        idx = np.concatenate(rows)
        return idx[self.sigma(idx) <= T]

    def first(self, count):
        """The ``count`` smallest multi-indices; prefixes give nested sets ``I_l``."""
        count = int(count)
        if count <= 0:
            return np.zeros((0, self.dimension), dtype=int)
        T = TWO_PI
        while True:
            idx = self.below(T)
            if idx.shape[0] >= count:
                break
            T *= 2.0
        sig = self.sigma(idx)
        keys = [idx[:, a] for a in range(self.dimension - 1, -1, -1)] + [sig]
        order = np.lexsort(keys)
        return idx[order[:count]]


def threshold_indices(ordering, lo, hi):
    """Multi-indices with ``lo < sigma <= hi``, in ordering order."""
    idx = ordering.below(hi)
    sig = ordering.sigma(idx)
    idx = idx[sig > lo]
    sig = sig[sig > lo]
    keys = [idx[:, a] for a in range(ordering.dimension - 1, -1, -1)] + [sig]
    return idx[np.lexsort(keys)]


def uniform_bound_constant(basis, ordering, ell_max, grid=2048, theta=None):
    """Smallest ``C`` with ``sum_{I_l} |eta_k|^2 <= C^2 l^(2 theta)`` on a test grid.

    The grid includes the endpoints, where polynomial bases peak.
    """
    theta = basis.theta if theta is None else theta
    idx = ordering.first(ell_max)
    x = np.linspace(0.0, 1.0, grid if ordering.dimension == 1 else int(math.sqrt(grid)) + 1)
    X = x[:, None] if ordering.dimension == 1 else _tensor_rule(x, x, 2)[0]
    vals = np.abs(tensor_evaluate(basis, idx, X)) ** 2
    partial = np.cumsum(vals, axis=1).max(axis=0)
    ell = np.arange(1, ell_max + 1)
    return float(np.sqrt(np.max(partial / ell ** (2 * theta))))


def default_c_eta(basis, ordering, ell_max):
    """Declared ``C_eta`` of a tensor basis under an ordering."""
    d = ordering.dimension
    if basis.family == "fourier":
        return 1.0
    if basis.family == "chebyshev":
        return math.sqrt(2.0) ** d
    if basis.c_eta is not None and d == 1:
        return basis.c_eta
    return 1.05 * uniform_bound_constant(basis, ordering, max(int(ell_max), 1))


# --------------------------------------------------------- function system

class FunctionSystem:
    """Lower family ``a`` and upper family ``b`` over a measure.

    Parameters
    ----------
    lower, upper : callable
        Map points ``X`` of shape ``(k, dim)`` to arrays ``(k, m)`` and ``(k, N)``.
    j_diag : array of shape (N,)
        Diagonal of ``J = int b b^* dmu``.
    measure : measure object
        Provides ``sample``, ``quadrature`` and ``contains``.
    gram : (m, m) array, optional
        Gram matrix ``I`` of the raw lower family (identity if omitted).
    whitening : (m, m) array, optional
        Transform ``T`` applied as ``a -> T a``.
    christoffel_bound : float, optional
        Upper bound on ``sum_k |a_k(x)|^2`` for the (whitened) lower family.
    """

    def __init__(self, lower, upper, j_diag, measure, m, *, gram=None, whitening=None,
                 christoffel_bound=None, meta=None):
        self._lower = lower
        self._upper = upper
        self.j_diag = np.asarray(j_diag, dtype=float).reshape(-1)
        self.measure = measure
        self.m = int(m)
        self.gram = np.eye(self.m) if gram is None else np.asarray(gram, dtype=complex)
        self.whitening = None if whitening is None else np.asarray(whitening, dtype=complex)
        self.christoffel_bound = christoffel_bound
        self.meta = dict(meta or {})

    @property
    def N(self):
        return self.j_diag.shape[0]

    @property
    def dim(self):
        return self.measure.dim

    @property
    def trace_j(self):
        return float(self.j_diag.sum())

    @property
    def lambda_max_j(self):
        return float(self.j_diag.max()) if self.N else 0.0

    @property
    def effective_dimension(self):
        return self.trace_j / self.lambda_max_j if self.N else 0.0

    @property
    def lambda_min_gram(self):
        return float(np.linalg.eigvalsh(self.gram)[0])

    def whitened_gram(self):
        if self.whitening is None:
            return self.gram
        T = self.whitening
        return T @ self.gram @ T.conj().T

    def is_whitened(self, tol=1e-10):
        return bool(np.max(np.abs(self.whitened_gram() - np.eye(self.m))) <= tol)

    def _points(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.dim) if self.dim > 1 else X[:, None]
        if X.shape[1] != self.dim:
            raise DomainError(f"points must have {self.dim} coordinates")
        if not np.all(self.measure.contains(X)):
            raise DomainError("point outside the domain")
        return X

    def lower_raw(self, X):
        return np.asarray(self._lower(self._points(X)))

    def lower(self, X):
        A = self.lower_raw(X)
        if self.whitening is not None:
            A = A @ self.whitening.T
        return A

    def upper(self, X):
        X = self._points(X)
        if self.N == 0:
            return np.zeros((X.shape[0], 0))
        return np.asarray(self._upper(X))

    def evaluate(self, X):
        """Return ``(a(X), b(X))`` with whitening applied to ``a``."""
        return self.lower(X), self.upper(X)

    def replace(self, **changes):
        kw = dict(lower=self._lower, upper=self._upper, j_diag=self.j_diag,
                  measure=self.measure, m=self.m, gram=self.gram,
                  whitening=self.whitening, christoffel_bound=self.christoffel_bound,
                  meta=self.meta)
        kw.update(changes)
        return FunctionSystem(kw.pop("lower"), kw.pop("upper"), kw.pop("j_diag"),
                              kw.pop("measure"), kw.pop("m"), **kw)


def lower_gram(system, order=64, raw=True):
    """Gram of the lower family by the measure's quadrature rule (exact for discrete measures)."""
    nodes, w = system.measure.quadrature(order)
    A = system.lower_raw(nodes) if raw else system.lower(nodes)
    return (A.T * w) @ A.conj()


def _inv_sqrt(G, name="gram"):
    G = np.asarray(G, dtype=complex)
    G = 0.5 * (G + G.conj().T)
    lam, Q = np.linalg.eigh(G)
    if lam[0] <= 0:
        raise ValueError(f"{name} is not positive definite (smallest eigenvalue {lam[0]:.6g})")
    return (Q / np.sqrt(lam)) @ Q.conj().T


def whiten(system, gram=None, order=64):
    """Return a system whose lower family has identity Gram.

    ``gram`` is the Gram of the raw lower family; it is computed by
    quadrature when omitted. The transform ``I^(-1/2)`` is stored so that
    certification can report bounds for the original family.
    """
    if gram is None:
        gram = lower_gram(system, order)
    gram = np.asarray(gram, dtype=complex)
    T = _inv_sqrt(gram)
    bound = None
    if isinstance(system.measure, DiscreteMeasure):
        A = system.lower_raw(system.measure.nodes) @ T.T
        bound = float(np.max(np.sum(np.abs(A) ** 2, axis=1)))
    return system.replace(gram=gram, whitening=T, christoffel_bound=bound)


# --------------------------------------------------------------- builders

def discrete_system(lower_values, upper_values=None, probs=None, nodes=None, *,
                    adjoin_constant=False, whiten_lower=True, rank_tol=1e-12):
    """Function system on a finite set.

    ``lower_values`` (``K x m``) and ``upper_values`` (``K x N``) are the
    function values at the ``K`` nodes; ``upper_values=None`` reuses the
    lower family. The upper family is rotated to diagonalize ``J`` and
    projected onto its range; the spectrum of any weighted Gram sum is
    unchanged by this. With ``adjoin_constant`` the constant
    ``sqrt(lambda_max(J))`` is appended to ``b`` (requires mean-zero ``b``).
    """
    Aval = np.asarray(lower_values)
    if Aval.ndim == 1:
        Aval = Aval[:, None]
    K, m = Aval.shape
    measure = DiscreteMeasure(np.arange(K, dtype=float) if nodes is None else nodes, probs)
    p = measure.probs
    gram = (Aval.T * p) @ Aval.conj()
    if upper_values is None:
        Bval = Aval.copy()
        if whiten_lower:
            Bval = Bval @ _inv_sqrt(gram).T
    else:
        Bval = np.asarray(upper_values)
        if Bval.ndim == 1:
            Bval = Bval[:, None]
    if Bval.shape[1]:
        J = (Bval.T * p) @ Bval.conj()
        lam, Q = np.linalg.eigh(0.5 * (J + J.conj().T))
        keep = lam > rank_tol * max(lam.max(), 0.0)
        order = np.argsort(-lam[keep], kind="stable")
        Q = Q[:, keep][:, order]
        j_diag = lam[keep][order]
        # coordinates of b in the eigenbasis: (Q^* b)^T = b^T conj(Q)
        Bval = Bval @ Q.conj()
    else:
        j_diag = np.zeros(0)
    if adjoin_constant:
        means = p @ Bval if Bval.shape[1] else np.zeros(0)
        if np.max(np.abs(means), initial=0.0) > 1e-10 * max(1.0, np.abs(Bval).max(initial=0.0)):
            raise ValueError("adjoin_constant requires a mean-zero upper family")
        lam = float(j_diag.max()) if j_diag.size else 1.0
        Bval = np.hstack([np.full((K, 1), math.sqrt(lam)), Bval])
        j_diag = np.concatenate([[lam], j_diag])

    def lower(X):
        return Aval[measure.index(X)]

    def upper(X):
        return Bval[measure.index(X)]

    system = FunctionSystem(lower, upper, j_diag, measure, m, gram=gram,
                            meta={"kind": "discrete", "K": K})
    if whiten_lower:
        system = whiten(system, gram)
    else:
        system.christoffel_bound = float(np.max(np.sum(np.abs(Aval) ** 2, axis=1)))
    return system


@dataclass(frozen=True)
class TruncationPlan:
    """Truncation bookkeeping: ``t = (alpha0 + theta) / 2``, ``N = ceil(m^(alpha0 / (alpha0 - theta)))``."""

    theta: float
    alpha0: float
    m: int
    t: float = field(init=False)
    N: int = field(init=False)

    def __post_init__(self):
        if not self.alpha0 > self.theta:
            raise ValueError("alpha0 must exceed theta")
        if self.m < 1:
            raise ValueError("m must be positive")
        object.__setattr__(self, "t", 0.5 * (self.alpha0 + self.theta))
        x = float(self.m) ** (self.alpha0 / (self.alpha0 - self.theta))
        r = round(x)
        N = int(r) if abs(x - r) <= 1e-9 * max(x, 1.0) else int(math.ceil(x))
        object.__setattr__(self, "N", max(N, self.m))

    @property
    def lambda_m(self):
        return float((self.m + 1) ** (-2.0 * self.t))

    @property
    def trace_tail(self):
        k = np.arange(self.m + 1, self.N + 1, dtype=float)
        return float(np.sum(k ** (-2.0 * self.t)))


def _tensor_system(basis, ordering, lower_idx, upper_idx, upper_scale, j_diag, meta,
                   christoffel_bound=None):
    measure = basis.measure(ordering.dimension)
    lower_idx = np.asarray(lower_idx, dtype=int)
    upper_idx = np.asarray(upper_idx, dtype=int).reshape(-1, ordering.dimension)
    upper_scale = np.asarray(upper_scale, dtype=float)

    def lower(X):
        return tensor_evaluate(basis, lower_idx, X)

    def upper(X):
        return tensor_evaluate(basis, upper_idx, X) * upper_scale

    meta = dict(meta, family=basis.family, ordering=ordering.kind, dimension=ordering.dimension,
                lower_indices=lower_idx.tolist())
    return FunctionSystem(lower, upper, j_diag, measure, lower_idx.shape[0],
                          christoffel_bound=christoffel_bound, meta=meta)


def _check_constant(lower_idx):
    if not np.any(np.all(np.asarray(lower_idx) == 0, axis=1)):
        raise ValueError("the constant function must belong to the lower family")


def build_constructive_system(basis, ordering, plan, *, adjoin_constant=False, c_eta=None):
    """Truncated system ``a = (eta_k)_{k <= m}``, ``b = (k^-t eta_k)_{m < k <= N}``.

    Ranks ``k`` are positions in ``ordering``. With ``adjoin_constant`` the
    constant ``sqrt(lambda_m)`` is prepended to ``b``, the augmentation that
    bounds the sum of the weights.
    """
    if ordering.integer != basis.integer_frequencies:
        ordering = IndexOrdering(ordering.kind, ordering.dimension, basis.integer_frequencies)
    m, N, t = plan.m, plan.N, plan.t
    idx = ordering.first(N)
    lower_idx = idx[:m]
    _check_constant(lower_idx)
    ranks = np.arange(m + 1, N + 1, dtype=float)
    upper_idx = idx[m:N]
    scale = ranks ** (-t)
    j_diag = ranks ** (-2.0 * t)
    if adjoin_constant:
        lam = plan.lambda_m
        upper_idx = np.vstack([np.zeros((1, ordering.dimension), dtype=int), upper_idx])
        scale = np.concatenate([[math.sqrt(lam)], scale])
        j_diag = np.concatenate([[lam], j_diag])
    c = default_c_eta(basis, ordering, m) if c_eta is None else c_eta
    theta = basis.theta
    meta = {"kind": "constructive", "theta": plan.theta, "alpha0": plan.alpha0, "t": t,
            "N": N, "c_eta": c, "adjoin_constant": bool(adjoin_constant)}
    return _tensor_system(basis, ordering, lower_idx, upper_idx, scale, j_diag, meta,
                          christoffel_bound=c * c * m ** (2 * theta))


def build_frame_system(basis, ordering, m, N, *, scaling="rank_power", t=1.0,
                       include_constant=False, c_eta=None):
    """Lower family = first ``m`` ordered functions; upper = ranks ``m+1..N`` scaled.

    ``scaling`` is ``"rank_power"`` (``k^-t``), ``"inverse_sigma"`` (``1/sigma``)
    or ``"unit"``.
    """
    if ordering.integer != basis.integer_frequencies:
        ordering = IndexOrdering(ordering.kind, ordering.dimension, basis.integer_frequencies)
    if N < m:
        raise ValueError("N must be at least m")
    idx = ordering.first(N)
    lower_idx, upper_idx = idx[:m], idx[m:N]
    if scaling == "rank_power":
        scale = np.arange(m + 1, N + 1, dtype=float) ** (-t)
    elif scaling == "inverse_sigma":
        scale = 1.0 / ordering.sigma(upper_idx)
    elif scaling == "unit":
        scale = np.ones(N - m)
    else:
        raise ValueError(f"unknown scaling {scaling!r}")
    if include_constant:
        upper_idx = np.vstack([np.zeros((1, ordering.dimension), dtype=int), upper_idx])
        scale = np.concatenate([[1.0], scale])
    c = default_c_eta(basis, ordering, m) if c_eta is None else c_eta
    meta = {"kind": "frame", "scaling": scaling, "N": N, "c_eta": c}
    return _tensor_system(basis, ordering, lower_idx, upper_idx, scale, scale ** 2, meta,
                          christoffel_bound=c * c * m ** (2 * basis.theta))


def build_threshold_system(basis, ordering, R, R_prime, *, c_eta=None):
    """Lower family ``sigma <= R``; upper ``sigma^-1 eta`` for ``R < sigma <= R'`` plus the constant."""
    if ordering.integer != basis.integer_frequencies:
        ordering = IndexOrdering(ordering.kind, ordering.dimension, basis.integer_frequencies)
    lower_idx = threshold_indices(ordering, 0.0, R)
    _check_constant(lower_idx)
    upper_idx = np.vstack([np.zeros((1, ordering.dimension), dtype=int),
                           threshold_indices(ordering, R, R_prime)])
    scale = 1.0 / ordering.sigma(upper_idx)
    m = lower_idx.shape[0]
    c = default_c_eta(basis, ordering, m) if c_eta is None else c_eta
    meta = {"kind": "threshold", "R": R, "R_prime": R_prime, "c_eta": c}
    return _tensor_system(basis, ordering, lower_idx, upper_idx, scale, scale ** 2, meta,
                          christoffel_bound=c * c * m ** (2 * basis.theta))


# ------------------------------------------------------ Christoffel density

def christoffel_density(system, X):
    """``(1/m) sum_k |a_k(x)|^2``, the density of ``rho`` with respect to ``mu``."""
    A = system.lower(X)
    return np.sum(np.abs(A) ** 2, axis=1) / system.m


def christoffel_sample(system, rng, size=1, max_rejections=10 ** 6, batch=256):
    """Draw points from ``rho = (1/m) sum |a_k|^2 dmu``.

    Discrete measures are sampled exactly; otherwise rejection from ``mu``
    with envelope ``christoffel_bound / m``. Returns ``(X, rejections)``.
    """
    if isinstance(system.measure, DiscreteMeasure):
        nodes = system.measure.nodes
        p = system.measure.probs * christoffel_density(system, nodes)
        idx = rng.choice(len(p), size=size, p=p / p.sum())
        return nodes[idx], 0
    bound = system.christoffel_bound
    if bound is None:
        raise ValueError("system has no Christoffel envelope (christoffel_bound)")
    out = []
    have = 0
    rejections = 0
    while have < size:
        X = system.measure.sample(rng, batch)
        dens = np.sum(np.abs(system.lower(X)) ** 2, axis=1)
        if np.any(dens > bound * (1 + 1e-9)):
            raise RuntimeError("Christoffel function exceeds the sampling envelope")
        ok = rng.random(batch) * bound <= dens
        hits = np.flatnonzero(ok)
        need = size - have
        if hits.size >= need:
            rejections += int(hits[need - 1] + 1 - need)
            out.append(X[hits[:need]])
            have = size
        else:
            rejections += batch - hits.size
            out.append(X[hits])
            have += hits.size
        if rejections > max_rejections:
            raise RuntimeError("Christoffel rejection sampler exceeded its cap; envelope is broken")
    return np.concatenate(out), rejections
