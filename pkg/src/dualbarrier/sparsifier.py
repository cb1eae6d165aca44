"""Greedy dual-barrier selection of weighted points.

:func:`select` runs the loop: propose a candidate, accept it when the lower
verifier dominates the upper one, pick a weight between them, update both
barriers, repeat ``n`` times. :func:`certify` then checks the two frame
bounds on the output by direct eigendecomposition.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .barrier import (
    DenseUpperBarrier,
    LowerBarrier,
    ScalarLowerBarrier,
    TraceUpperBarrier,
    WoodburyUpperBarrier,
    apply_update,
)
from .systems import christoffel_sample

log = logging.getLogger(__name__)

CERT_TOL = 1e-9
# ties L == U are accepted; this many ulps absorbs rounding in either verifier
TIE_ULPS = 16
WEIGHT_RULES = ("minimal", "maximal", "midpoint")
ORACLES = ("finite_scan", "iid_measure", "christoffel")


class SelectionError(RuntimeError):
    """Selection could not complete; ``run`` holds the partial trace."""

    def __init__(self, message, run=None):
        super().__init__(message)
        self.run = run


@dataclass
class SelectionConfig:
    """Parameters of one selection run.

    ``epsilon_mode`` is ``"exact"`` (no relaxation), ``"relaxed"``
    (``epsilon = (1 - r)^2 / 2``) or a float giving a custom ``epsilon``;
    left as ``None`` it is relaxed for the Christoffel oracle, exact otherwise.
    ``candidates`` is the point list for the ``finite_scan`` oracle; when it
    is omitted on a discrete system the nodes are used.
    """

    n: int
    epsilon_mode: object = None
    weight_rule: str = "minimal"
    retest_previous: bool = False
    oracle: str = "iid_measure"
    candidates: object = None
    seed: int = 0
    max_proposals: int = None
    dense_threshold: int = 256
    batch: int = 32
    snapshot_every: int = None
    threads: int = None

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("n must be positive")
        self.n = int(self.n)
        if self.weight_rule not in WEIGHT_RULES:
            raise ValueError(f"weight_rule must be one of {WEIGHT_RULES}")
        if self.oracle not in ORACLES:
            raise ValueError(f"oracle must be one of {ORACLES}")
        if self.epsilon_mode is None:
            self.epsilon_mode = "relaxed" if self.oracle == "christoffel" else "exact"
        if not (self.epsilon_mode in ("exact", "relaxed")
                or isinstance(self.epsilon_mode, (int, float))):
            raise ValueError("epsilon_mode must be 'exact', 'relaxed' or a number")

    def epsilon(self, r):
        if self.epsilon_mode == "exact":
            return 0.0
        if self.epsilon_mode == "relaxed":
            return 0.5 * (1.0 - r) ** 2
        eps = float(self.epsilon_mode)
        if not 0.0 <= eps < (1.0 - r) ** 2:
            raise ValueError(f"custom epsilon must lie in [0, (1 - r)^2) = [0, {(1 - r) ** 2:.6g})")
        return eps

    def proposal_cap(self, m):
        return self.max_proposals if self.max_proposals is not None else 200 * self.n * m


@dataclass(frozen=True)
class BarrierParams:
    n: int
    m: int
    r: float
    s: float
    M: float
    epsilon: float
    delta: float
    increment: float
    zeta: float
    lower_edge: bool
    upper_edge: bool

    @property
    def target_lower_factor(self):
        return (1.0 - self.r) ** 2 - self.epsilon

    @property
    def target_upper_factor(self):
        return (1.0 + self.s) ** 2


@dataclass
class CertificationReport:
    lower_eig: float
    upper_eig: float
    target_lower: float
    target_upper: float
    tolerance: float = CERT_TOL

    @property
    def lower_slack(self):
        return self.lower_eig - self.target_lower

    @property
    def upper_slack(self):
        return self.target_upper - self.upper_eig

    @property
    def passed(self):
        return bool(self.lower_slack >= -self.tolerance and self.upper_slack >= -self.tolerance)

    def to_dict(self):
        return {"lower_eig": self.lower_eig, "upper_eig": self.upper_eig,
                "target_lower": self.target_lower, "target_upper": self.target_upper,
                "lower_slack": self.lower_slack, "upper_slack": self.upper_slack,
                "tolerance": self.tolerance, "pass": self.passed}


@dataclass
class SelectionRun:
    """Output of :func:`select`.

    ``points`` has one row per distinct selected point; with retesting a
    point can absorb several accepted steps, so it may hold fewer than
    ``n`` rows. ``steps`` logs every acceptance with its verifier values.
    """

    points: np.ndarray
    weights: np.ndarray
    params: BarrierParams
    phi_trace: list = field(default_factory=list)
    psi_trace: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    proposals_total: int = 0
    proposals_per_iteration: list = field(default_factory=list)
    christoffel_rejections: int = 0
    snapshots: list = field(default_factory=list)
    certificate: CertificationReport = None
    meta: dict = field(default_factory=dict)

    @property
    def lower_bound_certified(self):
        return None if self.certificate is None else self.certificate.lower_eig

    @property
    def upper_bound_certified(self):
        return None if self.certificate is None else self.certificate.upper_eig

    @property
    def target_lower(self):
        return None if self.certificate is None else self.certificate.target_lower

    @property
    def target_upper(self):
        return None if self.certificate is None else self.certificate.target_upper

    def to_dict(self):
        p = self.params
        return {
            "n": p.n, "m": p.m, "r": p.r, "s": p.s, "M": p.M, "epsilon": p.epsilon,
            "delta": p.delta, "increment": p.increment, "zeta": p.zeta,
            "lower_edge": p.lower_edge, "upper_edge": p.upper_edge,
            "points": np.asarray(self.points).tolist(),
            "weights": np.asarray(self.weights).tolist(),
            "phi_trace": list(self.phi_trace), "psi_trace": list(self.psi_trace),
            "proposals_total": int(self.proposals_total),
            "proposals_per_iteration": [int(c) for c in self.proposals_per_iteration],
            "christoffel_rejections": int(self.christoffel_rejections),
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "meta": self.meta,
        }


# ----------------------------------------------------------- initialization

def barrier_params(n, m, j_diag, epsilon_of_r):
    n, m = int(n), int(m)
    if m < 1:
        raise ValueError("the lower family must be non-empty")
    if m > n:
        raise ValueError(f"need n >= m (got n={n}, m={m})")
    r = math.sqrt((m - 1) / n)
    eps = epsilon_of_r(r)
    j_diag = np.asarray(j_diag, dtype=float)
    if j_diag.size:
        M = float(j_diag.sum() / j_diag.max())
    else:
        M = 0.0
    s = math.sqrt(max(M - 1.0, 0.0) / n)
    lower_edge = m == 1
    upper_edge = j_diag.size == 0 or M < 1.0 + 1.0 / n
    delta = (1.0 - r) / n
    return BarrierParams(n=n, m=m, r=r, s=s, M=M, epsilon=eps, delta=delta,
                         increment=(1.0 - r - eps) / n, zeta=(1.0 + s) / n,
                         lower_edge=lower_edge, upper_edge=upper_edge)


def initialize(config, system):
    """Fresh barriers ``A_0 = (delta m / r) I`` and ``B_0 = (zeta Tr(J) / s) I``.

    These satisfy ``1/delta - Phi(A_0) = n = 1/zeta + Psi(B_0)``. Edge cases
    (``m = 1`` or effective dimension below ``1 + 1/n``) get the scalar and
    trace verifiers instead. Returns ``(lower, upper, params)``.
    """
    if not system.is_whitened():
        raise ValueError("lower family is not whitened (Gram differs from the identity); "
                         "apply systems.whiten first")
    prm = barrier_params(config.n, system.m, system.j_diag, config.epsilon)
    n = prm.n
    if prm.lower_edge:
        lower = ScalarLowerBarrier(n)
    else:
        A0 = (prm.delta * prm.m / prm.r) * np.eye(prm.m)
        lower = LowerBarrier(A0, prm.delta, prm.increment)
    if prm.upper_edge:
        upper = TraceUpperBarrier(system.j_diag, n)
    else:
        c = prm.zeta * system.trace_j / prm.s
        if system.N <= config.dense_threshold:
            upper = DenseUpperBarrier(c * np.eye(system.N), system.j_diag, prm.zeta)
        else:
            upper = WoodburyUpperBarrier(np.full(system.N, c), system.j_diag, prm.zeta)
    return lower, upper, prm


# ---------------------------------------------------------------- verifiers

def _threads(config):
    if config.threads is not None:
        return max(1, int(config.threads))
    try:
        return max(1, int(os.environ.get("SUBSAMPLE_THREADS", "1")))
    except ValueError:
        return 1


def verify_batch(lower, upper, A, B, threads=1, chunk=4096):
    """Lower and upper verifier values for candidate rows (read-only on the barriers)."""
    # populate lazy caches before any concurrent access
    if not lower.edge:
        lower.mean_verifier()
    if not upper.edge:
        upper.potential()
    k = A.shape[0]
    bounds = [(i, min(i + chunk, k)) for i in range(0, k, chunk)]
    if threads > 1 and len(bounds) == 1 and k >= 2 * threads:
        step = -(-k // threads)
        bounds = [(i, min(i + step, k)) for i in range(0, k, step)]

    def run(lo_hi):
        lo, hi = lo_hi
        return np.atleast_1d(lower.verify(A[lo:hi])), np.atleast_1d(upper.verify(B[lo:hi]))

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    if not parts:
        return np.zeros(0), np.zeros(0)
    return (np.concatenate([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]))


def admissible(L, U):
    """Acceptance test ``L >= U`` (ties accepted up to rounding); ``L > 0`` keeps the weight finite."""
    L = np.asarray(L)
    U = np.asarray(U)
    slack = TIE_ULPS * np.finfo(float).eps * np.abs(U)
    with np.errstate(invalid="ignore"):
        return (L >= U - slack) & (L > 0) & np.isfinite(L) & np.isfinite(U)


def choose_weight(L, U, rule="minimal"):
    """Weight with ``1/w`` in ``[U, L]`` according to ``rule``."""
    if rule == "minimal":
        inv = L
    elif rule == "maximal":
        inv = min(U, L) if U > 0 else L
    elif rule == "midpoint":
        inv = 0.5 * (L + min(U, L))
    else:
        raise ValueError(f"unknown weight rule {rule!r}")
    return 1.0 / inv


def acceptance_mask(lower, upper, system, X, threads=1):
    """Boolean mask of points that would pass the verifier test."""
    A, B = system.evaluate(X)
    L, U = verify_batch(lower, upper, A, B, threads)
    return admissible(L, U)


def retest_previous(lower, upper, a_rows, b_rows):
    """First previously selected point passing the current test, as ``(index, L, U)``."""
    if len(a_rows) == 0:
        return None
    L, U = verify_batch(lower, upper, np.asarray(a_rows), np.asarray(b_rows))
    ok = np.flatnonzero(admissible(L, U))
    if ok.size == 0:
        return None
    i = int(ok[0])
    return i, float(L[i]), float(U[i])


# ------------------------------------------------------------------ oracles

class _ScanOracle:
    def __init__(self, system, candidates):
        X = np.asarray(candidates, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if system.dim == 1 else X.reshape(-1, system.dim)
        self.X = X
        self.A, self.B = system.evaluate(X)

    def propose(self, lower, upper, rng, threads):
        perm = rng.permutation(self.X.shape[0])
        L, U = verify_batch(lower, upper, self.A[perm], self.B[perm], threads)
        ok = np.flatnonzero(admissible(L, U))
        if ok.size == 0:
            return None, self.X.shape[0], 0
        pos = int(ok[0])
        i = perm[pos]
        return (self.X[i], self.A[i], self.B[i], float(L[pos]), float(U[pos])), pos + 1, 0


class _RandomOracle:
    def __init__(self, system, batch, christoffel):
        self.system = system
        self.batch = batch
        self.christoffel = christoffel

    def propose(self, lower, upper, rng, threads):
        if self.christoffel:
            X, rej = christoffel_sample(self.system, rng, self.batch)
        else:
            X, rej = self.system.measure.sample(rng, self.batch), 0
        A, B = self.system.evaluate(X)
        L, U = verify_batch(lower, upper, A, B, threads)
        ok = np.flatnonzero(admissible(L, U))
        if ok.size == 0:
            return None, self.batch, rej
        pos = int(ok[0])
        return (X[pos], A[pos], B[pos], float(L[pos]), float(U[pos])), pos + 1, rej


def _make_oracle(config, system):
    if config.oracle == "finite_scan":
        cand = config.candidates
        if cand is None:
            cand = getattr(system.measure, "nodes", None)
            if cand is None:
                raise ValueError("finite_scan needs a candidate list")
        return _ScanOracle(system, cand)
    return _RandomOracle(system, max(1, int(config.batch)), config.oracle == "christoffel")


# --------------------------------------------------------------- main loop

def _snapshot(i, lower, upper):
    return {"iteration": i, "lower": lower.to_dict(), "upper": upper.to_dict()}


def select(config, system, certify_run=True, observer=None):
    """Select points and weights by the dual-barrier greedy procedure.

    Returns a :class:`SelectionRun`. Raises :class:`SelectionError` (with the
    partial run attached) when the proposal cap is exhausted or a finite scan
    finds no admissible candidate. ``observer(i, lower, upper)``, if given,
    sees the frozen barriers after ``i`` steps, for ``i = 0..n``; it must not
    modify them.
    """
    lower, upper, prm = initialize(config, system)
    rng = np.random.default_rng(config.seed)
    oracle = _make_oracle(config, system)
    threads = _threads(config)
    cap = config.proposal_cap(prm.m)
    n = prm.n

    points, weights, a_rows, b_rows = [], [], [], []
    run = SelectionRun(points=np.zeros((0, system.dim)), weights=np.zeros(0), params=prm,
                       meta={"weight_rule": config.weight_rule, "oracle": config.oracle,
                             "seed": int(config.seed),
                             "representation": type(upper).__name__})
    run.phi_trace.append(lower.potential())
    run.psi_trace.append(upper.potential())
    every = config.snapshot_every

    def partial():
        run.points = np.asarray(points, dtype=float).reshape(-1, system.dim)
        run.weights = np.asarray(weights, dtype=float)
        return run

    for it in range(1, n + 1):
        if observer is not None:
            observer(it - 1, lower, upper)
        hit = retest_previous(lower, upper, a_rows, b_rows) if config.retest_previous else None
        if hit is not None:
            idx, L, U = hit
            a, b = a_rows[idx], b_rows[idx]
            run.proposals_per_iteration.append(0)
        else:
            count = 0
            while True:
                found, used, rej = oracle.propose(lower, upper, rng, threads)
                count += used
                run.proposals_total += used
                run.christoffel_rejections += rej
                if found is not None:
                    break
                if config.oracle == "finite_scan":
                    run.proposals_per_iteration.append(count)
                    raise SelectionError(
                        f"iteration {it}: no admissible candidate in the scan list", partial())
                if run.proposals_total >= cap:
                    run.proposals_per_iteration.append(count)
                    raise SelectionError(
                        f"iteration {it}: proposal cap {cap} exhausted", partial())
            x, a, b, L, U = found
            run.proposals_per_iteration.append(count)
            idx = None
        w = choose_weight(L, U, config.weight_rule)
        phi_cf, psi_cf = apply_update(lower, upper, a, b, w)
        if idx is None:
            points.append(np.asarray(x, dtype=float))
            weights.append(w)
            a_rows.append(np.asarray(a))
            b_rows.append(np.asarray(b))
        else:
            weights[idx] += w
        run.steps.append({"iteration": it, "point": len(points) - 1 if idx is None else idx,
                          "L": L, "U": U, "weight": w, "retested": idx is not None,
                          "phi_closed_form": phi_cf, "psi_closed_form": psi_cf})
        run.phi_trace.append(lower.potential())
        run.psi_trace.append(upper.potential())
        if every and (it % every == 0 or it == n):
            run.snapshots.append(_snapshot(it, lower, upper))

    if observer is not None:
        observer(n, lower, upper)
    partial()
    if certify_run:
        run.certificate = certify(run, system)
    return run


# ------------------------------------------------------------ certification

def lower_gram_sum(points, weights, system, raw=True):
    """``sum_i w_i a(x_i) a(x_i)^*`` (``raw`` uses the un-whitened family)."""
    A = system.lower_raw(points) if raw else system.lower(points)
    w = np.asarray(weights, dtype=float)
    return (A.T * w) @ A.conj()


def upper_gram_span(points, weights, system):
    """``n x n`` matrix ``sqrt(w_i w_j) b(x_i)^* b(x_j)``.

    It shares its nonzero spectrum with ``sum_i w_i b(x_i) b(x_i)^*``.
    """
    B = system.upper(points) * np.sqrt(np.asarray(weights, dtype=float))[:, None]
    return B.conj() @ B.T


def certify(run, system, tol=CERT_TOL):
    """Extreme eigenvalues of both weighted Gram sums against the guaranteed targets."""
    prm = run.params
    G = lower_gram_sum(run.points, run.weights, system)
    lower_eig = float(np.linalg.eigvalsh(0.5 * (G + G.conj().T))[0])
    if system.N:
        K = upper_gram_span(run.points, run.weights, system)
        upper_eig = float(np.linalg.eigvalsh(0.5 * (K + K.conj().T))[-1])
    else:
        upper_eig = 0.0
    return CertificationReport(
        lower_eig=lower_eig,
        upper_eig=upper_eig,
        target_lower=prm.target_lower_factor * system.lambda_min_gram,
        target_upper=prm.target_upper_factor * system.lambda_max_j,
        tolerance=tol,
    )
