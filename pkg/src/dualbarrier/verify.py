"""Independent oracles for checking the main implementation.

Nothing here calls ``numpy.linalg`` or ``scipy.linalg``: eigenvalues come
from cyclic Jacobi rotations or from Sturm-sequence bisection on a
Householder tridiagonal form, and inverses from Gauss-Jordan elimination.
Complex Hermitian matrices are handled through their real symmetric
embedding ``[[Re, -Im], [Im, Re]]``, whose spectrum is the original one
with every eigenvalue doubled.
"""

import math
from dataclasses import dataclass

import numpy as np

WILSON_Z99 = 2.5758293035489004


class OracleError(RuntimeError):
    pass


@dataclass
class OracleReport:
    name: str
    max_abs_dev: float
    max_rel_dev: float
    passed: bool
    cases: int
    detail: dict = None

    def to_dict(self):
        return {"name": self.name, "max_abs_dev": self.max_abs_dev,
                "max_rel_dev": self.max_rel_dev, "pass": self.passed,
                "cases": self.cases, "detail": self.detail or {}}


# ------------------------------------------------------------- eigenvalues

def real_embedding(H):
    H = np.asarray(H)
    if not np.iscomplexobj(H):
        return np.array(H, dtype=float), False
    re, im = H.real, H.imag
    top = np.concatenate([re, -im], axis=1)
    bottom = np.concatenate([im, re], axis=1)
    return np.concatenate([top, bottom], axis=0), True


def _check_square(H):
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    return H


def jacobi_eigenvalues(H, tol=1e-13, max_sweeps=100):
    """All eigenvalues of a Hermitian matrix by cyclic Jacobi rotations, ascending."""
    H = _check_square(H)
    S, doubled = real_embedding(H)
    S = 0.5 * (S + S.T)
    n = S.shape[0]
    scale = max(float(np.sqrt(np.sum(S * S))), 1e-300)
    for _ in range(max_sweeps):
        D = S - np.diag(np.diag(S))
        off = float(np.sqrt(np.sum(D * D)))
        if off < tol * scale or off < 1e-300:
            ev = np.sort(np.diag(S).copy())
            return ev[::2] if doubled else ev
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = S[p, q]
                if apq == 0.0:
                    continue
                tau = (S[q, q] - S[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rp, rq = S[p, :].copy(), S[q, :].copy()
                S[p, :] = c * rp - s * rq
                S[q, :] = s * rp + c * rq
                cp, cq = S[:, p].copy(), S[:, q].copy()
                S[:, p] = c * cp - s * cq
                S[:, q] = s * cp + c * cq
    raise OracleError(f"Jacobi did not converge in {max_sweeps} sweeps")


def eig_extremes_bruteforce(H, tol=1e-13, max_sweeps=100):
    """``(min, max)`` eigenvalue of a Hermitian matrix via :func:`jacobi_eigenvalues`."""
    ev = jacobi_eigenvalues(H, tol, max_sweeps)
    return float(ev[0]), float(ev[-1])


def householder_tridiagonal(S):
    """Diagonal and off-diagonal of a similar tridiagonal matrix (real symmetric input)."""
    A = np.array(S, dtype=float)
    n = A.shape[0]
    for k in range(n - 2):
        x = A[k + 1:, k].copy()
        alpha = -math.copysign(math.sqrt(float(np.sum(x * x))), x[0] if x[0] != 0 else 1.0)
        v = x
        v[0] -= alpha
        vn = float(np.sum(v * v))
        if vn < 1e-300:
            continue
        v = v / math.sqrt(vn)
        sub = A[k + 1:, k:]
        sub -= 2.0 * np.outer(v, v @ sub)
        A[k + 1:, k:] = sub
        sub = A[k:, k + 1:]
        sub -= 2.0 * np.outer(sub @ v, v)
        A[k:, k + 1:] = sub
    d = np.array([A[i, i] for i in range(n)])
    e = np.array([A[i + 1, i] for i in range(n - 1)])
    return d, e


def sturm_count(d, e, x):
    """Number of eigenvalues of the tridiagonal ``(d, e)`` strictly below ``x``."""
    count = 0
    q = 1.0
    for i in range(len(d)):
        off = e[i - 1] ** 2 / q if i > 0 else 0.0
        q = d[i] - x - off
        if q == 0.0:
            q = 1e-300
        if q < 0:
            count += 1
    return count


def sturm_eigenvalues(H, tol=1e-12):
    """Eigenvalues by bisection on Sturm counts of the tridiagonal form, ascending."""
    H = _check_square(H)
    S, doubled = real_embedding(H)
    d, e = householder_tridiagonal(0.5 * (S + S.T))
    n = len(d)
    radius = [abs(e[i - 1]) if i > 0 else 0.0 for i in range(n)]
    radius = [r + (abs(e[i]) if i < n - 1 else 0.0) for i, r in enumerate(radius)]
    lo0 = min(d[i] - radius[i] for i in range(n))
    hi0 = max(d[i] + radius[i] for i in range(n))
    span = max(hi0 - lo0, 1.0)
    out = []
    for k in range(n):
        lo, hi = lo0 - 1e-9 * span, hi0 + 1e-9 * span
        while hi - lo > tol * span:
            mid = 0.5 * (lo + hi)
            if sturm_count(d, e, mid) > k:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
    ev = np.array(out)
    return ev[::2] if doubled else ev


def gauss_jordan_inverse(A):
    """Inverse by Gauss-Jordan elimination with partial pivoting."""
    A = _check_square(A)
    n = A.shape[0]
    dtype = complex if np.iscomplexobj(A) else float
    M = np.concatenate([np.array(A, dtype=dtype), np.eye(n, dtype=dtype)], axis=1)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(M[col:, col])))
        if abs(M[piv, col]) < 1e-300:
            raise OracleError("matrix is singular")
        if piv != col:
            M[[col, piv]] = M[[piv, col]]
        M[col] = M[col] / M[col, col]
        for row in range(n):
            if row != col and M[row, col] != 0:
                M[row] = M[row] - M[row, col] * M[col]
    return M[:, n:]


def trace_inverse(A, weights=None):
    """``Tr(diag(weights) A^-1)`` by Gauss-Jordan."""
    inv = gauss_jordan_inverse(A)
    diag = np.real(np.array([inv[i, i] for i in range(inv.shape[0])]))
    return float(np.sum(diag if weights is None else np.asarray(weights) * diag))


# -------------------------------------------------------- certificate oracle

def certificate_oracle(run, system, tol=1e-9):
    """Recompute both frame bounds of a finished run with Jacobi rotations."""
    A = system.lower_raw(run.points)
    w = np.asarray(run.weights, dtype=float)
    G = np.zeros((system.m, system.m), dtype=complex)
    for i in range(len(w)):
        G += w[i] * np.outer(A[i], np.conj(A[i]))
    lo, _ = eig_extremes_bruteforce(G)
    if system.N:
        B = system.upper(run.points)
        K = np.zeros((len(w), len(w)), dtype=complex)
        for i in range(len(w)):
            for j in range(len(w)):
                K[i, j] = math.sqrt(w[i] * w[j]) * np.sum(np.conj(B[i]) * B[j])
        _, hi = eig_extremes_bruteforce(K)
    else:
        hi = 0.0
    p = run.params
    I_min = eig_extremes_bruteforce(system.gram)[0]
    t_lo = p.target_lower_factor * I_min
    t_hi = p.target_upper_factor * (float(np.max(system.j_diag)) if system.N else 0.0)
    ok = lo >= t_lo - tol and hi <= t_hi + tol
    dev = 0.0
    if run.certificate is not None:
        dev = max(abs(lo - run.certificate.lower_eig), abs(hi - run.certificate.upper_eig))
    return OracleReport("frame_bounds", dev, dev / max(abs(hi), 1.0), bool(ok), 1,
                        {"lower_eig": lo, "upper_eig": hi, "target_lower": t_lo,
                         "target_upper": t_hi})


# ------------------------------------------------------------ discretization

def discretization_check(points, weights, system, trials, rng, lower=None, upper=None,
                         coefficients=None):
    """Two-sided norm discretization on random elements of the lower space.

    ``f = sum_k c_k a_k`` with the whitened family, so ``||f||_2 = |c|``.
    Defaults: ``lower = 1 - sqrt(m/n)``, ``upper = 1 + sqrt(m/n)``. Explicit
    coefficient vectors may be passed instead of random draws.
    """
    A = system.lower(points)
    w = np.asarray(weights, dtype=float)
    m, n = system.m, len(w)
    lower = 1.0 - math.sqrt(m / n) if lower is None else lower
    upper = 1.0 + math.sqrt(m / n) if upper is None else upper
    if coefficients is None:
        coefficients = [rng.standard_normal(m) + 1j * rng.standard_normal(m)
                        for _ in range(trials)]
    worst_lo, worst_hi = math.inf, -math.inf
    ok = True
    for c in coefficients:
        norm = math.sqrt(float(np.sum(np.abs(c) ** 2)))
        vals = [np.sum(A[i] * c) for i in range(n)]
        disc = math.sqrt(sum(w[i] * abs(vals[i]) ** 2 for i in range(n)))
        ok &= lower * norm <= disc + 1e-12 * norm and disc <= upper * norm + 1e-12 * norm
        if norm > 0:
            worst_lo, worst_hi = min(worst_lo, disc / norm), max(worst_hi, disc / norm)
    dev = max(lower - worst_lo, worst_hi - upper, 0.0) if math.isfinite(worst_lo) else 0.0
    return OracleReport("discretization", dev, dev, bool(ok), len(coefficients),
                        {"min_ratio": worst_lo, "max_ratio": worst_hi,
                         "lower": lower, "upper": upper})


def sup_norm_check(points, system, trials, rng, factor=None):
    """``||f||_inf <= factor * max_i |f(x_i)|`` on a discrete system (exact sup over nodes).

    The default factor is ``(2 + sqrt(2)) sqrt(m)``.
    """
    nodes = system.measure.nodes
    m = system.m
    factor = (2.0 + math.sqrt(2.0)) * math.sqrt(m) if factor is None else factor
    A_all = system.lower_raw(nodes)
    A_pts = system.lower_raw(points)
    worst = 0.0
    ok = True
    for _ in range(trials):
        c = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        sup = float(np.max(np.abs(A_all @ c)))
        at = float(np.max(np.abs(A_pts @ c)))
        worst = max(worst, sup / at if at > 0 else math.inf)
        ok &= sup <= factor * at * (1.0 + 1e-12)
    return OracleReport("sup_norm", max(worst - factor, 0.0), max(worst / factor - 1.0, 0.0),
                        bool(ok), trials, {"worst_ratio": worst, "factor": factor})


# --------------------------------------------------------- acceptance rates

def wilson_interval(successes, trials, z=WILSON_Z99):
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    den = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def acceptance_rate_probe(config, system, probes=200, seed=0):
    """Monte-Carlo acceptance frequency of Christoffel proposals at each iteration.

    Before every selection step ``probes`` fresh Christoffel samples are
    tested against the frozen barriers. The floor is ``epsilon / m``; an
    iteration fails only if its 99% Wilson interval lies entirely below it.
    """
    # imported here: the probe drives the selector but shares no numerics with it
    from .sparsifier import acceptance_mask, select
    from .systems import christoffel_sample

    rng = np.random.default_rng([seed, 7])
    rows = []

    def observe(it, lower, upper):
        if it >= config.n:
            return
        X, _ = christoffel_sample(system, rng, probes)
        k = int(np.sum(acceptance_mask(lower, upper, system, X)))
        lo, hi = wilson_interval(k, probes)
        rows.append({"iteration": it, "accepted": k, "probes": probes, "rate": k / probes,
                     "wilson_low": lo, "wilson_high": hi})

    run = select(config, system, observer=observe)
    floor = run.params.epsilon / system.m
    ok = all(r["wilson_high"] >= floor for r in rows)
    per_iter = run.proposals_per_iteration
    algo_rate = config.n / max(run.proposals_total, 1)
    worst = min((r["wilson_high"] - floor for r in rows), default=0.0)
    return OracleReport("acceptance_rate", max(-worst, 0.0), 0.0, bool(ok), len(rows),
                        {"floor": floor, "iterations": rows,
                         "proposals_per_iteration": list(per_iter),
                         "overall_rate": algo_rate,
                         "min_rate": min((r["rate"] for r in rows), default=None)})
