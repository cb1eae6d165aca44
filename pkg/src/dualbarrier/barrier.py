"""Barrier states, potentials and verifiers.

The lower barrier tracks ``A`` (``m x m``) with potential ``Phi(A) = Tr(A^-1)``;
the upper barrier tracks ``B`` with potential ``Psi(B) = Tr(J B^-1)`` for a
positive diagonal ``J``. A candidate with evaluations ``a``, ``b`` may be
added with weight ``w`` whenever ``U(b) <= 1/w <= L(a)``; then neither
potential increases.

Upper barriers come in two representations: dense (``B`` stored as an
``N x N`` matrix) and Woodbury (``B = D - M M^*`` with ``D`` diagonal and a
thin factor ``M``), the latter applying inverses in ``O(N i)`` per vector.
"""

import logging

import numpy as np
from scipy import linalg

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
SLACK_TOL = 1e-10
IMAG_TOL = 1e-10


class BarrierError(RuntimeError):
    """A barrier invariant was violated (loss of positive definiteness)."""


class IllConditionedError(BarrierError):
    """The lower increment sits too close to ``1/Phi(A)``."""


class UpdateError(BarrierError):
    """A rank-one update would break the Sherman-Morrison denominator."""


def _as_batch(v, dim):
    v = np.asarray(v, dtype=complex)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != dim:
        raise ValueError(f"expected vectors of length {dim}, got {v.shape[1]}")
    return v, single


def _real_form(values, name):
    """Real part of a Hermitian form, flagging imaginary residue."""
    values = np.asarray(values)
    if np.iscomplexobj(values):
        imag = np.abs(values.imag)
        scale = np.maximum(np.abs(values.real), 1.0)
        if np.any(imag > IMAG_TOL * scale):
            log.warning("imaginary residue %.3g in %s", float(imag.max()), name)
        values = values.real
    return values


def check_hermitian(A, tol=HERMITIAN_TOL):
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    dev = np.max(np.abs(A - A.conj().T)) if A.size else 0.0
    if dev > tol:
        raise ValueError(f"matrix is not self-adjoint (max deviation {dev:.3g})")
    return 0.5 * (A + A.conj().T)


def _matrix_to_dict(A):
    A = np.asarray(A, dtype=complex)
    return {"re": A.real.tolist(), "im": A.imag.tolist()}


def _matrix_from_dict(d):
    return np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)


class LowerBarrier:
    """Lower barrier ``A`` with nominal increment ``delta``.

    Parameters
    ----------
    A : (m, m) Hermitian positive definite array
    delta : float
        Nominal increment, used for the master inequality.
    increment : float, optional
        Increment actually subtracted at each step (``delta_eff``); defaults
        to ``delta``. A relaxed run uses ``delta - epsilon / n``.
    """

    edge = False

    def __init__(self, A, delta, increment=None):
        self.A = check_hermitian(A)
        self.delta = float(delta)
        self.increment = float(delta if increment is None else increment)
        if self.delta <= 0 or self.increment <= 0:
            raise ValueError("increments must be positive")
        self._state = None

    @property
    def m(self):
        return self.A.shape[0]

    def _eig(self):
        if self._state is None:
            lam, Q = np.linalg.eigh(self.A)
            if lam[0] <= 0:
                raise BarrierError(
                    f"lower barrier lost positive definiteness (min eigenvalue {lam[0]:.3g})")
            self._state = {"lam": lam, "Q": Q, "phi": float(np.sum(1.0 / lam))}
        return self._state

    def potential(self):
        """``Tr(A^-1)``."""
        return self._eig()["phi"]

    def _verifier_state(self):
        st = self._eig()
        if "shifted" not in st:
            inv_phi = 1.0 / st["phi"]
            if inv_phi - self.increment < SLACK_TOL * inv_phi:
                raise IllConditionedError(
                    f"increment {self.increment:.6g} too close to 1/Phi = {inv_phi:.6g}")
            lam = st["lam"]
            d = self.increment
            st["shifted"] = 1.0 / (lam - d)
            # Tr(Z - Y) = sum d / (lam (lam - d)), no cancellation
            st["gap"] = float(np.sum(d / (lam * (lam - d))))
            st["trZ"] = float(np.sum(st["shifted"]))
        return st

    def _forms(self, V):
        st = self._verifier_state()
        c2 = np.abs(V @ st["Q"].conj()) ** 2
        z = st["shifted"]
        return c2 @ z, c2 @ (z * z), st

    def verify(self, a):
        """Lower verifier ``a^* Z^2 a / Tr(Z - Y) - a^* Z a`` (batched over rows)."""
        V, single = _as_batch(a, self.m)
        aza, az2a, st = self._forms(V)
        out = az2a / st["gap"] - aza
        return float(out[0]) if single else out

    def mean_verifier(self):
        """``Tr(Z^2) / Tr(Z - Y) - Tr(Z)``: the verifier averaged against an isotropic family."""
        st = self._verifier_state()
        z = st["shifted"]
        return float(np.sum(z * z) / st["gap"] - st["trZ"])

    def update(self, a, w):
        """Apply ``A <- A - increment I + w a a^*``; return the new potential.

        The returned value is the closed form
        ``Tr(Z) - a^* Z^2 a / (1/w + a^* Z a)``.
        """
        a = np.asarray(a, dtype=complex).reshape(-1)
        aza, az2a, st = self._forms(a[None, :])
        denom = 1.0 / w + aza[0]
        if not denom > 0:
            raise UpdateError("lower Sherman-Morrison denominator is not positive")
        phi_new = st["trZ"] - az2a[0] / denom
        A = self.A - self.increment * np.eye(self.m) + w * np.outer(a, a.conj())
        self.A = 0.5 * (A + A.conj().T)
        self._state = None
        return float(phi_new)

    def to_dict(self):
        return {"kind": "lower", "A": _matrix_to_dict(self.A),
                "delta": self.delta, "increment": self.increment}


class ScalarLowerBarrier:
    """Lower verifier for a single function: ``L(a) = n |a|^2``.

    No matrix is tracked; ``potential`` is ``None``.
    """

    edge = True
    m = 1

    def __init__(self, n):
        self.n = int(n)
        self.delta = None
        self.increment = None

    def potential(self):
        return None

    def verify(self, a):
        V, single = _as_batch(a, 1)
        out = self.n * np.abs(V[:, 0]) ** 2
        return float(out[0]) if single else out

    def update(self, a, w):
        return None

    def to_dict(self):
        return {"kind": "lower_scalar", "n": self.n}


class _UpperBase:
    edge = False

    def __init__(self, j_diag, zeta):
        j = np.asarray(j_diag, dtype=float).reshape(-1)
        if np.any(j <= 0) or not np.all(np.isfinite(j)):
            raise ValueError("j_diag entries must be positive and finite")
        self.j_diag = j
        self.zeta = float(zeta)
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        self._state = None

    @property
    def N(self):
        return self.j_diag.shape[0]

    def potential(self):
        """``Tr(J B^-1)``."""
        return self._prepare()["psi"]

    def trace_jx(self):
        return self._prepare()["trJX"]

    def verify(self, b):
        """Upper verifier ``b^* X J X b / Tr(JW - JX) + b^* X b`` (batched over rows)."""
        V, single = _as_batch(b, self.N)
        st = self._prepare()
        XB = self._apply_x(V, st)
        xjx = np.abs(XB) ** 2 @ self.j_diag
        bxb = _real_form(np.sum(V.conj() * XB, axis=1), "b^* X b")
        out = xjx / st["gap"] + bxb
        return float(out[0]) if single else out

    def mean_verifier(self):
        """``Tr(JXJX) / Tr(JW - JX) + Tr(JX)``, the mu-average of the verifier."""
        st = self._prepare()
        return float(self._tr_jxjx(st) / st["gap"] + st["trJX"])

    def update(self, b, w):
        """Apply ``B <- B + zeta J - w b b^*``; return the new potential.

        Uses ``Tr(JX) + b^* X J X b / (1/w - b^* X b)``.
        """
        b = np.asarray(b, dtype=complex).reshape(-1)
        st = self._prepare()
        xb = self._apply_x(b[None, :], st)[0]
        bxb = float(_real_form(np.vdot(b, xb), "b^* X b"))
        if not 1.0 - w * bxb > 0:
            raise UpdateError("upper Sherman-Morrison denominator is not positive")
        xjx = float(np.abs(xb) ** 2 @ self.j_diag)
        psi_new = st["trJX"] + xjx / (1.0 / w - bxb)
        self._apply(b, w)
        self._state = None
        return float(psi_new)


class DenseUpperBarrier(_UpperBase):
    """Upper barrier with ``B`` stored densely."""

    def __init__(self, B, j_diag, zeta):
        super().__init__(j_diag, zeta)
        self.B = check_hermitian(B)
        if self.B.shape[0] != self.N:
            raise ValueError("B and j_diag sizes disagree")

    def _prepare(self):
        if self._state is None:
            N = self.N
            eye = np.eye(N)
            try:
                W = linalg.cho_solve(linalg.cho_factor(self.B, lower=True), eye)
                X = linalg.cho_solve(
                    linalg.cho_factor(self.B + self.zeta * np.diag(self.j_diag), lower=True), eye)
            except linalg.LinAlgError as exc:
                raise BarrierError("upper barrier lost positive definiteness") from exc
            j = self.j_diag
            JW = j[:, None] * W
            JX = j[:, None] * X
            # W - X = zeta W J X, so Tr(JW - JX) = zeta Tr(JWJX)
            gap = self.zeta * _real_form(np.sum(JW * JX.T), "Tr(JWJX)")
            self._state = {
                "W": W, "X": X, "JX": JX,
                "psi": float(np.real(np.trace(JW))),
                "trJX": float(np.real(np.trace(JX))),
                "gap": float(gap),
            }
        return self._state

    def _apply_x(self, V, st):
        return V @ st["X"].T

    def _tr_jxjx(self, st):
        JX = st["JX"]
        return float(_real_form(np.sum(JX * JX.T), "Tr(JXJX)"))

    def _apply(self, b, w):
        B = self.B + self.zeta * np.diag(self.j_diag) - w * np.outer(b, b.conj())
        self.B = 0.5 * (B + B.conj().T)

    def to_dense(self):
        return self.B.copy()

    def to_dict(self):
        return {"kind": "upper_dense", "B": _matrix_to_dict(self.B),
                "j_diag": self.j_diag.tolist(), "zeta": self.zeta}


class WoodburyUpperBarrier(_UpperBase):
    """Upper barrier ``B = diag(d) - M M^*`` applied through the Woodbury identity.

    ``M`` holds the scaled selected columns ``sqrt(w_i) b(x_i)``; ``gram_inv``
    is ``(I - M^* D^-1 M)^-1`` and is rebuilt on every state change.
    """

    def __init__(self, diag, j_diag, zeta, factor=None):
        super().__init__(j_diag, zeta)
        self.diag = np.asarray(diag, dtype=float).reshape(-1).copy()
        if self.diag.shape[0] != self.N or np.any(self.diag <= 0):
            raise ValueError("diag must be positive with the same length as j_diag")
        if factor is None:
            factor = np.zeros((self.N, 0), dtype=complex)
        self.factor = np.asarray(factor, dtype=complex).reshape(self.N, -1).copy()

    @staticmethod
    def _side(diag, M, j):
        dinv = 1.0 / diag
        S = M.conj().T @ (dinv[:, None] * M)
        i = M.shape[1]
        try:
            G = linalg.inv(np.eye(i) - S) if i else np.zeros((0, 0), dtype=complex)
        except linalg.LinAlgError as exc:
            raise BarrierError("Woodbury capacitance matrix is singular") from exc
        DM = dinv[:, None] * M
        P = DM.conj().T @ (j[:, None] * DM)
        corr = _real_form(np.sum(G * P.T), "Woodbury trace correction") if i else 0.0
        return dinv, G, DM, P, float(corr)

    def _prepare(self):
        if self._state is None:
            j = self.j_diag
            d = self.diag
            dp = d + self.zeta * j
            dinv, G, DM, P, corr = self._side(d, self.factor, j)
            dpinv, Gp, DpM, Pp, corrp = self._side(dp, self.factor, j)
            if self.factor.shape[1]:
                lamG = np.linalg.eigvalsh(np.eye(G.shape[0]) - self.factor.conj().T @ DM)
                if lamG[0] <= 0:
                    raise BarrierError("upper barrier lost positive definiteness")
            base_gap = float(np.sum(self.zeta * j * j / (d * dp)))
            self._state = {
                "dpinv": dpinv, "Gp": Gp, "DpM": DpM, "G": G,
                "psi": float(np.sum(j * dinv) + corr),
                "trJX": float(np.sum(j * dpinv) + corrp),
                "gap": base_gap + corr - corrp,
            }
        return self._state

    @property
    def gram_inv(self):
        return self._prepare()["G"]

    def _apply_x(self, V, st):
        u = V * st["dpinv"]
        if self.factor.shape[1] == 0:
            return u
        t = u @ self.factor.conj()
        return u + (t @ st["Gp"].T) @ st["DpM"].T

    def _tr_jxjx(self, st):
        # only used by diagnostics; materializes X column-wise
        X = self._apply_x(np.eye(self.N, dtype=complex), st)
        JX = self.j_diag[:, None] * X.T
        return float(_real_form(np.sum(JX * JX.T), "Tr(JXJX)"))

    def _apply(self, b, w):
        self.diag = self.diag + self.zeta * self.j_diag
        self.factor = np.hstack([self.factor, np.sqrt(w) * b[:, None]])

    def to_dense(self):
        return np.diag(self.diag).astype(complex) - self.factor @ self.factor.conj().T

    def to_dict(self):
        return {"kind": "upper_woodbury", "diag": self.diag.tolist(),
                "factor": _matrix_to_dict(self.factor),
                "j_diag": self.j_diag.tolist(), "zeta": self.zeta}


class TraceUpperBarrier:
    """Upper verifier for effective dimension below ``1 + 1/n``.

    ``U(b) = n / Tr(J) * sum_k |b_k|^2``; with an empty upper family the
    verifier is identically zero.
    """

    edge = True

    def __init__(self, j_diag, n):
        self.j_diag = np.asarray(j_diag, dtype=float).reshape(-1)
        self.n = int(n)
        self.zeta = None

    @property
    def N(self):
        return self.j_diag.shape[0]

    def potential(self):
        return None

    def verify(self, b):
        if self.N == 0:
            b = np.asarray(b)
            return 0.0 if b.ndim <= 1 else np.zeros(b.shape[0])
        V, single = _as_batch(b, self.N)
        out = self.n / self.j_diag.sum() * np.sum(np.abs(V) ** 2, axis=1)
        return float(out[0]) if single else out

    def update(self, b, w):
        return None

    def to_dict(self):
        return {"kind": "upper_trace", "j_diag": self.j_diag.tolist(), "n": self.n}


def barrier_from_dict(d):
    kind = d["kind"]
    if kind == "lower":
        return LowerBarrier(_matrix_from_dict(d["A"]), d["delta"], d["increment"])
    if kind == "lower_scalar":
        return ScalarLowerBarrier(d["n"])
    if kind == "upper_dense":
        return DenseUpperBarrier(_matrix_from_dict(d["B"]), d["j_diag"], d["zeta"])
    if kind == "upper_woodbury":
        return WoodburyUpperBarrier(d["diag"], d["j_diag"], d["zeta"],
                                    factor=_matrix_from_dict(d["factor"]))
    if kind == "upper_trace":
        return TraceUpperBarrier(d["j_diag"], d["n"])
    raise ValueError(f"unknown barrier kind {kind!r}")


def apply_update(lower, upper, a, b, w):
    """Add the candidate ``(a, b)`` with weight ``w`` to both barriers.

    Returns the closed-form potentials ``(Phi(A'), Psi(B'))``; edge-mode
    barriers report ``None``.
    """
    if not w > 0:
        raise UpdateError("weight must be positive")
    if not lower.edge:
        lower._verifier_state()
    # upper first: its denominator check is the one callers can violate
    psi = upper.update(b, w)
    phi = lower.update(a, w)
    return phi, psi
