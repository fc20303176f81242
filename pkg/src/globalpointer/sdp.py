"""Small dense semidefinite programs in standard form.

    minimize    trace(C X)
    subject to  trace(A_k X) = b_k,   k = 1..K
                X PSD

with dual

    maximize    b^T y
    subject to  C - sum_k y_k A_k  PSD.

Solved by an infeasible-start primal-dual path-following method using the
HKM search direction and a Mehrotra predictor-corrector. Everything is dense;
the constraint matrices are kept as sparse entry lists because the Schur
complement assembly is the only kernel whose cost grows with ``K**2``.
"""
from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from . import kernels

__all__ = [
    "SdpError",
    "DependentConstraintsWarning",
    "SdpStatus",
    "SdpSettings",
    "SdpProblem",
    "SdpSolution",
    "Certificate",
    "solve_sdp",
    "certify",
    "round_rank1",
]

log = logging.getLogger(__name__)

CORANK1_THRESHOLD = 1e-6
# endgame: centering steps per round, rounds, mu reduction per round, and
# the smallest eigenvalue ratio of X still trusted
CENTERING_STEPS = 3
ENDGAME_ROUNDS = 4
ENDGAME_SHRINK = 0.1
ENDGAME_FLOOR = 1e-13
STEP_FRACTION = 0.98
REFINE_STEPS = 1
# dual norm beyond which the iterate is tested as an infeasibility certificate
FARKAS_NORM = 1e6
FARKAS_TOL = 1e-8


class SdpError(ValueError):
    pass


class DependentConstraintsWarning(UserWarning):
    """Linearly dependent constraints were dropped before solving."""


class SdpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class SdpSettings:
    rel_gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        if self.rel_gap_tol <= 0 or self.feas_tol <= 0 or self.max_iter <= 0:
            raise SdpError("SDP settings must be positive")


def _sym_err(M: np.ndarray) -> float:
    return float(np.max(np.abs(M - np.swapaxes(M, -1, -2)), initial=0.0))


@dataclass
class SdpProblem:
    """Standard-form SDP with dense cost ``cost`` and constraint stack ``A``.

    ``congruence`` optionally holds an invertible ``S`` under which the
    problem is better conditioned; the solver then works with
    ``X = S Xh S^T``. It changes neither the optimum nor the dual multipliers.
    """
    cost: np.ndarray
    A: np.ndarray
    b: np.ndarray
    congruence: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.congruence is not None:
            S = np.asarray(self.congruence, dtype=float)
            if S.shape != self.cost.shape or np.linalg.cond(S) > 1e12:
                raise SdpError("congruence must be an invertible dim x dim matrix")
            self.congruence = S
        if self.cost.ndim != 2 or self.cost.shape[0] != self.cost.shape[1]:
            raise SdpError("cost must be square")
        n = self.cost.shape[0]
        if self.A.ndim != 3 or self.A.shape[1:] != (n, n):
            raise SdpError("constraint stack must have shape (K, dim, dim)")
        if self.A.shape[0] < 1 or self.A.shape[0] != self.b.shape[0]:
            raise SdpError("need at least one constraint and one rhs per constraint")
        scale = max(1.0, float(np.max(np.abs(self.cost))))
        if _sym_err(self.cost) > 1e-12 * scale or _sym_err(self.A) > 1e-12 * max(1.0, float(np.max(np.abs(self.A)))):
            raise SdpError("SDP matrices must be symmetric")

    @classmethod
    def from_constraints(cls, cost, constraints) -> "SdpProblem":
        """Build from a list of ``(A_k, b_k)`` pairs."""
        A = np.array([np.asarray(Ak, dtype=float) for Ak, _ in constraints])
        b = np.array([float(bk) for _, bk in constraints])
        return cls(cost, A, b)

    @property
    def dim(self) -> int:
        return self.cost.shape[0]

    @property
    def constraints(self) -> list:
        return [(self.A[k], float(self.b[k])) for k in range(self.A.shape[0])]

    def _svec(self) -> np.ndarray:
        iu = np.triu_indices(self.dim)
        w = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
        return self.A[:, iu[0], iu[1]] * w

    @cached_property
    def independent(self) -> np.ndarray:
        """Indices of a maximal linearly independent subset of constraints."""
        V = self._svec()
        R, piv = scipy.linalg.qr(V.T, mode="r", pivoting=True)
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag[0] == 0.0:
            return np.zeros(0, dtype=np.int64)
        rank = int(np.sum(diag > 1e-10 * diag[0]))
        return np.sort(piv[:rank]).astype(np.int64)

    @property
    def has_dependent_constraints(self) -> bool:
        return len(self.independent) < self.A.shape[0]

    def consistent(self) -> bool:
        """Whether the right-hand sides of dropped constraints agree with the kept ones."""
        keep = self.independent
        if len(keep) == self.A.shape[0]:
            return True
        V = self._svec()
        drop = np.setdiff1d(np.arange(self.A.shape[0]), keep)
        coef, *_ = np.linalg.lstsq(V[keep].T, V[drop].T, rcond=None)
        pred = coef.T @ self.b[keep]
        return bool(np.all(np.abs(pred - self.b[drop]) <= 1e-9 * (1.0 + np.abs(self.b[drop]))))

    def objective(self, X: np.ndarray) -> float:
        return float(np.sum(self.cost * X))

    def residuals(self, X: np.ndarray) -> np.ndarray:
        return np.einsum("kij,ji->k", self.A, X) - self.b

    def dual_slack(self, y: np.ndarray) -> np.ndarray:
        Z = self.cost - np.einsum("k,kij->ij", y, self.A)
        return 0.5 * (Z + Z.T)


@dataclass
class SdpSolution:
    x_matrix: np.ndarray
    dual_y: np.ndarray
    rel_gap: float
    status: SdpStatus
    iterations: int = 0
    primal_infeas: float = float("nan")
    dual_infeas: float = float("nan")
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status is SdpStatus.OPTIMAL


@dataclass(frozen=True)
class Certificate:
    primal_feas: float
    dual_feas: float
    rel_gap: float
    corank1: bool
    rank_ratio: float = field(default=float("nan"))


class _SparseOps:
    """Constraint operator ``A(X)``, adjoint and Schur complement on a subset."""

    def __init__(self, A: np.ndarray):
        k, n, _ = A.shape
        ptr = [0]
        rows, cols, vals = [], [], []
        for a in range(k):
            r, c = np.nonzero(A[a])
            rows.append(r)
            cols.append(c)
            vals.append(A[a][r, c])
            ptr.append(ptr[-1] + len(r))
        self.n = n
        self.ptr = np.asarray(ptr, dtype=np.int64)
        self.rows = np.ascontiguousarray(np.concatenate(rows), dtype=np.int64)
        self.cols = np.ascontiguousarray(np.concatenate(cols), dtype=np.int64)
        self.vals = np.ascontiguousarray(np.concatenate(vals), dtype=float)

    def op(self, X):
        return kernels.apply_op(self.ptr, self.rows, self.cols, self.vals, np.ascontiguousarray(X))

    def adj(self, y):
        return kernels.adjoint(self.ptr, self.rows, self.cols, self.vals, np.ascontiguousarray(y), self.n)

    def schur(self, X, W):
        return kernels.schur(self.ptr, self.rows, self.cols, self.vals,
                             np.ascontiguousarray(X), np.ascontiguousarray(W))


class _SchurSolver:
    """Cholesky solve of the Schur system, with an eigenvalue-clipped fallback.

    Redundant constraints make the Schur complement singular near a rank-one
    optimum (primal degeneracy); any solution of the consistent system is an
    acceptable dual direction there.
    """

    def __init__(self, M: np.ndarray):
        self.chol = None
        try:
            self.chol = scipy.linalg.cho_factor(M)
        except (np.linalg.LinAlgError, ValueError):
            lam, V = np.linalg.eigh(0.5 * (M + M.T))
            if not np.all(np.isfinite(lam)) or lam[-1] <= 0:
                raise np.linalg.LinAlgError("Schur complement breakdown")
            inv = np.where(lam > 1e-13 * lam[-1], 1.0 / np.where(lam > 0, lam, 1.0), 0.0)
            self.V, self.inv = V, inv

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        if self.chol is not None:
            return scipy.linalg.cho_solve(self.chol, rhs)
        return self.V @ (self.inv * (self.V.T @ rhs))


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with ``X + alpha dX`` PSD (X positive definite)."""
    L = np.linalg.cholesky(X)
    Linv = scipy.linalg.solve_triangular(L, np.eye(X.shape[0]), lower=True)
    lam = np.linalg.eigvalsh(Linv @ dX @ Linv.T)[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _rel_gap(pobj: float, dobj: float) -> float:
    return abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))


def _direction(ops, Mfac, X, Zinv, Rd, rp, XRdZ, Rc_Zinv):
    """Search direction for the complementarity target ``Rc_Zinv``.

    The Schur matrix is badly conditioned close to the optimum, so one step
    of iterative refinement removes the residual the back-solve leaves in
    ``A(dX) = rp``.
    """
    dy = Mfac(rp - ops.op(Rc_Zinv) + XRdZ)
    for _ in range(REFINE_STEPS + 1):
        dZ = Rd - ops.adj(dy)
        dZ = 0.5 * (dZ + dZ.T)
        dX = Rc_Zinv - X @ dZ @ Zinv
        dX = 0.5 * (dX + dX.T)
        if _ == REFINE_STEPS:
            break
        dy = dy + Mfac(rp - ops.op(dX))
    return dX, dy, dZ


def _farkas(ops, b, y) -> bool:
    """Whether a diverging dual iterate certifies primal infeasibility.

    A direction ``u`` with ``b.u > 0`` and ``-sum u_k A_k`` PSD proves that no
    PSD ``X`` meets the constraints.
    """
    norm = float(np.linalg.norm(y))
    if norm < FARKAS_NORM:
        return False
    u = y / norm
    if b @ u <= 0:
        return False
    return bool(np.linalg.eigvalsh(-ops.adj(u))[0] >= -FARKAS_TOL)


def _centering_step(ops, C, b, X, y, Z, target):
    """One damped Newton step towards the central-path point ``XZ = target I``."""
    Zinv = np.linalg.inv(Z)
    Zinv = 0.5 * (Zinv + Zinv.T)
    Mfac = _SchurSolver(ops.schur(X, Zinv))
    rp = b - ops.op(X)
    Rd = C - Z - ops.adj(y)
    Rd = 0.5 * (Rd + Rd.T)
    dX, dy, dZ = _direction(ops, Mfac, X, Zinv, Rd, rp, ops.op(X @ Rd @ Zinv), target * Zinv - X)
    ap = min(1.0, STEP_FRACTION * _max_step(X, dX))
    ad = min(1.0, STEP_FRACTION * _max_step(Z, dZ))
    X = X + ap * dX
    Z = Z + ad * dZ
    return 0.5 * (X + X.T), y + ad * dy, 0.5 * (Z + Z.T)


def _endgame(problem, settings, ops, C, b, c_scale, X, y, Z, measures):
    """Recentre a converged iterate, then follow the central path down.

    Near a degenerate optimum the long predictor-corrector steps leave the
    primal iterate O(sqrt(mu)) off the optimal face even though the gap is
    small. Centering at the final mu restores an O(mu) error; further rounds
    shrink mu by ``ENDGAME_SHRINK`` with centering in between, until the gap
    also meets the tolerance in the problem's own units or X approaches the
    roundoff floor. Every accepted state satisfies the stopping tests.
    """
    n = X.shape[0]
    b_norm = float(np.linalg.norm(b))
    C_norm = float(np.linalg.norm(C))
    tol, feas = settings.rel_gap_tol, settings.feas_tol

    def measure(X, y, Z):
        pobj, dobj = float(np.sum(C * X)), float(b @ y)
        gap = _rel_gap(pobj, dobj)
        pinf = float(np.linalg.norm(b - ops.op(X))) / (1.0 + b_norm)
        dinf = float(np.linalg.norm(C - Z - ops.adj(y))) / (1.0 + C_norm)
        ok = (gap <= tol and pinf <= feas and dinf <= feas
              and bool(np.all(np.abs(problem.residuals(X)) <= feas * (1.0 + np.abs(problem.b)))))
        return ok, (gap, pinf, dinf), _rel_gap(c_scale * pobj, c_scale * dobj)

    best = (X, y, Z, *measures)
    raw_gap = None
    for rnd in range(ENDGAME_ROUNDS + 1):
        target = float(np.sum(X * Z)) / n * (1.0 if rnd == 0 else ENDGAME_SHRINK)
        try:
            for _ in range(CENTERING_STEPS):
                X, y, Z = _centering_step(ops, C, b, X, y, Z, target)
        except (np.linalg.LinAlgError, ValueError):
            break
        ok, meas, raw_gap = measure(X, y, Z)
        lam = np.linalg.eigvalsh(X)
        if not ok or lam[0] <= ENDGAME_FLOOR * lam[-1]:
            break
        best = (X, y, Z, *meas)
        if raw_gap <= tol:
            break
    return best


def solve_sdp(problem: SdpProblem, settings: SdpSettings | None = None) -> SdpSolution:
    """Solve ``problem`` to the tolerances in ``settings``.

    The gap and infeasibilities are measured on a normalized copy of the
    problem (cost scaled to unit Frobenius norm, each constraint row scaled to
    unit norm), so the stopping test does not depend on the units of the data.
    Once that test passes, a short endgame (see :func:`_endgame`) improves
    the accuracy of X and, where roundoff allows, brings the gap below
    tolerance in the problem's own units too.
    """
    settings = settings or SdpSettings()
    if problem.congruence is not None:
        return _solve_congruent(problem, settings)
    n = problem.dim
    K = problem.A.shape[0]

    keep = problem.independent
    if len(keep) < K:
        if not problem.consistent():
            return SdpSolution(np.zeros((n, n)), np.zeros(K), float("inf"), SdpStatus.INFEASIBLE)
        warnings.warn(f"dropped {K - len(keep)} linearly dependent constraint(s)",
                      DependentConstraintsWarning, stacklevel=2)

    A = problem.A[keep]
    a_norm = np.sqrt(np.einsum("kij,kij->k", A, A))
    A = A / a_norm[:, None, None]
    b = problem.b[keep] / a_norm
    c_norm = float(np.linalg.norm(problem.cost))
    c_scale = c_norm if c_norm > 0 else 1.0
    C = problem.cost / c_scale
    ops = _SparseOps(A)

    b_norm = float(np.linalg.norm(b))
    C_norm = float(np.linalg.norm(C))

    xi = max(10.0, np.sqrt(n), n * float(np.max((1.0 + np.abs(b)) / 2.0)))
    eta = max(10.0, np.sqrt(n), 1.0 + C_norm)
    X = xi * np.eye(n)
    Z = eta * np.eye(n)
    y = np.zeros(len(b))

    status = SdpStatus.MAX_ITER
    it = 0
    stall = 0
    prev_pinf = np.inf
    gap = pinf = dinf = np.inf
    for it in range(1, settings.max_iter + 1):
        rp = b - ops.op(X)
        Rd = C - Z - ops.adj(y)
        Rd = 0.5 * (Rd + Rd.T)
        try:
            Zinv = np.linalg.inv(Z)
            Zinv = 0.5 * (Zinv + Zinv.T)
            M = ops.schur(X, Zinv)
            Mfac = _SchurSolver(M)
        except (np.linalg.LinAlgError, ValueError):
            status = SdpStatus.NUMERICAL_FAILURE
            break
        mu = float(np.sum(X * Z)) / n
        XRdZ = ops.op(X @ Rd @ Zinv)

        def direction(Rc_Zinv):
            return _direction(ops, Mfac, X, Zinv, Rd, rp, XRdZ, Rc_Zinv)

        try:
            # predictor
            dXa, dya, dZa = direction(-X)
            ap = min(1.0, _max_step(X, dXa))
            ad = min(1.0, _max_step(Z, dZa))
            mu_a = float(np.sum((X + ap * dXa) * (Z + ad * dZa))) / n
            sigma = min(1.0, (mu_a / mu) ** 3) if mu > 0 else 0.0
            # corrector
            Rc_Zinv = sigma * mu * Zinv - X - (dXa @ dZa) @ Zinv
            dX, dy, dZ = direction(Rc_Zinv)
            ap = min(1.0, STEP_FRACTION * _max_step(X, dX))
            ad = min(1.0, STEP_FRACTION * _max_step(Z, dZ))
        except (np.linalg.LinAlgError, ValueError):
            status = SdpStatus.NUMERICAL_FAILURE
            break

        X = X + ap * dX
        y = y + ad * dy
        Z = Z + ad * dZ
        X = 0.5 * (X + X.T)
        Z = 0.5 * (Z + Z.T)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z)) and np.all(np.isfinite(y))):
            status = SdpStatus.NUMERICAL_FAILURE
            break
        if _farkas(ops, b, y):
            status = SdpStatus.INFEASIBLE
            break

        pobj = float(np.sum(C * X))
        dobj = float(b @ y)
        gap = _rel_gap(pobj, dobj)
        pinf = float(np.linalg.norm(b - ops.op(X))) / (1.0 + b_norm)
        Rd = C - Z - ops.adj(y)
        dinf = float(np.linalg.norm(Rd)) / (1.0 + C_norm)
        raw = problem.residuals(X)
        raw_ok = bool(np.all(np.abs(raw) <= settings.feas_tol * (1.0 + np.abs(problem.b))))
        if gap <= settings.rel_gap_tol and pinf <= settings.feas_tol and dinf <= settings.feas_tol and raw_ok:
            status = SdpStatus.OPTIMAL
            break

        if max(ap, ad) < 1e-8:
            stall += 1
            if stall >= 3:
                status = SdpStatus.INFEASIBLE if pinf > prev_pinf * 0.999 and pinf > 1e3 * settings.feas_tol \
                    else SdpStatus.NUMERICAL_FAILURE
                break
        else:
            stall = 0
        prev_pinf = pinf

    if status is SdpStatus.OPTIMAL:
        X, y, Z, gap, pinf, dinf = _endgame(problem, settings, ops, C, b, c_scale, X, y, Z,
                                            (gap, pinf, dinf))

    y_full = np.zeros(K)
    y_full[keep] = c_scale * y / a_norm
    log.debug("sdp dim=%d K=%d status=%s it=%d gap=%.2e pinf=%.2e dinf=%.2e",
              n, K, status.value, it, gap, pinf, dinf)
    return SdpSolution(
        x_matrix=X,
        dual_y=y_full,
        rel_gap=float(gap),
        status=status,
        iterations=it,
        primal_infeas=float(pinf),
        dual_infeas=float(dinf),
        primal_objective=problem.objective(X),
        dual_objective=float(problem.b @ y_full),
    )


def _solve_congruent(problem: SdpProblem, settings: SdpSettings) -> SdpSolution:
    S = problem.congruence
    C = S.T @ problem.cost @ S
    A = np.einsum("ai,kab,bj->kij", S, problem.A, S)
    work = SdpProblem(0.5 * (C + C.T), 0.5 * (A + np.swapaxes(A, 1, 2)), problem.b)
    sol = solve_sdp(work, settings)
    X = S @ sol.x_matrix @ S.T
    sol.x_matrix = 0.5 * (X + X.T)
    sol.primal_objective = problem.objective(sol.x_matrix)
    return sol


def certify(problem: SdpProblem, solution: SdpSolution) -> Certificate:
    """Recompute optimality evidence from ``(problem, X, y)`` alone."""
    X = np.asarray(solution.x_matrix, dtype=float)
    y = np.asarray(solution.dual_y, dtype=float)
    primal_feas = float(np.max(np.abs(problem.residuals(X))))
    dual_feas = float(np.linalg.eigvalsh(problem.dual_slack(y))[0])
    pobj = problem.objective(X)
    dobj = float(problem.b @ y)
    c_norm = float(np.linalg.norm(problem.cost)) or 1.0
    rel_gap = abs(pobj - dobj) / (c_norm + abs(pobj) + abs(dobj))
    lam = np.linalg.eigvalsh(0.5 * (X + X.T))
    top = lam[-1]
    ratio = float(lam[-2] / top) if (top > 0 and len(lam) > 1) else (0.0 if top > 0 else 1.0)
    return Certificate(primal_feas, dual_feas, float(rel_gap), ratio < CORANK1_THRESHOLD, ratio)


def round_rank1(x_matrix: np.ndarray):
    """Best rank-one factor ``sqrt(lam1) v1`` and the eigenvalue ratio ``lam2/lam1``.

    Among (near-)equal top eigenvalues the eigenvector returned by LAPACK for
    the lowest-index one is taken; the ratio exposes the ambiguity.
    """
    X = np.asarray(x_matrix, dtype=float)
    X = 0.5 * (X + X.T)
    lam, V = np.linalg.eigh(X)
    top = lam[-1]
    if top <= 0.0 or not np.isfinite(top):
        raise SdpError("zero solution")
    k = len(lam) - 1
    # lowest-index eigenvector among ties with the top eigenvalue
    ties = np.nonzero(lam >= top * (1.0 - 1e-12))[0]
    if len(ties) > 1:
        k = int(ties[0])
    v = V[:, k] * np.sqrt(lam[k])
    ratio = float(max(lam[-2], 0.0) / top) if len(lam) > 1 else 0.0
    return v, ratio
