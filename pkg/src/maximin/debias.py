"""Projection directions and bias-corrected linear functionals.

A debiased estimate of ``x_new' b`` corrects the Lasso plug-in with a
projection direction ``v`` chosen to make the residual term behave like a
mean-zero Gaussian:

    value = x_new' b_hat + v' X' (y - X b_hat) / n.

The direction solves

    min_v  v' S v   s.t.  max_{w in W} |<w, S v - target>| <= bound,

with ``S`` a sample second-moment matrix and ``W`` the Euclidean basis
augmented by the normalized target.  The same program (with a different
target) produces the directions used to debias the group regression
covariance matrix.  Both are solved through the L1-penalized Lagrangian
dual: minimizing

    h' (W' S W) h / 4 + (W' target)' h + lam ||h||_1

and setting ``u = -W h / 2`` yields a direction whose moment violations
are bounded by ``lam`` (the dual subgradient conditions are exactly the
primal constraints).  The penalty starts at the requested bound and is
escalated geometrically whenever the dual is unbounded from below, which
is the dual's signature of an infeasible primal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "ConstraintSlack",
    "ProjectionDirection",
    "FunctionalEstimate",
    "InfeasibleProjectionError",
    "projection_direction_linear",
    "projection_direction_gamma",
    "projection_direction_lowdim",
    "debiased_linear_functional",
]

DIVERGENCE_FLOOR = -1e10


class InfeasibleProjectionError(RuntimeError):
    """No tried penalty produced a bounded dual / feasible direction."""


@dataclass
class ConstraintSlack:
    """Observed value of one constraint family against its bound.

    ``enforced`` distinguishes constraints the optimizer guarantees from
    advisory ones that are only verified after the fact.
    """

    name: str
    value: float
    bound: float
    enforced: bool = True

    @property
    def ok(self) -> bool:
        return self.value <= self.bound + 1e-8


@dataclass
class ProjectionDirection:
    """Solution of one constrained projection program.

    Attributes
    ----------
    direction : ndarray, shape (p,)
    feasibility_report : list of ConstraintSlack
        Slacks are recorded relative to the target norm (the natural
        scale of the constraint levels), so bounds read as the levels
        themselves.
    variance_term : float
        Attained objective ``v' S v``.
    bound_used : float
        Constraint level the direction was solved at (after escalation),
        relative to the target norm.
    escalations : int
        Number of times the requested level had to be relaxed.
    """

    direction: np.ndarray
    feasibility_report: list[ConstraintSlack] = field(default_factory=list)
    variance_term: float = 0.0
    bound_used: float = 0.0
    escalations: int = 0


@dataclass
class FunctionalEstimate:
    """Debiased estimate of ``x_new' b`` for one group with its SE."""

    value: float
    se: float
    group: int = 0


@njit(cache=True)
def _dual_cd(A, b, lam, max_sweeps, kkt_tol):
    """Coordinate descent on h'Ah/4 + b'h + lam*||h||_1.

    Stops when the subgradient conditions hold within ``kkt_tol``; the
    feasibility part of those conditions is exactly the primal moment
    constraint, so the tolerance directly bounds the reported slacks.
    Returns (h, status): 0 = converged, 1 = sweep budget exhausted,
    2 = objective diverged below the unboundedness floor.
    """
    m = A.shape[0]
    h = np.zeros(m)
    v = np.zeros(m)  # v = A @ h, maintained incrementally
    status = 1
    for sweep in range(max_sweeps):
        h_inf = 0.0
        for j in range(m):
            ajj = A[j, j]
            cj = b[j] + 0.5 * (v[j] - ajj * h[j])
            if ajj <= 1e-300:
                if abs(cj) > lam + 1e-300:
                    return h, 2
                new = 0.0
            else:
                if cj > lam:
                    new = -2.0 * (cj - lam) / ajj
                elif cj < -lam:
                    new = -2.0 * (cj + lam) / ajj
                else:
                    new = 0.0
            d = new - h[j]
            if d != 0.0:
                for i in range(m):
                    v[i] += A[i, j] * d
                h[j] = new
            ah = abs(h[j])
            if ah > h_inf:
                h_inf = ah
        # refresh v exactly to stop incremental drift, then check KKT
        v = A @ h
        obj = 0.0
        l1 = 0.0
        feas = 0.0
        stat = 0.0
        for i in range(m):
            obj += 0.25 * h[i] * v[i] + b[i] * h[i]
            l1 += abs(h[i])
            gi = b[i] + 0.5 * v[i]
            a = abs(gi) - lam
            if a > feas:
                feas = a
            if h[i] > 0.0:
                s2 = abs(gi + lam)
                if s2 > stat:
                    stat = s2
            elif h[i] < 0.0:
                s2 = abs(gi - lam)
                if s2 > stat:
                    stat = s2
        obj += lam * l1
        if obj < DIVERGENCE_FLOOR or h_inf > 1e12 or np.isnan(obj):
            return h, 2
        if feas <= kkt_tol and stat <= kkt_tol:
            status = 0
            break
    return h, status


def _build_dual(S: np.ndarray, q: np.ndarray, target: np.ndarray):
    """Assemble A = W'SW and b = W'target for W = [q, I]."""
    p = S.shape[0]
    Sq = S @ q
    A = np.empty((p + 1, p + 1))
    A[0, 0] = q @ Sq
    A[0, 1:] = Sq
    A[1:, 0] = Sq
    A[1:, 1:] = S
    b = np.empty(p + 1)
    b[0] = q @ target
    b[1:] = target
    return np.ascontiguousarray(A), b


def _moment_slacks(S: np.ndarray, q: np.ndarray, target: np.ndarray, u: np.ndarray):
    """Max basis violation and loading violation of ``S u - target``."""
    resid = S @ u - target
    return float(np.max(np.abs(resid))), float(abs(q @ resid))


def _solve_direction(
    S: np.ndarray,
    target_unit: np.ndarray,
    lam: float,
    max_sweeps: int,
    kkt_tol: float,
):
    """One dual solve at unit target scale; returns (u, status, slacks)."""
    q = target_unit
    A, b = _build_dual(S, q, target_unit)
    h, status = _dual_cd(A, b, float(lam), max_sweeps, kkt_tol)
    u = -0.5 * (h[1:] + h[0] * q)
    basis, loading = _moment_slacks(S, q, target_unit, u)
    return u, status, basis, loading


def _check_spd_input(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("second-moment matrix must be square")
    if not np.all(np.isfinite(S)):
        raise ValueError("second-moment matrix has non-finite entries")
    return 0.5 * (S + S.T)


def projection_direction_linear(
    X: np.ndarray,
    x_new: np.ndarray,
    eta: float | None = None,
    tau: float | None = None,
    max_sweeps: int = 5000,
    kkt_tol: float = 1e-10,
) -> ProjectionDirection:
    """Direction for debiasing ``x_new' b`` from one design matrix.

    Minimizes ``v' (X'X/n) v`` subject to the moment constraints at level
    ``eta`` (default ``0.5 ||x_new|| sqrt(log p / n)``) and the design
    sup-norm constraint ``||X v||_inf <= ||x_new|| tau`` (default
    ``tau = 2 sqrt(log n)``).  If the dual diverges or the sup-norm bound
    fails, ``eta`` is escalated by 1.25 up to 10 times before giving up.
    """
    X = np.asarray(X, dtype=float)
    x_new = np.asarray(x_new, dtype=float).ravel()
    n, p = X.shape
    if x_new.size != p:
        raise ValueError(f"x_new has length {x_new.size}, expected {p}")
    x_norm = float(np.linalg.norm(x_new))
    if x_norm <= 0:
        raise ValueError("x_new must be nonzero")
    if eta is None:
        eta = 0.5 * x_norm * np.sqrt(np.log(p) / n)
    if tau is None:
        tau = 2.0 * np.sqrt(np.log(n))
    S = (X.T @ X) / n
    q = x_new / x_norm
    lam0 = eta / x_norm  # moment level at unit target scale
    last = None
    for attempt in range(11):
        lam = lam0 * (1.25 ** attempt)
        u, status, basis, loading = _solve_direction(S, q, lam, max_sweeps, kkt_tol)
        sup = float(np.max(np.abs(X @ u)))  # unit target scale
        last = (lam, status, basis, loading, sup)
        feasible = (
            status != 2
            and max(basis, loading) <= lam + 1e-8
            and sup <= tau + 1e-8
        )
        if feasible:
            v = x_norm * u
            report = [
                ConstraintSlack("basis_moment", basis, lam),
                ConstraintSlack("loading_moment", loading, lam),
                ConstraintSlack("design_sup", sup, tau),
            ]
            return ProjectionDirection(
                direction=v,
                feasibility_report=report,
                variance_term=float(v @ S @ v),
                bound_used=lam,
                escalations=attempt,
            )
    raise InfeasibleProjectionError(
        "projection infeasible after 10 escalations: "
        f"last lam={last[0]:.3e} status={last[1]} basis={last[2]:.3e} "
        f"loading={last[3]:.3e} sup={last[4]:.3e} (tau bound {tau:.3e})"
    )


def projection_direction_gamma(
    Sigma_hat: np.ndarray,
    omega: np.ndarray,
    mu: float | None = None,
    tau: float | None = None,
    X_rows: np.ndarray | None = None,
    max_sweeps: int = 5000,
    kkt_tol: float = 1e-10,
    n_escalate: int = 24,
) -> ProjectionDirection:
    """Direction for debiasing one regression-covariance entry.

    Minimizes ``u' Sigma_hat u`` subject to
    ``||Sigma_hat u - omega||_inf <= ||omega|| mu`` and
    ``|omega' Sigma_hat u - ||omega||^2| <= ||omega||^2 mu``.  The design
    sup-norm condition on ``X_rows @ u`` is not part of the optimization;
    it is verified afterwards and reported (warning on failure only).

    The dual penalty starts at ``mu`` and is doubled while the dual is
    unbounded from below; by homogeneity the direction for ``c * omega``
    is exactly ``c`` times the direction for ``omega``.
    """
    S = _check_spd_input(Sigma_hat)
    omega = np.asarray(omega, dtype=float).ravel()
    p = S.shape[0]
    if omega.size != p:
        raise ValueError(f"omega has length {omega.size}, expected {p}")
    w_norm = float(np.linalg.norm(omega))
    if w_norm <= 0:
        raise ValueError("omega must be nonzero")
    if mu is None:
        n_eff = X_rows.shape[0] if X_rows is not None else p
        mu = 0.5 * np.sqrt(np.log(p) / n_eff)
    if mu < 0 or (tau is not None and tau < 0):
        raise ValueError("mu and tau must be non-negative")
    q = omega / w_norm
    lams = [float(mu)]
    base = max(float(mu), 1e-4)
    lams += [base * (2.0 ** k) for k in range(1, n_escalate + 1)]
    last = None
    for attempt, lam in enumerate(lams):
        u, status, basis, loading = _solve_direction(S, q, lam, max_sweeps, kkt_tol)
        last = (lam, status, basis, loading)
        if status != 2 and max(basis, loading) <= lam + 1e-8:
            u_full = w_norm * u
            report = [
                ConstraintSlack("basis_moment", basis, lam),
                ConstraintSlack("loading_moment", loading, lam),
            ]
            if X_rows is not None and tau is not None:
                sup = float(np.max(np.abs(X_rows @ u)))  # unit target scale
                report.append(ConstraintSlack("design_sup", sup, tau, enforced=False))
                if sup > tau + 1e-8:
                    warnings.warn(
                        f"design sup-norm condition exceeded ({sup:.3e} > {tau:.3e}); "
                        "direction kept, condition is advisory",
                        stacklevel=2,
                    )
            return ProjectionDirection(
                direction=u_full,
                feasibility_report=report,
                variance_term=float(u_full @ S @ u_full),
                bound_used=lam,
                escalations=attempt,
            )
    raise InfeasibleProjectionError(
        "dual unbounded for all tried penalties: "
        f"last lam={last[0]:.3e} status={last[1]} basis={last[2]:.3e} loading={last[3]:.3e}"
    )


def projection_direction_lowdim(
    Sigma_hat: np.ndarray,
    omega: np.ndarray,
) -> ProjectionDirection:
    """Exact low-dimensional direction ``Sigma_hat^{-1} omega``."""
    S = _check_spd_input(Sigma_hat)
    omega = np.asarray(omega, dtype=float).ravel()
    if omega.size != S.shape[0]:
        raise ValueError("dimension mismatch")
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond >= 1e12:
        raise np.linalg.LinAlgError(
            f"second-moment matrix is near singular (cond={cond:.3e})"
        )
    u = np.linalg.solve(S, omega)
    resid = float(np.max(np.abs(S @ u - omega)))
    report = [ConstraintSlack("solve_residual", resid, 1e-8 * max(1.0, float(np.abs(omega).max())))]
    return ProjectionDirection(
        direction=u,
        feasibility_report=report,
        variance_term=float(u @ S @ u),
        bound_used=0.0,
    )


def debiased_linear_functional(
    X: np.ndarray,
    y: np.ndarray,
    b_hat: np.ndarray,
    v: ProjectionDirection | np.ndarray,
    x_new: np.ndarray,
    sigma_hat: float,
    group: int = 0,
) -> FunctionalEstimate:
    """Bias-corrected estimate of ``x_new' b`` with its standard error.

    ``value = x_new' b_hat + v' X'(y - X b_hat)/n`` and
    ``se = sqrt(sigma_hat^2 / n^2 * v' X'X v)``.  Passing ``v = 0``
    degenerates to the plug-in with zero SE.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    b_hat = np.asarray(b_hat, dtype=float).ravel()
    x_new = np.asarray(x_new, dtype=float).ravel()
    vec = v.direction if isinstance(v, ProjectionDirection) else np.asarray(v, dtype=float).ravel()
    n, p = X.shape
    if not (y.size == n and b_hat.size == p and x_new.size == p and vec.size == p):
        raise ValueError("dimension mismatch between X, y, b_hat, v, x_new")
    resid = y - X @ b_hat
    value = float(x_new @ b_hat + vec @ (X.T @ resid) / n)
    Xv = X @ vec
    se = float(np.sqrt(max(sigma_hat, 0.0) ** 2 / n**2 * (Xv @ Xv)))
    return FunctionalEstimate(value=value, se=se, group=group)
