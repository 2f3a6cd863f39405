"""Simplex-constrained aggregation of group effects.

The central operation is the quadratic program

    min_{gamma in simplex}  gamma' (A + delta I)_+ gamma

whose solution weights combine per-group coefficient vectors into the
adversarially robust (maximin) effect.  The matrix is repaired to the PSD
cone before solving, which makes the program convex and the active-set
enumeration below globally exact.  Also provides exact and estimated
adversarial rewards, the magging estimator, and the maximin projection.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .linalg import psd_project

__all__ = [
    "SimplexWeight",
    "MaximinEffect",
    "min_quadratic_simplex",
    "maximin_effect",
    "reward_exact",
    "reward_estimated",
    "magging",
    "maximin_projection",
    "project_to_simplex",
]

ACTIVE_SET_MAX_DIM = 12
_FEAS_TOL = 1e-11
_TIE_TOL = 1e-12


@dataclass
class SimplexWeight:
    """A point of the probability simplex with the ridge level it solves for.

    Attributes
    ----------
    weights : ndarray, shape (L,)
        Non-negative, sums to one.
    delta : float
        Ridge level of the objective ``gamma' (A + delta I)_+ gamma``.
    objective : float
        Attained objective value.
    solver : str
        ``"active_set"`` (exact enumeration) or ``"projected_gradient"``
        (fallback for L > 12).
    """

    weights: np.ndarray
    delta: float
    objective: float
    solver: str = "active_set"


@dataclass
class MaximinEffect:
    """Aggregated coefficient vector ``beta = B @ gamma`` and its weight."""

    beta: np.ndarray
    weight: SimplexWeight
    reward: float | None = None


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort algorithm)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    cond = u - (css - 1.0) / idx > 0
    rho = int(np.nonzero(cond)[0][-1]) + 1
    theta = (css[rho - 1] - 1.0) / rho
    return np.maximum(v - theta, 0.0)


def _kkt_candidates(M: np.ndarray) -> list[np.ndarray]:
    """Feasible KKT points of the equality-restricted problems on each support."""
    L = M.shape[0]
    cands = [np.eye(L)[j] for j in range(L)]
    for size in range(2, L + 1):
        for support in itertools.combinations(range(L), size):
            S = list(support)
            k = len(S)
            sys = np.zeros((k + 1, k + 1))
            sys[:k, :k] = 2.0 * M[np.ix_(S, S)]
            sys[:k, k] = -1.0
            sys[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            sys_scale = max(1.0, float(np.abs(sys).max()))
            sols = []
            try:
                cand = np.linalg.solve(sys, rhs)
                resid_tol = 1e-8 * sys_scale * max(1.0, float(np.abs(cand).max()))
                if np.all(np.isfinite(cand)) and np.linalg.norm(sys @ cand - rhs) <= resid_tol:
                    sols.append(cand)
            except np.linalg.LinAlgError:
                pass
            if not sols or np.min(sols[0][:k]) < -_FEAS_TOL:
                # Singular (or singular-up-to-noise) restriction: LU picks an
                # arbitrary solution that may be infeasible even when the
                # minimum-norm one is not.  The truncated min-norm solution
                # also resolves flat objectives toward the uniform weight.
                cand, _, _, _ = np.linalg.lstsq(sys, rhs, rcond=1e-10)
                resid_tol = 1e-8 * sys_scale * max(1.0, float(np.abs(cand).max()))
                if np.linalg.norm(sys @ cand - rhs) <= resid_tol:
                    sols.append(cand)
            for sol in sols:
                g = sol[:k]
                if np.min(g) < -_FEAS_TOL:
                    continue
                gamma = np.zeros(L)
                gamma[S] = g
                cands.append(gamma)
    return cands


def _projected_gradient(M: np.ndarray, tol: float = 1e-10, max_iter: int = 200_000) -> np.ndarray:
    """Accelerated projected gradient on the simplex (fallback for large L)."""
    L = M.shape[0]
    lip = 2.0 * max(float(np.linalg.eigvalsh(M)[-1]), 1e-12)
    step = 1.0 / lip
    gamma = np.full(L, 1.0 / L)
    z = gamma.copy()
    t = 1.0
    for _ in range(max_iter):
        grad = 2.0 * (M @ z)
        new = project_to_simplex(z - step * grad)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = new + ((t - 1.0) / t_new) * (new - gamma)
        moved = float(np.max(np.abs(new - gamma)))
        gamma, t = new, t_new
        if moved < tol:
            break
    return gamma


def min_quadratic_simplex(A: np.ndarray, delta: float = 0.0) -> SimplexWeight:
    """Globally minimize ``gamma' (A + delta I)_+ gamma`` over the simplex.

    The symmetric input is ridge-shifted, projected onto the PSD cone, and
    the resulting convex program is solved by exact enumeration of the
    KKT systems of all support sets (L <= 12).  Beyond that an accelerated
    projected-gradient fallback is used and flagged in ``solver``.

    Flat directions are resolved deterministically: among candidates whose
    objective ties the minimum, the one of smallest Euclidean norm (closest
    to the uniform weight) is returned.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    L = A.shape[0]
    M = psd_project(0.5 * (A + A.T) + delta * np.eye(L))
    if L == 1:
        return SimplexWeight(np.ones(1), float(delta), float(M[0, 0]))
    if L <= ACTIVE_SET_MAX_DIM:
        cands = _kkt_candidates(M)
        solver = "active_set"
    else:
        cands = [_projected_gradient(M)]
        solver = "projected_gradient"
    objs = [float(g @ M @ g) for g in cands]
    best = min(objs)
    scale = _TIE_TOL * (1.0 + abs(best))
    tied = [g for g, o in zip(cands, objs) if o <= best + scale]
    gamma = min(tied, key=lambda g: float(g @ g))
    # Clamp roundoff negatives and renormalize.
    gamma = np.where(gamma > 0.0, gamma, 0.0)
    gamma = gamma / gamma.sum()
    return SimplexWeight(gamma, float(delta), float(gamma @ M @ gamma), solver)


def maximin_effect(
    B: np.ndarray,
    weight: SimplexWeight,
    sigma: np.ndarray | None = None,
) -> MaximinEffect:
    """Combine group coefficients ``B`` (p x L) with simplex weights.

    When the target second-moment matrix ``sigma`` is supplied, the exact
    adversarial reward of the combination is attached.
    """
    B = np.asarray(B, dtype=float)
    gamma = weight.weights
    if B.shape[1] != gamma.size:
        raise ValueError(f"B has {B.shape[1]} columns but weight has {gamma.size}")
    beta = B @ gamma
    reward = reward_exact(beta, B, sigma) if sigma is not None else None
    return MaximinEffect(beta=beta, weight=weight, reward=reward)


def reward_exact(beta: np.ndarray, B: np.ndarray, Sigma: np.ndarray) -> float:
    """Adversarial reward ``min_l 2 b_l' Sigma beta - beta' Sigma beta``."""
    beta = np.asarray(beta, dtype=float)
    B = np.asarray(B, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    sb = Sigma @ beta
    return float(np.min(2.0 * (B.T @ sb)) - beta @ sb)


def reward_estimated(weight: SimplexWeight, gamma_hat: np.ndarray) -> float:
    """Plug-in reward of a weight under an estimated L x L matrix.

    The inner minimum of ``2 gamma' G w - w' G w`` over the simplex is
    linear in ``gamma``, hence attained at a vertex.
    """
    G = np.asarray(gamma_hat, dtype=float)
    w = weight.weights
    gw = G @ w
    return float(np.min(2.0 * gw) - w @ gw)


def magging(B_ols: np.ndarray, Sigma_hat: np.ndarray) -> MaximinEffect:
    """Low-dimensional maximin aggregation of per-group OLS fits."""
    B_ols = np.asarray(B_ols, dtype=float)
    Sigma_hat = np.asarray(Sigma_hat, dtype=float)
    G = B_ols.T @ Sigma_hat @ B_ols
    weight = min_quadratic_simplex(G, 0.0)
    return maximin_effect(B_ols, weight, sigma=Sigma_hat)


def maximin_projection(B: np.ndarray) -> np.ndarray:
    """Unit vector maximizing the minimum inner product with all columns of B.

    Equals the maximin effect computed under the identity second-moment
    matrix, normalized to unit length.  Raises when the groups have exactly
    opposing effects (the combination collapses to zero and no direction
    is defined).
    """
    B = np.asarray(B, dtype=float)
    G = B.T @ B
    weight = min_quadratic_simplex(G, 0.0)
    beta = B @ weight.weights
    nrm = float(np.linalg.norm(beta))
    if nrm < 1e-12:
        raise ValueError("aggregated effect is zero; projection direction undefined")
    return beta / nrm
