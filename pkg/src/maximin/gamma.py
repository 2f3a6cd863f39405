"""Bias-corrected estimation of the group regression covariance matrix.

The target is the L x L matrix with entries ``b_l' S_Q b_k`` where ``S_Q``
is the second-moment matrix of the target covariates.  Three regimes are
covered:

* ``covshift``   -- target covariates observed; initial fits on one half
  of each group, corrections through projection directions on the other
  half (sample splitting optional).
* ``known_sigma``-- the target second-moment matrix is known exactly; the
  plug-in and the correction targets use it directly and the covariance
  estimate drops the target fourth-moment block.
* ``no_shift``   -- all covariate distributions coincide; the corrections
  collapse to the Lasso fits themselves and no splitting or projection
  solve is needed.

Each estimator also returns the estimated covariance of the vectorized
lower triangle, which drives the downstream sampling procedure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lasso
from .debias import ProjectionDirection, projection_direction_gamma, projection_direction_lowdim
from .linalg import lower_triangle_pairs, pi_index
from .rng import RngStream

__all__ = [
    "MultiSourceData",
    "GroupFit",
    "GammaEstimate",
    "GammaTuning",
    "gamma_hat_covshift",
    "gamma_hat_known_sigma",
    "gamma_hat_noshift",
    "compute_d0",
]


@dataclass
class MultiSourceData:
    """L labeled source datasets plus optional unlabeled target covariates."""

    groups: list[tuple[np.ndarray, np.ndarray]]
    target_X: np.ndarray | None = None
    known_sigma_q: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.groups) < 1:
            raise ValueError("need at least one group")
        cleaned = []
        p = None
        for idx, (X, y) in enumerate(self.groups):
            X = np.asarray(X, dtype=float)
            y = np.asarray(y, dtype=float).ravel()
            if X.ndim != 2 or X.shape[0] != y.size:
                raise ValueError(f"group {idx}: X/y shapes inconsistent")
            if p is None:
                p = X.shape[1]
            elif X.shape[1] != p:
                raise ValueError("all groups must share the feature dimension")
            cleaned.append((X, y))
        self.groups = cleaned
        if self.target_X is not None:
            self.target_X = np.asarray(self.target_X, dtype=float)
            if self.target_X.shape[1] != p:
                raise ValueError("target_X feature dimension mismatch")
        if self.known_sigma_q is not None:
            self.known_sigma_q = np.asarray(self.known_sigma_q, dtype=float)
            if self.known_sigma_q.shape != (p, p):
                raise ValueError("known_sigma_q must be p x p")

    @property
    def L(self) -> int:
        return len(self.groups)

    @property
    def p(self) -> int:
        return self.groups[0][0].shape[1]

    @property
    def n_min(self) -> int:
        return min(X.shape[0] for X, _ in self.groups)


@dataclass
class GammaTuning:
    """Knobs shared by the regression-covariance estimators.

    ``lambda_rule`` selects cross-validated penalties (``"cv"``, the
    operational default) or the closed-form level that needs the noise
    scale (``"fixed"``).  ``coef_override`` substitutes known coefficient
    vectors for the fitted ones, which is how oracle studies and the
    exactness tests bypass estimation error.
    """

    lambda_rule: str = "cv"
    cv_folds: int = 5
    n_lambda: int = 30
    lambda_min_ratio: float = 0.01
    slack_c: float = 0.01
    noise_sd: float | None = None  # used by lambda_rule="fixed"
    mu: float | None = None
    tau: float | None = None
    tau0: float = 0.2
    sample_split: bool = True
    lowdim: bool = False  # OLS fits instead of the Lasso (n > p required)
    coef_override: np.ndarray | None = None  # p x L


@dataclass
class GroupFit:
    """Per-group ingredients kept alongside the matrix estimate."""

    b_init: np.ndarray
    b_hat: np.ndarray
    sigma_hat: float
    n: int
    split_a: np.ndarray | None = None


@dataclass
class GammaEstimate:
    """Symmetric L x L estimate with the covariance of its lower triangle.

    ``v_hat`` is indexed by the lower-triangle map: entry
    ``(pi(l1,k1)-1, pi(l2,k2)-1)`` estimates the covariance between the
    errors of entries (l1,k1) and (l2,k2).  ``d0`` is the variance
    inflation floor used when sampling perturbations.
    """

    gamma_hat: np.ndarray
    v_hat: np.ndarray
    n_min: int
    d0: float
    regime: str
    per_group: list[GroupFit] = field(default_factory=list)
    u_directions: dict[tuple[int, int], ProjectionDirection] | None = None
    tau0: float = 0.2
    split_stream: RngStream | None = None

    @property
    def L(self) -> int:
        return self.gamma_hat.shape[0]


def compute_d0(v_hat: np.ndarray, n_min: int, tau0: float = 0.2) -> float:
    """Sampling-variance floor ``max{tau0 * max_j n * V_jj, 1}``."""
    if tau0 <= 0:
        raise ValueError("tau0 must be positive")
    v_hat = np.asarray(v_hat, dtype=float)
    return float(max(tau0 * n_min * np.max(np.diag(v_hat)), 1.0))


def _fit_group(X, y, tuning: GammaTuning, override_col=None) -> lasso.LassoFit:
    if override_col is not None:
        b = np.asarray(override_col, dtype=float).ravel()
        resid = y - X @ b
        return lasso.LassoFit(
            coefficients=b,
            lam=0.0,
            noise_sd=float(np.sqrt(resid @ resid / X.shape[0])),
            objective=float(resid @ resid / (2 * X.shape[0])),
            n_sweeps=0,
        )
    if tuning.lowdim:
        if X.shape[0] <= X.shape[1]:
            raise ValueError("lowdim fits require n > p")
        b, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ b
        return lasso.LassoFit(
            coefficients=b,
            lam=0.0,
            noise_sd=float(np.sqrt(resid @ resid / X.shape[0])),
            objective=float(resid @ resid / (2 * X.shape[0])),
            n_sweeps=0,
        )
    if tuning.lambda_rule == "fixed":
        if tuning.noise_sd is None:
            raise ValueError('lambda_rule="fixed" needs tuning.noise_sd')
        lam = lasso.default_lambda(X.shape[0], X.shape[1], tuning.noise_sd, tuning.slack_c)
        return lasso.lasso_fit(X, y, lam)
    return lasso.cv_lasso(
        X, y,
        folds=tuning.cv_folds,
        n_lambda=tuning.n_lambda,
        min_ratio=tuning.lambda_min_ratio,
    )


def _second_moment(X: np.ndarray) -> np.ndarray:
    return (X.T @ X) / X.shape[0]


def _target_fourth_moment_block(B_init: np.ndarray, target_X: np.ndarray, n_B: int) -> np.ndarray:
    """Fourth-moment covariance of the plug-in quadratic forms.

    ``B_init`` is p x L; returns the q x q block with q = L(L+1)/2,
    scaled for a plug-in second-moment matrix built from ``n_B`` rows.
    """
    L = B_init.shape[1]
    pairs = lower_triangle_pairs(L)
    T = target_X @ B_init  # N_Q x L
    N_Q = T.shape[0]
    Z = np.empty((N_Q, len(pairs)))
    means = np.empty(len(pairs))
    Sbar = T.T @ T / N_Q  # = B' SigmaBar B
    for j, (l, k) in enumerate(pairs):
        Z[:, j] = T[:, l - 1] * T[:, k - 1]
        means[j] = Sbar[l - 1, k - 1]
    block = (Z.T @ Z) / N_Q - np.outer(means, means)
    return block / n_B


def _noise_covariance_block(
    u_dirs: dict[tuple[int, int], np.ndarray],
    sigma2: np.ndarray,
    sizes: np.ndarray,
    second_moments: list[np.ndarray],
) -> np.ndarray:
    """Covariance contribution of the per-group noise terms.

    ``u_dirs[(l, k)]`` multiplies the residual of group ``l`` inside the
    correction of entry (l, k) (1-based keys; every ordered pair present).
    The indicator structure pairs entries that reuse the same group noise.
    """
    L = sizes.size
    pairs = lower_triangle_pairs(L)
    q = len(pairs)
    su = {key: second_moments[key[0] - 1] @ u for key, u in u_dirs.items()}
    V = np.zeros((q, q))
    for a, (l1, k1) in enumerate(pairs):
        for b, (l2, k2) in enumerate(pairs):
            acc = 0.0
            # noise of group l1
            partner = 0.0
            if l2 == l1:
                partner += float(u_dirs[(l2, k2)] @ su[(l1, k1)])
            if k2 == l1:
                partner += float(u_dirs[(k2, l2)] @ su[(l1, k1)])
            acc += sigma2[l1 - 1] / sizes[l1 - 1] * partner
            # noise of group k1
            partner = 0.0
            if l2 == k1:
                partner += float(u_dirs[(l2, k2)] @ su[(k1, l1)])
            if k2 == k1:
                partner += float(u_dirs[(k2, l2)] @ su[(k1, l1)])
            acc += sigma2[k1 - 1] / sizes[k1 - 1] * partner
            V[a, b] = acc
    return 0.5 * (V + V.T)


def _split_indices(n: int, stream: RngStream, tag: int) -> tuple[np.ndarray, np.ndarray]:
    perm = stream.child(tag).generator().permutation(n)
    half = n // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def _assemble_corrected(
    B_init: np.ndarray,
    sigma_plugin: np.ndarray,
    u_dirs: dict[tuple[int, int], np.ndarray],
    correction_data: list[tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Plug-in quadratic forms plus the two residual corrections per entry."""
    L = B_init.shape[1]
    G = np.zeros((L, L))
    resid_terms = []
    for X_B, r_B in correction_data:
        resid_terms.append(X_B.T @ r_B / X_B.shape[0])
    for l, k in lower_triangle_pairs(L):
        val = float(B_init[:, l - 1] @ sigma_plugin @ B_init[:, k - 1])
        val += float(u_dirs[(l, k)] @ resid_terms[l - 1])
        val += float(u_dirs[(k, l)] @ resid_terms[k - 1])
        G[l - 1, k - 1] = val
        G[k - 1, l - 1] = val
    return G


def _covshift_core(
    data: MultiSourceData,
    split_stream: RngStream,
    tuning: GammaTuning,
    sigma_q_known: np.ndarray | None,
) -> GammaEstimate:
    L, p = data.L, data.p
    for X, _ in data.groups:
        if X.shape[0] < 4:
            raise ValueError("each group needs at least 4 rows")
    split = tuning.sample_split
    fits_full: list[lasso.LassoFit] = []
    fits_init: list[lasso.LassoFit] = []
    corr_data: list[tuple[np.ndarray, np.ndarray]] = []
    second_moments: list[np.ndarray] = []
    splits_a: list[np.ndarray | None] = []
    for l, (X, y) in enumerate(data.groups):
        override = None if tuning.coef_override is None else tuning.coef_override[:, l]
        full = _fit_group(X, y, tuning, override)
        fits_full.append(full)
        if split:
            A_idx, B_idx = _split_indices(X.shape[0], split_stream, l)
            init = _fit_group(X[A_idx], y[A_idx], tuning, override)
            X_B, y_B = X[B_idx], y[B_idx]
            splits_a.append(A_idx)
        else:
            init = full
            X_B, y_B = X, y
            splits_a.append(None)
        fits_init.append(init)
        corr_data.append((X_B, y_B - X_B @ init.coefficients))
        second_moments.append(_second_moment(X_B))

    B_init = np.column_stack([f.coefficients for f in fits_init])
    if sigma_q_known is not None:
        sigma_plugin = sigma_q_known
        omega_base = sigma_q_known
        regime = "known_sigma"
    else:
        if data.target_X is None:
            raise ValueError("covariate-shift estimator needs target_X")
        if split:
            tgt_A, tgt_B = _split_indices(data.target_X.shape[0], split_stream, L)
            sigma_plugin = _second_moment(data.target_X[tgt_B])
            omega_base = _second_moment(data.target_X[tgt_A])
        else:
            sigma_plugin = _second_moment(data.target_X)
            omega_base = sigma_plugin
        regime = "covshift"

    # Projection directions for every ordered pair (group, coefficient).
    mu, tau = tuning.mu, tuning.tau
    u_store: dict[tuple[int, int], ProjectionDirection] = {}
    u_vecs: dict[tuple[int, int], np.ndarray] = {}
    omegas = [omega_base @ B_init[:, k] for k in range(L)]
    for l in range(1, L + 1):
        X_B = corr_data[l - 1][0]
        mu_l = mu if mu is not None else 0.5 * np.sqrt(np.log(p) / X_B.shape[0])
        tau_l = tau if tau is not None else 2.0 * np.sqrt(np.log(X_B.shape[0]))
        for k in range(1, L + 1):
            if float(np.linalg.norm(omegas[k - 1])) == 0.0:
                # A zero target has the exact direction zero.
                direction = ProjectionDirection(direction=np.zeros(p))
            else:
                try:
                    direction = projection_direction_gamma(
                        second_moments[l - 1], omegas[k - 1],
                        mu=mu_l, tau=tau_l, X_rows=X_B,
                    )
                except Exception as exc:
                    raise RuntimeError(
                        f"projection for pair (group={l}, coefficient={k}) failed: {exc}"
                    ) from exc
            u_store[(l, k)] = direction
            u_vecs[(l, k)] = direction.direction

    G = _assemble_corrected(B_init, sigma_plugin, u_vecs, corr_data)

    sigma2 = np.array([f.noise_sd**2 for f in fits_full])
    sizes = np.array([Xb.shape[0] for Xb, _ in corr_data], dtype=float)
    V = _noise_covariance_block(u_vecs, sigma2, sizes, second_moments)
    if sigma_q_known is None:
        n_B = data.target_X.shape[0] - data.target_X.shape[0] // 2 if split else data.target_X.shape[0]
        V = V + _target_fourth_moment_block(B_init, data.target_X, n_B)

    neg = np.diag(V) < 0
    if np.any(neg):  # roundoff guard; structurally the diagonal is >= 0
        warnings.warn("clipping tiny negative variance diagonal", stacklevel=2)
        V[neg, neg] = 0.0

    n_min = data.n_min
    per_group = [
        GroupFit(
            b_init=fits_init[l].coefficients,
            b_hat=fits_full[l].coefficients,
            sigma_hat=float(fits_full[l].noise_sd),
            n=data.groups[l][0].shape[0],
            split_a=splits_a[l],
        )
        for l in range(L)
    ]
    return GammaEstimate(
        gamma_hat=G,
        v_hat=V,
        n_min=n_min,
        d0=compute_d0(V, n_min, tuning.tau0),
        regime=regime,
        per_group=per_group,
        u_directions=u_store,
        tau0=tuning.tau0,
        split_stream=split_stream if split else None,
    )


def gamma_hat_covshift(
    data: MultiSourceData,
    split_stream: RngStream | int = 0,
    tuning: GammaTuning | None = None,
) -> GammaEstimate:
    """Covariate-shift estimator with observed target covariates.

    With ``tuning.sample_split`` (the default), each group and the target
    rows are halved: initial fits and correction targets come from the A
    halves, plug-in moments and residual corrections from the B halves.
    ``split_stream`` seeds the reproducible splits.
    """
    tuning = tuning or GammaTuning()
    if isinstance(split_stream, int):
        split_stream = RngStream(split_stream, 0)
    if data.target_X is None:
        raise ValueError("covshift regime requires target_X")
    return _covshift_core(data, split_stream, tuning, None)


def gamma_hat_known_sigma(
    data: MultiSourceData,
    tuning: GammaTuning | None = None,
    split_stream: RngStream | int = 0,
) -> GammaEstimate:
    """Covariate-shift estimator when the target second moment is known.

    Replaces the estimated target moments everywhere; the covariance of
    the estimate keeps only the group-noise block (no target-sampling
    uncertainty remains).
    """
    tuning = tuning or GammaTuning()
    if isinstance(split_stream, int):
        split_stream = RngStream(split_stream, 0)
    if data.known_sigma_q is None:
        raise ValueError("known-sigma regime requires known_sigma_q")
    return _covshift_core(data, split_stream, tuning, data.known_sigma_q)


def gamma_hat_noshift(
    data: MultiSourceData,
    tuning: GammaTuning | None = None,
) -> GammaEstimate:
    """Estimator for the no-covariate-shift regime.

    The pooled second-moment matrix uses every available covariate row
    (all groups plus target rows when present).  The corrections use the
    full-data fits directly, so no splitting or projection programs are
    involved.
    """
    tuning = tuning or GammaTuning()
    L, p = data.L, data.p
    fits: list[lasso.LassoFit] = []
    for l, (X, y) in enumerate(data.groups):
        override = None if tuning.coef_override is None else tuning.coef_override[:, l]
        fits.append(_fit_group(X, y, tuning, override))
    B_hat = np.column_stack([f.coefficients for f in fits])

    blocks = [X for X, _ in data.groups]
    if data.target_X is not None and data.target_X.shape[0] > 0:
        blocks.append(data.target_X)
    N = sum(b.shape[0] for b in blocks)
    pooled = np.zeros((p, p))
    for b in blocks:
        pooled += b.T @ b
    pooled /= N

    G = np.zeros((L, L))
    resid_terms = []
    for (X, y), f in zip(data.groups, fits):
        resid_terms.append(X.T @ (y - X @ f.coefficients) / X.shape[0])
    for l, k in lower_triangle_pairs(L):
        val = float(B_hat[:, l - 1] @ pooled @ B_hat[:, k - 1])
        val += float(B_hat[:, k - 1] @ resid_terms[l - 1])
        val += float(B_hat[:, l - 1] @ resid_terms[k - 1])
        G[l - 1, k - 1] = val
        G[k - 1, l - 1] = val

    # Noise block through the general machinery with direction (l,k) -> b_k.
    u_dirs = {
        (l, k): B_hat[:, k - 1]
        for l in range(1, L + 1)
        for k in range(1, L + 1)
    }
    sigma2 = np.array([f.noise_sd**2 for f in fits])
    sizes = np.array([X.shape[0] for X, _ in data.groups], dtype=float)
    moments = [_second_moment(X) for X, _ in data.groups]
    V = _noise_covariance_block(u_dirs, sigma2, sizes, moments)

    # Fourth-moment block of the pooled second-moment matrix.
    pairs = lower_triangle_pairs(L)
    q = len(pairs)
    acc = np.zeros((q, q))
    means = np.empty(q)
    for j, (l, k) in enumerate(pairs):
        means[j] = float(B_hat[:, l - 1] @ pooled @ B_hat[:, k - 1])
    for b_rows in blocks:
        T = b_rows @ B_hat
        Z = np.empty((T.shape[0], q))
        for j, (l, k) in enumerate(pairs):
            Z[:, j] = T[:, l - 1] * T[:, k - 1]
        acc += Z.T @ Z
    V2 = acc / N**2 - np.outer(means, means) / N
    V = V + 0.5 * (V2 + V2.T)

    neg = np.diag(V) < 0
    if np.any(neg):
        warnings.warn("clipping tiny negative variance diagonal", stacklevel=2)
        V[neg, neg] = 0.0

    n_min = data.n_min
    per_group = [
        GroupFit(
            b_init=fits[l].coefficients,
            b_hat=fits[l].coefficients,
            sigma_hat=float(fits[l].noise_sd),
            n=data.groups[l][0].shape[0],
        )
        for l in range(L)
    ]
    return GammaEstimate(
        gamma_hat=G,
        v_hat=V,
        n_min=n_min,
        d0=compute_d0(V, n_min, tuning.tau0),
        regime="no_shift",
        per_group=per_group,
        tau0=tuning.tau0,
    )
