"""Sampling-based confidence intervals for aggregated linear functionals.

The weight vector minimizing the estimated simplex program can have a
non-standard limiting distribution, so instead of relying on asymptotic
normality the interval is built by perturbation: draw many Gaussian
perturbations of the estimated regression covariance matrix, re-solve the
weight program per draw, build a plain Gaussian interval per draw that
only accounts for the per-group functional noise, and take the union over
the draws that survive a standardized-magnitude screen.  With enough
draws, at least one perturbed weight lands close to the truth, which is
what makes the union cover.

Also provides the sampling-based instability measure and the data-driven
selection of the ridge level.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .aggregation import SimplexWeight, min_quadratic_simplex, reward_estimated
from .debias import FunctionalEstimate
from .gamma import GammaEstimate
from .linalg import sym_sqrt, unvecl
from .rng import RngStream

__all__ = [
    "SampledDraw",
    "AggregatedCI",
    "draw_samples",
    "index_set",
    "sampled_interval",
    "aggregate_ci",
    "test_null",
    "instability_measure",
    "select_delta",
    "densenet_ci",
]


@dataclass
class SampledDraw:
    """One perturbation draw and the weight it induces."""

    m: int
    s_vec: np.ndarray
    gamma_matrix: np.ndarray
    weight: SimplexWeight
    in_index_set: bool = True


@dataclass
class AggregatedCI:
    """Union-of-intervals confidence set plus reporting conveniences.

    ``hull`` is the reported interval (min lower, max upper);
    ``union_components`` are the maximal disjoint pieces of the exact
    union, which is what hypothesis tests consult.
    """

    point_estimate: float
    intervals: list[tuple[float, float]]
    hull: tuple[float, float]
    union_components: list[tuple[float, float]]
    alpha: float
    alpha0: float
    eta0: float
    delta: float
    m_set_size: int
    screen_fallback: bool = False

    @property
    def hull_length(self) -> float:
        return self.hull[1] - self.hull[0]

    @property
    def disconnected(self) -> bool:
        return len(self.union_components) > 1


def draw_samples(
    est: GammaEstimate,
    M: int,
    delta: float,
    rng: RngStream,
) -> list[SampledDraw]:
    """Draw M perturbed matrices and solve the weight program for each.

    Perturbations of the vectorized lower triangle follow
    ``N(0, V_hat + d0/n * I)``; each perturbed matrix is the estimate
    minus the unstacked perturbation, and its weight minimizes the
    PSD-repaired ridge quadratic over the simplex.  Deterministic given
    the stream.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    q = est.v_hat.shape[0]
    cov = est.v_hat + (est.d0 / est.n_min) * np.eye(q)
    C = sym_sqrt(cov)
    Z = rng.generator().standard_normal((M, q))
    S = Z @ C.T
    draws = []
    for m in range(M):
        gm = est.gamma_hat - unvecl(S[m], est.L)
        weight = min_quadratic_simplex(gm, delta)
        draws.append(SampledDraw(m=m, s_vec=S[m], gamma_matrix=gm, weight=weight))
    return draws


def _screen(
    draws: list[SampledDraw],
    est: GammaEstimate,
    alpha0: float,
    variant: str,
) -> tuple[np.ndarray, bool]:
    if not 0 < alpha0 <= 0.05:
        raise ValueError("alpha0 must lie in (0, 0.05]")
    if alpha0 > 0.01:
        warnings.warn("alpha0 above the 0.01 default; screen is loose", stacklevel=2)
    L = est.L
    q = est.v_hat.shape[0]
    S = np.vstack([d.s_vec for d in draws])
    scale2 = np.diag(est.v_hat) + est.d0 / est.n_min
    if variant == "coordinate":
        z = stats.norm.isf(alpha0 / (L * (L + 1)))
        stat = np.max(np.abs(S) / np.sqrt(scale2)[None, :], axis=1)
        mask = stat <= 1.1 * z
    elif variant == "chisq":
        cov = est.v_hat + (est.d0 / est.n_min) * np.eye(q)
        lam, U = np.linalg.eigh(cov)
        W = (U / np.sqrt(lam)) @ U.T
        stat = np.sum((S @ W.T) ** 2, axis=1)
        mask = stat <= 1.1 * stats.chi2.isf(alpha0, df=q)
    else:
        raise ValueError(f"unknown index-set variant {variant!r}")
    fell_back = False
    if not np.any(mask):
        warnings.warn("index set empty; keeping the least extreme draw", stacklevel=2)
        mask = np.zeros(len(draws), dtype=bool)
        mask[int(np.argmin(stat))] = True
        fell_back = True
    for d, flag in zip(draws, mask):
        d.in_index_set = bool(flag)
    return mask, fell_back


def index_set(
    draws: list[SampledDraw],
    est: GammaEstimate,
    alpha0: float = 0.01,
    variant: str = "coordinate",
) -> np.ndarray:
    """Screen draws whose perturbation is too far in the tails.

    ``variant="coordinate"`` keeps a draw when every standardized
    coordinate is at most ``1.1 z_{alpha0 / (L (L+1))}``;
    ``variant="chisq"`` compares the squared whitened norm to
    ``1.1`` times the upper-``alpha0`` chi-square quantile.

    An empty screen falls back to the single least-extreme draw (the
    screen only guarantees non-emptiness with high probability) and is
    flagged with a warning.  Marks ``in_index_set`` on the draws and
    returns the boolean mask.
    """
    mask, _ = _screen(draws, est, alpha0, variant)
    return mask


def sampled_interval(
    draw: SampledDraw,
    functionals: list[FunctionalEstimate],
    eta0: float = 0.01,
    alpha: float = 0.05,
) -> tuple[float, float]:
    """Gaussian interval for one draw, holding its weight fixed.

    Center is the weight-combined functional; the half width is
    ``(1 + eta0) z_{alpha/2} sqrt(sum_l gamma_l^2 se_l^2)`` (the small
    inflation offsets finite-sample bias of the corrected functionals).
    """
    if eta0 < 0:
        raise ValueError("eta0 must be non-negative")
    gamma = draw.weight.weights
    if len(functionals) != gamma.size:
        raise ValueError("one functional estimate per group is required")
    values = np.array([f.value for f in functionals])
    ses = np.array([f.se for f in functionals])
    center = float(gamma @ values)
    half = (1.0 + eta0) * stats.norm.isf(alpha / 2) * float(np.sqrt(np.sum(gamma**2 * ses**2)))
    return center - half, center + half


def aggregate_ci(
    intervals: list[tuple[float, float]],
    point_estimate: float,
    alpha: float = 0.05,
    alpha0: float = 0.01,
    eta0: float = 0.01,
    delta: float = 0.0,
    screen_fallback: bool = False,
) -> AggregatedCI:
    """Union the retained sampled intervals into the reported set.

    Components are merged by sort-and-sweep; the headline interval is the
    convex hull (what length tables report), while the possibly
    disconnected union is kept for exact test semantics.
    """
    if not intervals:
        raise ValueError("need at least one interval")
    ordered = sorted(intervals)
    components = [list(ordered[0])]
    for lo, hi in ordered[1:]:
        if lo <= components[-1][1]:
            components[-1][1] = max(components[-1][1], hi)
        else:
            components.append([lo, hi])
    hull = (ordered[0][0], max(hi for _, hi in intervals))
    return AggregatedCI(
        point_estimate=float(point_estimate),
        intervals=list(intervals),
        hull=hull,
        union_components=[(lo, hi) for lo, hi in components],
        alpha=alpha,
        alpha0=alpha0,
        eta0=eta0,
        delta=delta,
        m_set_size=len(intervals),
        screen_fallback=screen_fallback,
    )


def test_null(ci: AggregatedCI, value: float) -> bool:
    """Reject iff the value lies in no component of the union."""
    return not any(lo <= value <= hi for lo, hi in ci.union_components)


def instability_measure(
    est: GammaEstimate,
    delta: float,
    M: int = 500,
    rng: RngStream | None = None,
    draws: list[SampledDraw] | None = None,
) -> float:
    """Ratio of sampled-weight dispersion to sampled-matrix dispersion.

    Large values mean small errors in the matrix blow up into large
    weight errors; values above 0.5 are conventionally called unstable.
    All M draws enter (no screening).  Pass ``draws`` to reuse an
    existing sample, provided it was drawn at the same ridge level.
    """
    if draws is None:
        if rng is None:
            raise ValueError("either draws or rng must be given")
        draws = draw_samples(est, M, delta, rng)
    center = min_quadratic_simplex(est.gamma_hat, delta)
    num = sum(float(np.sum((d.weight.weights - center.weights) ** 2)) for d in draws)
    den = sum(float(np.sum((d.gamma_matrix - est.gamma_hat) ** 2)) for d in draws)
    if den == 0.0:  # degenerate (zero-perturbation) draws
        return 0.0
    return num / den


def select_delta(
    est: GammaEstimate,
    grid: list[float] | np.ndarray = (0.0, 0.1, 0.5, 1.0, 2.0),
    M: int = 500,
    rng: RngStream | None = None,
    reward_floor: float = 0.95,
    t0: float = 0.5,
) -> float:
    """Data-driven ridge level.

    Returns 0 when the unridged weight program is already stable
    (instability below ``t0``).  Otherwise returns the largest grid value
    whose estimated-reward ratio against the unridged weight stays at or
    above ``reward_floor``, falling back to 0 when none qualifies.  A
    non-positive baseline reward carries no information about the
    trade-off, in which case every grid value qualifies.
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid[0] != 0.0:
        raise ValueError("grid must contain 0")
    if np.any(grid < 0) or np.any(grid > 2.0):
        raise ValueError("grid must lie in [0, 2]")
    rng = rng or RngStream(0, 0)
    i0 = instability_measure(est, 0.0, M, rng.child(0))
    if i0 < t0:
        return 0.0
    base_weight = min_quadratic_simplex(est.gamma_hat, 0.0)
    r0 = reward_estimated(base_weight, est.gamma_hat)
    chosen = 0.0
    for d in grid:
        w = min_quadratic_simplex(est.gamma_hat, float(d))
        r = reward_estimated(w, est.gamma_hat)
        if r0 <= 1e-12 or r >= reward_floor * r0:
            chosen = float(d)
        # grid ascends; keep the largest qualifying value
    return chosen


def densenet_ci(
    est: GammaEstimate,
    functionals: list[FunctionalEstimate],
    delta: float = 0.0,
    M: int = 500,
    alpha: float = 0.05,
    alpha0: float = 0.01,
    eta0: float = 0.01,
    variant: str = "coordinate",
    rng: RngStream | None = None,
    draws: list[SampledDraw] | None = None,
) -> AggregatedCI:
    """End-to-end interval for the aggregated functional at one ridge level.

    Draws perturbations (unless provided), screens them, builds one
    interval per retained draw, and unions the result.  The point
    estimate combines the functionals with the unperturbed weight.
    """
    if draws is None:
        if rng is None:
            raise ValueError("either draws or rng must be given")
        draws = draw_samples(est, M, delta, rng)
    mask, fell_back = _screen(draws, est, alpha0, variant)
    intervals = [
        sampled_interval(d, functionals, eta0=eta0, alpha=alpha)
        for d, keep in zip(draws, mask)
        if keep
    ]
    weight = min_quadratic_simplex(est.gamma_hat, delta)
    values = np.array([f.value for f in functionals])
    point = float(weight.weights @ values)
    return aggregate_ci(
        intervals,
        point,
        alpha=alpha,
        alpha0=alpha0,
        eta0=eta0,
        delta=delta,
        screen_fallback=fell_back,
    )
