"""Experiment runner: replicated coverage/length/RMSE studies.

Runs R replications of a catalog setting across ridge levels and
methods, in parallel over replications, and writes one flat CSV of
aggregate rows plus a JSON manifest that reproduces the run bitwise.
Replication ``r`` owns the substream ``(seed, r)``, so results do not
depend on the worker count or scheduling order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import __version__
from .aggregation import min_quadratic_simplex
from .debias import FunctionalEstimate, debiased_linear_functional, projection_direction_linear, projection_direction_lowdim
from .densenet import SampledDraw, densenet_ci, draw_samples, instability_measure, test_null
from .gamma import GammaEstimate, GammaTuning, MultiSourceData, gamma_hat_covshift, gamma_hat_known_sigma, gamma_hat_noshift
from .rng import RngStream
from .simgen import SettingSpec, build_setting, compute_truth, generate_replicate, load_setting

__all__ = ["RunConfig", "run", "rmse_table", "CSV_HEADER", "config_hash"]

CSV_HEADER = (
    "setting,regime,n,p,N_Q,L,delta,method,reps,coverage,mean_length,"
    "length_ratio,rmse,instability,reject_rate,failures,seed"
)
RMSE_HEADER = "setting,regime,n,p,N_Q,L,delta,reps,rmse,seed"

_SPEC_CACHE: dict[tuple, SettingSpec] = {}


def _default_workers() -> int:
    return max(1, int(os.environ.get("MAXIMIN_WORKERS", "1")))


@dataclass
class RunConfig:
    """Everything one experiment depends on.

    ``regime="auto"`` picks the covariate-shift pipeline when the setting
    shifts the target covariance and the no-shift pipeline otherwise.
    ``sample_split`` enables the data-splitting construction of the
    covariance-matrix estimate (the benchmark tables run without it).
    ``force_zero_draws`` replaces the Gaussian perturbations with zeros,
    a diagnostic that collapses the union interval onto a single one.
    """

    setting: str = "1"
    n: int = 300
    p: int = 500
    N_Q: int = 2000
    reps: int = 100
    deltas: tuple[float, ...] = (0.0,)
    M: int = 500
    alpha: float = 0.05
    alpha0: float = 0.01
    tau0: float = 0.2
    eta0: float = 0.01
    index_variant: str = "coordinate"
    regime: str = "auto"
    methods: tuple[str, ...] = ("proposed", "normality")
    seed: int = 0
    workers: int = field(default_factory=_default_workers)
    out: str = "results"
    lowdim: bool = False
    sample_split: bool = False
    force_zero_draws: bool = False
    resample_m: int = 0  # 0 means n // 2
    resample_B: int = 500
    perb: float = 1.0
    setting_file: str | None = None

    def __post_init__(self) -> None:
        self.deltas = tuple(float(d) for d in self.deltas)
        self.methods = tuple(self.methods)
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if not 0 < self.alpha0 <= 0.05:
            raise ValueError("alpha0 must lie in (0, 0.05]")
        if self.M < 1 or self.reps < 1:
            raise ValueError("M and reps must be >= 1")
        if self.regime not in ("auto", "covshift", "known", "noshift"):
            raise ValueError(f"unknown regime {self.regime!r}")
        known = {"proposed", "normality", "bootstrap", "subsampling"}
        bad = set(self.methods) - known
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")


_HASH_EXCLUDE = {"workers", "out"}  # fields that do not affect the data


def config_hash(config: RunConfig) -> str:
    payload = {
        k: v for k, v in dataclasses.asdict(config).items() if k not in _HASH_EXCLUDE
    }
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _resolve_spec(config: RunConfig) -> SettingSpec:
    key = (config.setting, config.n, config.p, config.N_Q, config.perb, config.setting_file)
    if key not in _SPEC_CACHE:
        if config.setting_file:
            spec = load_setting(config.setting_file)
        else:
            spec = build_setting(
                config.setting, n=config.n, p=config.p, N_Q=config.N_Q, perb=config.perb
            )
        _SPEC_CACHE[key] = spec
    return _SPEC_CACHE[key]


def _resolve_regime(config: RunConfig, spec: SettingSpec) -> str:
    if config.regime != "auto":
        return config.regime
    return "covshift" if spec.covariate_shift else "noshift"


def _tuning(config: RunConfig) -> GammaTuning:
    return GammaTuning(
        tau0=config.tau0,
        sample_split=config.sample_split,
        lowdim=config.lowdim,
    )


def _fit_gamma(data: MultiSourceData, regime: str, config: RunConfig, rep_rng: RngStream, spec: SettingSpec) -> GammaEstimate:
    tuning = _tuning(config)
    if regime == "covshift":
        return gamma_hat_covshift(data, rep_rng.child(11), tuning)
    if regime == "known":
        data.known_sigma_q = spec.Sigma_Q
        return gamma_hat_known_sigma(data, tuning, rep_rng.child(11))
    return gamma_hat_noshift(data, tuning)


def _group_functionals(
    data: MultiSourceData,
    est: GammaEstimate,
    x_new: np.ndarray,
    lowdim: bool,
) -> list[FunctionalEstimate]:
    out = []
    for l, ((X, y), fit) in enumerate(zip(data.groups, est.per_group)):
        if lowdim:
            S = X.T @ X / X.shape[0]
            v = projection_direction_lowdim(S, x_new)
        else:
            v = projection_direction_linear(X, x_new)
        out.append(
            debiased_linear_functional(X, y, fit.b_hat, v, x_new, fit.sigma_hat, group=l + 1)
        )
    return out


def _zero_draws(est: GammaEstimate, M: int, delta: float) -> list[SampledDraw]:
    q = est.v_hat.shape[0]
    weight = min_quadratic_simplex(est.gamma_hat, delta)
    return [
        SampledDraw(m=m, s_vec=np.zeros(q), gamma_matrix=est.gamma_hat.copy(), weight=weight)
        for m in range(M)
    ]


def _replicate(payload: tuple[dict, int]) -> dict:
    """Worker body for one replication; returns one record per ridge level."""
    config_dict, rep = payload
    config = RunConfig(**config_dict)
    spec = _resolve_spec(config)
    rep_rng = RngStream(config.seed, 0).child(1, rep)
    t0 = time.time()
    try:
        data = generate_replicate(spec, rep_rng.child(0))
        regime = _resolve_regime(config, spec)
        est = _fit_gamma(data, regime, config, rep_rng, spec)
        functionals = _group_functionals(data, est, spec.x_new, config.lowdim)
        records: list[ReplicationResult] = []
        for delta in config.deltas:
            truth = compute_truth(spec, delta)[2]
            if config.force_zero_draws:
                draws = _zero_draws(est, config.M, delta)
            else:
                draws = draw_samples(est, config.M, delta, rep_rng.child(2))
            ci = densenet_ci(
                est,
                functionals,
                delta=delta,
                alpha=config.alpha,
                alpha0=config.alpha0,
                eta0=config.eta0,
                variant=config.index_variant,
                draws=draws,
            )
            rec = ReplicationResult(replicate=rep, delta=delta, truth=truth)
            rec.points["proposed"] = ci.point_estimate
            rec.intervals["proposed"] = ci.hull
            rec.covered["proposed"] = not test_null(ci, truth)
            rec.lengths["proposed"] = ci.hull_length
            rec.instability = instability_measure(est, delta, draws=draws)
            rec.rejected_zero["proposed"] = test_null(ci, 0.0)
            records.append(rec)
        if ("bootstrap" in config.methods or "subsampling" in config.methods) and 0.0 in config.deltas:
            m = config.resample_m if config.resample_m >= 2 else spec.n // 2
            from .simgen import resample_ci  # local import keeps worker import light

            rec0 = next(r for r in records if r.delta == 0.0)
            for name, repl in (("bootstrap", True), ("subsampling", False)):
                if name in config.methods:
                    lo, hi = resample_ci(
                        data, m, config.resample_B, repl, config.alpha,
                        rep_rng.child(3 if repl else 4), spec.x_new,
                    )
                    rec0.intervals[name] = (lo, hi)
                    rec0.covered[name] = lo <= rec0.truth <= hi
                    rec0.lengths[name] = hi - lo
                    rec0.rejected_zero[name] = not lo <= 0.0 <= hi
        elapsed = time.time() - t0
        for rec in records:
            rec.runtime = elapsed
        return {"rep": rep, "ok": True, "records": records}
    except Exception as exc:  # failures are recorded, the run continues
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _coverage_row(values: list[bool]) -> float:
    return float(np.mean(np.asarray(values, dtype=float)))


def run(config: RunConfig) -> dict:
    """Execute the configured study; writes results.csv and manifest.json.

    Returns the manifest as a dict (rows included) for programmatic use.
    """
    t0 = time.time()
    spec = _resolve_spec(config)
    regime = _resolve_regime(config, spec)
    truths = {repr(d): compute_truth(spec, d)[2] for d in config.deltas}
    payloads = [(dataclasses.asdict(config), r) for r in range(config.reps)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_replicate, payloads, chunksize=1))
    else:
        results = [_replicate(pl) for pl in payloads]
    ok = [r for r in results if r["ok"]]
    failures = [r for r in results if not r["ok"]]
    for f in failures:
        print(f"replicate {f['rep']} failed: {f['error']}", file=sys.stderr)
    if not ok:
        raise RuntimeError("every replication failed")

    z = stats.norm.isf(config.alpha / 2)
    rows: list[dict] = []
    for delta in config.deltas:
        key = repr(delta)
        truth = truths[key]
        points = np.array([r["proposed"][key]["point"] for r in ok])
        per_method: dict[str, dict] = {}
        if "proposed" in config.methods:
            covered = [
                any(lo <= truth <= hi for lo, hi in r["proposed"][key]["components"])
                for r in ok
            ]
            lengths = [r["proposed"][key]["hull"][1] - r["proposed"][key]["hull"][0] for r in ok]
            per_method["proposed"] = {
                "coverage": _coverage_row(covered),
                "mean_length": float(np.mean(lengths)),
                "rmse": float(np.sqrt(np.mean((points - truth) ** 2))),
                "instability": float(np.mean([r["proposed"][key]["instability"] for r in ok])),
                "reject_rate": _coverage_row([r["proposed"][key]["reject0"] for r in ok]),
            }
        if "normality" in config.methods and len(ok) >= 2:
            se = float(np.std(points, ddof=1))
            covered = [abs(pt - truth) <= z * se for pt in points]
            per_method["normality"] = {
                "coverage": _coverage_row(covered),
                "mean_length": float(2.0 * z * se),
                "rmse": float(np.sqrt(np.mean((points - truth) ** 2))),
                "instability": None,
                "reject_rate": _coverage_row([abs(pt) > z * se for pt in points]),
            }
        if delta == 0.0:
            for name in ("bootstrap", "subsampling"):
                if name in config.methods and all(name in r for r in ok):
                    ivs = [r[name]["interval"] for r in ok]
                    covered = [lo <= truth <= hi for lo, hi in ivs]
                    per_method[name] = {
                        "coverage": _coverage_row(covered),
                        "mean_length": float(np.mean([hi - lo for lo, hi in ivs])),
                        "rmse": None,
                        "instability": None,
                        "reject_rate": _coverage_row([not lo <= 0.0 <= hi for lo, hi in ivs]),
                    }
        base_len = per_method.get("normality", {}).get("mean_length")
        for name in config.methods:
            if name not in per_method:
                continue
            m = per_method[name]
            ratio = None
            if base_len:
                ratio = float(m["mean_length"] / base_len)
            rows.append({
                "setting": spec.id,
                "regime": regime,
                "n": spec.n,
                "p": spec.p,
                "N_Q": spec.N_Q,
                "L": spec.L,
                "delta": delta,
                "method": name,
                "reps": len(ok),
                "coverage": m["coverage"],
                "mean_length": m["mean_length"],
                "length_ratio": ratio,
                "rmse": m["rmse"],
                "instability": m["instability"],
                "reject_rate": m["reject_rate"],
                "failures": len(failures),
                "seed": config.seed,
            })

    os.makedirs(config.out, exist_ok=True)
    h = config_hash(config)
    csv_path = os.path.join(config.out, "results.csv")
    with open(csv_path, "w") as fh:
        fh.write(f"# config={h}\n")
        fh.write(CSV_HEADER + "\n")
        keys = CSV_HEADER.split(",")
        for row in rows:
            fh.write(",".join(_fmt(row[k]) for k in keys) + "\n")
    manifest = {
        "config": dataclasses.asdict(config),
        "config_hash": h,
        "version": __version__,
        "wallclock_s": time.time() - t0,
        "truths": truths,
        "rows": rows,
        "failures": [f["error"] for f in failures],
    }
    with open(os.path.join(config.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    print(
        f"run {spec.id}: {len(ok)}/{config.reps} replicates ok, "
        f"{time.time() - t0:.1f}s -> {csv_path}",
        file=sys.stderr,
    )
    return manifest


def _rmse_replicate(payload: tuple[dict, tuple[int, ...], int]) -> dict:
    """Point estimates for one replicate across the coupled n-grid."""
    config_dict, n_grid, rep = payload
    config = RunConfig(**config_dict)
    base = dataclasses.replace(config, n=max(n_grid))
    spec = _resolve_spec(base)
    rep_rng = RngStream(config.seed, 0).child(1, rep)
    try:
        data_full = generate_replicate(spec, rep_rng.child(0))
        out: dict = {"rep": rep, "ok": True, "points": {}}
        for n in n_grid:
            groups = [(X[:n], y[:n]) for X, y in data_full.groups]
            data = MultiSourceData(groups=groups, target_X=data_full.target_X)
            spec_n = dataclasses.replace(spec, n=n)
            regime = _resolve_regime(config, spec)
            est = _fit_gamma(data, regime, config, rep_rng, spec_n)
            functionals = _group_functionals(data, est, spec.x_new, config.lowdim)
            values = np.array([f.value for f in functionals])
            for delta in config.deltas:
                w = min_quadratic_simplex(est.gamma_hat, delta)
                out["points"][f"{n}|{delta!r}"] = float(w.weights @ values)
        return out
    except Exception as exc:
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def rmse_table(config: RunConfig, n_grid: tuple[int, ...]) -> dict:
    """RMSE of the aggregated point estimator over an n-by-delta grid.

    Replicates share randomness across the grid (smaller samples are
    prefixes of the largest), so the n-trend is a paired comparison.
    Writes ``rmse.csv`` next to the usual outputs.
    """
    t0 = time.time()
    n_grid = tuple(sorted(int(n) for n in n_grid))
    spec = _resolve_spec(dataclasses.replace(config, n=max(n_grid)))
    regime = _resolve_regime(config, spec)
    truths = {repr(d): compute_truth(spec, d)[2] for d in config.deltas}
    payloads = [(dataclasses.asdict(config), n_grid, r) for r in range(config.reps)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_rmse_replicate, payloads, chunksize=1))
    else:
        results = [_rmse_replicate(pl) for pl in payloads]
    ok = [r for r in results if r["ok"]]
    failures = [r for r in results if not r["ok"]]
    for f in failures:
        print(f"replicate {f['rep']} failed: {f['error']}", file=sys.stderr)
    if not ok:
        raise RuntimeError("every replication failed")
    rows = []
    for n in n_grid:
        for delta in config.deltas:
            truth = truths[repr(delta)]
            pts = np.array([r["points"][f"{n}|{delta!r}"] for r in ok])
            rows.append({
                "setting": spec.id,
                "regime": regime,
                "n": n,
                "p": spec.p,
                "N_Q": spec.N_Q,
                "L": spec.L,
                "delta": delta,
                "reps": len(ok),
                "rmse": float(np.sqrt(np.mean((pts - truth) ** 2))),
                "seed": config.seed,
            })
    os.makedirs(config.out, exist_ok=True)
    h = config_hash(config)
    path = os.path.join(config.out, "rmse.csv")
    with open(path, "w") as fh:
        fh.write(f"# config={h}\n")
        fh.write(RMSE_HEADER + "\n")
        keys = RMSE_HEADER.split(",")
        for row in rows:
            fh.write(",".join(_fmt(row[k]) for k in keys) + "\n")
    manifest = {
        "config": dataclasses.asdict(config),
        "n_grid": list(n_grid),
        "config_hash": h,
        "version": __version__,
        "wallclock_s": time.time() - t0,
        "rows": rows,
        "failures": [f["error"] for f in failures],
    }
    with open(os.path.join(config.out, "rmse_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest
