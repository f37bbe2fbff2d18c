"""Experiment driver: calibrated DP training over (n, eps, d) grids, scaling fits,
and the stability comparison table."""
from __future__ import annotations

import dataclasses
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Bounds, SyntheticDistribution, with_outlier
from .losses import PairwiseLoss, make_loss
from .optimizer import TrainConfig, default_theta0, dp_pairwise_gd, exact_minimize
from .privacy import PrivacyBudget, calibrate
from .risk import empirical_risk, excess_population_risk, reference_minimizer
from .stability import SolverConfig, beta_statistics, estimate_uas, exact_trainer

T_RULES = ("log_n_eps", "log_sqrtn_eps", "fixed")
METRICS = ("excess_empirical_risk", "excess_population_risk")


def iterations_for(rule: str, n: int, eps: float, p: int, c_T: float = 3.0, fixed: Optional[int] = None) -> int:
    """Iteration count from a schedule.

    ``log_n_eps``: ``max(1, ceil(c_T ln(n eps / sqrt(p))))``;
    ``log_sqrtn_eps``: ``max(1, ceil(c_T ln(sqrt(n) eps)))``;
    ``fixed``: ``fixed``.
    """
    if rule == "fixed":
        if fixed is None or fixed < 1:
            raise ValueError("the fixed rule needs T_fixed >= 1")
        return int(fixed)
    if rule == "log_n_eps":
        arg = n * eps / math.sqrt(p)
    elif rule == "log_sqrtn_eps":
        arg = math.sqrt(n) * eps
    else:
        raise ValueError(f"unknown T rule {rule!r}")
    return max(1, math.ceil(c_T * math.log(arg))) if arg > 1 else 1


@dataclass(frozen=True)
class ExperimentConfig:
    loss: str = "ranking"
    lam: float = 0.1
    x_max: float = 1.0
    y_max: float = 1.0
    constants: str = "published"
    n: tuple = (200, 400, 800)
    eps: tuple = (1.0,)
    d: tuple = (5,)
    delta: float = 1e-5
    t_rule: str = "log_n_eps"
    c_T: float = 3.0
    T_fixed: Optional[int] = None
    seeds: int = 20
    master_seed: int = 0
    calibration: str = "moments_accountant"
    sigma_override: Optional[float] = None
    project: Optional[float] = None
    eta: Optional[float] = None
    mc_pairs: int = 100_000
    ref_pairs: int = 200_000
    xi: float = 0.1
    dist_seed: int = 0
    tol: float = 1e-10
    cell_budget_s: float = 60.0
    bootstrap: int = 1000

    def __post_init__(self):
        for name in ("n", "eps", "d"):
            vals = getattr(self, name)
            if isinstance(vals, (int, float)):
                vals = (vals,)
            vals = tuple(vals)
            if not vals or any(not v > 0 for v in vals):
                raise ValueError(f"grid {name!r} must be a non-empty list of positive values")
            object.__setattr__(self, name, vals)
        if any(int(v) != v or v < 2 for v in self.n):
            raise ValueError("n values must be integers >= 2")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if self.t_rule not in T_RULES:
            raise ValueError(f"t_rule must be one of {T_RULES}")
        if self.sigma_override is not None and self.sigma_override < 0:
            raise ValueError("sigma_override must be >= 0")
        PrivacyBudget(min(self.eps), self.delta)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k in ("n", "eps", "d"):
            out[k] = list(out[k])
        return out

    @property
    def bounds_for(self):
        return lambda d: Bounds(d=d, x_max=self.x_max, y_max=self.y_max)

    def make_loss(self, d: int) -> PairwiseLoss:
        radius = 1.0 if self.project is None else self.project
        return make_loss(self.loss, self.lam, self.bounds_for(d), radius=radius, source=self.constants)


def _cell_seeds(master_seed: int, n: int, eps: float, d: int, s: int) -> dict:
    ss = np.random.SeedSequence([master_seed, n, int(round(eps * 1e9)), d, s])
    data, init, noise, mc = (int(c.generate_state(1)[0]) for c in ss.spawn(4))
    return {"data": data, "init": init, "noise": noise, "mc": mc}


class _BudgetExceeded(Exception):
    pass


@dataclass
class ExperimentReport:
    config: dict
    records: list
    aggregates: list
    slopes: list
    references: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        from .report import make_report

        cfg = dict(self.config)
        cfg["references"] = self.references
        return make_report(cfg, self.records, self.aggregates, self.slopes)


def _reference(cfg: ExperimentConfig, d: int) -> tuple:
    loss = cfg.make_loss(d)
    dist = SyntheticDistribution(_synthetic_kind(cfg.loss), d, dist_seed=cfg.dist_seed)
    seed = int(np.random.SeedSequence([cfg.master_seed, d, 0xEF]).generate_state(1)[0])
    fit = reference_minimizer(loss, dist, cfg.ref_pairs, seed, tol=cfg.tol, eta=cfg.eta)
    info = {
        "d": d,
        "m_pairs": fit.m,
        "seed": seed,
        "grad_norm": fit.grad_norm,
        "holdout_grad_norm": fit.holdout_grad_norm,
        "converged": fit.converged,
        "theta": fit.theta,
        "distribution": dist.describe(),
    }
    return fit.theta, info


def _synthetic_kind(loss_kind: str) -> str:
    return {"ranking": "ranking", "bipartite_ranking": "ranking", "metric": "metric", "metric_learning": "metric"}[
        loss_kind
    ]


def run_cell(cfg: ExperimentConfig, n: int, eps: float, d: int, s: int, theta_ref, timings: bool = False) -> dict:
    """One (n, eps, d, seed) cell: data, calibration, DP training, excess risks."""
    t0 = time.perf_counter()
    seeds = _cell_seeds(cfg.master_seed, n, eps, d, s)
    rec = {"n": n, "eps": eps, "d": d, "seed_index": s, "seeds": seeds, "status": "ok"}

    def budget():
        if time.perf_counter() - t0 > cfg.cell_budget_s:
            raise _BudgetExceeded()

    try:
        if theta_ref is None:
            raise RuntimeError("reference minimizer unavailable for this dimension")
        loss = cfg.make_loss(d)
        p = loss.n_params(d)
        dist = SyntheticDistribution(_synthetic_kind(cfg.loss), d, dist_seed=cfg.dist_seed)
        D = dist.sample(n, np.random.default_rng(seeds["data"]), seed=seeds["data"])
        T = iterations_for(cfg.t_rule, n, eps, p, cfg.c_T, cfg.T_fixed)
        budget_ = PrivacyBudget(eps, cfg.delta)
        G = loss.constants.G
        if cfg.sigma_override is None:
            noise = calibrate(G, T, n, budget_, cfg.calibration)
            sigma = noise.sigma
        else:
            sigma = float(cfg.sigma_override)
        theta0 = default_theta0(p, seeds["init"], cfg.project)
        tc = TrainConfig(T=T, sigma=sigma, eta=cfg.eta, theta0=theta0, project=cfg.project, seed=seeds["noise"])
        with np.errstate(over="ignore", invalid="ignore"):
            res = dp_pairwise_gd(loss, D, tc)
        budget()
        theta_priv = res.theta_priv.theta
        opt = exact_minimize(loss, D, tol=cfg.tol, theta0=theta0, eta=cfg.eta)
        budget()
        l_priv = empirical_risk(loss, theta_priv, D)
        l_star = opt.value
        dec = excess_population_risk(
            loss, theta_priv, theta_ref, dist, cfg.mc_pairs, seeds["mc"], D=D, theta_star=opt.theta
        )
        rec.update(
            {
                "p": p,
                "T": T,
                "G": G,
                "sigma": sigma,
                "sigma_bound": 8 * G * math.sqrt(T * math.log(1 / cfg.delta)) / (n * eps),
                "eta": res.eta,
                "excess_empirical_risk": l_priv - l_star,
                "excess_population_risk": dec.total,
                "excess_population_stderr": dec.stderr,
                "generalization_error": dec.generalization_error,
                "approximation_gap": dec.approximation_gap,
                "minimizer_grad_norm": opt.grad_norm,
                "minimizer_converged": opt.converged,
                "theta_priv": theta_priv,
            }
        )
    except _BudgetExceeded:
        rec["status"] = "budget_exceeded"
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the grid
        rec["status"] = "failed"
        rec["error"] = f"{type(exc).__name__}: {exc}"
    if timings:
        rec["runtime_s"] = time.perf_counter() - t0
    return rec


def _aggregate(cfg: ExperimentConfig, records: list) -> list:
    out = []
    q = 1.0 - cfg.xi
    for d, n, eps in itertools.product(cfg.d, cfg.n, cfg.eps):
        cell = [r for r in records if r["n"] == n and r["eps"] == eps and r["d"] == d]
        ok = [r for r in cell if r["status"] == "ok"]
        agg = {"n": n, "eps": eps, "d": d, "seeds_ok": len(ok), "seeds_failed": len(cell) - len(ok)}
        for metric in METRICS:
            vals = np.array([r[metric] for r in ok])
            if vals.size:
                agg[metric] = {
                    "mean": float(vals.mean()),
                    "median": float(np.median(vals)),
                    "quantile": float(np.quantile(vals, q)),
                    "quantile_level": q,
                }
            else:
                agg[metric] = None
        out.append(agg)
    return out


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise ValueError("a scaling fit needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))


def _statistic(vals: np.ndarray, statistic: str, xi: float) -> float:
    if statistic == "mean":
        return float(vals.mean())
    if statistic == "median":
        return float(np.median(vals))
    if statistic == "quantile":
        return float(np.quantile(vals, 1.0 - xi))
    raise ValueError(f"unknown statistic {statistic!r}")


def scaling_fit(
    report,
    axis: str,
    metric: str = "excess_empirical_risk",
    statistic: str = "mean",
    fixed: Optional[dict] = None,
    n_boot: Optional[int] = None,
    seed: Optional[int] = None,
) -> dict:
    """Log-log slope of a per-cell statistic along one grid axis.

    ``report`` is an :class:`ExperimentReport` or its dict form. The other
    axes are held at ``fixed`` (required when they have several values).
    The 95% interval is a percentile bootstrap over seeds within each cell.
    """
    if axis not in ("n", "eps", "d", "p"):
        raise ValueError(f"unknown axis {axis!r}")
    # the p axis walks the d grid but regresses on the parameter count
    by_params = axis == "p"
    axis = "d" if by_params else axis
    rep = report.to_dict() if isinstance(report, ExperimentReport) else report
    cfg = rep["config"]
    xi = cfg.get("xi", 0.1)
    fixed = dict(fixed or {})
    for other in ("n", "eps", "d"):
        if other == axis or other in fixed:
            continue
        vals = cfg[other]
        if len(vals) != 1:
            raise ValueError(f"axis {other!r} has several values; fix it")
        fixed[other] = vals[0]
    xs = sorted(cfg[axis])
    if len(xs) < 3:
        raise ValueError("a scaling fit needs at least 3 grid points")
    groups = []
    for x in xs:
        key = dict(fixed, **{axis: x})
        vals = np.array(
            [
                r[metric]
                for r in rep["records"]
                if r["status"] == "ok" and all(r[k] == v for k, v in key.items())
            ]
        )
        if vals.size == 0:
            raise ValueError(f"no successful records at {key}")
        groups.append(vals)
    if by_params:
        xs = [_n_params(cfg["loss"], d) for d in xs]
    stats = [_statistic(v, statistic, xi) for v in groups]
    out = {"axis": "p" if by_params else axis, "metric": metric, "statistic": statistic, "fixed": fixed, "x": xs, "y": stats}
    try:
        out["slope"] = fit_loglog_slope(xs, stats)
    except ValueError as exc:
        out.update(slope=None, ci_low=None, ci_high=None, note=str(exc))
        return out
    n_boot = cfg.get("bootstrap", 1000) if n_boot is None else n_boot
    rng = np.random.default_rng(np.random.SeedSequence([cfg.get("master_seed", 0) if seed is None else seed, 0xB007]))
    boots = []
    for _ in range(n_boot):
        ys = [_statistic(v[rng.integers(0, v.size, v.size)], statistic, xi) for v in groups]
        if min(ys) > 0:
            boots.append(fit_loglog_slope(xs, ys))
    if boots:
        out["ci_low"], out["ci_high"] = (float(v) for v in np.quantile(boots, [0.025, 0.975]))
    else:
        out["ci_low"] = out["ci_high"] = None
    out["bootstrap_used"] = len(boots)
    return out


def _n_params(loss_kind: str, d: int) -> int:
    return d * d if _synthetic_kind(loss_kind) == "metric" else d


def _all_slopes(report: ExperimentReport) -> list:
    cfg = report.config
    slopes = []
    for axis in ("n", "eps", "d"):
        if len(cfg[axis]) < 3:
            continue
        others = [a for a in ("n", "eps", "d") if a != axis]
        for combo in itertools.product(*(cfg[a] for a in others)):
            fixed = dict(zip(others, combo))
            for metric, statistic in (
                ("excess_empirical_risk", "mean"),
                ("excess_population_risk", "mean"),
                ("excess_population_risk", "quantile"),
            ):
                try:
                    slopes.append(scaling_fit(report, axis, metric, statistic, fixed=fixed))
                except ValueError as exc:
                    slopes.append({"axis": axis, "metric": metric, "statistic": statistic, "fixed": fixed,
                                   "slope": None, "note": str(exc)})
    return slopes


def run_experiment(cfg: ExperimentConfig, workers: int = 1, timings: bool = False) -> ExperimentReport:
    """Run every (d, n, eps, seed) cell; the result depends only on ``cfg``.

    Cells run in parallel over ``workers`` threads; each owns rng streams
    derived from (master seed, cell coordinates, seed index), so the report is
    identical for any worker count. Failing cells are recorded, not raised.
    """
    refs, ref_info = {}, {}
    for d in cfg.d:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                refs[d], ref_info[str(d)] = _reference(cfg, d)
        except Exception as exc:  # noqa: BLE001 - reported on every cell of this d
            refs[d], ref_info[str(d)] = None, {"d": d, "error": f"{type(exc).__name__}: {exc}"}
    cells = [
        (n, eps, d, s)
        for d, n, eps in itertools.product(cfg.d, cfg.n, cfg.eps)
        for s in range(cfg.seeds)
    ]

    def job(c):
        n, eps, d, s = c
        return run_cell(cfg, n, eps, d, s, refs[d], timings=timings)

    if workers <= 1:
        records = [job(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(job, cells))
    report = ExperimentReport(cfg.to_dict(), records, _aggregate(cfg, records), [], ref_info)
    report.slopes = _all_slopes(report)
    return report


# -- stability comparison ---------------------------------------------------

@dataclass(frozen=True)
class StabilityConfig:
    loss: str = "ranking"
    lam: float = 0.1
    d: int = 5
    n: tuple = (20, 40, 80)
    seeds: int = 5
    removals: Optional[int] = None
    pairs: int = 200
    uas_replacements: int = 10
    methods: tuple = ("retrain", "influence")
    outlier: bool = False
    outlier_shrink: float = 0.5
    master_seed: int = 0
    dist_seed: int = 0
    constants: str = "published"
    tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(self.n) if not isinstance(self.n, int) else (self.n,))
        object.__setattr__(self, "methods", tuple(self.methods))
        if any(v < 3 for v in self.n):
            raise ValueError("stability experiments need n >= 3")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["n"] = list(self.n)
        out["methods"] = list(self.methods)
        return out


def stability_experiment(cfg: StabilityConfig, workers: int = 1, data_factory=None) -> dict:
    """beta statistics (retrain and influence), UAS and the sup-vs-mean table per n.

    With ``cfg.outlier`` each dataset is also run in a contaminated copy
    (:func:`with_outlier`) and the rows carry both gap ratios.
    ``data_factory(n, seed)`` replaces the synthetic draw when given.
    """
    kind = _synthetic_kind(cfg.loss)
    loss = make_loss(cfg.loss, cfg.lam, Bounds(cfg.d), source=cfg.constants)
    dist = SyntheticDistribution(kind, cfg.d, dist_seed=cfg.dist_seed)
    solver = SolverConfig(tol=cfg.tol)
    variants = ("uniform", "outlier") if cfg.outlier else ("uniform",)

    def job(args):
        n, s = args
        ss = np.random.SeedSequence([cfg.master_seed, n, s, 0x57AB])
        data_seed, probe_seed, uas_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
        if data_factory is None:
            base = dist.sample(n, np.random.default_rng(data_seed), seed=data_seed)
        else:
            base = data_factory(n, data_seed)
        rec = {"n": n, "seed_index": s, "seeds": {"data": data_seed, "probe": probe_seed, "uas": uas_seed}}
        for variant in variants:
            D = base if variant == "uniform" else with_outlier(base, dist, shrink=cfg.outlier_shrink)
            removals = n if variant == "outlier" and cfg.removals is None else cfg.removals
            pairs = min(cfg.pairs, n * (n - 1))
            entry = {}
            theta_star = None
            for method in cfg.methods:
                rep = beta_statistics(loss, D, method, removals, pairs, probe_seed, solver, theta_star=theta_star)
                theta_star = rep.theta_star
                entry[method] = rep.to_dict()
            if cfg.uas_replacements > 0:
                uas = estimate_uas(loss, D, exact_trainer(loss, solver), cfg.uas_replacements, uas_seed)
                entry["uas"] = {"kappa": uas.kappa, "G_kappa": uas.G_kappa, "n_kappa": n * uas.kappa}
            rec[variant] = entry
        return rec

    jobs = [(n, s) for n in cfg.n for s in range(cfg.seeds)]
    if workers <= 1:
        records = [job(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(job, jobs))

    table = []
    for n in cfg.n:
        rows = [r for r in records if r["n"] == n]
        for variant in variants:
            for method in cfg.methods:
                reps = [r[variant][method] for r in rows]
                row = {
                    "n": n,
                    "data": variant,
                    "method": method,
                    "n_beta_uniform": float(np.median([x["n_beta_uniform"] for x in reps])),
                    "n_beta_sup_mean": float(np.median([x["n_beta_sup_mean"] for x in reps])),
                    "n_beta_median": float(np.median([x["n_beta_median"] for x in reps])),
                    "gap_ratio": float(np.median([x["gap_ratio"] for x in reps])),
                }
                if cfg.uas_replacements > 0:
                    row["G_kappa"] = float(np.median([r[variant]["uas"]["G_kappa"] for r in rows]))
                table.append(row)
    return {"config": cfg.to_dict(), "records": records, "aggregates": {"table": table}, "slopes": []}
