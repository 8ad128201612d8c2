"""Reproducible experiment drivers: basket pricing, mixture selection, risk
estimate stability.  Each returns an ``ExperimentReport`` that
``emit_report`` turns into CSV and gnuplot files.
"""

from __future__ import annotations

import csv
import io
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .lattice import (
    CandidateSet,
    LatticeConfig,
    ParticleCloud,
    SelectionProblem,
    build_lattice,
    pooled_distribution,
    select_greedy,
    select_sup_greedy,
    selected_distribution,
)
from .markets import (
    BasketPut,
    GbmModel,
    basket_put_payoff,
    binomial_node_count,
    binomial_price_american,
    gbm_kernel_sampler,
    load_config,
    market_from_config,
)
from .risk import CostSpec, LipschitzLedger, MeanSemideviation, Stopping, backward_evaluate, value_error_bound
from .transport import wasserstein_exact

GMM_CONFIGS = ("gmm_d2_c5", "gmm_d2_c10", "gmm_d2_c16", "gmm_d3_c3", "gmm_d3_c5", "gmm_d5_c3")


def row_rng(master_seed: int, config_id: str, rep: int) -> np.random.Generator:
    """Stream for one report row; rows never share random numbers."""
    key = zlib.crc32(config_id.encode())
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(key, rep)))


def row_seed(master_seed: int, config_id: str, rep: int) -> int:
    return int(row_rng(master_seed, config_id, rep).integers(2**63 - 1))


@dataclass
class ExperimentReport:
    """Rows keyed by the leading ``keys`` columns.

    Wall-clock times live apart from the rows so that the main table is
    byte-for-byte reproducible.
    """

    name: str
    columns: list[str]
    keys: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)
    timings: list[dict[str, Any]] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def sorted_rows(self) -> list[dict[str, Any]]:
        return sorted(self.rows, key=lambda r: tuple(r[k] for k in self.keys))

    def column(self, name: str, **where) -> np.ndarray:
        return np.array(
            [r[name] for r in self.sorted_rows() if all(r[k] == v for k, v in where.items())]
        )


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(float(x)) for x in v)
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def summarize(report: ExperimentReport, by: Sequence[str] | None = None) -> list[dict[str, Any]]:
    """Mean and sample std of every numeric column, grouped by ``by``
    (default: the keys other than seed and rep)."""
    by = list(by) if by is not None else [k for k in report.keys if k not in ("seed", "rep")]
    numeric = [
        c for c in report.columns
        if c not in report.keys and c not in ("seed", "rep") and all(isinstance(r[c], (int, float)) for r in report.rows)
    ]
    groups: dict[tuple, list] = {}
    for r in report.sorted_rows():
        groups.setdefault(tuple(r[k] for k in by), []).append(r)
    out = []
    for key, rows in groups.items():
        rec = dict(zip(by, key))
        rec["n"] = len(rows)
        for c in numeric:
            x = np.array([r[c] for r in rows], dtype=float)
            rec[f"{c}_mean"] = float(x.mean())
            rec[f"{c}_std"] = float(x.std(ddof=1)) if len(x) > 1 else 0.0
        out.append(rec)
    return out


def emit_report(report: ExperimentReport, path) -> list[Path]:
    """Write ``<name>.csv``, ``<name>_summary.csv``, ``<name>_timings.csv``
    and ``<name>.dat`` (whitespace-separated summary for gnuplot) into the
    directory ``path``."""
    if not report.rows:
        raise ValueError("report has no rows")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    main = out / f"{report.name}.csv"
    main.write_text(_csv(report.columns, report.sorted_rows()))
    files.append(main)
    summary = summarize(report)
    cols = list(summary[0].keys())
    f = out / f"{report.name}_summary.csv"
    f.write_text(_csv(cols, summary))
    files.append(f)
    if report.timings:
        tcols = list(report.timings[0].keys())
        trows = sorted(report.timings, key=lambda r: tuple(str(r[c]) for c in tcols[:-1]))
        f = out / f"{report.name}_timings.csv"
        f.write_text(_csv(tcols, trows))
        files.append(f)
    f = out / f"{report.name}.dat"
    lines = ["# " + " ".join(cols)]
    lines += [" ".join(_fmt(r[c]).replace(" ", "_") for c in cols) for r in summary]
    f.write_text("\n".join(lines) + "\n")
    files.append(f)
    return files


def _pool_map(fn: Callable, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# ---------------------------------------------------------------------------
# basket option


def put_ledger(model: GbmModel, opt: BasketPut, deltas) -> LipschitzLedger:
    """Constants for the discounted stopping recursion of a basket put.

    The put value is ``|w|_2``-Lipschitz in the prices at every date (the
    discounted prices are martingales), so the measure constant is
    ``e^{-r dt} |w|_2`` and the value constant ``e^{-r dt}``.
    """
    disc = math.exp(-model.r * model.dt)
    lip = float(np.linalg.norm(opt.weights))
    n = len(deltas)
    return LipschitzLedger([disc * lip] * n, [disc] * n, deltas)


def price_on_lattice(lattice, model: GbmModel, opt: BasketPut) -> float:
    payoff = lambda t, x: basket_put_payoff(opt, x)  # noqa: E731
    costs = CostSpec.terminal(len(lattice) - 1, lambda x: basket_put_payoff(opt, x), reward=payoff)
    v = backward_evaluate(lattice, costs, Stopping(), math.exp(-model.r * model.dt))
    return v.root


def _basket_job(job):
    market, N, cfg, rep = job
    model, opt = market_from_config(market, N)
    t0 = time.perf_counter()
    lat = build_lattice(model.s0, gbm_kernel_sampler(model), N, cfg)
    price = price_on_lattice(lat, model, opt)
    elapsed = time.perf_counter() - t0
    deltas = lat.deltas
    return {
        "N": N,
        "rep": rep,
        "seed": cfg.seed,
        "grid_price": price,
        "grid_points": lat.node_count,
        "max_stage_points": max(len(s) for s in lat.stages),
        "deltas": deltas.tolist(),
        "error_bound": value_error_bound(put_ledger(model, opt, deltas)),
    }, elapsed


def run_basket_experiment(
    market: dict[str, Any] | str,
    lattice_config: LatticeConfig,
    steps: Iterable[int],
    seeds: int | Sequence[int] = 5,
    master_seed: int = 0,
    config_id: str = "basket",
    workers: int = 1,
) -> ExperimentReport:
    """Grid-method and binomial prices of an American basket put for every
    number of time steps in ``steps`` and every repetition."""
    market = load_config(market) if isinstance(market, str) else market
    reps = range(seeds) if isinstance(seeds, int) else seeds
    binom = {}
    for N in steps:
        model, opt = market_from_config(market, N)
        try:
            binom[N] = binomial_price_american(model, opt)
        except ValueError:
            binom[N] = float("nan")
    jobs = [
        (market, N, replace(lattice_config, seed=row_seed(master_seed, f"{config_id}/N{N}", r)), r)
        for N in binom
        for r in reps
    ]
    report = ExperimentReport(
        "basket",
        ["config", "N", "rep", "seed", "grid_price", "binomial_price", "binomial_nodes",
         "grid_points", "max_stage_points", "error_bound", "deltas"],
        ["config", "N", "rep"],
        meta={"market": market, "lattice": lattice_config.__dict__},
    )
    n_assets = len(market["s0"])
    for (row, elapsed), job in zip(_pool_map(_basket_job, jobs, workers), jobs):
        row.update(config=config_id, binomial_price=binom[row["N"]],
                   binomial_nodes=binomial_node_count(n_assets, row["N"]))
        report.rows.append(row)
        report.timings.append({"config": config_id, "N": row["N"], "rep": row["rep"], "seconds": elapsed})
    return report


# ---------------------------------------------------------------------------
# Gaussian mixtures


@dataclass(frozen=True, eq=False)
class GmmConfig:
    name: str
    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    particles_per_center: int
    budget: int
    reference_w1: dict[str, float] | None = None

    def __post_init__(self):
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        k, d = mu.shape
        if cov.shape != (k, d, d) or w.shape != (k,):
            raise ValueError("means, covariances and weights disagree in shape")
        if not np.allclose(cov, cov.transpose(0, 2, 1), atol=0, rtol=0):
            raise ValueError("covariances must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-8:
            raise ValueError("covariance is not positive semidefinite")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("center weights must be a probability vector")
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, rng: np.random.Generator, n: int | None = None) -> ParticleCloud:
        n = n or self.particles_per_center
        groups = [rng.multivariate_normal(m, c, size=n, method="eigh") for m, c in zip(self.means, self.covariances)]
        return ParticleCloud.from_groups(self.means, self.weights, groups)


def load_gmm(name_or_path) -> GmmConfig:
    """Bundled mixture by name (``gmm_d2_c5`` ...) or a JSON path.

    The stored matrices are the printed ones; the loader mirrors the upper
    triangle of each covariance and rescales the weights to sum to one,
    since a few printed values are slightly off.
    """
    raw = load_config(name_or_path)
    cov = np.asarray(raw["covariances"], dtype=float)
    iu = np.triu_indices(cov.shape[1], 1)
    for c in cov:
        c[(iu[1], iu[0])] = c[iu]
    w = np.asarray(raw["weights"], dtype=float)
    name = Path(str(name_or_path)).stem
    return GmmConfig(
        name, raw["means"], cov, w / w.sum(),
        int(raw["particles_per_center"]), int(raw["budget"]), raw.get("reference_w1"),
    )


def _gmm_job(job):
    gmm, budget, factor, seed, rep = job
    rng = np.random.default_rng(seed)
    cloud = gmm.sample(rng)
    k = min(len(cloud), math.ceil(factor * budget))
    cand = cloud.particles[np.sort(rng.choice(len(cloud), size=k, replace=False))]
    problem = SelectionProblem(cloud, CandidateSet(cand), min(budget, k), 1.0)
    pooled = pooled_distribution(cloud)
    out = []
    for method, fn in (("sup", select_sup_greedy), ("itd", select_greedy)):
        t0 = time.perf_counter()
        res = fn(problem)
        elapsed = time.perf_counter() - t0
        w1 = wasserstein_exact(selected_distribution(problem, res), pooled)[0]
        counts = cloud.counts
        per = np.bincount(cloud.owner, weights=_costs(problem, res) / counts[cloud.owner], minlength=len(counts))
        out.append(({
            "config": gmm.name, "method": method, "rep": rep, "seed": seed,
            "w1": w1, "itd_objective": res.objective, "sup_objective": float(per.max()),
            "sites": int(res.gamma.sum()),
        }, elapsed))
    return out


def _costs(problem, res):
    diff = problem.clouds.particles - problem.candidates.sites[res.assignment]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def run_gmm_selection(
    gmm: GmmConfig | str,
    budget: int | None = None,
    seeds: int | Sequence[int] = 10,
    master_seed: int = 0,
    candidates_factor: float = 5.0,
    particles: int | None = None,
    workers: int = 1,
) -> ExperimentReport:
    """Pick ``budget`` sites from one shared particle sample twice, by the
    sup (minimax) objective and by the integrated objective, and report
    the order-1 Wasserstein distance of each selection to the particles."""
    gmm = load_gmm(gmm) if isinstance(gmm, str) else gmm
    if particles is not None:
        gmm = replace(gmm, particles_per_center=particles)
    budget = budget or gmm.budget
    reps = range(seeds) if isinstance(seeds, int) else seeds
    jobs = [(gmm, budget, candidates_factor, row_seed(master_seed, gmm.name, r), r) for r in reps]
    report = ExperimentReport(
        "gmm",
        ["config", "method", "rep", "seed", "w1", "itd_objective", "sup_objective", "sites"],
        ["config", "method", "rep"],
        meta={"budget": budget, "particles_per_center": gmm.particles_per_center},
    )
    for pair in _pool_map(_gmm_job, jobs, workers):
        for row, elapsed in pair:
            report.rows.append(row)
            report.timings.append({"config": row["config"], "method": row["method"], "rep": row["rep"], "seconds": elapsed})
    return report


# ---------------------------------------------------------------------------
# stability of risk estimates


def _risk_job(job):
    market, particles, budget, seed, rep = job
    model, opt = market_from_config(market, 1)
    rng = np.random.default_rng(seed)
    s = model.s0 * np.exp(model.drift * model.T + math.sqrt(model.T) * rng.standard_normal((particles, model.dim)) @ model.sigma.T)
    x = s @ opt.weights
    msd = MeanSemideviation(kappa=1.0, p=1.0)
    w = np.full(particles, 1.0 / particles)
    mc_mean = float(w @ x)
    mc_semi = msd.evaluate(x, w) - mc_mean
    cloud = ParticleCloud.from_groups(model.s0[None, :], [1.0], [s])
    problem = SelectionProblem(cloud, CandidateSet(s), min(budget, particles), 1.0)
    res = select_greedy(problem)
    sel = selected_distribution(problem, res)
    xg = sel.points @ opt.weights
    grid_mean = float(sel.weights @ xg)
    grid_semi = msd.evaluate(xg, sel.weights) - grid_mean
    return [
        {"config": "risk", "method": "monte_carlo", "rep": rep, "seed": seed, "mean": mc_mean, "semideviation": mc_semi, "points": particles},
        {"config": "risk", "method": "grid", "rep": rep, "seed": seed, "mean": grid_mean, "semideviation": grid_semi, "points": len(sel)},
    ]


def run_risk_stability(
    market: dict[str, Any] | str,
    seeds: int | Sequence[int] = 50,
    master_seed: int = 0,
    particles: int = 1000,
    budget: int = 400,
    workers: int = 1,
) -> ExperimentReport:
    """Plug-in Monte Carlo versus grid-selected estimates of the mean and the
    first-order upper semideviation of the basket value at maturity."""
    market = load_config(market) if isinstance(market, str) else market
    reps = range(seeds) if isinstance(seeds, int) else seeds
    jobs = [(market, particles, budget, row_seed(master_seed, "risk", r), r) for r in reps]
    report = ExperimentReport(
        "risk_stability",
        ["config", "method", "rep", "seed", "mean", "semideviation", "points"],
        ["config", "method", "rep"],
        meta={"particles": particles, "budget": budget},
    )
    for rows in _pool_map(_risk_job, jobs, workers):
        report.rows.extend(rows)
    return report


def stability_summary(report: ExperimentReport) -> dict[str, dict[str, float]]:
    """Across-repetition std of each estimator."""
    out = {}
    for m in ("monte_carlo", "grid"):
        out[m] = {
            "mean_std": float(np.std(report.column("mean", method=m), ddof=1)),
            "semideviation_std": float(np.std(report.column("semideviation", method=m), ddof=1)),
        }
    return out
