"""Forward construction of a scenario lattice from a kernel sampler.

Each stage draws particles from every representative state, picks at most
``M`` sites among candidate points by solving the facility-location program

    min  sum_s lam_s / |I_s| sum_i sum_k d(x_si, zeta_k)^p beta_sik
    s.t. sum_k beta_sik = 1,  beta_sik <= gamma_k,  sum_k gamma_k <= M,
         gamma binary,

and reads the next-stage kernel off the particle-to-site assignment.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import count
from pathlib import Path
from typing import Any, Callable, NamedTuple, Protocol

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from . import _select
from .kernel_metric import DiscreteKernel
from .transport import DiscreteMeasure, _as_points

METHODS = ("exact_mip", "lp_round", "greedy")
SELECTORS = {"exact": "exact_mip", "lp-round": "lp_round", "greedy": "greedy"}

# stream ids for SeedSequence spawn keys
_PARTICLES, _CANDIDATES, _ROUNDING = 0, 1, 2


class KernelSampler(Protocol):
    """Draws i.i.d. successors of given states.

    ``sample(t, states, n, rng)`` takes states of shape ``(S, d)`` and
    returns an array of shape ``(S, n, d')`` with ``n`` draws from
    ``Q_t(. | states[s])`` for each ``s``.
    """

    def sample(self, t: int, states: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        ...


def stage_rng(seed: int, t: int, stream: int) -> np.random.Generator:
    """Generator for one (stage, purpose) pair, independent of all others."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(t, stream)))


# ---------------------------------------------------------------------------
# problem data


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    """Particles grouped by the source state they were drawn from.

    ``particles[i]`` was drawn from ``sources[owner[i]]``; sources carry the
    marginal weights ``source_weights``.  Particle ``i`` weighs
    ``source_weights[owner[i]] / count[owner[i]]`` in the objective.
    """

    sources: np.ndarray
    source_weights: np.ndarray
    particles: np.ndarray
    owner: np.ndarray

    def __post_init__(self):
        src = _as_points(self.sources)
        lam = np.asarray(self.source_weights, dtype=float).reshape(-1)
        x = _as_points(self.particles)
        own = np.asarray(self.owner, dtype=np.int64).reshape(-1)
        if lam.shape[0] != src.shape[0]:
            raise ValueError("one weight per source expected")
        if own.shape[0] != x.shape[0]:
            raise ValueError("one owner per particle expected")
        if own.size and (own.min() < 0 or own.max() >= src.shape[0]):
            raise ValueError("particle owner out of range")
        counts = np.bincount(own, minlength=src.shape[0])
        if np.any(counts[lam > 0] < 1):
            raise ValueError("every source of positive weight needs at least one particle")
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "source_weights", lam)
        object.__setattr__(self, "particles", x)
        object.__setattr__(self, "owner", own)

    @classmethod
    def from_groups(cls, sources, source_weights, groups) -> "ParticleCloud":
        """Build from one particle array per source (ragged counts allowed)."""
        groups = [_as_points(g) for g in groups]
        owner = np.concatenate([np.full(len(g), s) for s, g in enumerate(groups)])
        return cls(sources, source_weights, np.vstack(groups), owner)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.sources.shape[0])

    @property
    def weights(self) -> np.ndarray:
        """Objective weight of every particle."""
        counts = self.counts
        return self.source_weights[self.owner] / counts[self.owner]

    def __len__(self) -> int:
        return self.particles.shape[0]


@dataclass(frozen=True, eq=False)
class CandidateSet:
    sites: np.ndarray

    def __post_init__(self):
        z = _as_points(self.sites)
        if z.shape[0] == 0:
            raise ValueError("candidate set is empty")
        object.__setattr__(self, "sites", z)

    def __len__(self) -> int:
        return self.sites.shape[0]


@dataclass(frozen=True, eq=False)
class SelectionProblem:
    clouds: ParticleCloud
    candidates: CandidateSet
    budget: int
    p: float = 1.0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.budget > len(self.candidates):
            raise ValueError(f"budget {self.budget} exceeds {len(self.candidates)} candidates")
        if self.clouds.particles.shape[1] != self.candidates.sites.shape[1]:
            raise ValueError("particles and candidates live in different dimensions")
        if self.p < 1:
            raise ValueError("p must be >= 1")

    @property
    def size(self) -> int:
        """Number of assignment variables beta."""
        return len(self.clouds) * len(self.candidates)

    def cost_matrix(self) -> np.ndarray:
        """Weighted costs ``w_i d(x_i, zeta_k)^p``, dense (small instances only)."""
        d = cdist(self.clouds.particles, self.candidates.sites)
        if self.p != 1:
            d = d**self.p
        return self.clouds.weights[:, None] * d


@dataclass(eq=False)
class SelectionResult:
    """Chosen sites and the particle assignment.

    The assignment is integral: particle ``i`` sends all of its mass to
    candidate ``assignment[i]``, so ``beta`` is a 0/1 matrix.
    """

    gamma: np.ndarray
    assignment: np.ndarray
    objective: float
    method_tag: str
    lower_bound: float | None = None
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def sites(self) -> np.ndarray:
        return np.flatnonzero(self.gamma)

    @property
    def beta(self) -> np.ndarray:
        b = np.zeros((self.assignment.shape[0], self.gamma.shape[0]))
        b[np.arange(self.assignment.shape[0]), self.assignment] = 1.0
        return b

    def check(self, problem: SelectionProblem) -> None:
        """Raise ``ValueError`` unless the program's constraints hold."""
        if self.method_tag not in METHODS:
            raise ValueError(f"unknown method tag {self.method_tag!r}")
        if self.gamma.shape != (len(problem.candidates),):
            raise ValueError("gamma has the wrong length")
        if self.gamma.sum() > problem.budget:
            raise ValueError("more sites than the budget")
        if self.assignment.shape != (len(problem.clouds),):
            raise ValueError("assignment has the wrong length")
        if not np.all(self.gamma[self.assignment]):
            raise ValueError("particle assigned to a closed site")


class Assignment(NamedTuple):
    index: np.ndarray
    cost: np.ndarray
    objective: float


def nearest_assignment(cloud: ParticleCloud, sites, p: float = 1.0) -> Assignment:
    """Send every particle to its nearest site (lowest index on ties).

    ``cost[i]`` is ``d(x_i, site)^p``; ``objective`` is their weighted sum.
    """
    z = _as_points(sites)
    if z.shape[0] == 0:
        raise ValueError("no sites to assign to")
    idx, cost = _select.nearest(cloud.particles, z, float(p))
    return Assignment(idx, cost, float(cloud.weights @ cost))


def _result(problem, open_idx, tag, lower_bound=None, **info) -> SelectionResult:
    open_idx = np.sort(np.asarray(open_idx, dtype=np.int64))
    a = nearest_assignment(problem.clouds, problem.candidates.sites[open_idx], problem.p)
    gamma = np.zeros(len(problem.candidates), dtype=bool)
    gamma[open_idx] = True
    return SelectionResult(gamma, open_idx[a.index], a.objective, tag, lower_bound, info)


# ---------------------------------------------------------------------------
# selectors


def select_greedy(problem: SelectionProblem) -> SelectionResult:
    """Add sites one at a time, each time the one that lowers the weighted
    cost the most, until the budget is used."""
    c = problem.clouds
    chosen = _select.greedy_lazy(
        c.particles, c.weights, problem.candidates.sites, problem.budget, float(problem.p)
    )
    return _result(problem, chosen, "greedy", order=chosen.tolist())


def select_sup_greedy(problem: SelectionProblem) -> SelectionResult:
    """Greedy for the minimax variant: minimize the largest per-source cost.

    This targets the uniform (sup) distance between the particle kernel and
    the implied kernel rather than the marginal-weighted one.
    """
    c = problem.clouds
    counts = c.counts
    w_in = 1.0 / counts[c.owner]
    chosen = _select.greedy_minimax(
        c.particles, c.owner, w_in, c.sources.shape[0],
        problem.candidates.sites, problem.budget, float(problem.p),
    )
    res = _result(problem, chosen, "greedy", order=chosen.tolist(), aggregation="sup")
    per = np.bincount(c.owner, weights=w_in * _site_cost(problem, res), minlength=len(counts))
    res.info["sup_objective"] = float(per.max())
    return res


def _site_cost(problem: SelectionProblem, res: SelectionResult) -> np.ndarray:
    diff = problem.clouds.particles - problem.candidates.sites[res.assignment]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return d if problem.p == 1 else d**problem.p


def select_exact_mip(problem: SelectionProblem, cap: int = 2000) -> SelectionResult:
    """Globally optimal sites by branch and bound over the site variables.

    The bound at a node opens every site not yet excluded; leaves are priced
    by nearest assignment.  Only meant for small instances (test oracle).
    """
    if problem.size > cap:
        raise ValueError(f"{problem.size} assignment variables exceed the exact cap {cap}")
    C = problem.cost_matrix()
    K = C.shape[1]
    M = problem.budget
    order = np.argsort(C.sum(axis=0), kind="stable")
    seed = select_greedy(problem)
    best_val = float(C[np.arange(C.shape[0]), seed.assignment].sum())
    best_set = seed.sites.tolist()
    nodes = count()

    def value(sites):
        return float(C[:, sites].min(axis=1).sum())

    def dfs(pos, opened, closed):
        nonlocal best_val, best_set
        next(nodes)
        free = [order[q] for q in range(pos, K) if not closed[order[q]]]
        # adding a site never hurts, so a node that can afford all its
        # free sites is solved by opening them
        if len(opened) == M or len(opened) + len(free) <= M:
            sites = opened + free if len(opened) < M else opened
            if not sites:
                return
            v = value(sites)
            if v < best_val:
                best_val, best_set = v, list(sites)
            return
        if value(opened + free) >= best_val:
            return
        k = order[pos]
        dfs(pos + 1, opened + [k], closed)
        closed[k] = True
        dfs(pos + 1, opened, closed)
        closed[k] = False

    dfs(0, [], np.zeros(K, dtype=bool))
    return _result(problem, best_set, "exact_mip", lower_bound=best_val, nodes=next(nodes))


def lp_relaxation(problem: SelectionProblem, cap: int = 2000, iters: int = 100):
    """Fractional site openings and a lower bound for the program.

    Up to ``cap`` assignment variables the LP is solved exactly by the dual
    simplex.  Beyond that the assignment constraints are priced into the
    objective with multipliers ``u_i``; the inner problem then opens the (at
    most ``M``) sites of most negative reduced cost and the multipliers are
    updated by projected-free subgradient steps.  The fractional openings are
    the average of the inner solutions.

    Returns ``(gamma_frac, lower_bound, info)``.
    """
    if problem.size <= cap:
        return _lp_dense(problem)
    return _lp_lagrangian(problem, iters)


def _lp_dense(problem):
    C = problem.cost_matrix()
    P, K = C.shape
    nb = P * K
    # beta_ik column index i*K + k, then gamma_k at nb + k
    rows = np.repeat(np.arange(P), K)
    A_eq = sparse.csr_matrix((np.ones(nb), (rows, np.arange(nb))), shape=(P, nb + K))
    link = sparse.hstack([sparse.eye(nb), -sparse.kron(np.ones((P, 1)), sparse.eye(K))])
    card = sparse.hstack([sparse.csr_matrix((1, nb)), sparse.csr_matrix(np.ones((1, K)))])
    A_ub = sparse.vstack([link, card]).tocsr()
    b_ub = np.concatenate([np.zeros(nb), [problem.budget]])
    res = linprog(
        np.concatenate([C.ravel(), np.zeros(K)]),
        A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=np.ones(P),
        bounds=(0.0, 1.0), method="highs-ds",
    )
    if res.status != 0:
        raise RuntimeError(f"selection LP failed: {res.message}")
    gamma = np.clip(res.x[nb:], 0.0, 1.0)
    return gamma, float(res.fun), {"lp": "dual simplex"}


def _lp_lagrangian(problem, iters):
    c = problem.clouds
    X, w, Z = c.particles, c.weights, problem.candidates.sites
    p = float(problem.p)
    M = problem.budget
    K = Z.shape[0]
    start = select_greedy(problem)
    upper = start.objective
    u = w * _site_cost(problem, start)
    best = -np.inf
    theta, stall = 2.0, 0
    gsum = np.zeros(K)
    n = 0
    for n in range(1, iters + 1):
        rho = _select.lagrangian_rho(X, w, Z, p, u)
        pick = np.argsort(rho, kind="stable")[:M]
        pick = pick[rho[pick] < 0]
        value = float(u.sum() + rho[pick].sum())
        gsum[pick] += 1.0
        if value > best + 1e-12 * abs(upper):
            best, stall = value, 0
        else:
            stall += 1
            if stall >= 10:
                theta, stall = theta / 2, 0
        s = 1.0 - _select.lagrangian_cover(X, w, Z, p, u, pick.astype(np.int64))
        ss = float(s @ s)
        if ss == 0.0 or upper - best <= 1e-9 * max(upper, 1e-300) or theta < 1e-6:
            break
        u = u + theta * max(upper - value, 1e-12 * upper) / ss * s
    return gsum / n, min(best, upper), {"lp": "lagrangian", "iterations": n, "upper": upper}


def select_lp_round(
    problem: SelectionProblem,
    rng_seed: int | np.random.Generator | None = None,
    retries: int = 32,
    cap: int = 2000,
) -> SelectionResult:
    """LP relaxation followed by independent Bernoulli rounding of the sites.

    A draw is kept when it opens between 1 and ``M`` sites; otherwise it is
    redrawn, up to ``retries`` times, after which the ``M`` largest
    fractional openings are used.  The relaxation value is kept as
    ``lower_bound``.
    """
    gamma, bound, info = lp_relaxation(problem, cap)
    gamma = np.where(gamma > 1 - 1e-9, 1.0, np.where(gamma < 1e-9, 0.0, gamma))
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    M = problem.budget
    drawn = None
    for attempt in range(1, retries + 1):
        d = rng.random(gamma.shape[0]) < gamma
        if 1 <= d.sum() <= M:
            drawn = d
            break
    if drawn is None:
        open_idx = np.argsort(-gamma, kind="stable")[:M]
        info["clipped"] = True
    else:
        open_idx = np.flatnonzero(drawn)
        info["draws"] = attempt
    info["relaxation"] = gamma.tolist()
    return _result(problem, open_idx, "lp_round", lower_bound=bound, **info)


def run_selector(problem: SelectionProblem, selector: str, rng=None, **kw) -> SelectionResult:
    """Dispatch on the CLI selector name (``exact``, ``lp-round``, ``greedy``)."""
    if selector == "greedy":
        return select_greedy(problem)
    if selector == "lp-round":
        return select_lp_round(problem, rng, **kw)
    if selector == "exact":
        return select_exact_mip(problem, **kw)
    raise ValueError(f"unknown selector {selector!r}")


# ---------------------------------------------------------------------------
# kernels read off a selection


def empirical_kernel(cloud: ParticleCloud) -> DiscreteKernel:
    """Uniform law on each source's particles."""
    rows = []
    for s in range(cloud.sources.shape[0]):
        x = cloud.particles[cloud.owner == s]
        if len(x) == 0:
            x = cloud.particles[:1]
        rows.append(DiscreteMeasure.uniform(x))
    return DiscreteKernel(cloud.sources, tuple(rows))


def implied_kernel(problem: SelectionProblem, result: SelectionResult) -> DiscreteKernel:
    """Transition probabilities by counting particle-to-site assignments.

    Row ``s`` puts mass ``#{i in I_s assigned to k} / |I_s|`` on site ``k``;
    only sites that receive particles appear.
    """
    result.check(problem)
    c = problem.clouds
    z = problem.candidates.sites
    K = z.shape[0]
    rows = []
    for s in range(c.sources.shape[0]):
        a = result.assignment[c.owner == s]
        if a.size == 0:
            # no particles: the source has zero weight, any row will do
            rows.append(DiscreteMeasure.dirac(z[result.sites[0]]))
            continue
        cnt = np.bincount(a, minlength=K)
        k = np.flatnonzero(cnt)
        rows.append(DiscreteMeasure(z[k], cnt[k] / a.size))
    return DiscreteKernel(c.sources, tuple(rows))


def stage_delta(problem: SelectionProblem, result: SelectionResult, cost=None) -> float:
    """Integrated distance between the particle kernel and the implied kernel.

    Equal to the ``1/p``-th power of the program's objective at ``result``.
    """
    p = problem.p if cost is None else cost.p
    diff = problem.clouds.particles - problem.candidates.sites[result.assignment]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    total = float(problem.clouds.weights @ (d if p == 1 else d**p))
    return total if p == 1 else total ** (1.0 / p)


# ---------------------------------------------------------------------------
# stages


@dataclass
class LatticeConfig:
    """Knobs for forward construction.

    ``budget`` caps the sites per stage.  With ``initial_budget`` set, the
    budget of stage ``t+1`` ramps up from it, either geometrically
    (``initial_budget * budget_growth**t``) or linearly
    (``initial_budget * (t+1)``), until it reaches ``budget``.  Early stages
    are then as coarse as their narrower particle clouds allow.
    """

    particles: int = 1000
    budget: int = 100
    initial_budget: int | None = None
    budget_growth: float = 2.0
    budget_ramp: str = "geometric"
    candidates_factor: float = 5.0
    candidate_strategy: str = "subsample"
    selector: str = "greedy"
    p: float = 1.0
    seed: int = 0
    lp_retries: int = 32
    exact_cap: int = 2000

    def __post_init__(self):
        if self.particles < 1 or self.budget < 1:
            raise ValueError("particles and budget must be positive")
        if self.candidates_factor < 1:
            raise ValueError("candidates_factor must be >= 1")
        if self.candidate_strategy not in ("subsample", "fresh", "particles"):
            raise ValueError(f"unknown candidate strategy {self.candidate_strategy!r}")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}")
        if self.budget_ramp not in ("geometric", "linear"):
            raise ValueError(f"unknown budget ramp {self.budget_ramp!r}")

    def budget_at(self, t: int) -> int:
        """Site budget for the stage built from stage ``t``."""
        if self.initial_budget is None:
            return self.budget
        if self.budget_ramp == "linear":
            return min(self.budget, self.initial_budget * (t + 1))
        return min(self.budget, math.ceil(self.initial_budget * self.budget_growth**t))


@dataclass(eq=False)
class LatticeStage:
    """Representative points of one stage and how mass reached them.

    ``transition`` is the sparse (previous points x points) matrix of the
    implied kernel; ``kernel_from_prev`` is the same kernel row by row.
    """

    t: int
    points: np.ndarray
    marginal: DiscreteMeasure
    kernel_from_prev: DiscreteKernel | None = None
    transition: sparse.csr_matrix | None = None
    delta_prev: float | None = None
    info: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.points.shape[0]


def _kernel_from_transition(prev_points, points, T) -> DiscreteKernel:
    T = T.tocsr()
    rows = []
    for s in range(T.shape[0]):
        lo, hi = T.indptr[s], T.indptr[s + 1]
        rows.append(DiscreteMeasure(points[T.indices[lo:hi]], T.data[lo:hi]))
    return DiscreteKernel(prev_points, tuple(rows))


def _candidates(stage, cloud, sampler, cfg, M, rng) -> np.ndarray:
    k = math.ceil(cfg.candidates_factor * M)
    x = cloud.particles
    if cfg.candidate_strategy == "particles" or k >= len(x):
        z = x
    elif cfg.candidate_strategy == "subsample":
        z = x[np.sort(rng.choice(len(x), size=k, replace=False))]
    else:
        lam = stage.marginal.weights
        src = rng.choice(len(lam), size=k, p=lam)
        z = sampler.sample(stage.t, stage.points[src], 1, rng)[:, 0, :]
    _, first = np.unique(z, axis=0, return_index=True)
    return z[np.sort(first)]


def advance_stage(
    stage: LatticeStage, sampler: KernelSampler, config: LatticeConfig
) -> LatticeStage:
    """Build stage ``t+1`` from stage ``t``.

    Samples ``config.particles`` successors per representative point, picks
    candidates, solves the selection program and pushes the marginal forward
    through the implied kernel.  Sites that receive no particle are dropped.
    """
    cfg = config
    t = stage.t
    lam = stage.marginal.weights
    active = np.flatnonzero(lam > 0)
    draws = sampler.sample(t, stage.points[active], cfg.particles, stage_rng(cfg.seed, t, _PARTICLES))
    draws = np.asarray(draws, dtype=float)
    n_src, n, d = draws.shape
    owner = np.repeat(active, n)
    cloud = ParticleCloud(stage.points, lam, draws.reshape(-1, d), owner)
    budget = cfg.budget_at(t)
    z = _candidates(stage, cloud, sampler, cfg, budget, stage_rng(cfg.seed, t, _CANDIDATES))
    problem = SelectionProblem(cloud, CandidateSet(z), min(budget, len(z)), cfg.p)
    kw = {}
    if cfg.selector == "lp-round":
        kw = {"retries": cfg.lp_retries, "cap": cfg.exact_cap}
    elif cfg.selector == "exact":
        kw = {"cap": cfg.exact_cap}
    result = run_selector(problem, cfg.selector, stage_rng(cfg.seed, t, _ROUNDING), **kw)
    result.check(problem)
    delta = stage_delta(problem, result)

    used, new_index = np.unique(result.assignment, return_inverse=True)
    points = z[used]
    T = sparse.coo_matrix(
        (np.full(len(owner), 1.0 / n), (owner, new_index.reshape(-1))),
        shape=(len(stage), len(used)),
    ).tocsr()
    T.sum_duplicates()
    # rows of zero-weight sources were never sampled; park them on the
    # closest new point so the kernel stays total
    for s in np.flatnonzero(lam <= 0):
        j = int(np.argmin(cdist(stage.points[s : s + 1], points)[0]))
        T = T.tolil()
        T[s, j] = 1.0
        T = T.tocsr()
    weights = np.asarray(T.T @ lam).reshape(-1)
    weights /= weights.sum()
    info = {
        "budget": problem.budget,
        "candidates": len(z),
        "particles": len(cloud),
        "objective": result.objective,
        "lower_bound": result.lower_bound,
        "method": result.method_tag,
    }
    return LatticeStage(
        t + 1,
        points,
        DiscreteMeasure(points, weights),
        _kernel_from_transition(stage.points, points, T),
        T,
        delta,
        info,
    )


@dataclass(eq=False)
class Lattice:
    stages: list[LatticeStage]
    config: LatticeConfig | None = None

    def __len__(self) -> int:
        return len(self.stages)

    def __getitem__(self, t) -> LatticeStage:
        return self.stages[t]

    @property
    def deltas(self) -> np.ndarray:
        """``Delta_t`` for ``t = 0 .. T-1``."""
        return np.array([s.delta_prev for s in self.stages[1:]], dtype=float)

    @property
    def node_count(self) -> int:
        return sum(len(s) for s in self.stages)

    def to_json(self) -> dict[str, Any]:
        recs = []
        for s in self.stages:
            rec = {
                "t": s.t,
                "points": s.points.tolist(),
                "weights": s.marginal.weights.tolist(),
                "delta_prev": s.delta_prev,
                "info": s.info,
            }
            if s.transition is not None:
                T = s.transition.tocsr()
                rec["transition"] = {
                    "shape": list(T.shape),
                    "indptr": T.indptr.tolist(),
                    "indices": T.indices.tolist(),
                    "data": T.data.tolist(),
                }
            recs.append(rec)
        cfg = asdict(self.config) if self.config is not None else None
        return {"config": cfg, "stages": recs}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "Lattice":
        stages = []
        prev = None
        for rec in data["stages"]:
            pts = _as_points(rec["points"])
            T = kern = None
            if "transition" in rec:
                tr = rec["transition"]
                T = sparse.csr_matrix((tr["data"], tr["indices"], tr["indptr"]), shape=tuple(tr["shape"]))
                kern = _kernel_from_transition(prev.points, pts, T)
            st = LatticeStage(
                rec["t"], pts, DiscreteMeasure(pts, rec["weights"]), kern, T,
                rec["delta_prev"], rec.get("info", {}),
            )
            stages.append(st)
            prev = st
        cfg = LatticeConfig(**data["config"]) if data.get("config") else None
        return cls(stages, cfg)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Lattice":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_lattice(
    x0,
    sampler: KernelSampler,
    n_steps: int,
    config: LatticeConfig | None = None,
    on_stage: Callable[[LatticeStage], None] | None = None,
) -> Lattice:
    """Lattice with ``n_steps`` transitions started from the point ``x0``."""
    config = config or LatticeConfig()
    root = DiscreteMeasure.dirac(x0)
    stages = [LatticeStage(0, root.points, root)]
    for _ in range(n_steps):
        stages.append(advance_stage(stages[-1], sampler, config))
        if on_stage is not None:
            on_stage(stages[-1])
    return Lattice(stages, config)


def selected_distribution(problem: SelectionProblem, result: SelectionResult) -> DiscreteMeasure:
    """Mixture of the implied kernel under the source weights."""
    w = np.bincount(result.assignment, weights=problem.clouds.weights, minlength=len(problem.candidates))
    k = np.flatnonzero(w > 0)
    return DiscreteMeasure(problem.candidates.sites[k], w[k] / w[k].sum())


def pooled_distribution(cloud: ParticleCloud) -> DiscreteMeasure:
    """All particles with their objective weights."""
    w = cloud.weights
    return DiscreteMeasure(cloud.particles, w / w.sum())


# ---------------------------------------------------------------------------
# sampling error


def sampling_error_report(n_dim: int, p: float, u: float, moment: float, N: int) -> dict[str, Any]:
    """Rate of the expected ``W_p^p`` error of an ``N``-sample empirical law.

    The bound is ``C * moment**(p/u) * (a(N) + N**(-(u-p)/u))`` where ``a``
    depends on how ``p`` compares with ``n_dim/2``.  The constant ``C`` is
    not known in closed form and is left symbolic.
    """
    if not u > p:
        raise ValueError("moment order u must exceed p")
    if N < 1:
        raise ValueError("N must be positive")
    half = n_dim / 2
    if p > half:
        branch, expr, a = "p > n/2", "N^{-1/2}", N**-0.5
    elif p == half:
        branch, expr, a = "p = n/2", "N^{-1/2} ln(1+N)", N**-0.5 * math.log1p(N)
    else:
        branch, expr, a = "p < n/2", f"N^{{-{p:g}/{n_dim}}}", N ** (-p / n_dim)
    tail = N ** (-(u - p) / u)
    return {
        "branch": branch,
        "expression": f"C * M_u^(p/u) * ({expr} + N^{{-({u:g}-{p:g})/{u:g}}})",
        "rate": a + tail,
        "rate_with_moment": moment ** (p / u) * (a + tail),
        "constant": "C (unknown)",
        "n": n_dim,
        "p": p,
        "u": u,
        "N": N,
    }
