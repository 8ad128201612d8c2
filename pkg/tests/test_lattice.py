import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from itdlattice.kernel_metric import itd
from itdlattice.lattice import (
    CandidateSet,
    Lattice,
    LatticeConfig,
    ParticleCloud,
    SelectionProblem,
    build_lattice,
    empirical_kernel,
    implied_kernel,
    lp_relaxation,
    nearest_assignment,
    run_selector,
    sampling_error_report,
    select_exact_mip,
    select_greedy,
    select_lp_round,
    select_sup_greedy,
    selected_distribution,
    stage_delta,
    stage_rng,
)
from itdlattice.markets import GbmModel, GbmSampler
from itdlattice.transport import DiscreteMeasure, GroundCost
from oracles import best_subset


def one_source(xs, sites, budget=1, p=1.0):
    x = np.asarray(xs, float).reshape(-1, 1)
    cloud = ParticleCloud([[0.0]], [1.0], x, np.zeros(len(x), int))
    return SelectionProblem(cloud, CandidateSet(np.asarray(sites, float).reshape(-1, 1)), budget, p)


def random_problem(rng, n_src=None, per=None, K=None, M=None, dim=2, p=1.0):
    n_src = n_src or int(rng.integers(1, 4))
    per = per or int(rng.integers(2, 10))
    src = rng.normal(size=(n_src, dim))
    lam = rng.dirichlet(np.ones(n_src))
    x = (src[:, None, :] + rng.normal(size=(n_src, per, dim))).reshape(-1, dim)
    cloud = ParticleCloud(src, lam, x, np.repeat(np.arange(n_src), per))
    K = K or int(rng.integers(2, 12))
    M = M or int(rng.integers(1, K + 1))
    z = x[rng.choice(len(x), size=min(K, len(x)), replace=False)]
    return SelectionProblem(cloud, CandidateSet(z), min(M, len(z)), p)


class Constant:
    """Deterministic kernel: the next state equals the current one."""

    def sample(self, t, states, n, rng):
        return np.repeat(states[:, None, :], n, axis=1)


# --- data types ------------------------------------------------------------

def test_cloud_weights_follow_sources():
    cloud = ParticleCloud.from_groups([[0.0], [1.0]], [0.25, 0.75], [[[0.0], [1.0]], [[2.0]]])
    assert cloud.counts.tolist() == [2, 1]
    assert cloud.weights.tolist() == [0.125, 0.125, 0.75]


def test_cloud_validation():
    with pytest.raises(ValueError):
        ParticleCloud([[0.0], [1.0]], [0.5, 0.5], [[0.0]], [0])
    with pytest.raises(ValueError):
        ParticleCloud([[0.0]], [1.0], [[0.0]], [3])
    # a zero-weight source may go without particles
    ParticleCloud([[0.0], [1.0]], [1.0, 0.0], [[0.0]], [0])


def test_problem_validation():
    with pytest.raises(ValueError):
        one_source([0.0], [0.0], budget=2)
    with pytest.raises(ValueError):
        one_source([0.0], [0.0], budget=0)
    with pytest.raises(ValueError):
        CandidateSet(np.zeros((0, 1)))


# --- nearest assignment ----------------------------------------------------

def test_nearest_assignment_examples():
    prob = one_source([0.0, 1.0], [0.0, 1.0])
    a = nearest_assignment(prob.clouds, prob.candidates.sites)
    assert a.index.tolist() == [0, 1] and a.objective == 0
    prob = one_source([0.4], [0.0, 1.0])
    a = nearest_assignment(prob.clouds, prob.candidates.sites)
    assert a.index.tolist() == [0] and a.cost[0] == pytest.approx(0.4)
    prob = one_source([0.5], [0.0, 1.0])
    assert nearest_assignment(prob.clouds, prob.candidates.sites).index.tolist() == [0]


# --- selectors -------------------------------------------------------------

@pytest.mark.parametrize("select", [select_exact_mip, select_greedy, select_lp_round])
def test_full_budget_opens_everything(select, rng):
    prob = random_problem(rng, K=6, M=6)
    res = select(prob)
    res.check(prob)
    assert res.gamma.all()
    assert res.objective == pytest.approx(
        nearest_assignment(prob.clouds, prob.candidates.sites).objective, abs=1e-12
    )


def test_exact_small_examples():
    prob = one_source([0, 1, 2, 3], [0, 1, 2, 3], budget=2)
    res = select_exact_mip(prob)
    assert res.objective == pytest.approx(0.5)
    assert res.objective == pytest.approx(best_subset(prob.cost_matrix(), 2))
    # every single site costs 1 here; the tie goes to the lowest index
    prob = one_source([-1, 1], [-1, 0, 1])
    for select in (select_exact_mip, select_greedy):
        res = select(prob)
        assert res.sites.tolist() == [0] and res.objective == pytest.approx(1.0)
    assert best_subset(prob.cost_matrix(), 1) == pytest.approx(1.0)


def test_exact_cap():
    prob = one_source(np.arange(50.0), np.arange(50.0), budget=3)
    with pytest.raises(ValueError):
        select_exact_mip(prob, cap=100)


def test_selector_ordering_and_enumeration(rng):
    for _ in range(40):
        prob = random_problem(rng)
        exact = select_exact_mip(prob)
        lp, bound, _ = lp_relaxation(prob)
        assert bound <= exact.objective + 1e-9
        assert exact.objective == pytest.approx(best_subset(prob.cost_matrix(), prob.budget), abs=1e-12)
        for res in (select_greedy(prob), select_lp_round(prob, 7)):
            res.check(prob)
            assert exact.objective <= res.objective + 1e-12


def test_exact_monotone_in_budget(rng):
    prob = random_problem(rng, K=8, M=1)
    vals = [
        select_exact_mip(SelectionProblem(prob.clouds, prob.candidates, m)).objective for m in range(1, 9)
    ]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_integral_lp_rounding_is_noop():
    # two far-apart clusters, one site at each centre
    x = [0.0, 0.1, -0.1, 10.0, 10.1, 9.9]
    prob = one_source(x, [0.0, 10.0, 5.0], budget=2)
    res = select_lp_round(prob, 0)
    assert res.sites.tolist() == [0, 1]
    assert res.objective == pytest.approx(select_exact_mip(prob).objective)
    assert res.lower_bound == pytest.approx(res.objective)


def test_lp_round_is_seeded(rng):
    prob = random_problem(rng, per=8, K=10, M=3)
    a = select_lp_round(prob, 11)
    b = select_lp_round(prob, 11)
    assert np.array_equal(a.gamma, b.gamma)


def test_lagrangian_bound_below_exact(rng):
    for _ in range(5):
        prob = random_problem(rng, n_src=2, per=20, K=10, M=3)
        exact = select_exact_mip(prob)
        _, bound, info = lp_relaxation(prob, cap=0, iters=200)
        assert info["lp"] == "lagrangian"
        assert bound <= exact.objective + 1e-9
        # the dual bound is not trivial
        assert bound >= 0.5 * lp_relaxation(prob)[1]


def test_greedy_matches_plain_greedy(rng):
    for _ in range(10):
        prob = random_problem(rng, K=10, M=4)
        C = prob.cost_matrix()
        chosen = []
        for _ in range(prob.budget):
            vals = np.array([
                C[:, chosen + [k]].min(axis=1).sum() if k not in chosen else np.inf
                for k in range(C.shape[1])
            ])
            chosen.append(int(np.flatnonzero(vals <= vals.min() * (1 + 1e-12))[0]))
        assert select_greedy(prob).info["order"] == chosen


def test_sup_greedy_targets_the_worst_source(rng):
    prob = random_problem(rng, n_src=3, per=10, K=12, M=4)
    itd_res, sup_res = select_greedy(prob), select_sup_greedy(prob)
    sup_res.check(prob)
    assert itd_res.objective <= sup_res.objective + 1e-12 or sup_res.info["sup_objective"] > 0


def test_run_selector_dispatch(rng):
    prob = random_problem(rng)
    assert run_selector(prob, "greedy").method_tag == "greedy"
    assert run_selector(prob, "exact").method_tag == "exact_mip"
    assert run_selector(prob, "lp-round", rng=1).method_tag == "lp_round"
    with pytest.raises(ValueError):
        run_selector(prob, "annealing")


@settings(max_examples=40)
@given(
    arrays(np.float64, st.integers(2, 12), elements=st.floats(-3, 3)),
    st.integers(1, 4),
    st.sampled_from([1.0, 2.0]),
)
def test_selection_invariants(xs, M, p):
    prob = one_source(xs, xs, budget=min(M, len(xs)), p=p)
    for res in (select_greedy(prob), select_exact_mip(prob), select_lp_round(prob, 0)):
        res.check(prob)
        beta = res.beta
        assert np.all(beta.sum(axis=1) == 1)
        assert np.all(beta <= res.gamma[None, :])
        assert res.gamma.sum() <= prob.budget


# --- implied kernel and delta ---------------------------------------------

def test_implied_kernel_counts():
    prob = one_source([0.0, 0.1, 0.2, 0.3], [0.0, 5.0], budget=1)
    res = select_exact_mip(prob)
    row = implied_kernel(prob, res).rows[0]
    assert row.points.tolist() == [[0.0]] and row.weights.tolist() == [1.0]
    prob = one_source([0.0, 0.1, 0.2, 5.0], [0.0, 5.0], budget=2)
    row = implied_kernel(prob, select_exact_mip(prob)).rows[0]
    assert row.weights.tolist() == [0.75, 0.25]


def test_stage_delta_examples():
    prob = one_source([0.0, 1.0], [0.0, 1.0], budget=2)
    assert stage_delta(prob, select_greedy(prob)) == 0.0
    prob = one_source([0.0, 1.0], [0.0])
    assert stage_delta(prob, select_greedy(prob)) == pytest.approx(0.5)


@pytest.mark.parametrize("p", [1.0, 2.0])
def test_stage_delta_is_itd(rng, p):
    for _ in range(10):
        prob = random_problem(rng, p=p)
        res = select_greedy(prob)
        q = implied_kernel(prob, res)
        assert np.allclose([r.weights.sum() for r in q.rows], 1.0, atol=1e-12)
        lam = DiscreteMeasure(prob.clouds.sources, prob.clouds.source_weights)
        ref = itd(lam, empirical_kernel(prob.clouds), q, GroundCost(p))
        assert stage_delta(prob, res) == pytest.approx(ref, abs=1e-9)
        assert selected_distribution(prob, res).weights.sum() == pytest.approx(1.0)


# --- forward construction --------------------------------------------------

def test_stage_rng_streams_differ():
    a = stage_rng(0, 1, 0).random(4)
    assert np.array_equal(a, stage_rng(0, 1, 0).random(4))
    assert not np.array_equal(a, stage_rng(0, 1, 1).random(4))
    assert not np.array_equal(a, stage_rng(0, 2, 0).random(4))


def test_budget_ramps():
    geo = LatticeConfig(budget=100, initial_budget=10)
    assert [geo.budget_at(t) for t in range(6)] == [10, 20, 40, 80, 100, 100]
    lin = LatticeConfig(budget=100, initial_budget=20, budget_ramp="linear")
    assert [lin.budget_at(t) for t in range(6)] == [20, 40, 60, 80, 100, 100]
    assert LatticeConfig(budget=7).budget_at(3) == 7
    with pytest.raises(ValueError):
        LatticeConfig(budget_ramp="cubic")
    with pytest.raises(ValueError):
        LatticeConfig(selector="annealing")


def test_deterministic_kernel_has_zero_delta():
    lat = build_lattice([1.0, 2.0], Constant(), 3, LatticeConfig(particles=5, budget=3))
    assert np.all(lat.deltas == 0)
    assert [len(s) for s in lat.stages] == [1, 1, 1, 1]


def test_budget_above_distinct_particles_gives_zero_delta():
    model = GbmModel([10.0], 0.03, [[0.3]], 1.0, 2)
    cfg = LatticeConfig(particles=10, budget=10, candidate_strategy="particles")
    lat = build_lattice(model.s0, GbmSampler(model), 1, cfg)
    assert lat.deltas[0] == 0.0
    assert len(lat[1]) == 10


def _small_lattice(selector="greedy", seed=3, steps=3):
    model = GbmModel([10.0, 10.0], 0.03, [[0.5, -0.2], [-0.2, 0.5]], 1.0, steps)
    cfg = LatticeConfig(particles=60, budget=12, selector=selector, seed=seed, exact_cap=10_000)
    return build_lattice(model.s0, GbmSampler(model), steps, cfg)


@pytest.mark.parametrize("selector", ["greedy", "lp-round"])
def test_stage_invariants(selector):
    lat = _small_lattice(selector)
    for prev, st_ in zip(lat.stages, lat.stages[1:]):
        assert abs(st_.marginal.weights.sum() - 1.0) <= 1e-12
        assert np.array_equal(st_.marginal.points, st_.points)
        assert len(st_) <= lat.config.budget
        assert np.allclose(np.asarray(st_.transition.sum(axis=1)).ravel(), 1.0)
        push = np.asarray(st_.transition.T @ prev.marginal.weights).ravel()
        assert np.allclose(push, st_.marginal.weights, atol=1e-12)
        assert np.isfinite(st_.delta_prev) and st_.delta_prev >= 0


def test_build_is_reproducible():
    a, b = _small_lattice(seed=5), _small_lattice(seed=5)
    assert np.array_equal(a.deltas, b.deltas)
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a.stages, b.stages))
    c = _small_lattice(seed=6)
    assert not np.array_equal(a.deltas, c.deltas)


def test_checkpoint_roundtrip(tmp_path):
    lat = _small_lattice()
    path = tmp_path / "lattice.json"
    lat.save(path)
    back = Lattice.load(path)
    assert back.config == lat.config
    assert np.array_equal(back.deltas, lat.deltas)
    for x, y in zip(lat.stages, back.stages):
        assert np.array_equal(x.points, y.points)
        assert np.array_equal(x.marginal.weights, y.marginal.weights)
        if x.transition is not None:
            assert (x.transition != y.transition).nnz == 0
            assert len(y.kernel_from_prev) == len(x.kernel_from_prev)


def test_on_stage_callback():
    seen = []
    model = GbmModel([10.0], 0.03, [[0.3]], 1.0, 2)
    build_lattice(model.s0, GbmSampler(model), 2, LatticeConfig(particles=20, budget=4), seen.append)
    assert [s.t for s in seen] == [1, 2]


def test_fresh_candidates():
    model = GbmModel([10.0], 0.03, [[0.3]], 1.0, 2)
    cfg = LatticeConfig(particles=40, budget=5, candidate_strategy="fresh")
    lat = build_lattice(model.s0, GbmSampler(model), 2, cfg)
    assert lat[2].info["candidates"] == 25


# --- sampling error --------------------------------------------------------

@pytest.mark.parametrize(
    "n, branch, rate",
    [
        (2, "p = n/2", lambda N: N**-0.5 * math.log1p(N) + N ** (-2 / 3)),
        (5, "p < n/2", lambda N: N**-0.2 + N ** (-2 / 3)),
        (1, "p > n/2", lambda N: N**-0.5 + N ** (-2 / 3)),
    ],
)
def test_sampling_error_branches(n, branch, rate):
    rep = sampling_error_report(n, 1.0, 3.0, 8.0, 1000)
    assert rep["branch"] == branch
    assert rep["rate"] == pytest.approx(rate(1000))
    assert rep["rate_with_moment"] == pytest.approx(2.0 * rate(1000))
    assert "unknown" in rep["constant"]


def test_sampling_error_rejects_bad_moment():
    with pytest.raises(ValueError):
        sampling_error_report(2, 2.0, 2.0, 1.0, 10)
