import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import sparse

from itdlattice.risk import (
    AVaR,
    CostSpec,
    Expectation,
    LipschitzLedger,
    MeanSemideviation,
    Spectral,
    Stopping,
    backward_evaluate,
    lipschitz_on_points,
    marginal_error_bound,
    risk_mapping_from_config,
    sigma_avar,
    sigma_expectation,
    sigma_msd,
    sigma_spectral,
    sigma_stopping,
    value_error_bound,
)
from itdlattice.transport import DiscreteMeasure, wasserstein_exact
from chains import bound_check, chain_stages, random_chain
from oracles import avar_grid, chain_values, msd_enum

FOUR = DiscreteMeasure([[1.0], [2.0], [3.0], [4.0]], np.full(4, 0.25))
MAPPINGS = [
    Expectation(),
    AVaR(0.3),
    AVaR(1.0),
    MeanSemideviation(0.5),
    MeanSemideviation(1.0, 2.0),
    Spectral([[0.2, 0.5], [1.0, 0.5]]),
]

weights_and_values = st.integers(1, 8).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(0.01, 1)),
        arrays(np.float64, n, elements=st.floats(-10, 10)),
        arrays(np.float64, n, elements=st.floats(0, 5)),
    )
)


# --- examples --------------------------------------------------------------

def test_expectation_examples():
    two = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert sigma_expectation(None, two, [0.0, 0.0]) == 0
    assert sigma_expectation(None, two, [2.0, 4.0]) == 3.0
    assert sigma_expectation(None, DiscreteMeasure.dirac([1.5]), lambda y: 7 * y[:, 0]) == 10.5


def test_stopping_examples():
    d = DiscreteMeasure.dirac([0.0])
    assert sigma_stopping(None, d, [3.0], 5.0) == 5.0
    assert sigma_stopping(None, d, [3.0], 0.0) == 3.0
    assert sigma_stopping(None, d, [3.0], 3.0) == 3.0
    assert sigma_stopping(np.array([2.0]), d, [3.0], lambda x: 2 * x[0]) == 4.0
    with pytest.raises(ValueError):
        Stopping()(None, d, [3.0])


def test_avar_examples():
    assert sigma_avar(None, FOUR, [1, 2, 3, 4], 0.5) == pytest.approx(3.5)
    assert sigma_avar(None, FOUR, [1, 2, 3, 4], 0.5) == pytest.approx(avar_grid([1, 2, 3, 4], FOUR.weights, 0.5), abs=1e-3)
    assert sigma_avar(None, FOUR, [1, 2, 3, 4], 1.0) == pytest.approx(2.5)
    for a in (0.01, 0.3, 1.0):
        assert sigma_avar(None, FOUR, np.full(4, 1.7), a) == pytest.approx(1.7)
    with pytest.raises(ValueError):
        AVaR(0.0)
    with pytest.raises(ValueError):
        AVaR(1.5)


def test_msd_examples():
    two = DiscreteMeasure([[0.0], [2.0]], [0.5, 0.5])
    assert sigma_msd(None, two, [0.0, 2.0], kappa=1.0) == pytest.approx(1.5)
    assert sigma_msd(None, two, [0.0, 2.0], kappa=0.0) == pytest.approx(1.0)
    assert sigma_msd(None, two, [4.0, 4.0], kappa=1.0) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        MeanSemideviation(1.5)


def test_spectral_examples():
    v = [1, 2, 3, 4]
    assert sigma_spectral(None, FOUR, v, [[1.0, 1.0]]) == pytest.approx(2.5)
    assert sigma_spectral(None, FOUR, v, [[0.3, 1.0]]) == pytest.approx(sigma_avar(None, FOUR, v, 0.3))
    assert sigma_spectral(None, FOUR, v, [[0.5, 0.5], [1.0, 0.5]]) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        Spectral([[0.5, 0.4]])
    with pytest.raises(ValueError):
        Spectral([[0.0, 1.0]])


def test_values_must_match_atoms():
    with pytest.raises(ValueError):
        sigma_expectation(None, FOUR, [1.0, 2.0])


def test_mapping_from_config():
    assert isinstance(risk_mapping_from_config({"mapping": "avar", "alpha": 0.1}), AVaR)
    assert risk_mapping_from_config({"mapping": "msd", "kappa": 0.5}).kappa == 0.5
    assert isinstance(risk_mapping_from_config({"mapping": "spectral", "theta": [[1, 1]]}), Spectral)
    assert isinstance(risk_mapping_from_config({"mapping": "stopping"}), Stopping)
    with pytest.raises(ValueError):
        risk_mapping_from_config({"mapping": "avar"})
    with pytest.raises(ValueError):
        risk_mapping_from_config({"mapping": "entropic"})


# --- oracles ---------------------------------------------------------------

def test_avar_matches_grid_search(rng):
    for _ in range(100):
        n = int(rng.integers(1, 10))
        v = rng.normal(size=n)
        w = rng.dirichlet(np.ones(n))
        a = rng.uniform(0.02, 1.0)
        assert AVaR(a).evaluate(v, w) == pytest.approx(avar_grid(v, w, a), abs=1e-3)


def test_avar_upper_tail_mean():
    # with alpha = k/n on uniform weights it is the mean of the top k values
    v = np.array([5.0, -1.0, 3.0, 0.0, 2.0])
    assert AVaR(0.4).evaluate(v, np.full(5, 0.2)) == pytest.approx(4.0, abs=1e-12)


@given(weights_and_values, st.floats(0, 1), st.sampled_from([1.0, 2.0, 3.0]))
def test_msd_matches_enumeration(wv, kappa, p):
    w, v, _ = wv
    w = w / w.sum()
    assert MeanSemideviation(kappa, p).evaluate(v, w) == pytest.approx(msd_enum(v, w, kappa, p), abs=1e-10)


@given(weights_and_values, st.floats(0.01, 1), st.floats(0.01, 1))
def test_spectral_matches_composition(wv, a1, a2):
    w, v, _ = wv
    w = w / w.sum()
    s = Spectral([[a1, 0.3], [a2, 0.7]]).evaluate(v, w)
    ref = 0.3 * AVaR(a1).evaluate(v, w) + 0.7 * AVaR(a2).evaluate(v, w)
    assert s == pytest.approx(ref, abs=1e-10)


# --- axioms ----------------------------------------------------------------

@pytest.mark.parametrize("m", MAPPINGS, ids=lambda m: m.name)
@given(wv=weights_and_values, c=st.floats(-5, 5))
def test_mapping_axioms(m, wv, c):
    w, v, bump = wv
    w = w / w.sum()
    assert m.evaluate(np.zeros_like(v), w) == 0.0
    assert m.evaluate(v, w) <= m.evaluate(v + bump, w) + 1e-9
    assert m.evaluate(v + c, w) == pytest.approx(m.evaluate(v, w) + c, abs=1e-9)


@given(weights_and_values, st.floats(-5, 5))
def test_stopping_axioms(wv, r):
    w, v, bump = wv
    w = w / w.sum()
    s = Stopping()
    assert s.evaluate(np.zeros_like(v), w, 0.0) == 0.0
    assert s.evaluate(v, w, r) <= s.evaluate(v + bump, w, r)
    # translation fails once the reward binds
    assert s.evaluate(v - 100, w, 0.0) != s.evaluate(v, w, 0.0) - 100


@pytest.mark.parametrize("m", MAPPINGS[:4], ids=lambda m: m.name)
def test_measure_lipschitz_constants(m, rng):
    v = lambda y: np.abs(y[:, 0] - 0.3) * 2.0  # 2-Lipschitz
    for _ in range(50):
        mu = DiscreteMeasure(rng.normal(size=(5, 1)), rng.dirichlet(np.ones(5)))
        nu = DiscreteMeasure(rng.normal(size=(4, 1)), rng.dirichlet(np.ones(4)))
        gap = abs(m(None, mu, v) - m(None, nu, v))
        assert gap <= m.measure_lipschitz(2.0) * wasserstein_exact(mu, nu)[0] + 1e-9


@pytest.mark.parametrize("m", MAPPINGS[:4], ids=lambda m: m.name)
def test_value_lipschitz_constants(m, rng):
    for _ in range(50):
        w = rng.dirichlet(np.ones(6))
        v, u = rng.normal(size=6), rng.normal(size=6)
        assert abs(m.evaluate(v, w) - m.evaluate(u, w)) <= m.value_lipschitz() * (w @ np.abs(v - u)) + 1e-9


# --- backward evaluation ---------------------------------------------------

def test_one_step_expectation():
    stages = chain_stages([[[0.0]], [[1.0], [2.0]]], [np.array([[0.25, 0.75]])])
    vf = backward_evaluate(stages, CostSpec(lambda t, x: np.array([1.0]) if t == 0 else x[:, 0]), Expectation())
    assert vf.root == pytest.approx(1.0 + 0.25 + 1.5)
    assert len(vf) == 2


@pytest.mark.parametrize("m", [Expectation(), AVaR(0.4), MeanSemideviation(0.7)], ids=lambda m: m.name)
def test_backward_matches_hand_recursion(m, rng):
    for _ in range(10):
        states, Ps, _, costs = random_chain(rng, T=3)
        vf = backward_evaluate(chain_stages(states, Ps), CostSpec(lambda t, x: costs[t]), m)
        ref = chain_values(Ps, costs, lambda v, w: m.evaluate(v, w))
        for a, b in zip(vf.values, ref):
            assert np.allclose(a, b, atol=1e-12)


def test_expectation_equals_matrix_product(rng):
    states, Ps, _, costs = random_chain(rng, T=4)
    f = costs[-1]
    vf = backward_evaluate(chain_stages(states, Ps), CostSpec.terminal(4, lambda x: f), Expectation())
    prod = np.linalg.multi_dot(Ps) if len(Ps) > 1 else Ps[0]
    assert vf.root == pytest.approx(float(prod[0] @ f), abs=1e-10)


def test_discount_and_stopping():
    stages = chain_stages([[[0.0]], [[1.0], [2.0]]], [np.array([[0.5, 0.5]])])
    spec = CostSpec.terminal(1, lambda x: x[:, 0], reward=lambda t, x: np.full(len(x), 1e9))
    assert backward_evaluate(stages, spec, Stopping()).root == 1e9
    spec = CostSpec.terminal(1, lambda x: x[:, 0], reward=lambda t, x: np.zeros(len(x)))
    assert backward_evaluate(stages, spec, Stopping(), discount=0.5).root == pytest.approx(0.75)
    with pytest.raises(ValueError):
        backward_evaluate(stages, CostSpec.terminal(1, lambda x: x[:, 0]), Stopping())
    with pytest.raises(ValueError):
        backward_evaluate(stages, spec, Expectation(), discount=0.0)


def test_kernel_rows_without_matrix():
    stages = chain_stages([[[0.0]], [[1.0], [2.0]]], [np.array([[0.5, 0.5]])])
    stages[1].transition = None
    assert backward_evaluate(stages, CostSpec.terminal(1, lambda x: x[:, 0]), Expectation()).root == 1.5
    stages[1].points = np.array([[1.0], [3.0]])
    with pytest.raises(ValueError):
        backward_evaluate(stages, CostSpec.terminal(1, lambda x: x[:, 0]), Expectation())


def test_broken_chain_raises():
    stages = chain_stages([[[0.0]], [[1.0], [2.0]]], [np.array([[0.5, 0.5]])])
    stages[1].transition = sparse.csr_matrix(np.ones((2, 2)) / 2)
    with pytest.raises(ValueError):
        backward_evaluate(stages, CostSpec.terminal(1, lambda x: x[:, 0]), Expectation())


# --- bounds ----------------------------------------------------------------

def test_value_bound_examples():
    assert value_error_bound(LipschitzLedger([1, 1], [1, 1], [0.1, 0.2])) == pytest.approx(0.3)
    assert value_error_bound(LipschitzLedger([1, 2], [3, 9], [0.1, 0.1])) == pytest.approx(0.7)
    assert value_error_bound(LipschitzLedger([5, 5], [5, 5], [0, 0])) == 0
    with pytest.raises(ValueError):
        LipschitzLedger([1], [1], [-0.1])
    with pytest.raises(ValueError):
        value_error_bound(LipschitzLedger([1], [1], [0.1, 0.1]))


def test_marginal_bound_examples():
    b = marginal_error_bound(LipschitzLedger([1] * 3, [1] * 3, [0.1] * 3, LQ=[1] * 3))
    assert b == pytest.approx([0, 0.1, 0.2, 0.3])
    b = marginal_error_bound(LipschitzLedger([1] * 3, [1] * 3, [0.0, 0.1, 0.1], LQ=[1, 1, 2]))
    assert b[3] == pytest.approx(0.3)
    assert not marginal_error_bound(LipschitzLedger([1] * 2, [1] * 2, [0, 0], LQ=[3, 3])).any()
    with pytest.raises(ValueError):
        marginal_error_bound(LipschitzLedger([1], [1], [0.1]))


def test_ledger_for_mapping():
    led = LipschitzLedger.for_mapping(AVaR(0.25), [2.0, 1.0], [0.1, 0.1], discount=0.5)
    assert led.L.tolist() == [4.0, 2.0] and led.K.tolist() == [2.0, 2.0]


def test_lipschitz_on_points():
    assert lipschitz_on_points([0.0, 1.0, 3.0], [0.0, 2.0, 3.0]) == 2.0
    assert lipschitz_on_points([[0.0]], [1.0]) == 0.0


@pytest.mark.parametrize("make", [Expectation, lambda: AVaR(0.2)], ids=["expectation", "avar"])
def test_value_bound_holds_on_chains(make, rng):
    for _ in range(30):
        err, bound = bound_check(rng, make())
        assert err <= bound + 1e-12
