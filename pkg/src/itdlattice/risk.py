"""Transition risk mappings, backward evaluation on a lattice and error bounds.

A transition risk mapping ``sigma(x, mu, v)`` takes the current state, the
law ``mu`` of the next state and the next-stage value function, and returns
a number.  The conditional expectation is the linear case; AVaR,
mean-semideviation and spectral mixtures are coherent nonlinear ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial.distance import pdist

from .transport import DiscreteMeasure


def _values(mu: DiscreteMeasure, v) -> np.ndarray:
    """Values of ``v`` on the atoms of ``mu`` (array aligned with atoms, or callable)."""
    if callable(v):
        out = np.asarray(v(mu.points), dtype=float).reshape(-1)
    else:
        out = np.asarray(v, dtype=float).reshape(-1)
    if out.shape[0] != len(mu):
        raise ValueError(f"{len(mu)} atoms but {out.shape[0]} values")
    return out


def _avar(v: np.ndarray, w: np.ndarray, alpha: float) -> float:
    if v.size == 0:
        raise ValueError("empty support")
    if alpha == 1.0:
        return float(w @ v)
    order = np.argsort(v, kind="stable")
    vs, ws = v[order], w[order]
    cum = np.cumsum(ws)
    # any point of the (1-alpha)-quantile interval attains the minimum
    k = min(int(np.searchsorted(cum, 1.0 - alpha, side="left")), vs.size - 1)
    eta = vs[k]
    return float(eta + ws @ np.maximum(vs - eta, 0.0) / alpha)


def _msd(v: np.ndarray, w: np.ndarray, kappa: float, p: float) -> float:
    m = float(w @ v)
    up = np.maximum(v - m, 0.0)
    if p == 1:
        return m + kappa * float(w @ up)
    return m + kappa * float(w @ up**p) ** (1.0 / p)


class RiskMapping:
    """Base class.  Subclasses implement ``evaluate(values, weights, reward)``.

    ``measure_lipschitz(lip_v)`` gives the order-1 Wasserstein Lipschitz
    constant in the measure argument when the value function is
    ``lip_v``-Lipschitz; ``value_lipschitz()`` gives the Lipschitz constant
    in the value argument for the ``L_1(mu)`` norm.
    """

    name = "abstract"
    needs_reward = False

    def evaluate(self, values, weights, reward: float | None = None) -> float:
        raise NotImplementedError

    def __call__(self, x, mu: DiscreteMeasure, v_next, reward=None) -> float:
        return self.evaluate(_values(mu, v_next), mu.weights, reward)

    def evaluate_rows(self, T, v: np.ndarray, rewards: np.ndarray | None = None) -> np.ndarray:
        """Apply the mapping to every row of the sparse transition ``T``."""
        T = T.tocsr()
        out = np.empty(T.shape[0])
        for s in range(T.shape[0]):
            lo, hi = T.indptr[s], T.indptr[s + 1]
            r = None if rewards is None else rewards[s]
            out[s] = self.evaluate(v[T.indices[lo:hi]], T.data[lo:hi], r)
        return out

    def measure_lipschitz(self, lip_v: float) -> float:
        raise NotImplementedError

    def value_lipschitz(self) -> float:
        raise NotImplementedError


class Expectation(RiskMapping):
    name = "expectation"

    def evaluate(self, values, weights, reward=None):
        return float(np.asarray(weights) @ np.asarray(values))

    def evaluate_rows(self, T, v, rewards=None):
        return np.asarray(T @ v).reshape(-1)

    def measure_lipschitz(self, lip_v):
        return lip_v

    def value_lipschitz(self):
        return 1.0


class Stopping(RiskMapping):
    """``max(r(x), E_mu v)``: stop and collect ``r`` or continue."""

    name = "stopping"
    needs_reward = True

    def evaluate(self, values, weights, reward=None):
        if reward is None:
            raise ValueError("the stopping mapping needs a reward")
        return max(float(reward), float(np.asarray(weights) @ np.asarray(values)))

    def evaluate_rows(self, T, v, rewards=None):
        if rewards is None:
            raise ValueError("the stopping mapping needs rewards")
        return np.maximum(rewards, np.asarray(T @ v).reshape(-1))

    def measure_lipschitz(self, lip_v):
        return lip_v

    def value_lipschitz(self):
        return 1.0


@dataclass(frozen=True)
class AVaR(RiskMapping):
    """``min_eta eta + E_mu[(v - eta)_+] / alpha``, the mean of the upper
    ``alpha``-tail of ``v``."""

    alpha: float

    name = "avar"

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    def evaluate(self, values, weights, reward=None):
        return _avar(np.asarray(values, float), np.asarray(weights, float), self.alpha)

    def measure_lipschitz(self, lip_v):
        return lip_v / self.alpha

    def value_lipschitz(self):
        return 1.0 / self.alpha


@dataclass(frozen=True)
class MeanSemideviation(RiskMapping):
    """``E v + kappa * (E[(v - E v)_+^p])^(1/p)``."""

    kappa: float
    p: float = 1.0

    name = "msd"

    def __post_init__(self):
        if not 0 <= self.kappa <= 1:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.p < 1:
            raise ValueError("p must be >= 1")

    def evaluate(self, values, weights, reward=None):
        return _msd(np.asarray(values, float), np.asarray(weights, float), self.kappa, self.p)

    def measure_lipschitz(self, lip_v):
        # mean moves by lip_v W_1, the semideviation by at most twice that
        if self.p != 1:
            raise NotImplementedError("constant only derived for p = 1")
        return (1.0 + 2.0 * self.kappa) * lip_v

    def value_lipschitz(self):
        if self.p != 1:
            raise NotImplementedError("constant only derived for p = 1")
        return 1.0 + 2.0 * self.kappa


class Spectral(RiskMapping):
    """Finite mixture ``sum_j theta_j AVaR_{alpha_j}``."""

    name = "spectral"

    def __init__(self, theta: Sequence[Sequence[float]]):
        th = np.asarray(theta, dtype=float).reshape(-1, 2)
        if th.shape[0] == 0:
            raise ValueError("theta is empty")
        if np.any(th[:, 0] <= 0) or np.any(th[:, 0] > 1):
            raise ValueError("spectral levels must lie in (0, 1]")
        if np.any(th[:, 1] < 0) or abs(th[:, 1].sum() - 1.0) > 1e-12:
            raise ValueError("spectral weights must be a probability vector")
        self.alphas = th[:, 0]
        self.thetas = th[:, 1]

    def evaluate(self, values, weights, reward=None):
        v = np.asarray(values, float)
        w = np.asarray(weights, float)
        return float(sum(t * _avar(v, w, a) for a, t in zip(self.alphas, self.thetas)))

    def measure_lipschitz(self, lip_v):
        return float(self.thetas @ (1.0 / self.alphas)) * lip_v

    def value_lipschitz(self):
        return float(self.thetas @ (1.0 / self.alphas))


def sigma_expectation(x, mu: DiscreteMeasure, v_next) -> float:
    return Expectation()(x, mu, v_next)


def sigma_stopping(x, mu: DiscreteMeasure, v_next, r_t) -> float:
    reward = r_t(x) if callable(r_t) else r_t
    return Stopping()(x, mu, v_next, reward)


def sigma_avar(x, mu: DiscreteMeasure, v_next, alpha: float) -> float:
    return AVaR(alpha)(x, mu, v_next)


def sigma_msd(x, mu: DiscreteMeasure, v_next, p: float = 1.0, kappa: float = 1.0) -> float:
    return MeanSemideviation(kappa, p)(x, mu, v_next)


def sigma_spectral(x, mu: DiscreteMeasure, v_next, theta) -> float:
    return Spectral(theta)(x, mu, v_next)


def risk_mapping_from_config(cfg: dict[str, Any]) -> RiskMapping:
    """Mapping from ``{"mapping": name, ...parameters}``."""
    name = cfg.get("mapping")
    try:
        if name == "expectation":
            return Expectation()
        if name == "stopping":
            return Stopping()
        if name == "avar":
            return AVaR(float(cfg["alpha"]))
        if name == "msd":
            return MeanSemideviation(float(cfg["kappa"]), float(cfg.get("p", 1.0)))
        if name == "spectral":
            return Spectral(cfg["theta"])
    except KeyError as e:
        raise ValueError(f"risk config for {name!r} misses {e}") from None
    raise ValueError(f"unknown risk mapping {name!r}")


# ---------------------------------------------------------------------------
# backward evaluation


StateFn = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class CostSpec:
    """Stage costs ``c_t`` (including the terminal ``c_T``) and optional
    stopping rewards ``r_t``, both vectorized over an ``(S, d)`` array of
    states."""

    cost: StateFn
    reward: StateFn | None = None

    @classmethod
    def terminal(cls, horizon: int, f: Callable[[np.ndarray], np.ndarray], reward=None) -> "CostSpec":
        """Zero running cost and terminal cost ``f``."""

        def cost(t, x):
            if t == horizon:
                return f(x)
            return np.zeros(len(x))

        return cls(cost, reward)


@dataclass
class ValueFunction:
    """Values ``v_t`` on the points of every stage."""

    values: list[np.ndarray]

    def __getitem__(self, t) -> np.ndarray:
        return self.values[t]

    def __len__(self) -> int:
        return len(self.values)

    @property
    def root(self) -> float:
        return float(self.values[0][0])


def _stage_arrays(x, n: int, f, t) -> np.ndarray:
    out = np.asarray(f(t, x), dtype=float).reshape(-1)
    if out.shape[0] != n:
        raise ValueError(f"stage {t}: function returned {out.shape[0]} values for {n} states")
    return out


def _transition(prev, stage):
    if stage.transition is not None:
        T = stage.transition
        if T.shape != (len(prev), len(stage)):
            raise ValueError(f"stage {stage.t} is not chained to stage {prev.t}")
        return T.tocsr()
    q = stage.kernel_from_prev
    if q is None or len(q) != len(prev):
        raise ValueError(f"stage {stage.t} has no kernel from stage {prev.t}")
    where = {tuple(p): j for j, p in enumerate(stage.points.tolist())}
    rows, cols, vals = [], [], []
    for s, row in enumerate(q.rows):
        for pt, w in zip(row.points.tolist(), row.weights):
            if tuple(pt) not in where:
                raise ValueError(f"kernel row {s} leaves the points of stage {stage.t}")
            rows.append(s)
            cols.append(where[tuple(pt)])
            vals.append(w)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(prev), len(stage)))


def backward_evaluate(lattice, costs: CostSpec, mapping: RiskMapping, discount: float = 1.0) -> ValueFunction:
    """``v_T = c_T`` and ``v_t = c_t + sigma(z, Q_t(z), discount * v_{t+1})``."""
    if not 0 < discount <= 1:
        raise ValueError("discount must lie in (0, 1]")
    stages = list(lattice.stages if hasattr(lattice, "stages") else lattice)
    horizon = len(stages) - 1
    if mapping.needs_reward and costs.reward is None:
        raise ValueError(f"the {mapping.name} mapping needs stopping rewards")
    vals = [None] * len(stages)
    last = stages[-1]
    vals[-1] = _stage_arrays(last.points, len(last), costs.cost, horizon)
    for t in range(horizon - 1, -1, -1):
        st = stages[t]
        T = _transition(st, stages[t + 1])
        rewards = None
        if costs.reward is not None:
            rewards = _stage_arrays(st.points, len(st), costs.reward, t)
        sig = mapping.evaluate_rows(T, discount * vals[t + 1], rewards)
        vals[t] = _stage_arrays(st.points, len(st), costs.cost, t) + sig
    return ValueFunction(vals)


# ---------------------------------------------------------------------------
# error bounds


@dataclass
class LipschitzLedger:
    """Per-stage constants for the error bounds.

    ``L[t]``: Lipschitz constant of ``sigma_t`` in the measure (order-p
    Wasserstein); ``K[t]``: in the value (``L_p`` norm of the approximate
    kernel row); ``delta[t]``: kernel error at stage ``t``; ``LQ[t]``:
    Lipschitz constant of the true kernel ``Q_t`` in Wasserstein distance.
    """

    L: Sequence[float]
    K: Sequence[float]
    delta: Sequence[float]
    LQ: Sequence[float] | None = None

    def __post_init__(self):
        for name in ("L", "K", "delta"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
            setattr(self, name, arr)
        if self.LQ is not None:
            self.LQ = np.asarray(self.LQ, dtype=float)
            if np.any(self.LQ < 0):
                raise ValueError("LQ must be nonnegative")

    @classmethod
    def for_mapping(cls, mapping: RiskMapping, lip_v: Sequence[float], delta, discount=1.0, LQ=None):
        """Constants for ``sigma(x, mu, discount * v_{t+1})`` when the true
        ``v_{t+1}`` is ``lip_v[t]``-Lipschitz."""
        L = [discount * mapping.measure_lipschitz(lv) for lv in lip_v]
        K = [discount * mapping.value_lipschitz()] * len(L)
        return cls(L, K, delta, LQ)


def value_error_bound(ledger: LipschitzLedger) -> float:
    """Bound on ``|v~_0(x_0) - v_0(x_0)|``:
    ``sum_t L_t (prod_{j<t} K_j) Delta_t``."""
    L, K, D = ledger.L, ledger.K, ledger.delta
    if not (len(L) == len(D) and len(K) >= len(D) - 1):
        raise ValueError("ledger needs L and delta for every stage and K for all but the last")
    total, prod = 0.0, 1.0
    for t in range(len(D)):
        total += L[t] * prod * D[t]
        if t < len(D) - 1:
            prod *= K[t]
    return float(total)


def marginal_error_bound(ledger: LipschitzLedger) -> np.ndarray:
    """Bounds on ``W_p(lambda~_t, lambda_t)`` for ``t = 0 .. T``.

    From ``W(lam~_{t+1}, lam_{t+1}) <= Delta_t + L_{Q_t} W(lam~_t, lam_t)``
    and a common start: ``b_t = sum_{tau<t} Delta_tau prod_{tau<i<t} L_{Q_i}``.
    """
    if ledger.LQ is None:
        raise ValueError("kernel Lipschitz constants LQ are missing")
    D, LQ = ledger.delta, ledger.LQ
    if len(LQ) < len(D):
        raise ValueError("need one kernel constant per stage")
    out = np.zeros(len(D) + 1)
    for t in range(len(D)):
        out[t + 1] = D[t] + LQ[t] * out[t]
    return out


def lipschitz_on_points(points, values) -> float:
    """Largest slope ``|v(a) - v(b)| / |a - b|`` over distinct points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    v = np.asarray(values, dtype=float).reshape(-1, 1)
    if len(v) < 2:
        return 0.0
    d = pdist(pts)
    dv = pdist(v)
    keep = d > 0
    return float((dv[keep] / d[keep]).max()) if keep.any() else 0.0
