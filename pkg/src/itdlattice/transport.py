"""Discrete optimal transport: exact and entropic solvers, KR dual check."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from ._simplex import transport_simplex

WEIGHT_TOL = 1e-12
MARGINAL_TOL = 1e-9


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"points must be a list of vectors, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported probability measure on R^n.

    ``points`` has shape ``(k, n)``; a flat sequence is read as ``k`` points
    on the real line.  Weights must already sum to one: nothing is
    renormalized behind the caller's back.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] == 0:
            raise ValueError("a discrete measure needs at least one atom")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise ValueError("points and weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def dirac(cls, point) -> "DiscreteMeasure":
        return cls(np.atleast_1d(np.asarray(point, dtype=float))[None, :], [1.0])

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = _as_points(points)
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))

    def support(self) -> "DiscreteMeasure":
        """The same measure with zero-weight atoms removed."""
        keep = self.weights > 0
        if keep.all():
            return self
        return DiscreteMeasure(self.points[keep], self.weights[keep])

    def to_json(self) -> dict[str, Any]:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "DiscreteMeasure":
        return cls(data["points"], data["weights"])


@dataclass(frozen=True)
class GroundCost:
    """Cost ``d(x, y) ** p`` with the Euclidean metric ``d``."""

    p: float = 1.0

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError(f"order p must be >= 1, got {self.p}")

    def distance(self, x, y) -> np.ndarray:
        return cdist(_as_points(x), _as_points(y))

    def matrix(self, x, y) -> np.ndarray:
        d = self.distance(x, y)
        return d if self.p == 1 else d**self.p


@dataclass(eq=False)
class TransportPlan:
    """Coupling matrix between ``source`` (rows) and ``target`` (columns)."""

    matrix: np.ndarray
    source: DiscreteMeasure
    target: DiscreteMeasure
    cost: GroundCost
    converged: bool = True
    n_iter: int = 0
    info: dict[str, Any] = field(default_factory=dict)

    def marginal_error(self) -> float:
        rows = np.abs(self.matrix.sum(axis=1) - self.source.weights).max()
        cols = np.abs(self.matrix.sum(axis=0) - self.target.weights).max()
        return float(max(rows, cols))

    def total_cost(self) -> float:
        C = self.cost.matrix(self.source.points, self.target.points)
        return float(np.sum(C * self.matrix))


def _logsumexp(M: np.ndarray, axis: int) -> np.ndarray:
    mx = M.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return (mx + np.log(np.exp(M - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def _check_pair(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def solve_transport(a: np.ndarray, b: np.ndarray, C: np.ndarray, max_iter: int | None = None):
    """Exact transportation LP on positive weights ``a``, ``b``.

    Returns ``(plan, value, u, v)`` with dual potentials satisfying
    ``u_i + v_j <= C_ij`` at optimality.
    """
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    n, m = C.shape
    if n == 1 or m == 1:
        P = np.outer(a, b)
        u = np.zeros(n)
        v = np.zeros(m)
        if n == 1:
            v = C[0].copy()
        else:
            u = C[:, 0].copy()
        return P, float(np.sum(P * C)), u, v
    scale = max(float(np.abs(C).max()), 1.0)
    if max_iter is None:
        max_iter = 50 * (n + m) * (n + m) + 1000
    bi, bj, flow, u, v, status, _ = transport_simplex(a, b, C, max_iter, 1e-13 * scale)
    if status != 0:
        raise RuntimeError(f"transportation simplex failed (status {status})")
    P = np.zeros((n, m))
    np.add.at(P, (bi, bj), np.maximum(flow, 0.0))
    return P, float(np.sum(P * C)), u, v


def _sorted_order(points: np.ndarray) -> np.ndarray:
    return np.lexsort(points.T[::-1])


def wasserstein_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: GroundCost | None = None):
    """Order-p Wasserstein distance via the exact transportation LP.

    Returns ``(distance, plan)`` where ``distance = (optimal LP value) ** (1/p)``.
    Zero-weight atoms are dropped before solving and get zero rows/columns
    in the returned plan.
    """
    cost = cost or GroundCost()
    _check_pair(mu, nu)
    ia = np.flatnonzero(mu.weights > 0)
    ib = np.flatnonzero(nu.weights > 0)
    # lexicographic sorting gives the northwest-corner start a near-1-d
    # optimum, which saves most pivots
    ia = ia[_sorted_order(mu.points[ia])]
    ib = ib[_sorted_order(nu.points[ib])]
    C = cost.matrix(mu.points[ia], nu.points[ib])
    P_small, value, _, _ = solve_transport(mu.weights[ia], nu.weights[ib], C)
    P = np.zeros((len(mu), len(nu)))
    P[np.ix_(ia, ib)] = P_small
    value = max(value, 0.0)
    dist = value if cost.p == 1 else value ** (1.0 / cost.p)
    return float(dist), TransportPlan(P, mu, nu, cost, info={"lp_value": value})


def wasserstein_sinkhorn(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: GroundCost | None = None,
    epsilon: float = 1e-2,
    tol: float = 1e-6,
    max_iters: int = 100_000,
):
    """Entropy-regularized transport, solved in the log domain.

    The regularization ``epsilon`` is absolute (same units as the cost).  A
    geometric epsilon-scaling warm start is used, then Sinkhorn iterations at
    the target ``epsilon`` until the L1 row-marginal violation is below
    ``tol``.  The returned estimate is ``(<C, P>) ** (1/p)`` for the
    regularized plan ``P``; it exceeds the exact value by at most
    ``O(epsilon * log(n m))`` plus the marginal slack.

    If ``max_iters`` is exhausted the plan is returned with
    ``converged=False`` and a ``RuntimeWarning`` is issued.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    cost = cost or GroundCost()
    _check_pair(mu, nu)
    a, b = mu.weights, nu.weights
    C = cost.matrix(mu.points, nu.points)
    with np.errstate(divide="ignore"):
        loga, logb = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    eps = max(float(C.max()), epsilon)
    it = 0
    err = np.inf
    while True:
        f = eps * (loga - _logsumexp((g[None, :] - C) / eps, axis=1))
        g = eps * (logb - _logsumexp((f[:, None] - C) / eps, axis=0))
        it += 1
        if eps > epsilon:
            if it % 10 == 0:
                eps = max(eps / 2.0, epsilon)
            continue
        if it % 10 == 0 or it >= max_iters:
            logP = (f[:, None] + g[None, :] - C) / eps
            err = float(np.abs(np.exp(_logsumexp(logP, axis=1)) - a).sum())
            if err <= tol or it >= max_iters:
                break
    P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    value = float(np.sum(P * C))
    converged = err <= tol
    if not converged:
        warnings.warn(
            f"Sinkhorn stopped after {it} iterations with marginal error {err:.3g}",
            RuntimeWarning,
            stacklevel=2,
        )
    dist = value if cost.p == 1 else value ** (1.0 / cost.p)
    plan = TransportPlan(
        P, mu, nu, cost, converged=converged, n_iter=it,
        info={"marginal_error": err, "epsilon": epsilon},
    )
    return float(dist), plan


def kr_dual_check(mu: DiscreteMeasure, nu: DiscreteMeasure, plan: TransportPlan) -> float:
    """Duality gap between ``plan`` and the Kantorovich-Rubinstein dual.

    The dual ``max sum psi(z) (mu(z) - nu(z))`` over 1-Lipschitz ``psi`` on
    the joint support is solved as an LP, independently of the primal
    solver.  Only defined for the order-1 cost.
    """
    if plan.cost.p != 1:
        raise ValueError("the Kantorovich-Rubinstein check needs p = 1")
    _check_pair(mu, nu)
    primal = plan.total_cost()
    pts = np.vstack([mu.points, nu.points])
    z, inverse = np.unique(pts, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    signed = np.zeros(len(z))
    np.add.at(signed, inverse[: len(mu)], mu.weights)
    np.add.at(signed, inverse[len(mu):], -nu.weights)
    nz = len(z)
    if nz == 1:
        return abs(primal)
    D = cdist(z, z)
    ii, jj = np.nonzero(~np.eye(nz, dtype=bool))
    rows = np.arange(len(ii))
    A = np.zeros((len(ii), nz))
    A[rows, ii] = 1.0
    A[rows, jj] = -1.0
    bounds = [(0.0, 0.0)] + [(None, None)] * (nz - 1)
    res = linprog(-signed, A_ub=A, b_ub=D[ii, jj], bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"dual LP failed: {res.message}")
    dual = float(signed @ res.x)
    return abs(primal - dual)
