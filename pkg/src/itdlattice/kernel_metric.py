"""Discrete transition kernels and the integrated transportation distance."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .transport import DiscreteMeasure, GroundCost, _as_points, wasserstein_exact

# A marginal is an ordinary discrete measure whose atoms are the kernel's
# source points, index for index.
Marginal = DiscreteMeasure


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """A kernel given row-wise: ``rows[s]`` is the law of the next state from
    ``sources[s]``.  Rows carry their own (independent) supports."""

    sources: np.ndarray
    rows: tuple[DiscreteMeasure, ...]

    def __post_init__(self):
        src = _as_points(self.sources)
        rows = tuple(self.rows)
        if len(rows) != src.shape[0]:
            raise ValueError(f"{src.shape[0]} sources but {len(rows)} rows")
        if rows:
            dims = {r.dim for r in rows}
            if len(dims) != 1:
                raise ValueError("kernel rows live in different dimensions")
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.sources.shape[0]

    @property
    def target_dim(self) -> int:
        return self.rows[0].dim

    def to_json(self) -> dict[str, Any]:
        return {"sources": self.sources.tolist(), "rows": [r.to_json() for r in self.rows]}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "DiscreteKernel":
        return cls(data["sources"], tuple(DiscreteMeasure.from_json(r) for r in data["rows"]))

    @classmethod
    def from_matrix(cls, sources, targets, probs) -> "DiscreteKernel":
        """Kernel on a shared target grid from a row-stochastic matrix."""
        targets = _as_points(targets)
        probs = np.asarray(probs, dtype=float)
        return cls(sources, tuple(DiscreteMeasure(targets, row) for row in probs))


def _check_aligned(lam: Marginal, q: DiscreteKernel) -> None:
    if len(lam) != len(q) or not np.array_equal(lam.points, q.sources):
        raise ValueError("marginal atoms are not aligned with the kernel sources")


def _check_same_sources(q: DiscreteKernel, q_tilde: DiscreteKernel) -> None:
    if len(q) != len(q_tilde) or not np.array_equal(q.sources, q_tilde.sources):
        raise ValueError("kernels are defined on different source points")


def compose_marginal(lam: Marginal, q: DiscreteKernel) -> DiscreteMeasure:
    """Mixture ``sum_s lam_s Q(.|x_s)``; coincident atoms are merged exactly."""
    _check_aligned(lam, q)
    pts, wts = [], []
    for w, row in zip(lam.weights, q.rows):
        if w > 0:
            pts.append(row.points)
            wts.append(w * row.weights)
    pts = np.vstack(pts)
    wts = np.concatenate(wts)
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    merged = np.bincount(inv.reshape(-1), weights=wts, minlength=len(uniq))
    merged /= merged.sum()
    return DiscreteMeasure(uniq, merged)


def join_marginal(lam: Marginal, q: DiscreteKernel) -> DiscreteMeasure:
    """Joint law on the product space with atoms ``(x_s, y)``."""
    _check_aligned(lam, q)
    pts, wts = [], []
    for x, w, row in zip(q.sources, lam.weights, q.rows):
        if w > 0:
            pts.append(np.hstack([np.broadcast_to(x, (len(row), x.shape[0])), row.points]))
            wts.append(w * row.weights)
    wts = np.concatenate(wts)
    return DiscreteMeasure(np.vstack(pts), wts / wts.sum())


def row_distances(
    q: DiscreteKernel,
    q_tilde: DiscreteKernel,
    cost: GroundCost | None = None,
    active: Sequence[bool] | None = None,
    workers: int = 1,
) -> np.ndarray:
    """``W_p(Q(.|x_s), Q~(.|x_s))`` for every source, in source order.

    Sources with ``active[s]`` false are skipped and report 0.
    """
    cost = cost or GroundCost()
    _check_same_sources(q, q_tilde)
    n = len(q)
    idx = [s for s in range(n) if active is None or active[s]]
    out = np.zeros(n)

    def one(s):
        return wasserstein_exact(q.rows[s], q_tilde.rows[s], cost)[0]

    if workers > 1 and len(idx) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for s, d in zip(idx, pool.map(one, idx)):
                out[s] = d
    else:
        for s in idx:
            out[s] = one(s)
    return out


def itd(
    lam: Marginal,
    q: DiscreteKernel,
    q_tilde: DiscreteKernel,
    cost: GroundCost | None = None,
    workers: int = 1,
) -> float:
    """Integrated transportation distance of ``q`` and ``q_tilde`` under ``lam``.

    ``(sum_s lam_s W_p(Q(.|x_s), Q~(.|x_s))^p)^(1/p)``.  Sources of zero
    marginal weight are ignored, so kernels that agree ``lam``-a.s. are at
    distance zero.
    """
    cost = cost or GroundCost()
    _check_aligned(lam, q)
    _check_same_sources(q, q_tilde)
    d = row_distances(q, q_tilde, cost, active=lam.weights > 0, workers=workers)
    total = float(np.sum(lam.weights * d**cost.p))
    return total if cost.p == 1 else total ** (1.0 / cost.p)


def sup_distance(
    q: DiscreteKernel, q_tilde: DiscreteKernel, cost: GroundCost | None = None, workers: int = 1
) -> float:
    """``max_s W_p(Q(.|x_s), Q~(.|x_s))`` (uniform gauge)."""
    return float(row_distances(q, q_tilde, cost, workers=workers).max())


def hierarchy_triple(
    lam: Marginal, q: DiscreteKernel, q_tilde: DiscreteKernel, cost: GroundCost | None = None
) -> tuple[float, float, float]:
    """``(ITD, W_p of the joined laws, W_p of the mixtures)``.

    The three are ordered from largest to smallest; a violation beyond 1e-9
    raises ``ArithmeticError`` since it can only come from a solver fault.
    The product space uses the Euclidean metric on concatenated coordinates.
    """
    cost = cost or GroundCost()
    top = itd(lam, q, q_tilde, cost)
    joined = wasserstein_exact(join_marginal(lam, q), join_marginal(lam, q_tilde), cost)[0]
    mixed = wasserstein_exact(compose_marginal(lam, q), compose_marginal(lam, q_tilde), cost)[0]
    if not (top >= joined - 1e-9 and joined >= mixed - 1e-9):
        raise ArithmeticError(f"distance hierarchy violated: {top}, {joined}, {mixed}")
    return top, joined, mixed


def kernel_lipschitz(q: DiscreteKernel, cost: GroundCost | None = None) -> float:
    """Largest ratio ``W_p(Q(x), Q(x')) / |x - x'|`` over distinct source pairs."""
    cost = cost or GroundCost()
    best = 0.0
    n = len(q)
    for i in range(n):
        for j in range(i + 1, n):
            dx = float(np.linalg.norm(q.sources[i] - q.sources[j]))
            if dx == 0:
                continue
            w = wasserstein_exact(q.rows[i], q.rows[j], cost)[0]
            best = max(best, w / dx)
    return best
