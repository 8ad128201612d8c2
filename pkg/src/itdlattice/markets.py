"""Correlated geometric Brownian motion, basket puts and a binomial baseline.

Asset ``i`` follows ``dS_i = r S_i dt + S_i sigma_i . dW`` under the pricing
measure, where ``sigma_i`` is row ``i`` of the volatility matrix and ``W`` a
standard Brownian motion of the same dimension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np


@dataclass(frozen=True, eq=False)
class GbmModel:
    s0: np.ndarray
    r: float
    sigma: np.ndarray
    T: float
    N: int

    def __post_init__(self):
        s0 = np.asarray(self.s0, dtype=float).reshape(-1)
        sig = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if np.any(s0 <= 0):
            raise ValueError("initial prices must be positive")
        if sig.shape != (s0.size, s0.size):
            raise ValueError(f"sigma must be {s0.size}x{s0.size}, got {sig.shape}")
        if self.N < 1 or not self.T > 0:
            raise ValueError("need N >= 1 and T > 0")
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "sigma", sig)

    @property
    def dim(self) -> int:
        return self.s0.size

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def drift(self) -> np.ndarray:
        """Log-drift per unit time, ``r - |sigma_i|^2 / 2``."""
        return self.r - 0.5 * np.sum(self.sigma**2, axis=1)

    def with_steps(self, N: int) -> "GbmModel":
        return GbmModel(self.s0, self.r, self.sigma, self.T, N)


@dataclass(frozen=True, eq=False)
class BasketPut:
    strike: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if np.any(w < 0):
            raise ValueError("basket weights must be nonnegative")
        object.__setattr__(self, "weights", w)


def gbm_sample_step(model: GbmModel, state, dt: float, rng: np.random.Generator, size=None):
    """Exact lognormal step of length ``dt`` from ``state``.

    ``state`` may be a single price vector or a stack of them (last axis is
    the asset); ``size`` prepends extra sample axes.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = np.asarray(state, dtype=float)
    shape = s.shape if size is None else tuple(np.atleast_1d(size)) + s.shape
    z = rng.standard_normal(shape)
    return s * np.exp(model.drift * dt + np.sqrt(dt) * z @ model.sigma.T)


def basket_put_payoff(opt: BasketPut, s) -> np.ndarray | float:
    """``max(0, K - w . s)`` along the last axis."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != opt.weights.size:
        raise ValueError("price vector and basket weights differ in length")
    out = np.maximum(0.0, opt.strike - s @ opt.weights)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GbmSampler:
    """Kernel sampler for one GBM step of the model's grid."""

    model: GbmModel

    def sample(self, t, states, n, rng):
        states = np.asarray(states, dtype=float)
        z = rng.standard_normal((states.shape[0], n, self.model.dim))
        dt = self.model.dt
        step = self.model.drift * dt + np.sqrt(dt) * z @ self.model.sigma.T
        return states[:, None, :] * np.exp(step)


def gbm_kernel_sampler(model: GbmModel) -> GbmSampler:
    return GbmSampler(model)


# ---------------------------------------------------------------------------
# binomial lattice


def binomial_node_count(n: int, N: int) -> int:
    """Nodes of the recombining n-dimensional tree over steps ``0..N``."""
    if n < 1 or N < 0:
        raise ValueError("need n >= 1 and N >= 0")
    return sum((i + 1) ** n for i in range(N + 1))


def binomial_nodes(model: GbmModel, i: int) -> np.ndarray:
    """Prices at step ``i``, shape ``(i+1,)*n + (n,)``.

    Node ``j`` (up-counts per Brownian coordinate) carries
    ``s0 * exp(drift i dt + sigma (2j - i) sqrt(dt))``.
    """
    n = model.dim
    dt = model.dt
    grids = np.meshgrid(*[np.arange(i + 1)] * n, indexing="ij")
    j = np.stack(grids, axis=-1).astype(float)
    walk = (2.0 * j - i) * np.sqrt(dt)
    return model.s0 * np.exp(model.drift * i * dt + walk @ model.sigma.T)


def binomial_price_american(
    model: GbmModel, opt: BasketPut, american: bool = True, node_cap: int = 50_000_000
) -> float:
    """Basket put on the recombining tree with ``2^n`` equiprobable branches.

    Each Brownian coordinate moves by ``+-sqrt(dt)``; the drift enters the
    exponent deterministically.  With ``american=False`` exercise is only
    allowed at maturity.
    """
    n, N = model.dim, model.N
    if (N + 1) ** n > node_cap:
        raise ValueError(f"(N+1)^n = {(N + 1) ** n} nodes exceed the cap {node_cap}")
    disc = np.exp(-model.r * model.dt)
    v = basket_put_payoff(opt, binomial_nodes(model, N))
    for i in range(N - 1, -1, -1):
        # average over the 2^n children: up-count +0 or +1 in every axis
        cont = v
        for ax in range(n):
            lo = [slice(None)] * n
            hi = [slice(None)] * n
            lo[ax] = slice(0, i + 1)
            hi[ax] = slice(1, i + 2)
            cont = 0.5 * (cont[tuple(lo)] + cont[tuple(hi)])
        v = disc * cont
        if american:
            v = np.maximum(v, basket_put_payoff(opt, binomial_nodes(model, i)))
    return float(v.reshape(-1)[0])


# ---------------------------------------------------------------------------
# bundled configurations


def load_config(name_or_path) -> dict[str, Any]:
    """Read a JSON config from a path or from the bundled data by name."""
    p = Path(name_or_path)
    if p.suffix != ".json":
        p = p.with_suffix(".json")
    if p.exists():
        return json.loads(p.read_text())
    ref = resources.files("itdlattice") / "data" / p.name
    return json.loads(ref.read_text())


def market_from_config(cfg: dict[str, Any], N: int | None = None) -> tuple[GbmModel, BasketPut]:
    try:
        model = GbmModel(cfg["s0"], cfg["r"], cfg["sigma"], cfg["T"], N or cfg.get("N", 1))
        opt = BasketPut(cfg["strike"], cfg["weights"])
    except KeyError as e:
        raise ValueError(f"market config misses key {e}") from None
    if opt.weights.size != model.dim:
        raise ValueError("basket weights and asset count differ")
    return model, opt
