"""Hypothesis strategies for discrete measures and kernels."""

import numpy as np
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from itdlattice.kernel_metric import DiscreteKernel
from itdlattice.transport import DiscreteMeasure

coords = st.floats(-5, 5, allow_nan=False, allow_infinity=False, width=64)


def _normalize(w):
    w = np.asarray(w, float) + 1e-3
    return w / w.sum()


@st.composite
def measures(draw, dim=1, min_atoms=1, max_atoms=6):
    k = draw(st.integers(min_atoms, max_atoms))
    pts = draw(arrays(np.float64, (k, dim), elements=coords))
    w = draw(arrays(np.float64, k, elements=st.floats(0, 1)))
    return DiscreteMeasure(pts, _normalize(w))


@st.composite
def kernels(draw, sources, dim=1, max_atoms=4):
    rows = tuple(draw(measures(dim, 1, max_atoms)) for _ in range(len(sources)))
    return DiscreteKernel(sources, rows)


@st.composite
def kernel_triples(draw, n_sources=3, dim=1):
    src = draw(arrays(np.float64, (n_sources, dim), elements=coords))
    lam_w = draw(arrays(np.float64, n_sources, elements=st.floats(0, 1)))
    lam = DiscreteMeasure(src, _normalize(lam_w))
    return lam, draw(kernels(src, dim)), draw(kernels(src, dim)), draw(kernels(src, dim))


def random_measure(rng, k, dim=1, scale=1.0):
    return DiscreteMeasure(rng.normal(scale=scale, size=(k, dim)), rng.dirichlet(np.ones(k)))


def random_kernel(rng, sources, dim=1, max_atoms=4):
    rows = tuple(random_measure(rng, rng.integers(1, max_atoms + 1), dim) for _ in range(len(sources)))
    return DiscreteKernel(sources, rows)
