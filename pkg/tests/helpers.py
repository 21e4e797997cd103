import numpy as np
from hypothesis import strategies as st

from aoii_vlsf.channel import DecodePmf


def pmf_from(weights):
    w = np.asarray(weights, dtype=float)
    return DecodePmf(w / w.sum())


def random_pmf(rng, L, sparse=False):
    w = rng.random(L) + 1e-3
    if sparse:
        w[:-1] *= rng.random(L - 1) < 0.5
    return pmf_from(w)


@st.composite
def pmfs(draw, max_L=8):
    L = draw(st.integers(1, max_L))
    w = draw(st.lists(st.floats(0.0, 1.0), min_size=L, max_size=L))
    last = draw(st.floats(0.05, 1.0))
    return pmf_from(list(w[:-1]) + [last])
