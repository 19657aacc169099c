import os
import sys

import numpy as np
import pytest

ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT_DIR not in sys.path:
    sys.path.insert(0, ROOT_DIR)

import model  # noqa: E402
import unfolded  # noqa: E402


def random_instance(rng: np.random.Generator, n: int, big_n: int, m: int, phi_scale: float = 1.0):
    """Random frame Phi (N x n) and Gaussian A (m x n)."""
    while True:
        phi = phi_scale * rng.standard_normal((big_n, n))
        try:
            op = model.build_analysis_operator(phi)
            break
        except model.NotAFrame:
            continue
    a = rng.standard_normal((m, n)) / np.sqrt(m)
    return op, model.measurement_model(a)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_instance(rng):
    op, mm = random_instance(rng, n=6, big_n=15, m=3)
    x = rng.standard_normal((6, 4))
    y = mm.a @ x
    return op, mm, x, y


@pytest.fixture
def make_decoder():
    def _make(op, mm, depth=3, lam=0.05, rho=1.0, b_out=1e3):
        return unfolded.build_decoder(op, mm, depth, lam, rho, b_out)
    return _make


@pytest.fixture
def make_instance(rng):
    def _make(n, big_n, m, phi_scale=1.0):
        return random_instance(rng, n, big_n, m, phi_scale)
    return _make
