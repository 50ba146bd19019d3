import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import distance_transform_cdt

from davies_lab import _kernels


def brute_energies(n, edges, couplings, fields):
    out = []
    for cfg in itertools.product((1, -1), repeat=n):
        e = -sum(h * s for h, s in zip(fields, cfg))
        e -= sum(j * cfg[a] * cfg[b] for j, (a, b) in zip(couplings, edges))
        out.append(e)
    return np.array(out)


@pytest.mark.parametrize("metric,scipy_metric", [("chebyshev", "chessboard"), ("taxicab", "taxicab")])
@pytest.mark.parametrize("shape", [(31,), (9, 11), (5, 6, 7)])
def test_grid_distance_matches_scipy(metric, scipy_metric, shape):
    rng = np.random.default_rng(sum(shape))
    source = rng.random(shape) < 0.05
    source[(0,) * len(shape)] = True
    expect = distance_transform_cdt(~source, metric=scipy_metric)
    for use in (True, False):
        assert np.array_equal(_kernels.grid_distance(source, metric, use_numba=use), expect)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(0, 4))
def test_backends_agree_with_depth_cap(seed, ndim, depth):
    rng = np.random.default_rng(seed)
    source = rng.random((7,) * ndim) < 0.03
    for metric in ("chebyshev", "taxicab"):
        a = _kernels.grid_distance(source, metric, depth, use_numba=True)
        b = _kernels.grid_distance(source, metric, depth, use_numba=False)
        assert np.array_equal(a, b)
        assert np.all((a <= depth) | (a == _kernels.UNREACHED))


def test_empty_source_unreached():
    out = _kernels.grid_distance(np.zeros((4, 4), bool), use_numba=False)
    assert np.all(out == _kernels.UNREACHED)


@pytest.mark.parametrize("n", [1, 3, 6])
def test_ising_energies(n):
    rng = np.random.default_rng(n)
    edges = [(i, i + 1) for i in range(n - 1)] + ([(0, n - 1)] if n > 2 else [])
    couplings, fields = rng.normal(size=len(edges)), rng.normal(size=n)
    expect = brute_energies(n, edges, couplings, fields)
    for use in (True, False):
        got = _kernels.ising_energies(n, edges, couplings, fields, use_numba=use)
        assert np.allclose(got, expect, atol=1e-12)


def test_inconsistent_sizes():
    with pytest.raises(ValueError):
        _kernels.ising_energies(3, [(0, 1)], [1.0, 2.0], [0.0] * 3)


@pytest.mark.parametrize("flag,expected", [("0", "False"), ("1", "True")])
def test_environment_flag(flag, expected):
    env = {**os.environ, "DAVIES_LAB_NUMBA": flag}
    code = "from davies_lab import _kernels; print(_kernels.NUMBA_ENABLED)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == (expected if _kernels.HAVE_NUMBA or flag == "0" else "False")
