import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from condchaos.errors import InvalidArgument
from condchaos.measures import (EmpiricalMeasure, coupling_upper_bound, moment_distance_to_dirac,
                                sinkhorn_w2_squared, standard_normal_atoms, wasserstein_2,
                                wasserstein_2_assignment, wasserstein_p_1d,
                                wasserstein_p_1d_general, w2_squared_to_gaussian)


def brute_w2_squared(x, y):
    x = np.asarray(x, float).reshape(len(x), -1)
    y = np.asarray(y, float).reshape(len(y), -1)
    n = len(x)
    return min(np.mean(np.sum((x - y[list(p)]) ** 2, axis=1)) for p in itertools.permutations(range(n)))


def lp_wpp(x, y, p):
    """Transport LP between uniform measures of different sizes."""
    n, N = len(x), len(y)
    cost = np.abs(np.subtract.outer(x, y)) ** p
    A = np.zeros((n + N, n * N))
    for i in range(n):
        A[i, i * N:(i + 1) * N] = 1
    for j in range(N):
        A[n + j, j::N] = 1
    b = np.concatenate([np.full(n, 1 / n), np.full(N, 1 / N)])
    res = linprog(cost.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    return res.fun


def test_measure_validation():
    with pytest.raises(InvalidArgument):
        EmpiricalMeasure(np.array([1.0, np.nan]))
    with pytest.raises(InvalidArgument):
        EmpiricalMeasure(np.zeros((0, 1)))
    mu = EmpiricalMeasure([1.0, 3.0])
    assert (mu.n, mu.m) == (2, 1)
    assert mu.mean()[0] == 2.0
    assert EmpiricalMeasure.dirac(2).points.tolist() == [[0.0, 0.0]]


def test_w1d_examples():
    assert wasserstein_p_1d([1.0, 5.0, 2.0], [5.0, 2.0, 1.0]).value == 0.0
    assert wasserstein_p_1d([0.0, 2.0], [1.0, 3.0], 2).value == pytest.approx(1.0, abs=1e-15)
    assert wasserstein_p_1d([0.0], [-2.5]).value == 2.5
    assert wasserstein_p_1d([0.0], [-2.5]).method == "exact-1d"


def test_w1d_errors():
    with pytest.raises(InvalidArgument):
        wasserstein_p_1d([0.0, 1.0], [1.0])
    with pytest.raises(InvalidArgument):
        wasserstein_p_1d(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(InvalidArgument):
        wasserstein_p_1d([0.0], [1.0], p=0.5)


def test_sorted_equals_exhaustive_100_seeds():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        x, y = rng.normal(size=n), rng.normal(size=n)
        assert wasserstein_p_1d(x, y).value ** 2 == pytest.approx(brute_w2_squared(x, y), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_assignment_equals_exhaustive_in_2d(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    x, y = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    res = wasserstein_2_assignment(x, y)
    assert res.method == "exact-assignment" and not res.approximate
    assert res.value**2 == pytest.approx(brute_w2_squared(x, y), rel=1e-12, abs=1e-14)


def test_assignment_matches_1d_sorted():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=40), rng.normal(size=40)
    assert wasserstein_2_assignment(x, y).value == pytest.approx(wasserstein_p_1d(x, y).value, abs=1e-12)
    assert wasserstein_2_assignment(x, x).value == 0.0
    with pytest.raises(InvalidArgument):
        wasserstein_2_assignment(np.zeros((3, 2)), np.zeros((2, 2)))


def test_large_clouds_use_flagged_entropic_approximation():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(600, 2)), rng.normal(size=(600, 2)) + 1.0
    res = wasserstein_2_assignment(x, y)
    assert res.method == "entropic" and res.approximate
    exact = wasserstein_2_assignment(x, y, exact_max=10**4).value
    assert res.value == pytest.approx(exact, rel=0.1)


def test_sinkhorn_close_to_exact_on_small_problem():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
    exact = brute_w2_squared(x[:6], y[:6])
    assert sinkhorn_w2_squared(x[:6], y[:6], reg=1e-3) == pytest.approx(exact, rel=0.05)


@pytest.mark.parametrize("seed", range(8))
def test_general_1d_matches_transport_lp(seed):
    rng = np.random.default_rng(seed)
    n, N = int(rng.integers(1, 6)), int(rng.integers(1, 8))
    x, y = rng.normal(size=n), rng.normal(size=N)
    for p in (1.0, 2.0, 3.0):
        got = wasserstein_p_1d_general(x, y, p).value ** p
        assert got == pytest.approx(lp_wpp(x, y, p), rel=1e-8, abs=1e-12)


def test_dispatcher():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=5), rng.normal(size=7)
    assert wasserstein_2(x, y) == pytest.approx(np.sqrt(lp_wpp(x, y, 2)), rel=1e-8)
    a, b = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    assert wasserstein_2(a, b) == pytest.approx(np.sqrt(brute_w2_squared(a, b)), rel=1e-12)


def test_moment_distance():
    assert moment_distance_to_dirac(EmpiricalMeasure.dirac()) == 0.0
    assert moment_distance_to_dirac([3.0, 4.0], 2) == pytest.approx(np.sqrt(12.5), rel=1e-15)
    x = np.random.default_rng(0).normal(size=(9, 2))
    assert moment_distance_to_dirac(2.5 * x, 3) == pytest.approx(2.5 * moment_distance_to_dirac(x, 3), rel=1e-13)
    with pytest.raises(InvalidArgument):
        moment_distance_to_dirac(x, 0.5)


def test_coupling_upper_bound_examples():
    x = np.array([0.3, -1.0, 2.0])
    assert coupling_upper_bound(x, x) == (0.0, 0.0)
    w2sq, paired = coupling_upper_bound([0.0, 2.0], [3.0, 1.0])
    assert w2sq == pytest.approx(1.0, abs=1e-15)
    assert paired == 5.0
    with pytest.raises(InvalidArgument):
        coupling_upper_bound([0.0, 1.0], [1.0])


@pytest.mark.parametrize("seed", range(20))
def test_coupling_upper_bound_against_assignment_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 7)), int(rng.integers(1, 3))
    x, y = rng.normal(size=(n, m)), rng.normal(size=(n, m))
    w2sq, paired = coupling_upper_bound(x, y)
    assert w2sq <= paired
    assert w2sq == pytest.approx(brute_w2_squared(x, y), rel=1e-12, abs=1e-14)


# dyadic grid values avoid underflow of squared tiny differences
finite = st.integers(-8000, 8000).map(lambda v: v / 8)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(*[arrays(float, n, elements=finite)] * 2)))
def test_coupling_upper_bound_property(xy):
    x, y = xy
    w2sq, paired = coupling_upper_bound(x, y)
    assert w2sq <= paired


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(*[arrays(float, n, elements=finite)] * 3)))
def test_metric_axioms(xyz):
    x, y, z = xyz
    dxy = wasserstein_p_1d(x, y).value
    assert dxy == pytest.approx(wasserstein_p_1d(y, x).value, abs=1e-12)
    assert wasserstein_p_1d(x, x).value == 0.0
    tol = 1e-9 * (1 + np.max(np.abs(np.concatenate([x, y, z]))))
    assert dxy <= wasserstein_p_1d(x, z).value + wasserstein_p_1d(z, y).value + tol
    assert (dxy == 0) == (sorted(x) == sorted(y))
    # monotone in p
    assert dxy <= wasserstein_p_1d(x, y, 4).value * (1 + 1e-12) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5).flatmap(lambda n: st.tuples(*[arrays(float, (n, 2), elements=finite)] * 3)))
def test_assignment_metric_axioms(xyz):
    x, y, z = xyz
    d = lambda a, b: wasserstein_2_assignment(a, b).value  # noqa: E731
    assert d(x, y) == pytest.approx(d(y, x), abs=1e-9)
    assert d(x, x) == 0.0
    assert d(x, y) <= d(x, z) + d(z, y) + 1e-9 * (1 + np.abs(np.concatenate([x, y, z])).max())


def test_gaussian_distance_matches_direct_atoms():
    rng = np.random.default_rng(2)
    z = standard_normal_atoms(2**10)
    x = np.sort(rng.normal(0.3, 1.7, size=(3, 50)), axis=-1)
    got = w2_squared_to_gaussian(x, 0.3, 1.7, num_atoms=2**10)
    direct = [wasserstein_p_1d_general(row, 0.3 + 1.7 * z).value ** 2 for row in x]
    assert np.allclose(got, direct, rtol=1e-10, atol=1e-13)
    # a degenerate law is a Dirac
    assert w2_squared_to_gaussian(np.array([1.0, 3.0]), 2.0, 0.0) == pytest.approx(1.0)
