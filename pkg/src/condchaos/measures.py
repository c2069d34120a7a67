"""Empirical measures and Wasserstein distances between them."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtri

from .errors import InvalidArgument

logger = logging.getLogger(__name__)

EXACT_ASSIGNMENT_MAX = 512
QUANTILE_ATOMS = 2**14


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Equally weighted atoms, stored as ``points[n][m]``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidArgument("an empirical measure needs points of shape [n][m] with n >= 1")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("empirical measure atoms must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @classmethod
    def dirac(cls, m: int = 1, at=None) -> "EmpiricalMeasure":
        loc = np.zeros(m) if at is None else np.asarray(at, dtype=float).reshape(m)
        return cls(loc[None, :])

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class DistanceResult:
    value: float
    p: float
    method: str  # "exact-1d" | "exact-assignment" | "entropic"
    approximate: bool = False


def _as_measure(x) -> EmpiricalMeasure:
    return x if isinstance(x, EmpiricalMeasure) else EmpiricalMeasure(x)


def wasserstein_p_1d(mu, nu, p: float = 2.0) -> DistanceResult:
    """Exact ``W_p`` between two equal-size 1D clouds via the sorted coupling."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.m != 1 or nu.m != 1:
        raise InvalidArgument("wasserstein_p_1d needs one-dimensional measures")
    if mu.n != nu.n:
        raise InvalidArgument(f"support sizes differ ({mu.n} vs {nu.n})")
    if p < 1:
        raise InvalidArgument(f"order p must be >= 1, got {p}")
    x = np.sort(mu.points[:, 0], kind="stable")
    y = np.sort(nu.points[:, 0], kind="stable")
    value = float(np.mean(np.abs(x - y) ** p) ** (1.0 / p))
    return DistanceResult(value, float(p), "exact-1d")


@lru_cache(maxsize=64)
def _merged_segments(n: int, N: int):
    """Quantile-coupling segments for uniform measures with ``n`` and ``N`` atoms.

    Breakpoints are kept as integers over the common denominator ``n*N``.
    """
    b = np.union1d(np.arange(n + 1, dtype=np.int64) * N, np.arange(N + 1, dtype=np.int64) * n)
    starts = b[:-1]
    ix = starts // N
    iy = starts // n
    w = np.diff(b) / float(n * N)
    for arr in (ix, iy, w):
        arr.setflags(write=False)
    return ix, iy, w


def sorted_wasserstein_pp(x_sorted: np.ndarray, y_sorted: np.ndarray, p: float = 2.0) -> np.ndarray:
    """``W_p^p`` between uniform 1D measures given as sorted arrays along the last axis.

    Leading axes broadcast, so a whole batch of (path, node) cells is handled at
    once. Sizes may differ; the monotone quantile coupling is exact in 1D.
    """
    n, N = x_sorted.shape[-1], y_sorted.shape[-1]
    if n == N:
        return np.mean(np.abs(x_sorted - y_sorted) ** p, axis=-1)
    ix, iy, w = _merged_segments(n, N)
    diff = np.abs(x_sorted[..., ix] - y_sorted[..., iy])
    return np.sum(w * diff**p, axis=-1)


def wasserstein_p_1d_general(mu, nu, p: float = 2.0) -> DistanceResult:
    """Exact 1D ``W_p`` allowing different support sizes."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.m != 1 or nu.m != 1:
        raise InvalidArgument("wasserstein_p_1d_general needs one-dimensional measures")
    if p < 1:
        raise InvalidArgument(f"order p must be >= 1, got {p}")
    x = np.sort(mu.points[:, 0], kind="stable")
    y = np.sort(nu.points[:, 0], kind="stable")
    return DistanceResult(float(sorted_wasserstein_pp(x, y, p) ** (1.0 / p)), float(p), "exact-1d")


def _sq_cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)


def _lse_rows(A: np.ndarray) -> np.ndarray:
    top = A.max(axis=1)
    return top + np.log(np.exp(A - top[:, None]).sum(axis=1))


def sinkhorn_w2_squared(x: np.ndarray, y: np.ndarray, reg: float | None = None,
                        tol: float = 1e-5, max_iter: int = 5_000) -> float:
    """Transport cost of the entropic plan between two uniform clouds (log domain).

    The regularization is annealed geometrically from the median cost down to
    ``reg`` with warm-started potentials; ``tol`` bounds the L1 error of the
    row marginals at the final level.
    """
    C = _sq_cost(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    median = float(np.median(C))
    if reg is None:
        reg = 0.01 * median
    if reg <= 0:
        return 0.0
    n, N = C.shape
    CT = np.ascontiguousarray(C.T)
    log_a = np.full(n, -np.log(n))
    log_b = np.full(N, -np.log(N))
    f = np.zeros(n)
    g = np.zeros(N)
    levels = [median * 0.5**j for j in range(64) if median * 0.5**j > reg] + [reg]
    for level, eps in enumerate(levels):
        final = level == len(levels) - 1
        for it in range(max_iter if final else 50):
            f = eps * (log_a - _lse_rows((g[None, :] - C) / eps))
            g = eps * (log_b - _lse_rows((f[None, :] - CT) / eps))
            if final and it % 10 == 0:
                err = np.abs(np.exp(_lse_rows((f[:, None] + g[None, :] - C) / eps)) - 1.0 / n).sum()
                if err < tol:
                    break
        else:
            if final:
                logger.warning("sinkhorn stopped at max_iter=%d (marginal error %.3g)", max_iter, err)
    log_p = (f[:, None] + g[None, :] - C) / reg
    return float(np.sum(np.exp(log_p) * C))


def wasserstein_2_assignment(mu, nu, exact_max: int = EXACT_ASSIGNMENT_MAX) -> DistanceResult:
    """``W_2`` in any dimension for equal-size clouds.

    Exact linear assignment up to ``exact_max`` atoms; beyond that an entropic
    plan with regularization ``0.01 * median cost`` is used and the result is
    flagged approximate.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.n != nu.n:
        raise InvalidArgument(f"support sizes differ ({mu.n} vs {nu.n})")
    if mu.m != nu.m:
        raise InvalidArgument(f"dimensions differ ({mu.m} vs {nu.m})")
    if mu.n > exact_max:
        value = sinkhorn_w2_squared(mu.points, nu.points)
        return DistanceResult(float(np.sqrt(value)), 2.0, "entropic", approximate=True)
    C = _sq_cost(mu.points, nu.points)
    rows, cols = linear_sum_assignment(C)
    value = float(C[rows, cols].sum() / mu.n)
    return DistanceResult(float(np.sqrt(max(value, 0.0))), 2.0, "exact-assignment")


def wasserstein_2(mu, nu) -> float:
    """``W_2`` with the exact method appropriate to the inputs."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.m == 1:
        return wasserstein_p_1d_general(mu, nu, 2.0).value
    if mu.n == nu.n:
        return wasserstein_2_assignment(mu, nu).value
    raise InvalidArgument("unequal support sizes are only supported in one dimension")


def moment_distance_to_dirac(mu, p: float = 2.0) -> float:
    """``W_p(mu, delta_0) = (mean |x|^p)^(1/p)``."""
    if p < 1:
        raise InvalidArgument(f"order p must be >= 1, got {p}")
    mu = _as_measure(mu)
    norms = np.linalg.norm(mu.points, axis=1)
    return float(np.mean(norms**p) ** (1.0 / p))


def coupling_upper_bound(x, y) -> tuple[float, float]:
    """Return ``(W_2^2(emp x, emp y), mean_i |x_i - y_i|^2)``; the first never exceeds the second."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape != y.shape:
        raise InvalidArgument(f"paired clouds must have equal shapes, got {x.shape} and {y.shape}")
    paired = float(np.mean(np.sum((x - y) ** 2, axis=1)))
    if x.shape[1] == 1:
        w2sq = float(sorted_wasserstein_pp(np.sort(x[:, 0]), np.sort(y[:, 0]), 2.0))
    else:
        C = _sq_cost(x, y)
        rows, cols = linear_sum_assignment(C)
        w2sq = float(C[rows, cols].sum() / x.shape[0])
    # the identity pairing is feasible, so the optimum cannot exceed it
    return min(w2sq, paired), paired


@lru_cache(maxsize=4)
def standard_normal_atoms(num_atoms: int = QUANTILE_ATOMS) -> np.ndarray:
    """Midpoint quantiles ``Phi^{-1}((j + 1/2) / N)`` of the standard normal."""
    atoms = ndtri((np.arange(num_atoms) + 0.5) / num_atoms)
    atoms.setflags(write=False)
    return atoms


@lru_cache(maxsize=64)
def _gaussian_cell_moments(n: int, num_atoms: int):
    ix, iy, w = _merged_segments(n, num_atoms)
    z = standard_normal_atoms(num_atoms)
    first = np.bincount(ix, weights=w * z[iy], minlength=n)
    second = np.bincount(ix, weights=w * z[iy] ** 2, minlength=n)
    return first, second


def w2_squared_to_gaussian(x_sorted: np.ndarray, mean, std, num_atoms: int = QUANTILE_ATOMS) -> np.ndarray:
    """``W_2^2`` between sorted 1D clouds and quantile-discretized ``N(mean, std^2)`` laws.

    ``x_sorted`` has shape ``[..., n]``; ``mean`` and ``std`` broadcast against
    the leading axes. Exact for the ``num_atoms``-atom discretization.
    """
    n = x_sorted.shape[-1]
    first, second = _gaussian_cell_moments(n, num_atoms)
    mean = np.asarray(mean, dtype=float)[..., None]
    std = np.asarray(std, dtype=float)[..., None]
    centred = x_sorted - mean
    out = np.sum(centred**2 / n - 2.0 * std * centred * first + std**2 * second, axis=-1)
    return np.maximum(out, 0.0)
