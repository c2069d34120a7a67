"""Backward Euler with regression for the interacting particle system.

Conditional expectations are estimated by one least-squares fit per time step,
pooled over every particle of every system. The regressors are polynomial
features ``phi`` of ``(W^i_{t_k}, W^0_{t_k})`` together with ``phi * dW^i`` and
``phi * dW^0``; the first block gives ``E[Y_{k+1} | F_k]`` and the other two
give ``Z_k`` and ``Z0_k`` (``E[Y_{k+1} dW | F_k] / dt`` in population). Fitting
the blocks jointly uses the increments as control variates, which keeps the
common-noise direction accurate when only a handful of common paths exist.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument, NumericError
from .model import ModelSpec
from .paths import PathBundle
from .solution import BackwardSolution, SchemeConfig, empirical_flow  # noqa: F401

logger = logging.getLogger(__name__)

DEFAULT_RIDGE_SCALE = 1e-8

# k -> atoms [S][N][m] of the measure argument at node k, or None for the live
# empirical measure of the particles themselves
MeasureSource = Callable[[int], np.ndarray] | None


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares predictor ``offset + features @ coef``."""

    coef: np.ndarray  # [F][m]
    offset: np.ndarray  # [m]
    ridge: float
    rank_deficient: bool

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.offset + features @ self.coef


def regress_conditional(features, targets, ridge: float | None = None) -> RegressionFit:
    """Ridge least squares of ``targets`` on ``features``.

    Minimizes ``sum |target - offset - coef . feature|^2 + ridge |coef|^2``
    where the offset is the first target, so constant targets are reproduced
    exactly. ``ridge=None`` uses ``1e-8`` times the mean squared feature norm.
    With ``ridge=0`` a rank-deficient system is solved by the minimal-norm
    least-squares solution and flagged.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if X.ndim != 2 or y.shape[0] != X.shape[0]:
        raise InvalidArgument("features must be [S][F] and targets [S][m] with matching S")
    S, F = X.shape
    if S < F:
        raise InvalidArgument(f"need at least as many samples as features ({S} < {F})")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite regression input")
    if ridge is None:
        ridge = DEFAULT_RIDGE_SCALE * float(np.mean(np.sum(X * X, axis=1)))
    if ridge < 0:
        raise InvalidArgument(f"ridge must be nonnegative, got {ridge}")
    offset = y[0].copy()
    rhs = y - offset
    rank_deficient = False
    if ridge > 0:
        A = np.vstack([X, np.sqrt(ridge) * np.eye(F)])
        b = np.vstack([rhs, np.zeros((F, y.shape[1]))])
        coef = np.linalg.lstsq(A, b, rcond=None)[0]
    else:
        coef, _, rank, _ = np.linalg.lstsq(X, rhs, rcond=None)
        rank_deficient = rank < F
        if rank_deficient:
            logger.info("rank-deficient regression (rank %d < %d); minimal-norm solution used", rank, F)
    return RegressionFit(coef, offset, float(ridge), rank_deficient)


def polynomial_exponents(num_vars: int, degree: int) -> np.ndarray:
    """Exponent rows of all monomials of total degree <= ``degree``, constant first."""
    rows = [np.zeros(num_vars, dtype=int)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(num_vars), deg):
            e = np.zeros(num_vars, dtype=int)
            for v in combo:
                e[v] += 1
            rows.append(e)
    return np.array(rows)


def polynomial_features(state: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    """Monomials of ``state [..., V]`` -> ``[..., F]``."""
    out = np.ones(state.shape[:-1] + (len(exponents),))
    for f, e in enumerate(exponents):
        for v, power in enumerate(e):
            if power:
                out[..., f] *= state[..., v] ** power
    return out


def _check_dimensions(spec: ModelSpec, bundle: PathBundle):
    if bundle.d != spec.d:
        raise InvalidArgument(f"bundle noise dimension {bundle.d} does not match model d={spec.d}")


def backward_solve(spec: ModelSpec, bundle: PathBundle, scheme: SchemeConfig,
                   measure_source: MeasureSource = None) -> BackwardSolution:
    """Shared recursion for the particle, limit and coupled solvers.

    With ``measure_source=None`` the measure argument of system ``s`` at step
    ``k`` is the empirical measure of its own particles' current iterate
    (interacting system); otherwise it is read from ``measure_source(k)``.
    """
    _check_dimensions(spec, bundle)
    S, n, K, d, m = bundle.M, bundle.n, bundle.K, bundle.d, spec.m
    dt = bundle.grid.dt
    nodes = bundle.grid.nodes
    flags = []
    if n == 1 and measure_source is None:
        flags.append("single-particle systems: empirical measure is a Dirac")
    if spec.lipschitz * dt >= 1.0:
        msg = f"C_f*dt = {spec.lipschitz * dt:.3g} >= 1: inner iteration may not contract"
        logger.warning(msg)
        flags.append(msg)

    W = bundle.idio_paths()
    W0 = bundle.common_paths()
    dW = bundle.idio_increments
    dW0 = bundle.common_increments
    expo = polynomial_exponents(2 * d, scheme.q)
    F = len(expo)
    # columns depending on the common noise only take at most S distinct values
    common_cols = int(np.sum(~expo[:, :d].any(axis=1))) * (1 + d)
    if S < common_cols:
        msg = (f"only {S} common paths for {common_cols} common-noise regressors: "
               "conditional expectation and Z0 are not identifiable")
        logger.warning(msg)
        flags.append(msg)

    Y = np.empty((S, n, K + 1, m))
    Z = np.empty((S, n, K, m, d))
    Z0 = np.empty((S, n, K, m, d))
    Y[:, :, K] = spec.terminal(W[:, :, K], np.broadcast_to(W0[:, None, K], (S, n, d)))
    rank_deficient_steps = []

    for k in range(K - 1, -1, -1):
        state = np.concatenate([W[:, :, k], np.broadcast_to(W0[:, None, k], (S, n, d))], axis=-1)
        phi = polynomial_features(state, expo).reshape(S * n, F)
        inc = np.concatenate([dW[:, :, k], np.broadcast_to(dW0[:, None, k], (S, n, d))],
                             axis=-1).reshape(S * n, 2 * d)
        design = np.concatenate([phi] + [phi * inc[:, [l]] for l in range(2 * d)], axis=1)
        fit = regress_conditional(design, Y[:, :, k + 1].reshape(S * n, m), scheme.ridge)
        if fit.rank_deficient:
            rank_deficient_steps.append(k)
        blocks = fit.coef.reshape(1 + 2 * d, F, m)
        cond = (fit.offset + phi @ blocks[0]).reshape(S, n, m)
        for l in range(d):
            Z[:, :, k, :, l] = (phi @ blocks[1 + l]).reshape(S, n, m)
            Z0[:, :, k, :, l] = (phi @ blocks[1 + d + l]).reshape(S, n, m)

        Yk = _inner_sweeps(spec, scheme, nodes[k], dt, cond, Z[:, :, k], Z0[:, :, k],
                           None if measure_source is None else measure_source(k))
        if not np.all(np.isfinite(Yk)):
            bad = np.argwhere(~np.isfinite(Yk))[0]
            raise NumericError(f"non-finite Y at path {bad[0]}, step {k}",
                               location={"path": int(bad[0]), "step": k})
        Y[:, :, k] = Yk

    if rank_deficient_steps:
        flags.append(f"rank-deficient regression at steps {sorted(rank_deficient_steps)}")
    return BackwardSolution(Y, Z, Z0, bundle.grid, scheme, bundle.key, bundle.replicas, flags)


def _inner_sweeps(spec, scheme, t, dt, cond, z, z0, frozen_cloud):
    """Picard sweeps ``Y <- cond + f(t, Y, z, z0, mu(Y)) dt`` seeded at ``cond``."""
    Yk = cond
    if scheme.measure_timing == "explicit":
        sweeps = scheme.J
    else:
        sweeps = scheme.fixed_point_max_iter
    for _ in range(sweeps):
        cloud = Yk if frozen_cloud is None else frozen_cloud
        new = cond + spec.driver(t, Yk, z, z0, cloud) * dt
        if scheme.measure_timing == "fixed_point" and np.max(np.abs(new - Yk), initial=0.0) <= scheme.fixed_point_tol:
            return new
        Yk = new
    return Yk


def solve_particle_system(spec: ModelSpec, bundle: PathBundle,
                          scheme: SchemeConfig | None = None) -> BackwardSolution:
    """Solve the n-particle interacting system on every system of the bundle."""
    return backward_solve(spec, bundle, scheme or SchemeConfig())
