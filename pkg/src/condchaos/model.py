"""Conditional mean-field BSDE instances.

Drivers are vectorized. They receive

* ``t``: float
* ``y``: ``[S][n][m]``, ``z`` and ``z0``: ``[S][n][m][d]``
* ``cloud``: ``[S][N][m]``, the atoms of the measure argument for each system

and return ``[S][n][m]``. They may only look at ``cloud`` through
functionals that are Lipschitz in ``W_2`` (mean, distance to a Dirac, ...).
Terminal maps take the idiosyncratic and common endpoints ``[..., d]`` and
return ``[..., m]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgument, NumericError, UnsupportedModel
from .measures import EmpiricalMeasure, wasserstein_2
from .paths import PathBundle
from .solution import BackwardSolution


@dataclass(frozen=True)
class ClosedFormSolution:
    """Reference solution; all callables are vectorized over leading axes.

    ``y_ref(t, T, w, w0)``, ``z_ref(t, T, w, w0)`` and ``z0_ref(t, T, w, w0)``
    take path values ``[..., d]``; ``cond_law_ref(t, T, w0)`` returns the mean
    and variance of the scalar conditional law given the common path value.
    """

    y_ref: Callable
    z_ref: Callable
    z0_ref: Callable
    cond_law_ref: Callable


@dataclass(frozen=True)
class ModelSpec:
    name: str
    m: int
    d: int
    driver: Callable
    terminal: Callable
    lipschitz: float
    params: dict = field(default_factory=dict)
    closed_form: ClosedFormSolution | None = None
    ignores_measure: bool = False

    def __post_init__(self):
        if self.lipschitz < 0:
            raise InvalidArgument(f"declared Lipschitz constant must be >= 0, got {self.lipschitz}")
        if self.m < 1 or self.d < 1:
            raise InvalidArgument("dimensions m and d must be >= 1")

    @property
    def has_closed_form(self) -> bool:
        return self.closed_form is not None


def eval_driver(spec: ModelSpec, t: float, y, z, z0, mu) -> np.ndarray:
    """Evaluate the driver at a single point ``(t, y, z, z0, mu)``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    if y.shape != (spec.m,):
        raise InvalidArgument(f"y must have shape ({spec.m},), got {y.shape}")
    try:
        z = z.reshape(spec.m, spec.d)
        z0 = z0.reshape(spec.m, spec.d)
    except ValueError as exc:
        raise InvalidArgument(f"z and z0 must have {spec.m}x{spec.d} entries") from exc
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    if mu.m != spec.m:
        raise InvalidArgument(f"measure lives in R^{mu.m}, model state is R^{spec.m}")
    out = spec.driver(float(t), y[None, None], z[None, None], z0[None, None], mu.points[None])
    out = np.asarray(out, dtype=float).reshape(spec.m)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"driver of {spec.name!r} is not finite at t={t}", location={"t": t})
    return out


# -- zoo -------------------------------------------------------------------


def _zeros_like_y(t, y, z, z0, cloud):
    return np.zeros_like(y)


def zero_model(c: float = 0.0, d: int = 1) -> ModelSpec:
    """``f = 0``, ``xi = c``: the solution is the constant ``c``."""
    c = float(c)

    def terminal(w, w0):
        return np.full(np.shape(w)[:-1] + (1,), c)

    closed = ClosedFormSolution(
        y_ref=lambda t, T, w, w0: np.full(np.shape(w)[:-1] + (1,), c),
        z_ref=lambda t, T, w, w0: np.zeros(np.shape(w)[:-1] + (1, d)),
        z0_ref=lambda t, T, w, w0: np.zeros(np.shape(w)[:-1] + (1, d)),
        cond_law_ref=lambda t, T, w0: (np.full(np.shape(w0)[:-1], c), np.zeros(np.shape(w0)[:-1])),
    )
    return ModelSpec("zero", 1, d, _zeros_like_y, terminal, 0.0, {"c": c}, closed, ignores_measure=True)


def martingale_model(d: int = 1) -> ModelSpec:
    """``f = 0``, ``xi = sum(W_T) + sum(W0_T)``: ``Y_t = sum(W_t) + sum(W0_t)``."""

    def terminal(w, w0):
        return (np.sum(w, axis=-1) + np.sum(w0, axis=-1))[..., None]

    closed = ClosedFormSolution(
        y_ref=lambda t, T, w, w0: terminal(w, w0),
        z_ref=lambda t, T, w, w0: np.ones(np.shape(w)[:-1] + (1, d)),
        z0_ref=lambda t, T, w, w0: np.ones(np.shape(w)[:-1] + (1, d)),
        cond_law_ref=lambda t, T, w0: (np.sum(w0, axis=-1), np.full(np.shape(w0)[:-1], d * t)),
    )
    return ModelSpec("martingale", 1, d, _zeros_like_y, terminal, 0.0, {}, closed, ignores_measure=True)


def linear_mean_model(a: float = 0.5, c: float = 1.0, d: int = 1) -> ModelSpec:
    """``f = a * mean(mu)``, ``xi = sum(W_T) + c + sum(W0_T)``.

    ``Y_t = sum(W_t) + exp(a (T - t)) (c + sum(W0_t))``, ``Z = 1``,
    ``Z0_t = exp(a (T - t))``.
    """
    a, c = float(a), float(c)

    def driver(t, y, z, z0, cloud):
        return np.broadcast_to(a * cloud.mean(axis=-2, keepdims=True), y.shape).copy()

    def terminal(w, w0):
        return (np.sum(w, axis=-1) + (c + np.sum(w0, axis=-1)))[..., None]

    def growth(t, T):
        return np.exp(a * (T - t))

    closed = ClosedFormSolution(
        y_ref=lambda t, T, w, w0: (np.sum(w, axis=-1) + growth(t, T) * (c + np.sum(w0, axis=-1)))[..., None],
        z_ref=lambda t, T, w, w0: np.ones(np.shape(w)[:-1] + (1, d)),
        z0_ref=lambda t, T, w, w0: np.full(np.shape(w)[:-1] + (1, d), growth(t, T)),
        cond_law_ref=lambda t, T, w0: (growth(t, T) * (c + np.sum(w0, axis=-1)),
                                       np.full(np.shape(w0)[:-1], d * t)),
    )
    return ModelSpec("linear_mean", 1, d, driver, terminal, abs(a), {"a": a, "c": c}, closed)


def w2_interaction_model(b: float = 0.5, c: float = 0.0, d: int = 1) -> ModelSpec:
    """``f = b * W_2(mu, delta_0)``, ``xi = sum(W_T) + c + sum(W0_T)``; no closed form."""
    b, c = float(b), float(c)

    def driver(t, y, z, z0, cloud):
        rms = np.sqrt(np.mean(np.sum(cloud**2, axis=-1), axis=-1))
        return np.broadcast_to(b * rms[:, None, None], y.shape).copy()

    def terminal(w, w0):
        return (np.sum(w, axis=-1) + (c + np.sum(w0, axis=-1)))[..., None]

    return ModelSpec("w2_interaction", 1, d, driver, terminal, abs(b), {"b": b, "c": c})


ZOO = {
    "zero": zero_model,
    "martingale": martingale_model,
    "linear_mean": linear_mean_model,
    "w2_interaction": w2_interaction_model,
}


def make_model(name: str, **params) -> ModelSpec:
    try:
        factory = ZOO[name]
    except KeyError:
        raise InvalidArgument(f"unknown model {name!r}; choose from {sorted(ZOO)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise InvalidArgument(f"bad parameters for model {name!r}: {exc}") from None


# -- checks ----------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzProbe:
    estimate: float
    declared: float
    violated: bool
    witness: tuple  # ((t, y, z, z0, mu_points), (t, y', z', z0', nu_points))


def lipschitz_probe(spec: ModelSpec, num_samples: int = 2000, seed: int = 0,
                    atoms: int = 4) -> LipschitzProbe:
    """Largest sampled difference quotient of the driver.

    Half of the sampled pairs perturb a single argument (translated clouds for
    the measure), which is where the supremum of most drivers is attained.
    """
    if num_samples < 2:
        raise InvalidArgument("num_samples must be >= 2")
    rng = np.random.default_rng(seed)
    m, d = spec.m, spec.d
    best, witness = 0.0, None
    for s in range(num_samples):
        t = float(rng.uniform())
        y, z, z0 = rng.normal(size=m), rng.normal(size=(m, d)), rng.normal(size=(m, d))
        mu = rng.normal(size=(atoms, m)) * rng.uniform(0.1, 3.0)
        y2, z2, z02, nu = y.copy(), z.copy(), z0.copy(), mu.copy()
        which = s % 5 if s % 2 == 0 else None
        scale = 10.0 ** rng.uniform(-3, 0.5)
        if which == 0:
            y2 = y + scale * rng.normal(size=m)
        elif which == 1:
            z2 = z + scale * rng.normal(size=(m, d))
        elif which == 2:
            z02 = z0 + scale * rng.normal(size=(m, d))
        elif which == 3:
            nu = mu + scale * rng.normal(size=m)
        elif which == 4:
            nu = mu * (1.0 + scale)
        else:
            y2 = rng.normal(size=m)
            z2 = rng.normal(size=(m, d))
            z02 = rng.normal(size=(m, d))
            nu = rng.normal(size=(atoms, m)) * rng.uniform(0.1, 3.0)
        denom = (np.linalg.norm(y - y2) + np.linalg.norm(z - z2) + np.linalg.norm(z0 - z02)
                 + wasserstein_2(mu, nu))
        if denom <= 1e-12:
            continue
        num = np.linalg.norm(eval_driver(spec, t, y, z, z0, mu) - eval_driver(spec, t, y2, z2, z02, nu))
        q = float(num / denom)
        if q > best:
            best = q
            witness = ((t, y, z, z0, mu), (t, y2, z2, z02, nu))
    violated = best > spec.lipschitz * (1.0 + 1e-9)
    return LipschitzProbe(best, spec.lipschitz, violated, witness)


def driver_origin_energy(spec: ModelSpec, grid) -> float:
    """``(1/K) sum_k |f(t_k, 0, 0, 0, delta_0)|^2``."""
    origin = EmpiricalMeasure.dirac(spec.m)
    vals = [eval_driver(spec, t, np.zeros(spec.m), np.zeros((spec.m, spec.d)),
                        np.zeros((spec.m, spec.d)), origin) for t in grid.nodes[:-1]]
    return float(np.mean(np.sum(np.square(vals), axis=-1)))


def closed_form_reference(spec: ModelSpec, bundle: PathBundle) -> BackwardSolution:
    """Evaluate the zoo model's closed-form solution on every path of the bundle."""
    if not spec.has_closed_form:
        raise UnsupportedModel(f"model {spec.name!r} has no closed-form solution")
    if bundle.d != spec.d:
        raise InvalidArgument(f"bundle dimension {bundle.d} does not match model d={spec.d}")
    cf = spec.closed_form
    T = bundle.grid.T
    nodes = bundle.grid.nodes
    w = bundle.idio_paths()  # [S][n][K+1][d]
    w0 = np.broadcast_to(bundle.common_paths()[:, None], w.shape)
    Y = np.empty(w.shape[:-1] + (spec.m,))
    Z = np.empty((bundle.M, bundle.n, bundle.K, spec.m, spec.d))
    Z0 = np.empty_like(Z)
    for k, t in enumerate(nodes):
        Y[:, :, k] = cf.y_ref(t, T, w[:, :, k], w0[:, :, k])
        if k < bundle.K:
            Z[:, :, k] = cf.z_ref(t, T, w[:, :, k], w0[:, :, k])
            Z0[:, :, k] = cf.z0_ref(t, T, w[:, :, k], w0[:, :, k])
    return BackwardSolution(Y, Z, Z0, bundle.grid, None, bundle.key, bundle.replicas)
