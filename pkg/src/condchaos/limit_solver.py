"""Limit equation by outer Picard iteration over measure flows, and the coupled system."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NonConvergence
from .measures import sorted_wasserstein_pp, wasserstein_2_assignment
from .model import ModelSpec
from .particle_solver import backward_solve
from .paths import PathBundle, TimeGrid
from .solution import BackwardSolution, SchemeConfig

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class MeasureFlow:
    """Reference clouds ``atoms[P][K+1][N][m]`` for ``P`` common paths.

    ``common_increments`` records the common noise the flow was computed on,
    so a flow cannot silently be paired with a different common path set.
    """

    atoms: np.ndarray
    grid: TimeGrid
    common_increments: np.ndarray

    @property
    def num_paths(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_ref(self) -> int:
        return self.atoms.shape[2]

    @classmethod
    def from_solution(cls, solution: BackwardSolution, bundle: PathBundle) -> "MeasureFlow":
        if solution.replicas != 1:
            raise InvalidArgument("a measure flow needs one system per common path")
        return cls(solution.Y.transpose(0, 2, 1, 3).copy(), solution.grid, bundle.common_increments)

    def source_for(self, bundle: PathBundle):
        """Measure source for :func:`backward_solve` on ``bundle``."""
        if bundle.grid != self.grid:
            raise InvalidArgument(f"flow grid {self.grid} does not match bundle grid {bundle.grid}")
        R = bundle.replicas
        if bundle.M != self.num_paths * R:
            raise InvalidArgument(
                f"flow has {self.num_paths} common paths, bundle has {bundle.M // R}")
        rows = np.arange(bundle.M) // R
        if not np.array_equal(bundle.common_increments, self.common_increments[rows]):
            raise InvalidArgument("flow and bundle were generated from different common noise")

        def source(k):
            return self.atoms[rows, k]

        return source


@dataclass
class PicardTrace:
    distances: list = field(default_factory=list)
    alpha: float = 1.0
    iterations: int = 0
    converged: bool = False


def default_alpha(lipschitz: float) -> float:
    """``1 + 32 C_f^2``, i.e. ``1 + 1/eps`` with ``eps = 1/(32 C_f^2)``."""
    return 1.0 + 32.0 * lipschitz**2


def pathwise_w2_squared(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``W_2^2`` per (path, node) between clouds ``[P][K+1][N][m]``."""
    if a.shape[-1] == 1:
        return sorted_wasserstein_pp(np.sort(a[..., 0], axis=-1), np.sort(b[..., 0], axis=-1), 2.0)
    out = np.empty(a.shape[:2])
    for p in range(a.shape[0]):
        for k in range(a.shape[1]):
            out[p, k] = wasserstein_2_assignment(a[p, k], b[p, k]).value ** 2
    return out


def weighted_flow_distance(new: np.ndarray, old: np.ndarray, nodes: np.ndarray, alpha: float) -> float:
    per_node = pathwise_w2_squared(new, old).mean(axis=0)
    return float(np.max(np.exp(alpha * nodes) * per_node))


def solve_limit_picard(spec: ModelSpec, bundle_ref: PathBundle, alpha: float | None = None,
                       tol: float = 1e-4, max_iter: int = 20,
                       scheme: SchemeConfig | None = None):
    """Fixed point of the measure-flow map.

    Starting from the flow of the solve whose driver sees ``delta_0``, each
    outer iteration freezes the flow, solves the decoupled BSDE on the
    reference cloud, and takes the new empirical flow. Returns
    ``(solution, flow, trace)``.
    """
    if tol <= 0:
        raise InvalidArgument(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise InvalidArgument(f"max_iter must be >= 1, got {max_iter}")
    if bundle_ref.replicas != 1:
        raise InvalidArgument("the reference bundle must have one system per common path")
    scheme = scheme or SchemeConfig()
    alpha = default_alpha(spec.lipschitz) if alpha is None else float(alpha)
    nodes = bundle_ref.grid.nodes
    trace = PicardTrace(alpha=alpha)

    dirac = np.zeros((bundle_ref.M, 1, spec.m))
    solution = backward_solve(spec, bundle_ref, scheme, lambda k: dirac)
    flow = MeasureFlow.from_solution(solution, bundle_ref)
    for it in range(1, max_iter + 1):
        solution = backward_solve(spec, bundle_ref, scheme, flow.source_for(bundle_ref))
        new_flow = MeasureFlow.from_solution(solution, bundle_ref)
        dist = weighted_flow_distance(new_flow.atoms, flow.atoms, nodes, alpha)
        trace.distances.append(dist)
        trace.iterations = it
        flow = new_flow
        logger.debug("picard iteration %d: D = %.6g", it, dist)
        if dist <= tol:
            trace.converged = True
            return solution, flow, trace
    raise NonConvergence(f"outer Picard iteration did not reach tol={tol} in {max_iter} iterations "
                         f"(last D = {trace.distances[-1]:.3g})", trace)


def solve_coupled_system(spec: ModelSpec, bundle: PathBundle, flow: MeasureFlow,
                         scheme: SchemeConfig | None = None) -> BackwardSolution:
    """Conditionally i.i.d. particles driven by the frozen limit flow.

    Uses the bundle's own increments, so passing the particle-system bundle
    couples the two solutions on identical noise.
    """
    return backward_solve(spec, bundle, scheme or SchemeConfig(), flow.source_for(bundle))


def contraction_diagnostics(trace: PicardTrace, lipschitz: float) -> dict:
    D = list(trace.distances)
    ratios = [D[i + 1] / D[i] if D[i] > 0 else 0.0 for i in range(len(D) - 1)]
    flags = []
    if not D or D[0] == 0.0 or len(D) == 1:
        flags.append("converged immediately")
    if lipschitz == 0:
        flags.append("degenerate: C_f = 0, no constraint on alpha")
        eps = float("inf")
        alpha_required = 1.0
    else:
        eps = 1.0 / (32.0 * lipschitz**2)
        alpha_required = 1.0 + 1.0 / eps
    return {
        "ratios": ratios,
        "alpha": trace.alpha,
        "epsilon": eps,
        "alpha_required": alpha_required,
        "alpha_ok": trace.alpha >= alpha_required * (1 - 1e-12),
        "contraction_constant": 16.0 * lipschitz**2 * eps if lipschitz else 0.0,
        "all_ratios_below_one": all(r < 1 for r in ratios),
        "iterations": trace.iterations,
        "converged": trace.converged,
        "flags": flags,
    }
