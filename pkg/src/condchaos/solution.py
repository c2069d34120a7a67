"""Containers produced by every backward solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .measures import EmpiricalMeasure
from .paths import TimeGrid

TIMINGS = ("explicit", "fixed_point")


@dataclass(frozen=True)
class SchemeConfig:
    """Discretization knobs for the regression backward scheme.

    ``measure_timing='explicit'`` evaluates the measure argument from the
    previous inner iterate (``J`` sweeps exactly); ``'fixed_point'`` keeps
    sweeping until the step-``k`` values stop moving, so the measure and the
    values are solved simultaneously.
    """

    q: int = 2
    J: int = 2
    ridge: float | None = None  # None -> 1e-8 * mean squared feature norm
    measure_timing: str = "explicit"
    fixed_point_tol: float = 1e-13
    fixed_point_max_iter: int = 200

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise InvalidArgument(f"basis degree q must be a positive integer, got {self.q}")
        if int(self.J) != self.J or self.J < 1:
            raise InvalidArgument(f"inner iterations J must be a positive integer, got {self.J}")
        if self.ridge is not None and (not np.isfinite(self.ridge) or self.ridge < 0):
            raise InvalidArgument(f"ridge must be nonnegative, got {self.ridge}")
        if self.measure_timing not in TIMINGS:
            raise InvalidArgument(f"measure_timing must be one of {TIMINGS}, got {self.measure_timing!r}")


@dataclass(eq=False)
class BackwardSolution:
    """Arrays indexed by (system, particle, time step).

    A "system" is one common path, or one idiosyncratic replica of a common
    path when the bundle was split; ``replicas`` systems in a row share the
    same common path.

    Shapes: ``Y [S][n][K+1][m]``, ``Z`` and ``Z0`` ``[S][n][K][m][d]``.
    """

    Y: np.ndarray
    Z: np.ndarray
    Z0: np.ndarray
    grid: TimeGrid
    scheme: SchemeConfig | None
    bundle_key: tuple
    replicas: int = 1
    flags: list = field(default_factory=list)

    @property
    def num_systems(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[3]


def empirical_flow(solution: BackwardSolution, path: int) -> list[EmpiricalMeasure]:
    """Empirical measure of the particles of one system at every node."""
    if not 0 <= path < solution.num_systems:
        raise InvalidArgument(f"path index {path} out of range [0, {solution.num_systems})")
    return [EmpiricalMeasure(solution.Y[path, :, k, :]) for k in range(solution.grid.num_nodes)]
