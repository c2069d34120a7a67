"""Propagation-of-chaos rates, coupling errors and moment checks.

Monte Carlo layout: ``M`` common paths, each carrying ``R`` independent
replicas of an ``n``-particle system. ``E^0[.]`` (conditional on the common
noise) is the average over replicas of one common path, the outer ``E[.]`` the
average over common paths, and ``sup_t`` the maximum over grid nodes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import InternalError, InvalidArgument
from .limit_solver import MeasureFlow, solve_coupled_system, solve_limit_picard
from .measures import sorted_wasserstein_pp, standard_normal_atoms, w2_squared_to_gaussian
from .model import ModelSpec
from .particle_solver import solve_particle_system
from .paths import PathBundle, make_time_grid, sample_path_bundle, split_replicas
from .solution import BackwardSolution, SchemeConfig

logger = logging.getLogger(__name__)

VARIANTS = ("prop8", "thm9")


# -- rates -----------------------------------------------------------------


def theoretical_exponent(d: int, p: float, variant: str) -> float:
    """Power of ``n`` in the rate, ignoring the logarithmic factor at ``d = 4``."""
    _check_rate_args(d, p, 2, variant)
    if variant == "prop8":
        return -0.5 if d <= 4 else -2.0 / d
    return -0.5 + 1.0 / p if d <= 4 else -2.0 * (1.0 - 2.0 / p) / d


def _check_rate_args(d, p, n, variant):
    if variant not in VARIANTS:
        raise InvalidArgument(f"variant must be one of {VARIANTS}, got {variant!r}")
    if int(d) != d or d < 1:
        raise InvalidArgument(f"d must be a positive integer, got {d}")
    if n < 2:
        raise InvalidArgument(f"n must be >= 2, got {n}")
    if variant == "prop8" and not p > 4:
        raise InvalidArgument(f"the prop8 rate needs p > 4, got {p}")
    if variant == "thm9" and not p >= 2:
        raise InvalidArgument(f"the thm9 rate needs p >= 2, got {p}")


def theoretical_rate(d: int, p: float, n: int, variant: str) -> float:
    """Rate ``eps_n`` (``prop8``, sup outside ``E^0``) or ``eps~_n`` (``thm9``)."""
    _check_rate_args(d, p, n, variant)
    if variant == "prop8":
        if d < 4:
            return n**-0.5
        if d == 4:
            return n**-0.5 * math.log(n)
        return n ** (-2.0 / d)
    if d < 4:
        return n ** (-0.5 + 1.0 / p)
    if d == 4:
        return n ** (-0.5 + 1.0 / p) * math.log(1 + n) ** (1.0 - 2.0 / p)
    return n ** (-2.0 * (1.0 - 2.0 / p) / d)


def fit_rate(ns, errors) -> tuple[float, float, float]:
    """OLS of ``log(error)`` on ``log(n)``; returns ``(slope, intercept, slope_stderr)``."""
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if ns.size < 3 or ns.size != errors.size:
        raise InvalidArgument("fit_rate needs at least 3 (n, error) pairs")
    if np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        raise InvalidArgument("errors must be positive and finite for a log-log fit")
    if np.any(ns <= 0):
        raise InvalidArgument("abscissae must be positive")
    res = stats.linregress(np.log(ns), np.log(errors))
    return float(res.slope), float(res.intercept), float(res.stderr)


# -- reference laws ----------------------------------------------------------


class ReferenceLaw:
    """Stand-in for ``L^1(Y_t)`` on every (system, node) cell of a bundle.

    Either the closed-form Gaussian conditional law (quantile discretized) or
    the limit solver's reference cloud.
    """

    def __init__(self, bundle: PathBundle, spec: ModelSpec | None = None,
                 flow: MeasureFlow | None = None):
        self.replicas = bundle.replicas
        self.num_systems = bundle.M
        if spec is not None and spec.has_closed_form:
            if spec.m != 1:
                raise InvalidArgument("closed-form reference laws are scalar")
            nodes = bundle.grid.nodes
            W0 = bundle.common_paths()  # [S][K+1][d]
            mean, var = spec.closed_form.cond_law_ref(nodes[None, :], bundle.grid.T, W0)
            self.kind = "closed-form"
            self.mean = np.asarray(mean, dtype=float)
            self.std = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
            self.flow_sorted = None
        elif flow is not None:
            rows = np.arange(bundle.M) // bundle.replicas
            flow.source_for(bundle)  # validates grid and common noise
            if flow.atoms.shape[-1] != 1:
                raise InvalidArgument("reference clouds must be scalar for 1D transport")
            self.kind = "limit-cloud"
            self.flow_sorted = np.sort(flow.atoms[..., 0], axis=-1)[rows]  # [S][K+1][N]
        else:
            raise InvalidArgument("need a closed-form model or a reference flow")

    def wpp(self, solution: BackwardSolution, p: float = 2.0) -> np.ndarray:
        """``W_p^p(mu^n_t, L^1(Y_t))`` per (system, node) -> ``[S][K+1]``."""
        if solution.m != 1:
            raise InvalidArgument("transport to the reference law is implemented for m = 1")
        if solution.num_systems != self.num_systems:
            raise InvalidArgument("solution and reference have different system counts")
        x = np.sort(solution.Y[..., 0], axis=1).transpose(0, 2, 1)  # [S][K+1][n]
        if self.kind == "limit-cloud":
            return sorted_wasserstein_pp(x, self.flow_sorted, p)
        if p == 2:
            return w2_squared_to_gaussian(x, self.mean, self.std)
        z = standard_normal_atoms()
        out = np.empty(x.shape[:2])
        for s in range(x.shape[0]):
            law = self.mean[s][:, None] + self.std[s][:, None] * z[None, :]
            out[s] = sorted_wasserstein_pp(x[s], law, p)
        return out


def _orderings(cell: np.ndarray, replicas: int):
    """Both orderings of ``E``, ``E^0`` and ``sup_t`` for cell statistics ``[S][K+1]``.

    A: ``E[sup_t E^0[.]]``; B: ``E[sup_t .]``. Returns (A, stderr A, B, stderr B).
    """
    M = cell.shape[0] // replicas
    by_path = cell.reshape(M, replicas, cell.shape[1])
    a_per_path = by_path.mean(axis=1).max(axis=1)
    b_per_path = by_path.max(axis=2).mean(axis=1)
    return (float(a_per_path.mean()), _stderr(a_per_path),
            float(b_per_path.mean()), _stderr(b_per_path))


def _stderr(samples: np.ndarray) -> float:
    if samples.size < 2:
        return 0.0
    return float(samples.std(ddof=1) / math.sqrt(samples.size))


@dataclass
class RateReport:
    n_values: list
    error_a: list  # E[sup_t E^0[W_2^2]]
    error_b: list  # E[sup_t W_2^2]
    mc_stderr_a: list
    mc_stderr_b: list
    slope_a: float | None
    slope_b: float | None
    stderr_a: float | None
    stderr_b: float | None
    intercept_a: float | None
    intercept_b: float | None
    theo_prop8: list
    theo_thm9: list
    exponent_prop8: float | None
    exponent_thm9: float
    params: dict = field(default_factory=dict)
    degenerate: bool = False
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _validate_sweep(n_list, M):
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3:
        raise InvalidArgument("an n sweep needs at least 3 values")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidArgument(f"n values must be strictly increasing, got {n_list}")
    if n_list[0] < 1:
        raise InvalidArgument("n values must be positive")
    if M < 2:
        raise InvalidArgument(f"M must be >= 2, got {M}")
    return n_list


def _reference_flow(spec, grid, n_ref, M, seed, scheme, alpha, tol, max_iter):
    bundle_ref = sample_path_bundle(grid, n_ref, M, spec.d, seed, idio_stream=1)
    _, flow, trace = solve_limit_picard(spec, bundle_ref, alpha, tol, max_iter, scheme)
    return flow, trace


def _particle_bundle(grid, n, M, R, d, seed):
    return split_replicas(sample_path_bundle(grid, n * R, M, d, seed), R)


def chaos_rate_experiment(spec: ModelSpec, n_list, M: int = 32, n_ref: int = 4096, K: int = 50,
                          seed: int = 0, R: int = 4, p: float = 8.0, T: float = 1.0,
                          scheme: SchemeConfig | None = None, alpha: float | None = None,
                          tol: float = 1e-4, max_iter: int = 20) -> RateReport:
    """Distance of the particle empirical flow to the conditional law, per ``n``.

    The conditional law is the closed form when the model has one, otherwise
    the limit solver's ``n_ref``-atom cloud on the same common paths.
    """
    n_list = _validate_sweep(n_list, M)
    if not p >= 2:
        raise InvalidArgument(f"p must be >= 2, got {p}")
    if n_ref < max(n_list):
        raise InvalidArgument(f"n_ref={n_ref} is smaller than the largest n={max(n_list)}")
    scheme = scheme or SchemeConfig()
    grid = make_time_grid(T, K)
    flow = None
    flags = []
    if not spec.has_closed_form:
        flow, trace = _reference_flow(spec, grid, n_ref, M, seed, scheme, alpha, tol, max_iter)
        flags.append(f"reference: limit cloud n_ref={n_ref}, {trace.iterations} Picard iterations")
    else:
        flags.append("reference: closed-form conditional law, 2^14 quantile atoms")
    flags.append(f"measure timing: {scheme.measure_timing}")

    err_a, err_b, se_a, se_b = [], [], [], []
    for n in n_list:
        bundle = _particle_bundle(grid, n, M, R, spec.d, seed)
        sol = solve_particle_system(spec, bundle, scheme)
        cell = ReferenceLaw(bundle, spec, flow).wpp(sol, 2.0)
        a, sa, b, sb = _orderings(cell, R)
        err_a.append(a), se_a.append(sa), err_b.append(b), se_b.append(sb)
        logger.info("%s n=%d: A=%.4g B=%.4g", spec.name, n, a, b)

    d = spec.d
    prop8_ok = p > 4
    if not prop8_ok:
        flags.append(f"prop8 rate needs p > 4; columns left empty for p={p}")
    report = RateReport(
        n_values=n_list, error_a=err_a, error_b=err_b, mc_stderr_a=se_a, mc_stderr_b=se_b,
        slope_a=None, slope_b=None, stderr_a=None, stderr_b=None,
        intercept_a=None, intercept_b=None,
        theo_prop8=[theoretical_rate(d, p, n, "prop8") if prop8_ok else None for n in n_list],
        theo_thm9=[theoretical_rate(d, p, n, "thm9") for n in n_list],
        exponent_prop8=theoretical_exponent(d, p, "prop8") if prop8_ok else None,
        exponent_thm9=theoretical_exponent(d, p, "thm9"),
        params={"model": spec.name, **spec.params, "d": d, "p": p, "T": T, "K": K, "M": M,
                "R": R, "n_ref": n_ref, "seed": seed},
        flags=flags,
    )
    if min(err_a) <= 0 or min(err_b) <= 0:
        report.degenerate = True
        report.flags.append("degenerate: zero distances, slope undefined")
        return report
    report.slope_a, report.intercept_a, report.stderr_a = fit_rate(n_list, err_a)
    report.slope_b, report.intercept_b, report.stderr_b = fit_rate(n_list, err_b)
    return report


# -- coupling ----------------------------------------------------------------


@dataclass
class Lemma7Result:
    factor: float
    fraction_satisfied: float
    fraction_strict: float
    terminal_equal: bool
    slack_min: float
    slack_mean: float
    slack_quantiles: dict
    lhs: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("lhs"), out.pop("rhs")
        return out


def lemma7_check(particle: BackwardSolution, coupled: BackwardSolution, reference: ReferenceLaw,
                 lipschitz: float, T: float, p: float = 2.0) -> Lemma7Result:
    """Compare ``W_p(mu^n_t, L)`` with ``exp(T e^{C_f T}) W_p(mu~^n_t, L)`` on every cell."""
    if particle.bundle_key != coupled.bundle_key:
        raise InvalidArgument("particle and coupled solutions come from different bundles")
    lhs = reference.wpp(particle, p) ** (1.0 / p)
    rhs = reference.wpp(coupled, p) ** (1.0 / p)
    factor = math.exp(T * math.exp(lipschitz * T))
    slack = factor * rhs - lhs
    ok = lhs <= factor * rhs
    return Lemma7Result(
        factor=factor,
        fraction_satisfied=float(ok.mean()),
        fraction_strict=float((lhs < factor * rhs).mean()),
        terminal_equal=bool(np.array_equal(lhs[:, -1], rhs[:, -1])),
        slack_min=float(slack.min()),
        slack_mean=float(slack.mean()),
        slack_quantiles={str(q): float(np.quantile(slack, q)) for q in (0.01, 0.05, 0.5)},
        lhs=lhs, rhs=rhs,
    )


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return num / den


@dataclass
class CouplingRow:
    n: int
    sup_y_gap: float  # E[sup_t (1/n) sum |Y - Y~|^2]
    z_gap: float  # E[(1/n) sum int_0^T |Z - Z~|^2]
    z0_gap: float
    lhs_thm11: float  # E[sup_t (1/n) sum X^i_t]
    lhs_prop13: float  # E[sup_t E^0[(1/n) sum X^i_t]]
    per_particle_cor12: float  # E[sup_t X^0_t]
    per_particle_cor12_stderr: float
    averaged_cor12: float  # (1/n) sum_i E[sup_t X^i_t]
    per_particle_cor14: float
    w2_sup_outside: float  # E[sup_t W_2^2]
    w2_sup_inside: float  # E[sup_t E^0[W_2^2]]
    ratio_thm11: float
    ratio_prop13: float
    ratio_cor12: float
    ratio_cor14: float
    lemma7_fraction: float
    lemma7_terminal_equal: bool
    lemma7_slack_min: float


@dataclass
class CouplingReport:
    rows: list
    picard_iterations: int
    params: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def ratio_spread(self, name: str = "ratio_thm11") -> float:
        """max/min over ``n`` of a ratio column (``inf`` if some ratio is zero)."""
        vals = [getattr(r, name) for r in self.rows]
        lo = min(vals)
        if lo == 0:
            return 0.0 if max(vals) == 0 else math.inf
        return max(vals) / lo

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "picard_iterations": self.picard_iterations,
                "params": self.params, "flags": self.flags}


def coupling_statistics(particle: BackwardSolution, coupled: BackwardSolution, replicas: int):
    """Per-(system, particle, node) coupling error ``X^i_t`` ``[S][n][K+1]``.

    ``X^i_t = |Y^i_t - Y~^i_t|^2 + int_t^T |Z0 - Z0~|^2 + |Z^{ii} - Z~^i|^2 ds``
    (off-diagonal ``Z^{ik}`` are not materialized).
    """
    if particle.bundle_key != coupled.bundle_key:
        raise InternalError("coupling requires both solutions on the same bundle")
    dt = particle.grid.dt
    dy2 = np.sum((particle.Y - coupled.Y) ** 2, axis=-1)
    dz2 = np.sum((particle.Z - coupled.Z) ** 2, axis=(-2, -1))
    dz02 = np.sum((particle.Z0 - coupled.Z0) ** 2, axis=(-2, -1))
    step = (dz2 + dz02) * dt
    tail = np.zeros(dy2.shape)
    tail[..., :-1] = np.cumsum(step[..., ::-1], axis=-1)[..., ::-1]
    return dy2 + tail, dy2, dz2, dz02


def coupling_error_experiment(spec: ModelSpec, n_list, M: int = 16, K: int = 50, seed: int = 0,
                              n_ref: int = 4096, R: int = 4, T: float = 1.0,
                              scheme: SchemeConfig | None = None, alpha: float | None = None,
                              tol: float = 1e-4, max_iter: int = 20,
                              particle_index: int = 0) -> CouplingReport:
    """Particle system versus coupled system on shared noise, for each ``n``."""
    n_list = _validate_sweep(n_list, M)
    if n_ref < max(n_list):
        raise InvalidArgument(f"n_ref={n_ref} is smaller than the largest n={max(n_list)}")
    scheme = scheme or SchemeConfig()
    grid = make_time_grid(T, K)
    flow, trace = _reference_flow(spec, grid, n_ref, M, seed, scheme, alpha, tol, max_iter)
    rows = []
    for n in n_list:
        if not 0 <= particle_index < n:
            raise InvalidArgument(f"particle_index {particle_index} out of range for n={n}")
        bundle = _particle_bundle(grid, n, M, R, spec.d, seed)
        ps = solve_particle_system(spec, bundle, scheme)
        cs = solve_coupled_system(spec, bundle, flow, scheme)
        X, dy2, dz2, dz02 = coupling_statistics(ps, cs, R)
        law = ReferenceLaw(bundle, spec if spec.has_closed_form else None, flow)
        cell = law.wpp(ps, 2.0)
        w2_a, _, w2_b, _ = _orderings(cell, R)

        averaged = X.mean(axis=1)  # [S][K+1]
        lhs_prop13, _, lhs_thm11, _ = _orderings(averaged, R)
        single = X[:, particle_index, :]
        pp_a, _, pp_b, _ = _orderings(single, R)
        sup_single = single.max(axis=1)
        sup_each = X.max(axis=2)  # [S][n]
        sup_y = dy2.mean(axis=1).max(axis=1)
        l7 = lemma7_check(ps, cs, law, spec.lipschitz, T)
        rows.append(CouplingRow(
            n=n,
            sup_y_gap=float(sup_y.mean()),
            z_gap=float((dz2.mean(axis=1).sum(axis=1) * grid.dt).mean()),
            z0_gap=float((dz02.mean(axis=1).sum(axis=1) * grid.dt).mean()),
            lhs_thm11=lhs_thm11,
            lhs_prop13=lhs_prop13,
            per_particle_cor12=pp_b,
            per_particle_cor12_stderr=_stderr(sup_single),
            averaged_cor12=float(sup_each.mean()),
            per_particle_cor14=pp_a,
            w2_sup_outside=w2_b,
            w2_sup_inside=w2_a,
            ratio_thm11=_ratio(lhs_thm11, w2_b),
            ratio_prop13=_ratio(lhs_prop13, w2_a),
            ratio_cor12=_ratio(pp_b, w2_b),
            ratio_cor14=_ratio(pp_a, w2_a),
            lemma7_fraction=l7.fraction_satisfied,
            lemma7_terminal_equal=l7.terminal_equal,
            lemma7_slack_min=l7.slack_min,
        ))
        logger.info("%s coupling n=%d: thm11 ratio %.4g", spec.name, n, rows[-1].ratio_thm11)
    return CouplingReport(rows, trace.iterations,
                          {"model": spec.name, **spec.params, "d": spec.d, "T": T, "K": K, "M": M,
                           "R": R, "n_ref": n_ref, "seed": seed, "particle_index": particle_index},
                          [f"reference: {'closed-form' if spec.has_closed_form else 'limit cloud'}"])


# -- moments -----------------------------------------------------------------


@dataclass
class MomentReport:
    p: float
    sup_moment: float  # E[sup_t |Y~_t|^p]
    sup_moment_doubled: float  # same with 2*n_ref and 2*M
    sup_moment_rel_change: float
    lags: list
    increment_stats: list  # E|Y~_t - Y~_s|^p per lag
    increment_slope: float | None
    increment_oracle: list | None  # closed-form E|Y_t - Y_s|^2 when known
    product_spans: list
    product_stats: list
    product_slope: float | None
    condsup_stats: list
    condsup_slope: float | None
    lemma10_n: list
    lemma10_stats: list
    lemma10_spread: float
    degenerate: bool = False
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _sup_moment(Y: np.ndarray, p: float) -> float:
    return float(np.mean(np.max(np.sum(Y**2, axis=-1) ** (p / 2), axis=2)))


def _safe_slope(xs, ys):
    if min(ys) <= 0:
        return None
    return fit_rate(xs, ys)[0]


def moment_suite(spec: ModelSpec, p: float = 2.0, seed: int = 0, M: int = 64, n_ref: int = 256,
                 K: int = 50, T: float = 1.0, n_list=(32, 128, 512), M_lemma10: int = 16,
                 scheme: SchemeConfig | None = None, alpha: float | None = None,
                 tol: float = 1e-4, max_iter: int = 20) -> MomentReport:
    """Moment and increment statistics of the coupled solution and the particle system.

    The coupled solution on the reference bundle (frozen limit flow) plays the
    role of ``Y~``; ``E^0`` is the average over its particles.
    """
    if p < 2:
        raise InvalidArgument(f"p must be >= 2, got {p}")
    if K < 8:
        raise InvalidArgument(f"the increment fits need K >= 8, got {K}")
    scheme = scheme or SchemeConfig()
    grid = make_time_grid(T, K)
    dt = grid.dt

    def limit_solution(n, m):
        bundle = sample_path_bundle(grid, n, m, spec.d, seed, idio_stream=1)
        sol, _, _ = solve_limit_picard(spec, bundle, alpha, tol, max_iter, scheme)
        return sol

    sol = limit_solution(n_ref, M)
    sol2 = limit_solution(2 * n_ref, 2 * M)
    Y = sol.Y  # [S][n][K+1][m]
    s1, s2 = _sup_moment(Y, p), _sup_moment(sol2.Y, p)
    rel = abs(s2 - s1) / s1 if s1 > 0 else (0.0 if s2 == 0 else math.inf)

    norm = lambda a: np.sqrt(np.sum(a**2, axis=-1))  # noqa: E731
    max_lag = max(K // 4, 4)
    lags = list(range(2, max_lag + 1))
    inc = [float(np.mean(norm(Y[:, :, j:] - Y[:, :, :-j]) ** p)) for j in lags]

    half_spans = list(range(1, max(K // 8, 3) + 1))
    prod = []
    for j in half_spans:
        a = norm(Y[:, :, j:K + 1 - j] - Y[:, :, :K + 1 - 2 * j])
        b = norm(Y[:, :, 2 * j:] - Y[:, :, j:K + 1 - j])
        prod.append(float(np.mean(a**p * b**p)))

    condsup = []
    for j in lags:
        per_start = []
        for k in range(K + 1 - j):
            e0 = np.mean(np.sum((Y[:, :, k:k + j + 1] - Y[:, :, k:k + 1]) ** 2, axis=-1), axis=1)
            per_start.append(np.max(e0, axis=1) ** p)  # [S]
        condsup.append(float(np.mean(per_start)))

    oracle = None
    if spec.name == "martingale" and p == 2:
        oracle = [2.0 * spec.d * j * dt for j in lags]

    l10 = []
    for n in n_list:
        bundle = sample_path_bundle(grid, n, M_lemma10, spec.d, seed)
        ps = solve_particle_system(spec, bundle, scheme)
        y2 = np.sum(ps.Y**2, axis=-1).mean(axis=1).mean(axis=0)  # per node
        z2 = (np.sum(ps.Z**2, axis=(-2, -1)) + np.sum(ps.Z0**2, axis=(-2, -1))).mean(axis=1).sum(axis=1) * dt
        l10.append(float(y2.max() + z2.mean()))
    spread = max(l10) / min(l10) if min(l10) > 0 else (1.0 if max(l10) == 0 else math.inf)

    spans = [2 * j * dt for j in half_spans]
    hs = [j * dt for j in lags]
    degenerate = max(inc) == 0.0
    report = MomentReport(
        p=p, sup_moment=s1, sup_moment_doubled=s2, sup_moment_rel_change=rel,
        lags=hs, increment_stats=inc, increment_slope=_safe_slope(hs, inc),
        increment_oracle=oracle, product_spans=spans, product_stats=prod,
        product_slope=_safe_slope(spans, prod), condsup_stats=condsup,
        condsup_slope=_safe_slope(hs, condsup), lemma10_n=list(n_list), lemma10_stats=l10,
        lemma10_spread=spread, degenerate=degenerate,
    )
    if degenerate:
        report.flags.append("degenerate: all increment statistics are zero")
    return report
