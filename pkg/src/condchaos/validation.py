"""Fast invariant checks run by ``condchaos validate``."""

from __future__ import annotations

import itertools
import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .chaos_lab import ReferenceLaw, chaos_rate_experiment, lemma7_check, theoretical_rate
from .limit_solver import contraction_diagnostics, solve_coupled_system, solve_limit_picard
from .measures import coupling_upper_bound, wasserstein_p_1d
from .model import closed_form_reference, make_model
from .particle_solver import solve_particle_system
from .paths import dump_bundle, load_bundle, make_time_grid, sample_path_bundle

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _zero_exactness(seed):
    spec = make_model("zero", c=1.5)
    grid = make_time_grid(1.0, 10)
    bundle = sample_path_bundle(grid, 16, 8, 1, seed)
    ps = solve_particle_system(spec, bundle)
    ls, flow, _ = solve_limit_picard(spec, sample_path_bundle(grid, 16, 8, 1, seed, idio_stream=1))
    cs = solve_coupled_system(spec, bundle, flow)
    ok = all(np.all(s.Y == 1.5) and not np.any(s.Z) and not np.any(s.Z0) for s in (ps, ls, cs))
    same = np.array_equal(ps.Y, cs.Y) and np.array_equal(ps.Z0, cs.Z0)
    return ok and same, "Y == c and Z == Z0 == 0 for all solvers; particle == coupled bitwise"


def _martingale_accuracy(seed):
    spec = make_model("martingale")
    bundle = sample_path_bundle(make_time_grid(1.0, 20), 200, 8, 1, seed)
    sol = solve_particle_system(spec, bundle)
    ref = closed_form_reference(spec, bundle)
    err = float(np.max(np.abs(sol.Y - ref.Y)))
    return err <= 1e-6, f"max |Y - (W + W0)| = {err:.3g}"


def _sorted_equals_assignment(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 6))
        x, y = rng.normal(size=n), rng.normal(size=n)
        brute = min(np.mean((x - y[list(perm)]) ** 2) for perm in itertools.permutations(range(n)))
        worst = max(worst, abs(wasserstein_p_1d(x, y).value ** 2 - brute))
    return worst <= 1e-12, f"max |sorted - exhaustive| = {worst:.3g}"


def _coupling_bound(seed):
    rng = np.random.default_rng(seed)
    ok = True
    for m in (1, 2):
        x, y = rng.normal(size=(30, m)), rng.normal(size=(30, m))
        w2sq, paired = coupling_upper_bound(x, y)
        ok &= w2sq <= paired
    return bool(ok), "W_2^2 <= mean paired squared distance"


def _rate_monotone(seed):
    ok = all(theoretical_rate(d, p, n + 1, v) < theoretical_rate(d, p, n, v)
             for d in (1, 4, 5) for p in (5.0, 8.0) for v in ("prop8", "thm9")
             for n in (8, 10, 1000))
    return ok, "theoretical rates strictly decrease in n for n >= 8"


def _ordering_consistency(seed):
    rep = chaos_rate_experiment(make_model("martingale"), [8, 16, 32], M=8, n_ref=32, K=10,
                                seed=seed, R=2)
    ok = all(b >= a for a, b in zip(rep.error_a, rep.error_b))
    return ok, "ordering B >= ordering A for every n"


def _picard_and_lemma7(seed):
    spec = make_model("linear_mean")
    grid = make_time_grid(1.0, 10)
    _, flow, trace = solve_limit_picard(spec, sample_path_bundle(grid, 64, 8, 1, seed, idio_stream=1))
    diag = contraction_diagnostics(trace, spec.lipschitz)
    bundle = sample_path_bundle(grid, 32, 8, 1, seed)
    ps = solve_particle_system(spec, bundle)
    cs = solve_coupled_system(spec, bundle, flow)
    l7 = lemma7_check(ps, cs, ReferenceLaw(bundle, spec), spec.lipschitz, grid.T)
    ok = diag["all_ratios_below_one"] and trace.converged and l7.terminal_equal
    return ok, f"Picard ratios {['%.3g' % r for r in diag['ratios']]}, terminal equality {l7.terminal_equal}"


def _bundle_roundtrip(seed):
    bundle = sample_path_bundle(make_time_grid(0.5, 5), 3, 2, 2, seed)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bundle.bin")
        dump_bundle(bundle, path)
        back = load_bundle(path)
    ok = (np.array_equal(back.common_increments, bundle.common_increments)
          and np.array_equal(back.idio_increments, bundle.idio_increments) and back.key == bundle.key)
    return ok, "dump/load reproduces increments and key"


def _determinism(seed):
    spec = make_model("w2_interaction")
    grid = make_time_grid(1.0, 8)
    a = solve_particle_system(spec, sample_path_bundle(grid, 20, 8, 1, seed))
    b = solve_particle_system(spec, sample_path_bundle(grid, 20, 8, 1, seed))
    return np.array_equal(a.Y, b.Y) and np.array_equal(a.Z, b.Z), "identical seeds give identical solutions"


CHECKS = {
    "zero_model_exactness": _zero_exactness,
    "martingale_closed_form": _martingale_accuracy,
    "sorted_w2_equals_assignment": _sorted_equals_assignment,
    "coupling_upper_bound": _coupling_bound,
    "theoretical_rate_decreasing": _rate_monotone,
    "ordering_consistency": _ordering_consistency,
    "picard_contraction_and_lemma7_terminal": _picard_and_lemma7,
    "bundle_dump_roundtrip": _bundle_roundtrip,
    "determinism": _determinism,
}


def run_validation(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, check in CHECKS.items():
        try:
            passed, detail = check(seed)
        except Exception as exc:  # a crashing check is a failing check
            logger.exception("check %s raised", name)
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail))
    return results
