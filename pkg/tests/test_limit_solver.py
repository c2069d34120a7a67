import numpy as np
import pytest

from condchaos.errors import InvalidArgument, NonConvergence
from condchaos.limit_solver import (MeasureFlow, contraction_diagnostics, default_alpha,
                                    solve_coupled_system, solve_limit_picard,
                                    weighted_flow_distance)
from condchaos.model import closed_form_reference, make_model
from condchaos.particle_solver import backward_solve, solve_particle_system
from condchaos.paths import make_time_grid, sample_path_bundle, split_replicas
from condchaos.solution import SchemeConfig

GRID = make_time_grid(1.0, 50)


@pytest.fixture(scope="module")
def linear_mean_limit():
    spec = make_model("linear_mean", a=0.5, c=1.0)
    bundle_ref = sample_path_bundle(GRID, 1000, 8, 1, seed=0, idio_stream=1)
    sol, flow, trace = solve_limit_picard(spec, bundle_ref)
    return spec, bundle_ref, sol, flow, trace


def test_zero_model_converges_in_one_iteration():
    spec = make_model("zero", c=1.0)
    bundle = sample_path_bundle(make_time_grid(1.0, 10), 50, 8, 1, seed=0, idio_stream=1)
    sol, flow, trace = solve_limit_picard(spec, bundle)
    assert trace.distances == [0.0] and trace.iterations == 1 and trace.converged
    assert np.all(sol.Y == 1.0)
    diag = contraction_diagnostics(trace, spec.lipschitz)
    assert diag["ratios"] == []
    assert "converged immediately" in diag["flags"]
    assert any("degenerate" in f for f in diag["flags"])
    assert diag["epsilon"] == float("inf") and diag["alpha_required"] == 1.0


def test_martingale_limit_matches_closed_form():
    spec = make_model("martingale")
    bundle = sample_path_bundle(GRID, 1000, 8, 1, seed=1, idio_stream=1)
    sol, _, trace = solve_limit_picard(spec, bundle)
    ref = closed_form_reference(spec, bundle)
    assert np.max(np.mean(np.abs(sol.Y - ref.Y), axis=(0, 1, 3))) <= 0.05
    assert trace.iterations == 1


def test_linear_mean_geometric_decrease(linear_mean_limit):
    spec, _, _, _, trace = linear_mean_limit
    assert trace.converged and trace.iterations <= 10
    D = trace.distances
    assert all(D[i + 1] / D[i] <= 0.9 for i in range(len(D) - 1))
    diag = contraction_diagnostics(trace, spec.lipschitz)
    assert diag["alpha"] == default_alpha(0.5) == 9.0
    assert diag["alpha_ok"] and diag["all_ratios_below_one"]
    assert diag["contraction_constant"] == pytest.approx(0.5)


def test_linear_mean_limit_and_coupled_match_closed_form(linear_mean_limit):
    spec, bundle_ref, sol, flow, _ = linear_mean_limit
    ref = closed_form_reference(spec, bundle_ref)
    assert np.max(np.mean(np.abs(sol.Y - ref.Y), axis=(0, 1, 3))) <= 0.05
    bundle = sample_path_bundle(GRID, 200, 8, 1, seed=0)
    coupled = solve_coupled_system(spec, bundle, flow)
    ref_c = closed_form_reference(spec, bundle)
    assert np.max(np.mean(np.abs(coupled.Y - ref_c.Y), axis=(0, 1, 3))) <= 0.05


def test_fixed_point_consistency(linear_mean_limit):
    spec, bundle_ref, _, flow, trace = linear_mean_limit
    again = backward_solve(spec, bundle_ref, SchemeConfig(), flow.source_for(bundle_ref))
    new = MeasureFlow.from_solution(again, bundle_ref)
    assert weighted_flow_distance(new.atoms, flow.atoms, GRID.nodes, trace.alpha) <= 1e-4


def test_coupled_particles_conditionally_independent(linear_mean_limit):
    spec, bundle_ref, sol, _, _ = linear_mean_limit
    k = GRID.K // 2
    for m in range(bundle_ref.M):
        y = sol.Y[m, :, k, 0] - sol.Y[m, :, k, 0].mean()
        lag1 = np.dot(y[:-1], y[1:]) / np.dot(y, y)
        assert abs(lag1) <= 4 / np.sqrt(bundle_ref.n)


def test_zero_and_martingale_coupled_bit_identical_to_particle():
    grid = make_time_grid(1.0, 20)
    for name in ("zero", "martingale"):
        spec = make_model(name)
        _, flow, _ = solve_limit_picard(spec, sample_path_bundle(grid, 64, 8, 1, seed=2, idio_stream=1))
        bundle = sample_path_bundle(grid, 32, 8, 1, seed=2)
        p = solve_particle_system(spec, bundle)
        c = solve_coupled_system(spec, bundle, flow)
        assert np.array_equal(p.Y, c.Y) and np.array_equal(p.Z, c.Z) and np.array_equal(p.Z0, c.Z0)


def test_replicated_bundle_maps_to_flow_paths():
    grid = make_time_grid(1.0, 10)
    spec = make_model("linear_mean")
    _, flow, _ = solve_limit_picard(spec, sample_path_bundle(grid, 64, 8, 1, seed=3, idio_stream=1))
    bundle = split_replicas(sample_path_bundle(grid, 40, 8, 1, seed=3), 4)
    assert solve_coupled_system(spec, bundle, flow).num_systems == 32


def test_flow_mismatches_rejected():
    spec = make_model("linear_mean")
    grid = make_time_grid(1.0, 10)
    _, flow, _ = solve_limit_picard(spec, sample_path_bundle(grid, 32, 8, 1, seed=0, idio_stream=1))
    with pytest.raises(InvalidArgument):
        solve_coupled_system(spec, sample_path_bundle(make_time_grid(1.0, 12), 16, 8, 1, seed=0), flow)
    with pytest.raises(InvalidArgument):
        solve_coupled_system(spec, sample_path_bundle(grid, 16, 9, 1, seed=0), flow)
    with pytest.raises(InvalidArgument):
        solve_coupled_system(spec, sample_path_bundle(grid, 16, 8, 1, seed=1), flow)


def test_non_convergence_carries_trace():
    spec = make_model("linear_mean")
    bundle = sample_path_bundle(make_time_grid(1.0, 10), 32, 8, 1, seed=0, idio_stream=1)
    with pytest.raises(NonConvergence) as info:
        solve_limit_picard(spec, bundle, tol=1e-30, max_iter=2)
    assert len(info.value.trace.distances) == 2 and not info.value.trace.converged


def test_picard_argument_checks():
    spec = make_model("zero")
    bundle = sample_path_bundle(make_time_grid(1.0, 4), 8, 8, 1, seed=0)
    with pytest.raises(InvalidArgument):
        solve_limit_picard(spec, bundle, tol=0.0)
    with pytest.raises(InvalidArgument):
        solve_limit_picard(spec, bundle, max_iter=0)
    with pytest.raises(InvalidArgument):
        solve_limit_picard(spec, split_replicas(bundle, 2))
