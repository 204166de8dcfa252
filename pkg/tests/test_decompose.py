import numpy as np
import pytest

from hjopt import (
    ConvergenceError,
    GridGraph,
    ParameterError,
    as_signal,
    decompose,
    dual_ball_membership,
    solve_s1,
    solve_s2,
)
from hjopt.core import edge_arrays
from hjopt.verify import alternating_decomposition_oracle


def synthetic_image(rng, rows, cols):
    yy, xx = np.mgrid[0:rows, 0:cols]
    cartoon = 0.2 + 0.6 * (np.hypot(yy - rows / 2, xx - cols / 2) < rows / 3)
    stripes = 0.08 * np.sign(np.sin(2 * np.pi * xx / 4.0))
    noise = 0.04 * rng.normal(size=(rows, cols))
    return as_signal(np.clip(cartoon + stripes + noise, 0, 1))


def full_objective(x, graph, t1, t2, u1, u2):
    """Objective of the combined model with the min of the two texture terms."""
    ei, ej, w, _ = edge_arrays(graph)
    v = x.values - u1 - u2
    tv = float(w @ np.abs(v[ei] - v[ej]))
    texture = float(np.abs(u1).sum())
    if dual_ball_membership(as_signal(u1 / t1), graph):
        texture = 0.0  # the indicator branch of the min is free
    return tv + texture + float(u2 @ u2) / (2 * t2)


class TestSolveS1:
    def test_constant_signal_is_free(self):
        graph = GridGraph.chain(4)
        x = as_signal([0.5, 0.5, 0.5, 0.5])
        value, u1, u2, report = solve_s1(x, graph, 0.05, 0.01)
        assert value == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(u1.values, 0.0, atol=1e-10)
        assert np.allclose(u2.values, 0.0, atol=1e-10)
        assert report.converged

    def test_matches_alternating_oracle_on_a_chain(self):
        graph = GridGraph.chain(4)
        x = as_signal([0.0, 0.0, 1.0, 1.0])
        value, _, _, _ = solve_s1(x, graph, 0.05, 0.01)
        oracle = alternating_decomposition_oracle(x, graph, 1, 0.05, 0.01)
        assert value == pytest.approx(oracle, abs=1e-4)

    def test_texture_is_ball_feasible(self, rng):
        graph = GridGraph.grid(4, 4)
        x = synthetic_image(rng, 4, 4)
        t1 = 0.06
        _, u1, _, _ = solve_s1(x, graph, t1, 0.02)
        assert dual_ball_membership(as_signal(u1.values / t1), graph)

    def test_objective_monotone_within_inner_tolerance(self, rng):
        graph = GridGraph.grid(4, 4)
        x = synthetic_image(rng, 4, 4)
        _, _, _, report = solve_s1(x, graph, 0.05, 0.02)
        assert report.max_objective_increase <= 50 * 1e-8

    def test_rejects_nonpositive_times(self):
        x = as_signal([0.0, 1.0])
        with pytest.raises(ParameterError):
            solve_s1(x, GridGraph.chain(2), 0.0, 0.1)
        with pytest.raises(ParameterError):
            solve_s2(x, GridGraph.chain(2), -1.0)

    def test_nonconvergence_raises(self, rng):
        graph = GridGraph.grid(4, 4)
        x = synthetic_image(rng, 4, 4)
        with pytest.raises(ConvergenceError):
            solve_s1(x, graph, 0.05, 0.02, max_iter=3)


class TestSolveS2:
    def test_zero_signal_is_free(self):
        graph = GridGraph.chain(4)
        x = as_signal(np.zeros(4))
        value, u1, u2, _ = solve_s2(x, graph, 0.01)
        assert value == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(u1.values, 0.0, atol=1e-12)
        assert np.allclose(u2.values, 0.0, atol=1e-12)

    def test_matches_alternating_oracle_on_a_chain(self):
        graph = GridGraph.chain(4)
        x = as_signal([0.0, 0.0, 1.0, 1.0])
        value, _, _, _ = solve_s2(x, graph, 0.01)
        oracle = alternating_decomposition_oracle(x, graph, 2, 0.05, 0.01)
        assert value == pytest.approx(oracle, abs=1e-4)


class TestDecompose:
    def test_components_always_rebuild_the_input(self, rng):
        graph = GridGraph.grid(4, 4)
        x = synthetic_image(rng, 4, 4)
        res = decompose(x, graph, 0.06, 0.02)
        rebuilt = res.geometry.values + res.texture.values + res.noise.values
        assert np.array_equal(rebuilt, x.values)

    def test_winner_follows_the_smaller_value(self, rng):
        graph = GridGraph.grid(4, 4)
        x = synthetic_image(rng, 4, 4)
        res = decompose(x, graph, 0.06, 0.02)
        if res.winner == "1":
            assert res.s1 < res.s2
        elif res.winner == "2":
            assert res.s2 < res.s1
        else:
            assert res.s1 == pytest.approx(res.s2, rel=1e-9, abs=1e-12)

    def test_tied_instance_reports_both(self):
        # a constant image is free for both programs
        graph = GridGraph.chain(4)
        x = as_signal([0.25, 0.25, 0.25, 0.25])
        res = decompose(x, graph, 0.05, 0.01)
        assert res.winner == "both"
        assert res.s1 == pytest.approx(0.0, abs=1e-12)
        assert res.s2 == pytest.approx(0.0, abs=1e-12)

    def test_min_value_bounds_random_feasible_points(self, rng):
        graph = GridGraph.grid(3, 3)
        x = synthetic_image(rng, 3, 3)
        t1, t2 = 0.06, 0.02
        res = decompose(x, graph, t1, t2)
        best = min(res.s1, res.s2)
        for _ in range(100):
            u1 = rng.normal(0, 0.3, x.n)
            u2 = rng.normal(0, 0.1, x.n)
            assert best <= full_objective(x, graph, t1, t2, u1, u2) + 1e-9

    def test_synthetic_image_matches_independent_subproblem_oracles(self, rng):
        graph = GridGraph.grid(8, 8)
        x = synthetic_image(rng, 8, 8)
        t1, t2 = 0.05, 0.01
        res = decompose(x, graph, t1, t2)
        o1 = alternating_decomposition_oracle(x, graph, 1, t1, t2)
        o2 = alternating_decomposition_oracle(x, graph, 2, t1, t2)
        assert res.s1 == pytest.approx(o1, abs=1e-4)
        assert res.s2 == pytest.approx(o2, abs=1e-4)
        expected_winner = "1" if o1 < o2 - 1e-9 else ("2" if o2 < o1 - 1e-9 else "both")
        assert res.winner == expected_winner

    def test_solver_report_carries_residuals(self, rng):
        graph = GridGraph.grid(3, 3)
        x = synthetic_image(rng, 3, 3)
        res = decompose(x, graph, 0.06, 0.02)
        for key in ("s1", "s2"):
            report = res.solver_report[key]
            assert report.converged
            assert report.relative_change <= 1e-8
            assert report.iterations >= 1
