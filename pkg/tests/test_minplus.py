import numpy as np
import pytest

from hjopt import (
    EnumerationCapError,
    GridGraph,
    L1,
    ParameterError,
    Quadratic,
    QuadraticConjugate,
    TimeParams,
    WeightedTV,
    as_signal,
    evaluate_min_regularizer,
    lax_oleinik,
    minplus_multi_time,
    minplus_solve,
    multi_time_lax_oleinik,
    truncated_tv_enumerate,
)
from hjopt.verify import grid_minimize, nonconvex_objective, truncated_objective


def random_pieces(rng, n, m):
    pieces = []
    for _ in range(m):
        if n >= 2 and rng.random() < 0.3:
            graph = GridGraph.chain(n, rng.uniform(0.2, 1.0, n - 1))
            f_base = "abs" if rng.random() < 0.5 else "square"
            pieces.append(WeightedTV(graph, f_base=f_base))
        else:
            pieces.append(Quadratic(as_signal(rng.uniform(-1, 1, n)),
                                    rng.uniform(0.5, 1.5)))
    return pieces


class TestMinPlusSolve:
    def test_gmm_closed_form_values(self, rng):
        for _ in range(10):
            m = int(rng.integers(2, 6))
            mus = rng.uniform(-2, 2, m)
            sigmas = rng.uniform(0.4, 1.5, m)
            x = float(rng.uniform(-2, 2))
            t = float(rng.uniform(0.2, 1.2))
            pieces = [Quadratic(as_signal(mu), s) for mu, s in zip(mus, sigmas)]
            sol = minplus_solve(pieces, as_signal(x), t)
            expected = min((x - mu) ** 2 / (2 * (s**2 + t))
                           for mu, s in zip(mus, sigmas))
            assert sol.value == pytest.approx(expected, abs=1e-13)

    def test_symmetric_two_component_example(self):
        pieces = [Quadratic(as_signal(0.0)), Quadratic(as_signal(1.0))]
        sol = minplus_solve(pieces, as_signal(0.5), 1.0)
        assert sol.value == pytest.approx(0.0625, abs=1e-14)
        assert sol.active_set == (0, 1)
        assert sorted(m.values[0] for m in sol.minimizers) == [0.25, 0.75]

    def test_single_piece_equals_single_solve(self, rng):
        piece = Quadratic(as_signal(rng.normal(0, 1, 2)), 0.7)
        x = as_signal(rng.normal(0, 1, 2))
        sol = minplus_solve([piece], x, 0.6)
        direct = lax_oleinik(piece, x, 0.6)
        assert sol.value == direct.value
        assert sol.active_set == (0,)
        assert np.array_equal(sol.minimizers[0].values, direct.minimizer.values)

    def test_value_matches_grid_bruteforce(self, rng):
        for _ in range(6):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(1, 6))
            pieces = random_pieces(rng, n, m)
            x = as_signal(rng.uniform(-1, 1, n))
            t = float(rng.uniform(0.3, 1.0))
            sol = minplus_solve(pieces, x, t)
            val, _ = grid_minimize(nonconvex_objective(pieces, x, t),
                                   np.full(n, -3.0), np.full(n, 3.0))
            assert sol.value == pytest.approx(val, abs=1e-3)

    def test_reported_minimizers_attain_the_value(self, rng):
        for _ in range(5):
            n = int(rng.integers(1, 4))
            pieces = random_pieces(rng, n, int(rng.integers(2, 6)))
            x = as_signal(rng.uniform(-1, 1, n))
            t = float(rng.uniform(0.3, 1.0))
            sol = minplus_solve(pieces, x, t)
            for minimizer in sol.minimizers:
                reg, _ = evaluate_min_regularizer(pieces, minimizer)
                d = x.values - minimizer.values
                attained = reg + float(d @ d) / (2 * t)
                assert attained == pytest.approx(sol.value, abs=1e-8)

    def test_commutation_with_pointwise_minimum(self, rng):
        # the batch objective used by the oracle agrees with the pointwise
        # min-regularizer evaluation (min over u of min over i, both orders)
        n, m = 2, 4
        pieces = random_pieces(rng, n, m)
        x = as_signal(rng.uniform(-1, 1, n))
        t = 0.5
        f = nonconvex_objective(pieces, x, t)
        U = rng.uniform(-2, 2, (50, n))
        batch = f(U)
        for row, expected in zip(U, batch):
            reg, _ = evaluate_min_regularizer(pieces, as_signal(row))
            d = x.values - row
            assert reg + float(d @ d) / (2 * t) == pytest.approx(expected, abs=1e-12)

    def test_thread_count_does_not_change_results(self, rng):
        pieces = random_pieces(rng, 2, 6)
        x = as_signal(rng.uniform(-1, 1, 2))
        serial = minplus_solve(pieces, x, 0.4, threads=1)
        parallel = minplus_solve(pieces, x, 0.4, threads=4)
        assert serial.value == parallel.value
        assert serial.active_set == parallel.active_set
        for a, b in zip(serial.minimizers, parallel.minimizers):
            assert np.array_equal(a.values, b.values)

    def test_error_annotated_with_piece_index(self):
        pieces = [Quadratic(as_signal([0.0, 0.0]))]
        with pytest.raises(Exception, match="piece 0"):
            minplus_solve(pieces, as_signal([0.0, 0.0, 0.0]), 0.5)


class TestTruncatedEnumeration:
    def test_large_jump_keeps_discontinuity(self):
        graph = GridGraph.chain(2)
        sol = truncated_tv_enumerate(graph, "abs", as_signal([0.0, 3.0]), 0.5)
        assert sol.value == pytest.approx(1.0, abs=1e-9)
        assert sol.active_labels == (frozenset({0}),)
        assert np.allclose(sol.minimizers[0].values, [0.0, 3.0], atol=1e-9)

    def test_small_jump_smooths(self):
        graph = GridGraph.chain(2)
        sol = truncated_tv_enumerate(graph, "abs", as_signal([0.0, 0.1]), 0.5)
        assert sol.active_labels == (frozenset(),)
        # both pixels merge: TV cost 0.1 exceeds the quadratic cost of merging
        assert np.allclose(sol.minimizers[0].values, [0.05, 0.05], atol=1e-8)
        # iterative TV path: the attained value is first-order in the point error
        assert sol.value == pytest.approx(0.005, abs=1e-7)

    def test_constant_signal_is_free(self):
        graph = GridGraph.grid(2, 2)
        x = as_signal(np.full(4, 0.3), (2, 2))
        sol = truncated_tv_enumerate(graph, "abs", x, 0.7)
        assert sol.value == pytest.approx(0.0, abs=1e-10)
        assert sol.active_labels[0] == frozenset()
        assert np.allclose(sol.minimizers[0].values, x.values, atol=1e-8)

    def test_minimizers_follow_the_gradient_relation(self, rng):
        graph = GridGraph.chain(3, rng.uniform(0.3, 1.0, 2))
        x = as_signal(rng.uniform(-1, 2, 3))
        t = 0.4
        sol = truncated_tv_enumerate(graph, "abs", x, t)
        for i in sol.active_set:
            ev = sol.per_piece[i]
            assert np.allclose(ev.minimizer.values,
                               x.values - t * ev.gradient.values, atol=1e-10)

    @pytest.mark.parametrize("f_base", ["abs", "square"])
    def test_matches_direct_grid_minimization(self, f_base, rng):
        graph = GridGraph.chain(3, rng.uniform(0.4, 1.0, 2))
        x = as_signal(rng.uniform(-1, 1, 3))
        t = 0.5
        sol = truncated_tv_enumerate(graph, f_base, x, t)
        val, _ = grid_minimize(truncated_objective(graph, f_base, x, t),
                               np.full(3, -3.0), np.full(3, 3.0))
        assert sol.value == pytest.approx(val, abs=1e-3)

    def test_enumeration_cap_refusal_names_the_cap(self):
        graph = GridGraph.grid(5, 5)
        with pytest.raises(EnumerationCapError, match="cap 20"):
            truncated_tv_enumerate(graph, "abs",
                                   as_signal(np.zeros(25), (5, 5)), 0.5)
        with pytest.raises(EnumerationCapError):
            truncated_tv_enumerate(GridGraph.chain(4), "abs",
                                   as_signal(np.zeros(4)), 0.5, cap=2)


class TestMinPlusMultiTime:
    def test_single_piece_identity(self, rng):
        piece = Quadratic(as_signal(rng.normal(0, 1, 2)), 1.2)
        x = as_signal(rng.normal(0, 1, 2))
        times = TimeParams((0.3, 0.5))
        hams = [QuadraticConjugate(), QuadraticConjugate(2.0)]
        sol = minplus_multi_time([piece], hams, x, times)
        direct = multi_time_lax_oleinik(piece, hams, x, times)
        assert sol.value == direct.value

    def test_two_quadratic_pieces_closed_form(self, rng):
        # each piece has the two-time closed form with summed effective time
        mus = [-1.0, 1.5]
        sigma = 0.8
        x = float(rng.uniform(-1, 2))
        times = TimeParams((0.4, 0.6))
        hams = [QuadraticConjugate(), QuadraticConjugate()]
        pieces = [Quadratic(as_signal(mu), sigma) for mu in mus]
        sol = minplus_multi_time(pieces, hams, as_signal(x), times)
        T = sum(times.times)
        expected = min((x - mu) ** 2 / (2 * (sigma**2 + T)) for mu in mus)
        assert sol.value == pytest.approx(expected, abs=1e-13)

    def test_symmetric_instance_activates_both(self):
        pieces = [Quadratic(as_signal(-1.0)), Quadratic(as_signal(1.0))]
        sol = minplus_multi_time(pieces,
                                 [QuadraticConjugate(), QuadraticConjugate()],
                                 as_signal(0.0), TimeParams((0.5, 0.5)))
        assert sol.active_set == (0, 1)

    def test_empty_pieces_rejected(self):
        with pytest.raises(ParameterError):
            minplus_multi_time([], [QuadraticConjugate()], as_signal(0.0),
                               TimeParams((1.0,)))
