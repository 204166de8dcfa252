import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjopt import (
    DimensionMismatchError,
    DualTVBallIndicator,
    GridGraph,
    L1,
    OutsideDomainError,
    ParameterError,
    Quadratic,
    Signal,
    TimeParams,
    WeightedTV,
    as_signal,
    evaluate_min_regularizer,
    evaluate_piece,
)
from hjopt.minplus import truncated_tv_subsets


class TestSignal:
    def test_requires_finite_entries(self):
        with pytest.raises(ParameterError):
            as_signal([0.0, np.nan])
        with pytest.raises(ParameterError):
            as_signal([np.inf])

    def test_requires_at_least_one_entry(self):
        with pytest.raises(ParameterError):
            Signal(np.array([]), (0,))

    def test_shape_product_must_match(self):
        with pytest.raises(DimensionMismatchError):
            Signal(np.arange(4.0), (2, 3))

    def test_values_are_read_only(self):
        s = as_signal([1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 5.0

    def test_image_shape_round_trip(self):
        img = np.arange(6.0).reshape(2, 3)
        s = as_signal(img)
        assert s.shape == (2, 3)
        assert np.array_equal(s.as_image(), img)


class TestGridGraph:
    def test_rejects_out_of_range_index(self):
        with pytest.raises(ParameterError):
            GridGraph(2, ((0, 2, 1.0),))

    def test_rejects_self_edge(self):
        with pytest.raises(ParameterError):
            GridGraph(2, ((1, 1, 1.0),))

    def test_rejects_negative_weight(self):
        with pytest.raises(ParameterError):
            GridGraph(2, ((0, 1, -0.5),))

    def test_rejects_duplicate_unordered_pair(self):
        with pytest.raises(ParameterError):
            GridGraph(2, ((0, 1, 1.0), (1, 0, 2.0)))

    def test_grid_has_4_neighborhood_edges(self):
        g = GridGraph.grid(3, 3)
        assert g.n == 9
        assert g.n_edges == 12  # 2 * rows * cols - rows - cols

    def test_chain_detection(self):
        assert GridGraph.chain(4).is_chain()
        assert not GridGraph.grid(2, 2).is_chain()


class TestTimeParams:
    def test_rejects_nonpositive_times(self):
        with pytest.raises(ParameterError):
            TimeParams((0.0,))
        with pytest.raises(ParameterError):
            TimeParams((1.0, -1.0))

    def test_rejects_negative_epsilon(self):
        with pytest.raises(ParameterError):
            TimeParams((1.0,), epsilon=-0.1)

    def test_single_time_accessor(self):
        assert TimeParams((0.5,)).t == 0.5
        with pytest.raises(ParameterError):
            TimeParams((0.5, 0.5)).t


class TestEvaluatePiece:
    def test_quadratic_minimum_at_center(self):
        assert evaluate_piece(Quadratic(as_signal(0.0)), as_signal(0.0)) == 0.0

    def test_tv_on_two_pixels(self):
        piece = WeightedTV(GridGraph.chain(2))
        assert evaluate_piece(piece, as_signal([0.0, 3.0])) == 3.0

    def test_truncated_edge_contributes_constant_weight(self):
        piece = WeightedTV(GridGraph.chain(2), frozenset({0}))
        assert evaluate_piece(piece, as_signal([0.0, 3.0])) == 1.0

    def test_half_quadratic_base(self):
        piece = WeightedTV(GridGraph.chain(2), f_base="square")
        assert evaluate_piece(piece, as_signal([0.0, 3.0])) == 9.0

    def test_l1_is_dimension_free(self):
        piece = L1(2.0)
        assert evaluate_piece(piece, as_signal([1.0, -2.0])) == 6.0
        assert evaluate_piece(piece, as_signal([1.0, -2.0, 0.5])) == 7.0

    def test_dimension_mismatch_is_an_error(self):
        piece = Quadratic(as_signal([0.0, 0.0]))
        with pytest.raises(DimensionMismatchError):
            evaluate_piece(piece, as_signal([0.0, 0.0, 0.0]))

    def test_ball_indicator_finite_at_interior_point(self):
        piece = DualTVBallIndicator(GridGraph.chain(3), radius=0.5)
        assert evaluate_piece(piece, as_signal([0.0, 0.0, 0.0])) == 0.0

    def test_ball_indicator_infinite_far_outside(self):
        piece = DualTVBallIndicator(GridGraph.chain(2), radius=0.5)
        assert evaluate_piece(piece, as_signal([5.0, -5.0])) == math.inf
        # nonzero mean cannot be in the ball either
        assert evaluate_piece(piece, as_signal([2.0, 2.0])) == math.inf


class TestMinRegularizer:
    def test_symmetric_quadratics_tie(self):
        pieces = [Quadratic(as_signal(0.0)), Quadratic(as_signal(1.0))]
        value, idx = evaluate_min_regularizer(pieces, as_signal(0.5))
        assert value == pytest.approx(0.125, abs=1e-15)
        assert idx == (0, 1)

    def test_truncated_pieces_on_a_jump(self):
        graph = GridGraph.chain(2)
        pieces = [WeightedTV(graph, s) for s in truncated_tv_subsets(graph)]
        value, idx = evaluate_min_regularizer(pieces, as_signal([0.0, 3.0]))
        assert value == 1.0
        assert idx == (1,)  # the subset containing the single edge

    def test_single_piece_identity(self):
        piece = Quadratic(as_signal([1.0, 2.0]), 0.7)
        u = as_signal([0.3, -0.4])
        value, idx = evaluate_min_regularizer([piece], u)
        assert value == evaluate_piece(piece, u)
        assert idx == (0,)

    def test_outside_all_domains(self):
        pieces = [DualTVBallIndicator(GridGraph.chain(2), 0.5)]
        with pytest.raises(OutsideDomainError):
            evaluate_min_regularizer(pieces, as_signal([4.0, -4.0]))

    def test_empty_piece_list(self):
        with pytest.raises(ParameterError):
            evaluate_min_regularizer([], as_signal(0.0))


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_min_regularizer_below_every_piece(u_vals, seed):
    rng = np.random.default_rng(seed)
    pieces = [Quadratic(as_signal(rng.normal(0, 1, 3)), rng.uniform(0.5, 2))
              for _ in range(3)]
    pieces.append(L1(rng.uniform(0.1, 2)))
    pieces.append(WeightedTV(GridGraph.chain(3, rng.uniform(0.1, 1, 2))))
    u = as_signal(u_vals)
    vmin, idx = evaluate_min_regularizer(pieces, u)
    vals = [evaluate_piece(p, u) for p in pieces]
    assert all(vmin <= v + 1e-12 for v in vals)
    assert vmin == min(vals)
    assert all(vals[i] <= vmin + max(1e-9 * abs(vmin), 1e-12) for i in idx)


@pytest.mark.parametrize("f_base", ["abs", "square"])
def test_subset_decomposition_matches_truncated_form(f_base, rng):
    # min over all edge subsets of the convex pieces must equal the truncated
    # regularizer sum_e w_e * min(f(u_i - u_j), 1), pointwise
    graph = GridGraph.grid(2, 2, weight=0.8)
    assert graph.n_edges == 4
    pieces = [WeightedTV(graph, s, f_base) for s in truncated_tv_subsets(graph)]
    grid = np.linspace(-1.6, 1.6, 5)
    points = [np.array([a, b, c, d]) for a in grid for b in grid
              for c in grid for d in grid[:2]]
    points += [rng.uniform(-2, 2, 4) for _ in range(40)]
    for vals in points:
        u = as_signal(vals)
        direct = sum(w * min(abs(vals[i] - vals[j]) if f_base == "abs"
                             else (vals[i] - vals[j]) ** 2, 1.0)
                     for i, j, w in graph.edges)
        vmin, _ = evaluate_min_regularizer(pieces, u)
        assert vmin == pytest.approx(direct, abs=1e-12)
