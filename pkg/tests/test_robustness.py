
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from conftest import two_corridor_grid
from semnav.map_model import GridMap
from semnav.planner import Path, dijkstra
from semnav.robustness import (
    XI_MAX,
    PathStats,
    analytic_q,
    fd_sensitivity_argmax,
    mc_planning_accuracy,
    p_correct_pair,
    path_stats,
    path_variance,
    perturbed_costs,
    prop1_optimal_variance,
    q_accuracy,
    q_full_derivative,
    q_term_derivative,
    sensitivity_xi,
    wilson_interval,
)
from semnav.trav_graph import VarianceField, apply_perturbation, build_graph

nonneg = st.floats(0, 1e3, allow_nan=False)


def test_p_correct_examples():
    assert p_correct_pair(0.0, 1.0, 1.0) == 0.5
    assert p_correct_pair(2.0, 1.0, 3.0) == pytest.approx(0.841345, abs=1e-6)
    assert p_correct_pair(2.0, 0.0, 0.0) == 1.0
    assert p_correct_pair(0.0, 0.0, 0.0) == 0.5


def test_negative_inputs_rejected():
    for args in [(-1, 1, 1), (1, -1, 1), (1, 1, -1)]:
        with pytest.raises(ValueError):
            p_correct_pair(*args)
        with pytest.raises(ValueError):
            sensitivity_xi(*args)
    with pytest.raises(ValueError):
        prop1_optimal_variance(-1.0, 1.0)


def test_q_examples():
    assert q_accuracy([]) == 1.0
    s = PathStats.from_gap(1.0, 0.5, 0.5)
    assert q_accuracy([s, s]) == pytest.approx(0.707861, abs=1e-6)


def test_xi_examples():
    assert sensitivity_xi(2.0, 2.0, 2.0) == pytest.approx(0.241971, abs=1e-6)
    assert sensitivity_xi(2.0, 2.0, 2.0) == pytest.approx(XI_MAX, abs=1e-15)
    assert sensitivity_xi(0.0, 1.0, 1.0) == 0.0
    assert sensitivity_xi(2.0, 0.5, 0.5) == pytest.approx(0.107982, abs=1e-6)
    assert sensitivity_xi(2.0, 0.0, 0.0) == 0.0


def test_xi_bound_on_fine_grid():
    z = np.linspace(-8, 8, 1_600_001)
    xi = np.abs(z) * norm.pdf(z)
    assert xi.max() <= XI_MAX + 1e-12
    assert abs(abs(z[np.argmax(xi)]) - 1.0) < 1e-5
    assert XI_MAX == pytest.approx(0.2419707245, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(dw=nonneg, vs=nonneg, vj=nonneg)
def test_pair_properties(dw, vs, vj):
    p = p_correct_pair(dw, vs, vj)
    assert 0.5 <= p <= 1.0
    assert 0.0 <= sensitivity_xi(dw, vs, vj) <= XI_MAX + 1e-12


@settings(max_examples=200, deadline=None)
@given(dw=nonneg, vs=nonneg, vj=nonneg, bump=st.floats(0, 1e3))
def test_q_non_increasing_in_variance(dw, vs, vj, bump):
    other = PathStats.from_gap(1.0, vs, 2.0)
    before = q_accuracy([PathStats.from_gap(dw, vs, vj), other])
    after = q_accuracy([PathStats.from_gap(dw, vs, vj + bump), other])
    assert after <= before + 1e-15


def test_prop1_examples():
    assert prop1_optimal_variance(3.0, 4.0) == 5.0
    assert prop1_optimal_variance(2.0, 4.0) is None
    assert prop1_optimal_variance(2.0, 5.0) is None


def test_prop1_variance_puts_z_at_one():
    v = prop1_optimal_variance(3.0, 4.0)
    s = PathStats.from_gap(3.0, 4.0, v)
    assert s.z == pytest.approx(1.0)
    assert s.xi == pytest.approx(XI_MAX)


@pytest.mark.parametrize("dw,vs", [(3.0, 1.0), (5.0, 4.0), (2.0, 0.5), (8.0, 10.0)])
def test_fd_argmax_locations(dw, vs):
    # the raw derivative of Phi peaks where var_star + var_j = dw^2 / 3; scaling
    # by 2 (var_star + var_j) turns it into |z| phi(z), which peaks at |z| = 1
    third = dw * dw / 3.0 - vs
    raw = fd_sensitivity_argmax(dw, vs)
    if third > 0:
        assert abs(raw - third) / third < 0.02
    nrm = fd_sensitivity_argmax(dw, vs, normalized=True)
    target = prop1_optimal_variance(dw, vs)
    assert abs(nrm - target) / target < 0.02


def test_term_derivative_matches_finite_difference():
    stats = [PathStats.from_gap(1.5, 0.7, 0.9), PathStats.from_gap(0.8, 0.7, 0.3)]
    h = 1e-6
    fd = (p_correct_pair(1.5, 0.7, 0.9 + h) - p_correct_pair(1.5, 0.7, 0.9)) / h
    assert q_term_derivative(stats, 0) == pytest.approx(fd, rel=1e-4)
    bumped = [PathStats.from_gap(1.5, 0.7, 0.9 + h), stats[1]]
    fd_full = (q_accuracy(bumped) - q_accuracy(stats)) / h
    assert q_full_derivative(stats, 0) == pytest.approx(fd_full, rel=1e-4)
    assert q_full_derivative(stats, 0) == pytest.approx(
        q_term_derivative(stats, 0) * stats[1].p_correct
    )


def test_path_variance_modes():
    g = build_graph(GridMap(np.ones((1, 3))))
    p = Path.from_vertices(g, [0, 1, 2])
    assert path_variance(VarianceField.constant(g.shape, 0.0), g, p) == 0.0
    assert path_variance(VarianceField.constant(g.shape, 0.04), g, p) == pytest.approx(0.12)

    g = build_graph(GridMap(np.ones((2, 3))))
    f = VarianceField.constant(g.shape, 1.0)
    a = Path.from_vertices(g, [g.vertex(c) for c in [(0, 0), (0, 1), (0, 2)]])
    b = Path.from_vertices(g, [g.vertex(c) for c in [(0, 0), (1, 1), (0, 2)]])
    assert path_variance(f, g, a) + path_variance(f, g, b) == 6.0
    assert path_variance(f, g, a, exact_vs=b) + path_variance(f, g, b, exact_vs=a) == 2.0
    st_exact = path_stats(g, f, a, b, exact=True)
    assert st_exact.var_star + st_exact.var_j == 2.0


def test_analytic_q_skips_best():
    g = build_graph(GridMap(np.ones((2, 3))))
    f = VarianceField.constant(g.shape, 1.0)
    best = dijkstra(g, 0, 2)
    assert analytic_q(g, f, best, [best]) == 1.0


def test_mc_zero_field_is_exact():
    g = build_graph(two_corridor_grid())
    s, t = g.vertex((1, 0)), g.vertex((1, 7))
    est = mc_planning_accuracy(g, VarianceField.constant(g.shape, 0.0), s, t, 500, 0)
    assert est.accuracy == 1.0
    assert est.hits == 500


def test_mc_two_corridors_half():
    grid = two_corridor_grid()
    grid = grid.with_tau(np.where(grid.tau > 0, 0.5, 0.0))
    g = build_graph(grid)
    s, t = g.vertex((1, 0)), g.vertex((1, 7))
    est = mc_planning_accuracy(g, VarianceField.constant(g.shape, 4.0), s, t, 100_000, 0)
    assert abs(est.accuracy - 0.5) < 0.01
    assert est.ci_low < 0.5 < est.ci_high


def test_mc_matches_per_trial_replanning():
    grid = two_corridor_grid(4)
    g = build_graph(grid.with_tau(np.where(grid.tau > 0, 0.6, 0.0)))
    f = VarianceField.constant(g.shape, 2.0)
    s, t = g.vertex((1, 0)), g.vertex((1, 5))
    best = dijkstra(g, s, t)
    hits = sum(dijkstra(apply_perturbation(g, f, 7 + i), s, t).vertices == best.vertices for i in range(300))
    assert mc_planning_accuracy(g, f, s, t, 300, 7, chunk=64).hits == hits


def test_perturbed_costs_rows_match_apply_perturbation():
    g = build_graph(two_corridor_grid())
    f = VarianceField.constant(g.shape, 3.0)
    rows = perturbed_costs(g, f.on_vertices(g), [3, 4])
    assert np.array_equal(rows[1], apply_perturbation(g, f, 4).cost)


def test_mc_accuracy_non_increasing_with_scale():
    tau = two_corridor_grid(6).tau.copy()
    tau[0, 1:-1] = 0.6
    tau[2, 1:-1] = 0.5
    g = build_graph(GridMap(tau))
    base = VarianceField.constant(g.shape, 1.0)
    s, t = g.vertex((1, 0)), g.vertex((1, 7))
    acc = [mc_planning_accuracy(g, base.scaled(k), s, t, 20_000, 1).accuracy for k in (0, 0.5, 1, 2, 4)]
    assert acc[0] == 1.0
    assert all(a >= b for a, b in zip(acc, acc[1:]))


def test_wilson():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 10)[0] == 0.0
    with pytest.raises(ValueError):
        wilson_interval(0, 0)
