import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from capnet.calibrate import (
    CalibrationError,
    CalibrationGrid,
    EmptyIntersectionError,
    axis,
    default_na_values,
    default_r_values,
    feasible,
    fit_kc0_kc1_grid,
    heterogeneous_fit_report,
    heterogeneous_rc,
    intersect,
    model_distribution_ks,
    proximity_ks_grid,
    q_from_density,
    simulated_proximity,
)
from capnet.distfit import ks_critical_value, ks_statistic
from capnet.metrics import proximity_values
from capnet.model import BinomialParams, expected_diversification, expected_k_c1, simulate_network
from capnet.seeding import derive_seed


@pytest.mark.parametrize(
    "eta,n_a,r,q",
    [(0.1353, 80, 0.87, 0.1795), (0.0854, 70, 0.89, 0.3016)],
)
def test_q_from_density_table_values(eta, n_a, r, q):
    assert q_from_density(eta, r, n_a) == pytest.approx(q, abs=1e-3)


def test_q_boundary_infeasible():
    eta, n_a = 0.2, 40
    r = eta ** (1 / n_a)
    q = q_from_density(eta, r, n_a)
    assert q == pytest.approx(1) and not feasible(q + 1e-15) or not feasible(q)
    grid = CalibrationGrid.empty(eta, [r, 0.5], [n_a])
    assert grid.feasible.tolist() == [[False], [True]]


def test_q_errors():
    for args in ((0, 0.5, 10), (1, 0.5, 10), (0.1, 1.0, 10), (0.1, 0.5, 0)):
        with pytest.raises(CalibrationError):
            q_from_density(*args)


@given(st.floats(0.01, 0.9), st.floats(0.3, 0.99), st.integers(1, 300))
def test_density_round_trip(eta, r, n_a):
    q = q_from_density(eta, r, n_a)
    if feasible(q):
        assert r ** (q * n_a) == pytest.approx(eta, rel=1e-12, abs=1e-12)


def test_default_axes():
    r, na = default_r_values(), default_na_values()
    assert r[0] == 0.5 and r[-1] == 0.98 and len(r) == 25
    assert na[0] == 10 and na[-1] == 200 and len(na) == 39
    np.testing.assert_array_equal(axis(10, 200, 5, integer=True), na)
    np.testing.assert_allclose(axis(0.5, 0.98, 0.02), r)


def planted_diagram(p, points=40):
    lo = p.n_p * (1 - p.q) ** p.n_a
    k0 = np.linspace(lo * 1.5, p.n_p * 0.9, points)
    return list(zip(k0, expected_k_c1(p, k0)))


def _planted_r2(r, n_a, eta, r_values):
    p = BinomialParams(r, q_from_density(eta, r, n_a), n_a, 232, 5109)
    grid = fit_kc0_kc1_grid(planted_diagram(p), eta, 232, 5109, r_values=r_values)
    i = int(np.argmin(np.abs(grid.r_values - r)))
    j = int(np.flatnonzero(grid.na_values == n_a)[0])
    return grid, (i, j)


def test_r2_self_consistency_and_argmax():
    # 0.89 is an odd hundredth, so use the default spacing shifted by 0.01
    grid, cell = _planted_r2(0.89, 70, 0.0854, axis(0.51, 0.99, 0.02))
    assert grid.r2[cell] == pytest.approx(1, abs=1e-9)
    assert np.unravel_index(np.nanargmax(grid.r2), grid.shape) == cell
    assert np.all(np.isnan(grid.r2[~grid.feasible]))


def test_r2_argmax_on_default_grid():
    grid, cell = _planted_r2(0.88, 70, 0.0854, None)
    assert grid.r2[cell] == pytest.approx(1, abs=1e-9)
    assert np.unravel_index(np.nanargmax(grid.r2), grid.shape) == cell


def test_degenerate_diagrams():
    with pytest.raises(CalibrationError, match="SS_tot"):
        fit_kc0_kc1_grid([(1, 5), (2, 5), (3, 5)], 0.1, 10, 10)
    with pytest.raises(CalibrationError, match="k_c0"):
        fit_kc0_kc1_grid([(2, 5), (2, 4), (2, 3)], 0.1, 10, 10)
    with pytest.raises(CalibrationError):
        fit_kc0_kc1_grid([(2, 5), (3, 4)], 0.1, 10, 10)


SMALL = BinomialParams(0.9, 0.1, 50, 60, 200)


def test_self_ks_is_zero():
    a = simulated_proximity(SMALL, 3, 5)
    assert ks_statistic(a, simulated_proximity(SMALL, 3, 5)) == 0


def test_disjoint_seed_groups_within_critical_value():
    a = simulated_proximity(SMALL, 5, derive_seed(1, 0))
    b = simulated_proximity(SMALL, 5, derive_seed(1, 1))
    assert ks_statistic(a, b) < ks_critical_value(len(a), len(b), 0.01)


def test_planted_cell_in_lowest_ks_decile():
    n_c, n_p = 60, 200
    r, n_a, eta = 0.84, 60, 0.15
    p = BinomialParams(r, q_from_density(eta, r, n_a), n_a, n_c, n_p)
    ranks = []
    for t in range(5):
        m = simulate_network(p, derive_seed(2024, t))
        grid = proximity_ks_grid(proximity_values(m), n_c, n_p, m.mean(), seeds=5, master_seed=t)
        i = int(np.argmin(np.abs(grid.r_values - r)))
        j = int(np.flatnonzero(grid.na_values == n_a)[0])
        ranks.append(float(np.mean(grid.ks[grid.feasible] < grid.ks[i, j])))
    assert all(x <= 0.1 for x in ranks), ranks


def test_ks_grid_deterministic_across_workers():
    m = simulate_network(SMALL, 1)
    kw = dict(r_values=[0.86, 0.9], na_values=[40, 50], seeds=2, master_seed=9)
    a = proximity_ks_grid(proximity_values(m), 60, 200, m.mean(), workers=1, **kw)
    b = proximity_ks_grid(proximity_values(m), 60, 200, m.mean(), workers=2, **kw)
    np.testing.assert_array_equal(a.ks, b.ks)
    assert np.all(a.seeds[a.feasible] == 2)


def test_ks_grid_errors():
    with pytest.raises(CalibrationError):
        proximity_ks_grid([], 5, 5, 0.2)
    with pytest.raises(CalibrationError):
        simulated_proximity(BinomialParams(0.9, 0.1, 5, 5, 1), 1, 0)


def toy_grid(r2, ks):
    r2, ks = np.asarray(r2, float), np.asarray(ks, float)
    g = CalibrationGrid.empty(0.2, np.linspace(0.6, 0.9, r2.shape[0]), 10 + 5 * np.arange(r2.shape[1]))
    g.r2[:], g.ks[:] = r2, ks
    return g


def test_intersect_dominant_cell():
    r2 = [[0.1, 0.2, 0.3], [0.4, 0.99, 0.5], [0.2, 0.3, 0.1]]
    ks = [[0.5, 0.4, 0.3], [0.3, 0.01, 0.2], [0.6, 0.5, 0.4]]
    res = intersect(toy_grid(r2, ks), 0.2, 0.2)
    assert (res.chosen.r, res.chosen.n_a) == (0.75, 15)
    assert res.chosen in res.region


def test_intersect_tie_break():
    r2 = [[0.9, 0.95], [0.9, 0.1]]
    ks = [[0.1, 0.1], [0.1, 0.9]]
    res = intersect(toy_grid(r2, ks), 0.75, 0.75)
    assert (res.chosen.r, res.chosen.n_a) == (0.6, 15)  # equal KS, higher R^2 wins
    res = intersect(toy_grid([[0.9, 0.9], [0.1, 0.1]], ks), 1.0, 1.0)
    assert res.chosen.n_a == 10 and res.chosen.r == 0.6


def test_intersect_empty():
    r2 = [[1.0, 0.0], [0.0, 0.0]]
    ks = [[1.0, 0.0], [1.0, 1.0]]
    with pytest.raises(EmptyIntersectionError) as info:
        intersect(toy_grid(r2, ks), 0.25, 0.25)
    assert info.value.r2_region == [(0.6, 10)] and info.value.ks_region == [(0.6, 15)]


P = BinomialParams(0.87, 0.1795, 80, 129, 772)


def test_rc_limits():
    est = heterogeneous_rc([P.n_p, P.n_p * (1 - P.q) ** P.n_a, 300], P)
    assert est.r_c[0] == 1 - 1e-6
    assert est.r_c[1] == 1e-6
    assert est.k_ca[0] == pytest.approx(P.n_a)
    assert 0 < est.r_c[2] < 1
    assert est.clipped_high == 1 and est.clipped_low >= 0


@given(st.lists(st.integers(1, 772), min_size=2, max_size=30))
def test_rc_monotone(k0):
    est = heterogeneous_rc(k0, P)
    order = np.argsort(k0, kind="stable")
    assert np.all(np.diff(est.r_c[order]) >= 0)
    assert np.all((est.r_c > 0) & (est.r_c < 1))


def test_heterogeneous_means_match_targets():
    p = BinomialParams(0.85, 0.12, 40, 30, 300)
    target = np.linspace(40, 280, 30).astype(int)
    est = heterogeneous_rc(target, p)
    rep = heterogeneous_fit_report(est.r_c, p, target, replicates=1000, seed=4)
    ok = (est.r_c > 1e-6) & (est.r_c < 1 - 1e-6)
    z = np.abs(rep.mean_k_c0[ok] - target[ok]) / rep.se_k_c0[ok]
    assert np.all(z < 3), z.max()
    assert rep.replicates == 1000


def test_homogeneous_rates_reduce_to_baseline():
    p = BinomialParams(0.85, 0.12, 40, 30, 300)
    rep = heterogeneous_fit_report([0.85] * 30, p, [100] * 30, replicates=300, seed=5)
    mean = lambda h: (rep.bins * h).sum() / h.sum()
    se = np.sqrt(np.var(rep.mean_k_c0) / 30 + 1e-12) * 2
    assert abs(mean(rep.heterogeneous_hist) - mean(rep.homogeneous_hist)) < 3 * max(se, 1.0)
    assert abs(rep.ks_heterogeneous - rep.ks_homogeneous) < 0.05


def test_simulated_density_matches_expectation():
    eta, r, n_a = 0.15, 0.88, 50
    p = BinomialParams(r, q_from_density(eta, r, n_a), n_a, 100, 500)
    d = np.array([simulate_network(p, derive_seed(6, s)).mean() for s in range(50)])
    # exact E[M_cp] = (1 - q(1 - r))**n_a; eta = r**(q n_a) is its mean-field value
    se = d.std(ddof=1) / math.sqrt(len(d))
    assert abs(d.mean() - p.expected_density) < 3 * se


def test_simulated_density_near_eta():
    eta, r, n_a = 0.15, 0.88, 50
    p = BinomialParams(r, q_from_density(eta, r, n_a), n_a, 100, 500)
    d = np.array([simulate_network(p, derive_seed(6, s)).mean() for s in range(50)])
    se = math.sqrt(eta * (1 - eta) / (p.n_c * p.n_p * len(d)))
    assert abs(d.mean() - eta) < 3 * se


def test_model_distribution_ks_keys():
    m = simulate_network(P, 0)
    out = model_distribution_ks(m, P)
    assert set(out) == {"ks_diversification", "ks_ubiquity"}
    assert all(0 <= v <= 1 for v in out.values())


def test_exact_expectation_of_heterogeneous_diversification():
    p = BinomialParams(0.8, 0.1, 30, 1, 200)
    k0 = 90.0
    est = heterogeneous_rc([k0], p)
    assert expected_diversification(p, est.k_ca[0]) == pytest.approx(k0)


def test_exact_density_rule_inverts_expected_density():
    for r, n_a, eta in [(0.76, 155, 0.145), (0.9, 40, 0.2)]:
        q = q_from_density(eta, r, n_a, rule="exact")
        assert abs((1 - q * (1 - r)) ** n_a - eta) < 1e-12
        assert q > q_from_density(eta, r, n_a)


def test_unknown_density_rule_rejected():
    with pytest.raises(CalibrationError):
        q_from_density(0.1, 0.8, 20, rule="poisson")
