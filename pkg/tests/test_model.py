import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import binom, spearmanr

from capnet.distfit import ks_statistic
from capnet.metrics import degree_profile
from capnet.model import (
    BinomialParams,
    CapabilityWorld,
    ModelError,
    RequirementHistogram,
    capabilities_from_diversification,
    derivative_checks,
    diversification_density,
    diversification_pdf,
    exact_conditional_diversification,
    expected_diversification,
    expected_k_c1,
    expected_k_c1_from_capabilities,
    expected_ubiquity,
    leontief,
    mean_field_diversity,
    quiescence_curve,
    sample_heterogeneous_world,
    sample_world,
    simulate_network,
    ubiquity_density,
    ubiquity_pdf,
)
from capnet.seeding import derive_seed

TABLE2 = {
    "sitc4-0.5": (BinomialParams(0.86, 0.1661, 65, 129, 772), 0.0849, 0.3962),
    "sitc4-1": (BinomialParams(0.87, 0.1795, 80, 129, 772), 0.1189, 0.3204),
    "hs6-0.5": (BinomialParams(0.89, 0.2542, 70, 232, 5109), 0.1035, 0.4025),
    "hs6-1": (BinomialParams(0.89, 0.3016, 70, 232, 5109), 0.1084, 0.3368),
}

params_st = st.builds(
    BinomialParams,
    r=st.floats(0.05, 0.99),
    q=st.floats(0.01, 0.95),
    n_a=st.integers(1, 120),
    n_c=st.integers(1, 300),
    n_p=st.integers(1, 3000),
)


def test_params_validation():
    for kw in ({"r": 0, "q": 0.5, "n_a": 3}, {"r": 0.5, "q": 1, "n_a": 3}, {"r": 0.5, "q": 0.5, "n_a": 0}):
        with pytest.raises(ModelError):
            BinomialParams(**kw)


def test_sample_world_full_capability_limit():
    w = sample_world(BinomialParams(1 - 1e-12, 0.5, 100, 100, 5), 0)
    assert w.C.mean() > 0.999


def test_sample_world_mean_entry():
    p = BinomialParams(0.89, 0.3, 50, 40, 10)
    means = [sample_world(p, s).C.mean() for s in range(100)]
    assert np.mean(means) == pytest.approx(0.89, abs=0.01)


def test_sample_world_deterministic():
    p = BinomialParams(0.7, 0.2, 10, 5, 6)
    a, b = sample_world(p, 42), sample_world(p, 42)
    np.testing.assert_array_equal(a.C, b.C)
    np.testing.assert_array_equal(a.P, b.P)


def test_world_counts_and_immutability():
    w = sample_world(BinomialParams(0.5, 0.5, 7, 4, 5), 1)
    np.testing.assert_array_equal(w.k_c0_a, w.C.sum(axis=1))
    np.testing.assert_array_equal(w.k_p0_a, w.P.sum(axis=1))
    with pytest.raises(ValueError):
        w.C[0, 0] = True


def test_leontief_examples():
    assert leontief(CapabilityWorld([[1, 1]], [[1, 0]])).adjacency[0, 0]
    assert not leontief(CapabilityWorld([[1, 0]], [[1, 1]])).adjacency[0, 0]
    m = leontief(CapabilityWorld([[0, 0], [1, 0]], [[0, 0], [1, 0]])).adjacency
    assert m[:, 0].all()


def test_leontief_shape_mismatch():
    with pytest.raises(ModelError):
        CapabilityWorld([[1, 0]], [[1, 0, 1]])


def subset_oracle(C, P):
    caps = [set(np.flatnonzero(row)) for row in C]
    reqs = [set(np.flatnonzero(row)) for row in P]
    return np.array([[r <= c for r in reqs] for c in caps], dtype=bool).reshape(len(C), len(P))


@given(st.integers(1, 8).flatmap(lambda a: st.tuples(
    arrays(bool, st.tuples(st.integers(1, 8), st.just(a))),
    arrays(bool, st.tuples(st.integers(1, 8), st.just(a))),
)))
def test_leontief_subset_oracle(cp):
    C, P = cp
    np.testing.assert_array_equal(leontief(CapabilityWorld(C, P)).adjacency, subset_oracle(C, P))


def test_mean_field_diversity_examples():
    hist = RequirementHistogram([1.0, 2.0, 1.0])  # binomial(2, 0.5) * 4
    assert mean_field_diversity(hist, 2) == 4
    assert mean_field_diversity(hist, 0) == 1
    # enumerate requirement profiles {}, {a}, {b}, {a,b}; each capability held with prob 1/2
    enum = np.mean([0.5 ** len(s) for n in range(3) for s in itertools.combinations("ab", n)]) * 4
    assert mean_field_diversity(hist, 1) == pytest.approx(2.25) == pytest.approx(enum)


def test_mean_field_range():
    with pytest.raises(ModelError):
        mean_field_diversity(RequirementHistogram([1, 1]), 2)


def test_expected_diversification_examples():
    p = BinomialParams(0.5, 0.5, 2, 1, 4)
    assert expected_diversification(p, 2) == 4
    assert expected_diversification(p, 0) == pytest.approx(4 * 0.25)
    assert expected_diversification(p, 1) == pytest.approx(2.25)
    assert expected_diversification(p, 1) == pytest.approx(mean_field_diversity(RequirementHistogram.binomial(p), 1))
    with pytest.raises(ModelError):
        expected_diversification(p, 3)
    with pytest.raises(ValueError):
        expected_diversification(p, 1, form="cubic")


@given(params_st, st.floats(0, 1))
def test_binomial_sum_identity(p, frac):
    k = frac * p.n_a
    hist = RequirementHistogram.binomial(p)
    assert expected_diversification(p, k) == pytest.approx(mean_field_diversity(hist, k), rel=1e-9)


def test_exponential_form_is_a_limit():
    k = 30.0
    gaps = []
    for n_a in (40, 400, 4000):
        p = BinomialParams(0.9, 0.01, n_a, 1, 1000)
        kk = n_a - (40 - k)
        gaps.append(abs(expected_diversification(p, kk, "exponential") / expected_diversification(p, kk) - 1))
    assert gaps[0] > gaps[1] > gaps[2]


def test_exact_conditional_below_mean_field():
    p = BinomialParams(0.89, 0.3016, 70, 1, 5109)
    k = np.arange(0, 70)
    assert np.all(exact_conditional_diversification(p, k) <= expected_diversification(p, k))


def test_expected_ubiquity():
    p = BinomialParams(0.9, 0.3, 5, 100, 1)
    assert expected_ubiquity(p, 0) == 100
    assert expected_ubiquity(p, 2) == pytest.approx(81)
    assert np.all(np.diff(expected_ubiquity(p, np.arange(6))) < 0)
    with pytest.raises(ModelError):
        expected_ubiquity(p, 6)


def test_expected_ubiquity_monte_carlo():
    # Products requiring exactly 2 capabilities, pooled over 1000 worlds.
    p = BinomialParams(0.9, 0.3, 5, 100, 40)
    total = count = 0
    for s in range(1000):
        w = sample_world(p, s)
        m = leontief(w).adjacency
        sel = w.k_p0_a == 2
        total += m[:, sel].sum()
        count += sel.sum()
    mean = total / count
    se = np.sqrt(100 * 0.81 * 0.19 / count)  # lower bound; ubiquities within a world are correlated
    assert mean == pytest.approx(81, abs=max(4 * se, 0.5))


def test_expected_k_c1_examples():
    p = BinomialParams(0.6, 1e-12, 10, 7, 50)
    assert expected_k_c1(p, 50) == pytest.approx(7)
    p = BinomialParams(0.5, 0.5, 1, 10, 4)
    assert expected_k_c1(p, 2) == pytest.approx(10)
    assert capabilities_from_diversification(p, 2) == pytest.approx(0)
    with pytest.raises(ModelError):
        expected_k_c1(p, 0)


@given(params_st, st.floats(0.001, 1))
def test_capability_round_trip(p, frac):
    k = frac * p.n_a
    k0 = expected_diversification(p, k)
    if k0 <= 0:
        return
    assert capabilities_from_diversification(p, k0) == pytest.approx(k, rel=1e-9, abs=1e-9 * p.n_a)
    direct = expected_k_c1_from_capabilities(p, k)
    assert expected_k_c1(p, k0) == pytest.approx(direct, rel=1e-9)


@given(params_st)
def test_monotone_and_convex(p):
    k = np.linspace(0, p.n_a, 50)
    d = expected_diversification(p, k)
    assert np.all(np.diff(d) >= -1e-12 * d.max())
    assert np.all(np.diff(d, 2) >= -1e-9 * d.max())
    lo = p.n_p * (1 - p.q) ** p.n_a
    k0 = np.linspace(lo, p.n_p, 51)[1:]
    c1 = expected_k_c1(p, k0)
    assert np.all(np.diff(c1) <= 1e-9 * c1.max())


@pytest.mark.parametrize("row", sorted(TABLE2))
def test_densities_normalized_and_nonnegative(row):
    p = TABLE2[row][0]
    for dens in (diversification_density(p), ubiquity_density(p)):
        assert dens.integral() == pytest.approx(1, abs=1e-9)
        assert np.all(dens.density >= 0)
        assert dens.cumulative[-1] == pytest.approx(1)
        assert np.all(np.diff(dens.cumulative) >= 0)


def test_density_grid_converges():
    p = TABLE2["hs6-1"][0]
    fine, coarse = diversification_density(p, 10_000), diversification_density(p, 2_000)
    x = np.linspace(fine.grid[0], 1, 300)
    assert np.max(np.abs(fine.cdf(x) - coarse.cdf(x))) < 1e-3


def test_pdf_support_errors():
    p = BinomialParams(0.9, 0.3, 10, 5, 5)
    with pytest.raises(ModelError):
        diversification_pdf(p, 0.5 * (1 - 0.3) ** 10)
    with pytest.raises(ModelError):
        ubiquity_pdf(p, 1.5)
    assert diversification_pdf(p, 0.5) > 0 and ubiquity_pdf(p, 0.5) > 0


def _model_ks(p, seeds, which):
    out = []
    for s in range(seeds):
        m = simulate_network(p, derive_seed(77, s))
        if which == "ubiquity":
            out.append(ks_statistic(m.sum(axis=0) / p.n_c, ubiquity_density(p).cdf))
        else:
            out.append(ks_statistic(m.sum(axis=1) / p.n_p, diversification_density(p).cdf))
    return float(np.mean(out))


def test_ubiquity_ks_sitc4_half():
    p, ks_ubi, _ = TABLE2["sitc4-0.5"]
    assert _model_ks(p, 20, "ubiquity") == pytest.approx(ks_ubi, abs=0.05)


def test_diversification_ks_hs6_one():
    p, _, ks_div = TABLE2["hs6-1"]
    assert _model_ks(p, 5, "diversification") == pytest.approx(ks_div, abs=0.05)


def test_ubiquity_concentrates():
    spread = []
    for n_a in (20, 80, 320):
        p = BinomialParams(0.8, 0.2, n_a, 200, 400)
        eta = p.mean_field_density
        v = np.concatenate([simulate_network(p, s).sum(axis=0) / p.n_c for s in range(5)])
        spread.append(np.mean(np.abs(v - eta)))
    assert spread[0] > spread[1] > spread[2]


def test_quiescence_curve():
    p = BinomialParams(0.5, 0.2, 10, 1, 1)
    curve = quiescence_curve(p)
    assert curve[-1] == (1.0, 1.0)
    ys = np.array([y for _, y in curve])
    assert np.all(np.diff(ys) >= 0) and np.all(np.diff(ys, 2) >= -1e-15)
    big = quiescence_curve(BinomialParams(0.5, 0.2, 1000, 1, 1), k_grid=np.linspace(0, 1000, 101))
    for (x1, y1), (x2, y2) in zip(curve[1:-1], big[1:-1]):
        assert x1 == pytest.approx(x2) and y2 < y1


@pytest.mark.parametrize("row", sorted(TABLE2))
def test_derivative_checks(row):
    rep = derivative_checks(TABLE2[row][0])
    assert rep.max_rel_err() < 1e-6, rep.rel_err
    assert rep.ok, rep.signs
    assert len(rep.k_grid) == 20


def test_derivative_checks_empirical_histogram():
    p = BinomialParams(0.8, 0.3, 30, 20, 200)
    hist = RequirementHistogram.from_world(sample_world(p, 3))
    assert hist.n_p == 200
    rep = derivative_checks(p, hist)
    assert rep.max_rel_err() < 1e-6 and rep.ok


def test_ubiquity_shortcut_error_reported():
    rep = derivative_checks(BinomialParams(0.89, 0.3, 70, 10, 10))
    err = rep.ubiquity_approx_rel_err
    assert err[0] == pytest.approx(0, abs=1e-12)
    # Jensen: r**k underestimates the average of (x/n_a)**k for k >= 2
    assert np.all(err[2:] <= 1e-12)


def test_heterogeneous_equal_rates_match_homogeneous():
    p = BinomialParams(0.85, 0.1, 40, 30, 200)
    hom = [simulate_network(p, derive_seed(1, s)).sum(axis=1).mean() for s in range(200)]
    het = []
    for s in range(200):
        w = sample_heterogeneous_world([0.85] * 30, 0.1, 40, 200, derive_seed(2, s))
        het.append(leontief(w).adjacency.sum(axis=1).mean())
    se = np.sqrt(np.var(hom, ddof=1) / 200 + np.var(het, ddof=1) / 200)
    assert abs(np.mean(hom) - np.mean(het)) < 3 * se


def test_heterogeneous_full_country():
    w = sample_heterogeneous_world([1 - 1e-12, 0.5], 0.3, 20, 100, 0)
    assert leontief(w).adjacency[0].sum() == 100


def test_heterogeneous_ordering():
    r_c = [0.6, 0.7, 0.8, 0.9]
    tot = np.zeros(4)
    for s in range(200):
        tot += leontief(sample_heterogeneous_world(r_c, 0.1, 30, 100, s)).adjacency.sum(axis=1)
    assert np.all(np.diff(tot) > 0)


def test_heterogeneous_validation():
    with pytest.raises(ModelError):
        sample_heterogeneous_world([0.5, 1.0], 0.3, 5, 5, 0)


@pytest.mark.parametrize("row", sorted(TABLE2))
def test_simulated_fact_one(row):
    p = TABLE2[row][0]
    prof = degree_profile(leontief(sample_world(p, 9)))
    ok = prof.k_c0 > 0
    assert spearmanr(prof.k_c0[ok], prof.k_c1[ok])[0] < 0


def test_binomial_histogram():
    p = BinomialParams(0.5, 0.3, 6, 1, 100)
    h = RequirementHistogram.binomial(p)
    assert h.n_p == pytest.approx(100)
    np.testing.assert_allclose(h.counts, 100 * binom.pmf(np.arange(7), 6, 0.3))
