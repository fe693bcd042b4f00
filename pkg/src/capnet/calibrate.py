"""Grid calibration of the binomial model against an observed network.

Every (r, n_a) cell gets q from the density constraint ``eta = r**(q n_a)``,
an R^2 for the predicted diversification/average-ubiquity curve, and a KS
distance between simulated and observed proximity distributions.  The
chosen point lies in the intersection of the best R^2 and best KS cells.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distfit import ks_statistic
from .metrics import COUNTRY, degree_profile, density, diagram, proximity_values
from .model import (
    BinomialParams,
    ModelError,
    capabilities_from_diversification,
    diversification_density,
    expected_k_c1,
    missing_requirements,
    sample_heterogeneous_world,
    sample_world,
    ubiquity_density,
)
from .rca import BipartiteNetwork
from .seeding import derive_seed, rng_for

RC_CLIP = 1e-6


class CalibrationError(ValueError):
    pass


class EmptyIntersectionError(CalibrationError):
    def __init__(self, r2_region, ks_region):
        self.r2_region = r2_region
        self.ks_region = ks_region
        super().__init__(
            f"no cell is in both the top-R^2 region {r2_region} and the low-KS region {ks_region}"
        )


def default_r_values() -> np.ndarray:
    return np.round(np.arange(0.50, 0.98 + 1e-9, 0.02), 10)


def default_na_values() -> np.ndarray:
    return np.arange(10, 201, 5)


def axis(lo: float, hi: float, step: float, integer: bool = False) -> np.ndarray:
    if step <= 0 or hi < lo:
        raise CalibrationError(f"bad axis {lo}..{hi} step {step}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    vals = lo + step * np.arange(n)
    return vals.round().astype(int) if integer else np.round(vals, 10)


DENSITY_RULES = ("mean_field", "exact")


def q_from_density(eta: float, r: float, n_a: int, rule: str = "mean_field") -> float:
    """q such that the model density equals ``eta``.  May fall outside (0, 1); see :func:`feasible`.

    ``mean_field`` inverts eta = r**(q n_a), giving q = ln(eta) / (n_a ln r).
    ``exact`` inverts the expected density eta = (1 - q (1 - r))**n_a, which the
    mean-field form understates once q n_a is large.
    """
    if not 0 < eta < 1:
        raise CalibrationError(f"density must lie in (0, 1), got {eta}")
    if not 0 < r < 1:
        raise CalibrationError(f"r must lie in (0, 1), got {r}")
    if n_a < 1:
        raise CalibrationError(f"n_a must be >= 1, got {n_a}")
    if rule == "exact":
        return (1.0 - eta ** (1.0 / n_a)) / (1.0 - r)
    if rule != "mean_field":
        raise CalibrationError(f"unknown density rule {rule!r}; expected one of {DENSITY_RULES}")
    return math.log(eta) / (n_a * math.log(r))


def feasible(q: float) -> bool:
    return 0 < q < 1


@dataclass(eq=False)
class CalibrationGrid:
    r_values: np.ndarray
    na_values: np.ndarray
    eta: float
    q: np.ndarray
    feasible: np.ndarray
    r2: np.ndarray
    ks: np.ndarray
    seeds: np.ndarray  # simulations pooled per cell, 0 where not simulated

    @classmethod
    def empty(cls, eta, r_values=None, na_values=None, rule: str = "mean_field") -> "CalibrationGrid":
        r_values = default_r_values() if r_values is None else np.asarray(r_values, dtype=float)
        na_values = default_na_values() if na_values is None else np.asarray(na_values, dtype=int)
        shape = (len(r_values), len(na_values))
        q = np.empty(shape)
        for i, r in enumerate(r_values):
            for j, n_a in enumerate(na_values):
                q[i, j] = q_from_density(eta, float(r), int(n_a), rule)
        ok = (q > 0) & (q < 1)
        return cls(r_values, na_values, float(eta), q, ok, np.full(shape, np.nan), np.full(shape, np.nan),
                   np.zeros(shape, dtype=int))

    @property
    def shape(self):
        return self.q.shape

    def params(self, i: int, j: int, n_c: int, n_p: int) -> BinomialParams:
        if not self.feasible[i, j]:
            raise CalibrationError(
                f"cell r={self.r_values[i]}, n_a={self.na_values[j]} is infeasible (q={self.q[i, j]:.6g})"
            )
        return BinomialParams(float(self.r_values[i]), float(self.q[i, j]), int(self.na_values[j]), n_c, n_p)

    def merged(self, other: "CalibrationGrid") -> "CalibrationGrid":
        """Combine the R^2 layer of one grid with the KS layer of another over the same axes."""
        if not (np.array_equal(self.r_values, other.r_values) and np.array_equal(self.na_values, other.na_values)):
            raise CalibrationError("grids cover different axes")
        pick = lambda a, b: np.where(np.isnan(a), b, a)
        return CalibrationGrid(self.r_values, self.na_values, self.eta, self.q, self.feasible,
                               pick(self.r2, other.r2), pick(self.ks, other.ks),
                               np.maximum(self.seeds, other.seeds))

    def rows(self):
        """(r, na, q, r2, ks, feasible) per cell in row-major order."""
        for i, r in enumerate(self.r_values):
            for j, n_a in enumerate(self.na_values):
                yield (float(r), int(n_a), float(self.q[i, j]), float(self.r2[i, j]),
                       float(self.ks[i, j]), bool(self.feasible[i, j]))


def _diagram_arrays(pairs):
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or len(arr) < 3:
        raise CalibrationError("diagram needs at least 3 points with k_c0 > 0")
    x, y = arr[:, 0], arr[:, 1]
    if np.any(x <= 0):
        raise CalibrationError("diagram contains k_c0 <= 0")
    if np.all(x == x[0]):
        raise CalibrationError("degenerate diagram: every k_c0 is equal")
    if np.all(y == y[0]):
        raise CalibrationError("degenerate diagram: k_c1 is constant (SS_tot = 0)")
    return x, y


def r_squared(y, pred) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot


def fit_kc0_kc1_grid(pairs, eta: float, n_c: int, n_p: int, r_values=None, na_values=None,
                     rule: str = "mean_field") -> CalibrationGrid:
    """R^2 of the predicted average ubiquity against observed (k_c0, k_c1) pairs, per cell."""
    x, y = _diagram_arrays(pairs)
    grid = CalibrationGrid.empty(eta, r_values, na_values, rule)
    for i, j in zip(*np.nonzero(grid.feasible)):
        pred = expected_k_c1(grid.params(i, j, n_c, n_p), x)
        grid.r2[i, j] = r_squared(y, pred)
    return grid


def simulated_proximity(params: BinomialParams, seeds: int, base_seed: int) -> np.ndarray:
    """Pooled upper-triangle proximities of ``seeds`` sampled worlds."""
    if params.n_p < 2:
        raise CalibrationError("need at least 2 products for a proximity sample")
    parts = []
    for s in range(seeds):
        w = sample_world(params, rng_for(base_seed, s))
        parts.append(proximity_values(missing_requirements(w.C, w.P) == 0))
    out = np.concatenate(parts)
    if len(out) == 0:
        raise CalibrationError("empty simulated proximity sample")
    return out


def _ks_cell(task):
    params, seeds, cell_seed, empirical, weighted = task
    sim = simulated_proximity(params, seeds, cell_seed)
    return ks_statistic(sim, empirical, weighted=weighted)


def proximity_ks_grid(
    empirical_phi,
    n_c: int,
    n_p: int,
    eta: float,
    r_values=None,
    na_values=None,
    seeds: int = 5,
    master_seed: int = 0,
    weighted: bool = False,
    workers: int = 1,
    rule: str = "mean_field",
) -> CalibrationGrid:
    """KS distance between pooled simulated proximities and the observed sample, per cell.

    Cell ``(i, j)`` (flat index ``i * len(na_values) + j``) draws its worlds
    from ``derive_seed(master_seed, index)``, so results do not depend on
    ``workers`` or on evaluation order.
    """
    emp = np.sort(np.asarray(empirical_phi, dtype=float).ravel())
    if len(emp) == 0:
        raise CalibrationError("empirical proximity sample is empty")
    if seeds < 1:
        raise CalibrationError("seeds per cell must be >= 1")
    grid = CalibrationGrid.empty(eta, r_values, na_values, rule)
    n_na = len(grid.na_values)
    cells = [(i, j) for i, j in zip(*np.nonzero(grid.feasible))]
    tasks = [
        (grid.params(i, j, n_c, n_p), seeds, derive_seed(master_seed, i * n_na + j), emp, weighted)
        for i, j in cells
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_ks_cell, tasks, chunksize=4))
    else:
        values = [_ks_cell(t) for t in tasks]
    for (i, j), v in zip(cells, values):
        grid.ks[i, j] = v
        grid.seeds[i, j] = seeds
    return grid


@dataclass(frozen=True)
class Cell:
    r: float
    n_a: int
    q: float
    r2: float
    ks: float

    def to_dict(self) -> dict:
        return {"r": self.r, "n_a": self.n_a, "q": self.q, "r2": self.r2, "ks": self.ks}


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    chosen: Cell
    region: tuple[Cell, ...]
    r2_threshold: float
    ks_threshold: float
    r_c: tuple[float, ...] = ()
    countries: tuple[str, ...] = ()
    clipped: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def params(self, n_c: int, n_p: int) -> BinomialParams:
        return BinomialParams(self.chosen.r, self.chosen.q, self.chosen.n_a, n_c, n_p)

    def to_dict(self) -> dict:
        return {
            "chosen": self.chosen.to_dict(),
            "region": [c.to_dict() for c in self.region],
            "r2_threshold": self.r2_threshold,
            "ks_threshold": self.ks_threshold,
            "r_c": dict(zip(self.countries, self.r_c)) if self.countries else list(self.r_c),
            "clipped": dict(self.clipped),
            "diagnostics": dict(self.diagnostics),
        }


def _cell(grid, i, j) -> Cell:
    return Cell(float(grid.r_values[i]), int(grid.na_values[j]), float(grid.q[i, j]),
                float(grid.r2[i, j]), float(grid.ks[i, j]))


def intersect(grid: CalibrationGrid, r2_quantile: float = 0.1, ks_quantile: float = 0.1) -> CalibrationResult:
    """Cells in the top ``r2_quantile`` by R^2 and the bottom ``ks_quantile`` by KS.

    The chosen cell minimizes KS, then maximizes R^2, then has the smaller n_a
    (and finally the smaller r).
    """
    for name, v in (("r2_quantile", r2_quantile), ("ks_quantile", ks_quantile)):
        if not 0 < v <= 1:
            raise CalibrationError(f"{name} must lie in (0, 1]")
    ok = grid.feasible & np.isfinite(grid.r2) & np.isfinite(grid.ks)
    if not ok.any():
        raise CalibrationError("no feasible cell carries both an R^2 and a KS value")
    t_r2 = float(np.quantile(grid.r2[ok], 1 - r2_quantile))
    t_ks = float(np.quantile(grid.ks[ok], ks_quantile))
    top = ok & (grid.r2 >= t_r2)
    low = ok & (grid.ks <= t_ks)
    both = top & low
    if not both.any():
        as_list = lambda mask: [(float(grid.r_values[i]), int(grid.na_values[j])) for i, j in zip(*np.nonzero(mask))]
        raise EmptyIntersectionError(as_list(top), as_list(low))
    region = [_cell(grid, i, j) for i, j in zip(*np.nonzero(both))]
    chosen = min(region, key=lambda c: (c.ks, -c.r2, c.n_a, c.r))
    return CalibrationResult(chosen, tuple(region), t_r2, t_ks)


@dataclass(frozen=True, eq=False)
class RcEstimate:
    r_c: np.ndarray
    k_ca: np.ndarray  # unclipped real-valued capability counts
    clipped_low: int
    clipped_high: int


def heterogeneous_rc(k_c0, params: BinomialParams) -> RcEstimate:
    """Per-country r_c = k_ca / n_a from the inverted diversification formula, clipped to [1e-6, 1-1e-6]."""
    k_ca = np.atleast_1d(capabilities_from_diversification(params, k_c0))
    raw = k_ca / params.n_a
    r_c = np.clip(raw, RC_CLIP, 1 - RC_CLIP)
    return RcEstimate(r_c, k_ca, int((raw < RC_CLIP).sum()), int((raw > 1 - RC_CLIP).sum()))


@dataclass(frozen=True, eq=False)
class HeterogeneousReport:
    bins: np.ndarray  # diversification values 0..n_p
    target_hist: np.ndarray  # counts of observed k_c0
    heterogeneous_hist: np.ndarray  # mean count per replicate
    homogeneous_hist: np.ndarray
    ks_heterogeneous: float
    ks_homogeneous: float
    mean_k_c0: np.ndarray  # per-country mean simulated diversification
    se_k_c0: np.ndarray
    replicates: int

    def rows(self):
        for b, t, h, g in zip(self.bins, self.target_hist, self.heterogeneous_hist, self.homogeneous_hist):
            yield int(b), float(t), float(h), float(g)


def _weighted_ks(counts_a, counts_b) -> float:
    fa = np.cumsum(counts_a) / counts_a.sum()
    fb = np.cumsum(counts_b) / counts_b.sum()
    return float(np.max(np.abs(fa - fb)))


def heterogeneous_fit_report(
    r_c,
    params: BinomialParams,
    target_k_c0,
    replicates: int = 1000,
    seed: int = 0,
) -> HeterogeneousReport:
    """Average simulated diversification histograms with per-country r_c and with a common r.

    KS distances are between the target histogram and each replicate-pooled
    histogram (equivalently the pooled two-sample statistic).
    """
    r_c = np.asarray(r_c, dtype=float)
    target = np.asarray(target_k_c0, dtype=int)
    if len(target) != len(r_c):
        raise CalibrationError("one r_c per target country is required")
    n_p = params.n_p
    bins = np.arange(n_p + 1)
    het = np.zeros(n_p + 1)
    hom = np.zeros(n_p + 1)
    s1 = np.zeros(len(r_c))
    s2 = np.zeros(len(r_c))
    homog = BinomialParams(params.r, params.q, params.n_a, len(r_c), n_p)
    for i in range(replicates):
        w = sample_heterogeneous_world(r_c, params.q, params.n_a, n_p, rng_for(seed, 0, i))
        k = (missing_requirements(w.C, w.P) == 0).sum(axis=1)
        het += np.bincount(k, minlength=n_p + 1)
        s1 += k
        s2 += k.astype(float) ** 2
        w0 = sample_world(homog, rng_for(seed, 1, i))
        hom += np.bincount((missing_requirements(w0.C, w0.P) == 0).sum(axis=1), minlength=n_p + 1)
    mean = s1 / replicates
    var = np.maximum(s2 / replicates - mean**2, 0.0) * replicates / max(replicates - 1, 1)
    target_hist = np.bincount(target, minlength=n_p + 1).astype(float)
    return HeterogeneousReport(
        bins=bins,
        target_hist=target_hist,
        heterogeneous_hist=het / replicates,
        homogeneous_hist=hom / replicates,
        ks_heterogeneous=_weighted_ks(target_hist, het),
        ks_homogeneous=_weighted_ks(target_hist, hom),
        mean_k_c0=mean,
        se_k_c0=np.sqrt(var / replicates),
        replicates=replicates,
    )


def model_distribution_ks(net_or_matrix, params: BinomialParams, n_grid: int = 10_000) -> dict:
    """KS of observed diversification and ubiquity fractions against the model densities."""
    adj = getattr(net_or_matrix, "adjacency", net_or_matrix)
    adj = np.asarray(adj, dtype=bool)
    n_c, n_p = adj.shape
    u = adj.sum(axis=1) / n_p
    v = adj.sum(axis=0) / n_c
    return {
        "ks_diversification": ks_statistic(u, diversification_density(params, n_grid).cdf),
        "ks_ubiquity": ks_statistic(v, ubiquity_density(params, n_grid).cdf),
    }


def calibrate_network(
    net: BipartiteNetwork,
    r_values=None,
    na_values=None,
    seeds_per_cell: int = 5,
    seed: int = 0,
    r2_quantile: float = 0.1,
    ks_quantile: float = 0.1,
    weighted: bool = False,
    workers: int = 1,
    replicates: int = 0,
    density_rule: str = "mean_field",
) -> tuple[CalibrationGrid, CalibrationResult, HeterogeneousReport | None]:
    """Full pipeline: both grid layers, intersection, r_c and (optionally) the heterogeneous report."""
    n_c, n_p = net.shape
    eta = density(net)
    pairs = diagram(net, COUNTRY)
    r2 = fit_kc0_kc1_grid(pairs, eta, n_c, n_p, r_values, na_values, density_rule)
    ks = proximity_ks_grid(proximity_values(net.adjacency), n_c, n_p, eta, r_values, na_values,
                           seeds=seeds_per_cell, master_seed=seed, weighted=weighted, workers=workers,
                           rule=density_rule)
    grid = r2.merged(ks)
    result = intersect(grid, r2_quantile, ks_quantile)
    params = result.params(n_c, n_p)
    k_c0 = degree_profile(net).k_c0
    keep = k_c0 > 0
    est = heterogeneous_rc(k_c0[keep], params)
    diag = {"eta": eta, "density_rule": density_rule, "n_c": n_c, "n_p": n_p, "seed": seed, "seeds_per_cell": seeds_per_cell}
    try:
        diag.update(model_distribution_ks(net, params))
    except ModelError as exc:
        diag["model_ks_error"] = str(exc)
    report = None
    if replicates > 0:
        report = heterogeneous_fit_report(est.r_c, params, k_c0[keep], replicates, derive_seed(seed, 1 << 32))
        diag["ks_heterogeneous"] = report.ks_heterogeneous
        diag["ks_homogeneous"] = report.ks_homogeneous
    result = CalibrationResult(
        result.chosen, result.region, result.r2_threshold, result.ks_threshold,
        r_c=tuple(float(x) for x in est.r_c),
        countries=tuple(c for c, k in zip(net.countries, keep) if k),
        clipped={"low": est.clipped_low, "high": est.clipped_high},
        diagnostics=diag,
    )
    return grid, result, report
