"""The binomial capabilities model.

Countries hold capability ``a`` with probability ``r``; products require it
with probability ``q``; a country makes a product iff it holds every
capability the product requires (the Leontief, or subset, operator).

Analytic results here are the mean-field ones: a country with ``k``
capabilities is treated as satisfying each requirement independently with
probability ``k / n_a``.  For a country holding a *fixed* set of ``k``
capabilities the exact expectation is ``n_p (1-q)**(n_a-k)``, available as
:func:`exact_conditional_diversification` for comparison.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gammaln
from scipy.stats import binom

from .rca import BipartiteNetwork


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class BinomialParams:
    r: float
    q: float
    n_a: int
    n_c: int = 100
    n_p: int = 500

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise ModelError(f"r must lie in (0, 1), got {self.r}")
        if not 0 < self.q < 1:
            raise ModelError(f"q must lie in (0, 1), got {self.q}")
        if int(self.n_a) != self.n_a or self.n_a < 1:
            raise ModelError(f"n_a must be a positive integer, got {self.n_a}")
        if self.n_c < 1 or self.n_p < 1:
            raise ModelError("n_c and n_p must be positive")
        object.__setattr__(self, "n_a", int(self.n_a))
        object.__setattr__(self, "n_c", int(self.n_c))
        object.__setattr__(self, "n_p", int(self.n_p))

    @property
    def mean_field_density(self) -> float:
        """r ** (q n_a), the density constraint used in calibration."""
        return self.r ** (self.q * self.n_a)

    @property
    def expected_density(self) -> float:
        """Exact E[M_cp] = (1 - q (1 - r)) ** n_a."""
        return (1 - self.q * (1 - self.r)) ** self.n_a

    def to_dict(self) -> dict:
        return {"r": self.r, "q": self.q, "n_a": self.n_a, "n_c": self.n_c, "n_p": self.n_p}


@dataclass(frozen=True, eq=False)
class CapabilityWorld:
    C: np.ndarray  # countries x capabilities
    P: np.ndarray  # products x capabilities

    def __post_init__(self):
        C = np.asarray(self.C, dtype=bool)
        P = np.asarray(self.P, dtype=bool)
        if C.ndim != 2 or P.ndim != 2 or C.shape[1] != P.shape[1]:
            raise ModelError(f"C {C.shape} and P {P.shape} must share the capability axis")
        C.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "P", P)

    @property
    def n_a(self) -> int:
        return self.C.shape[1]

    @property
    def k_c0_a(self) -> np.ndarray:
        return self.C.sum(axis=1)

    @property
    def k_p0_a(self) -> np.ndarray:
        return self.P.sum(axis=1)


@dataclass(frozen=True, eq=False)
class RequirementHistogram:
    """counts[x] = number of products requiring exactly x capabilities."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.ndim != 1 or np.any(c < 0):
            raise ModelError("histogram counts must be a nonnegative vector")
        object.__setattr__(self, "counts", c)

    @property
    def n_a(self) -> int:
        return len(self.counts) - 1

    @property
    def n_p(self) -> float:
        return float(self.counts.sum())

    @classmethod
    def from_world(cls, world: CapabilityWorld) -> "RequirementHistogram":
        return cls(np.bincount(world.k_p0_a, minlength=world.n_a + 1))

    @classmethod
    def binomial(cls, params: BinomialParams) -> "RequirementHistogram":
        x = np.arange(params.n_a + 1)
        return cls(params.n_p * binom.pmf(x, params.n_a, params.q))


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_world(params: BinomialParams, seed) -> CapabilityWorld:
    rng = _rng(seed)
    C = rng.random((params.n_c, params.n_a)) < params.r
    P = rng.random((params.n_p, params.n_a)) < params.q
    return CapabilityWorld(C, P)


def sample_heterogeneous_world(r_by_country, q: float, n_a: int, n_p: int, seed) -> CapabilityWorld:
    """Like :func:`sample_world` but row c of C is Bernoulli(r_c)."""
    r_c = np.asarray(r_by_country, dtype=float)
    if r_c.ndim != 1 or len(r_c) == 0:
        raise ModelError("r_by_country must be a non-empty vector")
    if np.any(~(r_c > 0) | ~(r_c < 1)):
        raise ModelError("every r_c must lie in (0, 1)")
    if not 0 < q < 1:
        raise ModelError(f"q must lie in (0, 1), got {q}")
    rng = _rng(seed)
    C = rng.random((len(r_c), n_a)) < r_c[:, None]
    P = rng.random((n_p, n_a)) < q
    return CapabilityWorld(C, P)


def missing_requirements(C, P) -> np.ndarray:
    """Count of capabilities product p needs that country c lacks."""
    lacks = (~np.asarray(C, dtype=bool)).astype(np.float32)
    return lacks @ np.asarray(P, dtype=np.float32).T


def leontief(world: CapabilityWorld, threshold: float = 1.0) -> BipartiteNetwork:
    """M_cp = 1 iff product p's requirement set is a subset of country c's capabilities."""
    m = missing_requirements(world.C, world.P) == 0
    return BipartiteNetwork.from_matrix(m, threshold=threshold)


def simulate_network(params: BinomialParams, seed) -> np.ndarray:
    """Bare 0/1 matrix of one sampled world (no label bookkeeping)."""
    w = sample_world(params, seed)
    return missing_requirements(w.C, w.P) == 0


# -- mean-field formulas ----------------------------------------------------

def _check_range(name, value, lo, hi):
    v = np.asarray(value, dtype=float)
    if np.any(v < lo) or np.any(v > hi):
        raise ModelError(f"{name} must lie in [{lo}, {hi}]")
    return v


def mean_field_diversity(hist: RequirementHistogram, k_ca, n_a: int | None = None):
    """Sum over x of (k/n_a)**x * hist[x], with 0**0 = 1."""
    n_a = hist.n_a if n_a is None else n_a
    k = _check_range("k_ca", k_ca, 0, n_a)
    x = np.arange(len(hist.counts))
    frac = np.asarray(k / n_a, dtype=float)[..., None]
    out = (np.power(frac, x) * hist.counts).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def expected_diversification(params: BinomialParams, k_ca, form: str = "binomial"):
    """Mean-field diversification of a country with ``k_ca`` capabilities.

    ``form="exponential"`` gives the large-n_a limit ``n_p exp(q (k - n_a))``;
    it is a diagnostic and never used in calibration.
    """
    k = _check_range("k_ca", k_ca, 0, params.n_a)
    if form == "binomial":
        out = params.n_p * (params.q * k / params.n_a + 1 - params.q) ** params.n_a
    elif form == "exponential":
        out = params.n_p * np.exp(params.q * (k - params.n_a))
    else:
        raise ValueError(f"unknown form {form!r}")
    return float(out) if np.ndim(out) == 0 else out


def exact_conditional_diversification(params: BinomialParams, k_ca):
    """E[k_c0 | the country holds a fixed set of k_ca capabilities]."""
    k = _check_range("k_ca", k_ca, 0, params.n_a)
    out = params.n_p * (1 - params.q) ** (params.n_a - k)
    return float(out) if np.ndim(out) == 0 else out


def expected_ubiquity(params: BinomialParams, k_pa):
    k = _check_range("k_pa", k_pa, 0, params.n_a)
    out = params.n_c * params.r ** k
    return float(out) if np.ndim(out) == 0 else out


def capabilities_from_diversification(params: BinomialParams, k_c0):
    """Invert the mean-field diversification: k_ca as a real number (may fall outside [0, n_a])."""
    k0 = np.asarray(k_c0, dtype=float)
    if np.any(k0 <= 0):
        raise ModelError("k_c0 must be positive")
    n_a, q = params.n_a, params.q
    out = n_a / q * ((k0 / params.n_p) ** (1.0 / n_a) + q - 1)
    return float(out) if out.ndim == 0 else out


def expected_k_c1(params: BinomialParams, k_c0):
    """Average ubiquity of a country's products as a function of its diversification."""
    k0 = np.asarray(k_c0, dtype=float)
    if np.any(k0 <= 0):
        raise ModelError("k_c0 must be positive")
    r, q, n_a = params.r, params.q, params.n_a
    base = r * (k0 / params.n_p) ** (1.0 / n_a) + (1 - q) * (1 - r)
    out = params.n_p * params.n_c / k0 * base ** n_a
    return float(out) if out.ndim == 0 else out


def expected_k_c1_from_capabilities(params: BinomialParams, k_ca):
    """Average ubiquity of a country's products as a function of its capability count.

    n_c (r q k/n_a + 1 - q)**n_a / (q k/n_a + 1 - q)**n_a
    """
    k = _check_range("k_ca", k_ca, 0, params.n_a)
    r, q, n_a = params.r, params.q, params.n_a
    frac = k / n_a
    out = params.n_c * ((r * q * frac + 1 - q) / (q * frac + 1 - q)) ** n_a
    return float(out) if np.ndim(out) == 0 else out


# -- implied distributions --------------------------------------------------

def _log_binom(n, x):
    return gammaln(n + 1) - gammaln(x + 1) - gammaln(n - x + 1)


def diversification_support(params: BinomialParams) -> tuple[float, float]:
    return (1 - params.q) ** params.n_a, 1.0


def ubiquity_support(params: BinomialParams) -> tuple[float, float]:
    return params.r ** params.n_a, 1.0


def _latent_from_u(params, u):
    return params.n_a / params.q * (u ** (1.0 / params.n_a) + params.q - 1)


def diversification_pdf(params: BinomialParams, u):
    """Unnormalized density of u = k_c0 / n_p (generalized binomial coefficient)."""
    u = np.asarray(u, dtype=float)
    lo, hi = diversification_support(params)
    if np.any(u < lo * (1 - 1e-12)) or np.any(u > hi):
        raise ModelError(f"u outside support ({lo:.6g}, 1]")
    x = np.clip(_latent_from_u(params, u), 0.0, params.n_a)
    n_a, r = params.n_a, params.r
    logp = _log_binom(n_a, x) + x * np.log(r) + (n_a - x) * np.log1p(-r)
    out = params.n_p / (params.q * u) * np.exp(logp)
    return float(out) if out.ndim == 0 else out


def ubiquity_pdf(params: BinomialParams, v):
    """Unnormalized density of v = k_p0 / n_c.

    The Jacobian 1/(v log r) is taken in absolute value so the density is
    nonnegative.
    """
    v = np.asarray(v, dtype=float)
    lo, hi = ubiquity_support(params)
    if np.any(v < lo * (1 - 1e-12)) or np.any(v > hi):
        raise ModelError(f"v outside support ({lo:.6g}, 1]")
    log_r = np.log(params.r)
    y = np.clip(np.log(v) / log_r, 0.0, params.n_a)
    n_a, q = params.n_a, params.q
    logp = _log_binom(n_a, y) + y * np.log(q) + (n_a - y) * np.log1p(-q)
    out = params.n_c / (v * abs(log_r)) * np.exp(logp)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class GridDensity:
    """A density tabulated on a support grid and normalized by the trapezoid rule."""

    grid: np.ndarray
    density: np.ndarray  # normalized
    cumulative: np.ndarray
    normalization: float  # A such that A * unnormalized integrates to 1

    def pdf(self, x):
        return np.interp(x, self.grid, self.density, left=0.0, right=0.0)

    def cdf(self, x):
        return np.interp(x, self.grid, self.cumulative, left=0.0, right=1.0)

    def integral(self) -> float:
        return float(trapezoid(self.density, self.grid))


def _tabulate(values, unnormalized) -> GridDensity:
    order = np.argsort(values)
    g = np.asarray(values, dtype=float)[order]
    d = np.asarray(unnormalized, dtype=float)[order]
    d = np.where(np.isfinite(d), d, 0.0)
    steps = np.diff(g) * 0.5 * (d[1:] + d[:-1])
    total = steps.sum()
    if not total > 0:
        raise ModelError("density has no mass on its support grid")
    cum = np.concatenate([[0.0], np.cumsum(steps)]) / total
    return GridDensity(g, d / total, cum, 1.0 / total)


def diversification_density(params: BinomialParams, n_grid: int = 10_000) -> GridDensity:
    # Grid uniform in the latent capability count so resolution follows the mass.
    x = np.linspace(0.0, params.n_a, n_grid)
    u = (params.q * x / params.n_a + 1 - params.q) ** params.n_a
    u[-1] = 1.0
    return _tabulate(u, diversification_pdf(params, np.clip(u, *diversification_support(params))))


def ubiquity_density(params: BinomialParams, n_grid: int = 10_000) -> GridDensity:
    y = np.linspace(0.0, params.n_a, n_grid)
    v = params.r ** y
    return _tabulate(v, ubiquity_pdf(params, np.clip(v, *ubiquity_support(params))))


# -- quiescence trap --------------------------------------------------------

def quiescence_curve(params: BinomialParams, k_grid=None, points: int = 101) -> list[tuple[float, float]]:
    """(capability fraction, product fraction) along the diversification curve."""
    if k_grid is None:
        k_grid = np.linspace(0, params.n_a, points)
    k = _check_range("k_ca", k_grid, 0, params.n_a)
    y = np.atleast_1d(expected_diversification(params, k)) / params.n_p
    return list(zip((np.atleast_1d(k) / params.n_a).tolist(), y.tolist()))


# -- derivatives ------------------------------------------------------------

def d_diversification(params: BinomialParams, k_ca):
    q, n_a = params.q, params.n_a
    return q * params.n_p * (q * np.asarray(k_ca, dtype=float) / n_a + 1 - q) ** (n_a - 1)


def d_k_c1(params: BinomialParams, k_c0):
    r, q, n_a = params.r, params.q, params.n_a
    k0 = np.asarray(k_c0, dtype=float)
    s = (1 - q) * (1 - r)
    base = r * (k0 / params.n_p) ** (1.0 / n_a) + s
    return -params.n_p * params.n_c / k0**2 * s * base ** (n_a - 1)


def d_mean_field_diversity(hist: RequirementHistogram, k_ca):
    """First derivative of the general diversification sum with respect to k_ca."""
    n_a = hist.n_a
    x = np.arange(1, n_a + 1)
    frac = np.asarray(k_ca, dtype=float)[..., None] / n_a
    return (x * np.power(frac, x - 1) * hist.counts[1:]).sum(axis=-1) / n_a


def d2_mean_field_diversity(hist: RequirementHistogram, k_ca):
    n_a = hist.n_a
    x = np.arange(2, n_a + 1)
    frac = np.asarray(k_ca, dtype=float)[..., None] / n_a
    return (x * (x - 1) * np.power(frac, x - 2) * hist.counts[2:]).sum(axis=-1) / n_a**2


@dataclass(frozen=True, eq=False)
class DerivativeReport:
    k_grid: np.ndarray
    k_c0_grid: np.ndarray
    d16: np.ndarray
    d25: np.ndarray
    d33: np.ndarray
    d34: np.ndarray
    rel_err: dict  # max |analytic - fd| / (1 + |analytic|) per formula
    signs: dict  # formula -> sign claim holds on the whole grid
    ubiquity_approx_rel_err: np.ndarray  # exact binomial average vs r**k

    @property
    def ok(self) -> bool:
        return all(self.signs.values())

    def max_rel_err(self) -> float:
        return max(self.rel_err.values())


def _rel(a, b):
    return float(np.max(np.abs(a - b) / (1 + np.abs(a))))


def derivative_checks(
    params: BinomialParams,
    hist: RequirementHistogram | None = None,
    n_points: int = 20,
    h: float = 1e-5,
) -> DerivativeReport:
    """Analytic derivatives against central differences on ``n_points`` grids.

    The general-histogram derivatives are taken with respect to k_ca (hence
    the 1/n_a and 1/n_a**2 factors); the second derivative is differenced
    from the analytic first derivative to keep rounding error small.
    """
    hist = hist if hist is not None else RequirementHistogram.binomial(params)
    n_a, n_p = params.n_a, params.n_p
    k = np.linspace(0, n_a, n_points + 1)[1:]
    f16 = lambda t: n_p * (params.q * t / n_a + 1 - params.q) ** n_a
    a16 = d_diversification(params, k)
    fd16 = (f16(k + h) - f16(k - h)) / (2 * h)

    u_lo = (1 - params.q) ** n_a
    k0 = n_p * np.linspace(u_lo, 1.0, n_points + 1)[1:]
    a25 = d_k_c1(params, k0)
    fd25 = (expected_k_c1(params, k0 + h) - expected_k_c1(params, k0 - h)) / (2 * h)

    def f12(t):
        x = np.arange(n_a + 1)
        return (np.power(np.asarray(t)[..., None] / n_a, x) * hist.counts).sum(axis=-1)

    a33 = d_mean_field_diversity(hist, k)
    fd33 = (f12(k + h) - f12(k - h)) / (2 * h)
    a34 = d2_mean_field_diversity(hist, k)
    fd34 = (d_mean_field_diversity(hist, k + h) - d_mean_field_diversity(hist, k - h)) / (2 * h)

    # Expected share of countries able to make a product needing k_pa
    # capabilities, averaging (x/n_a)**k_pa over Binomial(n_a, r) capability
    # counts, against the r**k_pa shortcut.
    x = np.arange(n_a + 1)
    w = binom.pmf(x, n_a, params.r)
    kp = np.arange(n_a + 1)
    exact = (np.power(x[None, :] / n_a, kp[:, None]) * w).sum(axis=1)
    approx = params.r ** kp

    return DerivativeReport(
        k_grid=k,
        k_c0_grid=k0,
        d16=a16,
        d25=a25,
        d33=a33,
        d34=a34,
        rel_err={"d16": _rel(a16, fd16), "d25": _rel(a25, fd25), "d33": _rel(a33, fd33), "d34": _rel(a34, fd34)},
        signs={
            "d16>=0": bool(np.all(a16 >= 0)),
            "d25<=0": bool(np.all(a25 <= 0)),
            "d33>=0": bool(np.all(a33 >= 0)),
            "d34>0": bool(np.all(a34 > 0)),
        },
        ubiquity_approx_rel_err=approx / exact - 1,
    )
