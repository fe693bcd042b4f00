"""Maximum-likelihood fits (normal, log-normal, two-parameter Weibull) and KS distances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import stats
from scipy.special import logsumexp

FAMILIES = ("normal", "lognormal", "weibull")

WEIBULL_K_BOUNDS = (1e-3, 1e3)
WEIBULL_MAX_ITER = 200


class FitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Sample:
    values: np.ndarray
    positives_only: bool = False
    n_excluded: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise FitError("sample contains NaN or Inf")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def positive(self) -> "Sample":
        """Drop values <= 0, recording how many were removed."""
        if self.positives_only:
            return self
        keep = self.values > 0
        return Sample(self.values[keep], True, self.n_excluded + int((~keep).sum()))


def as_sample(s) -> Sample:
    return s if isinstance(s, Sample) else Sample(np.asarray(s, dtype=float))


@dataclass(frozen=True, eq=False)
class FitResult:
    family: str
    params: dict
    log_likelihood: float
    ks_stat: float
    n: int
    n_excluded: int = 0
    iterations: int = 0

    def frozen(self):
        p = self.params
        if self.family == "normal":
            return stats.norm(loc=p["mu"], scale=p["sigma"])
        if self.family == "lognormal":
            return stats.lognorm(s=p["sigma"], scale=math.exp(p["mu"]))
        if self.family == "weibull":
            return stats.weibull_min(c=p["shape"], scale=p["scale"])
        raise ValueError(self.family)

    def pdf(self, x):
        return self.frozen().pdf(x)

    def cdf(self, x):
        return self.frozen().cdf(x)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": dict(self.params),
            "log_likelihood": self.log_likelihood,
            "ks": self.ks_stat,
            "n": self.n,
            "n_excluded": self.n_excluded,
        }


def _finish(family, params, values, n_excluded, iterations=0) -> FitResult:
    res = FitResult(family, params, 0.0, 0.0, len(values), n_excluded, iterations)
    dist = res.frozen()
    ll = float(np.sum(dist.logpdf(values)))
    ks = ks_statistic(values, dist.cdf)
    return FitResult(family, params, ll, ks, len(values), n_excluded, iterations)


def _normal_mle(x: np.ndarray) -> tuple[float, float]:
    if len(x) < 2:
        raise FitError("need at least 2 values")
    mu = float(x.mean())
    sigma = float(np.sqrt(np.mean((x - mu) ** 2)))
    if not sigma > 0:
        raise FitError("zero variance sample")
    return mu, sigma


def fit_normal(s) -> FitResult:
    s = as_sample(s)
    mu, sigma = _normal_mle(s.values)
    return _finish("normal", {"mu": mu, "sigma": sigma}, s.values, s.n_excluded)


def fit_lognormal(s) -> FitResult:
    s = as_sample(s).positive()
    if len(s) < 2:
        raise FitError(f"fewer than 2 positive values ({s.n_excluded} excluded)")
    mu, sigma = _normal_mle(np.log(s.values))
    return _finish("lognormal", {"mu": mu, "sigma": sigma}, s.values, s.n_excluded)


def weibull_shape_residual(k: float, logx: np.ndarray) -> float:
    """sum(x^k ln x)/sum(x^k) - 1/k - mean(ln x); zero at the MLE shape."""
    y = logx - logx.mean()
    w = np.exp(k * y - np.max(k * y))
    return float((w @ y) / w.sum() - 1.0 / k)


def _weibull_shape(logx: np.ndarray) -> tuple[float, int]:
    # Work on centred logs: the residual is scale invariant and this keeps
    # exp(k*y) in range for any k in the bracket.
    y = logx - logx.mean()

    def g_and_dg(k):
        ky = k * y
        w = np.exp(ky - ky.max())
        w /= w.sum()
        m1 = w @ y
        var = w @ (y - m1) ** 2
        return m1 - 1.0 / k, var + 1.0 / (k * k)

    lo, hi = WEIBULL_K_BOUNDS
    g_lo, _ = g_and_dg(lo)
    g_hi, _ = g_and_dg(hi)
    if not (g_lo < 0 < g_hi):
        raise FitError("Weibull shape has no root in [1e-3, 1e3] (degenerate sample)")
    sd = y.std()
    k = min(max(1.2825 / sd, lo), hi) if sd > 0 else 1.0
    for it in range(1, WEIBULL_MAX_ITER + 1):
        g, dg = g_and_dg(k)
        if g == 0 or abs(g) < 1e-13:
            return k, it
        if g < 0:
            lo = k
        else:
            hi = k
        step = k - g / dg
        k_new = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(k_new - k) <= 1e-15 * k:
            return k_new, it
        k = k_new
    raise FitError(f"Weibull shape did not converge in {WEIBULL_MAX_ITER} iterations")


def fit_weibull(s) -> FitResult:
    s = as_sample(s).positive()
    if len(s) < 2:
        raise FitError(f"fewer than 2 positive values ({s.n_excluded} excluded)")
    logx = np.log(s.values)
    k, iters = _weibull_shape(logx)
    log_scale = logx.mean() + (logsumexp(k * (logx - logx.mean())) - math.log(len(logx))) / k
    params = {"shape": float(k), "scale": float(math.exp(log_scale))}
    return _finish("weibull", params, s.values, s.n_excluded, iters)


_FITTERS = {"normal": fit_normal, "lognormal": fit_lognormal, "weibull": fit_weibull}


def fit(family: str, s) -> FitResult:
    try:
        return _FITTERS[family](s)
    except KeyError:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}") from None


def ks_statistic(sample, reference, weighted: bool = False, clip: float = 1e-3) -> float:
    """Kolmogorov-Smirnov distance.

    ``reference`` is either a CDF callable (one-sample, CDF assumed
    continuous) or a second sample (two-sample).  With ``weighted=True`` each
    gap is divided by ``sqrt(F(1-F))``, F being the reference CDF (the pooled
    ECDF in the two-sample case) clipped to ``[clip, 1-clip]``.
    """
    x = np.sort(np.asarray(getattr(sample, "values", sample), dtype=float).ravel())
    if len(x) == 0:
        raise FitError("empty sample")
    n = len(x)
    if callable(reference):
        ux = np.unique(x)
        f_hi = np.searchsorted(x, ux, side="right") / n
        f_lo = np.searchsorted(x, ux, side="left") / n
        F = np.asarray(reference(ux), dtype=float)
        gap = np.maximum(np.abs(f_hi - F), np.abs(f_lo - F))
        if weighted:
            Fc = np.clip(F, clip, 1 - clip)
            gap = gap / np.sqrt(Fc * (1 - Fc))
        return float(gap.max())
    y = np.sort(np.asarray(getattr(reference, "values", reference), dtype=float).ravel())
    if len(y) == 0:
        raise FitError("empty reference sample")
    m = len(y)
    grid = np.unique(np.concatenate([x, y]))
    fa = np.searchsorted(x, grid, side="right") / n
    fb = np.searchsorted(y, grid, side="right") / m
    gap = np.abs(fa - fb)
    if weighted:
        h = np.clip((n * fa + m * fb) / (n + m), clip, 1 - clip)
        gap = gap / np.sqrt(h * (1 - h))
    return float(gap.max())


def ks_critical_value(n: int, m: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value c(alpha) * sqrt((n+m)/(n m))."""
    c = math.sqrt(-0.5 * math.log(alpha / 2))
    return c * math.sqrt((n + m) / (n * m))


@dataclass(frozen=True, eq=False)
class Ranking:
    fits: list
    failures: dict = field(default_factory=dict)
    n: int = 0
    n_excluded: int = 0

    def order(self) -> list[str]:
        return [f.family for f in self.fits]

    def best(self) -> FitResult:
        return self.fits[0]

    def worst(self) -> FitResult:
        return self.fits[-1]

    def to_dict(self) -> dict:
        return {
            "ranking": self.order(),
            "fits": {f.family: f.to_dict() for f in self.fits},
            "failures": dict(self.failures),
            "n": self.n,
            "n_excluded": self.n_excluded,
        }


def rank_families(s, families: Iterable[str] = FAMILIES) -> Ranking:
    """Fit every family on the common positive sub-sample; best likelihood first."""
    pos = as_sample(s).positive()
    fits, failures = [], {}
    for fam in families:
        try:
            fits.append(fit(fam, pos))
        except FitError as exc:
            failures[fam] = str(exc)
    if not fits:
        raise FitError(f"every fit failed: {failures}")
    fits.sort(key=lambda f: -f.log_likelihood)
    return Ranking(fits, failures, len(pos), pos.n_excluded)


def ecdf(values) -> Callable:
    x = np.sort(np.asarray(values, dtype=float))
    return lambda t: np.searchsorted(x, t, side="right") / len(x)
