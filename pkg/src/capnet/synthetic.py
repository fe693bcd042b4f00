"""Planted-model trade tables.

Samples a capability world, takes its Leontief network as the target M, and
builds dollar values whose RCA thresholded at ``r_star`` reproduces M.  Lets
the ingest -> rca -> calibrate pipeline run end to end without licensed data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ExportTable
from .model import BinomialParams, missing_requirements, sample_world


@dataclass(frozen=True, eq=False)
class PlantedTable:
    table: ExportTable
    target: np.ndarray  # the planted 0/1 matrix after dropping empty rows/columns
    params: BinomialParams
    iterations: int
    mismatches: int  # cells where thresholded RCA disagrees with the target
    dropped_countries: int
    dropped_products: int


def _rca(x: np.ndarray) -> np.ndarray:
    rows = x.sum(axis=1, keepdims=True)
    cols = x.sum(axis=0, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = x * x.sum() / (rows * cols)
    return np.nan_to_num(out)


def values_for_network(
    m: np.ndarray,
    rng: np.random.Generator,
    r_star: float = 1.0,
    margin: float = 1.05,
    max_iter: int = 500,
    noise_sigma: float = 1.0,
) -> tuple[np.ndarray, int]:
    """Positive values on the edges of ``m`` with RCA >= ``r_star`` on every edge.

    Starts from lognormal values and repeatedly scales up edges whose RCA is
    below ``margin * r_star``.  Off-edge cells are zero, hence RCA 0.  A full
    row or column cannot have RCA >= 1 everywhere unless every entry equals 1
    exactly (its share-weighted mean RCA is 1), so those may stay mismatched.
    """
    m = np.asarray(m, dtype=bool)
    x = np.where(m, rng.lognormal(0.0, noise_sigma, m.shape), 0.0)
    target = margin * r_star
    it = 0
    for it in range(1, max_iter + 1):
        low = m & (_rca(x) < target)
        if not low.any():
            break
        rca = _rca(x)
        x = np.where(low, x * np.sqrt(target / np.maximum(rca, 1e-12)), x)
    return x, it


def planted_trade_table(
    params: BinomialParams,
    seed,
    r_star: float = 1.0,
    max_iter: int = 500,
) -> PlantedTable:
    rng = np.random.default_rng(seed)
    world = sample_world(params, rng)
    m = missing_requirements(world.C, world.P) == 0
    keep_c = m.sum(axis=1) > 0
    keep_p = m.sum(axis=0) > 0
    m = m[keep_c][:, keep_p]
    if m.size == 0:
        raise ValueError("planted network is empty; raise r or lower q")
    x, iters = values_for_network(m, rng, r_star=r_star, max_iter=max_iter)
    mismatches = int(((_rca(x) >= r_star) != m).sum())
    wc = len(str(params.n_c - 1))
    wp = len(str(params.n_p - 1))
    countries = [f"c{i:0{wc}d}" for i in np.flatnonzero(keep_c)]
    products = [f"p{j:0{wp}d}" for j in np.flatnonzero(keep_p)]
    return PlantedTable(
        table=ExportTable(countries, products, x),
        target=m,
        params=params,
        iterations=iters,
        mismatches=mismatches,
        dropped_countries=int((~keep_c).sum()),
        dropped_products=int((~keep_p).sum()),
    )
