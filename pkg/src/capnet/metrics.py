"""Degree metrics, coupled-degree diagrams, proximity and density."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rca import BipartiteNetwork, NetworkError

COUNTRY = "country"
PRODUCT = "product"


@dataclass(frozen=True, eq=False)
class DegreeProfile:
    """Diversification/ubiquity and their first reflections.

    ``k_c1`` / ``k_p1`` hold NaN where the zeroth-order degree is 0; use the
    ``*_defined`` masks rather than testing for NaN downstream.
    """

    k_c0: np.ndarray
    k_p0: np.ndarray
    k_c1: np.ndarray
    k_p1: np.ndarray

    @property
    def k_c1_defined(self) -> np.ndarray:
        return self.k_c0 > 0

    @property
    def k_p1_defined(self) -> np.ndarray:
        return self.k_p0 > 0


@dataclass(frozen=True, eq=False)
class ProximityMatrix:
    products: tuple[str, ...]
    phi: np.ndarray
    # True where both ubiquities are zero and phi was set to 0 by convention
    undefined: np.ndarray

    def upper_triangle(self) -> np.ndarray:
        """One value per unordered product pair, diagonal excluded."""
        iu = np.triu_indices(len(self.products), k=1)
        return self.phi[iu]


def degree_profile(net: BipartiteNetwork) -> DegreeProfile:
    m = net.adjacency.astype(np.int64)
    k_c0 = m.sum(axis=1)
    k_p0 = m.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        k_c1 = np.where(k_c0 > 0, (m @ k_p0) / k_c0, np.nan)
        k_p1 = np.where(k_p0 > 0, (k_c0 @ m) / k_p0, np.nan)
    return DegreeProfile(k_c0, k_p0, k_c1.astype(float), k_p1.astype(float))


def cooccurrence(adjacency) -> np.ndarray:
    """Number of countries exporting both p and p' (float matrix, exact below 2**24)."""
    a = np.asarray(adjacency)
    # float32 sums of 0/1 are exact up to 2**24 countries and much faster than integer matmul
    a = a.astype(np.float32 if a.shape[0] < 2**24 else np.float64)
    return a.T @ a


def proximity(net: BipartiteNetwork) -> ProximityMatrix:
    """Co-export count divided by the larger of the two ubiquities."""
    co = cooccurrence(net.adjacency).astype(float)
    kp = net.adjacency.sum(axis=0).astype(float)
    denom = np.maximum.outer(kp, kp)
    undefined = denom == 0
    phi = np.divide(co, denom, out=np.zeros_like(co), where=~undefined)
    return ProximityMatrix(net.products, phi, undefined)


def proximity_values(adjacency) -> np.ndarray:
    """Upper-triangle proximities straight from a 0/1 matrix.

    Same numbers as ``proximity(net).upper_triangle()`` but in float32 and
    without materialising the full float64 matrix; used in the simulation
    loops where millions of pairs are pooled.
    """
    adj = np.asarray(adjacency)
    n = adj.shape[1]
    co = cooccurrence(adj)
    kp = adj.sum(axis=0).astype(np.float32)
    iu = np.triu_indices(n, k=1)
    num = co[iu]
    den = np.maximum(kp[iu[0]], kp[iu[1]])
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def density(net: BipartiteNetwork) -> float:
    n_c, n_p = net.shape
    if n_c == 0 or n_p == 0:
        raise NetworkError("density of a network with an empty dimension is undefined")
    return float(net.adjacency.sum()) / (n_c * n_p)


def diagram(net: BipartiteNetwork, axis: str = COUNTRY) -> list[tuple[float, float]]:
    """(k0, k1) pairs for nodes with defined k1, sorted by k0 then k1."""
    prof = degree_profile(net)
    if axis == COUNTRY:
        k0, k1 = prof.k_c0, prof.k_c1
    elif axis == PRODUCT:
        k0, k1 = prof.k_p0, prof.k_p1
    else:
        raise ValueError(f"axis must be {COUNTRY!r} or {PRODUCT!r}, got {axis!r}")
    ok = k0 > 0
    return sorted(zip(k0[ok].astype(float).tolist(), k1[ok].tolist()))


def diagram_slope(pairs) -> float:
    """Least-squares slope of k1 on k0; NaN when k0 has no spread."""
    arr = np.asarray(pairs, dtype=float)
    if len(arr) < 2:
        return float("nan")
    x, y = arr[:, 0], arr[:, 1]
    sx = x - x.mean()
    ss = float(sx @ sx)
    if ss == 0:
        return float("nan")
    return float(sx @ (y - y.mean()) / ss)
