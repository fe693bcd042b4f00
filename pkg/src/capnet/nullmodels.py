"""Randomized ensembles for testing the diversification-ubiquity relation.

Four constructions, labelled by what they provably preserve:

====  ================================  =============================
model operation                          preserved exactly
====  ================================  =============================
1     uniform placement of the edges     total edge count
2     shuffle inside every column        every product ubiquity
3     shuffle inside every row           every country diversification
4     checkerboard swap chain            both degree sequences
====  ================================  =============================
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import COUNTRY, PRODUCT, diagram, diagram_slope
from .rca import BipartiteNetwork
from .seeding import derive_seed

PRESERVES = {
    1: "edge count",
    2: "product ubiquity (column sums)",
    3: "country diversification (row sums)",
    4: "country diversification and product ubiquity",
}

NO_SWAP = "no_swap"
_CHUNK = 1 << 20


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class EnsembleSpec:
    model: int
    replicates: int = 100
    seed: int = 0
    swap_factor: int = 100

    def __post_init__(self):
        if self.model not in PRESERVES:
            raise ValueError(f"model must be one of 1-4, got {self.model}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.swap_factor < 1:
            raise ValueError("swap_factor must be >= 1")


def null1(net: BipartiteNetwork, seed) -> BipartiteNetwork:
    n_c, n_p = net.shape
    flat = np.zeros(n_c * n_p, dtype=bool)
    picks = _rng(seed).choice(n_c * n_p, size=net.n_edges, replace=False)
    flat[picks] = True
    return net.with_adjacency(flat.reshape(n_c, n_p))


def shuffle_columns(net: BipartiteNetwork, seed) -> BipartiteNetwork:
    adj = net.adjacency
    order = np.argsort(_rng(seed).random(adj.shape), axis=0, kind="stable")
    return net.with_adjacency(np.take_along_axis(adj, order, axis=0))


def shuffle_rows(net: BipartiteNetwork, seed) -> BipartiteNetwork:
    adj = net.adjacency
    order = np.argsort(_rng(seed).random(adj.shape), axis=1, kind="stable")
    return net.with_adjacency(np.take_along_axis(adj, order, axis=1))


# Text labels: model 2 shuffles within columns, model 3 within rows.
null2 = shuffle_columns
null3 = shuffle_rows


def swap_chain(adjacency, attempts: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Run ``attempts`` checkerboard-swap proposals; return (matrix, accepted)."""
    adj = np.asarray(adjacency, dtype=bool)
    n_c, n_p = adj.shape
    rows, cols = np.nonzero(adj)
    n_edges = len(rows)
    if n_edges < 2 or attempts <= 0:
        return adj.copy(), 0
    flat = bytearray(adj.astype(np.uint8).tobytes())
    ec = rows.tolist()
    ep = cols.tolist()
    accepted = 0
    done = 0
    while done < attempts:
        size = min(_CHUNK, attempts - done)
        picks = rng.integers(0, n_edges, size=(size, 2)).tolist()
        for i, j in picks:
            c1 = ec[i]
            c2 = ec[j]
            if c1 == c2:
                continue
            p1 = ep[i]
            p2 = ep[j]
            if p1 == p2:
                continue
            a = c1 * n_p + p2
            b = c2 * n_p + p1
            if flat[a] or flat[b]:
                continue
            flat[c1 * n_p + p1] = 0
            flat[c2 * n_p + p2] = 0
            flat[a] = 1
            flat[b] = 1
            ep[i] = p2
            ep[j] = p1
            accepted += 1
        done += size
    out = np.frombuffer(bytes(flat), dtype=np.uint8).reshape(n_c, n_p).astype(bool)
    return out, accepted


def null4(net: BipartiteNetwork, spec: EnsembleSpec | None = None, seed=None) -> BipartiteNetwork:
    """Degree-preserving randomization by checkerboard swaps.

    ``swap_factor * edges`` proposals are made; rejected proposals count
    toward the budget.  If nothing was accepted the network comes back
    unchanged with the ``"no_swap"`` flag.
    """
    spec = spec or EnsembleSpec(model=4)
    rng = _rng(spec.seed if seed is None else seed)
    adj, accepted = swap_chain(net.adjacency, spec.swap_factor * net.n_edges, rng)
    return net.with_adjacency(adj, flags={NO_SWAP} if accepted == 0 else ())


def randomize(net: BipartiteNetwork, spec: EnsembleSpec, seed) -> BipartiteNetwork:
    if spec.model == 1:
        return null1(net, seed)
    if spec.model == 2:
        return null2(net, seed)
    if spec.model == 3:
        return null3(net, seed)
    return null4(net, spec, seed=seed)


@dataclass(frozen=True)
class BinStat:
    side: str
    k0_bin: float
    mean_k1: float
    std_k1: float
    count: int


@dataclass(frozen=True)
class EnsembleSummary:
    model: int
    replicates: int
    bins: tuple[BinStat, ...]
    # per-replicate least-squares slope of k1 on k0, keyed by side
    slopes: dict

    def side(self, side: str) -> list[BinStat]:
        return [b for b in self.bins if b.side == side]

    def slope_band(self, side: str = COUNTRY, width: float = 2.0) -> tuple[float, float]:
        s = np.asarray(self.slopes[side], dtype=float)
        s = s[np.isfinite(s)]
        mu = float(s.mean())
        sd = float(s.std(ddof=1)) if len(s) > 1 else 0.0
        return mu - width * sd, mu + width * sd


def _bin_means(pairs, bin_width: float) -> dict:
    acc = defaultdict(list)
    for k0, k1 in pairs:
        acc[np.floor(k0 / bin_width) * bin_width].append(k1)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def ensemble_diagram(
    net: BipartiteNetwork,
    spec: EnsembleSpec,
    bin_width: float = 1.0,
    seeds: Sequence[int] | None = None,
) -> EnsembleSummary:
    """Run ``spec.replicates`` randomizations and aggregate their diagrams by k0 bin.

    Each replicate contributes one value per bin (its mean k1 there); bin
    standard deviations are across replicates (ddof=1, NaN for a bin seen
    only once).  Replicate ``i`` uses ``derive_seed(spec.seed, i)`` unless
    explicit ``seeds`` are given.
    """
    if seeds is None:
        seeds = [derive_seed(spec.seed, i) for i in range(spec.replicates)]
    elif len(seeds) != spec.replicates:
        raise ValueError("len(seeds) must equal spec.replicates")
    per_bin = {COUNTRY: defaultdict(list), PRODUCT: defaultdict(list)}
    slopes = {COUNTRY: [], PRODUCT: []}
    for s in seeds:
        rand = randomize(net, spec, s)
        for side in (COUNTRY, PRODUCT):
            pairs = diagram(rand, side)
            slopes[side].append(diagram_slope(pairs))
            for k, v in _bin_means(pairs, bin_width).items():
                per_bin[side][k].append(v)
    bins = []
    for side in (COUNTRY, PRODUCT):
        for k in sorted(per_bin[side]):
            vals = np.asarray(per_bin[side][k])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else float("nan")
            bins.append(BinStat(side, float(k), float(vals.mean()), std, len(vals)))
    return EnsembleSummary(spec.model, spec.replicates, tuple(bins), slopes)
