"""Revealed comparative advantage and the thresholded country-product network."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import ExportTable


class NetworkError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RcaMatrix:
    countries: tuple[str, ...]
    products: tuple[str, ...]
    rca: np.ndarray
    source_total: float
    dropped_countries: tuple[str, ...] = ()
    dropped_products: tuple[str, ...] = ()

    def __post_init__(self):
        rca = np.array(self.rca, dtype=float)
        if rca.shape != (len(self.countries), len(self.products)):
            raise NetworkError("rca shape does not match labels")
        if not np.all(np.isfinite(rca)) or np.any(rca < 0):
            raise NetworkError("rca entries must be finite and nonnegative")
        rca.setflags(write=False)
        object.__setattr__(self, "rca", rca)


@dataclass(frozen=True, eq=False)
class BipartiteNetwork:
    """0/1 country-product adjacency with the threshold that produced it.

    ``flags`` carries provenance notes such as ``"no_swap"`` from the
    degree-preserving randomizer.
    """

    countries: tuple[str, ...]
    products: tuple[str, ...]
    adjacency: np.ndarray
    threshold: float = 1.0
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.ndim != 2:
            raise NetworkError("adjacency must be two-dimensional")
        if adj.dtype != bool:
            if not np.all((adj == 0) | (adj == 1)):
                raise NetworkError("adjacency entries must be 0 or 1")
            adj = adj.astype(bool)
        else:
            adj = adj.copy()
        object.__setattr__(self, "countries", tuple(self.countries))
        object.__setattr__(self, "products", tuple(self.products))
        if adj.shape != (len(self.countries), len(self.products)):
            raise NetworkError(
                f"adjacency shape {adj.shape} does not match "
                f"{len(self.countries)}x{len(self.products)} labels"
            )
        if not self.threshold > 0:
            raise NetworkError("threshold must be positive")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "flags", frozenset(self.flags))

    @classmethod
    def from_matrix(cls, matrix, threshold: float = 1.0, flags=()):
        """Wrap a bare 0/1 matrix, labelling rows ``c0..`` and columns ``p0..``."""
        m = np.asarray(matrix)
        countries = tuple(f"c{i}" for i in range(m.shape[0]))
        products = tuple(f"p{j}" for j in range(m.shape[1]))
        return cls(countries, products, m, threshold, frozenset(flags))

    @property
    def shape(self) -> tuple[int, int]:
        return self.adjacency.shape

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum())

    def with_adjacency(self, adjacency, flags=()) -> "BipartiteNetwork":
        return BipartiteNetwork(self.countries, self.products, adjacency, self.threshold, frozenset(flags))

    def permuted(self, rows, cols) -> "BipartiteNetwork":
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        return BipartiteNetwork(
            tuple(self.countries[i] for i in rows),
            tuple(self.products[j] for j in cols),
            self.adjacency[np.ix_(rows, cols)],
            self.threshold,
            self.flags,
        )


def compute_rca(table: ExportTable) -> RcaMatrix:
    """Balassa RCA of every country-product pair.

    Countries with zero total exports and products with zero world exports
    are removed first (their shares are 0/0); their labels are kept on the
    result in ``dropped_countries`` / ``dropped_products``.
    """
    x = table.values
    if not np.any(x > 0):
        raise NetworkError("export table has no positive entry")
    row_ok = x.sum(axis=1) > 0
    col_ok = x.sum(axis=0) > 0
    x = x[np.ix_(row_ok, col_ok)]
    country_total = x.sum(axis=1, keepdims=True)
    product_total = x.sum(axis=0, keepdims=True)
    world = x.sum()
    rca = (x / country_total) / (product_total / world)
    return RcaMatrix(
        countries=tuple(c for c, ok in zip(table.countries, row_ok) if ok),
        products=tuple(p for p, ok in zip(table.products, col_ok) if ok),
        rca=rca,
        source_total=float(world),
        dropped_countries=tuple(c for c, ok in zip(table.countries, row_ok) if not ok),
        dropped_products=tuple(p for p, ok in zip(table.products, col_ok) if not ok),
    )


def threshold(rca: RcaMatrix, r_star: float = 1.0) -> BipartiteNetwork:
    """M_cp = 1 where RCA >= r_star (inclusive)."""
    if not r_star > 0:
        raise NetworkError(f"threshold must be positive, got {r_star}")
    return BipartiteNetwork(rca.countries, rca.products, rca.rca >= r_star, float(r_star))


def triangular_order(net: BipartiteNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Row and column permutations giving the nested (triangular) layout.

    Rows by decreasing diversification, columns by decreasing ubiquity; ties
    fall back to the label so the ordering is total.
    """
    adj = net.adjacency
    kc = adj.sum(axis=1)
    kp = adj.sum(axis=0)
    rows = sorted(range(len(net.countries)), key=lambda i: (-kc[i], net.countries[i]))
    cols = sorted(range(len(net.products)), key=lambda j: (-kp[j], net.products[j]))
    return np.array(rows, dtype=np.intp), np.array(cols, dtype=np.intp)


# -- CSV exchange -----------------------------------------------------------

def write_dense_csv(path, row_labels, col_labels, values, fmt=repr, corner="country") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([corner, *col_labels])
        for label, row in zip(row_labels, values):
            w.writerow([label, *(fmt(v) for v in row)])


def read_dense_csv(path) -> tuple[tuple[str, ...], tuple[str, ...], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise NetworkError(f"matrix file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise NetworkError(f"{path}: expected a header row with column labels")
    cols = tuple(rows[0][1:])
    labels = []
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(cols) + 1:
            raise NetworkError(f"{path}:{lineno}: expected {len(cols) + 1} fields, got {len(row)}")
        labels.append(row[0])
        try:
            data.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise NetworkError(f"{path}:{lineno}: {exc}") from None
    return tuple(labels), cols, np.array(data, dtype=float).reshape(len(labels), len(cols))


def write_network_csv(net: BipartiteNetwork, path) -> None:
    write_dense_csv(path, net.countries, net.products, net.adjacency.astype(int), fmt=str)


def read_network_csv(path, threshold: float = 1.0) -> BipartiteNetwork:
    countries, products, values = read_dense_csv(path)
    if not np.all((values == 0) | (values == 1)):
        raise NetworkError(f"{path}: adjacency entries must be 0 or 1")
    return BipartiteNetwork(countries, products, values.astype(bool), threshold)


def write_edge_list(net: BipartiteNetwork, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "product"])
        for i, j in zip(*np.nonzero(net.adjacency)):
            w.writerow([net.countries[i], net.products[j]])


def write_rca_csv(rca: RcaMatrix, path, log10: bool = False, order=None) -> None:
    values = rca.rca
    countries, products = rca.countries, rca.products
    if order is not None:
        rows, cols = order
        values = values[np.ix_(rows, cols)]
        countries = tuple(countries[i] for i in rows)
        products = tuple(products[j] for j in cols)
    if log10:
        with np.errstate(divide="ignore"):
            values = np.log10(values)
    write_dense_csv(path, countries, products, values, fmt=lambda v: repr(float(v)))
