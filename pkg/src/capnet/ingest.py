"""Trade table ingestion.

Reads location-activity-value records from CSV and aggregates them into a
dense :class:`ExportTable`.  The CSV contract is UTF-8, comma separated, with
header ``country,product,value[,year]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

REQUIRED_COLUMNS = ("country", "product", "value")


class TradeDataError(ValueError):
    """Raised for malformed or missing trade input."""


@dataclass(frozen=True)
class TradeRecord:
    country: str
    product: str
    value: float
    year: int | None = None

    def __post_init__(self):
        if not self.country or not self.product:
            raise TradeDataError("country and product codes must be non-empty")
        if not math.isfinite(self.value) or self.value < 0:
            raise TradeDataError(f"value must be finite and >= 0, got {self.value!r}")


@dataclass(frozen=True, eq=False)
class ExportTable:
    """Dense nonnegative export values, rows are countries and columns products."""

    countries: tuple[str, ...]
    products: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        object.__setattr__(self, "countries", tuple(self.countries))
        object.__setattr__(self, "products", tuple(self.products))
        if values.shape != (len(self.countries), len(self.products)):
            raise TradeDataError(
                f"values shape {values.shape} does not match "
                f"{len(self.countries)} countries x {len(self.products)} products"
            )
        if len(set(self.countries)) != len(self.countries):
            raise TradeDataError("duplicate country labels")
        if len(set(self.products)) != len(self.products):
            raise TradeDataError("duplicate product labels")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise TradeDataError("export values must be finite and nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def total(self) -> float:
        return float(self.values.sum())


def parse_trade_csv(path, year_filter: int | None = None) -> list[TradeRecord]:
    """Read trade records from ``path``.

    Every data row must parse; a bad row raises :class:`TradeDataError` naming
    its line number (the header is line 1).  Rows whose year differs from
    ``year_filter`` are dropped after validation.
    """
    path = Path(path)
    if not path.is_file():
        raise TradeDataError(f"trade file not found: {path}")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise TradeDataError(f"{path}: missing required column(s): {', '.join(missing)}")
        reader.fieldnames = header
        has_year = "year" in header
        if year_filter is not None and not has_year:
            raise TradeDataError(f"{path}: year filter given but file has no 'year' column")
        for lineno, row in enumerate(reader, start=2):
            country = (row.get("country") or "").strip()
            product = (row.get("product") or "").strip()
            raw_value = (row.get("value") or "").strip()
            if not country or not product:
                raise TradeDataError(f"{path}:{lineno}: empty country or product code")
            try:
                value = float(raw_value)
            except ValueError:
                raise TradeDataError(f"{path}:{lineno}: non-numeric value {raw_value!r}") from None
            if not math.isfinite(value):
                raise TradeDataError(f"{path}:{lineno}: non-finite value {raw_value!r}")
            if value < 0:
                raise TradeDataError(f"{path}:{lineno}: negative value {raw_value!r}")
            year = None
            if has_year:
                raw_year = (row.get("year") or "").strip()
                if raw_year:
                    try:
                        year = int(raw_year)
                    except ValueError:
                        raise TradeDataError(f"{path}:{lineno}: non-integer year {raw_year!r}") from None
            if year_filter is not None and year != year_filter:
                continue
            records.append(TradeRecord(country, product, value, year))
    return records


def aggregate(records: Iterable[TradeRecord]) -> ExportTable:
    """Sum records into a dense table with lexicographically ordered labels."""
    records = list(records)
    if not records:
        raise TradeDataError("cannot aggregate an empty record list")
    countries = sorted({r.country for r in records})
    products = sorted({r.product for r in records})
    ci = {c: i for i, c in enumerate(countries)}
    pi = {p: j for j, p in enumerate(products)}
    rows = np.fromiter((ci[r.country] for r in records), dtype=np.intp, count=len(records))
    cols = np.fromiter((pi[r.product] for r in records), dtype=np.intp, count=len(records))
    vals = np.fromiter((r.value for r in records), dtype=float, count=len(records))
    values = np.zeros((len(countries), len(products)))
    np.add.at(values, (rows, cols), vals)
    return ExportTable(tuple(countries), tuple(products), values)


def write_table_csv(table: ExportTable, path) -> None:
    """Write the table back out in the long ``country,product,value`` format.

    Zero cells are omitted; the result round-trips through
    :func:`parse_trade_csv` and :func:`aggregate` when every label has at
    least one positive cell.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "product", "value"])
        rows, cols = np.nonzero(table.values)
        for i, j in zip(rows, cols):
            w.writerow([table.countries[i], table.products[j], repr(float(table.values[i, j]))])


def table_from_records(rows: Sequence[tuple]) -> ExportTable:
    """Convenience: build a table from ``(country, product, value)`` tuples."""
    return aggregate(TradeRecord(*row) for row in rows)
