"""Stylized-fact verdicts and the run summary assembled from saved artifacts."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .distfit import FitError, rank_families

REQUIRED = ("degrees_countries.csv", "degrees_products.csv", "proximity.csv", "density.json")


class MissingArtifactError(FileNotFoundError):
    pass


def fact_one(k_c0, k_c1, null_bands: dict | None = None) -> dict:
    """Negative diversification/average-ubiquity relation, optionally against null-model slope bands."""
    k_c0 = np.asarray(k_c0, dtype=float)
    k_c1 = np.asarray(k_c1, dtype=float)
    ok = (k_c0 > 0) & np.isfinite(k_c1)
    rho = float(spearmanr(k_c0[ok], k_c1[ok])[0]) if ok.sum() > 2 else float("nan")
    x, y = k_c0[ok], k_c1[ok]
    sx = x - x.mean()
    slope = float(sx @ (y - y.mean()) / (sx @ sx)) if ok.sum() > 1 and sx @ sx > 0 else float("nan")
    out = {"spearman": rho, "slope": slope, "pass": bool(rho < 0), "null_models": {}}
    for model, band in sorted((null_bands or {}).items()):
        lo, hi = band
        out["null_models"][str(model)] = {"band": [lo, hi], "outside": bool(slope < lo or slope > hi)}
    return out


def distribution_fact(values, require_best: str | None = None) -> dict:
    """Family ranking on a sample; passes when normal is the least likely fit
    (and ``require_best`` is the most likely, when given)."""
    try:
        ranking = rank_families(values)
    except FitError as exc:
        return {"pass": False, "error": str(exc)}
    order = ranking.order()
    ok = order[-1] == "normal" and len(order) == 3
    if require_best is not None:
        ok = ok and order[0] == require_best
    d = ranking.to_dict()
    d["pass"] = bool(ok)
    return d


def stylized_facts(k_c0, k_c1, k_p0, phi, null_bands: dict | None = None) -> dict:
    return {
        "fact1_diversification_vs_ubiquity": fact_one(k_c0, k_c1, null_bands),
        "fact2_ubiquity_not_normal": distribution_fact(k_p0),
        "fact3_diversification_not_normal": distribution_fact(k_c0),
        "fact4_proximity_weibull": distribution_fact(phi, require_best="weibull"),
    }


def _read_columns(path: Path, *names) -> list[np.ndarray]:
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [np.array([float(r[n]) if r[n] != "" else np.nan for r in rows]) for n in names]


def build_report(run_dir) -> dict:
    run = Path(run_dir)
    missing = [name for name in REQUIRED if not (run / name).is_file()]
    if missing:
        raise MissingArtifactError(f"{run}: missing required artifact(s): {', '.join(missing)}")
    k_c0, k_c1 = _read_columns(run / "degrees_countries.csv", "k0", "k1")
    (k_p0,) = _read_columns(run / "degrees_products.csv", "k0")
    (phi,) = _read_columns(run / "proximity.csv", "phi")
    dens = json.loads((run / "density.json").read_text())

    bands = {}
    for path in sorted(run.glob("nullmodel_*_slopes.json")):
        info = json.loads(path.read_text())
        bands[info["model"]] = tuple(info["country_band"])
    report = {
        "facts": stylized_facts(k_c0, k_c1, k_p0, phi, bands),
        "density": dens,
        "calibration": None,
    }
    cal = run / "calibration.json"
    if cal.is_file():
        c = json.loads(cal.read_text())
        ch, dg = c["chosen"], c.get("diagnostics", {})
        report["calibration"] = {
            "n_a": ch["n_a"],
            "r": ch["r"],
            "q": ch["q"],
            "density": dg.get("eta"),
            "r2": ch["r2"],
            "ks_proximity": ch["ks"],
            "ks_diversification": dg.get("ks_diversification"),
            "ks_ubiquity": dg.get("ks_ubiquity"),
        }
    return report


def _fmt(v, spec=".4f"):
    return "n/a" if v is None or (isinstance(v, float) and not np.isfinite(v)) else format(v, spec)


def render_text(report: dict) -> str:
    lines = ["Stylized facts", "--------------"]
    f1 = report["facts"]["fact1_diversification_vs_ubiquity"]
    lines.append(
        f"1 diversification vs average ubiquity: {'PASS' if f1['pass'] else 'FAIL'} "
        f"(spearman {_fmt(f1['spearman'])}, slope {_fmt(f1['slope'])})"
    )
    for model, info in f1["null_models"].items():
        lo, hi = info["band"]
        lines.append(
            f"  null model {model}: band [{_fmt(lo)}, {_fmt(hi)}] "
            f"{'outside (significant)' if info['outside'] else 'inside'}"
        )
    labels = {
        "fact2_ubiquity_not_normal": "2 ubiquity not normal",
        "fact3_diversification_not_normal": "3 diversification not normal",
        "fact4_proximity_weibull": "4 proximity best fit Weibull",
    }
    for key, label in labels.items():
        f = report["facts"][key]
        detail = " > ".join(f["ranking"]) if "ranking" in f else f.get("error", "")
        lines.append(f"{label}: {'PASS' if f['pass'] else 'FAIL'} ({detail})")
    d = report["density"]
    lines += ["", "Density", "-------", "threshold  countries  products  density"]
    lines.append(f"{_fmt(d.get('threshold'), 'g'):>9}  {d.get('n_c'):>9}  {d.get('n_p'):>8}  {_fmt(d.get('density'))}")
    cal = report.get("calibration")
    if cal:
        lines += ["", "Calibration", "-----------",
                  "N_a      r       q  density      R2  KS prox  KS div  KS ubiq"]
        lines.append(
            f"{cal['n_a']:>3}  {cal['r']:.2f}  {cal['q']:.4f}  {_fmt(cal['density'])}  {_fmt(cal['r2'])}"
            f"   {_fmt(cal['ks_proximity'])}  {_fmt(cal['ks_diversification'])}   {_fmt(cal['ks_ubiquity'])}"
        )
    return "\n".join(lines) + "\n"
