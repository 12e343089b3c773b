"""Bias-oriented evaluation reports: bucket tables, tail slices, factor distributions, K sweeps."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Bucketing, Impressions
from .metrics import mae, per_user_xauc, xauc
from .transform import skewness

log = logging.getLogger(__name__)

WATCH_EDGES = tuple(range(20, 201, 20))  # report buckets [0,20), [20,40), ..., [200, inf)
QUANTILES = (1, 5, 10, 25, 50, 75, 90, 95, 99)
WUAUC_NOTE = "per_user_xauc is pair-count-weighted within-user XAUC, an interpretation of the production WUAUC"


def _edges_label(lo: float, hi: float) -> str:
    fmt = lambda v: "inf" if np.isinf(v) else ("-inf" if v == -np.inf else f"{v:g}")
    return f"[{fmt(lo)},{fmt(hi)})"


def _bucket_rows(key: np.ndarray, edges: Sequence[float], y, y_hat, y_hat0, lower: float) -> list[dict]:
    edges = np.asarray(edges, dtype=np.float64)
    bucket = np.searchsorted(edges, key, side="right")
    bounds = np.concatenate([[lower], edges, [np.inf]])
    rows = []
    for k in range(len(edges) + 1):
        m = bucket == k
        row = {"bucket": _edges_label(bounds[k], bounds[k + 1]), "count": int(m.sum())}
        if m.any():
            mean_y = float(y[m].mean())
            base_mae = mae(y[m], y_hat0[m])
            model_mae = mae(y[m], y_hat[m])
            row.update(
                mean_y=mean_y,
                mean_pred=float(y_hat[m].mean()),
                bias_ratio=float(y_hat[m].mean() / mean_y) if mean_y > 0 else None,
                base_bias_ratio=float(y_hat0[m].mean() / mean_y) if mean_y > 0 else None,
                mae=model_mae,
                base_mae=base_mae,
                mae_reduction=float(1.0 - model_mae / base_mae) if base_mae > 0 else None,
            )
        else:
            row.update(mean_y=None, mean_pred=None, bias_ratio=None, base_bias_ratio=None,
                       mae=None, base_mae=None, mae_reduction=None)
        rows.append(row)
    return rows


def bucket_report(
    data: Impressions,
    y_hat,
    y_hat0,
    bucketing: Bucketing,
    watch_edges: Sequence[float] = WATCH_EDGES,
) -> dict:
    """Per-bucket bias ratio, MAE and MAE reduction under the duration and watch-time views."""
    y = data.watch_time_s
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_hat0 = np.asarray(y_hat0, dtype=np.float64)
    return {
        "global_bias_ratio": float(y_hat.mean() / y.mean()),
        "global_base_bias_ratio": float(y_hat0.mean() / y.mean()),
        "duration": _bucket_rows(data.duration_s, bucketing.boundaries, y, y_hat, y_hat0, 0.0),
        "watch_time": _bucket_rows(y, watch_edges, y, y_hat, y_hat0, 0.0),
    }


def max_ratio_deviation(rows: list[dict], key: str = "bias_ratio") -> float:
    vals = [abs(r[key] - 1.0) for r in rows if r["count"] and r[key] is not None]
    return max(vals) if vals else 0.0


def tail_slice_report(
    data: Impressions,
    y_hat,
    y_hat0,
    fractions: Sequence[float] = (0.2, 0.1),
    max_pairs: int | None = 2_000_000,
    seed: int = 0,
    min_slice: int = 100,
) -> list[dict]:
    """MAE reduction and relative XAUC lift on all samples and on top-duration slices."""
    y = data.watch_time_s
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_hat0 = np.asarray(y_hat0, dtype=np.float64)
    order = np.argsort(-data.duration_s, kind="stable")
    slices = [("all", np.arange(len(y)))]
    for f in fractions:
        slices.append((f"tail_{int(round(100 * f))}", order[: max(int(round(f * len(y))), 1)]))
    rows = []
    for name, idx in slices:
        base_m, m = mae(y[idx], y_hat0[idx]), mae(y[idx], y_hat[idx])
        try:
            base_x = xauc(y[idx], y_hat0[idx], max_pairs, seed)
            x = xauc(y[idx], y_hat[idx], max_pairs, seed)
            lift = x / base_x - 1.0
        except ValueError:
            base_x = x = lift = None
        rows.append({
            "slice": name,
            "count": int(len(idx)),
            "base_mae": base_m,
            "mae": m,
            "mae_reduction": 1.0 - m / base_m if base_m > 0 else None,
            "base_xauc": base_x,
            "xauc": x,
            "xauc_lift": lift,
            "small_slice": bool(len(idx) < min_slice),
        })
    return rows


def factor_distribution_report(b, z, groups, lambdas, K: int | None = None, bins: int = 20) -> dict:
    """Per-group quantiles, skewness and histogram edges of raw and transformed factors."""
    b = np.asarray(b, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    groups = np.asarray(groups)
    K = K if K is not None else int(groups.max()) + 1
    per_group = []
    for g in range(K):
        m = groups == g
        entry = {"group": g, "count": int(m.sum())}
        for name, v in (("raw", b[m]), ("transformed", z[m])):
            if m.any():
                entry[name] = {
                    "quantiles": {f"p{q}": float(np.percentile(v, q)) for q in QUANTILES},
                    "skewness": skewness(v),
                    "histogram_edges": np.histogram_bin_edges(v, bins=bins).tolist(),
                }
            else:
                entry[name] = None
        per_group.append(entry)
    lambdas = [float(v) for v in np.atleast_1d(lambdas)]
    steps = np.diff(lambdas)
    trend = "decreasing" if len(steps) and np.all(steps < 0) else "increasing" if len(steps) and np.all(steps > 0) else "mixed"
    return {"lambdas": lambdas, "lambda_trend": trend, "groups": per_group}


@dataclass
class EvalReport:
    mae: float
    xauc: float
    per_user_xauc: float | None
    base_mae: float
    base_xauc: float
    base_per_user_xauc: float | None
    buckets: dict
    tail_slices: list
    lambdas: list
    factor_distribution: dict | None = None
    notes: list = field(default_factory=lambda: [WUAUC_NOTE])

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    data: Impressions,
    y_hat,
    y_hat0,
    bucketing: Bucketing,
    lambdas=(),
    watch_edges: Sequence[float] = WATCH_EDGES,
    tail_fractions: Sequence[float] = (0.2, 0.1),
    max_pairs: int | None = 5_000_000,
    seed: int = 0,
    factor_distribution: dict | None = None,
    variant: str | None = None,
) -> EvalReport:
    y = data.watch_time_s

    def _user(pred):
        try:
            return per_user_xauc(data.user_id, y, pred)
        except ValueError:
            return None

    notes = [WUAUC_NOTE]
    if variant == "global_correction":
        notes.append("global_correction is a simplified global multiplicative-correction baseline, "
                     "not the published TranSUN algorithm")
    return EvalReport(
        mae=mae(y, y_hat),
        xauc=xauc(y, y_hat, max_pairs, seed),
        per_user_xauc=_user(y_hat),
        base_mae=mae(y, y_hat0),
        base_xauc=xauc(y, y_hat0, max_pairs, seed),
        base_per_user_xauc=_user(y_hat0),
        buckets=bucket_report(data, y_hat, y_hat0, bucketing, watch_edges),
        tail_slices=tail_slice_report(data, y_hat, y_hat0, tail_fractions, max_pairs, seed),
        lambdas=[float(v) for v in np.atleast_1d(lambdas)],
        factor_distribution=factor_distribution,
        notes=notes,
    )


def bucket_sensitivity_sweep(K_values: Sequence[int], runner: Callable[[int], tuple[float, float]]) -> dict:
    """Run ``runner(K) -> (mae, xauc)`` for each K and summarise the spread."""
    rows = []
    for K in K_values:
        if K < 1:
            raise ValueError("K must be >= 1")
        m, x = runner(K)
        rows.append({"K": int(K), "mae": float(m), "xauc": float(x)})
    maes = np.array([r["mae"] for r in rows])
    xaucs = np.array([r["xauc"] for r in rows])
    return {
        "runs": rows,
        "mae_min": float(maes.min()),
        "mae_max": float(maes.max()),
        "mae_relative_range": float((maes.max() - maes.min()) / maes.min()),
        "xauc_min": float(xaucs.min()),
        "xauc_max": float(xaucs.max()),
    }


# -- writing -------------------------------------------------------------------
def run_tag(run_id: str, variant: str, K: int, seed: int) -> str:
    return f"{run_id}_{variant}_K{K}_seed{seed}"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o)}")


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default), encoding="utf-8")


def write_table(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def write_report(report: EvalReport, out_dir, tag: str) -> list[Path]:
    """JSON report plus one flat CSV per analysis table; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f"{tag}_report.json"]
    write_json(report.to_dict(), paths[0])
    tables = {
        "duration_buckets": report.buckets["duration"],
        "watch_time_buckets": report.buckets["watch_time"],
        "tail_slices": report.tail_slices,
        "lambdas": [{"group": g, "lambda": v} for g, v in enumerate(report.lambdas)],
    }
    if report.factor_distribution:
        tables["factor_distribution"] = [
            {"group": e["group"], "count": e["count"],
             **{f"raw_{k}": v for k, v in ((e["raw"] or {}).get("quantiles", {})).items()},
             "raw_skewness": (e["raw"] or {}).get("skewness"),
             **{f"z_{k}": v for k, v in ((e["transformed"] or {}).get("quantiles", {})).items()},
             "z_skewness": (e["transformed"] or {}).get("skewness")}
            for e in report.factor_distribution["groups"]
        ]
    for name, rows in tables.items():
        p = out_dir / f"{tag}_{name}.csv"
        write_table(rows, p)
        paths.append(p)
    return paths
