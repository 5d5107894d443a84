"""Error metrics, angle-binned breakdown, and report emission.

The signed error convention is e = pred - true, so a positive mean error
means overestimation. MAPE refuses denominators below mape_floor and
R-squared refuses constant truth: the affected field comes back as None
while the remaining metrics are still computed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError, InvalidArgumentError

MAPE_FLOOR_DEG = 1.0
DEFAULT_BIN_EDGES = (60.0, 120.0)

METRIC_ROWS = ("MAE", "RMSE", "ME", "MAPE(%)", "R-squared")


@dataclass(frozen=True)
class MetricSet:
    mae: float
    rmse: float
    me: float
    mape_percent: float | None
    r_squared: float | None


@dataclass(frozen=True)
class BinStats:
    label: str
    count: int
    mae: float | None
    rmse: float | None
    me: float | None


@dataclass(frozen=True)
class BinnedErrors:
    edges: tuple[float, ...]
    bins: tuple[BinStats, ...]


def _check_pair(pred, true):
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise InvalidArgumentError(
            f"prediction and truth must be equal-length vectors, got "
            f"{pred.shape} and {true.shape}"
        )
    if pred.size == 0:
        raise InvalidArgumentError("metrics need at least one sample")
    return pred, true


def compute_metrics(pred, true, mape_floor: float = MAPE_FLOOR_DEG) -> MetricSet:
    """The five global metrics over paired predictions and truths (degrees)."""
    pred, true = _check_pair(pred, true)
    err = pred - true
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    me = float(np.mean(err))
    if np.all(true >= mape_floor):
        mape = float(100.0 * np.mean(np.abs(err) / true))
    else:
        mape = None  # denominators below the floor would dominate the mean
    ss_tot = float(np.sum((true - true.mean()) ** 2))
    if ss_tot > 0.0:
        r2 = float(1.0 - np.sum(err * err) / ss_tot)
    else:
        r2 = None  # constant truth: explained variance is undefined
    return MetricSet(mae=mae, rmse=rmse, me=me, mape_percent=mape, r_squared=r2)


def binned_errors(pred, true, edges=DEFAULT_BIN_EDGES) -> BinnedErrors:
    """Per-band errors keyed by the true angle.

    With the default edges (60, 120) the bands are theta < 60,
    60 <= theta <= 120, and theta > 120; boundary values fall in the middle
    band. Empty bands report count 0 with null metrics.
    """
    pred, true = _check_pair(pred, true)
    edges = tuple(float(e) for e in edges)
    if len(edges) < 1 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise InvalidArgumentError(f"bin edges must be strictly increasing, got {edges}")
    if edges[0] <= 0.0 or edges[-1] >= 180.0:
        raise InvalidArgumentError(f"bin edges must lie within (0, 180), got {edges}")

    labels = [f"theta<{edges[0]:g}"]
    conditions = [true < edges[0]]
    for a, b in zip(edges, edges[1:]):
        labels.append(f"{a:g}<=theta<={b:g}")
        conditions.append((true >= a) & (true <= b))
    labels.append(f"theta>{edges[-1]:g}")
    conditions.append(true > edges[-1])

    taken = np.zeros(true.shape, dtype=bool)
    bins = []
    for label, cond in zip(labels, conditions):
        sel = cond & ~taken  # interior edges resolve to the earlier band
        taken |= sel
        if sel.any():
            err = pred[sel] - true[sel]
            bins.append(
                BinStats(
                    label=label,
                    count=int(sel.sum()),
                    mae=float(np.mean(np.abs(err))),
                    rmse=float(np.sqrt(np.mean(err * err))),
                    me=float(np.mean(err)),
                )
            )
        else:
            bins.append(BinStats(label=label, count=0, mae=None, rmse=None, me=None))
    return BinnedErrors(edges=edges, bins=tuple(bins))


def format_metrics_table(columns: dict[str, MetricSet]) -> str:
    """Render metric rows against model columns, matching the usual report
    layout (MAE / RMSE / ME / MAPE(%) / R-squared)."""

    def cell(value):
        return "-" if value is None else f"{value:g}"

    names = list(columns)
    widths = {n: max(len(n), 10) for n in names}
    head = "          " + "\t".join(n.ljust(widths[n]) for n in names)
    rows = [head]
    getters = {
        "MAE": lambda m: m.mae,
        "RMSE": lambda m: m.rmse,
        "ME": lambda m: m.me,
        "MAPE(%)": lambda m: m.mape_percent,
        "R-squared": lambda m: m.r_squared,
    }
    for row in METRIC_ROWS:
        cells = "\t".join(cell(getters[row](columns[n])).ljust(widths[n]) for n in names)
        rows.append(f"{row:<10}" + cells)
    return "\n".join(rows)


def _json_ready(value):
    if isinstance(value, dict):
        return {k: _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return [_json_ready(v) for v in value.tolist()]
    return value


def emit_report(metrics: MetricSet, binned: BinnedErrors, predictions, config: dict,
                path, scatter_path) -> None:
    """Write the JSON report and the scatter CSV.

    The report carries the metrics, the binned breakdown, the full config
    provenance (seeds, architecture, every tunable default), and the sample
    count. The scatter CSV pairs theta_true_deg with theta_pred_deg for
    external plotting.
    """
    report = {
        "metrics": {
            "mae": metrics.mae,
            "rmse": metrics.rmse,
            "me": metrics.me,
            "mape_percent": metrics.mape_percent,
            "r_squared": metrics.r_squared,
        },
        "bins": [
            {"label": b.label, "count": b.count, "mae": b.mae, "rmse": b.rmse, "me": b.me}
            for b in binned.bins
        ],
        "config": _json_ready(config),
        "n_samples": len(predictions.image_ids),
    }
    Path(path).write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8", newline="\n"
    )
    lines = ["theta_true_deg,theta_pred_deg"]
    for t, p in zip(predictions.theta_true_deg, predictions.theta_pred_deg):
        lines.append(f"{float(t)!r},{float(p)!r}")
    Path(scatter_path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_scatter(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a scatter CSV back as (true, pred) vectors."""
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestionError(f"cannot read scatter file {p}: {exc}") from exc
    if not lines or lines[0] != "theta_true_deg,theta_pred_deg":
        raise IngestionError(f"{p}: bad scatter header")
    true, pred = [], []
    for line in lines[1:]:
        try:
            t, q = line.split(",")
            true.append(float(t))
            pred.append(float(q))
        except ValueError as exc:
            raise IngestionError(f"{p}: bad scatter row {line!r}") from exc
    return np.asarray(true), np.asarray(pred)
