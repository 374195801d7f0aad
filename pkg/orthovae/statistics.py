"""
Statistics Module for orthovae.

This module aggregates per-seed metric reports into mean +- std summaries,
computes the correlation between DtO and the disentanglement score, and
prints summaries in a human-readable format.
"""

import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.stats import pearsonr

from orthovae.metrics import MetricsReport
from orthovae.utils import format_mean_std

logger = logging.getLogger(__name__)

SUMMARY_METRICS = ("dto", "disentanglement", "polarized_fraction", "active_count", "random_decoder_dto")


def summarize_values(values: Iterable[Optional[float]]) -> Dict[str, Any]:
    """
    Summary statistics of a list of values, ignoring None and NaN.

    Args:
        values: Per-seed values

    Returns:
        Dictionary:
        {
            'mean': float, 'std': float, 'min': float, 'max': float,
            'count': int, 'missing': int
        }
        Statistics are NaN when no value is available.

    Example:
        >>> summarize_values([1.0, 3.0, None])['mean']
        2.0
    """
    raw = list(values)
    present = [float(v) for v in raw if v is not None and not math.isnan(float(v))]
    if not present:
        nan = float("nan")
        return {"mean": nan, "std": nan, "min": nan, "max": nan, "count": 0, "missing": len(raw)}
    arr = np.asarray(present)
    return {
        "mean": float(np.mean(arr)),
        "std": float(np.std(arr)),
        "min": float(np.min(arr)),
        "max": float(np.max(arr)),
        "count": len(present),
        "missing": len(raw) - len(present),
    }


def aggregate_reports(reports: Sequence[MetricsReport]) -> Dict[str, Any]:
    """
    Aggregate metric reports of several seeds.

    Failed seeds count toward 'failed_seeds' and are left out of the metric
    summaries.

    Args:
        reports: One MetricsReport per seed

    Returns:
        Dictionary with one summarize_values() entry per metric plus
        'seeds', 'failed_seeds' and 'degenerate_dto_seeds'
    """
    healthy = [r for r in reports if not r.failed]
    summary: Dict[str, Any] = {
        "seeds": [r.seed for r in reports],
        "failed_seeds": [r.seed for r in reports if r.failed],
        "degenerate_dto_seeds": [r.seed for r in healthy if r.dto_degenerate],
    }
    for name in SUMMARY_METRICS:
        if name == "active_count":
            summary[name] = summarize_values([r.active_count for r in healthy])
        else:
            summary[name] = summarize_values([getattr(r, name) for r in healthy])
    logger.info(
        f"Aggregated {len(healthy)} of {len(reports)} seeds "
        f"(DtO {format_mean_std(summary['dto']['mean'], summary['dto']['std'])})"
    )
    return summary


def pearson_correlation(x: Sequence[Optional[float]], y: Sequence[Optional[float]]) -> Dict[str, Any]:
    """
    Pearson correlation over pairs where both values are present.

    Returns:
        Dictionary with 'r', 'p_value' and 'count'; r and p_value are NaN
        with fewer than three pairs or a constant input
    """
    pairs = [
        (float(a), float(b))
        for a, b in zip(x, y)
        if a is not None and b is not None and not (math.isnan(float(a)) or math.isnan(float(b)))
    ]
    nan = float("nan")
    if len(pairs) < 3:
        logger.warning(f"Correlation needs at least 3 pairs, got {len(pairs)}")
        return {"r": nan, "p_value": nan, "count": len(pairs)}
    xs, ys = np.asarray(pairs).T
    if np.ptp(xs) == 0.0 or np.ptp(ys) == 0.0:
        logger.warning("Correlation undefined for a constant input")
        return {"r": nan, "p_value": nan, "count": len(pairs)}
    result = pearsonr(xs, ys)
    return {"r": float(result[0]), "p_value": float(result[1]), "count": len(pairs)}


def summary_table_rows(summaries: Dict[str, Dict[str, Any]]) -> List[List[str]]:
    """Rows [name, DtO, Disent, polarized, active] formatted as mean +- std."""
    rows = []
    for name, summary in summaries.items():
        row = [name]
        for metric in ("dto", "disentanglement", "polarized_fraction", "active_count"):
            stats = summary.get(metric, {})
            row.append(format_mean_std(stats.get("mean"), stats.get("std", 0.0)))
        rows.append(row)
    return rows


def print_summary(summaries: Dict[str, Dict[str, Any]], title: str = "EXPERIMENT SUMMARY") -> None:
    """
    Print aggregated summaries as a table.

    Args:
        summaries: Mapping of row name (run or baseline) to aggregate_reports()
        title: Banner title

    Example:
        >>> print_summary({"synth_lin": aggregate_reports(reports)})
        ============================================================
                            EXPERIMENT SUMMARY
        ============================================================
    """
    header = ["Model", "DtO", "Disent.", "Polarized", "Active"]
    rows = summary_table_rows(summaries)
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]

    print("\n" + "=" * 60)
    print(title.center(60))
    print("=" * 60)
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    print("-" * 60)
    for row in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
    print("\n" + "=" * 60 + "\n")
