"""Evaluation: MAE, verification rates, TPR matching, range statistics.

Rates over an empty class are ``None`` rather than 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .calibration import ThresholdTable, ranges_for
from .decision import VerificationPolicy, verify_flags

SCALE_GRID = tuple(np.geomspace(0.25, 4.0, 200).tolist())


def mae(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} truths")
    if p.size == 0:
        raise ValueError("mae of an empty set")
    return float(np.mean(np.abs(p - t)))


def per_group_mae(predictions, truths, groups) -> dict:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    g = np.asarray(groups)
    return {int(k): mae(p[g == k], t[g == k]) for k in np.unique(g)}


@dataclass(frozen=True)
class VerificationCounts:
    flagged_adult: int
    adult: int
    flagged_under: int
    under: int

    @property
    def fpr(self) -> Optional[float]:
        return self.flagged_adult / self.adult if self.adult else None

    @property
    def tpr(self) -> Optional[float]:
        return self.flagged_under / self.under if self.under else None


def verification_counts(flagged, truths, legal_age) -> VerificationCounts:
    f = np.asarray(flagged, dtype=bool).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if f.shape != t.shape:
        raise ValueError("flags and truths must align")
    adult = t >= legal_age
    return VerificationCounts(int(np.sum(f & adult)), int(np.sum(adult)), int(np.sum(f & ~adult)), int(np.sum(~adult)))


def verification_rates(records, truths, legal_age):
    """``(fpr, tpr)`` from decision records (or a plain flag array)."""
    flags = [r.flagged if hasattr(r, "flagged") else r for r in records]
    if any(f is None for f in flags):
        raise ValueError("every record needs a flagged value")
    c = verification_counts(np.array(flags, dtype=bool), truths, legal_age)
    return c.fpr, c.tpr


@dataclass(frozen=True)
class OperatingPoint:
    """``scale`` multiplies every lt; ``None`` marks the flag-nobody point."""

    scale: Optional[float]
    fpr: Optional[float]
    tpr: Optional[float]


def sweep_lower_scale(mu, sigma, truths, table: ThresholdTable, legal_age, scales=SCALE_GRID):
    """Confidence-method operating points for each lt multiplier."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    lo, _, _ = ranges_for(mu, sigma, table)
    # lo is linear in the lt multiplier: mu - k * (mu - lo)
    margin = mu - lo
    points = []
    for k in scales:
        c = verification_counts(mu - k * margin < legal_age, truths, legal_age)
        points.append(OperatingPoint(float(k), c.fpr, c.tpr))
    return points


class UnreachableTPRError(ValueError):
    pass


def match_tpr(points, reference_tpr: float, tolerance: float = 0.005) -> OperatingPoint:
    """Pick the swept point whose TPR is closest to ``reference_tpr``.

    Ties go to the lower FPR. A reference TPR of 0 matches the trivial
    flag-nobody point.
    """
    if reference_tpr is None:
        raise ValueError("reference TPR is undefined")
    if reference_tpr == 0:
        return OperatingPoint(None, 0.0, 0.0)
    usable = [p for p in points if p.tpr is not None]
    if not usable:
        raise UnreachableTPRError("no swept point has a defined TPR")
    best = min(usable, key=lambda p: (abs(p.tpr - reference_tpr), p.fpr if p.fpr is not None else 0.0))
    if abs(best.tpr - reference_tpr) > tolerance:
        tprs = [p.tpr for p in usable]
        raise UnreachableTPRError(
            f"TPR {reference_tpr:.4f} not reachable within {tolerance}; "
            f"sweep covers [{min(tprs):.4f}, {max(tprs):.4f}]"
        )
    return best


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("median of an empty set")
    return float(v[(v.size - 1) // 2])


def comparability_stats(lo, hi, truths) -> dict:
    """Outside-range share and width statistics for closed ranges."""
    lo = np.asarray(lo, dtype=np.float64).reshape(-1)
    hi = np.asarray(hi, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if not (lo.shape == hi.shape == t.shape):
        raise ValueError("ranges and truths must align")
    if t.size == 0:
        raise ValueError("no ranges")
    width = hi - lo
    outside = (t < lo) | (t > hi)
    return {
        "empirical_fpr": float(np.mean(outside)),
        "median_width": lower_median(width),
        "mean_width": float(np.mean(width)),
    }


def range_stats(ranges, truths) -> dict:
    """:func:`comparability_stats` over a list of ``AgeRange``."""
    return comparability_stats([r.lo for r in ranges], [r.hi for r in ranges], truths)


def per_bucket_widths(lo, hi, bucket_index, table: ThresholdTable) -> list:
    width = np.asarray(hi) - np.asarray(lo)
    idx = np.asarray(bucket_index)
    rows = []
    for j, b in enumerate(table.buckets):
        sel = idx == j
        if sel.any():
            rows.append({"lo": b.lo, "hi": b.hi, "n": int(sel.sum()), "median_width": lower_median(width[sel])})
    return rows


@dataclass
class EvalReport:
    overall_mae: float
    per_group_mae: dict
    n: int
    verification: Optional[dict] = None
    comparability: Optional[dict] = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_group_mae"] = {str(k): v for k, v in sorted(self.per_group_mae.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    def summary_lines(self) -> list:
        """Flat ``name<TAB>value`` lines, one metric each."""
        lines = []

        def walk(prefix, value):
            if isinstance(value, dict):
                for k, v in value.items():
                    walk(f"{prefix}.{k}" if prefix else str(k), v)
            elif isinstance(value, list):
                for i, v in enumerate(value):
                    walk(f"{prefix}[{i}]", v)
            else:
                lines.append(f"{prefix}\t{'undefined' if value is None else repr(value) if isinstance(value, float) else value}")

        d = self.to_dict()
        d.pop("config")
        walk("", {k: v for k, v in d.items() if v is not None})
        return lines

    def write(self, path, summary_path=None) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")
        if summary_path is not None:
            Path(summary_path).write_text("\n".join(self.summary_lines()) + "\n", encoding="utf-8")


def verification_section(mu, sigma, truths, legal_age, challenge_age, table=None, methods=("singular_regression", "confidence"),
                         match=True, tolerance=0.005):
    out = {"legal_age": legal_age, "challenge_age": challenge_age}
    for m in methods:
        pol = VerificationPolicy(legal_age, challenge_age, m)
        c = verification_counts(verify_flags(mu, sigma, pol, table), truths, legal_age)
        out[m] = {"fpr": c.fpr, "tpr": c.tpr, "n_adult": c.adult, "n_under": c.under}
    if match and {"singular_regression", "confidence"} <= set(methods):
        ref = out["singular_regression"]["tpr"]
        point = match_tpr(sweep_lower_scale(mu, sigma, truths, table, legal_age), ref, tolerance)
        out["matched"] = {
            "lt_scale": point.scale,
            "confidence_fpr": point.fpr,
            "confidence_tpr": point.tpr,
            "sr_fpr": out["singular_regression"]["fpr"],
            "sr_tpr": ref,
        }
    return out


def comparability_section(mu, sigma, truths, table, baseline=None):
    lo, hi, idx = ranges_for(mu, sigma, table)
    out = {"confidence": {**comparability_stats(lo, hi, truths), "per_bucket": per_bucket_widths(lo, hi, idx, table)}}
    if baseline is not None:
        blo, bhi, bidx = ranges_for(mu, sigma, baseline)
        out["fixed_width"] = {**comparability_stats(blo, bhi, truths), "per_bucket": per_bucket_widths(blo, bhi, bidx, baseline)}
        a, b = out["confidence"]["median_width"], out["fixed_width"]["median_width"]
        out["median_width_reduction"] = (b - a) / b if b > 0 else None
    return out
