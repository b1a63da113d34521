"""Per-bucket confidence thresholds and the two-sided age distribution.

A prediction ``(mu, sigma)`` becomes the range
``[mu - sigma * lt, mu + sigma * ut]`` where ``(lt, ut)`` are looked up by
the bucket ``[k * width, (k + 1) * width)`` that contains ``mu``.

Calibration picks ``lt`` so that a ``target_fpr * side_split`` share of the
bucket's samples falls below the range, and ``ut`` so that a
``target_fpr * (1 - side_split)`` share falls above it. Both are empirical
quantiles of zero-clipped normalized residuals over all samples in the
bucket::

    lower_i = max(0, (mu_i - y_i) / sigma_i)
    upper_i = max(0, (y_i - mu_i) / sigma_i)

Quantiles use linear interpolation between order statistics (numpy's
``"linear"`` method, Hyndman & Fan type 7). Buckets with fewer than
``min_bucket_n`` samples use the quantiles of the whole calibration set.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
QUANTILE_METHOD = "linear"


class TableFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Bucket:
    lo: float
    hi: float
    lt: float
    ut: float
    n: int


@dataclass(frozen=True)
class ThresholdTable:
    bucket_width: float
    buckets: tuple
    fallback_lt: float
    fallback_ut: float
    target_fpr: float
    side_split: float = 0.5
    sigma_blind: bool = False

    def __post_init__(self):
        object.__setattr__(self, "buckets", tuple(self.buckets))
        if not self.bucket_width > 0:
            raise ValueError(f"bucket_width must be positive, got {self.bucket_width}")
        if not 0 < self.target_fpr < 1:
            raise ValueError(f"target_fpr must be in (0, 1), got {self.target_fpr}")
        if not 0 < self.side_split <= 1:
            raise ValueError(f"side_split must be in (0, 1], got {self.side_split}")
        for name in ("fallback_lt", "fallback_ut"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        prev_hi = None
        for j, b in enumerate(self.buckets):
            if not (b.hi > b.lo):
                raise ValueError(f"bucket {j}: hi must exceed lo")
            if prev_hi is not None and b.lo != prev_hi:
                raise ValueError(f"bucket {j}: buckets must be contiguous and sorted")
            k = b.lo / self.bucket_width
            if not (math.isclose(k, round(k), abs_tol=1e-9)
                    and math.isclose(b.hi - b.lo, self.bucket_width, rel_tol=1e-9)):
                raise ValueError(f"bucket {j}: bounds must be consecutive multiples of bucket_width")
            if not (math.isfinite(b.lt) and b.lt >= 0 and math.isfinite(b.ut) and b.ut >= 0):
                raise ValueError(f"bucket {j}: lt and ut must be finite and non-negative")
            prev_hi = b.hi

    def thresholds(self, mu: float):
        """``(lt, ut, bucket_index)``; index -1 means the fallback pair."""
        j = self.bucket_index(mu)
        if j < 0:
            return self.fallback_lt, self.fallback_ut, -1
        b = self.buckets[j]
        return b.lt, b.ut, j

    def bucket_index(self, mu: float) -> int:
        return int(self.bucket_indices(np.array([mu], dtype=np.float64))[0])

    def bucket_indices(self, mu) -> np.ndarray:
        """Bucket per ``mu`` by ``floor(mu / bucket_width)``; -1 outside the table."""
        mu = np.asarray(mu, dtype=np.float64)
        if not self.buckets:
            return np.full(mu.shape, -1, dtype=np.int64)
        k0 = round(self.buckets[0].lo / self.bucket_width)
        j = np.floor(mu / self.bucket_width).astype(np.int64) - k0
        return np.where((j >= 0) & (j < len(self.buckets)), j, -1)

    def scaled(self, lower=1.0, upper=1.0) -> "ThresholdTable":
        """Copy with every lt multiplied by ``lower`` and ut by ``upper``."""
        buckets = [Bucket(b.lo, b.hi, b.lt * lower, b.ut * upper, b.n) for b in self.buckets]
        return ThresholdTable(
            self.bucket_width, buckets, self.fallback_lt * lower, self.fallback_ut * upper,
            self.target_fpr, self.side_split, self.sigma_blind,
        )


@dataclass(frozen=True)
class AgeRange:
    lo: float
    hi: float
    mu: float
    sigma: float
    bucket_index: int

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, age: float) -> bool:
        return self.lo <= age <= self.hi


def _as_arrays(mu, sigma, truth):
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if not (mu.shape == sigma.shape == truth.shape):
        raise ValueError("mu, sigma and truth must have equal lengths")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma)) and np.all(np.isfinite(truth))):
        raise ValueError("non-finite prediction or truth")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    return mu, sigma, truth


def _side_quantiles(lower, upper, target_fpr, side_split):
    q_lo = np.quantile(lower, 1.0 - target_fpr * side_split, method=QUANTILE_METHOD)
    q_hi = np.quantile(upper, 1.0 - target_fpr * (1.0 - side_split), method=QUANTILE_METHOD)
    return float(q_lo), float(q_hi)


def calibrate(mu, sigma, truth, target_fpr=0.005, bucket_width=5.0, side_split=0.5,
              min_bucket_n=50, sigma_blind=False) -> ThresholdTable:
    """Fit per-bucket ``(lt, ut)`` on a validation set.

    Parameters
    ----------
    mu, sigma, truth : array_like, shape (n,)
        Predicted mean, predicted spread and true age per sample.
    target_fpr : float
        Share of samples allowed outside their range, in (0, 0.5).
    side_split : float
        Share of ``target_fpr`` spent below the range.
    sigma_blind : bool
        Treat every ``sigma`` as 1, i.e. learn fixed offsets in years.

    Returns
    -------
    ThresholdTable
    """
    if not 0 < target_fpr < 0.5:
        raise ValueError(f"target_fpr must be in (0, 0.5), got {target_fpr}")
    if not 0 < side_split <= 1:
        raise ValueError(f"side_split must be in (0, 1], got {side_split}")
    if not bucket_width > 0:
        raise ValueError(f"bucket_width must be positive, got {bucket_width}")
    if sigma_blind:
        sigma = np.ones_like(np.asarray(sigma, dtype=np.float64))
    mu, sigma, truth = _as_arrays(mu, sigma, truth)
    if mu.size == 0:
        raise ValueError("no calibration samples")
    if mu.size < min_bucket_n:
        raise ValueError(f"need at least min_bucket_n={min_bucket_n} samples, got {mu.size}")

    z = (truth - mu) / sigma
    lower = np.maximum(-z, 0.0)
    upper = np.maximum(z, 0.0)
    fb_lt, fb_ut = _side_quantiles(lower, upper, target_fpr, side_split)

    k = np.floor(mu / bucket_width).astype(np.int64)
    buckets = []
    for kj in range(int(k.min()), int(k.max()) + 1):
        sel = k == kj
        n = int(sel.sum())
        if n >= min_bucket_n:
            lt, ut = _side_quantiles(lower[sel], upper[sel], target_fpr, side_split)
        else:
            lt, ut = fb_lt, fb_ut
        buckets.append(Bucket(kj * bucket_width, (kj + 1) * bucket_width, lt, ut, n))
    return ThresholdTable(bucket_width, buckets, fb_lt, fb_ut, target_fpr, side_split, sigma_blind)


def range_for(mu: float, sigma: float, table: ThresholdTable) -> AgeRange:
    """Confidence range for one prediction."""
    mu, sigma = float(mu), float(sigma)
    if not (math.isfinite(mu) and math.isfinite(sigma)):
        raise ValueError("mu and sigma must be finite")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    lt, ut, j = table.thresholds(mu)
    s = 1.0 if table.sigma_blind else sigma
    return AgeRange(mu - s * lt, mu + s * ut, mu, sigma, j)


def ranges_for(mu, sigma, table: ThresholdTable):
    """Vectorized :func:`range_for`; returns ``(lo, hi, bucket_index)`` arrays."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise ValueError("mu and sigma must be finite")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    idx = table.bucket_indices(mu)
    lt_tab = np.array([b.lt for b in table.buckets] + [table.fallback_lt])
    ut_tab = np.array([b.ut for b in table.buckets] + [table.fallback_ut])
    lt, ut = lt_tab[idx], ut_tab[idx]  # -1 picks the trailing fallback entry
    s = np.ones_like(sigma) if table.sigma_blind else sigma
    return mu - s * lt, mu + s * ut, idx


def piecewise_pdf(x, mu, sigma, lt, ut):
    """Density of the two-sided normal: std ``sigma*lt`` left of ``mu``,
    ``sigma*ut`` right of it.

    Each branch is a full normal density restricted to its half-line, so
    each side carries mass 1/2 and the whole integrates to 1. The density
    jumps at ``mu`` by the factor ``lt / ut`` (left over right).
    """
    if not (sigma > 0 and lt > 0 and ut > 0):
        raise ValueError(f"sigma, lt and ut must be positive, got {sigma}, {lt}, {ut}")
    x = np.asarray(x, dtype=np.float64)
    scale = np.where(x < mu, sigma * lt, sigma * ut)
    out = np.exp(-0.5 * ((x - mu) / scale) ** 2) / (scale * math.sqrt(2.0 * math.pi))
    return float(out) if out.ndim == 0 else out


# -- file format ------------------------------------------------------------

def table_to_dict(table: ThresholdTable) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "threshold_table",
        "target_fpr": table.target_fpr,
        "side_split": table.side_split,
        "bucket_width": table.bucket_width,
        "sigma_blind": table.sigma_blind,
        "fallback_lt": table.fallback_lt,
        "fallback_ut": table.fallback_ut,
        "buckets": [asdict(b) for b in table.buckets],
    }


def save_table(path, table: ThresholdTable, extra=None) -> None:
    doc = table_to_dict(table)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n", encoding="utf-8")


def _num(doc, key, where=""):
    if key not in doc:
        raise TableFormatError(f"missing field {where}{key!r}")
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise TableFormatError(f"field {where}{key!r} must be a finite number")
    return float(v)


def table_from_dict(doc) -> ThresholdTable:
    if not isinstance(doc, dict):
        raise TableFormatError("table document must be an object")
    if "format_version" not in doc:
        raise TableFormatError("missing field 'format_version'")
    if doc["format_version"] != FORMAT_VERSION:
        raise TableFormatError(f"unsupported format_version {doc['format_version']!r} (expected {FORMAT_VERSION})")
    if doc.get("kind", "threshold_table") != "threshold_table":
        raise TableFormatError(f"field 'kind' is {doc.get('kind')!r}, expected 'threshold_table'")
    fields = {k: _num(doc, k) for k in ("target_fpr", "side_split", "bucket_width", "fallback_lt", "fallback_ut")}
    for k in ("fallback_lt", "fallback_ut"):
        if fields[k] < 0:
            raise TableFormatError(f"field {k!r} must be non-negative")
    blind = doc.get("sigma_blind", False)
    if not isinstance(blind, bool):
        raise TableFormatError("field 'sigma_blind' must be a boolean")
    rows = doc.get("buckets")
    if not isinstance(rows, list):
        raise TableFormatError("missing field 'buckets'")
    buckets = []
    for j, row in enumerate(rows):
        if not isinstance(row, dict):
            raise TableFormatError(f"field 'buckets[{j}]' must be an object")
        where = f"buckets[{j}]."
        vals = {k: _num(row, k, where) for k in ("lo", "hi", "lt", "ut", "n")}
        for k in ("lt", "ut"):
            if vals[k] < 0:
                raise TableFormatError(f"field '{where}{k}' must be non-negative, got {vals[k]}")
        if vals["n"] < 0 or vals["n"] != int(vals["n"]):
            raise TableFormatError(f"field '{where}n' must be a non-negative integer")
        buckets.append(Bucket(vals["lo"], vals["hi"], vals["lt"], vals["ut"], int(vals["n"])))
    try:
        return ThresholdTable(
            fields["bucket_width"], buckets, fields["fallback_lt"], fields["fallback_ut"],
            fields["target_fpr"], fields["side_split"], blind,
        )
    except ValueError as exc:
        raise TableFormatError(str(exc)) from None


def load_table(path) -> ThresholdTable:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TableFormatError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return table_from_dict(doc)
