"""Task policies on top of a ``(mu, sigma)`` prediction.

``flagged`` always means "treat as potentially underage": a flagged adult
is a false positive, a flagged minor a true positive.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .calibration import AgeRange, ThresholdTable, calibrate, range_for, ranges_for

METHODS = ("confidence", "singular_regression")
MAX_CLAIMED_AGE = 115.0


@dataclass(frozen=True)
class VerificationPolicy:
    legal_age: float = 18.0
    challenge_age: float = 25.0
    method: str = "confidence"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.challenge_age >= self.legal_age:
            raise ValueError(
                f"challenge_age ({self.challenge_age}) must be >= legal_age ({self.legal_age})"
            )


@dataclass(frozen=True)
class DecisionRecord:
    task: str
    mu: float
    sigma: float
    range: Optional[AgeRange] = None
    flagged: Optional[bool] = None
    accepted: Optional[bool] = None
    claimed_age: Optional[float] = None
    policy: Optional[dict] = None

    def to_dict(self) -> dict:
        d = {"task": self.task, "mu": self.mu, "sigma": self.sigma}
        if self.range is not None:
            d["range"] = asdict(self.range)
        for key in ("flagged", "accepted", "claimed_age", "policy"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        return d

    def to_json(self) -> str:
        """One line, keys in fixed order."""
        return json.dumps(self.to_dict(), allow_nan=False, separators=(",", ":"))


def _check(mu, sigma):
    if not (math.isfinite(mu) and math.isfinite(sigma)):
        raise ValueError("mu and sigma must be finite")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def estimate_age(mu: float, sigma: float) -> float:
    _check(mu, sigma)
    return float(mu)


def estimate(mu, sigma) -> DecisionRecord:
    return DecisionRecord("estimate", float(mu), float(sigma))


def verify(mu: float, sigma: float, policy: VerificationPolicy, table: ThresholdTable = None) -> DecisionRecord:
    """Flag a subject who may be under ``policy.legal_age``.

    Singular regression flags ``mu < challenge_age``. The confidence method
    flags when the lower end of the calibrated range is below ``legal_age``.
    """
    mu, sigma = float(mu), float(sigma)
    _check(mu, sigma)
    echo = asdict(policy)
    if policy.method == "singular_regression":
        return DecisionRecord("verify", mu, sigma, flagged=mu < policy.challenge_age, policy=echo)
    if table is None:
        raise ValueError("the confidence method needs a threshold table")
    r = range_for(mu, sigma, table)
    return DecisionRecord("verify", mu, sigma, range=r, flagged=r.lo < policy.legal_age, policy=echo)


def compare(mu: float, sigma: float, claimed_age: float, table: ThresholdTable) -> DecisionRecord:
    """Accept a claimed age iff it lies in the closed confidence range."""
    mu, sigma, claimed_age = float(mu), float(sigma), float(claimed_age)
    _check(mu, sigma)
    if not 0 <= claimed_age < MAX_CLAIMED_AGE:
        raise ValueError(f"claimed_age {claimed_age} outside [0, {MAX_CLAIMED_AGE})")
    r = range_for(mu, sigma, table)
    return DecisionRecord("compare", mu, sigma, range=r, accepted=r.contains(claimed_age), claimed_age=claimed_age)


def verify_flags(mu, sigma, policy: VerificationPolicy, table: ThresholdTable = None) -> np.ndarray:
    """Vectorized ``verify(...).flagged`` over arrays of predictions."""
    mu = np.asarray(mu, dtype=np.float64)
    if policy.method == "singular_regression":
        return mu < policy.challenge_age
    if table is None:
        raise ValueError("the confidence method needs a threshold table")
    lo, _, _ = ranges_for(mu, sigma, table)
    return lo < policy.legal_age


def fixed_width_baseline(mu, truth, target_fpr=0.005, bucket_width=5.0, side_split=0.5, min_bucket_n=50):
    """Sigma-blind comparability table: per-bucket offsets in years.

    Same quantile levels as :func:`calibrate`, on raw residuals.
    """
    mu = np.asarray(mu, dtype=np.float64)
    return calibrate(mu, np.ones_like(mu), truth, target_fpr, bucket_width, side_split, min_bucket_n, sigma_blind=True)
