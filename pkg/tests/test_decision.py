import json

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from confage.calibration import Bucket, ThresholdTable, calibrate, ranges_for
from confage.decision import (
    VerificationPolicy,
    compare,
    estimate,
    estimate_age,
    fixed_width_baseline,
    verify,
    verify_flags,
)
from confage.metrics import lower_median


def flat_table(lt, ut, width=5.0):
    buckets = [Bucket(width * k, width * (k + 1), lt, ut, 100) for k in range(int(115 // width))]
    return ThresholdTable(width, buckets, lt, ut, 0.05)


def test_estimate_is_identity_on_mu():
    assert estimate_age(34.2, 5.0) == 34.2
    assert estimate_age(34.2, 0.1) == 34.2
    rec = estimate(34.2, 5.0)
    assert rec.to_dict() == {"task": "estimate", "mu": 34.2, "sigma": 5.0}
    with pytest.raises(ValueError):
        estimate_age(34.2, 0.0)


def test_policy_validation():
    with pytest.raises(ValueError):
        VerificationPolicy(legal_age=21, challenge_age=18)
    with pytest.raises(ValueError):
        VerificationPolicy(method="vibes")


def test_sr_boundary_is_strict():
    pol = VerificationPolicy(18, 25, "singular_regression")
    assert verify(24.9, 3.0, pol).flagged
    assert not verify(25.0, 3.0, pol).flagged
    assert verify(24.9, 3.0, pol).range is None


def test_confidence_example():
    rec = verify(27.0, 3.0, VerificationPolicy(18, 25, "confidence"), flat_table(2.0, 2.0))
    assert rec.range.lo == 21.0 and not rec.flagged
    assert rec.policy == {"legal_age": 18, "challenge_age": 25, "method": "confidence"}


def test_confidence_needs_table():
    with pytest.raises(ValueError, match="table"):
        verify(27.0, 3.0, VerificationPolicy(method="confidence"))
    with pytest.raises(ValueError, match="table"):
        verify_flags([27.0], [3.0], VerificationPolicy(method="confidence"))


def test_compare_examples():
    table = flat_table(2.0, 2.0)
    inside = compare(40.0, 2.0, 43.0, table)
    assert (inside.range.lo, inside.range.hi) == (36.0, 44.0) and inside.accepted
    assert not compare(40.0, 2.0, 44.5, table).accepted
    # closed interval at both ends
    assert compare(40.0, 2.0, 36.0, table).accepted and compare(40.0, 2.0, 44.0, table).accepted
    with pytest.raises(ValueError):
        compare(40.0, 2.0, 115.0, table)


def test_record_serializes_on_one_line():
    rec = compare(40.0, 2.0, 43.0, flat_table(2.0, 2.0))
    line = rec.to_json()
    assert "\n" not in line
    back = json.loads(line)
    assert back["accepted"] is True and back["claimed_age"] == 43.0
    assert "flagged" not in back and back["range"]["lo"] == 36.0


def test_vectorized_flags_match_scalar(rng):
    table = calibrate(rng.uniform(3, 91, 4000), rng.uniform(0.5, 5, 4000), rng.uniform(3, 91, 4000), 0.05)
    mu, sigma = rng.uniform(0, 100, 500), rng.uniform(0.1, 8, 500)
    for method in ("confidence", "singular_regression"):
        pol = VerificationPolicy(18, 25, method)
        flags = verify_flags(mu, sigma, pol, table)
        assert flags.tolist() == [verify(m, s, pol, table).flagged for m, s in zip(mu, sigma)]


@given(st.floats(0, 110), st.floats(0, 4.99), st.floats(0, 4.99), st.floats(0.01, 10))
def test_confidence_monotone_within_bucket(base, d1, d2, sigma):
    table = ThresholdTable(5.0, [Bucket(5.0 * k, 5.0 * k + 5, 0.5 + 0.1 * k, 1.0, 60) for k in range(23)], 1, 1, 0.05)
    start = 5.0 * np.floor(base / 5.0)
    mu1, mu2 = sorted((start + d1, start + d2))
    pol = VerificationPolicy(18, 25)
    if verify(mu2, sigma, pol, table).flagged:
        assert verify(mu1, sigma, pol, table).flagged


@given(st.floats(0, 110), st.floats(18, 40))
def test_vanishing_sigma_reduces_to_legal_age(mu, challenge):
    # the limit is pointwise away from the boundary itself
    assume(challenge > 18 and abs(mu - 18) > 1e-9)
    table = flat_table(3.0, 3.0)
    conf = verify(mu, 1e-12, VerificationPolicy(18, challenge), table).flagged
    sr = verify(mu, 1e-12, VerificationPolicy(18, challenge, "singular_regression")).flagged
    assert conf == (mu < 18)
    # confidence is never stricter than SR in this limit
    assert sr or not conf


@given(st.floats(0, 110), st.floats(0.01, 10))
def test_range_endpoints_accepted(mu, sigma):
    table = flat_table(1.7, 2.3)
    rec = compare(mu, sigma, 50.0, table)
    if 0 <= rec.range.lo < 115:
        assert compare(mu, sigma, rec.range.lo, table).accepted
    if 0 <= rec.range.hi < 115:
        assert compare(mu, sigma, rec.range.hi, table).accepted


def test_baseline_perfect_predictor():
    mu = np.linspace(3, 91, 1000)
    base = fixed_width_baseline(mu, mu, target_fpr=0.05)
    assert base.sigma_blind
    assert all(b.lt == 0 and b.ut == 0 for b in base.buckets)


def test_baseline_offsets_are_raw_residual_quantiles(rng):
    mu = rng.uniform(30, 35, 2000)
    truth = mu + rng.normal(0, 4, 2000)
    (b,) = fixed_width_baseline(mu, truth, target_fpr=0.1).buckets
    assert b.lt == pytest.approx(np.quantile(np.maximum(mu - truth, 0), 0.95), rel=1e-12)
    assert b.ut == pytest.approx(np.quantile(np.maximum(truth - mu, 0), 0.95), rel=1e-12)


def test_homoscedastic_widths_match_baseline(rng):
    # sigma jitters around a constant and carries no information about the residual
    n = 50_000
    mu = rng.uniform(3, 91, n)
    sigma = 3.0 * rng.uniform(0.95, 1.05, n)
    truth = mu + rng.normal(0, 3.0, n)
    conf = calibrate(mu, sigma, truth, 0.005)
    base = fixed_width_baseline(mu, truth, 0.005)
    lo, hi, _ = ranges_for(mu, sigma, conf)
    blo, bhi, _ = ranges_for(mu, sigma, base)
    a, b = lower_median(hi - lo), lower_median(bhi - blo)
    assert a == pytest.approx(b, rel=0.05)


def test_heteroscedastic_widths_beat_baseline(rng):
    n = 50_000
    mu = rng.uniform(3, 91, n)
    sigma = rng.uniform(0.5, 6.0, n)
    truth = mu + sigma * rng.standard_normal(n)
    conf = calibrate(mu, sigma, truth, 0.005)
    base = fixed_width_baseline(mu, truth, 0.005)
    lo, hi, _ = ranges_for(mu, sigma, conf)
    blo, bhi, _ = ranges_for(mu, sigma, base)
    assert lower_median(hi - lo) < lower_median(bhi - blo)
