"""Train, calibrate and evaluate on synthetic data; print a results table.

    python3 scripts/run_pipeline.py --seed 0 --n-train 20000 --n-eval 100000
"""

import argparse
import time

import numpy as np

from confage.calibration import calibrate, ranges_for
from confage.data import GenConfig, generate
from confage.decision import fixed_width_baseline
from confage.metrics import comparability_stats, mae, per_group_mae, verification_section
from confage.model import ModelSpec, TrainConfig, forward, train

POLICIES = ((18, 25), (21, 28))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=20_000)
    ap.add_argument("--n-eval", type=int, default=100_000)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--target-fpr", type=float, default=0.005)
    args = ap.parse_args()

    t0 = time.perf_counter()
    train_set = generate(GenConfig(n=args.n_train, seed=args.seed))
    calib_set = generate(GenConfig(n=args.n_eval, seed=args.seed + 1000))
    test_set = generate(GenConfig(n=args.n_eval, seed=args.seed + 2000))

    spec = ModelSpec(train_set.input_dim)
    params, history = train(train_set, spec, train_cfg=TrainConfig(epochs=args.epochs, seed=args.seed))
    mu_c, sigma_c = forward(params, spec, calib_set.features)
    mu, sigma = forward(params, spec, test_set.features)
    table = calibrate(mu_c, sigma_c, calib_set.ages, target_fpr=args.target_fpr)
    baseline = fixed_width_baseline(mu_c, calib_set.ages, target_fpr=args.target_fpr)

    print(f"final train loss {history[-1]['train_l_total']:.4f}, val MAE {history[-1]['val_mae']:.3f}")
    print(f"test MAE {mae(mu, test_set.ages):.3f} "
          f"(constant-mean {mae(np.full_like(mu, train_set.ages.mean()), test_set.ages):.3f})")
    for g, value in per_group_mae(mu, test_set.ages, test_set.groups).items():
        print(f"  group {g}: MAE {value:.3f}")

    q1, q3 = np.quantile(test_set.ages, [0.25, 0.75])
    print(f"mean sigma: youngest quartile {sigma[test_set.ages <= q1].mean():.3f}, "
          f"oldest {sigma[test_set.ages >= q3].mean():.3f}")

    print("\nverification (matched TPR)")
    print(f"{'policy':>10} {'TPR':>8} {'SR FPR':>8} {'conf FPR':>9}")
    for legal, challenge in POLICIES:
        m = verification_section(mu, sigma, test_set.ages, legal, challenge, table)["matched"]
        print(f"{legal:>4}/{challenge:<5} {m['sr_tpr']:8.4f} {m['sr_fpr']:8.4f} {m['confidence_fpr']:9.4f}")

    print(f"\ncomparability at target FPR {args.target_fpr}")
    print(f"{'method':>12} {'outside':>8} {'median w':>9} {'mean w':>8}")
    for name, t in (("confidence", table), ("fixed-width", baseline)):
        lo, hi, _ = ranges_for(mu, sigma, t)
        s = comparability_stats(lo, hi, test_set.ages)
        print(f"{name:>12} {s['empirical_fpr']:8.4f} {s['median_width']:9.2f} {s['mean_width']:8.2f}")
    print(f"\n{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
