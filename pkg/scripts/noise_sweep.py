"""Range-width reduction over the fixed-width baseline as group noise spreads.

With equal group multipliers and no age slope, sigma carries no information
inside a bucket and the two methods should tie.

    python3 scripts/noise_sweep.py --seed 0
"""

import argparse

from confage.calibration import calibrate, ranges_for
from confage.data import GenConfig, generate
from confage.decision import fixed_width_baseline
from confage.metrics import comparability_stats
from confage.model import ModelSpec, TrainConfig, forward, train

SETTINGS = (
    ("homoscedastic", 0.0, (1.0, 1.0, 1.0, 1.0)),
    ("age slope only", 1.0, (1.0, 1.0, 1.0, 1.0)),
    ("mild groups", 1.0, (0.75, 1.0, 1.25, 1.5)),
    ("default", 1.0, (0.5, 1.0, 1.5, 3.0)),
    ("wide groups", 1.0, (0.25, 1.0, 2.0, 4.0)),
)


def run(seed, slope, mult, n_train, n_eval, target):
    def make(n, s):
        return generate(GenConfig(n=n, seed=s, noise_slope=slope, group_noise_mult=mult))

    tr, ca, te = make(n_train, seed), make(n_eval, seed + 1000), make(n_eval, seed + 2000)
    spec = ModelSpec(tr.input_dim)
    params, _ = train(tr, spec, train_cfg=TrainConfig(seed=seed))
    mu_c, sigma_c = forward(params, spec, ca.features)
    mu, sigma = forward(params, spec, te.features)
    out = []
    for t in (calibrate(mu_c, sigma_c, ca.ages, target), fixed_width_baseline(mu_c, ca.ages, target)):
        lo, hi, _ = ranges_for(mu, sigma, t)
        out.append(comparability_stats(lo, hi, te.ages))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=20_000)
    ap.add_argument("--n-eval", type=int, default=50_000)
    ap.add_argument("--target-fpr", type=float, default=0.005)
    args = ap.parse_args()
    print(f"{'setting':>15} {'conf w':>7} {'fixed w':>8} {'reduction':>10} {'conf out':>9} {'fixed out':>10}")
    for name, slope, mult in SETTINGS:
        conf, fixed = run(args.seed, slope, mult, args.n_train, args.n_eval, args.target_fpr)
        red = 1 - conf["median_width"] / fixed["median_width"]
        print(f"{name:>15} {conf['median_width']:7.2f} {fixed['median_width']:8.2f} {red:10.1%} "
              f"{conf['empirical_fpr']:9.4f} {fixed['empirical_fpr']:10.4f}")


if __name__ == "__main__":
    main()
