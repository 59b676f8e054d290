"""
Comparing model and human segmentations
=======================================

Both segmentations become binary vectors over sentence boundaries. Their
Hamming distance is judged against random permutations of the model vector.
Distances of individual listeners give a reference group for a t-test, and
the two log-probability traces are cross-correlated over lags.
"""

import numpy as np

from eventseg.align import ProbTrace
from eventseg.stats import (cross_correlate, distance_ttest, hamming, interpolate_missing,
                            permutation_test)

rng = np.random.default_rng(5)
n = 80
human = np.zeros(n, np.int8)
human[rng.choice(n, 16, replace=False)] = 1

# a model that agrees on most boundaries and misplaces a few
model = human.copy()
flip = rng.choice(n, 10, replace=False)
model[flip] = 1 - model[flip]
print(f"Hamming distance {hamming(model, human):.3f}")

res = permutation_test(model, human, n=100_000, seed=0)
print(f"p = {res.p_value:.5f} from {res.n_permutations} permutations")

# six model runs against thirty listeners
model_d = [0.12, 0.13, 0.12, 0.15, 0.12, 0.14]
human_d = list(np.clip(rng.normal(0.2, 0.05, 30), 0, 1))
tt = distance_ttest(model_d, human_d)
print(f"Welch t = {tt.t:.2f}, df = {tt.df:.1f}, p = {tt.p_two_sided:.4f}")

# traces: the human one trails the model one by 250 ms
t = np.arange(40_000)
base = np.sin(t / 900.0) + 0.3 * np.sin(t / 170.0)
model_trace = np.where(rng.random(t.size) < 0.02, base, np.nan)
human_trace = np.concatenate((np.full(250, base[0]), base[:-250]))
a = interpolate_missing(ProbTrace(model_trace))
cc = cross_correlate(a, ProbTrace(human_trace), max_lag_ms=1000)
# smooth traces have very few independent samples, so even a high zero-lag r
# need not be significant
print(f"zero-lag r = {cc.zero_lag_r:.3f} (p = {cc.p_zero_lag:.2g}, n_eff = {cc.n_eff:.0f})")
print(f"peak r = {cc.peak[1]:.3f} at {cc.peak[0]} ms")
