"""
Consensus boundaries from button presses
========================================

Listeners press a key whenever they feel one event end and another begin.
Each press marks the surrounding second; averaging over listeners gives an
agreement curve, which is smoothed and thresholded. The peak of every
supra-threshold cluster is a consensus boundary.
"""

import numpy as np

from eventseg.consensus import (agreement_curve, consensus_boundaries, press_logprob_trace,
                                response_vector, snap_to_sentences)
from eventseg.synthetic import noisy_logs
from eventseg.transcript import SentenceBoundary

duration = 60_000
truth = [9_000, 22_000, 31_000, 48_000]

# listeners catch about two thirds of the boundaries, late, and add false alarms
logs = noisy_logs(truth, 25, duration, hit_rate=0.65, seed=4)
print(logs[0])

v = response_vector(logs[0], duration)
print("first participant marks", int(v.sum()), "ms")

curve = agreement_curve(logs, duration)
print(f"peak agreement {curve.values.max():.2f}")

# sigma 1 s; the threshold defaults to the smoothed mean plus one SD
cb = consensus_boundaries(curve)
print(f"threshold {cb.threshold:.3f}; boundaries at {cb.times_ms}")
print("reaction delays:", [b - t for b, t in zip(cb.times_ms, truth)])

# boundaries are attributed to the nearest sentence boundary
sb = [SentenceBoundary(i, ms, i) for i, ms in enumerate(range(3000, duration, 3000))]
bits = snap_to_sentences(cb, sb)
print("sentence bits:", bits.tolist())

# the human trace is the log of the agreement ratio, undefined where nobody pressed
lp = press_logprob_trace(curve)
print(f"{np.isnan(lp.values).mean():.0%} of the timeline has no presses")
