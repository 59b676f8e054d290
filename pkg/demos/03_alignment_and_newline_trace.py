"""
Aligning the copy and reading off newline probabilities
=======================================================

The model's copy is rarely perfect. Dynamic time warping lines up its tokens
with the transcript so every generated token inherits a time span. Wherever
a newline was among the top candidates, its log-probability is written onto
the millisecond timeline.
"""

import numpy as np

from eventseg.align import apply_warp, dtw_align, newline_trace
from eventseg.llm_backend import CompletionResponse, TokenLogprob
from eventseg.transcript import TimedToken, TokenId

ref = [TimedToken(TokenId(i, w), 400 * i, 400 * i + 350, i)
       for i, w in enumerate("the boy met a very old man".split())]

# the copy drops "very" and inserts "then"
gen = "the boy then met a old man".split()
path = dtw_align(gen, [r.token.text for r in ref])
print("cost", path.cost, "path", path.pairs)

spans = apply_warp(path, ref, len(gen))
for w, (a, b) in zip(gen, spans):
    print(f"{w:>5}: {a}-{b} ms")

# a reply whose tokens carry top-5 alternatives; "\n" is a candidate twice
tokens = [TokenLogprob(w, -0.1, {w: -0.1, "\n": lp} if lp is not None else {w: -0.1})
          for w, lp in zip(gen, [None, -2.5, None, None, None, -0.4, None])]
reply = CompletionResponse(" ".join(gen), tuple(tokens))
trace = newline_trace(reply, spans, 3000)
print("defined ms:", int(trace.defined.sum()))
for start, end, value in trace.runs():
    print(f"  {start}-{end} ms: {value}")
assert np.isnan(trace.values[0])
