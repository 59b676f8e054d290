"""
Copy-and-split segmentation
===========================

The model is asked to copy a story and start a new line at every event
boundary. Long stories are fed through a sliding window: the last event of
each reply may be cut off, so it is dropped and the next window starts there.
Here a scripted mock plays the model.
"""

import numpy as np

from eventseg.llm_backend import (MockBackend, PromptVariant, build_prompt, instruction_tokens,
                                  story_script, token_budget)
from eventseg.segmenter import boundary_vector, segment_story
from eventseg.synthetic import make_story
from eventseg.transcript import (SimpleTokenizer, load_transcript, sentence_boundary_times,
                                 timed_tokens)

tok = SimpleTokenizer()
text, timings, starts = make_story(400, seed=2)
t = load_transcript(text, timings, sentence_starts=starts)
tt = timed_tokens(t, tok)
print(f"{len(tt)} tokens in {t.n_sentences} sentences")

# the two prompt variants differ only in asking for "long" events
print(build_prompt("Once upon a time.", PromptVariant.long))

# half of what is left after the instructions goes to the story segment, the
# other half to the copy
n_instr = instruction_tokens(tok)
print(token_budget(n_instr))

# script the mock to put boundaries at every fourth sentence
first = {}
for i, x in enumerate(tt):
    first.setdefault(x.word_index, i)
events_at = [first[s] for s in starts[4::4]]
mock = MockBackend(story_script([x.token.text for x in tt], events_at), tok)

# a small budget forces several windows
seg = segment_story(tt, mock, tok, segment_budget=150)
print("windows:", seg.windows)
print(f"{seg.n_events} events; copy match {seg.copy_report().match_ratio:.3f}")
print(seg.events[1].text[:80], "...")

# event onsets are snapped to the nearest sentence boundary
bv = boundary_vector(seg, sentence_boundary_times(t), tt)
print("boundary after sentences:", np.flatnonzero(bv.bits).tolist())

# a larger budget gives the same events in fewer windows
seg2 = segment_story(tt, MockBackend(story_script([x.token.text for x in tt], events_at), tok),
                     tok, segment_budget=400)
assert seg2.events == seg.events
print("windows with budget 400:", seg2.windows)
