"""
From a transcript to timed tokens
=================================

A story arrives as plain text plus one timing record per spoken word. We
normalize the text, check it against the timings, cut it into tokens and give
every token a share of its word's time span.
"""

from eventseg.synthetic import make_story
from eventseg.transcript import (SimpleTokenizer, load_transcript, sentence_boundary_times,
                                 timed_tokens)

# a small synthetic story: pseudo-words, sentence punctuation, realistic timings
text, timings, starts = make_story(40, seed=1)
print(text[:120], "...")
print(timings[:3])

# quotes and ellipses are stripped; sentences are detected from the punctuation
t = load_transcript(text, timings)
print(f"{len(t.words)} words, {t.n_sentences} sentences, {t.duration_ms} ms")

# a sentence boundary sits midway through the pause between two sentences
for b in sentence_boundary_times(t)[:4]:
    print(f"boundary {b.index} at {b.time_ms} ms (after word {b.after_word})")

# long words become several tokens; their due time is split evenly and the
# remainder goes to the last piece
tok = SimpleTokenizer(max_piece=4)
tt = timed_tokens(t, tok)
for x in tt[:8]:
    print(f"{x.token.text!r:>10}  word {x.word_index:>2}  {x.onset_ms:>5}-{x.offset_ms} ms")

# the tokens reproduce the normalized text exactly
assert tok.decode([x.token for x in tt]) == t.text
