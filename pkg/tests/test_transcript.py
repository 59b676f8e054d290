import pytest
from hypothesis import given, settings, strategies as st

from eventseg.synthetic import make_story
from eventseg.transcript import (SimpleTokenizer, TimedToken, TokenId, Transcript, TranscriptError,
                                 Word, load_transcript, normalize_text, read_sentence_sidecar,
                                 read_timings_csv, sentence_boundary_times, split_words,
                                 timed_tokens)


def _timings(words, step=500, dur=400):
    return [(w, i * step, i * step + dur) for i, w in enumerate(words)]


def test_quotes_and_ellipses_removed():
    raw = 'He said "stop"... Then left.'
    t = load_transcript(raw, _timings(["He", "said", "stop", "Then", "left"]))
    assert [w.text.rstrip(".") for w in t.words] == ["He", "said", "stop", "Then", "left"]
    assert t.n_sentences == 2
    assert t.sentence_starts == (0, 3)
    assert '"' not in t.text and "..." not in t.text


def test_empty_transcript():
    t = load_transcript("", [])
    assert t.words == () and t.duration_ms == 0


def test_word_count_mismatch():
    with pytest.raises(TranscriptError, match="3 words but 2"):
        load_transcript("one two three", _timings(["one", "two"]))


def test_non_monotonic_timings():
    with pytest.raises(TranscriptError):
        load_transcript("a b", [("a", 0, 500), ("b", 400, 800)])
    with pytest.raises(TranscriptError):
        load_transcript("a b", [("a", 0, 500), ("b", 700, 700)])


def test_word_text_must_match_records():
    with pytest.raises(TranscriptError, match="does not match"):
        load_transcript("one two", _timings(["one", "three"]))
    t = load_transcript("One, two.", _timings(["one", "TWO"]))
    assert t.words[0].text == "One,"


def test_hyphens_rejected():
    with pytest.raises(TranscriptError, match="hyphen"):
        load_transcript("a well-known fact", _timings(["a", "wellknown", "fact"]))


def test_sentence_detection_needs_capital():
    words, starts = split_words("It was 3 p.m. today. Then we went! ok? Yes.")
    assert words[starts[1]] == "Then"
    assert [words[s] for s in starts] == ["It", "Then", "Yes."]


def test_sidecar_override(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("sentence_index,first_word_index\n1,2\n0,0\n")
    starts = read_sentence_sidecar(p)
    assert starts == [0, 2]
    t = load_transcript("a b c d", _timings(list("abcd")), sentence_starts=starts)
    assert t.sentence_starts == (0, 2)


def test_timing_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("word,onset_ms,offset_ms\nHello,0,300\nthere,310,600\n")
    assert read_timings_csv(p) == [("Hello", 0, 300), ("there", 310, 600)]
    with pytest.raises(TranscriptError, match="missing columns"):
        read_timings_csv("word,start\nx,1\n")


def test_transcript_invariants():
    with pytest.raises(TranscriptError):
        Transcript((Word("a", 0, 10),), (1,), 10)
    with pytest.raises(TranscriptError):
        Transcript((Word("a", 0, 10),), (0,), 5)


class TestSentenceBoundaries:
    def test_midpoint(self):
        t = Transcript((Word("A.", 1000, 2000), Word("B.", 2400, 3000)), (0, 1), 3000)
        sb = sentence_boundary_times(t)
        assert [b.time_ms for b in sb] == [2200, 3000]
        assert sb[0].after_word == 0

    def test_single_sentence_terminal(self):
        t = Transcript((Word("a", 0, 4000), Word("b.", 5000, 9000)), (0,), 9500)
        sb = sentence_boundary_times(t)
        assert len(sb) == 1 and sb[0].time_ms == 9000

    def test_three_sentences(self):
        text, timings, starts = make_story(30, seed=3)
        t = load_transcript(text, timings, sentence_starts=starts[:3])
        sb = sentence_boundary_times(t)
        assert len(sb) == 3
        assert all(a.time_ms < b.time_ms for a, b in zip(sb, sb[1:]))

    def test_empty_raises(self):
        with pytest.raises(TranscriptError):
            sentence_boundary_times(Transcript())


class TestTimedTokens:
    def test_even_split(self):
        tok = SimpleTokenizer(max_piece=4)
        t = Transcript((Word("abcdefgh", 1000, 1600),), (0,), 1600)
        tt = timed_tokens(t, tok)
        assert [(x.onset_ms, x.offset_ms) for x in tt] == [(1000, 1300), (1300, 1600)]

    def test_single_token_unchanged(self):
        t = Transcript((Word("cat", 100, 350),), (0,), 400)
        tt = timed_tokens(t, SimpleTokenizer())
        assert [(x.onset_ms, x.offset_ms) for x in tt] == [(100, 350)]

    def test_three_tokens(self):
        tok = SimpleTokenizer(max_piece=2)
        t = Transcript((Word("abcdef", 0, 300),), (0,), 300)
        assert [(x.onset_ms, x.offset_ms) for x in timed_tokens(t, tok)] == [
            (0, 100), (100, 200), (200, 300)]

    def test_remainder_to_last(self):
        tok = SimpleTokenizer(max_piece=2)
        t = Transcript((Word("abcdef", 0, 301),), (0,), 301)
        assert [x.offset_ms - x.onset_ms for x in timed_tokens(t, tok)] == [100, 100, 101]

    def test_word_too_short_for_tokens(self):
        tok = SimpleTokenizer(max_piece=1)
        t = Transcript((Word("abc", 0, 2),), (0,), 2)
        with pytest.raises(TranscriptError):
            timed_tokens(t, tok)

    def test_non_roundtripping_tokenizer(self):
        class Lossy:
            def encode(self, text):
                return [TokenId(0, text.lower())]

            def decode(self, toks):
                return "".join(t.text for t in toks)

        t = Transcript((Word("Cat", 0, 100),), (0,), 100)
        with pytest.raises(TranscriptError, match="round-trip"):
            timed_tokens(t, Lossy())


def _tiles(tt: list[TimedToken], t: Transcript):
    fine = True
    for i, w in enumerate(t.words):
        mine = [x for x in tt if x.word_index == i]
        fine &= mine[0].onset_ms == w.onset_ms and mine[-1].offset_ms == w.offset_ms
        fine &= all(a.offset_ms == b.onset_ms for a, b in zip(mine, mine[1:]))
        fine &= all(x.offset_ms > x.onset_ms for x in mine)
    return fine


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.integers(0, 10_000), st.integers(1, 8))
def test_tiling_and_roundtrip(n_words, seed, max_piece):
    text, timings, _ = make_story(n_words, seed)
    t = load_transcript(text, timings)
    tok = SimpleTokenizer(max_piece=max_piece)
    tt = timed_tokens(t, tok)
    assert _tiles(tt, t)
    assert tok.decode([x.token for x in tt]) == t.text


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.integers(0, 10_000))
def test_normalization_idempotent(n_words, seed):
    text, timings, _ = make_story(n_words, seed)
    t = load_transcript(text, timings)
    again = load_transcript(t.text, timings)
    assert again == t
    assert normalize_text(t.text) == t.text


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.integers(0, 10_000))
def test_boundary_monotonic(n_words, seed):
    text, timings, _ = make_story(n_words, seed)
    t = load_transcript(text, timings)
    sb = sentence_boundary_times(t)
    assert len(sb) == t.n_sentences
    assert all(a.time_ms < b.time_ms for a, b in zip(sb, sb[1:]))


def test_tokenizer_pretokenization():
    tok = SimpleTokenizer(max_piece=6)
    toks = tok.encode("Hello there, friend\nAgain 42")
    assert tok.decode(toks) == "Hello there, friend\nAgain 42"
    assert [x.text for x in toks][:3] == ["Hello", " there", ","]
    assert "\n" in [x.text for x in toks]
    assert tok.encode("abc")[0].id == SimpleTokenizer().encode("abc")[0].id
