"""Story transcripts on a millisecond timeline.

A :class:`Transcript` holds the normalized words of a story together with
their forced-alignment onset/offset times and the indices of the words that
open each sentence. Everything downstream (model output alignment, button
press attribution, boundary vectors) is expressed on this timeline.

Tokenizers are injected. Anything with ``encode(text) -> list[TokenId]`` and
``decode(tokens) -> str`` that round-trips its input works; a small
regex-based :class:`SimpleTokenizer` is bundled so the pipeline runs without
downloading a vocabulary.
"""
from __future__ import annotations

import csv
import io
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence


class TranscriptError(ValueError):
    """Raised for malformed transcripts or timing records."""


@dataclass(frozen=True)
class Word:
    text: str
    onset_ms: int
    offset_ms: int


@dataclass(frozen=True)
class TokenId:
    id: int
    text: str


@dataclass(frozen=True)
class TimedToken:
    token: TokenId
    onset_ms: int
    offset_ms: int
    word_index: int


@dataclass(frozen=True)
class SentenceBoundary:
    index: int
    time_ms: int
    after_word: int


@dataclass(frozen=True)
class Transcript:
    words: tuple[Word, ...] = ()
    sentence_starts: tuple[int, ...] = ()
    duration_ms: int = 0

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "sentence_starts", tuple(self.sentence_starts))
        _check_words(self.words)
        starts = self.sentence_starts
        if self.words:
            if not starts or starts[0] != 0:
                raise TranscriptError("first sentence must start at word 0")
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise TranscriptError("sentence starts must be strictly increasing")
            if starts[-1] >= len(self.words):
                raise TranscriptError("sentence start beyond last word")
            if self.duration_ms < self.words[-1].offset_ms:
                raise TranscriptError("duration shorter than the last word")
        elif starts:
            raise TranscriptError("sentence starts given for an empty transcript")

    @property
    def text(self) -> str:
        return " ".join(w.text for w in self.words)

    @property
    def n_sentences(self) -> int:
        return len(self.sentence_starts)

    def sentences(self) -> list[str]:
        bounds = list(self.sentence_starts) + [len(self.words)]
        return [" ".join(w.text for w in self.words[a:b])
                for a, b in zip(bounds, bounds[1:])]


def _check_words(words: Sequence[Word]) -> None:
    prev_offset = None
    for i, w in enumerate(words):
        if w.onset_ms < 0:
            raise TranscriptError(f"word {i} ({w.text!r}) has negative onset")
        if w.offset_ms <= w.onset_ms:
            raise TranscriptError(f"word {i} ({w.text!r}) has offset <= onset")
        if prev_offset is not None and w.onset_ms < prev_offset:
            raise TranscriptError(f"word {i} ({w.text!r}) overlaps or precedes word {i - 1}")
        prev_offset = w.offset_ms


# --------------------------------------------------------------------------
# Normalization and sentence detection
# --------------------------------------------------------------------------

_QUOTES = "\"“”„‟«»"
_ELLIPSIS = re.compile(r"\.{2,}|…")
_HYPHENS = re.compile("[\u2010\u2011\u2012\u2013\u2014-]")
_TERMINAL = frozenset(".!?")
_ELLIPSIS_MARK = "\u0000"


def normalize_text(raw_text: str) -> str:
    """Strip quotation marks and ellipses and collapse whitespace."""
    text = raw_text.translate({ord(q): None for q in _QUOTES})
    text = _ELLIPSIS.sub(" ", text)
    return " ".join(text.split())


def _core(token: str) -> str:
    return "".join(ch for ch in token.lower() if ch.isalnum())


def split_words(raw_text: str) -> tuple[list[str], list[int]]:
    """Normalize ``raw_text`` into words and detect sentence starts.

    A sentence ends at a word whose last character is ``.``, ``!`` or ``?``
    (or that was followed by an ellipsis in the raw text) when the next word
    begins with an uppercase letter.
    """
    if _HYPHENS.search(raw_text):
        raise TranscriptError("transcript text must not contain hyphens")
    text = raw_text.translate({ord(q): None for q in _QUOTES})
    # keep ellipses as sentence-end markers until words are split
    text = _ELLIPSIS.sub(_ELLIPSIS_MARK + " ", text)
    words: list[str] = []
    ends_sentence: list[bool] = []
    for chunk in text.split():
        stripped = chunk.replace(_ELLIPSIS_MARK, "")
        if not stripped:
            if ends_sentence:
                ends_sentence[-1] = True
            continue
        words.append(stripped)
        ends_sentence.append(chunk.endswith(_ELLIPSIS_MARK) or stripped[-1] in _TERMINAL)
    starts = [0] if words else []
    for i in range(1, len(words)):
        first = words[i][0]
        if ends_sentence[i - 1] and first.isupper():
            starts.append(i)
    return words, starts


def load_transcript(raw_text: str, timings: Iterable, *,
                    sentence_starts: Sequence[int] | None = None,
                    duration_ms: int | None = None,
                    check_words: bool = True) -> Transcript:
    """Build a :class:`Transcript` from story text and word timing records.

    ``timings`` are ``(word, onset_ms, offset_ms)`` triples, one per word of the
    normalized text. When ``check_words`` is set, the alphanumeric core of every
    record must match the corresponding text word (case-insensitive).
    ``sentence_starts`` overrides punctuation-based sentence detection.
    """
    records = [(str(w), int(on), int(off)) for w, on, off in timings]
    words, starts = split_words(raw_text)
    if len(words) != len(records):
        raise TranscriptError(
            f"text has {len(words)} words but {len(records)} timing records")
    out = []
    for i, (text_word, (rec_word, on, off)) in enumerate(zip(words, records)):
        if check_words and _core(text_word) != _core(rec_word):
            raise TranscriptError(
                f"word {i}: text {text_word!r} does not match timing record {rec_word!r}")
        out.append(Word(text_word, on, off))
    if sentence_starts is not None:
        starts = list(sentence_starts)
    if duration_ms is None:
        duration_ms = out[-1].offset_ms if out else 0
    return Transcript(tuple(out), tuple(starts), duration_ms)


def read_timings_csv(source) -> list[tuple[str, int, int]]:
    """Read ``word,onset_ms,offset_ms`` rows from a path or text."""
    rows = _read_csv(source, ("word", "onset_ms", "offset_ms"))
    try:
        return [(r["word"], int(r["onset_ms"]), int(r["offset_ms"])) for r in rows]
    except ValueError as exc:
        raise TranscriptError(f"bad timing value: {exc}") from None


def read_sentence_sidecar(source) -> list[int]:
    """Read ``sentence_index,first_word_index`` rows; returns word indices in sentence order."""
    rows = _read_csv(source, ("sentence_index", "first_word_index"))
    pairs = sorted((int(r["sentence_index"]), int(r["first_word_index"])) for r in rows)
    if [p[0] for p in pairs] != list(range(len(pairs))):
        raise TranscriptError("sentence indices must be 0..n-1")
    return [p[1] for p in pairs]


def write_timings_csv(timings: Iterable[tuple[str, int, int]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["word", "onset_ms", "offset_ms"])
        writer.writerows(timings)


def _read_csv(source, required: tuple[str, ...]) -> list[dict]:
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).exists()):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in required if c not in (reader.fieldnames or ())]
    if missing:
        raise TranscriptError(f"CSV missing columns: {missing}")
    return list(reader)


def load_transcript_files(text_path, timings_path, sentences_path=None,
                          duration_ms: int | None = None) -> Transcript:
    starts = read_sentence_sidecar(Path(sentences_path)) if sentences_path else None
    return load_transcript(Path(text_path).read_text(encoding="utf-8"),
                           read_timings_csv(Path(timings_path)),
                           sentence_starts=starts, duration_ms=duration_ms)


# --------------------------------------------------------------------------
# Sentence boundaries and token timing
# --------------------------------------------------------------------------

def sentence_boundary_times(t: Transcript) -> list[SentenceBoundary]:
    """Times of the sentence boundaries of ``t``.

    Internal boundaries sit halfway between the offset of a sentence's last
    word and the onset of the next sentence's first word (integer ms, rounded
    down). A terminal boundary is placed at the offset of the final word.
    """
    if not t.words:
        raise TranscriptError("empty transcript has no sentence boundaries")
    out = []
    for k, start in enumerate(t.sentence_starts[1:]):
        prev, nxt = t.words[start - 1], t.words[start]
        out.append(SentenceBoundary(k, (prev.offset_ms + nxt.onset_ms) // 2, start - 1))
    last = len(t.words) - 1
    out.append(SentenceBoundary(len(out), t.words[last].offset_ms, last))
    return out


class Tokenizer(Protocol):
    def encode(self, text: str) -> list[TokenId]: ...

    def decode(self, tokens: Sequence[TokenId]) -> str: ...


_PRETOKEN = re.compile(
    r"'(?:s|t|re|ve|m|ll|d)\b| ?[^\W\d_]+| ?\d+| ?[^\s\w]+|\s+(?!\S)|\s+")


@dataclass
class SimpleTokenizer:
    """Reversible GPT-2-style tokenizer without a learned vocabulary.

    Text is pre-split like GPT-2 (leading space attached to the following
    word, punctuation and digits separate). Letter runs longer than
    ``max_piece`` characters are cut into chunks so long words become several
    tokens. Token ids are CRC32 hashes of the token text, so they are stable
    across processes.
    """

    max_piece: int = 6
    _cache: dict = field(default_factory=dict, repr=False)

    def _token(self, text: str) -> TokenId:
        tok = self._cache.get(text)
        if tok is None:
            tok = self._cache[text] = TokenId(zlib.crc32(text.encode("utf-8")), text)
        return tok

    def encode(self, text: str) -> list[TokenId]:
        out = []
        for piece in _PRETOKEN.findall(text):
            lead = " " if piece.startswith(" ") and len(piece) > 1 else ""
            body = piece[len(lead):]
            if body.isalpha() and len(body) > self.max_piece:
                chunks = [body[i:i + self.max_piece] for i in range(0, len(body), self.max_piece)]
                chunks[0] = lead + chunks[0]
                out.extend(self._token(c) for c in chunks)
            else:
                out.append(self._token(piece))
        return out

    def decode(self, tokens: Sequence[TokenId]) -> str:
        return "".join(t.text for t in tokens)


class HFTokenizer:
    """Adapter for a Hugging Face tokenizer (e.g. ``"gpt2"``).

    Requires ``transformers`` and a locally available vocabulary.
    """

    def __init__(self, name: str = "gpt2"):
        from transformers import AutoTokenizer

        self._tok = AutoTokenizer.from_pretrained(name)

    def encode(self, text: str) -> list[TokenId]:
        ids = self._tok.encode(text)
        return [TokenId(i, self._tok.decode([i])) for i in ids]

    def decode(self, tokens: Sequence[TokenId]) -> str:
        return self._tok.decode([t.id for t in tokens])


def word_tokens(t: Transcript, tok: Tokenizer) -> list[list[TokenId]]:
    """Tokenize every word; words after the first carry a leading space."""
    out = []
    for i, w in enumerate(t.words):
        surface = w.text if i == 0 else " " + w.text
        toks = tok.encode(surface)
        if not toks or "".join(x.text for x in toks) != surface:
            raise TranscriptError(f"tokenizer does not round-trip word {i} ({w.text!r})")
        out.append(toks)
    return out


def timed_tokens(t: Transcript, tok: Tokenizer) -> list[TimedToken]:
    """Split each word's ``[onset, offset)`` interval evenly over its tokens.

    Spans are integer milliseconds; the division remainder goes to the last
    token so the tokens of a word tile its interval exactly.
    """
    out = []
    for i, (w, toks) in enumerate(zip(t.words, word_tokens(t, tok))):
        k = len(toks)
        span = w.offset_ms - w.onset_ms
        if span < k:
            raise TranscriptError(
                f"word {i} ({w.text!r}) spans {span}ms but has {k} tokens")
        step = span // k
        for j, token in enumerate(toks):
            on = w.onset_ms + j * step
            off = w.offset_ms if j == k - 1 else on + step
            out.append(TimedToken(token, on, off, i))
    return out
