"""Prompt construction and completion backends.

Backends implement one method, ``complete(request) -> CompletionResponse``.
Three are provided:

* :class:`HTTPBackend` talks to an OpenAI-style ``/completions`` endpoint.
* :class:`MockBackend` answers from a JSON script and echoes the story segment
  back with newlines at scripted token positions.
* :class:`ReplayBackend` returns archived responses in order.

:func:`complete` wraps any backend with the retry policy.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .transcript import Tokenizer

log = logging.getLogger(__name__)

CONTEXT_WINDOW = 4096
USABLE_TOKENS = CONTEXT_WINDOW // 2
TOP_LOGPROBS = 5
API_KEY_ENV = "EVENT_SEG_API_KEY"
DEFAULT_MODEL = "text-davinci-002"


class PromptVariant(str, enum.Enum):
    standard = "standard"
    long = "long"


class BackendError(RuntimeError):
    """The backend refused the request or returned something unusable."""


class TransportError(BackendError):
    """Network-level failure; safe to retry."""


# ``{event}``/``{events}`` mark the occurrences that get the "long" qualifier.
# The opening definition is written out literally so it is never qualified.
_HEADER = ("An event is an ongoing coherent situation. "
           "The following story needs to be copied and segmented into {events}. "
           "Copy the following story word-for-word and start a new line whenever "
           "one {event} ends and another begins. This is the story: ")
_REFRESHER = "This is a word-for-word copy of the same story that is segmented into {events}:"


def _fill(template: str, variant: PromptVariant) -> str:
    q = "long " if PromptVariant(variant) is PromptVariant.long else ""
    return template.format(event=q + "event", events=q + "events")


def prompt_parts(variant: PromptVariant = PromptVariant.standard) -> tuple[str, str]:
    """Instruction header and refresher line for ``variant``."""
    return _fill(_HEADER, variant), _fill(_REFRESHER, variant)


def build_prompt(segment: str, variant: PromptVariant = PromptVariant.standard) -> str:
    """Header, story segment, newline, refresher line."""
    if not segment or not segment.strip():
        raise ValueError("story segment is empty")
    header, refresher = prompt_parts(variant)
    return f"{header}{segment}\n{refresher}"


def extract_segment(prompt: str) -> str:
    """Recover the story segment from a prompt made by :func:`build_prompt`."""
    for variant in PromptVariant:
        header, refresher = prompt_parts(variant)
        tail = "\n" + refresher
        if prompt.startswith(header) and prompt.endswith(tail):
            return prompt[len(header):len(prompt) - len(tail)]
    raise BackendError("prompt does not follow the segmentation template")


def instruction_tokens(tok: Tokenizer, variant: PromptVariant = PromptVariant.standard) -> int:
    """Number of prompt tokens that are not story text."""
    header, refresher = prompt_parts(variant)
    return len(tok.encode(header)) + len(tok.encode("\n" + refresher))


@dataclass(frozen=True)
class TokenBudget:
    context_window: int
    usable: int
    instruction_tokens: int
    segment_budget: int
    max_tokens: int
    padding: int


def token_budget(instruction_tokens: int, padding: int = 0, *,
                 usable: int = USABLE_TOKENS,
                 context_window: int = CONTEXT_WINDOW) -> TokenBudget:
    """Split the usable window evenly between the story segment and the output.

    >>> token_budget(96, 512).max_tokens
    1488
    """
    if instruction_tokens < 0 or padding < 0:
        raise ValueError("instruction_tokens and padding must be non-negative")
    if instruction_tokens >= usable:
        raise ValueError(f"instruction uses {instruction_tokens} of {usable} tokens; no room for story")
    seg = (usable - instruction_tokens) // 2
    if seg < 1:
        raise ValueError("budget admits no story tokens")
    return TokenBudget(context_window, usable, instruction_tokens, seg, seg + padding, padding)


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int
    temperature: float = 0.0
    top_logprobs: int = TOP_LOGPROBS

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.temperature != 0.0 or self.top_logprobs != TOP_LOGPROBS:
            raise ValueError("segmentation requests use temperature 0 and top-5 logprobs")


@dataclass(frozen=True)
class TokenLogprob:
    text: str
    logprob: float
    top: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.top) > TOP_LOGPROBS:
            raise ValueError("more than 5 top-logprob candidates")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    tokens: tuple[TokenLogprob, ...]
    finish_reason: str = "stop"

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.finish_reason not in ("stop", "length"):
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")

    def to_json(self) -> dict:
        """OpenAI-style ``choices[0]`` payload."""
        return {
            "text": self.text,
            "logprobs": {
                "tokens": [t.text for t in self.tokens],
                "token_logprobs": [t.logprob for t in self.tokens],
                "top_logprobs": [dict(t.top) for t in self.tokens],
            },
            "finish_reason": self.finish_reason,
        }

    @classmethod
    def from_json(cls, choice: dict) -> "CompletionResponse":
        try:
            lp = choice.get("logprobs") or {}
            texts = lp.get("tokens") or []
            lps = lp.get("token_logprobs") or [0.0] * len(texts)
            tops = lp.get("top_logprobs") or [{}] * len(texts)
            tokens = [TokenLogprob(t, float(p if p is not None else 0.0),
                                   {k: float(v) for k, v in (top or {}).items()})
                      for t, p, top in zip(texts, lps, tops)]
            reason = choice.get("finish_reason") or "stop"
            return cls(choice["text"], tuple(tokens), reason)
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed completion payload: {exc}") from None


class Backend(Protocol):
    def complete(self, req: CompletionRequest) -> CompletionResponse: ...


def complete(req: CompletionRequest, backend: Backend, *, retries: int = 3,
             backoff_s: float = 1.0, sleep: Callable[[float], None] = time.sleep
             ) -> CompletionResponse:
    """Issue ``req``; retry transport errors with exponential backoff."""
    delay = backoff_s
    for attempt in range(retries + 1):
        try:
            return backend.complete(req)
        except TransportError as exc:
            if attempt == retries:
                raise
            log.warning("transport error (%s); retry %d/%d in %.1fs",
                        exc, attempt + 1, retries, delay)
            sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")


class HTTPBackend:
    """OpenAI-compatible completions endpoint."""

    def __init__(self, url: str = "https://api.openai.com/v1/completions",
                 model: str = DEFAULT_MODEL, timeout_s: float = 120.0,
                 api_key: str | None = None, client=None):
        import httpx

        self.url = url
        self.model = model
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._client = client or httpx.Client(timeout=timeout_s)
        self._httpx = httpx

    def payload(self, req: CompletionRequest) -> dict:
        return {"model": self.model, "prompt": req.prompt, "max_tokens": req.max_tokens,
                "temperature": req.temperature, "logprobs": req.top_logprobs}

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        try:
            r = self._client.post(self.url, json=self.payload(req), headers=headers)
        except self._httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if r.status_code == 429 or r.status_code >= 500:
            raise TransportError(f"HTTP {r.status_code}")
        if r.status_code >= 400:
            raise BackendError(f"HTTP {r.status_code}: {r.text[:200]}")
        try:
            return CompletionResponse.from_json(r.json()["choices"][0])
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed response: {exc}") from None


def is_newline_text(text: str) -> bool:
    return bool(text) and set(text) == {"\n"}


@dataclass(frozen=True)
class MockEntry:
    match_prefix_tokens: tuple[str, ...] = ()
    boundary_after_token_indices: tuple[int, ...] = ()
    newline_logprobs: tuple[float, ...] = ()
    top5_overrides: dict[int, dict[str, float]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "MockEntry":
        bounds = tuple(int(i) for i in d.get("boundary_after_token_indices", ()))
        lps = tuple(float(x) for x in d.get("newline_logprobs", ()))
        if lps and len(lps) != len(bounds):
            raise ValueError("newline_logprobs must parallel boundary_after_token_indices")
        over = {int(k): {str(c): float(v) for c, v in m.items()}
                for k, m in (d.get("top5_overrides") or {}).items()}
        return cls(tuple(str(t) for t in d.get("match_prefix_tokens", ())), bounds, lps, over)

    def to_dict(self) -> dict:
        return {"match_prefix_tokens": list(self.match_prefix_tokens),
                "boundary_after_token_indices": list(self.boundary_after_token_indices),
                "newline_logprobs": list(self.newline_logprobs),
                "top5_overrides": {str(k): v for k, v in sorted(self.top5_overrides.items())}}


class MockBackend:
    """Deterministic backend driven by a script of :class:`MockEntry` items.

    For each request the story segment is recovered from the prompt and
    tokenized. The entry with the longest ``match_prefix_tokens`` equal to the
    segment's leading tokens (compared without surrounding whitespace) is
    used; an entry with no prefix matches anything. The reply copies the
    segment token by token and inserts ``"\\n"`` after every scripted index,
    then truncates to ``max_tokens``.
    """

    def __init__(self, script: Sequence[MockEntry | dict], tokenizer: Tokenizer, *,
                 default_newline_logprob: float = -0.1):
        self.entries = [e if isinstance(e, MockEntry) else MockEntry.from_dict(e) for e in script]
        self.tokenizer = tokenizer
        self.default_newline_logprob = default_newline_logprob
        self.requests: list[CompletionRequest] = []

    @classmethod
    def from_file(cls, path, tokenizer: Tokenizer) -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, list):
            raise ValueError("mock script must be a JSON list")
        return cls(data, tokenizer)

    def _entry(self, keys: list[str]) -> MockEntry:
        # a segment shorter than an entry's prefix matches on its own length
        best, best_n = None, -1
        for e in self.entries:
            n = min(len(e.match_prefix_tokens), len(keys))
            if tuple(keys[:n]) == e.match_prefix_tokens[:n] and n > best_n:
                best, best_n = e, n
        if best is None:
            raise BackendError(f"no mock script entry matches segment starting {keys[:5]}")
        return best

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        self.requests.append(req)
        seg_tokens = self.tokenizer.encode(extract_segment(req.prompt))
        entry = self._entry([t.text.strip() for t in seg_tokens])
        newline_lp = dict(zip(entry.boundary_after_token_indices,
                              entry.newline_logprobs or
                              [self.default_newline_logprob] * len(entry.boundary_after_token_indices)))
        out: list[TokenLogprob] = []
        for i, t in enumerate(seg_tokens):
            top = {t.text: 0.0}
            top.update(entry.top5_overrides.get(i, {}))
            out.append(TokenLogprob(t.text, top.get(t.text, 0.0), _top5(top)))
            if i in newline_lp:
                lp = newline_lp[i]
                out.append(TokenLogprob("\n", lp, {"\n": lp}))
        reason = "stop"
        if len(out) > req.max_tokens:
            out, reason = out[:req.max_tokens], "length"
        return CompletionResponse("".join(t.text for t in out), tuple(out), reason)


def _top5(top: dict[str, float]) -> dict[str, float]:
    ranked = sorted(top.items(), key=lambda kv: (-kv[1], kv[0]))[:TOP_LOGPROBS]
    return dict(ranked)


def story_script(story_tokens: Sequence[str], event_starts: Sequence[int], *,
                 newline_logprob: float = -0.1, prefix_len: int = 32,
                 top5_newline: dict[int, float] | None = None) -> list[MockEntry]:
    """Script that places boundaries at fixed story token positions.

    One entry per event start (and the story start), keyed by the story text
    that follows it, so the replies do not depend on where a window begins as
    long as windows start at event starts. ``top5_newline`` maps story token
    indices to a newline log-probability placed among that token's top-5
    candidates without emitting a newline.
    """
    keys = [s.strip() for s in story_tokens]
    starts = sorted(set(event_starts) | {0})
    top5_newline = top5_newline or {}
    entries = []
    for p in starts:
        bounds = tuple(b - p - 1 for b in starts if b > p)
        over = {i - p: {"\n": lp} for i, lp in top5_newline.items() if i >= p}
        entries.append(MockEntry(tuple(keys[p:p + prefix_len]), bounds,
                                 (newline_logprob,) * len(bounds), over))
    return entries


class ReplayBackend:
    """Return archived responses in order, one per request."""

    def __init__(self, responses: Sequence[CompletionResponse]):
        self.responses = list(responses)
        self._next = 0

    @classmethod
    def from_file(cls, path) -> "ReplayBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([CompletionResponse.from_json(c) for c in data])

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        if self._next >= len(self.responses):
            raise BackendError("replay archive exhausted")
        resp = self.responses[self._next]
        self._next += 1
        return resp
