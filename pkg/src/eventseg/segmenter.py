"""Sliding-window copy-and-split segmentation of a story."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .align import dtw_align
from .llm_backend import (Backend, CompletionRequest, CompletionResponse, PromptVariant,
                          build_prompt, complete, instruction_tokens, token_budget)
from .transcript import SentenceBoundary, TimedToken, Tokenizer

log = logging.getLogger(__name__)


class SegmentationError(RuntimeError):
    pass


class NoProgressError(SegmentationError):
    """A window produced no completed event, so the next window cannot advance."""


class CopyDivergenceError(SegmentationError):
    """Model output strayed from a word-for-word copy (strict mode only)."""

    def __init__(self, report: "CopyReport", window: tuple[int, int]):
        super().__init__(f"copy of tokens {window} diverged: match ratio {report.match_ratio:.3f}")
        self.report = report
        self.window = window


@dataclass(frozen=True)
class Event:
    text: str
    start_token: int
    end_token: int


@dataclass(frozen=True)
class CopyReport:
    match_ratio: float
    substitutions: int
    insertions: int
    deletions: int
    diverged: bool
    matched: int = 0
    reference_tokens: int = 0

    def to_json(self) -> dict:
        return {"match_ratio": self.match_ratio, "substitutions": self.substitutions,
                "insertions": self.insertions, "deletions": self.deletions,
                "diverged": self.diverged}


@dataclass(frozen=True)
class Segmentation:
    events: tuple[Event, ...]
    variant: PromptVariant
    run_id: str
    windows: tuple[tuple[int, int], ...]
    responses: tuple[CompletionResponse, ...] = ()
    copy_reports: tuple[CopyReport, ...] = ()

    @property
    def n_events(self) -> int:
        return len(self.events)

    def copy_report(self, tolerance: float = 0.95) -> CopyReport:
        """Totals over all windows; diverged if any window diverged."""
        reps = self.copy_reports
        matched = sum(r.matched for r in reps)
        total = sum(r.reference_tokens for r in reps)
        return CopyReport(matched / total if total else 1.0,
                          sum(r.substitutions for r in reps),
                          sum(r.insertions for r in reps),
                          sum(r.deletions for r in reps),
                          any(r.diverged for r in reps), matched, total)


@dataclass(frozen=True)
class BoundaryVector:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int8)
        if bits.ndim != 1 or not np.isin(bits, (0, 1)).all():
            raise ValueError("boundary vector must be a 1-D 0/1 vector")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def n_boundaries(self) -> int:
        return int(self.bits.sum())

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        return isinstance(other, BoundaryVector) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def tolist(self) -> list[int]:
        return [int(b) for b in self.bits]


def snap_times(times_ms: Sequence[float], boundaries: Sequence[SentenceBoundary]) -> list[int]:
    """Index of the nearest sentence boundary for each time; ties go to the earlier one."""
    bt = np.array([b.time_ms for b in boundaries], dtype=float)
    if not len(bt):
        raise ValueError("no sentence boundaries to snap to")
    out = []
    for t in times_ms:
        k = int(np.searchsorted(bt, t))
        if k == 0:
            out.append(0)
        elif k == len(bt):
            out.append(len(bt) - 1)
        else:
            out.append(k - 1 if t - bt[k - 1] <= bt[k] - t else k)
    return out


def bits_from_indices(indices: Sequence[int], n: int) -> BoundaryVector:
    bits = np.zeros(n, dtype=np.int8)
    bits[list(indices)] = 1
    return BoundaryVector(bits)


def parse_events(output_text: str) -> list[str]:
    """Split model output at newlines, dropping empty fragments."""
    return [s.strip() for s in output_text.split("\n") if s.strip()]


def _event_token_keys(event_texts: Sequence[str], tok: Tokenizer) -> tuple[list[str], list[int]]:
    keys, owner = [], []
    for e, text in enumerate(event_texts):
        for t in tok.encode(text if e == 0 else " " + text):
            k = t.text.strip()
            if k:
                keys.append(k)
                owner.append(e)
    return keys, owner


def _copy_report(pairs, gen_keys, ref_keys, tolerance: float) -> CopyReport:
    eq = [(i, j) for i, j in pairs if gen_keys[i] == ref_keys[j]]
    ref_hit = {j for _, j in eq}
    gen_hit = {i for i, _ in eq}
    subs = 0
    used_g, used_r = set(), set()
    for i, j in pairs:
        if i not in gen_hit and j not in ref_hit and i not in used_g and j not in used_r:
            subs += 1
            used_g.add(i)
            used_r.add(j)
    n_ref = len(ref_keys)
    matched = len(ref_hit)
    ratio = matched / n_ref if n_ref else 1.0
    return CopyReport(ratio, subs, len(gen_keys) - len(gen_hit) - subs,
                      n_ref - matched - subs, ratio < tolerance, matched, n_ref)


def verify_copy(event_texts: Sequence[str], timed: Sequence[TimedToken],
                window: tuple[int, int], tokenizer: Tokenizer,
                tolerance: float = 0.95) -> CopyReport:
    """Compare the concatenated events with transcript tokens ``window``.

    Tokens are aligned by DTW on their whitespace-stripped text. A transcript
    token counts as matched when some generated token paired with it is equal.
    Unmatched generated and transcript tokens paired with each other count as
    substitutions; the rest are insertions and deletions.
    """
    if not 0 < tolerance <= 1:
        raise ValueError("tolerance must be in (0, 1]")
    start, end = window
    ref_keys = [t.token.text.strip() for t in timed[start:end]]
    gen_keys, _ = _event_token_keys(event_texts, tokenizer)
    if not gen_keys or not ref_keys:
        n = len(ref_keys)
        return CopyReport(0.0 if n else 1.0, 0, len(gen_keys), n, bool(n), 0, n)
    path = dtw_align(gen_keys, ref_keys)
    return _copy_report(path.pairs, gen_keys, ref_keys, tolerance)


def _window_end(timed: Sequence[TimedToken], start: int, budget: int) -> int:
    n = len(timed)
    end = min(start + budget, n)
    if end == n:
        return end
    cut = end
    while cut > start and timed[cut].word_index == timed[cut - 1].word_index:
        cut -= 1
    if cut > start:
        return cut
    # a single word longer than the budget: take the whole word
    while end < n and timed[end].word_index == timed[end - 1].word_index:
        end += 1
    return end


def _event_starts(pairs, gen_keys, owner, ref_keys) -> list[tuple[int, int]]:
    """(event index, window-relative start) for every event that has tokens."""
    first_gen: dict[int, int] = {}
    for i, e in enumerate(owner):
        first_gen.setdefault(e, i)
    cand: dict[int, list[int]] = {}
    for i, j in pairs:
        cand.setdefault(i, []).append(j)
    starts = []
    for e, i in first_gen.items():
        js = cand[i]
        exact = [j for j in js if ref_keys[j] == gen_keys[i]]
        starts.append((e, min(exact) if exact else min(js)))
    return starts


def segment_story(timed: Sequence[TimedToken], backend: Backend, tokenizer: Tokenizer, *,
                  variant: PromptVariant = PromptVariant.standard, budget_padding: int = 0,
                  segment_budget: int | None = None, run_id: str = "run-0",
                  strict: bool = False, tolerance: float = 0.95,
                  retries: int = 3, backoff_s: float = 1.0) -> Segmentation:
    """Segment a tokenized story by copying it window by window.

    Each window holds up to ``segment_budget`` story tokens (cut back to a word
    boundary) and asks for ``segment_budget + budget_padding`` output tokens.
    Output events are located in the window by DTW. Unless the window reaches
    the story end and the reply finished normally, the last event is treated
    as provisional: it is dropped and the next window starts at its first
    token. The default budget comes from the instruction length.
    """
    variant = PromptVariant(variant)
    n = len(timed)
    if n == 0:
        raise SegmentationError("story has no tokens")
    if segment_budget is None:
        budget = token_budget(instruction_tokens(tokenizer, variant), budget_padding)
        segment_budget, max_tokens = budget.segment_budget, budget.max_tokens
    else:
        if segment_budget < 1:
            raise SegmentationError("segment budget must admit at least one token")
        max_tokens = segment_budget + budget_padding
    ref_all = [t.token.text.strip() for t in timed]

    events: list[Event] = []
    windows, responses, reports = [], [], []
    start = 0
    while True:
        end = _window_end(timed, start, segment_budget)
        segment = tokenizer.decode([t.token for t in timed[start:end]]).strip()
        req = CompletionRequest(build_prompt(segment, variant), max_tokens)
        resp = complete(req, backend, retries=retries, backoff_s=backoff_s)
        windows.append((start, end))
        responses.append(resp)

        texts = parse_events(resp.text)
        gen_keys, owner = _event_token_keys(texts, tokenizer)
        ref_keys = ref_all[start:end]
        if gen_keys and any(ref_keys):
            # a truncated reply is only checked against the part it reached
            path = dtw_align(gen_keys, ref_keys, open_end=resp.finish_reason == "length")
            covered = ref_keys[:path.pairs[-1][1] + 1]
            report = _copy_report(path.pairs, gen_keys, covered, tolerance)
            rel = _event_starts(path.pairs, gen_keys, owner, ref_keys)
        else:
            report = CopyReport(0.0, 0, len(gen_keys), len(ref_keys), True, 0, len(ref_keys))
            rel = []
        reports.append(report)
        if report.diverged:
            log.warning("%s: window %s copy match ratio %.3f", run_id, (start, end), report.match_ratio)
            if strict:
                raise CopyDivergenceError(report, (start, end))

        # first event opens the window; later starts must advance
        kept_texts, abs_starts = [], []
        for e, r in rel:
            text = texts[e]
            s = start + r
            if not abs_starts:
                s = start
            elif s <= abs_starts[-1]:
                kept_texts[-1] = kept_texts[-1] + " " + text
                continue
            abs_starts.append(s)
            kept_texts.append(text)

        final = end == n and resp.finish_reason == "stop"
        if final:
            if not abs_starts:
                abs_starts, kept_texts = [start], [""]
            bounds = abs_starts + [n]
            events.extend(Event(t, a, b) for t, a, b in zip(kept_texts, bounds, bounds[1:]))
            break
        if len(abs_starts) < 2:
            raise NoProgressError(f"{run_id}: window {(start, end)} yielded no completed event")
        events.extend(Event(t, a, b) for t, a, b in
                      zip(kept_texts[:-1], abs_starts[:-1], abs_starts[1:]))
        start = abs_starts[-1]

    return Segmentation(tuple(events), variant, run_id, tuple(windows),
                        tuple(responses), tuple(reports))


def boundary_vector(seg: Segmentation, boundaries: Sequence[SentenceBoundary],
                    timed: Sequence[TimedToken]) -> BoundaryVector:
    """Snap the onset of every event after the first to its nearest sentence boundary."""
    onsets = [timed[e.start_token].onset_ms for e in seg.events[1:]]
    return bits_from_indices(snap_times(onsets, boundaries), len(boundaries))


def segmentation_to_json(seg: Segmentation, timed: Sequence[TimedToken], bv: BoundaryVector,
                         story_id: str, tolerance: float = 0.95, extra: dict | None = None) -> dict:
    out = {
        "story_id": story_id,
        "variant": seg.variant.value,
        "run_id": seg.run_id,
        "n_events": seg.n_events,
        "n_boundaries": bv.n_boundaries,
        "events": [{"start_token": e.start_token, "end_token": e.end_token,
                    "start_ms": timed[e.start_token].onset_ms, "text": e.text}
                   for e in seg.events],
        "boundary_vector": bv.tolist(),
        "copy_report": seg.copy_report(tolerance).to_json(),
        "windows": [{"start_token": a, "end_token": b, "response": r.to_json()}
                    for (a, b), r in zip(seg.windows, seg.responses)],
    }
    if extra:
        out.update(extra)
    return out


def segmentation_from_json(d: dict) -> Segmentation:
    events = tuple(Event(e["text"], e["start_token"], e["end_token"]) for e in d["events"])
    windows = tuple((w["start_token"], w["end_token"]) for w in d.get("windows", ()))
    responses = tuple(CompletionResponse.from_json(w["response"]) for w in d.get("windows", ()))
    return Segmentation(events, PromptVariant(d["variant"]), d["run_id"], windows, responses)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False)
