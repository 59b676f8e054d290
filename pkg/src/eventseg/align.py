"""Token alignment and newline log-probability traces.

Generated text is mapped onto transcript tokens with dynamic time warping;
the warp then carries transcript token times over to the generated tokens,
which places each token's newline log-probability on the story timeline.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

from .llm_backend import CompletionResponse, is_newline_text
from .transcript import TimedToken


@dataclass(frozen=True)
class WarpPath:
    pairs: tuple[tuple[int, int], ...]
    cost: float

    def __len__(self):
        return len(self.pairs)

    def matches_of(self, n_gen: int) -> list[list[int]]:
        """Transcript indices matched to each generated index."""
        out: list[list[int]] = [[] for _ in range(n_gen)]
        for i, j in self.pairs:
            out[i].append(j)
        return out


def cost_matrix(gen: Sequence, ref: Sequence,
                dist: Callable[[object, object], float] | None = None) -> np.ndarray:
    """Pairwise distances; unit mismatch (0 if equal, else 1) by default."""
    if dist is None:
        codes: dict[Hashable, int] = {}
        g = np.array([codes.setdefault(x, len(codes)) for x in gen])
        r = np.array([codes.setdefault(x, len(codes)) for x in ref])
        return (g[:, None] != r[None, :]).astype(float)
    return np.array([[dist(a, b) for b in ref] for a in gen], dtype=float)


def embedding_distance(embed: Callable[[object], np.ndarray]) -> Callable[[object, object], float]:
    """Euclidean distance between token embeddings."""
    cache: dict = {}

    def vec(x):
        if x not in cache:
            cache[x] = np.asarray(embed(x), dtype=float)
        return cache[x]

    return lambda a, b: float(np.linalg.norm(vec(a) - vec(b)))


def _accumulate(C: np.ndarray, band: np.ndarray | None = None) -> np.ndarray:
    # D[i, j] = C[i, j] + min(D[i-1, j-1], D[i-1, j], D[i, j-1]), row by row;
    # the in-row dependency is a running min: D[i] = S + cummin(tmp - S).
    G, T = C.shape
    D = np.full((G, T), np.inf)
    if band is not None:
        C = np.where(band, C, np.inf)
    with np.errstate(invalid="ignore"):
        S = np.cumsum(C[0])
        D[0] = S
        for i in range(1, G):
            prev = D[i - 1]
            tmp = prev.copy()
            tmp[1:] = np.minimum(prev[1:], prev[:-1])
            tmp += C[i]
            if band is None:
                S = np.cumsum(C[i])
                D[i] = S + np.minimum.accumulate(tmp - S)
            else:
                lo, hi = _row_span(band[i])
                row = np.full(T, np.inf)
                S = np.cumsum(C[i, lo:hi])
                row[lo:hi] = S + np.minimum.accumulate(tmp[lo:hi] - S)
                D[i] = row
    return D


def _row_span(mask_row: np.ndarray) -> tuple[int, int]:
    idx = np.flatnonzero(mask_row)
    return int(idx[0]), int(idx[-1]) + 1


def _traceback(D: np.ndarray, j_end: int | None = None) -> list[tuple[int, int]]:
    i, j = D.shape[0] - 1, D.shape[1] - 1 if j_end is None else j_end
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            # ties prefer the diagonal, then a generated-side step
            steps = ((D[i - 1, j - 1], 0), (D[i - 1, j], 1), (D[i, j - 1], 2))
            _, k = min(steps)
            if k == 0:
                i, j = i - 1, j - 1
            elif k == 1:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return path


def dtw_align(gen: Sequence, ref: Sequence,
              dist: Callable[[object, object], float] | None = None, *,
              radius: int | None = None, open_end: bool = False) -> WarpPath:
    """Minimum-cost monotone warp path between two token sequences.

    Steps are (1,0), (0,1) and (1,1); the cost is the sum of ``dist`` over all
    visited pairs. With ``radius`` the search is restricted to a band of that
    half-width around the length-scaled diagonal, which is faster but only
    exact when the optimal path stays inside the band. With ``open_end`` the
    path may stop at any reference position (the cheapest, nearest the
    diagonal on ties), which suits generated text that was cut off early.
    """
    if len(gen) == 0 or len(ref) == 0:
        raise ValueError("cannot align an empty sequence")
    return dtw_from_cost(cost_matrix(gen, ref, dist), radius=radius, open_end=open_end)


def dtw_from_cost(C: np.ndarray, *, radius: int | None = None,
                  open_end: bool = False) -> WarpPath:
    C = np.asarray(C, dtype=float)
    G, T = C.shape
    band = None
    if radius is not None:
        band = sakoe_chiba_band(G, T, radius)
    D = _accumulate(C, band)
    j_end = T - 1
    if open_end:
        # cheapest end column; ties go to the one nearest the diagonal so a
        # faithful copy ending on a repeated word keeps its one-to-one path
        best = np.flatnonzero(D[-1] == D[-1].min())
        j_end = int(best[np.argmin(np.abs(best - (G - 1)))])
    return WarpPath(tuple(_traceback(D, j_end)), float(D[-1, j_end]))


def sakoe_chiba_band(G: int, T: int, radius: int) -> np.ndarray:
    """Boolean mask of cells within ``radius`` of the scaled diagonal.

    Each row's window is widened so that consecutive rows overlap, which keeps
    a connected path between the corners.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    rows = np.arange(G)
    centre = rows * (T - 1) / max(G - 1, 1)
    lo = np.floor(centre - radius).astype(int)
    hi = np.ceil(centre + radius).astype(int)
    slope = max((T - 1) / max(G - 1, 1), 1.0)
    hi = np.maximum(hi, np.floor(centre + slope).astype(int))
    lo, hi = np.clip(lo, 0, T - 1), np.clip(hi, 0, T - 1)
    cols = np.arange(T)
    return (cols[None, :] >= lo[:, None]) & (cols[None, :] <= hi[:, None])


def apply_warp(path: WarpPath, ref_times: Sequence[TimedToken], n_gen: int | None = None
               ) -> list[tuple[int, int]]:
    """Onset/offset for each generated token: min onset and max offset of its matches."""
    if n_gen is None:
        n_gen = path.pairs[-1][0] + 1
    spans: list[list[int] | None] = [None] * n_gen
    for i, j in path.pairs:
        if not (0 <= i < n_gen and 0 <= j < len(ref_times)):
            raise IndexError(f"warp pair {(i, j)} out of range")
        r = ref_times[j]
        s = spans[i]
        if s is None:
            spans[i] = [r.onset_ms, r.offset_ms]
        else:
            s[0] = min(s[0], r.onset_ms)
            s[1] = max(s[1], r.offset_ms)
    if any(s is None for s in spans):
        raise IndexError("warp path does not cover every generated token")
    return [(s[0], s[1]) for s in spans]


class ProbTrace:
    """Real-valued series at 1 ms resolution; NaN marks undefined samples."""

    __slots__ = ("values",)

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        self.values.setflags(write=False)

    @classmethod
    def empty(cls, duration_ms: int) -> "ProbTrace":
        return cls(np.full(int(duration_ms), np.nan))

    def __len__(self):
        return len(self.values)

    def __repr__(self):
        return f"ProbTrace(len={len(self)}, defined={int(self.defined.sum())})"

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def to_csv(self, path, *, run_length: bool = False) -> None:
        """``time_ms,value,defined`` per sample, or ``start_ms,end_ms,value`` runs."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if run_length:
                w.writerow(["start_ms", "end_ms", "value"])
                for start, end, value in self.runs():
                    w.writerow([start, end, repr(value)])
            else:
                w.writerow(["time_ms", "value", "defined"])
                for t, v in enumerate(self.values):
                    ok = not np.isnan(v)
                    w.writerow([t, repr(float(v)) if ok else "", int(ok)])

    def runs(self) -> list[tuple[int, int, float]]:
        """Maximal runs ``[start, end)`` of equal defined values."""
        v = self.values
        out = []
        t, n = 0, len(v)
        while t < n:
            if np.isnan(v[t]):
                t += 1
                continue
            end = t + 1
            while end < n and v[end] == v[t]:
                end += 1
            out.append((t, end, float(v[t])))
            t = end
        return out

    @classmethod
    def from_csv(cls, path, duration_ms: int | None = None) -> "ProbTrace":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if rows and "start_ms" in rows[0]:
            if duration_ms is None:
                duration_ms = max(int(r["end_ms"]) for r in rows)
            v = np.full(duration_ms, np.nan)
            for r in rows:
                v[int(r["start_ms"]):int(r["end_ms"])] = float(r["value"])
            return cls(v)
        v = np.array([float(r["value"]) if r["defined"] == "1" else np.nan for r in rows])
        return cls(v)


def newline_logprob(top: dict[str, float]) -> float | None:
    """Best log-probability among newline-only candidates, if any."""
    lps = [lp for text, lp in top.items() if is_newline_text(text)]
    return max(lps) if lps else None


def newline_trace(resp: CompletionResponse, gen_times: Sequence[tuple[int, int]],
                  duration_ms: int, *, into: np.ndarray | None = None) -> ProbTrace:
    """Place each token's newline log-probability over its time span.

    Tokens are processed in order, so a later token overwrites an earlier one
    where their spans overlap.
    """
    if len(gen_times) < len(resp.tokens):
        raise ValueError("gen_times must cover every response token")
    v = np.full(int(duration_ms), np.nan) if into is None else into
    for tok, (on, off) in zip(resp.tokens, gen_times):
        lp = newline_logprob(tok.top)
        if lp is not None:
            v[max(on, 0):min(off, len(v))] = lp
    return ProbTrace(v.copy() if into is not None else v)


def _is_text_token(text: str) -> bool:
    return bool(text.strip())


def response_token_times(resp: CompletionResponse, ref: Sequence[TimedToken], *,
                         radius: int | None = None) -> list[tuple[int, int]]:
    """Time span of every response token within the transcript window ``ref``.

    Text tokens are warped onto ``ref``; whitespace and newline tokens take the
    span of the next text token (or the previous one at the end). A reply cut
    off at ``max_tokens`` is aligned open-ended so its tail is not stretched
    over the uncopied rest of the window.
    """
    text_idx = [k for k, t in enumerate(resp.tokens) if _is_text_token(t.text)]
    times: list[tuple[int, int] | None] = [None] * len(resp.tokens)
    if text_idx and ref:
        gen_keys = [resp.tokens[k].text.strip() for k in text_idx]
        ref_keys = [r.token.text.strip() for r in ref]
        path = dtw_align(gen_keys, ref_keys, radius=radius,
                         open_end=resp.finish_reason == "length")
        for k, span in zip(text_idx, apply_warp(path, ref, len(gen_keys))):
            times[k] = span
    nxt = None
    for k in range(len(times) - 1, -1, -1):
        if times[k] is None:
            times[k] = nxt
        else:
            nxt = times[k]
    prev = None
    for k in range(len(times)):
        if times[k] is None:
            times[k] = prev
        else:
            prev = times[k]
    if any(t is None for t in times):
        fallback = (ref[0].onset_ms, ref[-1].offset_ms) if ref else (0, 0)
        times = [fallback if t is None else t for t in times]
    return times


def story_newline_trace(windows: Sequence[tuple[int, int]],
                        responses: Sequence[CompletionResponse],
                        timed: Sequence[TimedToken], duration_ms: int) -> ProbTrace:
    """Newline trace of a whole sliding-window run; later windows win on overlap."""
    v = np.full(int(duration_ms), np.nan)
    for (start, end), resp in zip(windows, responses):
        times = response_token_times(resp, timed[start:end])
        newline_trace(resp, times, duration_ms, into=v)
    return ProbTrace(v)


def average_traces(traces: Sequence[ProbTrace]) -> ProbTrace:
    """Pointwise mean over the defined values; missing where all are missing."""
    if not traces:
        raise ValueError("no traces to average")
    n = len(traces[0])
    if any(len(t) != n for t in traces):
        raise ValueError("traces differ in length")
    stack = np.vstack([t.values for t in traces])
    defined = ~np.isnan(stack)
    count = defined.sum(axis=0)
    total = np.where(defined, stack, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return ProbTrace(mean)
