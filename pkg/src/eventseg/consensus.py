"""Human button presses: response vectors, agreement and consensus boundaries."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .align import ProbTrace
from .segmenter import BoundaryVector, bits_from_indices, snap_times
from .transcript import SentenceBoundary

HALF_WINDOW_MS = 500
DEFAULT_SIGMA_MS = 1000.0


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationLog:
    participant_id: str
    press_times_ms: tuple[int, ...]
    section: str | None = None

    def __post_init__(self):
        presses = tuple(sorted(int(p) for p in self.press_times_ms))
        object.__setattr__(self, "press_times_ms", presses)


@dataclass(frozen=True)
class AgreementCurve:
    values: np.ndarray
    n_participants: int

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ConsensusBoundaries:
    times_ms: tuple[int, ...]
    kernel_sigma_ms: float
    threshold: float
    smoothed: np.ndarray | None = field(default=None, repr=False, compare=False)


def read_annotations_csv(source) -> list[AnnotationLog]:
    """Rows of ``participant_id,press_time_ms[,section]``; one log per participant."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    reader = csv.DictReader(io.StringIO(text))
    cols = reader.fieldnames or []
    if "participant_id" not in cols or "press_time_ms" not in cols:
        raise AnnotationError("annotation CSV needs participant_id,press_time_ms columns")
    presses: dict[str, list[int]] = {}
    sections: dict[str, str | None] = {}
    for row in reader:
        pid = row["participant_id"]
        try:
            presses.setdefault(pid, []).append(int(float(row["press_time_ms"])))
        except ValueError:
            raise AnnotationError(f"bad press time {row['press_time_ms']!r}") from None
        sec = row.get("section") or None
        if sections.setdefault(pid, sec) != sec:
            raise AnnotationError(f"participant {pid} spans several sections")
    if not presses:
        raise AnnotationError("annotation CSV has no presses")
    return [AnnotationLog(pid, tuple(p), sections[pid]) for pid, p in presses.items()]


def write_annotations_csv(logs: Sequence[AnnotationLog], path) -> None:
    with_section = any(l.section is not None for l in logs)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "press_time_ms"] + (["section"] if with_section else []))
        for l in logs:
            for p in l.press_times_ms:
                w.writerow([l.participant_id, p] + ([l.section or ""] if with_section else []))


def response_vector(log: AnnotationLog, duration_ms: int, *,
                    half_window_ms: int = HALF_WINDOW_MS,
                    span: tuple[int, int] | None = None) -> np.ndarray:
    """1 at every ms within ``half_window_ms`` of a press, else 0.

    ``span`` restricts the vector to ``[start, end)`` (zero elsewhere) for
    participants who annotated only one section.
    """
    duration_ms = int(duration_ms)
    diff = np.zeros(duration_ms + 1, dtype=np.int32)
    for p in log.press_times_ms:
        if p < 0 or p > duration_ms:
            raise AnnotationError(
                f"{log.participant_id}: press at {p}ms outside [0, {duration_ms}]")
        lo = max(p - half_window_ms, 0)
        hi = min(p + half_window_ms + 1, duration_ms)
        if lo < hi:
            diff[lo] += 1
            diff[hi] -= 1
    bits = (np.cumsum(diff[:-1]) > 0).astype(np.int8)
    if span is not None:
        mask = np.zeros(duration_ms, dtype=bool)
        mask[span[0]:span[1]] = True
        bits[~mask] = 0
    return bits


def agreement_curve(logs: Sequence[AnnotationLog], duration_ms: int, *,
                    half_window_ms: int = HALF_WINDOW_MS,
                    sections: Mapping[str, tuple[int, int]] | None = None) -> AgreementCurve:
    """Mean response vector over participants.

    With ``sections``, each section's stretch of the curve is the mean over
    the participants who annotated that section.
    """
    if not logs:
        raise AnnotationError("no annotation logs")
    if sections is None:
        total = np.zeros(int(duration_ms))
        for l in logs:
            total += response_vector(l, duration_ms, half_window_ms=half_window_ms)
        return AgreementCurve(total / len(logs), len(logs))
    values = np.zeros(int(duration_ms))
    for name, (a, b) in sections.items():
        members = [l for l in logs if l.section == name]
        if not members:
            raise AnnotationError(f"no participants for section {name!r}")
        total = np.zeros(int(duration_ms))
        for l in members:
            total += response_vector(l, duration_ms, half_window_ms=half_window_ms, span=(a, b))
        values[a:b] = total[a:b] / len(members)
    unknown = {l.section for l in logs} - set(sections)
    if unknown:
        raise AnnotationError(f"logs reference undefined sections {sorted(map(str, unknown))}")
    return AgreementCurve(values, len(logs))


def gaussian_kernel(sigma_ms: float, truncate: float = 4.0) -> np.ndarray:
    radius = int(truncate * sigma_ms + 0.5)
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma_ms) ** 2)
    return k / k.sum()


def smooth(values: np.ndarray, sigma_ms: float) -> np.ndarray:
    """Gaussian smoothing; near the edges the clipped kernel is renormalized."""
    if sigma_ms <= 0:
        raise ValueError("sigma must be positive")
    values = np.asarray(values, dtype=float)
    k = gaussian_kernel(sigma_ms)
    num = fftconvolve(values, k, mode="same")
    den = fftconvolve(np.ones_like(values), k, mode="same")
    out = num / den
    # FFT round-off can leave tiny negatives or values just above 1
    return np.clip(out, 0.0, max(1.0, float(values.max(initial=0.0))))


def consensus_boundaries(curve: AgreementCurve, kernel_sigma_ms: float = DEFAULT_SIGMA_MS,
                         threshold: float | None = None) -> ConsensusBoundaries:
    """Peaks of the smoothed agreement curve, one per supra-threshold cluster.

    ``threshold=None`` uses the mean plus one standard deviation of the
    smoothed curve. Within each run of consecutive samples above threshold the
    first maximum is taken.
    """
    sm = smooth(curve.values, kernel_sigma_ms)
    if threshold is None:
        threshold = float(sm.mean() + sm.std())
    elif not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    above = sm > threshold
    times = []
    if above.any():
        edges = np.flatnonzero(np.diff(np.concatenate(([0], above.astype(np.int8), [0]))))
        for a, b in zip(edges[::2], edges[1::2]):
            times.append(int(a + np.argmax(sm[a:b])))
    return ConsensusBoundaries(tuple(times), float(kernel_sigma_ms), float(threshold), sm)


def snap_to_sentences(times_ms: Sequence[float] | ConsensusBoundaries,
                      sb: Sequence[SentenceBoundary]) -> BoundaryVector:
    """Mark the sentence boundary nearest to each time; duplicates collapse."""
    if isinstance(times_ms, ConsensusBoundaries):
        times_ms = times_ms.times_ms
    if not sb:
        raise ValueError("no sentence boundaries")
    return bits_from_indices(snap_times(times_ms, sb), len(sb))


def participant_vectors(logs: Sequence[AnnotationLog], sb: Sequence[SentenceBoundary]
                        ) -> dict[str, BoundaryVector]:
    """Individual presses snapped to sentence boundaries, per participant."""
    return {l.participant_id: snap_to_sentences(l.press_times_ms, sb) for l in logs}


def combine_sections(logs: Sequence[AnnotationLog], sections: Mapping[str, tuple[int, int]],
                     seed: int = 0) -> list[AnnotationLog]:
    """Pseudo-participants made of one randomly drawn annotator per section.

    Annotators are drawn without replacement, so the number of combined logs
    equals the size of the smallest section. Presses outside an annotator's
    section are dropped.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    groups = {}
    for name in sections:
        members = sorted((l for l in logs if l.section == name), key=lambda l: l.participant_id)
        if not members:
            raise AnnotationError(f"no participants for section {name!r}")
        order = rng.permutation(len(members))
        groups[name] = [members[i] for i in order]
    n = min(len(g) for g in groups.values())
    out = []
    for k in range(n):
        presses, ids = [], []
        for name, (a, b) in sections.items():
            l = groups[name][k]
            ids.append(l.participant_id)
            presses.extend(p for p in l.press_times_ms if a <= p < b)
        out.append(AnnotationLog("+".join(ids), tuple(presses)))
    return out


def press_logprob_trace(curve: AgreementCurve) -> ProbTrace:
    """Log of the agreement ratio; undefined where no participant responded."""
    if curve.n_participants < 1:
        raise AnnotationError("curve has no participants")
    v = np.asarray(curve.values, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(v > 0, np.log(np.where(v > 0, v, 1.0)), np.nan)
    return ProbTrace(out)


def boundaries_to_json(cb: ConsensusBoundaries, bits: BoundaryVector, story_id: str,
                       run: str, extra: dict | None = None) -> dict:
    out = {"story_id": story_id, "run": run,
           "parameters": {"sigma_ms": cb.kernel_sigma_ms, "threshold": cb.threshold},
           "boundary_times_ms": list(cb.times_ms), "sentence_bits": bits.tolist()}
    if extra:
        out.update(extra)
    return out
