"""Synthetic stories and annotations for tests and demos."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .consensus import AnnotationLog

_SYLLABLES = ("ka", "lo", "mi", "ru", "te", "sa", "no", "vi", "de", "po", "li", "ga")


def make_words(n_words: int, seed: int = 0, *, sentence_len: tuple[int, int] = (5, 14)
               ) -> tuple[list[str], list[int]]:
    """Pseudo-words grouped into sentences; returns words (with punctuation) and sentence starts."""
    rng = np.random.default_rng(seed)
    words, starts = [], []
    while len(words) < n_words:
        starts.append(len(words))
        k = int(rng.integers(sentence_len[0], sentence_len[1] + 1))
        for j in range(k):
            w = "".join(rng.choice(_SYLLABLES, size=int(rng.integers(1, 5))))
            if j == 0:
                w = w.capitalize()
            words.append(w)
        words[-1] += "."
    words = words[:n_words]
    starts = [s for s in starts if s < n_words]
    if not words[-1].endswith("."):
        words[-1] += "."
    return words, starts


def make_timings(words: list[str], seed: int = 0, *, start_ms: int = 500,
                 word_ms: tuple[int, int] = (180, 520), gap_ms: tuple[int, int] = (0, 80),
                 sentence_starts: list[int] | None = None, sentence_gap_ms: int = 300
                 ) -> list[tuple[str, int, int]]:
    """Forced-alignment style ``(word, onset, offset)`` records."""
    rng = np.random.default_rng(seed + 1)
    starts = set(sentence_starts or ())
    t, out = start_ms, []
    for i, w in enumerate(words):
        if i in starts and i > 0:
            t += sentence_gap_ms
        dur = int(rng.integers(*word_ms))
        out.append((w.rstrip(".!?,"), t, t + dur))
        t += dur + int(rng.integers(*gap_ms))
    return out


def make_story(n_words: int, seed: int = 0) -> tuple[str, list[tuple[str, int, int]], list[int]]:
    words, starts = make_words(n_words, seed)
    return " ".join(words), make_timings(words, seed, sentence_starts=starts), starts


def unanimous_logs(press_times_ms, n_participants: int, *, jitter_ms: int = 0,
                   seed: int = 0) -> list[AnnotationLog]:
    """Every participant presses near each of ``press_times_ms``."""
    rng = np.random.default_rng(seed)
    logs = []
    for k in range(n_participants):
        presses = [int(p + (rng.integers(-jitter_ms, jitter_ms + 1) if jitter_ms else 0))
                   for p in press_times_ms]
        logs.append(AnnotationLog(f"p{k:03d}", tuple(presses)))
    return logs


def noisy_logs(boundary_times_ms, n_participants: int, duration_ms: int, *, hit_rate: float = 0.6,
               false_rate_per_min: float = 1.0, delay_ms: tuple[int, int] = (200, 900),
               seed: int = 0) -> list[AnnotationLog]:
    """Participants who detect each true boundary with ``hit_rate`` after a reaction delay,
    plus uniformly scattered false alarms."""
    rng = np.random.default_rng(seed)
    logs = []
    lam = false_rate_per_min * duration_ms / 60000
    for k in range(n_participants):
        hits = [b + int(rng.integers(*delay_ms)) for b in boundary_times_ms if rng.random() < hit_rate]
        false = rng.integers(0, duration_ms, size=int(rng.poisson(lam))).tolist()
        presses = sorted(min(max(int(p), 0), duration_ms) for p in hits + false)
        logs.append(AnnotationLog(f"p{k:03d}", tuple(presses)))
    return logs


def write_project(directory, n_words: int = 1137, seed: int = 0, *, n_events: int = 23,
                  n_participants: int = 30, n_runs: int = 2, replications: int = 6,
                  n_permutations: int = 100_000, tokenizer=None) -> Path:
    """Write a complete synthetic story project and return its TOML config path.

    Event starts are drawn among sentence starts. The mock script places a
    newline there, offers weak newline candidates at other sentence ends and
    graded ones just before each boundary; annotators press after the true
    boundaries with a reaction delay and occasional false alarms.
    """
    from .consensus import write_annotations_csv
    from .llm_backend import story_script
    from .transcript import (SimpleTokenizer, load_transcript, sentence_boundary_times,
                             timed_tokens, write_timings_csv)

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tok = tokenizer or SimpleTokenizer()
    words, starts = make_words(n_words, seed)
    timings = make_timings(words, seed, sentence_starts=starts)
    text = " ".join(words)
    t = load_transcript(text, timings, sentence_starts=starts)
    tt = timed_tokens(t, tok)

    rng = np.random.default_rng(seed + 7)
    k = min(n_events - 1, len(starts) - 1)
    chosen = sorted(rng.choice(np.arange(1, len(starts)), size=k, replace=False).tolist())
    first_token = {}
    for i, x in enumerate(tt):
        first_token.setdefault(x.word_index, i)
    event_tokens = [first_token[starts[s]] for s in chosen]
    # weak newline candidates at every sentence end, stronger ones leading up
    # to the scripted boundaries
    cand = {first_token[s] - 1: float(rng.uniform(-7.0, -4.5)) for s in starts[1:]}
    for b in event_tokens:
        for off in range(1, 5):
            if b - off > 0:
                cand[b - off] = max(cand.get(b - off, -99.0), -1.0 - 0.7 * off)
    script = story_script([x.token.text for x in tt], event_tokens, newline_logprob=-0.3,
                          top5_newline=cand)

    (d / "story.txt").write_text(text + "\n", encoding="utf-8")
    write_timings_csv(timings, d / "timings.csv")
    with open(d / "sentences.csv", "w", encoding="utf-8") as fh:
        fh.write("sentence_index,first_word_index\n")
        fh.writelines(f"{i},{w}\n" for i, w in enumerate(starts))
    (d / "mock_script.json").write_text(
        json.dumps([e.to_dict() for e in script], indent=1) + "\n", encoding="utf-8")

    sb = sentence_boundary_times(t)
    truth = [sb[s - 1].time_ms for s in chosen]
    runs = {}
    for r in range(n_runs):
        logs = noisy_logs(truth, n_participants, t.duration_ms, hit_rate=0.7,
                          false_rate_per_min=0.8, seed=seed + 100 + r)
        name = f"run{r + 1}"
        write_annotations_csv(logs, d / f"annotations_{name}.csv")
        runs[name] = f"annotations_{name}.csv"

    run_lines = "\n".join(f'{k} = "{v}"' for k, v in runs.items())
    config = f"""story_id = "synthetic-{seed}"

[story]
text = "story.txt"
timings = "timings.csv"
sentences = "sentences.csv"

[backend]
kind = "mock"
script = "mock_script.json"

[segment]
variant = "standard"
replications = {replications}

[consensus]
sigma_ms = 1000.0

[consensus.runs]
{run_lines}

[stats]
n_permutations = {n_permutations}
seed = {seed}
max_lag_ms = 3000

[output]
dir = "out"
"""
    path = d / "config.toml"
    path.write_text(config, encoding="utf-8")
    return path
