"""Event segmentation of narratives with a completion language model.

Submodules: :mod:`~eventseg.transcript`, :mod:`~eventseg.llm_backend`,
:mod:`~eventseg.segmenter`, :mod:`~eventseg.align`,
:mod:`~eventseg.consensus`, :mod:`~eventseg.stats`, :mod:`~eventseg.cli`.
"""
from .align import ProbTrace, WarpPath, apply_warp, average_traces, dtw_align, newline_trace
from .consensus import (AgreementCurve, AnnotationLog, ConsensusBoundaries, agreement_curve,
                        consensus_boundaries, press_logprob_trace, response_vector,
                        snap_to_sentences)
from .llm_backend import (CompletionRequest, CompletionResponse, HTTPBackend, MockBackend,
                          PromptVariant, ReplayBackend, build_prompt, complete, token_budget)
from .segmenter import (BoundaryVector, CopyReport, Event, Segmentation, boundary_vector,
                        parse_events, segment_story, verify_copy)
from .stats import (cross_correlate, distance_ttest, hamming, interpolate_missing,
                    permutation_test)
from .transcript import (SimpleTokenizer, Transcript, Word, load_transcript,
                         sentence_boundary_times, timed_tokens)

__version__ = "0.1.0"
