"""``event-seg`` command line: segment, consensus, compare, replicate-report.

All settings live in a TOML file (paths relative to it); a few flags override
it. The API key for the HTTP backend is read from ``EVENT_SEG_API_KEY`` only.
"""
from __future__ import annotations

import argparse
import copy
import glob
import hashlib
import itertools
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import align, consensus, segmenter, stats
from .llm_backend import (BackendError, HTTPBackend, MockBackend, PromptVariant,
                          ReplayBackend)
from .transcript import (HFTokenizer, SimpleTokenizer, TranscriptError, load_transcript_files,
                         sentence_boundary_times, timed_tokens)

log = logging.getLogger("eventseg")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_DIVERGENCE, EXIT_DATA = 0, 2, 3, 4, 5

DEFAULTS = {
    "story_id": "story",
    "story": {"text": None, "timings": None, "sentences": None, "duration_ms": None},
    "backend": {"kind": "mock", "script": None, "replay": [], "model": "text-davinci-002",
                "url": "https://api.openai.com/v1/completions", "timeout_s": 120.0},
    "segment": {"variant": "standard", "padding": 0, "replications": 1, "strict": False,
                "tolerance": 0.95, "segment_budget": None, "tokenizer": "simple"},
    "consensus": {"sigma_ms": consensus.DEFAULT_SIGMA_MS, "threshold": None,
                  "half_window_ms": consensus.HALF_WINDOW_MS, "runs": {}, "sections": {}},
    "stats": {"n_permutations": stats.DEFAULT_PERMUTATIONS, "seed": 0,
              "max_lag_ms": stats.DEFAULT_MAX_LAG_MS, "smoothed_p": False,
              "xcorr_method": "neff"},
    "output": {"dir": "out"},
}


class ConfigError(ValueError):
    pass


class DataMismatch(ValueError):
    pass


@dataclass
class RunConfig:
    data: dict
    base: Path

    @property
    def story_id(self) -> str:
        return str(self.data["story_id"])

    def section(self, name: str) -> dict:
        return self.data[name]

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.data["output"]["dir"])

    @property
    def config_hash(self) -> str:
        # where results are written is not part of what produced them
        inputs = {k: v for k, v in self.data.items() if k != "output"}
        blob = json.dumps(inputs, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    @property
    def seed(self) -> int:
        return int(self.data["stats"]["seed"])

    def provenance(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("runs", "sections"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    data = _merge(DEFAULTS, raw)
    for section, values in (overrides or {}).items():
        for k, v in values.items():
            if v is not None:
                data[section][k] = v
    cfg = RunConfig(data, path.parent)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    seg = cfg.section("segment")
    if int(seg["replications"]) < 1:
        raise ConfigError("replications must be >= 1")
    try:
        PromptVariant(seg["variant"])
    except ValueError:
        raise ConfigError(f"unknown prompt variant {seg['variant']!r}") from None
    be = cfg.section("backend")
    if be["kind"] not in ("mock", "replay", "http"):
        raise ConfigError(f"unknown backend kind {be['kind']!r}")


def _require_file(cfg: RunConfig, value, what: str) -> Path:
    if not value:
        raise ConfigError(f"{what} not configured")
    p = cfg.path(value)
    if not p.is_file():
        raise ConfigError(f"{what} {p} does not exist")
    return p


def _tokenizer(cfg: RunConfig):
    name = cfg.section("segment")["tokenizer"]
    if name == "simple":
        return SimpleTokenizer()
    if name.startswith("hf:"):
        return HFTokenizer(name[3:])
    raise ConfigError(f"unknown tokenizer {name!r}")


def _story(cfg: RunConfig):
    st = cfg.section("story")
    text = _require_file(cfg, st["text"], "story text")
    timings = _require_file(cfg, st["timings"], "timing CSV")
    sentences = _require_file(cfg, st["sentences"], "sentence sidecar") if st["sentences"] else None
    t = load_transcript_files(text, timings, sentences, st["duration_ms"])
    return t, sentence_boundary_times(t)


def _backends(cfg: RunConfig, tok, n: int) -> list:
    be = cfg.section("backend")
    if be["kind"] == "mock":
        script = _require_file(cfg, be["script"], "mock script")
        return [MockBackend.from_file(script, tok) for _ in range(n)]
    if be["kind"] == "replay":
        files = be["replay"]
        if isinstance(files, str):
            files = [files]
        if len(files) < n:
            raise ConfigError(f"replay backend needs {n} archives, got {len(files)}")
        return [ReplayBackend.from_file(_require_file(cfg, f, "replay archive")) for f in files[:n]]
    shared = HTTPBackend(be["url"], be["model"], float(be["timeout_s"]))
    return [shared] * n


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(segmenter.dumps(obj) + "\n", encoding="utf-8")


def _floatfmt(x) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# segment
# --------------------------------------------------------------------------

def cmd_segment(cfg: RunConfig, jobs: int = 1) -> list[Path]:
    """Run the configured number of segmentation replications."""
    seg_cfg = cfg.section("segment")
    tok = _tokenizer(cfg)
    t, sb = _story(cfg)
    timed = timed_tokens(t, tok)
    n = int(seg_cfg["replications"])
    variant = PromptVariant(seg_cfg["variant"])
    backends = _backends(cfg, tok, n)

    def run(k: int):
        return segmenter.segment_story(
            timed, backends[k], tok, variant=variant, budget_padding=int(seg_cfg["padding"]),
            segment_budget=seg_cfg["segment_budget"], run_id=f"run-{k + 1}",
            strict=bool(seg_cfg["strict"]), tolerance=float(seg_cfg["tolerance"]))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        segs = list(pool.map(run, range(n)))

    out = cfg.out_dir
    paths, vectors = [], []
    for seg in segs:
        bv = segmenter.boundary_vector(seg, sb, timed)
        vectors.append(bv)
        doc = segmenter.segmentation_to_json(
            seg, timed, bv, cfg.story_id, float(seg_cfg["tolerance"]),
            extra={"provenance": cfg.provenance()})
        p = out / f"segmentation_{variant.value}_{seg.run_id}.json"
        _write_json(p, doc)
        trace = align.story_newline_trace(seg.windows, seg.responses, timed, t.duration_ms)
        trace.to_csv(out / f"newline_trace_{variant.value}_{seg.run_id}.csv", run_length=True)
        paths.append(p)
    summary = replicate_summary([s.run_id for s in segs], [s.n_events for s in segs], vectors)
    summary.update({"story_id": cfg.story_id, "variant": variant.value,
                    "provenance": cfg.provenance()})
    _write_json(out / f"segment_summary_{variant.value}.json", summary)
    print(f"{cfg.story_id} [{variant.value}] events per run: "
          + ", ".join(str(s.n_events) for s in segs)
          + f"; max pairwise Hamming {summary['max_pairwise_hamming']:.3f}")
    return paths


def replicate_summary(run_ids, n_events, vectors) -> dict:
    pairs = {}
    for (i, a), (j, b) in itertools.combinations(enumerate(vectors), 2):
        pairs[f"{run_ids[i]}|{run_ids[j]}"] = stats.hamming(a, b)
    return {"runs": list(run_ids), "n_events": list(n_events),
            "n_boundaries": [v.n_boundaries for v in vectors],
            "pairwise_hamming": pairs,
            "max_pairwise_hamming": max(pairs.values(), default=0.0)}


# --------------------------------------------------------------------------
# consensus
# --------------------------------------------------------------------------

def _sections(cfg: RunConfig):
    sec = cfg.section("consensus")["sections"]
    if not sec:
        return None
    try:
        return {str(k): (int(v[0]), int(v[1])) for k, v in sec.items()}
    except (TypeError, ValueError, IndexError):
        raise ConfigError("consensus.sections entries must be [start_ms, end_ms]") from None


def _annotation_runs(cfg: RunConfig) -> dict[str, Path]:
    runs = cfg.section("consensus")["runs"]
    if not runs:
        raise ConfigError("no annotation files configured under [consensus.runs]")
    return {str(k): _require_file(cfg, v, f"annotation CSV for run {k}") for k, v in runs.items()}


def _curve(cfg: RunConfig, logs, duration_ms):
    c = cfg.section("consensus")
    return consensus.agreement_curve(logs, duration_ms, half_window_ms=int(c["half_window_ms"]),
                                     sections=_sections(cfg))


def cmd_consensus(cfg: RunConfig) -> list[Path]:
    """Consensus boundaries, agreement curve and participant vectors per annotation run."""
    c = cfg.section("consensus")
    runs = _annotation_runs(cfg)
    t, sb = _story(cfg)
    out = cfg.out_dir
    paths = []
    for run, csv_path in runs.items():
        logs = consensus.read_annotations_csv(csv_path)
        curve = _curve(cfg, logs, t.duration_ms)
        cb = consensus.consensus_boundaries(curve, float(c["sigma_ms"]), c["threshold"])
        bits = consensus.snap_to_sentences(cb, sb)
        sections = _sections(cfg)
        individuals = (consensus.combine_sections(logs, sections, cfg.seed) if sections else logs)
        pv = consensus.participant_vectors(individuals, sb)
        p = out / f"boundaries_{run}.json"
        _write_json(p, consensus.boundaries_to_json(
            cb, bits, cfg.story_id, run,
            extra={"n_participants": curve.n_participants, "n_boundaries": len(cb.times_ms),
                   "provenance": cfg.provenance()}))
        _write_json(out / f"participants_{run}.json",
                    {"story_id": cfg.story_id, "run": run, "provenance": cfg.provenance(),
                     "vectors": {k: v.tolist() for k, v in sorted(pv.items())}})
        with open(out / f"agreement_{run}.csv", "w", encoding="utf-8") as fh:
            fh.write("time_ms,value\n")
            for i, v in enumerate(curve.values):
                fh.write(f"{i},{_floatfmt(v)}\n")
        print(f"{cfg.story_id} run {run}: {len(cb.times_ms)} consensus boundaries "
              f"(sigma {cb.kernel_sigma_ms:g} ms, threshold {cb.threshold:.4f}), "
              f"{curve.n_participants} participants")
        paths.append(p)
    return paths


# --------------------------------------------------------------------------
# compare
# --------------------------------------------------------------------------

def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path} does not exist") from None


def cmd_compare(cfg: RunConfig, segmentation_files=None, consensus_files=None) -> Path:
    """Hamming/permutation per run, t-tests and trace cross-correlation per variant."""
    st = cfg.section("stats")
    out = cfg.out_dir
    seg_files = sorted(segmentation_files or glob.glob(str(out / "segmentation_*.json")))
    con_files = sorted(consensus_files or glob.glob(str(out / "boundaries_*.json")))
    if not seg_files or not con_files:
        raise ConfigError("compare needs segmentation and consensus files")
    segs = [_load_json(p) for p in seg_files]
    cons = [_load_json(p) for p in con_files]
    for d in segs + cons:
        if d["story_id"] != cfg.story_id:
            raise DataMismatch(f"story id {d['story_id']!r} does not match {cfg.story_id!r}")

    n_perm, seed = int(st["n_permutations"]), cfg.seed
    smoothed = bool(st["smoothed_p"])
    comparisons, table = [], []
    for c in cons:
        human = np.array(c["sentence_bits"], dtype=np.int8)
        for s in segs:
            model = np.array(s["boundary_vector"], dtype=np.int8)
            if len(model) != len(human):
                raise DataMismatch(f"{s['run_id']}: {len(model)} sentence boundaries vs "
                                   f"{len(human)} in consensus run {c['run']}")
            perm = stats.permutation_test(model, human, n_perm, seed, smoothed=smoothed)
            comparisons.append({"comparison_id": f"{s['variant']}/{s['run_id']}~{c['run']}",
                                "variant": s["variant"], "run_id": s["run_id"],
                                "consensus_run": c["run"], "n_events": s["n_events"],
                                "hamming": perm.observed_distance,
                                "permutation": {"p": perm.p_value, "n": perm.n_permutations,
                                                "seed": perm.seed}})
            table.append((c["run"], s["variant"], s["run_id"], s["n_events"],
                          perm.observed_distance, perm.p_value))

    variants = sorted({s["variant"] for s in segs})
    ttests, xcorrs = [], []
    needs_traces = True
    try:
        tok = _tokenizer(cfg)
        t, _ = _story(cfg)
        timed = timed_tokens(t, tok)
        runs = _annotation_runs(cfg)
    except ConfigError as exc:
        log.warning("skipping cross-correlation: %s", exc)
        needs_traces = False
    for c in cons:
        part_path = Path(con_files[cons.index(c)]).with_name(f"participants_{c['run']}.json")
        human = np.array(c["sentence_bits"], dtype=np.int8)
        human_d = []
        if part_path.is_file():
            human_d = [stats.hamming(v, human) for v in _load_json(part_path)["vectors"].values()]
        for variant in variants:
            model_d = [stats.hamming(s["boundary_vector"], human)
                       for s in segs if s["variant"] == variant]
            if len(model_d) >= 2 and len(human_d) >= 2:
                tt = stats.distance_ttest(model_d, human_d)
                ttests.append({"variant": variant, "consensus_run": c["run"], **tt.to_json()})
            if needs_traces and c["run"] in runs:
                cc = _trace_xcorr(cfg, segs, variant, timed, t.duration_ms, runs[c["run"]])
                if cc is not None:
                    stats.write_crosscorr_csv(cc, out / f"crosscorr_{variant}_{c['run']}.csv")
                    xcorrs.append({"variant": variant, "consensus_run": c["run"], **cc.to_json()})

    report = {"story_id": cfg.story_id, "comparisons": comparisons, "ttest": ttests,
              "crosscorr": xcorrs,
              "parameters": {"n_permutations": n_perm, "seed": seed, "smoothed_p": smoothed,
                             "max_lag_ms": int(st["max_lag_ms"]),
                             "xcorr_method": st["xcorr_method"]},
              "provenance": cfg.provenance()}
    path = out / "stats_report.json"
    _write_json(path, report)
    print(format_table(cfg.story_id, table, ttests, xcorrs))
    return path


def _trace_xcorr(cfg, segs, variant, timed, duration_ms, annotation_csv):
    st = cfg.section("stats")
    traces = []
    for s in segs:
        if s["variant"] != variant or not s.get("windows"):
            continue
        seg = segmenter.segmentation_from_json(s)
        traces.append(align.story_newline_trace(seg.windows, seg.responses, timed, duration_ms))
    if not traces:
        return None
    model = align.average_traces(traces)
    logs = consensus.read_annotations_csv(annotation_csv)
    human = consensus.press_logprob_trace(_curve(cfg, logs, duration_ms))
    try:
        return stats.cross_correlate(stats.interpolate_missing(model),
                                     stats.interpolate_missing(human),
                                     int(st["max_lag_ms"]), method=st["xcorr_method"],
                                     seed=cfg.seed)
    except ValueError as exc:
        log.warning("cross-correlation for %s skipped: %s", variant, exc)
        return None


def format_table(story_id: str, rows, ttests, xcorrs) -> str:
    lines = [f"{'Story':<24} {'variant':<9} {'run':<8} {'N events':>8}  distance / p-val"]
    for run, variant, run_id, n_events, d, p in rows:
        lines.append(f"{story_id + ' (' + run + ')':<24} {variant:<9} {run_id:<8} "
                     f"{n_events:>8}  {d:.3f} (p = {p:.3f})")
    for t in ttests:
        lines.append(f"t-test {t['variant']}/{t['consensus_run']}: t = {t['t']:.3f}, "
                     f"p = {t['p']:.4f}, df = {t['df']:.1f}")
    for x in xcorrs:
        lines.append(f"cross-correlation {x['variant']}/{x['consensus_run']}: zero-lag r = "
                     f"{x['zero_lag_r']:.3f} (p = {x['p']:.3g}), peak r = {x['peak_r']:.3f} "
                     f"at {x['peak_lag_ms']} ms")
    return "\n".join(lines)


def cmd_replicate_report(cfg: RunConfig, segmentation_files=None) -> Path:
    files = sorted(segmentation_files or glob.glob(str(cfg.out_dir / "segmentation_*.json")))
    if not files:
        raise ConfigError("no segmentation files found")
    docs = [_load_json(p) for p in files]
    report = {"story_id": cfg.story_id, "variants": {}, "provenance": cfg.provenance()}
    for variant in sorted({d["variant"] for d in docs}):
        mine = [d for d in docs if d["variant"] == variant]
        vecs = [segmenter.BoundaryVector(np.array(d["boundary_vector"])) for d in mine]
        if len({len(v) for v in vecs}) > 1:
            raise DataMismatch("boundary vectors differ in length")
        summary = replicate_summary([d["run_id"] for d in mine], [d["n_events"] for d in mine], vecs)
        report["variants"][variant] = summary
        print(f"{cfg.story_id} [{variant}] events: {summary['n_events']}, "
              f"max pairwise Hamming {summary['max_pairwise_hamming']:.3f}")
    path = cfg.out_dir / "replicate_report.json"
    _write_json(path, report)
    return path


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="event-seg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("segment", help="segment the story with the model backend"))
    p.add_argument("--variant", choices=[v.value for v in PromptVariant])
    p.add_argument("--replications", type=int)
    p.add_argument("--padding", type=int)
    p.add_argument("--backend", choices=["mock", "replay", "http"])
    p.add_argument("--script", help="mock script path")
    p.add_argument("--strict", action="store_true", default=None)
    p.add_argument("--jobs", type=int, default=1)

    p = common(sub.add_parser("consensus", help="derive consensus boundaries from presses"))
    p.add_argument("--sigma-ms", type=float)
    p.add_argument("--threshold", type=float)

    p = common(sub.add_parser("compare", help="compare model and human segmentations"))
    p.add_argument("--segmentations", nargs="*")
    p.add_argument("--consensus-files", nargs="*")
    p.add_argument("--n-permutations", type=int)
    p.add_argument("--max-lag-ms", type=int)

    p = common(sub.add_parser("replicate-report", help="agreement among replications"))
    p.add_argument("--segmentations", nargs="*")
    return ap


def _overrides(args) -> dict:
    get = lambda name: getattr(args, name, None)
    return {
        "output": {"dir": get("out")},
        "stats": {"seed": get("seed"), "n_permutations": get("n_permutations"),
                  "max_lag_ms": get("max_lag_ms")},
        "segment": {"variant": get("variant"), "replications": get("replications"),
                    "padding": get("padding"), "strict": get("strict")},
        "backend": {"kind": get("backend"), "script": get("script")},
        "consensus": {"sigma_ms": get("sigma_ms"), "threshold": get("threshold")},
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "segment":
            cmd_segment(cfg, jobs=args.jobs)
        elif args.command == "consensus":
            cmd_consensus(cfg)
        elif args.command == "compare":
            cmd_compare(cfg, args.segmentations, args.consensus_files)
        else:
            cmd_replicate_report(cfg, args.segmentations)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except segmenter.CopyDivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DataMismatch, TranscriptError, consensus.AnnotationError,
            segmenter.SegmentationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
