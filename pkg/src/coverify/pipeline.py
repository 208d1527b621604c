"""Iteration orchestration: corpus sweeps, training export, evaluation.

One iteration samples translations and a test suite for every corpus
function, co-verifies each candidate, and writes the accepted triplets plus
back-translation training files into a per-iteration directory. Work is
resumable: a completion log records one entry per (direction, function), and
reruns skip finished entries, so an interrupted sweep converges to exactly
the same outputs as an uninterrupted one given deterministic endpoints.

Between iterations, the operator points the endpoint config at the newly
fine-tuned models; training itself happens in external tools consuming the
exported instruction pairs.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from coverify.config import ConvergencePolicy, PipelineConfig
from coverify.corpus import Direction, FunctionUnit, Language, unit_id
from coverify.errors import (
    ConfigurationError,
    ExtractionError,
    GatewayError,
    SuiteFormatError,
    WrapperMismatchError,
)
from coverify.executor import ErrorType
from coverify.gateway import (
    CandidateResult,
    ModelEndpoint,
    ModelGateway,
    TestCase,
    TestSuite,
    serialize_suite,
)
from coverify.metrics import (
    MetricsReport,
    SampleOutcome,
    aggregate_pass_at_k,
    bleu,
    code_tokenize,
    cpass,
    error_histogram,
    pearson,
    weighted_ngram_bleu,
)
from coverify.verify import (
    CoVerifyResult,
    Rejection,
    RejectionStage,
    TranscriptRunner,
    VerifiedTriplet,
    check,
    co_verify_corpus,
    rejection_to_record,
    transcript_from_record,
    triplet_to_record,
    vt_metric,
)

log = logging.getLogger(__name__)

_LANG_DISPLAY = {Language.C: "C", Language.CUDA: "CUDA"}


@dataclass
class TrainingExample:
    task: str  # "translate" | "gen_tests"
    prompt: str
    target: str
    direction: Optional[str]
    iteration: int
    origin: str

    def to_record(self) -> dict:
        return {
            "task": self.task,
            "prompt": self.prompt,
            "target": self.target,
            "direction": self.direction,
            "iteration": self.iteration,
            "origin": self.origin,
        }


@dataclass
class DirectionStats:
    attempted: int = 0
    accepted: int = 0
    rejected: int = 0
    surplus: int = 0


@dataclass
class IterationReport:
    iteration: int
    accepted_per_language: dict = field(default_factory=dict)
    per_direction: dict = field(default_factory=dict)
    rejection_histogram: dict = field(default_factory=dict)
    stage_counts: dict = field(default_factory=dict)
    vt: float = 0.0
    elapsed: float = 0.0
    export_paths: list = field(default_factory=list)
    converged: bool = False
    endpoints: dict = field(default_factory=dict)

    @property
    def total_accepted(self) -> int:
        return sum(self.accepted_per_language.values())

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "accepted_per_language": dict(sorted(self.accepted_per_language.items())),
            "per_direction": {
                d: vars(s) if isinstance(s, DirectionStats) else s
                for d, s in sorted(self.per_direction.items())
            },
            "rejection_histogram": dict(sorted(self.rejection_histogram.items())),
            "stage_counts": dict(sorted(self.stage_counts.items())),
            "vt": self.vt,
            "elapsed": self.elapsed,
            "export_paths": [str(p) for p in self.export_paths],
            "converged": self.converged,
            "endpoints": self.endpoints,
        }


@dataclass
class IterationResult:
    triplets: list[VerifiedTriplet]
    rejections: list[Rejection]
    report: IterationReport


def _write_jsonl(path: Path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def _triplet_from_record(record: dict, corpus_by_id: dict[str, FunctionUnit]) -> VerifiedTriplet:
    fn = corpus_by_id.get(record["x_id"])
    if fn is None:
        direction = Direction(record["direction"])
        fn = FunctionUnit.from_source(record["x_source"], direction.source_language)
    suite = TestSuite(
        function_id=record["x_id"],
        cases=tuple(TestCase(c["index"], c["snippet"]) for c in record["suite"]),
    )
    return VerifiedTriplet(
        x=fn,
        y=record["y_source"],
        suite=suite,
        x_transcript=transcript_from_record(record["x_transcript"]),
        y_transcript=transcript_from_record(record["y_transcript"]),
        direction=Direction(record["direction"]),
        iteration=record["iteration"],
        candidate_index=record.get("candidate_index", 0),
        y_wrapper=record.get("y_wrapper"),
    )


def _rejection_from_record(record: dict) -> Rejection:
    return Rejection(
        function_id=record["function_id"],
        stage=RejectionStage(record["stage"]),
        detail=record["detail"],
        error_type=ErrorType(record["error_type"]) if record.get("error_type") else None,
        direction=Direction(record["direction"]) if record.get("direction") else None,
        candidate_index=record.get("candidate_index", 0),
        iteration=record.get("iteration", 1),
    )


class CompletionLog:
    """Append-only journal of finished (direction, function) work units."""

    def __init__(self, path: Path):
        self.path = path
        self._entries: dict[tuple[str, str], dict] = {}
        if path.exists():
            for record in _read_jsonl(path):
                self._entries[(record["direction"], record["function_id"])] = record

    def done(self, direction: Direction, function_id: str) -> bool:
        return (direction.value, function_id) in self._entries

    def get(self, direction: Direction, function_id: str) -> dict:
        return self._entries[(direction.value, function_id)]

    def append(self, direction: Direction, function_id: str, payload: dict) -> None:
        record = {"direction": direction.value, "function_id": function_id, **payload}
        self._entries[(direction.value, function_id)] = record
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _gather_wrappers(
    gateway: ModelGateway,
    endpoint: ModelEndpoint,
    fn: FunctionUnit,
    candidates: Sequence[CandidateResult],
    direction: Direction,
) -> tuple[dict[tuple[str, int], str], list[int]]:
    """Kernel wrappers for CUDA-side candidates; returns failures by index."""
    wrappers: dict[tuple[str, int], str] = {}
    failed: list[int] = []
    if direction.target_language is not Language.CUDA:
        return wrappers, failed
    for ci, candidate in enumerate(candidates):
        if not candidate.ok:
            continue
        try:
            kernel = FunctionUnit.from_source(candidate.text, Language.CUDA)
            wrappers[(fn.id, ci)] = gateway.request_cuda_wrapper(kernel, endpoint)
        except Exception as exc:  # wrapper failures become per-candidate rejects
            log.info("wrapper generation failed for %s[%d]: %s", fn.name, ci, exc)
            failed.append(ci)
    return wrappers, failed


def run_iteration(
    corpus: Sequence[FunctionUnit],
    config: PipelineConfig,
    iteration: int,
    gateway: ModelGateway,
    runner: TranscriptRunner,
    work_dir: Optional[Path] = None,
    history: Optional[Sequence[IterationReport]] = None,
) -> IterationResult:
    """One co-verify sweep over the corpus; resumable and deterministic."""
    if config.translator is None or config.tester is None:
        raise ConfigurationError("run_iteration needs translator and tester endpoints")
    if history:
        _warn_if_endpoints_unchanged(history, config)

    start = time.monotonic()
    out_dir = Path(work_dir) if work_dir is not None else config.work_dir / f"iter_{iteration}"
    out_dir.mkdir(parents=True, exist_ok=True)
    completion = CompletionLog(out_dir / "completion.jsonl")
    corpus_by_id = {u.id: u for u in corpus}

    triplets: list[VerifiedTriplet] = []
    rejections: list[Rejection] = []
    vt_entries: list[tuple[int, bool]] = []
    per_direction: dict[str, DirectionStats] = {}
    surplus_total = 0

    for direction in sorted(config.directions, key=lambda d: d.value):
        stats = per_direction.setdefault(direction.value, DirectionStats())
        units = sorted(
            (u for u in corpus if u.language is direction.source_language),
            key=lambda u: u.id,
        )
        for fn in units:
            if completion.done(direction, fn.id):
                entry = completion.get(direction, fn.id)
                restored = [
                    _triplet_from_record(r, corpus_by_id) for r in entry["accepted"]
                ]
                restored_rejections = [
                    _rejection_from_record(r) for r in entry["rejections"]
                ]
                triplets.extend(restored)
                rejections.extend(restored_rejections)
                vt_entries.append(tuple(entry["vt_entry"]))
                stats.accepted += len(restored)
                stats.rejected += len(restored_rejections)
                stats.surplus += entry.get("surplus", 0)
                stats.attempted += (
                    len(restored) + len(restored_rejections) + entry.get("surplus", 0)
                )
                surplus_total += entry.get("surplus", 0)
                continue

            result = _process_function(fn, direction, config, iteration, gateway, runner)
            completion.append(
                direction,
                fn.id,
                {
                    "accepted": [triplet_to_record(t) for t in result.accepted],
                    "rejections": [rejection_to_record(r) for r in result.rejections],
                    "surplus": len(result.surplus),
                    "vt_entry": list(result.vt_entries[0]) if result.vt_entries else [0, False],
                },
            )
            triplets.extend(result.accepted)
            rejections.extend(result.rejections)
            vt_entries.extend(result.vt_entries)
            stats.accepted += len(result.accepted)
            stats.rejected += len(result.rejections)
            stats.surplus += len(result.surplus)
            stats.attempted += (
                len(result.accepted) + len(result.rejections) + len(result.surplus)
            )
            surplus_total += len(result.surplus)

    _write_jsonl(out_dir / "triplets.jsonl", [triplet_to_record(t) for t in triplets])
    _write_jsonl(out_dir / "rejections.jsonl", [rejection_to_record(r) for r in rejections])

    export_paths = export_training_data(
        triplets,
        out_dir,
        gateway=gateway,
        iteration=iteration,
        n_tests=config.n_tests,
        split_by_direction=config.split_by_direction,
    )

    accepted_per_language: dict[str, int] = {}
    for triplet in triplets:
        key = triplet.x.language.value
        accepted_per_language[key] = accepted_per_language.get(key, 0) + 1

    histogram = {
        k.value: v for k, v in error_histogram(rejections).items() if v or k is ErrorType.UNKNOWN
    }
    stage_counts: dict[str, int] = {}
    for rejection in rejections:
        stage_counts[rejection.stage.value] = stage_counts.get(rejection.stage.value, 0) + 1

    report = IterationReport(
        iteration=iteration,
        accepted_per_language=accepted_per_language,
        per_direction=per_direction,
        rejection_histogram=histogram,
        stage_counts=stage_counts,
        vt=vt_metric(vt_entries) if vt_entries else 0.0,
        elapsed=time.monotonic() - start,
        export_paths=list(export_paths),
        endpoints={
            "translator": config.translator.model_name,
            "tester": config.tester.model_name,
        },
    )
    if history is not None:
        report.converged = converged([*history, report], config.convergence)

    (out_dir / "report.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "report.html").write_text(render_html_report(report), encoding="utf-8")
    return IterationResult(triplets=triplets, rejections=rejections, report=report)


def _process_function(
    fn: FunctionUnit,
    direction: Direction,
    config: PipelineConfig,
    iteration: int,
    gateway: ModelGateway,
    runner: TranscriptRunner,
) -> CoVerifyResult:
    try:
        candidates = gateway.request_translation(
            fn, direction, config.n_translation_samples, config.translator
        )
    except ExtractionError as exc:
        candidates = [
            CandidateResult(i, None, error=str(exc))
            for i in range(config.n_translation_samples)
        ]

    suite: Optional[TestSuite] = None
    try:
        suite = gateway.request_tests(fn, config.n_tests, config.tester)
    except (SuiteFormatError, ExtractionError) as exc:
        log.info("test generation failed for %s: %s", fn.name, exc)

    x_unit = fn
    y_wrappers: dict[tuple[str, int], str] = {}
    wrapper_failures: list[int] = []
    if runner.needs_wrappers:
        if fn.language is Language.CUDA and not fn.wrapper_source:
            try:
                x_unit = fn.with_wrapper(
                    gateway.request_cuda_wrapper(fn, config.translator)
                )
            except (GatewayError, WrapperMismatchError) as exc:
                log.info("source wrapper generation failed for %s: %s", fn.name, exc)
        y_wrappers, wrapper_failures = _gather_wrappers(
            gateway, config.translator, fn, candidates, direction
        )
        for ci in wrapper_failures:
            candidates[ci] = CandidateResult(
                ci, None, error="kernel wrapper generation failed"
            )

    suites = {fn.id: suite} if suite is not None else {}
    return co_verify_corpus(
        [x_unit],
        {fn.id: candidates},
        suites,
        runner,
        direction,
        iteration=iteration,
        tol=config.tolerance,
        export_cap=config.export_cap,
        y_wrappers=y_wrappers,
    )


def export_training_data(
    triplets: Sequence[VerifiedTriplet],
    out_dir: Path,
    gateway: ModelGateway,
    iteration: int = 1,
    n_tests: int = 5,
    split_by_direction: bool = False,
) -> list[Path]:
    """Back-translation instruction pairs for both models, as JSON Lines.

    Translator examples flip the direction: the generated y becomes the
    prompt and the original x the target. Tester examples pair y with the
    suite that verified it, serialized with its case markers.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def translate_example(triplet: VerifiedTriplet) -> TrainingExample:
        back = triplet.direction.reversed
        system = gateway.templates["translate_system"].render(
            source_lang=_LANG_DISPLAY[back.source_language],
            target_lang=_LANG_DISPLAY[back.target_language],
        )
        prompt = system.strip() + "\n\n" + triplet.y.strip()
        return TrainingExample(
            task="translate",
            prompt=prompt,
            target=triplet.x.source.strip(),
            direction=back.value,
            iteration=iteration,
            origin=f"{triplet.x.id}:{triplet.candidate_index}",
        )

    def tester_example(triplet: VerifiedTriplet) -> TrainingExample:
        system = gateway.templates["gen_tests_system"].render(
            source_lang=_LANG_DISPLAY[triplet.direction.target_language],
            n_tests=len(triplet.suite.cases),
        )
        prompt = system.strip() + "\n\n" + triplet.y.strip()
        return TrainingExample(
            task="gen_tests",
            prompt=prompt,
            target=serialize_suite(triplet.suite),
            direction=None,
            iteration=iteration,
            origin=f"{triplet.x.id}:{triplet.candidate_index}",
        )

    groups: dict[str, list[VerifiedTriplet]]
    if split_by_direction:
        groups = {}
        for triplet in triplets:
            groups.setdefault(triplet.direction.value, []).append(triplet)
        if not groups:
            groups = {"empty": []}
    else:
        groups = {"": list(triplets)}

    paths: list[Path] = []
    for suffix, group in sorted(groups.items()):
        tag = f"_{suffix}" if suffix and suffix != "empty" else ""
        translator_path = out_dir / f"training_translator{tag}.jsonl"
        tester_path = out_dir / f"training_tester{tag}.jsonl"
        _write_jsonl(translator_path, [translate_example(t).to_record() for t in group])
        _write_jsonl(tester_path, [tester_example(t).to_record() for t in group])
        paths.extend([translator_path, tester_path])

    manifest = {
        "iteration": iteration,
        "examples_per_task": len(triplets),
        "files": [p.name for p in paths],
        "notes": {
            "training": "consumed by external fine-tuning tools",
            "suggested_epochs": iteration,
        },
    }
    manifest_path = out_dir / "export_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


def converged(history: Sequence[IterationReport], policy: ConvergencePolicy) -> bool:
    """Growth below threshold, or the iteration budget is spent."""
    if not history:
        raise ValueError("converged needs at least one iteration report")
    current = history[-1]
    if current.iteration >= policy.max_iterations:
        return True
    if len(history) < 2:
        return False
    previous = history[-2]
    prev_total = previous.total_accepted
    cur_total = current.total_accepted
    if prev_total == 0:
        return cur_total == 0
    growth = (cur_total - prev_total) / prev_total
    return growth < policy.min_growth_fraction


def _warn_if_endpoints_unchanged(
    history: Sequence[IterationReport], config: PipelineConfig
) -> None:
    last = history[-1]
    current = {
        "translator": config.translator.model_name,
        "tester": config.tester.model_name,
    }
    if last.endpoints and last.endpoints == current:
        log.warning(
            "endpoint identifiers unchanged since iteration %d; "
            "did you point the config at the newly fine-tuned models?",
            last.iteration,
        )


# -- evaluation ---------------------------------------------------------------


@dataclass
class EvalPair:
    """A paired test-set entry: source, reference translation, reference suite."""

    x: FunctionUnit
    reference_target: str
    suite: TestSuite
    direction: Direction


def load_eval_pairs(path: Path | str) -> list[EvalPair]:
    pairs = []
    for lineno, record in enumerate(_read_jsonl(Path(path)), start=1):
        language = Language(record["language"])
        fn = FunctionUnit.from_source(
            record["source"],
            language,
            wrapper_source=record.get("wrapper"),
            provenance=f"eval:{lineno}",
        )
        direction = (
            Direction.C_TO_CUDA if language is Language.C else Direction.CUDA_TO_C
        )
        suite = TestSuite(
            function_id=fn.id,
            cases=tuple(
                TestCase(i + 1, snippet) for i, snippet in enumerate(record["tests"])
            ),
        )
        pairs.append(
            EvalPair(
                x=fn,
                reference_target=record["target"],
                suite=suite,
                direction=direction,
            )
        )
    return pairs


def evaluate(
    pairs: Sequence[EvalPair],
    gateway: ModelGateway,
    endpoint: ModelEndpoint,
    runner: TranscriptRunner,
    k_values: Sequence[int] = (1,),
    n_samples: int = 1,
    tol=None,
    tester_endpoint: Optional[ModelEndpoint] = None,
    n_tests: int = 5,
) -> MetricsReport:
    """Sample translations per pair, Check against the reference suites.

    Per-sample metric vectors (BLEU, weighted n-gram BLEU, compile, check)
    feed the Pearson grid; constant vectors are skipped with a note.
    """
    from coverify.verify import DEFAULT_TOLERANCE

    tol = tol or DEFAULT_TOLERANCE
    if not pairs:
        raise ConfigurationError("empty evaluation set")
    if n_samples < max(k_values):
        raise ConfigurationError(
            f"n_samples={n_samples} must cover max k={max(k_values)}"
        )

    outcomes: list[SampleOutcome] = []
    bleu_vec: list[float] = []
    weighted_vec: list[float] = []
    compile_vec: list[float] = []
    check_vec: list[float] = []
    vt_entries: list[tuple[int, bool]] = []

    for pair in pairs:
        try:
            candidates = gateway.request_translation(
                pair.x, pair.direction, n_samples, endpoint
            )
        except ExtractionError as exc:
            candidates = [CandidateResult(i, None, error=str(exc)) for i in range(n_samples)]

        x_side = runner.run_side(
            pair.x.source, pair.x.language, pair.suite, pair.x.wrapper_source
        )
        reference_tokens = code_tokenize(pair.reference_target)

        n_pass = 0
        n_compile = 0
        for candidate in candidates:
            if not candidate.ok:
                bleu_vec.append(0.0)
                weighted_vec.append(0.0)
                compile_vec.append(0.0)
                check_vec.append(0.0)
                continue
            candidate_tokens = code_tokenize(candidate.text)
            bleu_vec.append(bleu(candidate_tokens, reference_tokens))
            weighted_vec.append(weighted_ngram_bleu(candidate_tokens, reference_tokens))
            y_side = runner.run_side(
                candidate.text, pair.direction.target_language, pair.suite
            )
            compiled = y_side.compile_result.ok
            n_compile += int(compiled)
            compile_vec.append(float(compiled))
            passed = (
                x_side.usable
                and y_side.usable
                and check(x_side.transcript, y_side.transcript, tol)
            )
            n_pass += int(passed)
            check_vec.append(float(passed))
        outcomes.append(
            SampleOutcome(
                problem_id=pair.x.id, n=n_samples, c=n_pass, compile_ok=n_compile
            )
        )

        if tester_endpoint is not None:
            try:
                suite = gateway.request_tests(pair.x, n_tests, tester_endpoint)
                side = runner.run_side(
                    pair.x.source, pair.x.language, suite, pair.x.wrapper_source
                )
                vt_entries.append(
                    (
                        len(suite.cases),
                        side.usable and side.transcript.case_count == len(suite.cases),
                    )
                )
            except (SuiteFormatError, ExtractionError):
                vt_entries.append((0, False))

    vectors = {
        "bleu": bleu_vec,
        "codebleu_ngram": weighted_vec,
        "cpass": compile_vec,
        "check": check_vec,
    }
    correlations: dict[str, float] = {}
    skipped: list[str] = []
    names = sorted(vectors)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            try:
                correlations[f"{a}:{b}"] = pearson(vectors[a], vectors[b])
            except ValueError:
                skipped.append(f"{a}:{b}")

    report = MetricsReport(
        bleu=sum(bleu_vec) / len(bleu_vec),
        codebleu_ngram=sum(weighted_vec) / len(weighted_vec),
        cpass=cpass(outcomes),
        pass_at={k: aggregate_pass_at_k(outcomes, k) for k in k_values},
        vt=vt_metric(vt_entries) if vt_entries else None,
        pearson=correlations,
        notes={
            "n_samples": n_samples,
            "problems": len(pairs),
            "bleu_smoothing": "add-one on zero-count higher-order n-grams",
            "extraction_failures_counted_as_non_passing": True,
        },
    )
    if skipped:
        report.notes["pearson_skipped_constant"] = skipped
    return report


def render_html_report(report: IterationReport) -> str:
    rows = "".join(
        f"<tr><td>{direction}</td><td>{stats.attempted}</td><td>{stats.accepted}</td>"
        f"<td>{stats.rejected}</td><td>{stats.surplus}</td></tr>"
        for direction, stats in sorted(report.per_direction.items())
    )
    histogram = "".join(
        f"<tr><td>{k}</td><td>{v}</td></tr>"
        for k, v in sorted(report.rejection_histogram.items())
    )
    return f"""<!doctype html>
<html><head><meta charset="utf-8"><title>co-verify iteration {report.iteration}</title>
<style>body{{font-family:sans-serif;margin:2em}}table{{border-collapse:collapse}}
td,th{{border:1px solid #999;padding:4px 10px}}</style></head>
<body>
<h1>Iteration {report.iteration}</h1>
<p>VT: {report.vt:.4f} | accepted: {report.total_accepted} | elapsed: {report.elapsed:.1f}s
 | converged: {report.converged}</p>
<h2>Per direction</h2>
<table><tr><th>direction</th><th>attempted</th><th>accepted</th><th>rejected</th><th>surplus</th></tr>
{rows}</table>
<h2>Rejection histogram</h2>
<table><tr><th>error type</th><th>count</th></tr>
{histogram}</table>
</body></html>
"""
