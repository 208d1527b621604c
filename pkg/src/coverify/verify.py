"""Functional-equivalence decisions over execution transcripts.

Equivalence of a source function x and a translated candidate y is decided
purely from the canonical records both harness programs print: same case
count, same return tokens, same post-call argument snapshots, numeric tokens
compared under a small absolute-plus-relative tolerance. Accepted pairs
become verified triplets (x, y, suite) with both transcripts attached; every
other outcome is a Rejection naming the earliest failing stage.

Execution is abstracted behind a TranscriptRunner so the same decision logic
runs against real toolchains or against canned transcripts (offline tests,
mock pipeline runs).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

from coverify.corpus import (
    Direction,
    FunctionUnit,
    Language,
    parse_signature,
    split_top_level,
    unit_id,
)
from coverify.errors import (
    ConfigurationError,
    HarnessError,
    SignatureError,
    TranscriptError,
)
from coverify.executor import (
    CompileSpec,
    ErrorType,
    ExecutionResult,
    Phase,
    Status,
    execute_unit,
)
from coverify.gateway import CandidateResult, TestSuite
from coverify.harness import emit_harness

_CASE_OPEN_RE = re.compile(r"^=== CASE (\d+) ===\s*$")
_CASE_END_RE = re.compile(r"^=== END (\d+) ===\s*$")
_RECORD_MARKER = "Return value:"
_ARGS_MARKER = "Arguments after function call:"


@dataclass(frozen=True)
class NumericTolerance:
    abs_tol: float = 1e-6
    rel_tol: float = 1e-4
    nan_equal: bool = True


DEFAULT_TOLERANCE = NumericTolerance()


@dataclass(frozen=True)
class CaseRecord:
    case_index: int
    return_token: str
    argument_snapshots: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class CanonicalOutput:
    cases: tuple[CaseRecord, ...]
    complete: bool

    def __post_init__(self):
        indices = [c.case_index for c in self.cases]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"case indices must be strictly increasing, got {indices}")

    @property
    def case_count(self) -> int:
        return len(self.cases)


def _parse_record_line(line: str, case_index: int) -> Optional[CaseRecord]:
    start = line.find(_RECORD_MARKER)
    args_at = line.find(_ARGS_MARKER)
    if start < 0 or args_at < 0:
        return None
    return_token = line[start + len(_RECORD_MARKER) : args_at].strip()
    open_idx = line.find("(", args_at)
    if open_idx < 0:
        return None
    depth = 0
    close_idx = -1
    for i in range(open_idx, len(line)):
        if line[i] == "(":
            depth += 1
        elif line[i] == ")":
            depth -= 1
            if depth == 0:
                close_idx = i
                break
    if close_idx < 0:
        return None
    args_text = line[open_idx + 1 : close_idx].strip()
    snapshots: list[tuple[str, ...]] = []
    if args_text:
        for part in split_top_level(args_text, ","):
            part = part.strip()
            if part.startswith("[") and part.endswith("]"):
                inner = part[1:-1].strip()
                tokens = tuple(t.strip() for t in inner.split(",")) if inner else ()
            else:
                tokens = (part,)
            snapshots.append(tokens)
    return CaseRecord(
        case_index=case_index,
        return_token=return_token,
        argument_snapshots=tuple(snapshots),
    )


def parse_output(stdout: str) -> CanonicalOutput:
    """Parse harness stdout into per-case records.

    Accepts the delimited layout the harness emits and, for fixture
    transcripts, bare record lines (one case per line). A trailing partial
    case marks the output incomplete instead of failing the parse.
    """
    lines = stdout.splitlines()
    has_delimiters = any(_CASE_OPEN_RE.match(line) for line in lines)

    if not has_delimiters:
        records = []
        for line in lines:
            if _RECORD_MARKER in line:
                record = _parse_record_line(line, len(records) + 1)
                if record is not None:
                    records.append(record)
        if not records:
            raise TranscriptError("no recognizable case delimiters or records")
        return CanonicalOutput(cases=tuple(records), complete=True)

    cases: list[CaseRecord] = []
    complete = True
    open_index: Optional[int] = None
    pending: Optional[CaseRecord] = None
    last_index = 0
    for line in lines:
        open_match = _CASE_OPEN_RE.match(line)
        end_match = _CASE_END_RE.match(line)
        if open_match:
            index = int(open_match.group(1))
            if open_index is not None or index <= last_index:
                complete = False
                break
            open_index = index
            pending = None
            continue
        if end_match:
            index = int(end_match.group(1))
            if open_index is None or index != open_index or pending is None:
                complete = False
                break
            cases.append(pending)
            last_index = index
            open_index = None
            pending = None
            continue
        if open_index is not None and _RECORD_MARKER in line and pending is None:
            pending = _parse_record_line(line, open_index)
    if open_index is not None:
        complete = False
    return CanonicalOutput(cases=tuple(cases), complete=complete)


@dataclass(frozen=True)
class Difference:
    case_index: Optional[int]
    location: str
    left: str
    right: str

    def __str__(self) -> str:
        where = f"case {self.case_index}, {self.location}" if self.case_index else self.location
        return f"{where}: {self.left!r} != {self.right!r}"


def _tokens_equal(a: str, b: str, tol: NumericTolerance) -> bool:
    try:
        ua, ub = float(a), float(b)
    except ValueError:
        return a == b
    if math.isnan(ua) or math.isnan(ub):
        return tol.nan_equal and math.isnan(ua) and math.isnan(ub)
    if math.isinf(ua) or math.isinf(ub):
        return ua == ub
    return abs(ua - ub) <= tol.abs_tol + tol.rel_tol * max(abs(ua), abs(ub))


def outputs_equal(
    a: CanonicalOutput,
    b: CanonicalOutput,
    tol: NumericTolerance = DEFAULT_TOLERANCE,
) -> tuple[bool, Optional[Difference]]:
    """Token-wise transcript comparison; returns the first difference found."""
    if not a.complete or not b.complete:
        raise TranscriptError("outputs_equal requires complete transcripts")
    if a.case_count != b.case_count:
        return False, Difference(None, "case count", str(a.case_count), str(b.case_count))
    for ca, cb in zip(a.cases, b.cases):
        if not _tokens_equal(ca.return_token, cb.return_token, tol):
            return False, Difference(ca.case_index, "return value", ca.return_token, cb.return_token)
        if len(ca.argument_snapshots) != len(cb.argument_snapshots):
            return False, Difference(
                ca.case_index,
                "argument count",
                str(len(ca.argument_snapshots)),
                str(len(cb.argument_snapshots)),
            )
        for arg_i, (sa, sb) in enumerate(zip(ca.argument_snapshots, cb.argument_snapshots), 1):
            if len(sa) != len(sb):
                return False, Difference(
                    ca.case_index, f"argument {arg_i} length", str(len(sa)), str(len(sb))
                )
            for tok_i, (ta, tb) in enumerate(zip(sa, sb), 1):
                if not _tokens_equal(ta, tb, tol):
                    return False, Difference(
                        ca.case_index, f"argument {arg_i}, element {tok_i}", ta, tb
                    )
    return True, None


def check(
    x_transcript: Optional[CanonicalOutput],
    y_transcript: Optional[CanonicalOutput],
    tol: NumericTolerance = DEFAULT_TOLERANCE,
) -> bool:
    """Conjunction over all cases; incomplete or missing transcripts fail."""
    if x_transcript is None or y_transcript is None:
        return False
    if not x_transcript.complete or not y_transcript.complete:
        return False
    equal, _ = outputs_equal(x_transcript, y_transcript, tol)
    return equal


class RejectionStage(str, Enum):
    X_COMPILE = "x_compile"
    X_RUN = "x_run"
    Y_COMPILE = "y_compile"
    Y_RUN = "y_run"
    MISMATCH = "mismatch"
    EXTRACTION = "extraction"


@dataclass
class Rejection:
    function_id: str
    stage: RejectionStage
    detail: str
    error_type: Optional[ErrorType] = None
    direction: Optional[Direction] = None
    candidate_index: int = 0
    iteration: int = 1


@dataclass
class VerifiedTriplet:
    x: FunctionUnit
    y: str
    suite: TestSuite
    x_transcript: CanonicalOutput
    y_transcript: CanonicalOutput
    direction: Direction
    iteration: int = 1
    candidate_index: int = 0
    y_wrapper: Optional[str] = None

    def __post_init__(self):
        if not self.x_transcript.complete or not self.y_transcript.complete:
            raise ValueError("verified triplets require complete transcripts")


@dataclass
class SideResult:
    """Execution of one side (source or candidate) of a comparison."""

    compile_result: ExecutionResult
    run_result: Optional[ExecutionResult] = None
    transcript: Optional[CanonicalOutput] = None

    @property
    def usable(self) -> bool:
        return (
            self.compile_result.ok
            and self.run_result is not None
            and self.run_result.ok
            and self.transcript is not None
            and self.transcript.complete
        )


class TranscriptRunner(Protocol):
    needs_wrappers: bool

    def run_side(
        self,
        source: str,
        language: Language,
        suite: TestSuite,
        wrapper_source: Optional[str] = None,
    ) -> SideResult: ...


def _failure_result(phase: Phase, detail: str, status: Status) -> ExecutionResult:
    return ExecutionResult(
        phase=phase,
        status=status,
        stderr=detail,
        error_type=ErrorType.UNKNOWN,
    )


class ToolchainRunner:
    """Real execution: emit harness, compile with the backend, run, parse.

    Harness-generation failures (unsupported signature, bad snippet, missing
    wrapper) surface as compile-stage failures so rejections carry a stage
    from the fixed vocabulary.
    """

    needs_wrappers = True

    def __init__(
        self,
        specs: dict[Language, CompileSpec],
        run_timeout: float = 60.0,
        scratch_root: Optional[Path | str] = None,
        keep_scratch: bool = False,
        rules=None,
    ):
        self.specs = specs
        self.run_timeout = run_timeout
        self.scratch_root = scratch_root
        self.keep_scratch = keep_scratch
        self.rules = rules

    def run_side(
        self,
        source: str,
        language: Language,
        suite: TestSuite,
        wrapper_source: Optional[str] = None,
    ) -> SideResult:
        spec = self.specs.get(language)
        if spec is None:
            raise ConfigurationError(f"no compile backend configured for {language.value}")
        try:
            sig = parse_signature(source)
            unit = emit_harness(
                source, sig, suite, spec.backend, wrapper_source=wrapper_source
            )
        except (SignatureError, HarnessError) as exc:
            return SideResult(
                compile_result=_failure_result(
                    Phase.COMPILE, f"harness generation failed: {exc}", Status.COMPILE_ERROR
                )
            )
        outcome = execute_unit(
            unit,
            spec,
            run_timeout=self.run_timeout,
            scratch_root=self.scratch_root,
            keep_scratch=self.keep_scratch,
            rules=self.rules,
        )
        transcript = None
        if outcome.run_result is not None and outcome.run_result.stdout:
            try:
                transcript = parse_output(outcome.run_result.stdout)
            except TranscriptError:
                transcript = None
        return SideResult(
            compile_result=outcome.compile_result,
            run_result=outcome.run_result,
            transcript=transcript,
        )


class CannedTranscriptRunner:
    """Execution stand-in keyed by normalized-source hash.

    Lets the full co-verify path run with neither toolchain nor model: each
    known source maps to a canned record describing how its harness would
    have compiled and what it would have printed.
    """

    needs_wrappers = False

    def __init__(self, records: Optional[dict[str, dict]] = None):
        self._records = dict(records or {})

    def register(
        self,
        source: str,
        stdout: str = "",
        compile_ok: bool = True,
        compile_stderr: str = "",
        status: str = "ok",
        stderr: str = "",
    ) -> None:
        self._records[unit_id(source)] = {
            "compile_ok": compile_ok,
            "compile_stderr": compile_stderr,
            "status": status,
            "stdout": stdout,
            "stderr": stderr,
        }

    def save(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self._records, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path: Path | str) -> "CannedTranscriptRunner":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def run_side(
        self,
        source: str,
        language: Language,
        suite: TestSuite,
        wrapper_source: Optional[str] = None,
    ) -> SideResult:
        from coverify.executor import classify_error

        key = unit_id(source)
        record = self._records.get(key)
        if record is None:
            raise ConfigurationError(f"no canned transcript for source hash {key[:12]}")
        if not record.get("compile_ok", True):
            stderr = record.get("compile_stderr", "")
            return SideResult(
                compile_result=ExecutionResult(
                    phase=Phase.COMPILE,
                    status=Status.COMPILE_ERROR,
                    stderr=stderr,
                    exit_code=1,
                    error_type=classify_error(stderr, Phase.COMPILE),
                )
            )
        compile_ok = ExecutionResult(phase=Phase.COMPILE, status=Status.OK, exit_code=0)
        status = Status(record.get("status", "ok"))
        stdout = record.get("stdout", "")
        stderr = record.get("stderr", "")
        if status is Status.OK:
            run_result = ExecutionResult(
                phase=Phase.RUN, status=Status.OK, stdout=stdout, stderr=stderr, exit_code=0
            )
        else:
            run_result = ExecutionResult(
                phase=Phase.RUN,
                status=status,
                stdout=stdout,
                stderr=stderr,
                exit_code=None if status is Status.TIMEOUT else 1,
                duration=60.0 if status is Status.TIMEOUT else 0.0,
                error_type=classify_error(stderr, Phase.RUN),
            )
        transcript = None
        if stdout:
            try:
                transcript = parse_output(stdout)
            except TranscriptError:
                transcript = None
        return SideResult(
            compile_result=compile_ok, run_result=run_result, transcript=transcript
        )


def _excerpt(text: str, limit: int = 400) -> str:
    text = text.strip()
    return text if len(text) <= limit else text[: limit - 3] + "..."


def _side_rejection(
    fn: FunctionUnit,
    side: SideResult,
    compile_stage: RejectionStage,
    run_stage: RejectionStage,
) -> Optional[Rejection]:
    if not side.compile_result.ok:
        return Rejection(
            function_id=fn.id,
            stage=compile_stage,
            detail=_excerpt(side.compile_result.stderr),
            error_type=side.compile_result.error_type,
        )
    if side.run_result is None or not side.run_result.ok:
        detail = _excerpt(side.run_result.stderr) if side.run_result else "no run result"
        status = side.run_result.status.value if side.run_result else "missing"
        return Rejection(
            function_id=fn.id,
            stage=run_stage,
            detail=f"{status}: {detail}",
            error_type=side.run_result.error_type if side.run_result else None,
        )
    if side.transcript is None or not side.transcript.complete:
        return Rejection(
            function_id=fn.id,
            stage=run_stage,
            detail="incomplete or unparseable transcript",
            error_type=ErrorType.UNKNOWN,
        )
    return None


def verify_triplet(
    x: FunctionUnit,
    y: str,
    suite: TestSuite,
    runner: TranscriptRunner,
    direction: Direction,
    iteration: int = 1,
    tol: NumericTolerance = DEFAULT_TOLERANCE,
    y_wrapper: Optional[str] = None,
    candidate_index: int = 0,
    x_side: Optional[SideResult] = None,
):
    """Run both sides on the same suite; accept only on full transcript equality.

    Returns a VerifiedTriplet or the Rejection for the earliest failing stage.
    A precomputed x_side may be passed so corpus sweeps execute the source
    program once per function rather than once per candidate.
    """
    if x_side is None:
        x_side = runner.run_side(x.source, x.language, suite, x.wrapper_source)
    rejection = _side_rejection(x, x_side, RejectionStage.X_COMPILE, RejectionStage.X_RUN)
    if rejection is None:
        y_side = runner.run_side(y, direction.target_language, suite, y_wrapper)
        rejection = _side_rejection(
            x, y_side, RejectionStage.Y_COMPILE, RejectionStage.Y_RUN
        )
    if rejection is None:
        equal, diff = outputs_equal(x_side.transcript, y_side.transcript, tol)
        if not equal:
            rejection = Rejection(
                function_id=x.id,
                stage=RejectionStage.MISMATCH,
                detail=str(diff),
            )
    if rejection is not None:
        rejection.direction = direction
        rejection.candidate_index = candidate_index
        rejection.iteration = iteration
        return rejection
    return VerifiedTriplet(
        x=x,
        y=y,
        suite=suite,
        x_transcript=x_side.transcript,
        y_transcript=y_side.transcript,
        direction=direction,
        iteration=iteration,
        candidate_index=candidate_index,
        y_wrapper=y_wrapper,
    )


@dataclass
class CoVerifyResult:
    accepted: list[VerifiedTriplet] = field(default_factory=list)
    rejections: list[Rejection] = field(default_factory=list)
    surplus: list[VerifiedTriplet] = field(default_factory=list)
    vt_entries: list[tuple[int, bool]] = field(default_factory=list)

    @property
    def vt(self) -> float:
        return vt_metric(self.vt_entries) if self.vt_entries else 0.0


def co_verify_corpus(
    corpus: Sequence[FunctionUnit],
    translations: dict[str, Sequence[CandidateResult]],
    suites: dict[str, TestSuite],
    runner: TranscriptRunner,
    direction: Direction,
    iteration: int = 1,
    tol: NumericTolerance = DEFAULT_TOLERANCE,
    export_cap: Optional[int] = 1,
    y_wrappers: Optional[dict[tuple[str, int], str]] = None,
) -> CoVerifyResult:
    """Verify every sampled candidate of every corpus function.

    Each (function, candidate) pair yields exactly one verdict. Accepted
    triplets beyond the per-function export cap (default 1, first accepted
    wins) are kept separately so counts stay auditable. The source side runs
    once per function; its validity feeds the VT entries.
    """
    result = CoVerifyResult()
    y_wrappers = y_wrappers or {}
    for fn in sorted(corpus, key=lambda u: u.id):
        candidates = list(translations.get(fn.id, []))
        if not candidates:
            continue
        suite = suites.get(fn.id)
        if suite is None:
            result.vt_entries.append((0, False))
            for ci, _candidate in enumerate(candidates):
                result.rejections.append(
                    Rejection(
                        function_id=fn.id,
                        stage=RejectionStage.EXTRACTION,
                        detail="test suite unavailable",
                        direction=direction,
                        candidate_index=ci,
                        iteration=iteration,
                    )
                )
            continue

        x_side = runner.run_side(fn.source, fn.language, suite, fn.wrapper_source)
        result.vt_entries.append(
            (
                len(suite.cases),
                x_side.usable and x_side.transcript.case_count == len(suite.cases),
            )
        )

        accepted_for_fn = 0
        for ci, candidate in enumerate(candidates):
            if not candidate.ok:
                result.rejections.append(
                    Rejection(
                        function_id=fn.id,
                        stage=RejectionStage.EXTRACTION,
                        detail=candidate.error or "tag extraction failed",
                        direction=direction,
                        candidate_index=ci,
                        iteration=iteration,
                    )
                )
                continue
            verdict = verify_triplet(
                fn,
                candidate.text,
                suite,
                runner,
                direction,
                iteration=iteration,
                tol=tol,
                y_wrapper=y_wrappers.get((fn.id, ci)),
                candidate_index=ci,
                x_side=x_side,
            )
            if isinstance(verdict, Rejection):
                result.rejections.append(verdict)
            elif export_cap is None or accepted_for_fn < export_cap:
                result.accepted.append(verdict)
                accepted_for_fn += 1
            else:
                result.surplus.append(verdict)
    return result


def vt_metric(per_function_validity: Sequence[tuple[int, bool]]) -> float:
    """Fraction of functions whose whole suite ran cleanly on the source side."""
    if not per_function_validity:
        raise ValueError("vt_metric requires at least one function")
    return sum(1.0 for _, all_valid in per_function_validity if all_valid) / len(
        per_function_validity
    )


# -- serialization -----------------------------------------------------------


def transcript_to_record(transcript: CanonicalOutput) -> dict:
    return {
        "complete": transcript.complete,
        "cases": [
            {
                "index": c.case_index,
                "return": c.return_token,
                "args": [list(s) for s in c.argument_snapshots],
            }
            for c in transcript.cases
        ],
    }


def transcript_from_record(record: dict) -> CanonicalOutput:
    return CanonicalOutput(
        cases=tuple(
            CaseRecord(
                case_index=c["index"],
                return_token=c["return"],
                argument_snapshots=tuple(tuple(s) for s in c["args"]),
            )
            for c in record["cases"]
        ),
        complete=record["complete"],
    )


def triplet_to_record(triplet: VerifiedTriplet) -> dict:
    record = {
        "x_id": triplet.x.id,
        "x_source": triplet.x.source,
        "y_source": triplet.y,
        "suite": [
            {"index": c.index, "snippet": c.snippet} for c in triplet.suite.cases
        ],
        "x_transcript": transcript_to_record(triplet.x_transcript),
        "y_transcript": transcript_to_record(triplet.y_transcript),
        "direction": triplet.direction.value,
        "iteration": triplet.iteration,
        "candidate_index": triplet.candidate_index,
    }
    if triplet.y_wrapper:
        record["y_wrapper"] = triplet.y_wrapper
    return record


def rejection_to_record(rejection: Rejection) -> dict:
    return {
        "function_id": rejection.function_id,
        "stage": rejection.stage.value,
        "detail": rejection.detail,
        "error_type": rejection.error_type.value if rejection.error_type else None,
        "direction": rejection.direction.value if rejection.direction else None,
        "candidate_index": rejection.candidate_index,
        "iteration": rejection.iteration,
    }
