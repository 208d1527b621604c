"""Compile-and-run service: scratch isolation, wall-clock timeouts, limits.

Each job gets a fresh scratch directory; the compiled program runs under a
wall-clock timeout (default 60 s) with address-space and output-size caps.
Timeouts keep their own status here so nothing is lost in logs; metric
aggregation folds them into runtime errors.

Compiler/runtime diagnostics are classified into an eleven-type taxonomy via
a fixed-order pattern table (first match wins). The table ships with rules
for the mainstream host and device toolchains' phrasings and can be extended
through a user rules file.
"""

from __future__ import annotations

import json
import os
import re
import resource
import shutil
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, TypeVar

from coverify.errors import ToolchainError
from coverify.harness import Backend, HarnessUnit

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_RUN_TIMEOUT = 60.0
DEFAULT_MEMORY_LIMIT = 4 * 1024**3
DEFAULT_OUTPUT_LIMIT = 16 * 1024**2


class Phase(str, Enum):
    COMPILE = "compile"
    RUN = "run"


class Status(str, Enum):
    OK = "ok"
    COMPILE_ERROR = "compile_error"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"


class ErrorType(str, Enum):
    TYPE1 = "Type1"
    TYPE2 = "Type2"
    TYPE3 = "Type3"
    TYPE4 = "Type4"
    TYPE5 = "Type5"
    TYPE6 = "Type6"
    TYPE7 = "Type7"
    TYPE8 = "Type8"
    TYPE9 = "Type9"
    TYPE10 = "Type10"
    TYPE11 = "Type11"
    UNKNOWN = "unknown"


ERROR_TYPE_DESCRIPTIONS = {
    ErrorType.TYPE1: "function overload resolution",
    ErrorType.TYPE2: "insufficient arguments",
    ErrorType.TYPE3: "argument type mismatch",
    ErrorType.TYPE4: "syntax error: missing symbol",
    ErrorType.TYPE5: "undefined identifier",
    ErrorType.TYPE6: "preprocessor directive error",
    ErrorType.TYPE7: "unrecognized token",
    ErrorType.TYPE8: "duplicate declaration or standard library conflict",
    ErrorType.TYPE9: "logical sequence, block index, or shared memory error",
    ErrorType.TYPE10: "control flow error: variable initialization bypass",
    ErrorType.TYPE11: "kernel call configuration on a host function",
}


@dataclass(frozen=True)
class ClassifierRule:
    error_type: ErrorType
    pattern: re.Pattern


def _compile_rules(entries: Sequence[dict]) -> tuple[ClassifierRule, ...]:
    rules = []
    for entry in entries:
        flags = re.IGNORECASE if "i" in entry.get("flags", "") else 0
        rules.append(
            ClassifierRule(ErrorType(entry["type"]), re.compile(entry["pattern"], flags))
        )
    return tuple(rules)


def load_rules(path: Optional[Path | str] = None) -> tuple[ClassifierRule, ...]:
    """Default rule table, optionally extended by a user rules file.

    User rules are prepended so they take precedence over the defaults.
    """
    packaged = importlib_resources.files("coverify").joinpath("rules/error_rules.json")
    default_entries = json.loads(packaged.read_text(encoding="utf-8"))
    entries = []
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            entries.extend(json.load(fh))
    entries.extend(default_entries)
    return _compile_rules(entries)


_DEFAULT_RULES = load_rules()

_CREDENTIAL_MARKERS = ("KEY", "TOKEN", "SECRET", "PASSWORD", "CREDENTIAL")


def _sanitized_environment() -> dict[str, str]:
    """Child-process environment with credential-looking variables removed."""
    return {
        k: v
        for k, v in os.environ.items()
        if not any(marker in k.upper() for marker in _CREDENTIAL_MARKERS)
    }


def classify_error(
    diagnostics: str,
    phase: Phase = Phase.COMPILE,
    rules: Optional[Sequence[ClassifierRule]] = None,
) -> ErrorType:
    """First matching rule wins; unmatched diagnostics are 'unknown'."""
    del phase  # same table for both phases today; kept for the call contract
    for rule in rules if rules is not None else _DEFAULT_RULES:
        if rule.pattern.search(diagnostics):
            return rule.error_type
    return ErrorType.UNKNOWN


@dataclass(frozen=True)
class CompileSpec:
    backend: Backend
    compiler_path: str
    flags: tuple[str, ...] = ()
    include_dirs: tuple[str, ...] = ()
    compile_timeout: float = 120.0


def default_compile_spec(
    backend: Backend, include_dirs: Sequence[str] = ()
) -> CompileSpec:
    if backend is Backend.NVCC:
        compiler = shutil.which("nvcc")
        flags: tuple[str, ...] = ("-std=c++17",)
    else:
        compiler = shutil.which("g++") or shutil.which("clang++")
        flags = ("-std=c++17", "-O0")
    if compiler is None:
        raise ToolchainError(f"no compiler found for backend {backend.value}")
    return CompileSpec(
        backend=backend,
        compiler_path=compiler,
        flags=flags,
        include_dirs=tuple(include_dirs),
    )


@dataclass(frozen=True)
class ExecutionResult:
    phase: Phase
    status: Status
    stdout: str = ""
    stderr: str = ""
    exit_code: Optional[int] = None
    duration: float = 0.0
    error_type: Optional[ErrorType] = None

    def __post_init__(self):
        if self.status is Status.OK and self.error_type is not None:
            raise ValueError("ok results carry no error type")

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    @property
    def counts_as_runtime_error(self) -> bool:
        # Metric aggregation folds timeouts into runtime errors.
        return self.status in (Status.RUNTIME_ERROR, Status.TIMEOUT)


@dataclass
class ExecutionOutcome:
    compile_result: ExecutionResult
    run_result: Optional[ExecutionResult] = None

    @property
    def ok(self) -> bool:
        return self.compile_result.ok and self.run_result is not None and self.run_result.ok

    @property
    def failing_result(self) -> Optional[ExecutionResult]:
        if not self.compile_result.ok:
            return self.compile_result
        if self.run_result is not None and not self.run_result.ok:
            return self.run_result
        return None


def compile_unit(
    unit: HarnessUnit,
    spec: CompileSpec,
    scratch_dir: Path,
    rules: Optional[Sequence[ClassifierRule]] = None,
):
    """Compile a harness unit; returns the artifact Path or a failure result."""
    compiler = Path(spec.compiler_path)
    if shutil.which(str(compiler)) is None:
        raise ToolchainError(f"compiler not found: {spec.compiler_path}")

    source_path = scratch_dir / unit.file_name
    source_path.write_text(unit.unit_source, encoding="utf-8")
    artifact = scratch_dir / "harness.bin"

    command = [str(compiler), *spec.flags]
    for inc in spec.include_dirs:
        command.extend(["-I", str(inc)])
    command.extend([str(source_path), "-o", str(artifact)])

    start = time.monotonic()
    try:
        proc = subprocess.run(
            command,
            capture_output=True,
            text=True,
            timeout=spec.compile_timeout,
            cwd=scratch_dir,
            env=_sanitized_environment(),
        )
    except subprocess.TimeoutExpired as exc:
        return ExecutionResult(
            phase=Phase.COMPILE,
            status=Status.TIMEOUT,
            stdout=exc.stdout.decode("utf-8", "replace") if exc.stdout else "",
            stderr=exc.stderr.decode("utf-8", "replace") if exc.stderr else "",
            duration=time.monotonic() - start,
            error_type=ErrorType.UNKNOWN,
        )
    duration = time.monotonic() - start
    if proc.returncode != 0:
        return ExecutionResult(
            phase=Phase.COMPILE,
            status=Status.COMPILE_ERROR,
            stdout=proc.stdout,
            stderr=proc.stderr,
            exit_code=proc.returncode,
            duration=duration,
            error_type=classify_error(proc.stderr, Phase.COMPILE, rules),
        )
    return artifact


def _run_limits(memory_limit: int, output_limit: int) -> Callable[[], None]:
    def apply() -> None:
        resource.setrlimit(resource.RLIMIT_AS, (memory_limit, memory_limit))
        resource.setrlimit(resource.RLIMIT_FSIZE, (output_limit, output_limit))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    return apply


def run_artifact(
    artifact: Path | str,
    timeout: float = DEFAULT_RUN_TIMEOUT,
    memory_limit: int = DEFAULT_MEMORY_LIMIT,
    output_limit: int = DEFAULT_OUTPUT_LIMIT,
    rules: Optional[Sequence[ClassifierRule]] = None,
) -> ExecutionResult:
    """Run a compiled harness under a wall-clock timeout.

    stdout/stderr stream into scratch files (bounded by RLIMIT_FSIZE), so the
    partial transcript survives crashes and timeouts.
    """
    artifact = Path(artifact)
    scratch = artifact.parent
    out_path = scratch / "stdout.txt"
    err_path = scratch / "stderr.txt"

    start = time.monotonic()
    with open(out_path, "wb") as out_fh, open(err_path, "wb") as err_fh:
        proc = subprocess.Popen(
            [str(artifact)],
            stdout=out_fh,
            stderr=err_fh,
            cwd=scratch,
            env=_sanitized_environment(),
            preexec_fn=_run_limits(memory_limit, output_limit),
        )
        timed_out = False
        try:
            proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
            proc.kill()
            proc.wait()
    duration = time.monotonic() - start

    stdout = out_path.read_text(encoding="utf-8", errors="replace")
    stderr = err_path.read_text(encoding="utf-8", errors="replace")

    if timed_out:
        return ExecutionResult(
            phase=Phase.RUN,
            status=Status.TIMEOUT,
            stdout=stdout,
            stderr=stderr,
            exit_code=None,
            duration=max(duration, timeout),
            error_type=ErrorType.UNKNOWN,
        )
    if proc.returncode != 0:
        return ExecutionResult(
            phase=Phase.RUN,
            status=Status.RUNTIME_ERROR,
            stdout=stdout,
            stderr=stderr,
            exit_code=proc.returncode,
            duration=duration,
            error_type=classify_error(stderr, Phase.RUN, rules),
        )
    return ExecutionResult(
        phase=Phase.RUN,
        status=Status.OK,
        stdout=stdout,
        stderr=stderr,
        exit_code=0,
        duration=duration,
    )


def execute_unit(
    unit: HarnessUnit,
    spec: CompileSpec,
    run_timeout: float = DEFAULT_RUN_TIMEOUT,
    scratch_root: Optional[Path | str] = None,
    keep_scratch: bool = False,
    rules: Optional[Sequence[ClassifierRule]] = None,
) -> ExecutionOutcome:
    """Compile and run one unit in a fresh scratch directory."""
    scratch = Path(tempfile.mkdtemp(prefix="coverify-", dir=scratch_root))
    try:
        compiled = compile_unit(unit, spec, scratch, rules)
        if isinstance(compiled, ExecutionResult):
            return ExecutionOutcome(compile_result=compiled)
        compile_ok = ExecutionResult(
            phase=Phase.COMPILE, status=Status.OK, exit_code=0
        )
        run_result = run_artifact(compiled, timeout=run_timeout, rules=rules)
        return ExecutionOutcome(compile_result=compile_ok, run_result=run_result)
    finally:
        if not keep_scratch:
            shutil.rmtree(scratch, ignore_errors=True)


def map_jobs(
    func: Callable[[T], R], items: Iterable[T], max_workers: int = 4
) -> list[R]:
    """Run jobs on a bounded pool; results come back in submission order."""
    items = list(items)
    if not items:
        return []
    workers = max(1, min(max_workers, len(items)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
