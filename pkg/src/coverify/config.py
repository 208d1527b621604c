"""TOML config loading for endpoints, backends, tolerances, convergence."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from coverify.corpus import Direction, Language
from coverify.errors import ConfigurationError
from coverify.executor import CompileSpec, default_compile_spec
from coverify.gateway import ModelEndpoint, PromptMode
from coverify.harness import Backend
from coverify.verify import NumericTolerance


@dataclass(frozen=True)
class ConvergencePolicy:
    min_growth_fraction: float = 0.05
    max_iterations: int = 4

    def __post_init__(self):
        if not (0 <= self.min_growth_fraction < 1):
            raise ConfigurationError("min_growth_fraction must be in [0, 1)")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")


@dataclass
class PipelineConfig:
    directions: tuple[Direction, ...] = (Direction.C_TO_CUDA, Direction.CUDA_TO_C)
    n_translation_samples: int = 1
    n_tests: int = 5
    seed: int = 0
    work_dir: Path = Path("runs")
    translator: Optional[ModelEndpoint] = None
    tester: Optional[ModelEndpoint] = None
    backends: dict = field(default_factory=dict)
    convergence: ConvergencePolicy = field(default_factory=ConvergencePolicy)
    tolerance: NumericTolerance = field(default_factory=NumericTolerance)
    run_timeout: float = 60.0
    keep_scratch: bool = False
    scratch_root: Optional[Path] = None
    export_cap: Optional[int] = 1
    split_by_direction: bool = False
    templates_dir: Optional[Path] = None
    mock_responses: Optional[Path] = None
    mock_transcripts: Optional[Path] = None

    def __post_init__(self):
        if self.n_tests < 1:
            raise ConfigurationError("n_tests must be >= 1")
        if self.n_translation_samples < 1:
            raise ConfigurationError("n_translation_samples must be >= 1")


def _endpoint_from_table(table: dict) -> ModelEndpoint:
    known = {
        "base_url", "model_name", "temperature", "top_p", "top_k", "max_tokens",
        "request_timeout", "max_retries", "concurrency_limit", "api_key_env",
        "prompt_mode",
    }
    unknown = set(table) - known
    if unknown:
        raise ConfigurationError(f"unknown endpoint keys: {sorted(unknown)}")
    kwargs = dict(table)
    if "prompt_mode" in kwargs:
        kwargs["prompt_mode"] = PromptMode(kwargs["prompt_mode"])
    try:
        return ModelEndpoint(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad endpoint table: {exc}") from exc


def _compile_spec_from_table(table: dict) -> CompileSpec:
    try:
        backend = Backend(table["backend"])
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"backend table needs a valid 'backend': {exc}") from exc
    if "compiler" not in table:
        return default_compile_spec(backend, include_dirs=table.get("include_dirs", ()))
    return CompileSpec(
        backend=backend,
        compiler_path=table["compiler"],
        flags=tuple(table.get("flags", ("-std=c++17", "-O0"))),
        include_dirs=tuple(table.get("include_dirs", ())),
        compile_timeout=float(table.get("compile_timeout", 120.0)),
    )


def load_config(path: Path | str) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"malformed config {path}: {exc}") from exc

    pipeline = data.get("pipeline", {})
    config = PipelineConfig(
        directions=tuple(
            Direction(d) for d in pipeline.get("directions", ["c_to_cuda", "cuda_to_c"])
        ),
        n_translation_samples=int(pipeline.get("n_translation_samples", 1)),
        n_tests=int(pipeline.get("n_tests", 5)),
        seed=int(pipeline.get("seed", 0)),
        work_dir=Path(pipeline.get("work_dir", "runs")),
        export_cap=pipeline.get("export_cap", 1),
        split_by_direction=bool(pipeline.get("split_by_direction", False)),
    )
    if "templates_dir" in pipeline:
        config.templates_dir = Path(pipeline["templates_dir"])

    endpoints = data.get("endpoints", {})
    if "translator" in endpoints:
        config.translator = _endpoint_from_table(endpoints["translator"])
    if "tester" in endpoints:
        config.tester = _endpoint_from_table(endpoints["tester"])

    for lang_key, table in data.get("backends", {}).items():
        config.backends[Language(lang_key)] = _compile_spec_from_table(table)

    if "convergence" in data:
        table = data["convergence"]
        config.convergence = ConvergencePolicy(
            min_growth_fraction=float(table.get("min_growth_fraction", 0.05)),
            max_iterations=int(table.get("max_iterations", 4)),
        )

    if "tolerance" in data:
        table = data["tolerance"]
        config.tolerance = NumericTolerance(
            abs_tol=float(table.get("abs_tol", 1e-6)),
            rel_tol=float(table.get("rel_tol", 1e-4)),
            nan_equal=not bool(table.get("strict_nan", False)),
        )

    run_table = data.get("run", {})
    config.run_timeout = float(run_table.get("timeout", 60.0))
    config.keep_scratch = bool(run_table.get("keep_scratch", False))
    if run_table.get("scratch_root"):
        config.scratch_root = Path(run_table["scratch_root"])

    mock_table = data.get("mock", {})
    base = path.parent
    if mock_table.get("responses"):
        config.mock_responses = base / mock_table["responses"]
    if mock_table.get("transcripts"):
        config.mock_transcripts = base / mock_table["transcripts"]
    return config
