"""Command-line interface.

Exit codes: 0 success, 1 task failure, 2 configuration/usage error.
`--mock` swaps in the canned endpoint and canned transcripts named in the
config's [mock] table, so every subcommand can run without a live model or
compiler.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from coverify import corpus as corpus_mod
from coverify.config import PipelineConfig, load_config
from coverify.corpus import Direction, Language
from coverify.errors import ConfigurationError, CoverifyError
from coverify.executor import default_compile_spec
from coverify.gateway import (
    CandidateResult,
    HttpTransport,
    MockTransport,
    ModelGateway,
    TestCase,
    TestSuite,
    load_templates,
)
from coverify.harness import Backend
from coverify.pipeline import (
    IterationReport,
    converged,
    evaluate,
    export_training_data,
    load_eval_pairs,
    render_html_report,
    run_iteration,
)
from coverify.verify import (
    CannedTranscriptRunner,
    ToolchainRunner,
    co_verify_corpus,
    rejection_to_record,
    triplet_to_record,
)

log = logging.getLogger("coverify")


def _build_gateway(config: PipelineConfig, mock: bool) -> ModelGateway:
    templates = load_templates(config.templates_dir)
    if mock:
        if not getattr(config, "mock_responses", None):
            raise ConfigurationError("--mock needs [mock] responses = <file> in config")
        transport = MockTransport.load(config.mock_responses)
    else:
        transport = HttpTransport()
    return ModelGateway(transport, templates)


def _build_runner(config: PipelineConfig, args, mock: bool):
    if mock:
        if not getattr(config, "mock_transcripts", None):
            raise ConfigurationError("--mock needs [mock] transcripts = <file> in config")
        return CannedTranscriptRunner.load(config.mock_transcripts)
    backends = dict(config.backends)
    override = getattr(args, "backend", None)
    if override:
        backend = Backend(override)
        include_dirs = ()
        if Language.CUDA in backends:
            include_dirs = backends[Language.CUDA].include_dirs
        backends[Language.CUDA] = default_compile_spec(backend, include_dirs)
        backends.setdefault(
            Language.C, default_compile_spec(Backend.NATIVE_C, include_dirs)
        )
    if not backends:
        raise ConfigurationError("no [backends] configured and no --backend override")
    return ToolchainRunner(
        backends,
        run_timeout=config.run_timeout,
        scratch_root=config.scratch_root,
        keep_scratch=bool(getattr(args, "keep_scratch", False)) or config.keep_scratch,
    )


def _load_config(args) -> PipelineConfig:
    if not getattr(args, "config", None):
        raise ConfigurationError("this subcommand requires --config <file>")
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "keep_scratch", False):
        config.keep_scratch = True
    if getattr(args, "strict_nan", False):
        from dataclasses import replace

        config.tolerance = replace(config.tolerance, nan_equal=False)
    return config


def _read_corpus(path: str) -> list:
    result = corpus_mod.ingest(Path(path))
    if result.rejects:
        log.warning("%d corpus records rejected during load", len(result.rejects))
    return result.units


def cmd_ingest(args) -> int:
    language = Language(args.language) if args.language else None
    result = corpus_mod.ingest(Path(args.input), language)
    corpus_mod.write_corpus(result.units, Path(args.output))
    if args.rejects:
        with open(args.rejects, "w", encoding="utf-8") as fh:
            for reject in result.rejects:
                fh.write(json.dumps(vars(reject), sort_keys=True) + "\n")
    print(f"ingested {len(result.units)} units, {len(result.rejects)} rejects")
    return 0


def cmd_gen_wrappers(args) -> int:
    config = _load_config(args)
    gateway = _build_gateway(config, args.mock)
    if config.translator is None:
        raise ConfigurationError("gen-wrappers needs an [endpoints.translator] table")
    units = _read_corpus(args.input)
    generated = failures = 0
    out = []
    for unit in units:
        if unit.language is Language.CUDA and not unit.wrapper_source:
            try:
                unit = unit.with_wrapper(
                    gateway.request_cuda_wrapper(unit, config.translator)
                )
                generated += 1
            except CoverifyError as exc:
                log.warning("wrapper failed for %s: %s", unit.name, exc)
                failures += 1
        out.append(unit)
    corpus_mod.write_corpus(out, Path(args.output))
    print(f"wrappers generated: {generated}, failures: {failures}")
    return 0 if failures == 0 else 1


def cmd_translate(args) -> int:
    config = _load_config(args)
    gateway = _build_gateway(config, args.mock)
    if config.translator is None:
        raise ConfigurationError("translate needs an [endpoints.translator] table")
    direction = Direction(args.direction)
    units = [
        u for u in _read_corpus(args.input) if u.language is direction.source_language
    ]
    with open(args.output, "w", encoding="utf-8") as fh:
        for unit in sorted(units, key=lambda u: u.id):
            candidates = gateway.request_translation(
                unit, direction, args.n_samples, config.translator
            )
            for candidate in candidates:
                fh.write(
                    json.dumps(
                        {
                            "function_id": unit.id,
                            "direction": direction.value,
                            "sample_index": candidate.sample_index,
                            "text": candidate.text,
                            "error": candidate.error,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    print(f"translated {len(units)} functions x {args.n_samples} samples")
    return 0


def cmd_gen_tests(args) -> int:
    config = _load_config(args)
    gateway = _build_gateway(config, args.mock)
    if config.tester is None:
        raise ConfigurationError("gen-tests needs an [endpoints.tester] table")
    units = _read_corpus(args.input)
    n_tests = args.n_tests or config.n_tests
    failures = 0
    with open(args.output, "w", encoding="utf-8") as fh:
        for unit in sorted(units, key=lambda u: u.id):
            try:
                suite = gateway.request_tests(unit, n_tests, config.tester)
                record = {
                    "function_id": unit.id,
                    "cases": [{"index": c.index, "snippet": c.snippet} for c in suite.cases],
                }
            except CoverifyError as exc:
                record = {"function_id": unit.id, "error": str(exc)}
                failures += 1
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"suites for {len(units)} functions, {failures} failures")
    return 0 if failures == 0 else 1


def _load_candidates(path: str) -> tuple[dict, dict]:
    """Candidates keyed by function id, plus any per-candidate CUDA wrappers."""
    translations: dict[str, list[CandidateResult]] = {}
    wrappers: dict[tuple[str, int], str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            fn_id = record["function_id"]
            queue = translations.setdefault(fn_id, [])
            if record.get("wrapper"):
                wrappers[(fn_id, len(queue))] = record["wrapper"]
            queue.append(
                CandidateResult(
                    sample_index=record.get("sample_index", 0),
                    text=record.get("text"),
                    error=record.get("error"),
                )
            )
    return translations, wrappers


def _load_suites(path: str) -> dict:
    suites: dict[str, TestSuite] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            if "error" in record:
                continue
            suites[record["function_id"]] = TestSuite(
                function_id=record["function_id"],
                cases=tuple(
                    TestCase(c["index"], c["snippet"]) for c in record["cases"]
                ),
            )
    return suites


def cmd_verify(args) -> int:
    config = _load_config(args)
    runner = _build_runner(config, args, args.mock)
    units = _read_corpus(args.input)
    direction = Direction(args.direction)
    translations, y_wrappers = _load_candidates(args.candidates)
    result = co_verify_corpus(
        units,
        translations,
        _load_suites(args.suites),
        runner,
        direction,
        tol=config.tolerance,
        export_cap=config.export_cap,
        y_wrappers=y_wrappers,
    )
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "triplets.jsonl", "w", encoding="utf-8") as fh:
        for triplet in result.accepted:
            fh.write(json.dumps(triplet_to_record(triplet), sort_keys=True) + "\n")
    with open(out_dir / "rejections.jsonl", "w", encoding="utf-8") as fh:
        for rejection in result.rejections:
            fh.write(json.dumps(rejection_to_record(rejection), sort_keys=True) + "\n")
    print(
        f"accepted {len(result.accepted)}, rejected {len(result.rejections)}, "
        f"VT {result.vt:.4f}"
    )
    return 0


def cmd_iterate(args) -> int:
    config = _load_config(args)
    gateway = _build_gateway(config, args.mock)
    runner = _build_runner(config, args, args.mock)
    units = _read_corpus(args.corpus)
    history = []
    if args.history:
        for line in Path(args.history).read_text(encoding="utf-8").splitlines():
            if line.strip():
                record = json.loads(line)
                report = IterationReport(iteration=record["iteration"])
                report.accepted_per_language = record.get("accepted_per_language", {})
                report.endpoints = record.get("endpoints", {})
                history.append(report)
    result = run_iteration(
        units,
        config,
        args.iteration,
        gateway,
        runner,
        history=history,
    )
    report = result.report
    print(
        f"iteration {report.iteration}: accepted {report.total_accepted} "
        f"(per language {report.accepted_per_language}), VT {report.vt:.4f}, "
        f"converged {report.converged}"
    )
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    gateway = _build_gateway(config, args.mock)
    runner = _build_runner(config, args, args.mock)
    if config.translator is None:
        raise ConfigurationError("evaluate needs an [endpoints.translator] table")
    pairs = load_eval_pairs(args.test_set)
    k_values = tuple(int(k) for k in args.k.split(","))
    if args.n_samples < max(k_values):
        raise ConfigurationError(
            f"--n-samples {args.n_samples} is below the largest k {max(k_values)}"
        )
    report = evaluate(
        pairs,
        gateway,
        config.translator,
        runner,
        k_values=k_values,
        n_samples=args.n_samples,
        tol=config.tolerance,
        tester_endpoint=config.tester if args.vt else None,
        n_tests=config.n_tests,
    )
    payload = json.dumps(report.to_json(), indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(payload + "\n", encoding="utf-8")
    print(payload)
    print("display:", json.dumps(report.display(), sort_keys=True))
    return 0


def cmd_report(args) -> int:
    record = json.loads(Path(args.input).read_text(encoding="utf-8"))
    report = IterationReport(iteration=record["iteration"])
    report.accepted_per_language = record.get("accepted_per_language", {})
    report.rejection_histogram = record.get("rejection_histogram", {})
    report.vt = record.get("vt", 0.0)
    report.elapsed = record.get("elapsed", 0.0)
    report.converged = record.get("converged", False)
    from coverify.pipeline import DirectionStats

    report.per_direction = {
        k: DirectionStats(**v) for k, v in record.get("per_direction", {}).items()
    }
    Path(args.output).write_text(render_html_report(report), encoding="utf-8")
    print(f"wrote {args.output}")
    return 0


def cmd_export_training(args) -> int:
    config = _load_config(args)
    gateway = _build_gateway(config, mock=bool(getattr(args, "mock", False)))
    from coverify.pipeline import _read_jsonl, _triplet_from_record

    records = _read_jsonl(Path(args.input))
    triplets = [_triplet_from_record(r, {}) for r in records]
    paths = export_training_data(
        triplets,
        Path(args.output_dir),
        gateway=gateway,
        iteration=args.iteration,
        split_by_direction=args.split_by_direction or config.split_by_direction,
    )
    print(f"wrote {len(paths)} training files for {len(triplets)} triplets")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coverify",
        description="co-verification harness and data pipeline for C/CUDA translation",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="TOML config file")
        p.add_argument("--mock", action="store_true", help="use canned endpoint/transcripts")
        p.add_argument("--backend", choices=[b.value for b in Backend])
        p.add_argument("--keep-scratch", action="store_true")
        p.add_argument("--seed", type=int)
        p.add_argument(
            "--strict-nan", action="store_true", help="NaN never compares equal"
        )

    p = sub.add_parser("ingest", help="load and deduplicate a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--language", choices=["c", "cuda"])
    p.add_argument("--output", required=True)
    p.add_argument("--rejects")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-wrappers", help="generate kernel wrappers for CUDA units")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen_wrappers)

    p = sub.add_parser("translate", help="sample translations for a direction")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--direction", required=True, choices=[d.value for d in Direction])
    p.add_argument("--n-samples", type=int, default=1)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("gen-tests", help="sample a test suite per function")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--n-tests", type=int)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen_tests)

    p = sub.add_parser("verify", help="co-verify candidates against suites")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--suites", required=True)
    p.add_argument("--direction", required=True, choices=[d.value for d in Direction])
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("iterate", help="run one full co-verify iteration")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--iteration", type=int, default=1)
    p.add_argument("--history", help="JSONL of previous iteration reports")
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("evaluate", help="evaluate an endpoint on a paired test set")
    common(p)
    p.add_argument("--test-set", required=True)
    p.add_argument("--k", default="1")
    p.add_argument("--n-samples", type=int, default=1)
    p.add_argument("--vt", action="store_true", help="also measure tester VT")
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render an iteration report to HTML")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-training", help="re-export training files from triplets")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--iteration", type=int, default=1)
    p.add_argument("--split-by-direction", action="store_true")
    p.set_defaults(func=cmd_export_training)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CoverifyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
