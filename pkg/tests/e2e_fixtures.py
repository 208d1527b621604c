"""Twenty-function mock pipeline fixtures.

Outcome design (hand-verified; the acceptance test asserts exact membership):

  f01..f08  correct translation + valid suite          -> accepted (8)
  f09, f10  correct translation, suite crashes source  -> x_run rejection
  f11       tester returns 3 markers instead of 5      -> extraction rejection
  f12       source transcript truncated mid-run        -> x_run rejection
  f13, f14  candidate fails to compile (undefined T)   -> y_compile, Type5
  f15       candidate fails to compile (too few args)  -> y_compile, Type2
  f16       candidate crashes at case 2                -> y_run rejection
  f17       candidate loops forever (timeout)          -> y_run rejection
  f18, f19  candidate prints a wrong value             -> mismatch rejection
  f20       response carries no code tags              -> extraction rejection

So: 12 correct translations (f01..f12), 16 valid suites (f01..f08, f13..f20),
intersection = f01..f08, |S_1| = 8, rejections = 12, VT = 16/20.
"""

from __future__ import annotations

import json
from pathlib import Path

from coverify.corpus import Direction, FunctionUnit, Language
from coverify.gateway import (
    MockTransport,
    ModelEndpoint,
    ModelGateway,
    PromptMode,
)
from coverify.verify import CannedTranscriptRunner

N_FUNCTIONS = 20
ACCEPTED_NAMES = frozenset(f"toy_fn_{i:02d}" for i in range(1, 9))

TRANSLATOR = ModelEndpoint(
    base_url="http://mock.local/v1",
    model_name="toy-translator-r0",
    prompt_mode=PromptMode.TASK_PROMPT,
)
TESTER = ModelEndpoint(
    base_url="http://mock.local/v1",
    model_name="toy-tester-r0",
    prompt_mode=PromptMode.TASK_PROMPT,
)


def c_source(i: int) -> str:
    return (
        f"void toy_fn_{i:02d}(int *data, int n) {{\n"
        f"    for (int idx = 0; idx < n; idx++) {{\n"
        f"        data[idx] += {i};\n"
        f"    }}\n"
        f"}}\n"
    )


def cuda_candidate(i: int) -> str:
    if i in (13, 14):  # undefined template type
        return (
            f"__global__ void toy_fn_{i:02d}(T *data, int n) {{\n"
            f"    int idx = blockIdx.x * blockDim.x + threadIdx.x;\n"
            f"    if (idx < n) data[idx] += {i};\n"
            f"}}\n"
        )
    return (
        f"__global__ void toy_fn_{i:02d}(int *data, int n) {{\n"
        f"    int idx = blockIdx.x * blockDim.x + threadIdx.x;\n"
        f"    if (idx < n) data[idx] += {i};\n"
        f"}}\n"
    )


def suite_response(i: int, n_markers: int = 5) -> str:
    cases = []
    for k in range(1, n_markers + 1):
        cases.append(
            f"//Input case {k}:\n"
            f"int data{k}[] = {{{k}, 10}};\n"
            f"wrapper(toy_fn_{i:02d}, data{k}, 2);"
        )
    return "\n\n".join(cases) + "\n"


def record_line(first: int, second: int) -> str:
    return (
        f"Return value: void Arguments after function call: ([ {first}, {second} ], 2)"
    )


def transcript(i: int, n_cases: int = 5, wrong_case: int = 0) -> str:
    lines = []
    for k in range(1, n_cases + 1):
        first = k + i + (1 if k == wrong_case else 0)
        lines.append(f"=== CASE {k} ===")
        lines.append(record_line(first, 10 + i))
        lines.append(f"=== END {k} ===")
    return "\n".join(lines) + "\n"


def build_corpus() -> list[FunctionUnit]:
    return [
        FunctionUnit.from_source(c_source(i), Language.C, provenance=f"toy:{i}")
        for i in range(1, N_FUNCTIONS + 1)
    ]


def build_transport() -> MockTransport:
    transport = MockTransport()
    gateway = ModelGateway(transport)
    for i, fn in enumerate(build_corpus(), start=1):
        translate_messages = gateway.translation_messages(
            fn, Direction.C_TO_CUDA, TRANSLATOR
        )
        if i == 20:
            transport.register(translate_messages, "I cannot produce code for this.")
        else:
            transport.register(
                translate_messages, f"[CUDA]\n{cuda_candidate(i)}[/CUDA]"
            )
        tests_messages = gateway.tests_messages(fn, 5, TESTER)
        transport.register(
            tests_messages, suite_response(i, n_markers=3 if i == 11 else 5)
        )
    return transport


def build_runner() -> CannedTranscriptRunner:
    runner = CannedTranscriptRunner()
    for i in range(1, N_FUNCTIONS + 1):
        source = c_source(i)
        candidate = cuda_candidate(i)
        if i in (9, 10):
            runner.register(
                source,
                stdout=f"=== CASE 1 ===\n{record_line(1 + i, 10 + i)}\n=== END 1 ===\n"
                "=== CASE 2 ===\n",
                status="runtime_error",
                stderr="Segmentation fault",
            )
        elif i == 12:
            runner.register(
                source,
                stdout=transcript(i, n_cases=2) + "=== CASE 3 ===\n",
                status="runtime_error",
                stderr="*** stack smashing detected ***: terminated",
            )
        else:
            runner.register(source, stdout=transcript(i))

        if i in (13, 14):
            runner.register(
                candidate,
                compile_ok=False,
                compile_stderr='error: identifier "T" is undefined',
            )
        elif i == 15:
            runner.register(
                candidate,
                compile_ok=False,
                compile_stderr="error: too few arguments in function call",
            )
        elif i == 16:
            runner.register(
                candidate,
                stdout=f"=== CASE 1 ===\n{record_line(1 + i, 10 + i)}\n=== END 1 ===\n",
                status="runtime_error",
                stderr="Segmentation fault",
            )
        elif i == 17:
            runner.register(candidate, stdout="", status="timeout")
        elif i in (18, 19):
            runner.register(candidate, stdout=transcript(i, wrong_case=3))
        else:
            runner.register(candidate, stdout=transcript(i))
    return runner


CONFIG_TEMPLATE = """\
[pipeline]
directions = ["c_to_cuda"]
n_translation_samples = 1
n_tests = 5
work_dir = "{work_dir}"

[convergence]
min_growth_fraction = 0.05
max_iterations = 4

[endpoints.translator]
base_url = "http://mock.local/v1"
model_name = "toy-translator-r0"
prompt_mode = "task_prompt"

[endpoints.tester]
base_url = "http://mock.local/v1"
model_name = "toy-tester-r0"
prompt_mode = "task_prompt"

[mock]
responses = "mock_responses.json"
transcripts = "mock_transcripts.json"
"""


def write_fixture_files(directory: Path) -> dict[str, Path]:
    """Materialize corpus, canned responses/transcripts, and a config file."""
    from coverify.corpus import write_corpus

    directory.mkdir(parents=True, exist_ok=True)
    corpus_path = directory / "corpus.jsonl"
    write_corpus(build_corpus(), corpus_path)
    responses_path = directory / "mock_responses.json"
    build_transport().save(responses_path)
    transcripts_path = directory / "mock_transcripts.json"
    build_runner().save(transcripts_path)
    config_path = directory / "config.toml"
    config_path.write_text(
        CONFIG_TEMPLATE.format(work_dir=str(directory / "runs")), encoding="utf-8"
    )
    return {
        "corpus": corpus_path,
        "responses": responses_path,
        "transcripts": transcripts_path,
        "config": config_path,
    }
