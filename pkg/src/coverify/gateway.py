"""Chat-completion gateway: translations, test suites, kernel wrappers.

Payloads come back inside tag blocks ([CUDA]..[/CUDA], [CODE]..[/CODE]) and
test suites are split on "//Input case n:" markers. Everything here is
transport-agnostic: HttpTransport speaks the de-facto chat-completions wire
shape, MockTransport replays canned responses keyed by a request hash so the
whole pipeline runs offline and deterministically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import requests

from coverify.corpus import Direction, FunctionUnit, Language, parse_signature
from coverify.errors import (
    ConfigurationError,
    ExtractionError,
    GatewayError,
    SignatureError,
    SuiteFormatError,
    WrapperMismatchError,
)

log = logging.getLogger(__name__)

Messages = list[dict]

_CASE_MARKER_RE = re.compile(r"//\s*Input case\s*(\d+)\s*:[^\n]*\n?")
_LANG_DISPLAY = {Language.C: "C", Language.CUDA: "CUDA"}


class PromptTask(str, Enum):
    TRANSLATE = "translate"
    GEN_TESTS = "gen_tests"
    GEN_WRAPPER = "gen_wrapper"


class PromptMode(str, Enum):
    TASK_PROMPT = "task_prompt"
    ONE_SHOT = "one_shot"


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_name: str
    temperature: float = 1.0
    top_p: float = 1.0
    top_k: Optional[int] = None
    max_tokens: int = 4096
    request_timeout: float = 120.0
    max_retries: int = 3
    concurrency_limit: int = 4
    api_key_env: str = ""
    prompt_mode: PromptMode = PromptMode.ONE_SHOT

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ConfigurationError("top_p must be in (0, 1]")
        if self.concurrency_limit < 1:
            raise ConfigurationError("concurrency_limit must be >= 1")


@dataclass(frozen=True)
class PromptTemplate:
    task: PromptTask
    mode: PromptMode
    body: str
    direction: Optional[Direction] = None

    def __post_init__(self):
        if self.task is PromptTask.TRANSLATE and self.mode is PromptMode.ONE_SHOT:
            if self.direction is None:
                raise ConfigurationError("translate templates require a direction")
        if self.task is PromptTask.GEN_TESTS and "{n_tests}" not in self.body:
            # Bare payload templates carry no instructions and are exempt.
            stripped = self.body.replace("{source_code}", "").strip()
            if stripped and "5" not in self.body:
                raise ConfigurationError(
                    "gen_tests template needs {n_tests} or a fixed count of 5"
                )

    def render(
        self,
        source_code: str = "",
        source_lang: str = "",
        target_lang: str = "",
        n_tests: int = 5,
    ) -> str:
        # Targeted replacement: code payloads routinely contain braces.
        out = self.body
        out = out.replace("{source_code}", source_code)
        out = out.replace("{source_lang}", source_lang)
        out = out.replace("{target_lang}", target_lang)
        out = out.replace("{n_tests}", str(n_tests))
        return out


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # domain class, not a pytest collectable

    index: int
    snippet: str

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("test case index must be >= 1")


@dataclass(frozen=True)
class TestSuite:
    __test__ = False  # domain class, not a pytest collectable

    function_id: str
    cases: tuple[TestCase, ...]

    def __post_init__(self):
        if len(self.cases) < 1:
            raise ValueError("test suite must contain at least one case")
        indices = tuple(c.index for c in self.cases)
        if indices != tuple(range(1, len(self.cases) + 1)):
            raise ValueError(f"case indices must be 1..n in order, got {indices}")


@dataclass(frozen=True)
class CandidateResult:
    """One sampled translation: extracted text, or an extraction failure."""

    sample_index: int
    text: Optional[str]
    error: Optional[str] = None
    raw: str = ""

    @property
    def ok(self) -> bool:
        return self.text is not None


def extract_tagged(text: str, open_tag: str, close_tag: str) -> str:
    """Content between the first open tag and the next close tag, trimmed."""
    start = text.find(open_tag)
    if start < 0:
        raise ExtractionError(f"open tag {open_tag!r} not found")
    start += len(open_tag)
    end = text.find(close_tag, start)
    if end < 0:
        raise ExtractionError(f"close tag {close_tag!r} not found after {open_tag!r}")
    if text.find(open_tag, end + len(close_tag)) >= 0:
        log.info("multiple %s blocks in response; using the first", open_tag)
    return text[start:end].strip()


def split_test_cases(raw: str, n_tests: int, function_id: str = "") -> TestSuite:
    """Split raw model output on "//Input case n:" markers.

    Markers are accepted in order of appearance and reindexed 1..n; a marker
    count different from n_tests raises SuiteFormatError carrying the text.
    """
    body = raw
    if "[INPUTS]" in body:
        try:
            body = extract_tagged(body, "[INPUTS]", "[/INPUTS]")
        except ExtractionError:
            body = body.split("[INPUTS]", 1)[1]
    matches = list(_CASE_MARKER_RE.finditer(body))
    if len(matches) != n_tests:
        raise SuiteFormatError(
            f"expected {n_tests} case markers, found {len(matches)}", raw_text=raw
        )
    cases = []
    for i, match in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(body)
        snippet = body[match.end() : end].strip()
        cases.append(TestCase(index=i + 1, snippet=snippet))
    return TestSuite(function_id=function_id, cases=tuple(cases))


def serialize_suite(suite: TestSuite) -> str:
    parts = []
    for case in suite.cases:
        parts.append(f"//Input case {case.index}:\n{case.snippet}")
    return "\n\n".join(parts) + "\n"


def request_key(messages: Messages) -> str:
    canonical = json.dumps(messages, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Transport(Protocol):
    def send(self, endpoint: ModelEndpoint, messages: Messages) -> str: ...


class HttpTransport:
    """POST {base_url}/chat/completions with bearer auth and bounded retries.

    Retries 429/5xx/connection errors with exponential backoff plus jitter;
    a per-endpoint semaphore caps in-flight requests.
    """

    def __init__(
        self,
        post: Callable = requests.post,
        backoff_base: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        self._post = post
        self._backoff_base = backoff_base
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._semaphores: dict[str, threading.Semaphore] = {}
        self._lock = threading.Lock()
        self.retry_count = 0

    def _semaphore(self, endpoint: ModelEndpoint) -> threading.Semaphore:
        with self._lock:
            if endpoint.base_url not in self._semaphores:
                self._semaphores[endpoint.base_url] = threading.Semaphore(
                    endpoint.concurrency_limit
                )
            return self._semaphores[endpoint.base_url]

    def send(self, endpoint: ModelEndpoint, messages: Messages) -> str:
        body = {
            "model": endpoint.model_name,
            "messages": messages,
            "temperature": endpoint.temperature,
            "top_p": endpoint.top_p,
            "max_tokens": endpoint.max_tokens,
        }
        if endpoint.top_k is not None:
            body["top_k"] = endpoint.top_k
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            token = os.environ.get(endpoint.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"

        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        last_error: Optional[str] = None
        with self._semaphore(endpoint):
            for attempt in range(endpoint.max_retries + 1):
                if attempt > 0:
                    delay = self._backoff_base * (2 ** (attempt - 1))
                    delay += self._rng.uniform(0, delay / 2)
                    self.retry_count += 1
                    log.warning(
                        "retrying %s (attempt %d/%d) after %s",
                        url, attempt, endpoint.max_retries, last_error,
                    )
                    self._sleep(delay)
                try:
                    response = self._post(
                        url, json=body, headers=headers, timeout=endpoint.request_timeout
                    )
                except requests.RequestException as exc:
                    last_error = f"connection error: {exc}"
                    continue
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                    continue
                if response.status_code != 200:
                    raise GatewayError(
                        f"endpoint returned HTTP {response.status_code}: {response.text[:200]}"
                    )
                payload = response.json()
                try:
                    return payload["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError) as exc:
                    raise GatewayError(f"malformed completion payload: {exc}") from exc
        raise GatewayError(
            f"endpoint unreachable after {endpoint.max_retries} retries ({last_error})"
        )


class MockTransport:
    """Canned responses keyed by request hash; deterministic across runs.

    Repeated identical requests walk the registered response list and stick
    on the last entry, so reruns of a pipeline consume the same sequence.
    """

    def __init__(self, responses: Optional[dict[str, list[str]]] = None):
        self._responses = {k: list(v) for k, v in (responses or {}).items()}
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()
        self.requests: list[Messages] = []

    def register(self, messages: Messages, response: str) -> None:
        self._responses.setdefault(request_key(messages), []).append(response)

    def send(self, endpoint: ModelEndpoint, messages: Messages) -> str:
        key = request_key(messages)
        with self._lock:
            self.requests.append(messages)
            if key not in self._responses:
                preview = messages[-1].get("content", "")[:120] if messages else ""
                raise GatewayError(f"no canned response for request {key[:12]} ({preview!r})")
            queue = self._responses[key]
            i = self._cursor.get(key, 0)
            self._cursor[key] = i + 1
            return queue[min(i, len(queue) - 1)]

    def save(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self._responses, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path: Path | str) -> "MockTransport":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))


def _default_template_dir() -> Path:
    return Path(str(resources.files("coverify").joinpath("templates")))


def load_templates(directory: Optional[Path | str] = None) -> dict[str, PromptTemplate]:
    """Load prompt templates; unset files fall back to the packaged defaults."""
    base = _default_template_dir()
    override = Path(directory) if directory else None

    def read(name: str) -> str:
        if override is not None and (override / name).exists():
            return (override / name).read_text(encoding="utf-8")
        packaged = base / name
        if not packaged.exists():
            raise ConfigurationError(f"missing prompt template {name}")
        return packaged.read_text(encoding="utf-8")

    return {
        "translate_system": PromptTemplate(
            PromptTask.TRANSLATE, PromptMode.TASK_PROMPT, read("translate_system.txt")
        ),
        "translate_task": PromptTemplate(
            PromptTask.TRANSLATE, PromptMode.TASK_PROMPT, read("translate_task.txt")
        ),
        "translate_oneshot_c_to_cuda": PromptTemplate(
            PromptTask.TRANSLATE,
            PromptMode.ONE_SHOT,
            read("translate_oneshot_c_to_cuda.txt"),
            direction=Direction.C_TO_CUDA,
        ),
        "translate_oneshot_cuda_to_c": PromptTemplate(
            PromptTask.TRANSLATE,
            PromptMode.ONE_SHOT,
            read("translate_oneshot_cuda_to_c.txt"),
            direction=Direction.CUDA_TO_C,
        ),
        "gen_tests_system": PromptTemplate(
            PromptTask.GEN_TESTS, PromptMode.TASK_PROMPT, read("gen_tests_system.txt")
        ),
        "gen_tests_task": PromptTemplate(
            PromptTask.GEN_TESTS, PromptMode.TASK_PROMPT, read("gen_tests_task.txt")
        ),
        "gen_tests_oneshot": PromptTemplate(
            PromptTask.GEN_TESTS, PromptMode.ONE_SHOT, read("gen_tests_oneshot.txt")
        ),
        "gen_wrapper": PromptTemplate(
            PromptTask.GEN_WRAPPER, PromptMode.TASK_PROMPT, read("gen_wrapper.txt")
        ),
    }


class ModelGateway:
    """High-level request builders over a transport and a template set."""

    def __init__(self, transport: Transport, templates: Optional[dict] = None):
        self.transport = transport
        self.templates = templates or load_templates()

    # -- message builders (exposed so fixtures can key the mock store) --

    def translation_messages(
        self, fn: FunctionUnit, direction: Direction, endpoint: ModelEndpoint
    ) -> Messages:
        source_lang = _LANG_DISPLAY[direction.source_language]
        target_lang = _LANG_DISPLAY[direction.target_language]
        system = self.templates["translate_system"].render(
            source_lang=source_lang, target_lang=target_lang
        )
        if endpoint.prompt_mode is PromptMode.ONE_SHOT:
            user_template = self.templates[f"translate_oneshot_{direction.value}"]
        else:
            user_template = self.templates["translate_task"]
        user = user_template.render(
            source_code=fn.source, source_lang=source_lang, target_lang=target_lang
        )
        return [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ]

    def tests_messages(
        self, fn: FunctionUnit, n_tests: int, endpoint: ModelEndpoint
    ) -> Messages:
        source_lang = _LANG_DISPLAY[fn.language]
        source = fn.source
        if fn.language is Language.CUDA and fn.wrapper_source:
            source = fn.source + "\n\n" + fn.wrapper_source
        system = self.templates["gen_tests_system"].render(
            source_lang=source_lang, n_tests=n_tests
        )
        if endpoint.prompt_mode is PromptMode.ONE_SHOT:
            user = self.templates["gen_tests_oneshot"].render(source_code=source)
        else:
            user = self.templates["gen_tests_task"].render(source_code=source)
        return [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ]

    def wrapper_messages(self, fn: FunctionUnit) -> Messages:
        user = self.templates["gen_wrapper"].render(source_code=fn.source)
        return [{"role": "user", "content": user}]

    # -- operations --

    def request_translation(
        self,
        fn: FunctionUnit,
        direction: Direction,
        n_samples: int,
        endpoint: ModelEndpoint,
    ) -> list[CandidateResult]:
        if n_samples < 1:
            raise ConfigurationError("n_samples must be >= 1")
        if direction.source_language is not fn.language:
            raise ConfigurationError(
                f"direction {direction.value} does not match unit language {fn.language.value}"
            )
        target_tag = _LANG_DISPLAY[direction.target_language]
        messages = self.translation_messages(fn, direction, endpoint)
        results: list[CandidateResult] = []
        for i in range(n_samples):
            raw = self.transport.send(endpoint, messages)
            try:
                text = extract_tagged(raw, f"[{target_tag}]", f"[/{target_tag}]")
                results.append(CandidateResult(sample_index=i, text=text, raw=raw))
            except ExtractionError as exc:
                results.append(
                    CandidateResult(sample_index=i, text=None, error=str(exc), raw=raw)
                )
        if all(not r.ok for r in results):
            raise ExtractionError(
                f"all {n_samples} samples failed tag extraction for {fn.name}"
            )
        return results

    def request_tests(
        self, fn: FunctionUnit, n_tests: int = 5, endpoint: Optional[ModelEndpoint] = None
    ) -> TestSuite:
        if n_tests < 1:
            raise ConfigurationError("n_tests must be >= 1")
        if endpoint is None:
            raise ConfigurationError("request_tests requires an endpoint")
        raw = self.transport.send(endpoint, self.tests_messages(fn, n_tests, endpoint))
        return split_test_cases(raw, n_tests, function_id=fn.id)

    def request_cuda_wrapper(self, fn: FunctionUnit, endpoint: ModelEndpoint) -> str:
        if fn.language is not Language.CUDA:
            raise ConfigurationError("kernel wrappers only apply to CUDA units")
        raw = self.transport.send(endpoint, self.wrapper_messages(fn))
        wrapper = extract_tagged(raw, "[CODE]", "[/CODE]")
        try:
            wrapper_sig = parse_signature(wrapper)
        except SignatureError as exc:
            raise WrapperMismatchError(f"wrapper has no parseable header: {exc}") from exc
        if wrapper_sig.param_names != fn.signature.param_names:
            raise WrapperMismatchError(
                "wrapper parameters "
                f"{wrapper_sig.param_names} do not match kernel parameters "
                f"{fn.signature.param_names}"
            )
        return wrapper
