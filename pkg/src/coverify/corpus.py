"""Monolingual corpus handling: ingestion, dedup, signature parsing.

A corpus is a set of single-function source strings (C or CUDA). Units are
deduplicated by a hash of the comment- and whitespace-normalized source, so
ids are stable across runs and cosmetic edits.

Signature parsing is deliberately lexical, not a C grammar: it covers the
corpus shape (qualifiers, pointers, const, arrays-as-pointers, default
arguments) and rejects function pointers, templates, and variadics outright.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from coverify.errors import CorpusError, SignatureError


class Language(str, Enum):
    C = "c"
    CUDA = "cuda"


class Direction(str, Enum):
    C_TO_CUDA = "c_to_cuda"
    CUDA_TO_C = "cuda_to_c"

    @property
    def source_language(self) -> Language:
        return Language.C if self is Direction.C_TO_CUDA else Language.CUDA

    @property
    def target_language(self) -> Language:
        return Language.CUDA if self is Direction.C_TO_CUDA else Language.C

    @property
    def reversed(self) -> "Direction":
        return Direction.CUDA_TO_C if self is Direction.C_TO_CUDA else Direction.C_TO_CUDA


_FUNCTION_QUALIFIERS = {
    "static", "inline", "extern", "constexpr", "__inline__", "__forceinline__",
    "__global__", "__device__", "__host__", "__noinline__",
}

_TYPE_QUALIFIER_TOKENS = {"__restrict__", "restrict", "__restrict", "volatile", "register"}

_IDENT_RE = re.compile(r"[A-Za-z_]\w*$")


@dataclass(frozen=True)
class Param:
    name: str
    type_text: str
    is_pointer: bool = False
    is_const: bool = False
    default_value: Optional[str] = None


@dataclass(frozen=True)
class Signature:
    return_type: str
    params: tuple[Param, ...]
    is_kernel: bool = False
    qualifiers: tuple[str, ...] = ()

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)


@dataclass
class FunctionUnit:
    id: str
    language: Language
    source: str
    name: str
    signature: Signature
    wrapper_source: Optional[str] = None
    provenance: str = ""

    @classmethod
    def from_source(
        cls,
        source: str,
        language: Language,
        wrapper_source: Optional[str] = None,
        provenance: str = "",
    ) -> "FunctionUnit":
        sig = parse_signature(source)
        is_cuda_shaped = sig.is_kernel or wrapper_source is not None
        if language is Language.CUDA and not is_cuda_shaped:
            raise CorpusError(
                "cuda unit must be a kernel (kernel qualifier) or carry a wrapper"
            )
        if language is Language.C and is_cuda_shaped:
            raise CorpusError("c unit declared with kernel qualifier or wrapper")
        name = function_name(source)
        return cls(
            id=unit_id(source),
            language=language,
            source=source,
            name=name,
            signature=sig,
            wrapper_source=wrapper_source,
            provenance=provenance,
        )

    def with_wrapper(self, wrapper_source: str) -> "FunctionUnit":
        return replace(self, wrapper_source=wrapper_source)


@dataclass
class IngestReject:
    source_ref: str
    reason: str


@dataclass
class IngestResult:
    units: list[FunctionUnit] = field(default_factory=list)
    rejects: list[IngestReject] = field(default_factory=list)

    def by_id(self) -> dict[str, FunctionUnit]:
        return {u.id: u for u in self.units}


def strip_comments(source: str) -> str:
    """Remove // and /* */ comments, leaving string/char literals intact."""
    out: list[str] = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c in "\"'":
            quote = c
            out.append(c)
            i += 1
            while i < n:
                out.append(source[i])
                if source[i] == "\\" and i + 1 < n:
                    out.append(source[i + 1])
                    i += 2
                    continue
                if source[i] == quote:
                    i += 1
                    break
                i += 1
            continue
        if c == "/" and i + 1 < n and source[i + 1] == "/":
            while i < n and source[i] != "\n":
                i += 1
            continue
        if c == "/" and i + 1 < n and source[i + 1] == "*":
            i += 2
            while i + 1 < n and not (source[i] == "*" and source[i + 1] == "/"):
                i += 1
            i = min(i + 2, n)
            out.append(" ")
            continue
        out.append(c)
        i += 1
    return "".join(out)


def normalize(source: str) -> str:
    """Comment-free text with whitespace runs collapsed; idempotent."""
    return " ".join(strip_comments(source).split())


def unit_id(source: str) -> str:
    return hashlib.sha256(normalize(source).encode("utf-8")).hexdigest()


def split_top_level(text: str, sep: str) -> list[str]:
    """Split on sep occurrences not nested inside (), [] or {}."""
    parts: list[str] = []
    depth = 0
    current: list[str] = []
    for ch in text:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return parts


def _tokenize_declarator(text: str) -> list[str]:
    # Separate *, &, [ and ] so "float *x" and "float* x" tokenize alike.
    spaced = re.sub(r"([*&\[\]])", r" \1 ", text)
    return spaced.split()


def _parse_param(text: str, position: int) -> Param:
    text = text.strip()
    if not text:
        raise SignatureError(f"empty parameter at position {position}")
    if "..." in text:
        raise SignatureError("variadic parameters are not supported")
    if "(" in text or ")" in text:
        raise SignatureError("function-pointer parameters are not supported")
    if "<" in text or ">" in text:
        raise SignatureError("template parameters are not supported")

    default_value: Optional[str] = None
    if "=" in text:
        declarator, _, default = text.partition("=")
        default_value = default.strip()
        if not default_value:
            raise SignatureError(f"empty default value at position {position}")
        text = declarator.strip()

    tokens = _tokenize_declarator(text)
    is_pointer = "*" in tokens or "&" in tokens or "[" in tokens
    is_const = "const" in tokens

    # Drop the array extent; the name is the last identifier before any '['.
    if "[" in tokens:
        tokens = tokens[: tokens.index("[")]
    name_token = tokens[-1] if tokens else ""
    if not _IDENT_RE.match(name_token) or name_token in {"const", "unsigned", "signed"}:
        raise SignatureError(f"unnamed or malformed parameter at position {position}")

    type_tokens = [
        t
        for t in tokens[:-1]
        if t not in {"*", "&", "const"} and t not in _TYPE_QUALIFIER_TOKENS
    ]
    if not type_tokens:
        raise SignatureError(f"parameter {name_token!r} has no type")
    return Param(
        name=name_token,
        type_text=" ".join(type_tokens),
        is_pointer=is_pointer,
        is_const=is_const,
        default_value=default_value,
    )


def parse_signature(source: str) -> Signature:
    """Parse a C-like function header into a Signature.

    Raises SignatureError when no header is found, parentheses are
    unbalanced, or the header uses an unsupported construct.
    """
    text = normalize(source)
    if "template" in text.split("(", 1)[0]:
        raise SignatureError("template functions are not supported")

    open_idx = text.find("(")
    if open_idx < 0:
        raise SignatureError("no function header found")

    head = text[:open_idx].strip()
    head_tokens = _tokenize_declarator(head)
    if len(head_tokens) < 2:
        raise SignatureError("no function header found")
    name = head_tokens[-1]
    if not _IDENT_RE.match(name):
        raise SignatureError(f"function name {name!r} is not an identifier")

    qualifiers = []
    type_tokens = []
    for tok in head_tokens[:-1]:
        if tok in _FUNCTION_QUALIFIERS:
            qualifiers.append(tok)
        else:
            type_tokens.append(tok)
    if not type_tokens:
        raise SignatureError("missing return type")
    return_type = " ".join(type_tokens)

    depth = 0
    close_idx = -1
    for i in range(open_idx, len(text)):
        if text[i] == "(":
            depth += 1
        elif text[i] == ")":
            depth -= 1
            if depth == 0:
                close_idx = i
                break
    if close_idx < 0:
        raise SignatureError("unbalanced parentheses in parameter list")

    param_text = text[open_idx + 1 : close_idx].strip()
    params: tuple[Param, ...]
    if param_text in ("", "void"):
        params = ()
    else:
        params = tuple(
            _parse_param(part, i + 1)
            for i, part in enumerate(split_top_level(param_text, ","))
        )

    is_kernel = "__global__" in qualifiers
    if is_kernel and return_type != "void":
        raise SignatureError("kernel must return void")

    return Signature(
        return_type=return_type,
        params=params,
        is_kernel=is_kernel,
        qualifiers=tuple(qualifiers),
    )


def function_name(source: str) -> str:
    """Identifier of the function defined in source."""
    text = normalize(source)
    head = text[: text.find("(")]
    return _tokenize_declarator(head)[-1]


def to_record(unit: FunctionUnit) -> dict:
    record = {
        "id": unit.id,
        "language": unit.language.value,
        "source": unit.source,
        "provenance": unit.provenance,
    }
    if unit.wrapper_source is not None:
        record["wrapper"] = unit.wrapper_source
    return record


def write_corpus(units: Iterable[FunctionUnit], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for unit in units:
            fh.write(json.dumps(to_record(unit), sort_keys=True) + "\n")


def _ingest_record(record: dict, ref: str, fallback: Optional[Language]) -> FunctionUnit:
    if "source" not in record:
        raise CorpusError("record has no 'source' key")
    lang_text = record.get("language")
    if lang_text is None:
        if fallback is None:
            raise CorpusError("record has no 'language' key and no default given")
        language = fallback
    else:
        try:
            language = Language(str(lang_text).lower())
        except ValueError:
            raise CorpusError(f"unknown language {lang_text!r}") from None
    unit = FunctionUnit.from_source(
        record["source"],
        language,
        wrapper_source=record.get("wrapper"),
        provenance=record.get("provenance") or ref,
    )
    return unit


def ingest(path: Path | str, language: Optional[Language] = None) -> IngestResult:
    """Load a corpus from a JSON Lines file or a directory of source files.

    Directory mode maps .c files to C and .cu files to CUDA. Units are
    deduplicated by normalized-source id; unparseable functions land in
    the rejects list with a reason rather than being dropped.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"unreadable path: {path}")

    result = IngestResult()
    seen: set[str] = set()

    def add(source: str, lang: Language, ref: str, wrapper: Optional[str], prov: str) -> None:
        try:
            unit = FunctionUnit.from_source(source, lang, wrapper_source=wrapper, provenance=prov)
        except CorpusError as exc:
            result.rejects.append(IngestReject(source_ref=ref, reason=str(exc)))
            return
        if unit.id in seen:
            return
        seen.add(unit.id)
        result.units.append(unit)

    if path.is_dir():
        for file in sorted(path.iterdir()):
            if file.suffix == ".c":
                lang = Language.C
            elif file.suffix == ".cu":
                lang = Language.CUDA
            else:
                continue
            add(file.read_text(encoding="utf-8"), lang, str(file), None, str(file))
        return result

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record line: {exc}") from exc
            ref = f"{path}:{lineno}"
            try:
                unit = _ingest_record(record, ref, language)
            except CorpusError as exc:
                result.rejects.append(IngestReject(source_ref=ref, reason=str(exc)))
                continue
            if unit.id in seen:
                continue
            seen.add(unit.id)
            result.units.append(unit)
    return result
