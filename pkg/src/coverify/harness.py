"""Harness generation: self-contained translation units per (function, suite).

The emitted main runs each test case between "=== CASE k ===" / "=== END k ==="
delimiter lines, so a crash mid-run still attributes partial output to the
right case. Each case invokes the function under test through the generic
`wrapper(fn, args...)` entry supplied by the harness header, which prints one
canonical record per call.

For the CPU emulation backend, kernel-launch syntax is rewritten into a
portable CUDA_LAUNCH macro understood by the shim header.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from coverify.corpus import Signature, function_name, split_top_level, strip_comments
from coverify.errors import HarnessError
from coverify.gateway import TestSuite

HARNESS_HEADER = "coverify_harness.h"
SHIM_HEADER = "coverify_cuda_shim.h"

_IDENT = r"[A-Za-z_]\w*"
_WRAPPER_CALL_RE = re.compile(r"\bwrapper\s*\(")
_POINTER_DECL_RE = re.compile(
    rf"\b(?:{_IDENT}\s+)+\*+\s*(?:__restrict__\s+)?({_IDENT})\s*(?:=|;)"
)

_INCOMPATIBLE_TOKENS = (
    ("barrier", re.compile(r"__syncthreads|__syncwarp|__threadfence")),
    ("shared memory", re.compile(r"__shared__")),
    ("warp intrinsic", re.compile(r"__shfl|__ballot|__any_sync|__all_sync|__activemask|__match_any|__reduce_\w+_sync")),
    ("cooperative groups", re.compile(r"cooperative_groups|this_grid\s*\(|this_thread_block\s*\(")),
)


class Backend(str, Enum):
    NATIVE_C = "native_c"
    NVCC = "nvcc"
    CUDA_SHIM = "cuda_shim"

    @property
    def is_cuda(self) -> bool:
        return self in (Backend.NVCC, Backend.CUDA_SHIM)

    @property
    def source_suffix(self) -> str:
        return ".cu" if self is Backend.NVCC else ".cpp"


@dataclass(frozen=True)
class HarnessUnit:
    function_id: str
    backend: Backend
    unit_source: str
    case_count: int

    @property
    def file_name(self) -> str:
        return "harness" + self.backend.source_suffix


def rewrite_kernel_launch(source: str) -> str:
    """Rewrite every `name<<<G, B>>>(args)` into `CUDA_LAUNCH(name, G, B, args)`.

    Grid and block expressions are preserved verbatim; sources without
    launches come back byte-identical. Plain << and >> operators are never
    touched because only the `<<<` token triggers a rewrite.
    """
    out: list[str] = []
    i = 0
    while True:
        j = source.find("<<<", i)
        if j < 0:
            out.append(source[i:])
            break
        k = j
        while k > i and source[k - 1].isspace():
            k -= 1
        m = k
        while m > i and (source[m - 1].isalnum() or source[m - 1] == "_"):
            m -= 1
        name = source[m:k]
        if not re.fullmatch(_IDENT, name or ""):
            raise HarnessError("kernel launch without a kernel name")
        close = source.find(">>>", j + 3)
        if close < 0:
            raise HarnessError("unbalanced <<< in kernel launch")
        config = split_top_level(source[j + 3 : close], ",")
        if len(config) != 2:
            raise HarnessError(
                f"unsupported launch configuration with {len(config)} arguments"
            )
        grid, block = config[0].strip(), config[1].strip()
        p = close + 3
        while p < len(source) and source[p].isspace():
            p += 1
        if p >= len(source) or source[p] != "(":
            raise HarnessError("kernel launch not followed by an argument list")
        depth = 0
        q = p
        while q < len(source):
            if source[q] == "(":
                depth += 1
            elif source[q] == ")":
                depth -= 1
                if depth == 0:
                    break
            q += 1
        if depth != 0:
            raise HarnessError("unbalanced parentheses in kernel launch arguments")
        args = source[p + 1 : q].strip()
        out.append(source[i:m])
        if args:
            out.append(f"CUDA_LAUNCH({name}, {grid}, {block}, {args})")
        else:
            out.append(f"CUDA_LAUNCH({name}, {grid}, {block})")
        i = q + 1
    return "".join(out)


def shim_compatible(kernel_source: str) -> tuple[bool, list[str]]:
    """Token-level screen for constructs the serial CPU emulation cannot run."""
    text = strip_comments(kernel_source)
    reasons = [label for label, pattern in _INCOMPATIBLE_TOKENS if pattern.search(text)]
    body_start = text.find("{")
    if body_start >= 0 and "<<<" in text[body_start:]:
        reasons.append("dynamic parallelism")
    return (not reasons, reasons)


def _find_invocation(snippet: str) -> tuple[int, int, str, list[str]]:
    """Locate the harness invocation; returns (start, end, callee, args)."""
    match = _WRAPPER_CALL_RE.search(snippet)
    if match is None:
        raise HarnessError("snippet has no wrapper(...) invocation")
    if _WRAPPER_CALL_RE.search(snippet, match.end()):
        raise HarnessError("snippet has more than one wrapper(...) invocation")
    open_idx = snippet.index("(", match.start())
    depth = 0
    close_idx = -1
    for i in range(open_idx, len(snippet)):
        if snippet[i] == "(":
            depth += 1
        elif snippet[i] == ")":
            depth -= 1
            if depth == 0:
                close_idx = i
                break
    if close_idx < 0:
        raise HarnessError("unbalanced parentheses in wrapper invocation")
    parts = [p.strip() for p in split_top_level(snippet[open_idx + 1 : close_idx], ",")]
    if not parts or not parts[0]:
        raise HarnessError("wrapper invocation has no callee argument")
    return match.start(), close_idx + 1, parts[0], parts[1:]


def _promote_bare_call(snippet: str, callees: list[str]) -> str:
    """Rewrite a direct `fn(args);` statement into the wrapper form."""
    for callee in callees:
        pattern = re.compile(rf"\b{re.escape(callee)}\s*\(")
        match = pattern.search(snippet)
        if match is None:
            continue
        return (
            snippet[: match.start()]
            + f"wrapper({callee}, "
            + snippet[match.end() :]
        )
    raise HarnessError("snippet has no harness invocation of the function under test")


def _check_pointer_arguments(snippet: str, args: list[str]) -> None:
    pointer_names = set(_POINTER_DECL_RE.findall(snippet))
    for arg in args:
        if arg in pointer_names:
            raise HarnessError(
                f"argument {arg!r} is a raw pointer of unknown extent; "
                "declare it as a sized array so the printer knows its length"
            )


def emit_harness(
    fn_source: str,
    sig: Signature,
    suite: TestSuite,
    backend: Backend,
    wrapper_source: Optional[str] = None,
    function_id: str = "",
) -> HarnessUnit:
    """Emit a complete translation unit running every case of the suite.

    CUDA backends require the kernel's host wrapper; the emitted cases invoke
    the wrapper, never the kernel. Snippet invocations are retargeted at the
    proper entry for the side being built, so a suite generated against the
    source function also drives a translated candidate with a different name.
    """
    if len(suite.cases) == 0:
        raise HarnessError("test suite is empty")

    fn_name = function_name(fn_source)
    if backend.is_cuda:
        if not wrapper_source:
            raise HarnessError(f"backend {backend.value} requires a kernel wrapper")
        entry = function_name(wrapper_source)
    else:
        entry = fn_name

    body_source = fn_source
    extra_source = wrapper_source or ""
    if backend is Backend.CUDA_SHIM:
        body_source = rewrite_kernel_launch(body_source)
        extra_source = rewrite_kernel_launch(extra_source) if extra_source else ""

    lines: list[str] = []
    if backend is Backend.CUDA_SHIM:
        lines.append(f'#include "{SHIM_HEADER}"')
    lines.append(f'#include "{HARNESS_HEADER}"')
    lines.append("")
    lines.append(body_source.rstrip())
    if extra_source:
        lines.append("")
        lines.append(extra_source.rstrip())
    lines.append("")
    lines.append("int main() {")
    for case in suite.cases:
        snippet = case.snippet
        if _WRAPPER_CALL_RE.search(snippet) is None:
            snippet = _promote_bare_call(snippet, [fn_name, entry])
        start, end, _callee, args = _find_invocation(snippet)
        _check_pointer_arguments(snippet, args)
        arg_text = ", ".join([entry] + args)
        snippet = snippet[:start] + f"wrapper({arg_text})" + snippet[end:]
        lines.append("    {")
        lines.append(f'    std::cout << "=== CASE {case.index} ===" << std::endl;')
        for snippet_line in snippet.splitlines():
            lines.append("    " + snippet_line if snippet_line.strip() else "")
        lines.append(f'    std::cout << "=== END {case.index} ===" << std::endl;')
        lines.append("    }")
    lines.append("    return 0;")
    lines.append("}")
    lines.append("")

    return HarnessUnit(
        function_id=function_id or suite.function_id,
        backend=backend,
        unit_source="\n".join(lines),
        case_count=len(suite.cases),
    )
