"""Evaluation metrics: compile pass, pass@k, BLEU variants, correlations.

pass@k uses the numerically stable product form (no factorials, no
overflow); the test suite pins it against exhaustive subset enumeration.
BLEU is sentence-level with brevity penalty and add-one smoothing on
zero-count higher-order n-grams. The weighted variant up-weights language
keywords in the precision counts; it is reported as `codebleu_ngram`, the
n-gram component only, never as full CodeBLEU.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from coverify.corpus import strip_comments
from coverify.executor import ErrorType


@dataclass(frozen=True)
class SampleOutcome:
    problem_id: str
    n: int
    c: int
    compile_ok: int

    def __post_init__(self):
        if not (0 <= self.c <= self.n):
            raise ValueError(f"need 0 <= c <= n, got c={self.c}, n={self.n}")
        if not (0 <= self.compile_ok <= self.n):
            raise ValueError(f"need 0 <= compile_ok <= n, got {self.compile_ok}")


def pass_at_k(n: int, c: int, k: int) -> float:
    """Probability that at least one of k samples drawn from n passes.

    Stable product form of 1 - C(n-c, k)/C(n, k); exactly 1.0 whenever
    n - c < k because some passing sample must be drawn.
    """
    if n < 0 or c < 0 or k < 1:
        raise ValueError("n, c must be >= 0 and k >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds sample count n={n}")
    if c > n:
        raise ValueError(f"c={c} exceeds sample count n={n}")
    if n - c < k:
        return 1.0
    product = 1.0
    for i in range(n - c + 1, n + 1):
        product *= 1.0 - k / i
    return 1.0 - product


def aggregate_pass_at_k(outcomes: Sequence[SampleOutcome], k: int) -> float:
    if not outcomes:
        raise ValueError("no outcomes to aggregate")
    for outcome in outcomes:
        if outcome.n < k:
            raise ValueError(
                f"problem {outcome.problem_id} has n={outcome.n} < k={k}"
            )
    return sum(pass_at_k(o.n, o.c, k) for o in outcomes) / len(outcomes)


def cpass(outcomes: Sequence[SampleOutcome]) -> float:
    if not outcomes:
        raise ValueError("no outcomes")
    total = sum(o.n for o in outcomes)
    return sum(o.compile_ok for o in outcomes) / total


_TOKEN_RE = re.compile(
    r"""
    [A-Za-z_]\w*
  | 0[xX][0-9a-fA-F]+[uUlL]*
  | (?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?[fFlLuU]*
  | "(?:\\.|[^"\\])*"
  | '(?:\\.|[^'\\])*'
  | <<<|>>>|<<=|>>=|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||\+=|-=|\*=|/=|%=|&=|\^=|\|=|::
  | [-+*/%=<>!&|^~?:;,.(){}\[\]#@\\]
    """,
    re.VERBOSE,
)


def code_tokenize(source: str) -> list[str]:
    """Lexer-level tokens; comments dropped, literals kept whole."""
    return _TOKEN_RE.findall(strip_comments(source))


C_CUDA_KEYWORDS = frozenset(
    """
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    bool true false nullptr new delete class template typename namespace
    using public private protected virtual operator constexpr
    __global__ __device__ __host__ __shared__ __constant__ __restrict__
    __syncthreads threadIdx blockIdx blockDim gridDim dim3 atomicAdd
    cudaMalloc cudaMemcpy cudaFree cudaMemset cudaDeviceSynchronize
    cudaMemcpyHostToDevice cudaMemcpyDeviceToHost cudaMemcpyDeviceToDevice
    """.split()
)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _ngram_weight(ngram: tuple[str, ...], keyword_weight: float) -> float:
    return keyword_weight if any(t in C_CUDA_KEYWORDS for t in ngram) else 1.0


def _bleu_core(
    candidate: Sequence[str],
    reference: Sequence[str],
    max_n: int,
    keyword_weight: Optional[float],
) -> float:
    if not reference:
        raise ValueError("reference token list must be nonempty")
    if not candidate:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(candidate, n)
        ref_counts = _ngrams(reference, n)
        if keyword_weight is None:
            total = sum(cand_counts.values())
            matched = sum(
                min(count, ref_counts[gram]) for gram, count in cand_counts.items()
            )
        else:
            total = sum(
                count * _ngram_weight(gram, keyword_weight)
                for gram, count in cand_counts.items()
            )
            matched = sum(
                min(count, ref_counts[gram]) * _ngram_weight(gram, keyword_weight)
                for gram, count in cand_counts.items()
            )
        if matched == 0:
            if n == 1:
                return 0.0
            precision = (matched + 1.0) / (total + 1.0)
        else:
            precision = matched / total
        log_sum += math.log(precision)
    geo_mean = math.exp(log_sum / max_n)
    c_len, r_len = len(candidate), len(reference)
    brevity = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return geo_mean * brevity


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    return _bleu_core(candidate, reference, max_n, keyword_weight=None)


def weighted_ngram_bleu(
    candidate: Sequence[str],
    reference: Sequence[str],
    keyword_weight: float = 4.0,
    max_n: int = 4,
) -> float:
    return _bleu_core(candidate, reference, max_n, keyword_weight=keyword_weight)


def error_histogram(rejections: Iterable) -> dict[ErrorType, int]:
    """Counts per taxonomy type; rejections without a type land in unknown."""
    histogram = {error_type: 0 for error_type in ErrorType}
    for rejection in rejections:
        error_type = getattr(rejection, "error_type", rejection)
        if error_type is None:
            error_type = ErrorType.UNKNOWN
        histogram[ErrorType(error_type)] += 1
    return histogram


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("need at least two points")
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    var_x = sum((x - mean_x) ** 2 for x in xs)
    var_y = sum((y - mean_y) ** 2 for y in ys)
    if var_x == 0 or var_y == 0:
        raise ValueError("correlation undefined for a constant vector")
    cov = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    return cov / math.sqrt(var_x * var_y)


@dataclass
class MetricsReport:
    bleu: float
    cpass: float
    pass_at: dict[int, float]
    codebleu_ngram: Optional[float] = None
    vt: Optional[float] = None
    error_histogram: dict = field(default_factory=dict)
    pearson: dict[str, float] = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        rates = [self.bleu, self.cpass, *self.pass_at.values()]
        if self.codebleu_ngram is not None:
            rates.append(self.codebleu_ngram)
        if self.vt is not None:
            rates.append(self.vt)
        for rate in rates:
            if not (0.0 <= rate <= 1.0):
                raise ValueError(f"rate out of [0,1]: {rate}")

    def to_json(self) -> dict:
        return {
            "bleu": self.bleu,
            "codebleu_ngram": self.codebleu_ngram,
            "cpass": self.cpass,
            "pass_at": {str(k): v for k, v in sorted(self.pass_at.items())},
            "vt": self.vt,
            "error_histogram": {
                k.value if isinstance(k, ErrorType) else str(k): v
                for k, v in self.error_histogram.items()
            },
            "pearson": dict(sorted(self.pearson.items())),
            "notes": self.notes,
        }

    def display(self) -> dict:
        """Rates scaled x100 for human-facing output; applied only here."""
        out = {"BLEU": round(self.bleu * 100, 2), "CPass": round(self.cpass * 100, 2)}
        if self.codebleu_ngram is not None:
            out["CodeBLEU-ngram"] = round(self.codebleu_ngram * 100, 2)
        for k, v in sorted(self.pass_at.items()):
            out[f"Pass@{k}"] = round(v * 100, 2)
        if self.vt is not None:
            out["VT"] = round(self.vt * 100, 2)
        return out
