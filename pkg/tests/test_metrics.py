import math
from collections import Counter
from itertools import combinations

import pytest
from hypothesis import given, strategies as st

from coverify.executor import ErrorType
from coverify.metrics import (
    C_CUDA_KEYWORDS,
    MetricsReport,
    SampleOutcome,
    aggregate_pass_at_k,
    bleu,
    code_tokenize,
    cpass,
    error_histogram,
    pass_at_k,
    pearson,
    weighted_ngram_bleu,
)
from coverify.verify import Rejection, RejectionStage


def pass_at_k_oracle(n: int, c: int, k: int) -> float:
    """Exhaustive enumeration: k-subsets containing at least one pass."""
    samples = [True] * c + [False] * (n - c)
    subsets = list(combinations(range(n), k))
    hits = sum(1 for subset in subsets if any(samples[i] for i in subset))
    return hits / len(subsets)


class TestPassAtK:
    def test_matches_enumeration_oracle_small_grid(self):
        for n in range(1, 9):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    assert pass_at_k(n, c, k) == pytest.approx(
                        pass_at_k_oracle(n, c, k), abs=1e-12
                    ), (n, c, k)

    def test_all_pass(self):
        assert pass_at_k(10, 10, 5) == 1.0

    def test_none_pass(self):
        assert pass_at_k(10, 0, 3) == 0.0

    def test_derived_ten_three_one(self):
        assert pass_at_k(10, 3, 1) == pytest.approx(pass_at_k_oracle(10, 3, 1), abs=1e-12)
        assert pass_at_k(10, 3, 1) == pytest.approx(0.3, abs=1e-12)

    def test_monotone_in_c_and_k(self):
        for n in (5, 9):
            for k in range(1, n + 1):
                values = [pass_at_k(n, c, k) for c in range(n + 1)]
                assert values == sorted(values)
            for c in range(n + 1):
                values = [pass_at_k(n, c, k) for k in range(1, n + 1)]
                assert values == sorted(values)

    def test_k_greater_than_n_rejected(self):
        with pytest.raises(ValueError):
            pass_at_k(3, 1, 4)

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            pass_at_k(-1, 0, 1)

    def test_large_n_no_overflow(self):
        assert 0.0 <= pass_at_k(10_000, 37, 100) <= 1.0


class TestAggregates:
    def test_mean_of_per_problem_values(self):
        outcomes = [SampleOutcome("a", 5, 5, 5), SampleOutcome("b", 5, 0, 5)]
        assert aggregate_pass_at_k(outcomes, 1) == 0.5

    def test_single_problem_equals_pass_at_k(self):
        outcomes = [SampleOutcome("a", 10, 3, 10)]
        assert aggregate_pass_at_k(outcomes, 1) == pass_at_k(10, 3, 1)

    def test_all_correct_corpus(self):
        outcomes = [SampleOutcome(f"p{i}", 4, 4, 4) for i in range(233)]
        assert aggregate_pass_at_k(outcomes, 2) == 1.0

    def test_n_below_k_rejected(self):
        with pytest.raises(ValueError):
            aggregate_pass_at_k([SampleOutcome("a", 3, 1, 3)], 5)

    def test_cpass_ratio(self):
        outcomes = [SampleOutcome("a", 2, 0, 2), SampleOutcome("b", 2, 0, 1)]
        assert cpass(outcomes) == 0.75

    def test_cpass_bounds(self):
        assert cpass([SampleOutcome("a", 3, 0, 3)]) == 1.0
        assert cpass([SampleOutcome("a", 3, 0, 0)]) == 0.0

    def test_cpass_empty(self):
        with pytest.raises(ValueError):
            cpass([])


class TestCodeTokenize:
    def test_simple_expression(self):
        assert code_tokenize("a+b") == ["a", "+", "b"]

    def test_compound_statement(self):
        assert code_tokenize("x[i] += 1;") == ["x", "[", "i", "]", "+=", "1", ";"]

    def test_empty(self):
        assert code_tokenize("") == []

    def test_comments_dropped(self):
        assert code_tokenize("a + b // add\n/* c */ + d") == ["a", "+", "b", "+", "d"]

    def test_launch_brackets_and_floats(self):
        tokens = code_tokenize("k<<<n, 1>>>(2.3f);")
        assert "<<<" in tokens and ">>>" in tokens and "2.3f" in tokens


class TestBleu:
    def test_identical_is_one(self):
        tokens = code_tokenize("void f(int a) { return a + 1; }")
        assert bleu(tokens, tokens) == pytest.approx(1.0)

    def test_empty_candidate_is_zero(self):
        assert bleu([], ["a", "b"]) == 0.0

    def test_empty_reference_errors(self):
        with pytest.raises(ValueError):
            bleu(["a"], [])

    def test_hand_computed_four_token_example(self):
        # candidate [a,b,c,d] vs reference [a,b,x,d]:
        # p1 = 3/4; p2 = 1/3 (only "a b" matches); p3 = 0 of 2 -> (0+1)/(2+1);
        # p4 = 0 of 1 -> (0+1)/(1+1); brevity 1.
        expected = (0.75 * (1 / 3) * (1 / 3) * 0.5) ** 0.25
        assert bleu(list("abcd"), list("abxd")) == pytest.approx(expected, abs=1e-9)

    def test_permutation_sensitive(self):
        assert bleu(list("abcd"), list("abcd")) > bleu(list("badc"), list("abcd"))

    def test_brevity_penalty_applied(self):
        shorter = bleu(list("ab"), list("abcd"))
        assert shorter < bleu(list("abcd"), list("abcd"))

    @given(st.lists(st.sampled_from("abcxyz+*"), min_size=1, max_size=12))
    def test_identity_property(self, tokens):
        assert bleu(tokens, tokens) == pytest.approx(1.0)


def weighted_oracle(candidate, reference, weight=4.0, max_n=4):
    """Direct weighted-count computation, independent of the library path."""

    def w(gram):
        return weight if any(t in C_CUDA_KEYWORDS for t in gram) else 1.0

    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = Counter(tuple(candidate[i : i + n]) for i in range(len(candidate) - n + 1))
        ref = Counter(tuple(reference[i : i + n]) for i in range(len(reference) - n + 1))
        total = sum(count * w(g) for g, count in cand.items())
        matched = sum(min(count, ref[g]) * w(g) for g, count in cand.items())
        if matched == 0:
            if n == 1:
                return 0.0
            p = (matched + 1.0) / (total + 1.0)
        else:
            p = matched / total
        log_sum += math.log(p)
    bp = 1.0 if len(candidate) >= len(reference) else math.exp(1 - len(reference) / len(candidate))
    return math.exp(log_sum / max_n) * bp


class TestWeightedNgramBleu:
    def test_identical_is_one(self):
        tokens = code_tokenize("if (x == y) return z;")
        assert weighted_ngram_bleu(tokens, tokens) == pytest.approx(1.0)

    def test_empty_candidate_is_zero(self):
        assert weighted_ngram_bleu([], ["if"]) == 0.0

    def test_matches_direct_computation_on_six_token_pair(self):
        reference = ["if", "x", "==", "y", "if", ";"]
        keyword_miss = ["if", "x", "==", "y", "while", ";"]
        got = weighted_ngram_bleu(keyword_miss, reference)
        assert got == pytest.approx(weighted_oracle(keyword_miss, reference), abs=1e-12)

    def test_keyword_mismatch_scores_lower_than_identifier_mismatch(self):
        # Same edit position and size; only the keyword-ness of the
        # mismatching tokens differs.
        ref_kw = ["if", "x", "==", "y", "if", ";"]
        cand_kw = ["if", "x", "==", "y", "while", ";"]
        ref_id = ["u", "x", "==", "y", "v", ";"]
        cand_id = ["u", "x", "==", "y", "w", ";"]
        kw_score = weighted_ngram_bleu(cand_kw, ref_kw)
        id_score = weighted_ngram_bleu(cand_id, ref_id)
        assert kw_score == pytest.approx(weighted_oracle(cand_kw, ref_kw), abs=1e-12)
        assert id_score == pytest.approx(weighted_oracle(cand_id, ref_id), abs=1e-12)
        assert kw_score < id_score


class TestErrorHistogram:
    def _rejection(self, error_type):
        return Rejection("fid", RejectionStage.Y_COMPILE, "x", error_type=error_type)

    def test_empty_is_all_zero(self):
        histogram = error_histogram([])
        assert set(histogram) == set(ErrorType)
        assert all(v == 0 for v in histogram.values())

    def test_three_type5(self):
        histogram = error_histogram([self._rejection(ErrorType.TYPE5)] * 3)
        assert histogram[ErrorType.TYPE5] == 3

    def test_counts_sum_to_input_length(self):
        rejections = [
            self._rejection(ErrorType.TYPE5),
            self._rejection(ErrorType.TYPE2),
            self._rejection(None),
            self._rejection(ErrorType.TYPE11),
        ]
        histogram = error_histogram(rejections)
        assert sum(histogram.values()) == len(rejections)
        assert histogram[ErrorType.UNKNOWN] == 1


class TestPearson:
    def test_identical_vectors(self):
        assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_negated_vectors(self):
        assert pearson([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)

    def test_constant_vector_errors(self):
        with pytest.raises(ValueError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [1, 2, 3])

    def test_known_value(self):
        xs, ys = [1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]
        assert pearson(xs, ys) == pytest.approx(0.8)


class TestMetricsReport:
    def test_rates_validated(self):
        with pytest.raises(ValueError):
            MetricsReport(bleu=1.2, cpass=0.5, pass_at={1: 0.5})

    def test_display_scaling_applied_at_render_only(self):
        report = MetricsReport(bleu=0.8496, cpass=0.9571, pass_at={1: 0.8515})
        display = report.display()
        assert display["BLEU"] == 84.96
        assert display["Pass@1"] == 85.15
        assert report.bleu == 0.8496
