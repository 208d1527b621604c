"""Primary acceptance criteria.

Each test covers one criterion at its stated tolerance and prints a
PASS/FAIL line (visible with `pytest -s tests/test_acceptance.py`).
"""

import json
import time
from itertools import combinations

import pytest

import e2e_fixtures as toy
from coverify.errors import TranscriptError
from coverify.executor import ErrorType, Phase, classify_error
from coverify.gateway import ModelGateway, split_test_cases
from coverify.metrics import bleu, pass_at_k
from coverify.pipeline import run_iteration
from coverify.verify import outputs_equal, parse_output, vt_metric


def _report(name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{status}] {name}{suffix}")
    assert passed, f"{name}{suffix}"


def enumeration_oracle(n: int, c: int, k: int) -> float:
    samples = [True] * c + [False] * (n - c)
    subsets = list(combinations(range(n), k))
    hits = sum(1 for subset in subsets if any(samples[i] for i in subset))
    return hits / len(subsets)


def test_pass_at_k_oracle_equivalence():
    """pass@k == exhaustive enumeration for all n<=12, within 1e-12, in <5s."""
    start = time.monotonic()
    worst = 0.0
    checked = 0
    for n in range(1, 13):
        for c in range(n + 1):
            for k in range(1, n + 1):
                got = pass_at_k(n, c, k)
                want = enumeration_oracle(n, c, k)
                worst = max(worst, abs(got - want))
                checked += 1
    elapsed = time.monotonic() - start
    _report(
        "pass@k oracle equivalence (n<=12)",
        worst <= 1e-12 and elapsed < 5.0,
        f"{checked} triples, worst |diff| {worst:.2e}, {elapsed:.2f}s",
    )


def test_pass_at_k_edge_identities():
    ok = True
    for n in range(1, 13):
        for k in range(1, n + 1):
            ok = ok and pass_at_k(n, n, k) == 1.0 and pass_at_k(n, 0, k) == 0.0
    _report("pass@k edge identities", ok)


def test_output_comparison_on_reference_transcripts(fixtures_dir):
    entries = json.loads((fixtures_dir / "reference_transcripts.json").read_text())
    assert len(entries) == 6
    matched = 0
    for entry in entries:
        source = parse_output(entry["source_output"])
        try:
            target = parse_output(entry["target_output"])
            equal, _ = outputs_equal(source, target)
            verdict = "accept" if equal else "reject"
        except TranscriptError:
            verdict = "reject"
        if verdict == entry["verdict"]:
            matched += 1
    _report("reference transcript verdicts", matched == 6, f"{matched}/6")


def test_error_classification_fixture_corpus(fixtures_dir):
    fixtures = json.loads((fixtures_dir / "diagnostics.json").read_text())
    covered = {f["expected"] for f in fixtures}
    missing_types = {t.value for t in ErrorType if t is not ErrorType.UNKNOWN} - covered
    hits = sum(
        1
        for f in fixtures
        if classify_error(f["diagnostic"], Phase(f["phase"])).value == f["expected"]
    )
    named = (
        classify_error('identifier "T" is undefined') is ErrorType.TYPE5
        and classify_error("too few arguments to function 'void g(int, int)'")
        is ErrorType.TYPE2
        and classify_error("a host function call cannot be configured")
        is ErrorType.TYPE11
    )
    _report(
        "error classification fixtures",
        hits == len(fixtures) and named and not missing_types,
        f"{hits}/{len(fixtures)}, all 11 types covered",
    )


def test_vt_conjunction_semantics():
    partial = vt_metric([(5, False)])  # 4/5 valid cases -> all-valid is False
    mixed = vt_metric([(5, True), (5, False)])

    base = run_toy_vt(mutate_y=False)
    mutated = run_toy_vt(mutate_y=True)
    _report(
        "VT conjunction semantics",
        partial == 0.0 and mixed == 0.5 and base == mutated == pytest.approx(16 / 20),
        f"partial={partial}, mixed={mixed}, vt={base} (y-independent)",
    )


def run_toy_vt(mutate_y: bool) -> float:
    runner = toy.build_runner()
    if mutate_y:
        for i in range(1, toy.N_FUNCTIONS + 1):
            runner.register(toy.cuda_candidate(i), stdout="garbage, not a record")
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        from pathlib import Path

        from test_pipeline import toy_config

        result = run_iteration(
            toy.build_corpus(),
            toy_config(Path(tmp)),
            1,
            ModelGateway(toy.build_transport()),
            runner,
        )
    return result.report.vt


def test_bleu_identity_and_hand_example():
    tokens = ["void", "f", "(", "int", "a", ")", "{", "return", ";", "}"]
    identity = bleu(tokens, tokens)
    # p1=3/4, p2=1/3, p3 smoothed 1/3, p4 smoothed 1/2, brevity 1
    expected = (0.75 * (1 / 3) * (1 / 3) * 0.5) ** 0.25
    hand = bleu(list("abcd"), list("abxd"))
    _report(
        "BLEU identity and hand-computed example",
        identity == pytest.approx(1.0) and abs(hand - expected) <= 1e-9,
        f"identity={identity}, |diff|={abs(hand - expected):.2e}",
    )


def test_end_to_end_mock_iteration(tmp_path):
    start = time.monotonic()
    results = []
    for sub in ("a", "b"):
        from test_pipeline import toy_config

        result = run_iteration(
            toy.build_corpus(),
            toy_config(tmp_path / sub),
            1,
            ModelGateway(toy.build_transport()),
            toy.build_runner(),
        )
        results.append(result)
    elapsed = time.monotonic() - start

    names = {t.x.name for t in results[0].triplets}
    membership_ok = names == set(toy.ACCEPTED_NAMES)
    translator_a = (tmp_path / "a" / "iter_1" / "training_translator.jsonl").read_bytes()
    translator_b = (tmp_path / "b" / "iter_1" / "training_translator.jsonl").read_bytes()
    tester_a = (tmp_path / "a" / "iter_1" / "training_tester.jsonl").read_bytes()
    triplets_identical = (
        tmp_path / "a" / "iter_1" / "triplets.jsonl"
    ).read_bytes() == (tmp_path / "b" / "iter_1" / "triplets.jsonl").read_bytes()
    export_counts_ok = (
        len(translator_a.decode().splitlines())
        == len(tester_a.decode().splitlines())
        == len(results[0].triplets)
        == 8
    )
    _report(
        "end-to-end mock iteration",
        membership_ok
        and export_counts_ok
        and triplets_identical
        and translator_a == translator_b
        and elapsed < 60.0,
        f"|S_1|=8 exact membership, byte-identical rerun, {elapsed:.2f}s",
    )


def test_tag_extraction_and_test_splitting(fixtures_dir):
    raw = (fixtures_dir / "add_100_tests_response.txt").read_text()
    suite = split_test_cases(raw, 5, function_id="add_100")
    markers_ok = [c.index for c in suite.cases] == [1, 2, 3, 4, 5]
    snippets_ok = (
        suite.cases[0].snippet.startswith("int data1[] = {0};")
        and "INT_MAX - 100" in suite.cases[3].snippet
        and "add_100(3, data5);" in suite.cases[4].snippet
    )
    _report(
        "tag extraction and test splitting",
        markers_ok and snippets_ok and len(suite.cases) == 5,
        "add_100 fixture -> 5 cases",
    )
