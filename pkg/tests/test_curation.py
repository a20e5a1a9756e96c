from __future__ import annotations

import itertools

import pytest

from tirkit.curation import (
    EXTRACTION_STAGE,
    CodeBlockAssessment,
    FilterAction,
    Novelty,
    Parser,
    RawPost,
    Significance,
    StageCheckpoint,
    StageSpec,
    assess_code_blocks,
    classification_stages,
    consensus_label,
    decontaminate,
    estimate_hardness,
    filter_cot_solutions,
    filter_tir_stage0,
    filter_tir_stageN,
    generation_budget,
    hard_subset_solutions,
    is_hard_problem,
    label_solutions,
    ngram_cosine,
    ngram_profile,
    run_stage,
)
from tirkit.model import ProblemCategory, SolutionMode
from tirkit.runtime import run_virtual

from .conftest import make_problem, make_solution
from .test_backends import behavior, scripted

BEGIN, END = "<tool_call>", "</tool_call>"


def yes_no_backend(answer_by_contains):
    """Scripted yes/no judge keyed on prompt substrings; first match wins."""
    behaviors = [
        behavior([(reply, 0)], kind="contains", value=needle)
        for needle, reply in answer_by_contains
    ]
    return scripted(*behaviors)


# --- run_stage ------------------------------------------------------------------


def test_drop_if_yes_stage():
    stage = StageSpec("classify_invalid", "classify_valid", Parser.YES_NO, FilterAction.DROP_IF_YES)
    backend = yes_no_backend([("orphan", "Yes."), ("", "No.")])
    records = [make_problem(pid="good"), make_problem(pid="bad", statement="orphan fragment")]
    result = run_virtual(run_stage(records, stage, backend))
    assert [r.id for r in result.passed] == ["good"]
    assert [r.id for r in result.dropped] == ["bad"]
    assert result.report.to_dict() == {
        "stage": "classify_invalid", "input": 2, "passed": 1, "dropped": 1, "review": 0
    }


def test_unparseable_verdict_routes_to_review():
    stage = StageSpec("classify_mcq", "classify_mcq", Parser.YES_NO, FilterAction.DROP_IF_YES)
    backend = yes_no_backend([("", "perhaps?")])
    result = run_virtual(run_stage([make_problem()], stage, backend))
    assert result.passed == [] and result.dropped == []
    assert len(result.review) == 1
    record, reason = result.review[0]
    assert "unparseable" in reason
    r = result.report
    assert r.input_count == r.passed_count + r.dropped_count + r.review_count


def test_proof_conversion_transform_with_gate():
    annotations = {}
    classify = StageSpec("classify_proof", "classify_proof", Parser.YES_NO, FilterAction.ANNOTATE)
    convert = StageSpec(
        "convert_proofs",
        "convert_proof",
        Parser.FREE_TEXT,
        FilterAction.TRANSFORM,
        applies_if=("classify_proof", "yes"),
        transform_category=ProblemCategory.CONVERTED_PROOF,
    )
    proof = make_problem(pid="p-proof", answer=None, statement="Prove that the sum is even.")
    plain = make_problem(pid="p-plain", answer=None, statement="Compute 2+2.")
    backend = scripted(
        behavior([("Find the parity of the sum when n=7.", 0)], kind="contains", value="Rewrite"),
        behavior(
            [("Yes, it is a proof.", 0)],
            kind="regex",
            value=r"proof or derivation.*Prove that",
        ),
        behavior([("No.", 0)], kind="contains", value="proof or derivation"),
    )
    step1 = run_virtual(run_stage([proof, plain], classify, backend, annotations=annotations))
    assert annotations["p-proof"]["classify_proof"] == "yes"
    step2 = run_virtual(run_stage(step1.passed, convert, backend, annotations=annotations))
    converted = {r.id: r for r in step2.passed}
    assert converted["p-proof"].statement == "Find the parity of the sum when n=7."
    assert converted["p-proof"].category is ProblemCategory.CONVERTED_PROOF
    assert converted["p-plain"].statement == "Compute 2+2."


def test_answer_extraction_annotates_fields():
    stage = StageSpec("extract_answers", "extract_answer", Parser.ANSWER_EXTRACTION, FilterAction.ANNOTATE)
    backend = scripted(
        behavior([("42", 0)], kind="contains", value="sum of the first"),
        behavior([("None", 0)], kind="prefix", value=""),
    )
    with_answer = make_problem(pid="a", answer=None, statement="sum of the first six evens?")
    without = make_problem(pid="b", answer=None, statement="mystery")
    result = run_virtual(run_stage([with_answer, without], stage, backend))
    by_id = {r.id: r for r in result.passed}
    assert by_id["a"].expected_answer == "42"
    assert by_id["a"].category is ProblemCategory.HAS_ANSWER
    assert by_id["b"].expected_answer is None
    assert by_id["b"].category is ProblemCategory.NO_ANSWER


def test_extraction_flatmap():
    backend = scripted(
        behavior([('["Problem one?", "Problem two?"]', 0)], kind="contains", value="double"),
        behavior([("[]", 0)], kind="prefix", value=""),
    )
    posts = [RawPost(id="post1", text="double problem post"), RawPost(id="post2", text="chatter")]
    result = run_virtual(run_stage(posts, EXTRACTION_STAGE, backend))
    assert [p.id for p in result.passed] == ["post1-1", "post1-2"]
    assert result.report.input_count == 2


def test_checkpoint_skips_processed_records(tmp_path):
    stage = StageSpec("classify_mcq", "classify_mcq", Parser.YES_NO, FilterAction.DROP_IF_YES)
    b = behavior([("No.", 0)], kind="prefix", value="")
    backend = scripted(b)
    checkpoint = StageCheckpoint(tmp_path / "mcq.ckpt.jsonl")
    records = [make_problem(pid=f"p{i}") for i in range(3)]
    run_virtual(run_stage(records, stage, backend, checkpoint=checkpoint))
    assert b.calls == 3
    # rerun with a fresh checkpoint object over the same file: no new calls
    checkpoint2 = StageCheckpoint(tmp_path / "mcq.ckpt.jsonl")
    result = run_virtual(run_stage(records, stage, backend, checkpoint=checkpoint2))
    assert b.calls == 3
    assert len(result.passed) == 3


def test_filter_stages_shrink_record_set():
    stage = StageSpec("classify_binary", "classify_binary", Parser.YES_NO, FilterAction.DROP_IF_YES)
    backend = yes_no_backend([("yes-or-no", "Yes."), ("", "No.")])
    records = [
        make_problem(pid="x", statement="Is it true? yes-or-no."),
        make_problem(pid="y", statement="Compute the area."),
    ]
    result = run_virtual(run_stage(records, stage, backend))
    input_ids = {r.id for r in records}
    assert {r.id for r in result.passed} <= input_ids
    assert {r.id for r in result.dropped} <= input_ids


def test_canonical_stage_list_is_valid():
    stages = classification_stages()
    assert [s.name for s in stages] == [
        "classify_mcq",
        "classify_binary",
        "classify_invalid",
        "classify_proof",
        "convert_proofs",
        "extract_answers",
    ]


def test_incompatible_parser_action_rejected():
    with pytest.raises(ValueError):
        StageSpec("bad", "classify_mcq", Parser.JSON_LIST, FilterAction.DROP_IF_YES)


# --- decontamination ----------------------------------------------------------------


def test_exact_duplicate_dropped():
    benchmark = [make_problem(pid="bench1", statement="What is the sum of 1 to 100?")]
    dupe = make_problem(pid="cand", statement="What is the sum of 1 to 100?")
    backend = yes_no_backend([("", "Yes, identical.")])
    retained, removed = run_virtual(decontaminate([dupe], benchmark, backend))
    assert retained == []
    assert removed[0].problem_id == "cand" and removed[0].benchmark_id == "bench1"
    assert removed[0].similarity == pytest.approx(1.0)


def test_zero_overlap_retained_without_judge_calls():
    benchmark = [make_problem(pid="b", statement="abcdefghij")]
    candidate = make_problem(pid="c", statement="0123456789")
    backend = scripted()  # any call would raise BackendError
    retained, removed = run_virtual(decontaminate([candidate], benchmark, backend))
    assert [p.id for p in retained] == ["c"] and removed == []


def test_paraphrase_dropped_by_judge():
    benchmark = [make_problem(pid="b", statement="Compute the sum of the first ten squares.")]
    paraphrase = make_problem(pid="c", statement="Compute the total of the first ten squares.")
    backend = yes_no_backend([("", "Yes — same problem.")])
    retained, removed = run_virtual(decontaminate([paraphrase], benchmark, backend))
    assert retained == [] and removed[0].benchmark_id == "b"
    assert 0 < removed[0].similarity < 1


def test_ngram_cosine_sanity():
    a, b = ngram_profile("sum of squares"), ngram_profile("sum of squares")
    assert ngram_cosine(a, b) == pytest.approx(1.0)
    assert ngram_cosine(ngram_profile("abc"), ngram_profile("xyz")) == 0.0


# --- solution filtering -----------------------------------------------------------------


def test_filter_cot_expected_answer():
    problem = make_problem(pid="p", answer="10")
    sols = [make_solution(pid="p", answer=a) for a in ["10", "12", "10"]]
    retained = filter_cot_solutions(sols, [problem])
    assert len(retained) == 2
    assert all(s.correct for s in retained)


def test_filter_cot_consensus_label():
    problem = make_problem(pid="p", answer=None, category="no_answer")
    sols = [make_solution(pid="p", answer=a) for a in ["4", "4", "9"]]
    retained = filter_cot_solutions(sols, [problem])
    assert len(retained) == 2
    assert all(s.extracted_answer == "4" for s in retained)


def test_filter_cot_drops_unfinished():
    problem = make_problem(pid="p", answer="1")
    sols = [make_solution(pid="p", answer="1"), make_solution(pid="p", answer=None)]
    assert len(filter_cot_solutions(sols, [problem])) == 1


def test_consensus_tie_breaks_lexicographically():
    assert consensus_label(["b", "a"]) == "a"
    assert consensus_label(["B", "a"]) == "a"  # canonical form decides
    assert consensus_label([None, None]) is None


def test_label_solutions_marks_consensus_minority_wrong():
    problem = make_problem(pid="p", answer=None, category="no_answer")
    sols = [make_solution(pid="p", answer=a) for a in ["7", "7", "3"]]
    labeled = label_solutions(problem, sols)
    assert [s.correct for s in labeled] == [True, True, False]


# --- hardness ---------------------------------------------------------------------------


def test_estimate_hardness_scripted_quarter():
    problem = make_problem(pid="h", answer="5")
    outcomes = iter([True] * 8 + [False] * 24)

    async def generate(p):
        ok = next(outcomes)
        return make_solution(pid=p.id, answer="5" if ok else "0")

    rate = run_virtual(estimate_hardness(problem, generate, n=32))
    assert rate == 0.25


def test_estimate_hardness_all_correct():
    problem = make_problem(pid="h", answer="5")

    async def generate(p):
        return make_solution(pid=p.id, answer="5")

    assert run_virtual(estimate_hardness(problem, generate, n=8)) == 1.0


def test_budget_tiers():
    assert generation_budget(0.9) == 4
    assert generation_budget(0.5) == 4
    assert generation_budget(0.3) == 16
    assert generation_budget(0.1) == 16
    assert generation_budget(0.05) == 32
    assert generation_budget(0.0) == 32


def test_budget_tier_table_on_fixture_pool():
    pool = [0.8, 0.5, 0.49, 0.1, 0.09, 0.0]
    assert [generation_budget(d) for d in pool] == [4, 4, 16, 16, 32, 32]


# --- code-block assessment -----------------------------------------------------------------


def tir_solution(n_blocks, correct=True):
    body = " ".join(f"{BEGIN}\ncode{i}\n{END}" for i in range(n_blocks))
    return make_solution(
        pid="t",
        answer="1" if correct else "0",
        mode=SolutionMode.TIR,
        reasoning_text=f"reasoning {body} \\boxed{{1}}",
        correct=correct,
    )


def test_assess_two_blocks_order_preserved():
    backend = scripted(
        behavior([("novel", 0)], kind="regex", value=r"genuinely new.*Code block:\s*code0"),
        behavior([("significant", 0)], kind="regex", value=r"how important.*Code block:\s*code0"),
        behavior([("verification", 0)], kind="regex", value=r"genuinely new.*Code block:\s*code1"),
        behavior([("trivial", 0)], kind="regex", value=r"how important.*Code block:\s*code1"),
    )
    out = run_virtual(assess_code_blocks(tir_solution(2), backend))
    assert out == [
        CodeBlockAssessment(Novelty.NOVEL, Significance.SIGNIFICANT),
        CodeBlockAssessment(Novelty.VERIFICATION, Significance.TRIVIAL),
    ]


def test_assess_unparseable_marks_block_none():
    backend = scripted(
        behavior([("novel", 0)], kind="contains", value="genuinely new"),
        behavior([("hard to say", 0)], kind="contains", value="how important"),
    )
    out = run_virtual(assess_code_blocks(tir_solution(1), backend))
    assert out == [None]


# --- stage-0 filter ------------------------------------------------------------------------


def A(nov, sig):
    return CodeBlockAssessment(Novelty(nov), Significance(sig))


def stage0_reference(correct, labels):
    """Direct truth-table evaluation of the keep rule."""
    if not correct:
        return False
    n = len(labels)
    if n == 0 or n > 2:
        return False
    if any(nov == "novel" and sig == "significant" for nov, sig in labels):
        return True
    novel_moderate = sum(1 for nov, sig in labels if nov == "novel" and sig == "moderate")
    return novel_moderate > n / 2


LABELS = list(itertools.product(["novel", "verification"], ["significant", "moderate", "trivial"]))


def test_stage0_truth_table_exhaustive_42_cases():
    cases = [[l] for l in LABELS] + [list(pair) for pair in itertools.product(LABELS, repeat=2)]
    assert len(cases) == 42
    for labels in cases:
        solution = tir_solution(len(labels))
        keep, _ = filter_tir_stage0(solution, [A(*l) for l in labels])
        assert keep == stage0_reference(True, labels), labels


def test_stage0_single_novel_significant_kept():
    keep, reason = filter_tir_stage0(tir_solution(1), [A("novel", "significant")])
    assert keep and reason == "kept"


def test_stage0_half_novel_moderate_dropped():
    keep, reason = filter_tir_stage0(
        tir_solution(2), [A("novel", "moderate"), A("verification", "trivial")]
    )
    assert not keep and reason == "insignificant_code"


def test_stage0_three_blocks_dropped_regardless():
    keep, reason = filter_tir_stage0(
        tir_solution(3), [A("novel", "significant")] * 3
    )
    assert not keep and reason == "too_many_blocks"


def test_stage0_incorrect_dropped():
    keep, reason = filter_tir_stage0(tir_solution(1, correct=False), [A("novel", "significant")])
    assert not keep and reason == "incorrect_answer"


# --- stage-N filter -------------------------------------------------------------------------


def test_stageN_keeps_correct_with_code_within_limit():
    keep, reason = filter_tir_stageN(tir_solution(1), requested_limit=1)
    assert keep


def test_stageN_drops_no_code():
    sol = make_solution(pid="t", answer="1", mode=SolutionMode.TIR, reasoning_text="pure text \\boxed{1}", correct=True)
    keep, reason = filter_tir_stageN(sol, requested_limit=2)
    assert not keep and reason == "no_code"


def test_stageN_drops_over_limit():
    keep, reason = filter_tir_stageN(tir_solution(3), requested_limit=2)
    assert not keep and reason == "limit_exceeded"


def test_stageN_respects_violation_flag():
    sol = tir_solution(1)
    sol = type(sol)(**{**sol.__dict__, "limit_violation": True})
    keep, reason = filter_tir_stageN(sol, requested_limit=2)
    assert not keep and reason == "limit_exceeded"


def test_stageN_does_not_apply_novelty_filters():
    # a verification/trivial block still passes stage N
    keep, _ = filter_tir_stageN(tir_solution(1), requested_limit=1)
    assert keep


# --- hard subset ------------------------------------------------------------------------------


def test_hard_problem_predicate():
    assert is_hard_problem(make_problem(difficulty=0.2))
    assert not is_hard_problem(make_problem(difficulty=0.31))
    assert not is_hard_problem(make_problem(difficulty=None))


def test_hard_subset_solutions_by_tokens():
    short = make_solution(pid="p", answer="1", token_count=4999)
    long_ = make_solution(pid="p", answer="1", token_count=5000)
    assert hard_subset_solutions([short, long_]) == [long_]


def test_consensus_label_order_independent():
    import itertools as it

    pools = [
        ["1/2", "0.5", "3", "3"],        # class tie broken lexicographically
        ["0.5", "1/2", "4"],             # mixed renderings of one class
        ["b", "a", "a", "b"],
        ["2", "2.0", "02"],
    ]
    for pool in pools:
        labels = {consensus_label(list(perm)) for perm in set(it.permutations(pool))}
        assert len(labels) == 1, (pool, labels)
