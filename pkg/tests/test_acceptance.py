"""Acceptance gate.

One test per acceptance criterion; the ``pytest -v`` status line for each
test is the criterion's pass/fail record, and each test also prints an
explicit PASS line on success so ``-rA`` output carries the verdicts.
"""

from __future__ import annotations

import json
import random
import time
from collections import Counter

import pytest

from chunk_props import check_document
from conftest import FIXTURES, make_exam, make_question, mock_backend_spec, write_mock_fixture
from examkit.augment import (
    build_shuffle_set,
    expand_system_prompts,
    harvest_bias_outputs,
    pair_multi_llm,
    qa_from_markdown,
    GeneratedResponse,
)
from examkit.chunking import (
    ChunkConfig,
    chunk_document,
    corpus_stats,
    render_stats_table,
    rendered_text,
    split_oversized,
)
from examkit.cli import main as cli_main
from examkit.evaluate import ExtractedAnswer, METHOD_ANCHOR, METHOD_NONE, extract_answer, score_exam
from examkit.exams import ALL_PERMUTATIONS, apply_permutation, shuffle_choices
from examkit.gateway import (
    DEFAULT_MAX_OUTPUT_TOKENS,
    EVAL_SEED,
    EVAL_TEMPERATURE,
    ChatRequest,
    request_cache_key,
)
from examkit.prompts import COT, VARIANTS, render_question_block
from examkit.tokenizers import get_token_counter
from genmd import generate_markdown

GOLDEN_PRIMARY = [
    (
        "# Example Heading 1\n"
        "\n"
        "## Example Heading 1.1\n"
        "Text under example heading 1.1.\n"
        "\n"
        "### Example Heading 1.1.1\n"
        "Details under example heading 1.1.1.\n"
        "\n"
        "### Example Heading 1.1.2\n"
        "Details under example heading 1.1.2."
    ),
    (
        "# Example Heading 1\n"
        "\n"
        "## Example Heading 1.2\n"
        "Text under example heading 1.2.\n"
        "\n"
        "### Example Heading 1.2.1\n"
        "Details under example heading 1.2.1.\n"
        "\n"
        "### Example Heading 1.2.2\n"
        "Details under example heading 1.2.2."
    ),
]
GOLDEN_SUB_CHUNKS = [
    "# Example Heading 1\n\n## Example Heading 1.2\nText under example heading 1.2.",
    (
        "# Example Heading 1\n\n## Example Heading 1.2\n\n"
        "### Example Heading 1.2.1\nDetails under example heading 1.2.1."
    ),
    (
        "# Example Heading 1\n\n## Example Heading 1.2\n\n"
        "### Example Heading 1.2.2\nDetails under example heading 1.2.2."
    ),
]


def verdict(name: str) -> None:
    print(f"PASS: {name}")


def test_c1_two_step_chunking_reproduces_worked_example(nested_headings_text: str) -> None:
    """C1: primary split gives the two known chunks byte-exact; a budget set
    just below the second chunk's size splits it into the three known
    sub-chunks byte-exact, each under budget."""
    counter = get_token_counter("cp3")
    ample = ChunkConfig(max_tokens=10_000)
    chunks = chunk_document(nested_headings_text, ample, doc_id="worked")
    assert [rendered_text(c) for c in chunks] == GOLDEN_PRIMARY

    budget = max(counter(text) for text in GOLDEN_SUB_CHUNKS)
    assert budget < chunks[1].token_count
    subs = split_oversized(chunks[1], ChunkConfig(max_tokens=budget))
    assert [rendered_text(s) for s in subs] == GOLDEN_SUB_CHUNKS
    assert all(s.token_count <= budget for s in subs)
    assert subs[1].context == ((1, "Example Heading 1"), (2, "Example Heading 1.2"))
    verdict("C1 two-step chunking reproduces the worked example byte-exactly")


def test_c2_chunking_invariants_hold_on_1000_generated_documents() -> None:
    """C2: over 1000 generated markdown documents and varied configs, the
    chunker keeps determinism, budget, coverage, ordering, and context
    invariants, in under 30 seconds."""
    rng = random.Random(13)
    started = time.monotonic()
    checked = 0
    for case in range(1000):
        text = generate_markdown(rng)
        config = ChunkConfig(
            max_tokens=rng.choice((16, 24, 40, 64, 128, 256)),
            primary_split_level=rng.choice((1, 2, 2, 2, 3)),
        )
        violations = check_document(text, config)
        assert not violations, f"case {case}: {violations[:4]}"
        checked += 1
    elapsed = time.monotonic() - started
    assert checked == 1000
    assert elapsed < 30, f"invariant sweep took {elapsed:.1f}s"
    verdict(f"C2 1000-document invariant sweep clean in {elapsed:.1f}s")


def test_c3_answer_extraction_handles_every_styled_output(cot_style_outputs) -> None:
    """C3: all nine styled reasoning outputs extract to label 2 via the
    anchor phrase; text without the scaffold extracts to none."""
    assert len(cot_style_outputs) == 9
    for style, text in cot_style_outputs.items():
        extracted = extract_answer(text)
        assert extracted.label == 2, style
        assert extracted.method == METHOD_ANCHOR, style
    assert extract_answer("คำตอบคือข้อสอง").label is None
    verdict("C3 anchor extraction resolves all 9 styled outputs to label 2")


def test_c4_scoring_applies_overall_and_module_thresholds() -> None:
    """C4: exact-match scoring with pass/fail at the overall threshold and
    per-module thresholds; a failed module fails a passing overall score."""

    def answers(exam, correct_ids):
        out = {}
        for question in exam.questions:
            if question.id in correct_ids:
                out[question.id] = ExtractedAnswer(question.answer_key, METHOD_ANCHOR, "")
            else:
                out[question.id] = ExtractedAnswer(question.answer_key % 4 + 1, METHOD_ANCHOR, "")
        return out

    exam = make_exam(n_questions=50, overall=0.7)
    passing = score_exam(exam, answers(exam, {q.id for q in exam.questions[:36]}))
    assert passing.overall_pct == pytest.approx(0.72) and passing.passed
    failing = score_exam(exam, answers(exam, {q.id for q in exam.questions[:34]}))
    assert failing.overall_pct == pytest.approx(0.68) and not failing.passed

    small = make_exam(n_questions=25, overall=0.7)
    high = score_exam(small, answers(small, {q.id for q in small.questions[:21]}))
    assert high.overall_pct == pytest.approx(0.84) and high.passed

    dual = make_exam(n_questions=10, overall=0.7, modules={"ethics": 0.8}, tag_every={"ethics": 2})
    tagged = [q.id for q in dual.questions if q.module_tag]
    untagged = [q.id for q in dual.questions if not q.module_tag]
    report = score_exam(dual, answers(dual, set(tagged[:3]) | set(untagged)))
    assert report.overall_pct == pytest.approx(0.8)
    assert report.module_pct["ethics"] == pytest.approx(0.6)
    assert not report.passed

    untestable = make_exam(n_questions=10, overall=0.5, modules={"derivatives": 0.5})
    perfect = score_exam(untestable, answers(untestable, {q.id for q in untestable.questions}))
    assert perfect.overall_pct == pytest.approx(1.0) and not perfect.passed
    verdict("C4 scoring enforces overall and per-module passing thresholds")


def test_c5_choice_shuffling_is_uniform_and_key_preserving() -> None:
    """C5: seeded shuffling covers all 24 permutations near-uniformly
    (within 4 sigma over 24000 draws), remaps the answer key correctly for
    every permutation, and permutations invert cleanly."""
    question = make_question()
    correct_text = question.choice_text(question.answer_key)
    for perm in ALL_PERMUTATIONS:
        shuffled = apply_permutation(question, perm)
        assert shuffled.choice_text(shuffled.answer_key) == correct_text
        inverse = perm.inverse()
        for slot in (1, 2, 3, 4):
            assert inverse.image(perm.image(slot)) == slot

    n = 24_000
    counts = Counter(shuffle_choices(question, seed=s)[1].mapping for s in range(n))
    assert len(counts) == 24
    expected = n / 24
    sigma = (n * (1 / 24) * (23 / 24)) ** 0.5
    worst = max(abs(count - expected) for count in counts.values())
    assert worst <= 4 * sigma, f"worst deviation {worst:.1f} > 4 sigma ({4 * sigma:.1f})"
    verdict(f"C5 shuffle uniform over 24 permutations (worst dev {worst:.0f} <= {4 * sigma:.0f})")


def test_c6_augmentation_counting_oracles(nested_headings_text: str) -> None:
    """C6: each augmentation procedure produces exactly the record counts
    its inputs dictate: bias 1 SFT + 3 DPO per fully-reasoned question;
    prompts x3 variants; shuffle n per question; mdqa one per titled
    section; pairing |accepted| x |rejected| capped at 4."""
    exam = make_exam(n_questions=10)
    reasons = {1: "เหตุผลหนึ่ง", 2: "เหตุผลสอง", 3: "เหตุผลสาม", 4: "เหตุผลสี่"}
    total_sft, total_dpo = 0, 0
    for question in exam.questions:
        sft, dpo = harvest_bias_outputs(question, reasons)
        assert extract_answer(sft[0].assistant).label == question.answer_key
        total_sft += len(sft)
        total_dpo += len(dpo)
    assert (total_sft, total_dpo) == (10, 30)

    expanded = expand_system_prompts(
        harvest_bias_outputs(exam.questions[0], reasons)[0][0], list(VARIANTS.values())
    )
    assert len(expanded) == 3

    shuffled = build_shuffle_set(make_question(), n=4, seed=5)
    assert len(shuffled) == 4
    for record in shuffled:
        assert extract_answer(record.assistant).label is not None

    qa = qa_from_markdown(chunk_document(nested_headings_text, ChunkConfig(max_tokens=10_000)))
    assert len(qa) == 6

    question = make_question()
    right = f"ดังนั้น คำตอบที่ถูกต้องคือ: {question.answer_key}"
    wrong = "ดังนั้น คำตอบที่ถูกต้องคือ: 3"
    responses = [
        GeneratedResponse("a", COT, right),
        GeneratedResponse("b", COT, right),
        GeneratedResponse("a", COT, wrong),
        GeneratedResponse("b", COT, wrong),
        GeneratedResponse("b", COT, "ตอบไม่ได้"),
    ]
    assert len(pair_multi_llm(question, responses, pair_cap=100)) == 6
    capped = pair_multi_llm(question, responses)
    assert len(capped) == 4
    assert capped[0].meta["chosen_backend"] != capped[0].meta["rejected_backend"]
    verdict("C6 augmentation record counts match their oracles")


def test_c7_cli_eval_dry_run_is_deterministic(tmp_path, capsys) -> None:
    """C7: a full CLI eval of a 50-question exam against a hash-keyed mock
    backend prints a 72% pass and writes byte-identical report and audit
    files across two runs."""
    from examkit.exams import save_exam

    exam = make_exam(n_questions=50, overall=0.7)
    exam_path = tmp_path / "exam.json"
    save_exam(exam, exam_path)

    fixture = tmp_path / "mock.json"
    backend = mock_backend_spec(fixture, backend_id="mock-a")
    wrong_ids = {q.id for q in exam.questions[36:]}
    entries = {}
    for question in exam.questions:
        request = ChatRequest(
            system=VARIANTS[COT].system_text,
            user=render_question_block(question),
            temperature=EVAL_TEMPERATURE,
            max_output_tokens=DEFAULT_MAX_OUTPUT_TOKENS,
            seed=EVAL_SEED,
        )
        label = question.answer_key if question.id not in wrong_ids else question.answer_key % 4 + 1
        entries[request_cache_key(request, backend)] = (
            f"คิดตามขั้นตอน\nดังนั้น คำตอบที่ถูกต้องคือ: {label}"
        )
    write_mock_fixture(fixture, entries)
    backends_path = tmp_path / "backends.json"
    backends_path.write_text(
        json.dumps([{"id": "mock-a", "endpoint": f"mock:{fixture}", "model_name": "mock-a-model"}]),
        encoding="utf-8",
    )

    outputs = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        code = cli_main(
            [
                "eval",
                "--exam", str(exam_path),
                "--backends", str(backends_path),
                "--backend", "mock-a",
                "--out", str(out),
            ]
        )
        assert code == 0
        outputs.append(
            (
                (out / "report_P1_mock-a_cot.json").read_bytes(),
                (out / "audit_P1_mock-a_cot.jsonl").read_bytes(),
            )
        )
    assert outputs[0] == outputs[1]
    printed = capsys.readouterr().out
    assert "72% (pass)" in printed
    report = json.loads(outputs[0][0])
    assert report["overall_pct"] == 0.72
    assert report["passed"] is True
    verdict("C7 CLI eval dry run: 72% pass, byte-identical across two runs")


def test_c8_corpus_stats_totals_and_table() -> None:
    """C8: per-label body token totals are exact under the default counter,
    and the rendered table is label rows plus a total row."""
    sections = {
        "P1": "ก" * 120,  # 40 tokens
        "P2": "ข" * 63,  # 21 tokens
        "P3": "ค" * 200,  # ceil(200/3) = 67 tokens
    }
    chunks = []
    for label, body in sections.items():
        config = ChunkConfig(max_tokens=10_000, doc_label=label)
        chunks.extend(chunk_document(body, config, doc_id=label.lower()))
    stats = corpus_stats(chunks)
    assert stats == {"P1": 40, "P2": 21, "P3": 67, "total": 128}

    table = render_stats_table(stats)
    lines = table.split("\n")
    assert lines[0].split() == ["Label", "Tokens"]
    assert [line.split()[0] for line in lines[1:]] == ["P1", "P2", "P3", "Total"]
    assert lines[-1].split() == ["Total", "128"]
    verdict("C8 corpus stats totals exact and table well-formed")
