"""Shared builders: synthetic exams, questions, and mock backend plumbing."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from examkit.exams import Choice, Exam, ExamQuestion, PassingRule

FIXTURES = Path(__file__).parent / "fixtures"

# The worked four-choice question used across prompt and extraction tests.
PORTFOLIO_STEM = (
    "ผู้ลงทุนจัดสรรเงินลงทุนในหลักทรัพย์ A 40% และที่เหลือลงทุนในหลักทรัพย์ B "
    "โดยหลักทรัพย์ A มีอัตราผลตอบแทนที่คาดหวังเท่ากับ 30% และหลักทรัพย์ B "
    "มีอัตราผลตอบแทนที่คาดหวังเท่ากับ 24% อัตราผลตอบแทนที่คาดหวังของกลุ่มหลักทรัพย์นี้เป็นเท่าใด"
)
PORTFOLIO_CHOICES = ("24.0%", "26.4%", "27.6%", "30.0%")
PORTFOLIO_KEY = 2


def make_question(
    *,
    qid: str = "q1",
    stem: str = PORTFOLIO_STEM,
    choices: tuple[str, str, str, str] = PORTFOLIO_CHOICES,
    answer_key: int = PORTFOLIO_KEY,
    module_tag: str | None = None,
    level: str = "P1",
) -> ExamQuestion:
    return ExamQuestion(
        id=qid,
        stem=stem,
        choices=tuple(Choice(i + 1, text) for i, text in enumerate(choices)),
        answer_key=answer_key,
        module_tag=module_tag,
        level=level,
    )


def make_exam(
    *,
    n_questions: int = 50,
    level: str = "P1",
    overall: float = 0.7,
    modules: dict[str, float] | None = None,
    tag_every: dict[str, int] | None = None,
    title: str = "Practice exam",
) -> Exam:
    """``tag_every`` maps a module tag to a stride: question i gets the tag
    when ``i % stride == 0``."""
    questions = []
    for i in range(n_questions):
        tag = None
        for candidate, stride in (tag_every or {}).items():
            if i % stride == 0:
                tag = candidate
                break
        questions.append(
            make_question(
                qid=f"q{i + 1:03d}",
                stem=f"ข้อ {i + 1}: {PORTFOLIO_STEM}",
                answer_key=(i % 4) + 1,
                module_tag=tag,
                level=level,
            )
        )
    return Exam(
        level=level,
        title=title,
        questions=tuple(questions),
        passing_rule=PassingRule(overall, modules or {}),
    )


def portfolio_question(**overrides) -> ExamQuestion:
    return make_question(**overrides)


@pytest.fixture
def nested_headings_text() -> str:
    return (FIXTURES / "nested_headings.md").read_text(encoding="utf-8")


@pytest.fixture
def cot_style_outputs() -> dict[str, str]:
    with open(FIXTURES / "cot_style_outputs.json", encoding="utf-8") as fh:
        return json.load(fh)


def write_mock_fixture(path: Path, entries: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, ensure_ascii=False, indent=1)


def mock_backend_spec(fixture_path: Path, backend_id: str = "mock-a", **overrides):
    from examkit.gateway import BackendSpec

    kwargs = {
        "id": backend_id,
        "endpoint": f"mock:{fixture_path}",
        "model_name": f"{backend_id}-model",
    }
    kwargs.update(overrides)
    return BackendSpec(**kwargs)
