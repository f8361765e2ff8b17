"""Exam evaluation: prompt rendering, answer extraction, scoring, reports.

Extraction anchors on the closing phrase the CoT system prompt demands,
taking the last occurrence so intermediate reasoning that happens to use
the phrase never wins over the final answer.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .exams import Exam, ExamQuestion
from .gateway import (
    DEFAULT_MAX_OUTPUT_TOKENS,
    EVAL_SEED,
    EVAL_TEMPERATURE,
    BackendSpec,
    ChatRequest,
    GatewayError,
    LlmGateway,
    request_cache_key,
)
from .prompts import PromptVariant, render_question_block

ANCHOR = "ดังนั้น คำตอบที่ถูกต้องคือ:"
FALLBACK_ANCHOR = "คำตอบที่ถูกต้องคือ:"

METHOD_ANCHOR = "anchor"
METHOD_FALLBACK = "fallback_regex"
METHOD_NONE = "none"

# After the anchor: skip whitespace and markdown formatting (bold/italic
# markers, stray colons), then take one digit 1-4.  Anything after the
# digit (a closing parenthesis, the choice text) is ignored.
_LABEL_AFTER_ANCHOR = re.compile(r"[\s*_:]*([1-4])")


class UnknownQuestionId(KeyError):
    pass


@dataclass(frozen=True)
class ExtractedAnswer:
    label: int | None
    method: str
    raw_span: str

    def to_dict(self) -> dict:
        return {"label": self.label, "method": self.method, "raw_span": self.raw_span}


def extract_answer(text: str) -> ExtractedAnswer:
    """Total function from free-form model output to a label or ``none``."""
    for anchor, method in ((ANCHOR, METHOD_ANCHOR), (FALLBACK_ANCHOR, METHOD_FALLBACK)):
        index = text.rfind(anchor)
        if index < 0:
            continue
        tail = text[index + len(anchor) :]
        match = _LABEL_AFTER_ANCHOR.match(tail)
        if match:
            span = text[index : index + len(anchor) + match.end()]
            return ExtractedAnswer(int(match.group(1)), method, span)
    return ExtractedAnswer(None, METHOD_NONE, "")


def render_exam_prompt(question: ExamQuestion, variant: PromptVariant) -> tuple[str, str]:
    """(system, user) for one question under one prompt variant."""
    return variant.system_text, render_question_block(question)


@dataclass(frozen=True)
class QuestionResult:
    question_id: str
    extracted: ExtractedAnswer
    correct: bool
    module_tag: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "extracted": self.extracted.to_dict(),
            "correct": self.correct,
            "module_tag": self.module_tag,
            "error": self.error,
        }


@dataclass
class ExamReport:
    exam_level: str
    backend_id: str
    variant_id: str
    results: list[QuestionResult]
    overall_pct: float
    module_pct: dict[str, float]
    passed: bool

    def to_dict(self) -> dict:
        return {
            "exam_level": self.exam_level,
            "backend_id": self.backend_id,
            "variant_id": self.variant_id,
            "overall_pct": self.overall_pct,
            "module_pct": dict(sorted(self.module_pct.items())),
            "passed": self.passed,
            "results": [r.to_dict() for r in self.results],
        }


def score_exam(
    exam: Exam,
    answers: Mapping[str, ExtractedAnswer],
    backend_id: str = "",
    variant_id: str = "",
    errors: Mapping[str, str] | None = None,
) -> ExamReport:
    """Exact-match scoring plus the exam's overall and module thresholds.

    An unextractable answer (method ``none``) counts as incorrect; a module
    threshold naming a tag no question carries can never be met.
    """
    known = {q.id for q in exam.questions}
    unknown = set(answers) - known
    if unknown:
        raise UnknownQuestionId(f"answers for unknown question ids: {sorted(unknown)}")
    missing = known - set(answers)
    if missing:
        raise ValueError(f"answers missing for question ids: {sorted(missing)}")

    errors = errors or {}
    results = []
    module_totals: dict[str, int] = {}
    module_correct: dict[str, int] = {}
    n_correct = 0
    for question in exam.questions:
        extracted = answers[question.id]
        correct = extracted.label == question.answer_key
        n_correct += correct
        if question.module_tag:
            module_totals[question.module_tag] = module_totals.get(question.module_tag, 0) + 1
            module_correct[question.module_tag] = (
                module_correct.get(question.module_tag, 0) + correct
            )
        results.append(
            QuestionResult(
                question_id=question.id,
                extracted=extracted,
                correct=correct,
                module_tag=question.module_tag,
                error=errors.get(question.id),
            )
        )

    overall_pct = n_correct / len(exam.questions)
    module_pct = {tag: module_correct[tag] / total for tag, total in module_totals.items()}
    passed = overall_pct >= exam.passing_rule.overall_threshold
    for tag, threshold in exam.passing_rule.module_thresholds.items():
        if tag not in module_pct or module_pct[tag] < threshold:
            passed = False
    return ExamReport(
        exam_level=exam.level,
        backend_id=backend_id,
        variant_id=variant_id,
        results=results,
        overall_pct=overall_pct,
        module_pct=module_pct,
        passed=passed,
    )


def run_eval(
    exam: Exam,
    backend: BackendSpec,
    variant: PromptVariant,
    gateway: LlmGateway,
    audit_path=None,
) -> ExamReport:
    """Evaluate every question at temperature 0 and score the exam.

    Per-question gateway failures degrade to an unextractable answer with
    the error noted, so one flaky question never aborts the run.  When
    ``audit_path`` is set, the raw exchange is appended there as JSONL.
    """
    answers: dict[str, ExtractedAnswer] = {}
    errors: dict[str, str] = {}
    audit_records = []
    for question in exam.questions:
        system, user = render_exam_prompt(question, variant)
        request = ChatRequest(
            system=system,
            user=user,
            temperature=EVAL_TEMPERATURE,
            max_output_tokens=DEFAULT_MAX_OUTPUT_TOKENS,
            seed=EVAL_SEED,
        )
        text = ""
        try:
            text = gateway.complete(request, backend).text
        except GatewayError as exc:
            errors[question.id] = str(exc)
        extracted = extract_answer(text)
        answers[question.id] = extracted
        audit_records.append(
            {
                "question_id": question.id,
                "backend_id": backend.id,
                "variant": variant.id,
                "request_hash": request_cache_key(request, backend),
                "response_text": text,
                "extracted": extracted.to_dict(),
                "correct": extracted.label == question.answer_key,
                "error": errors.get(question.id),
            }
        )
    if audit_path is not None:
        with open(audit_path, "w", encoding="utf-8", newline="\n") as fh:
            for record in audit_records:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    return score_exam(exam, answers, backend_id=backend.id, variant_id=variant.id, errors=errors)


FORMAT_TABLE = "table"
FORMAT_CSV = "csv"
_LEVEL_COLUMNS = ("P1", "P2", "P3")


def _pct_cell(pct: float, passed: bool) -> str:
    return f"{round(pct * 100)}% ({'pass' if passed else 'fail'})"


def emit_report(reports: Sequence[ExamReport], format: str = FORMAT_TABLE) -> str:
    """One row per (backend, variant); level columns hold score and verdict."""
    rows: dict[tuple[str, str], dict[str, tuple[float, bool]]] = {}
    for report in reports:
        cell = (report.overall_pct, report.passed)
        rows.setdefault((report.backend_id, report.variant_id), {})[report.exam_level] = cell

    if format == FORMAT_CSV:
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        header = ["backend", "variant"]
        for level in _LEVEL_COLUMNS:
            header.extend([level, f"{level}_passed"])
        writer.writerow(header)
        for (backend_id, variant_id), cells in sorted(rows.items()):
            row = [backend_id, variant_id]
            for level in _LEVEL_COLUMNS:
                if level in cells:
                    pct, passed = cells[level]
                    row.extend([f"{round(pct * 100)}%", str(passed).lower()])
                else:
                    row.extend(["", ""])
            writer.writerow(row)
        return buffer.getvalue()

    if format != FORMAT_TABLE:
        raise ValueError(f"unknown report format {format!r}")
    table_rows = []
    for (backend_id, variant_id), cells in sorted(rows.items()):
        rendered = [backend_id, variant_id]
        for level in _LEVEL_COLUMNS:
            rendered.append(_pct_cell(*cells[level]) if level in cells else "-")
        table_rows.append(rendered)
    header = ["Backend", "Variant", *_LEVEL_COLUMNS]
    widths = [len(h) for h in header]
    for row in table_rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    lines = ["  ".join(f"{cell:<{w}}" for cell, w in zip(header, widths)).rstrip()]
    for row in table_rows:
        lines.append("  ".join(f"{cell:<{w}}" for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines)
