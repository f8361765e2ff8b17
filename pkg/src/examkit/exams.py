"""Multiple-choice exam data model: loading, validation, choice shuffling.

Exams are JSON documents with a passing rule (an overall threshold plus
optional per-module thresholds) and four-choice questions labeled 1..4.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field, replace
from typing import Mapping

LEVELS = ("P1", "P2", "P3")

SHUFFLE_PRNG = "mt19937"


class ExamError(Exception):
    """Base class for exam schema problems; carries the offending id."""

    def __init__(self, message: str, question_id: str | None = None):
        super().__init__(message)
        self.question_id = question_id


class SchemaViolation(ExamError):
    pass


class DuplicateQuestionId(ExamError):
    pass


class WrongChoiceCount(ExamError):
    pass


class InvalidAnswerKey(ExamError):
    pass


@dataclass(frozen=True)
class Choice:
    label: int
    text: str


@dataclass(frozen=True)
class ExamQuestion:
    id: str
    stem: str
    choices: tuple[Choice, ...]
    answer_key: int
    module_tag: str | None = None
    level: str = "P1"

    def choice_text(self, label: int) -> str:
        for choice in self.choices:
            if choice.label == label:
                return choice.text
        raise KeyError(f"question {self.id!r} has no choice {label}")


@dataclass(frozen=True)
class PassingRule:
    overall_threshold: float
    module_thresholds: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Exam:
    level: str
    title: str
    questions: tuple[ExamQuestion, ...]
    passing_rule: PassingRule


@dataclass(frozen=True)
class ChoicePermutation:
    """A bijection on labels 1..4; ``mapping[i - 1]`` is the image of i."""

    mapping: tuple[int, int, int, int]

    def image(self, label: int) -> int:
        return self.mapping[label - 1]

    def inverse(self) -> "ChoicePermutation":
        inv = [0, 0, 0, 0]
        for src, dst in enumerate(self.mapping, start=1):
            inv[dst - 1] = src
        return ChoicePermutation(tuple(inv))

    @property
    def is_identity(self) -> bool:
        return self.mapping == (1, 2, 3, 4)


ALL_PERMUTATIONS: tuple[ChoicePermutation, ...] = tuple(
    ChoicePermutation(p) for p in itertools.permutations((1, 2, 3, 4))
)


def apply_permutation(question: ExamQuestion, perm: ChoicePermutation) -> ExamQuestion:
    """Relabel choices under ``perm`` and remap the answer key to match."""
    by_new_label = {perm.image(choice.label): choice.text for choice in question.choices}
    choices = tuple(Choice(label, by_new_label[label]) for label in (1, 2, 3, 4))
    return replace(question, choices=choices, answer_key=perm.image(question.answer_key))


def shuffle_choices(question: ExamQuestion, seed: int) -> tuple[ExamQuestion, ChoicePermutation]:
    """Apply a permutation drawn uniformly from all 24, seeded by ``seed``."""
    perm = ALL_PERMUTATIONS[random.Random(seed).randrange(len(ALL_PERMUTATIONS))]
    return apply_permutation(question, perm), perm


def _question_from_dict(raw: dict, index: int, level: str) -> ExamQuestion:
    if not isinstance(raw, dict):
        raise SchemaViolation(f"question #{index} is not an object")
    qid = raw.get("id")
    if not isinstance(qid, str) or not qid:
        raise SchemaViolation(f"question #{index} has no id")
    stem = raw.get("stem")
    if not isinstance(stem, str) or not stem:
        raise SchemaViolation(f"question {qid!r} has no stem", qid)
    choices = raw.get("choices")
    if not isinstance(choices, list) or len(choices) != 4:
        raise WrongChoiceCount(
            f"question {qid!r} has {0 if not isinstance(choices, list) else len(choices)} choices, expected 4",
            qid,
        )
    if not all(isinstance(c, str) and c for c in choices):
        raise SchemaViolation(f"question {qid!r} has a non-string or empty choice", qid)
    answer_key = raw.get("answer_key")
    if not isinstance(answer_key, int) or isinstance(answer_key, bool) or not 1 <= answer_key <= 4:
        raise InvalidAnswerKey(f"question {qid!r} answer_key {answer_key!r} not in 1..4", qid)
    module_tag = raw.get("module_tag")
    if module_tag is not None and not isinstance(module_tag, str):
        raise SchemaViolation(f"question {qid!r} module_tag must be a string", qid)
    return ExamQuestion(
        id=qid,
        stem=stem,
        choices=tuple(Choice(i + 1, text) for i, text in enumerate(choices)),
        answer_key=answer_key,
        module_tag=module_tag,
        level=level,
    )


def exam_from_dict(raw: dict) -> Exam:
    if not isinstance(raw, dict):
        raise SchemaViolation("exam document is not an object")
    level = raw.get("level")
    if level not in LEVELS:
        raise SchemaViolation(f"level {level!r} not one of {LEVELS}")
    title = raw.get("title")
    if not isinstance(title, str):
        raise SchemaViolation("title must be a string")
    rule_raw = raw.get("passing_rule")
    if not isinstance(rule_raw, dict) or "overall" not in rule_raw:
        raise SchemaViolation("passing_rule.overall is required")
    overall = rule_raw["overall"]
    if not isinstance(overall, (int, float)) or not 0 <= overall <= 1:
        raise SchemaViolation(f"passing_rule.overall {overall!r} not in [0, 1]")
    modules_raw = rule_raw.get("modules", {})
    if not isinstance(modules_raw, dict):
        raise SchemaViolation("passing_rule.modules must be an object")
    for tag, threshold in modules_raw.items():
        if not isinstance(threshold, (int, float)) or not 0 <= threshold <= 1:
            raise SchemaViolation(f"module threshold {tag!r}={threshold!r} not in [0, 1]")
    questions_raw = raw.get("questions")
    if not isinstance(questions_raw, list) or not questions_raw:
        raise SchemaViolation("questions must be a non-empty list")
    questions = []
    seen: set[str] = set()
    for index, q_raw in enumerate(questions_raw):
        question = _question_from_dict(q_raw, index, level)
        if question.id in seen:
            raise DuplicateQuestionId(f"duplicate question id {question.id!r}", question.id)
        seen.add(question.id)
        questions.append(question)
    return Exam(
        level=level,
        title=title,
        questions=tuple(questions),
        passing_rule=PassingRule(float(overall), {k: float(v) for k, v in modules_raw.items()}),
    )


def load_exam(path) -> Exam:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"{path}: not valid JSON ({exc})") from exc
    return exam_from_dict(raw)


def exam_to_dict(exam: Exam) -> dict:
    doc: dict = {
        "level": exam.level,
        "title": exam.title,
        "passing_rule": {"overall": exam.passing_rule.overall_threshold},
        "questions": [],
    }
    if exam.passing_rule.module_thresholds:
        doc["passing_rule"]["modules"] = dict(exam.passing_rule.module_thresholds)
    for question in exam.questions:
        q_doc: dict = {
            "id": question.id,
            "stem": question.stem,
            "choices": [c.text for c in sorted(question.choices, key=lambda c: c.label)],
            "answer_key": question.answer_key,
        }
        if question.module_tag is not None:
            q_doc["module_tag"] = question.module_tag
        doc["questions"].append(q_doc)
    return doc


def save_exam(exam: Exam, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(exam_to_dict(exam), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class Violation:
    code: str
    question_id: str | None
    detail: str


def validate_exam(exam: Exam) -> list[Violation]:
    """Collect every invariant breach as data instead of raising."""
    violations: list[Violation] = []
    seen: set[str] = set()
    tags = {q.module_tag for q in exam.questions if q.module_tag}
    if exam.level not in LEVELS:
        violations.append(Violation("InvalidLevel", None, f"level {exam.level!r}"))
    if not 0 <= exam.passing_rule.overall_threshold <= 1:
        violations.append(
            Violation("BadThreshold", None, f"overall {exam.passing_rule.overall_threshold!r}")
        )
    for tag, threshold in exam.passing_rule.module_thresholds.items():
        if not 0 <= threshold <= 1:
            violations.append(Violation("BadThreshold", None, f"module {tag!r}={threshold!r}"))
        if tag not in tags:
            violations.append(
                Violation(
                    "UnsatisfiableModuleThreshold",
                    None,
                    f"no question carries module_tag {tag!r}",
                )
            )
    for question in exam.questions:
        if question.id in seen:
            violations.append(Violation("DuplicateQuestionId", question.id, "id reused"))
        seen.add(question.id)
        labels = sorted(c.label for c in question.choices)
        if labels != [1, 2, 3, 4]:
            violations.append(
                Violation("WrongChoiceCount", question.id, f"choice labels {labels}")
            )
        if any(not c.text for c in question.choices):
            violations.append(Violation("EmptyChoice", question.id, "empty choice text"))
        if not any(c.label == question.answer_key for c in question.choices):
            violations.append(
                Violation("InvalidAnswerKey", question.id, f"answer_key {question.answer_key}")
            )
        if not question.stem:
            violations.append(Violation("EmptyStem", question.id, "empty stem"))
        if question.level != exam.level:
            violations.append(
                Violation("LevelMismatch", question.id, f"question level {question.level!r}")
            )
    return violations
