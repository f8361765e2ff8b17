"""System prompt variants and the shared question rendering.

The three variant texts are fixed templates; downstream format validation
and answer extraction depend on their scaffold phrases, so they must not
be edited casually.
"""

from __future__ import annotations

from dataclasses import dataclass

from .exams import ExamQuestion

COT = "cot"
ZERO_SHOT_BIAS = "zero_shot_bias"
ZERO_SHOT_MULTI_LLM = "zero_shot_multi_llm"

# Scaffold phrases the answer formats are built around.  ANSWER_PREFIX opens
# a zero-shot answer; REASON_MARKER introduces its justification section.
ANSWER_PREFIX = "คำตอบที่ถูกต้องคือ: "
REASON_MARKER = "เหตุผล:"

COT_SYSTEM = (
    "You are a Certified Thai Investment Consultant (IC) taking a multiple choice exam.\n"
    'Think step-by-step and then finish your answer with "ดังนั้น คำตอบที่ถูกต้องคือ: " '
    "followed by the correct choice name (1, 2, 3, or 4)."
)

ZERO_SHOT_BIAS_SYSTEM = (
    "You are a Certified Thai Investment Consultant (IC) taking a test to evaluate your knowledge.\n"
    "Multiple choices question along with four possible answers (1, 2, 3, and 4) will be given to you.\n"
    "Your task is to indicate the correct answer and provide the backup reason.\n"
    'Begin your answer with "คำตอบที่ถูกต้องคือ: " followed by the correct choice and then '
    'finish your answer with "\\n\\nเหตุผล:\\n".'
)

ZERO_SHOT_MULTI_LLM_SYSTEM = (
    "You are a Certified Thai Investment Consultant (IC) taking a test to evaluate your knowledge.\n"
    "Multiple choices question along with four possible answers (1, 2, 3, and 4) will be given to you.\n"
    "Your task is to indicate the correct answer and provide the backup reason."
)


@dataclass(frozen=True)
class PromptVariant:
    id: str
    system_text: str


VARIANTS: dict[str, PromptVariant] = {
    COT: PromptVariant(COT, COT_SYSTEM),
    ZERO_SHOT_BIAS: PromptVariant(ZERO_SHOT_BIAS, ZERO_SHOT_BIAS_SYSTEM),
    ZERO_SHOT_MULTI_LLM: PromptVariant(ZERO_SHOT_MULTI_LLM, ZERO_SHOT_MULTI_LLM_SYSTEM),
}


def get_variant(variant_id: str) -> PromptVariant:
    try:
        return VARIANTS[variant_id]
    except KeyError:
        known = ", ".join(sorted(VARIANTS))
        raise KeyError(f"unknown prompt variant {variant_id!r} (known: {known})") from None


def render_question_block(question: ExamQuestion) -> str:
    """The user-message layout: stem, blank line, one ``n) text`` per choice."""
    choices = sorted(question.choices, key=lambda c: c.label)
    lines = [f"Question: {question.stem}", ""]
    lines.extend(f"{choice.label}) {choice.text}" for choice in choices)
    return "\n".join(lines)
