"""Dataset augmentation: biased reasoning harvest, prompt expansion,
choice shuffling, markdown Q&A, and multi-model preference pairing.

Every procedure is deterministic given its inputs and seeds, emitting
plain SFT (system/user/assistant) or DPO (system/user/chosen/rejected)
records that carry their origin details in ``meta``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .chunking import Chunk, parse_outline
from .evaluate import extract_answer
from .exams import SHUFFLE_PRNG, ExamQuestion, shuffle_choices
from .prompts import (
    ANSWER_PREFIX,
    COT,
    COT_SYSTEM,
    REASON_MARKER,
    VARIANTS,
    ZERO_SHOT_BIAS,
    ZERO_SHOT_BIAS_SYSTEM,
    PromptVariant,
    render_question_block,
)

SOURCE_BIAS = "bias_reason"
SOURCE_MDQA = "markdown_qa"
SOURCE_SHUFFLE = "shuffle"
SOURCE_MULTI_LLM = "multi_llm"

DEFAULT_PAIR_CAP = 4
DEFAULT_SHUFFLES = 4

TARGET_LINE = "Assume the correct answer is choice {target}; provide the backup reason."

QA_SYSTEM = (
    "You are a Certified Thai Investment Consultant (IC) reviewing the official study "
    "materials. Answer questions about the materials accurately and concisely."
)


class MissingCorrectReason(ValueError):
    pass


@dataclass(frozen=True)
class SftRecord:
    system: str
    user: str
    assistant: str
    meta: Mapping

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "user": self.user,
            "assistant": self.assistant,
            "meta": dict(self.meta),
        }


@dataclass(frozen=True)
class DpoRecord:
    system: str
    user: str
    chosen: str
    rejected: str
    meta: Mapping

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "user": self.user,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "meta": dict(self.meta),
        }


@dataclass(frozen=True)
class BiasReason:
    question_id: str
    choice_label: int
    reason_text: str
    is_correct: bool


@dataclass(frozen=True)
class GeneratedResponse:
    backend_id: str
    prompt_variant: str
    text: str


def render_bias_prompt(question: ExamQuestion, target: int) -> tuple[str, str]:
    """Prompt that asks the model to argue for ``target``, right or wrong."""
    if not 1 <= target <= 4:
        raise ValueError(f"target must be a choice label 1..4, got {target!r}")
    user = render_question_block(question) + "\n\n" + TARGET_LINE.format(target=target)
    return ZERO_SHOT_BIAS_SYSTEM, user


def bias_answer_text(label: int, reason: str) -> str:
    """A full answer in the zero-shot scaffold: choice, blank line, reason."""
    return f"{ANSWER_PREFIX}{label}\n\n{REASON_MARKER}\n{reason}"


def harvest_bias_outputs(
    question: ExamQuestion, reasons: Mapping[int, str]
) -> tuple[list[SftRecord], list[DpoRecord]]:
    """Turn per-choice argued reasons into one SFT record and DPO pairs.

    The correct choice's reasoning becomes the SFT target; each incorrect
    choice's reasoning becomes the rejected side of a DPO pair against it.
    """
    if question.answer_key not in reasons:
        raise MissingCorrectReason(
            f"question {question.id!r}: no reason for correct choice {question.answer_key}"
        )
    user = render_question_block(question)
    chosen_text = bias_answer_text(question.answer_key, reasons[question.answer_key])
    sft = [
        SftRecord(
            system=ZERO_SHOT_BIAS_SYSTEM,
            user=user,
            assistant=chosen_text,
            meta={
                "source": SOURCE_BIAS,
                "question_id": question.id,
                "variant_id": ZERO_SHOT_BIAS,
            },
        )
    ]
    dpo = []
    for label in sorted(reasons):
        if label == question.answer_key:
            continue
        dpo.append(
            DpoRecord(
                system=ZERO_SHOT_BIAS_SYSTEM,
                user=user,
                chosen=chosen_text,
                rejected=bias_answer_text(label, reasons[label]),
                meta={
                    "source": SOURCE_BIAS,
                    "question_id": question.id,
                    "prompt_variant": ZERO_SHOT_BIAS,
                    "rejected_label": label,
                },
            )
        )
    return sft, dpo


def expand_system_prompts(
    record: SftRecord, variants: Sequence[PromptVariant]
) -> list[SftRecord]:
    """One copy of ``record`` per variant; only system text and meta change."""
    if not variants:
        raise ValueError("expand_system_prompts requires at least one variant")
    return [
        SftRecord(
            system=variant.system_text,
            user=record.user,
            assistant=record.assistant,
            meta={**dict(record.meta), "variant_id": variant.id},
        )
        for variant in variants
    ]


def build_shuffle_set(question: ExamQuestion, n: int, seed: int) -> list[SftRecord]:
    """``n`` independently shuffled copies of the question, seeds recorded."""
    if n < 1:
        raise ValueError("n must be at least 1")
    records = []
    for i in range(n):
        record_seed = seed + i
        shuffled, perm = shuffle_choices(question, record_seed)
        assistant = (
            f"ดังนั้น คำตอบที่ถูกต้องคือ: {shuffled.answer_key}) "
            f"{shuffled.choice_text(shuffled.answer_key)}"
        )
        records.append(
            SftRecord(
                system=COT_SYSTEM,
                user=render_question_block(shuffled),
                assistant=assistant,
                meta={
                    "source": SOURCE_SHUFFLE,
                    "question_id": question.id,
                    "variant_id": COT,
                    "seed": record_seed,
                    "prng": SHUFFLE_PRNG,
                    "permutation": list(perm.mapping),
                },
            )
        )
    return records


def _qa_question_text(titles: Sequence[str]) -> str:
    path = " > ".join(titles)
    return f'According to the study materials, explain "{titles[-1]}". (Section: {path})'


def qa_from_markdown(chunks: Iterable[Chunk]) -> list[SftRecord]:
    """One Q&A record per header with direct content under it.

    The question names the full header path down to the header; the answer
    is the content sitting directly beneath it (sub-section content belongs
    to the sub-section's own record).
    """
    records = []
    for chunk in chunks:
        blocks = parse_outline(chunk.body)
        stack = [title for _, title in chunk.context]
        pending_titles = list(stack)
        pending_content: list[str] = []
        pending_levels = [level for level, _ in chunk.context]

        def flush() -> None:
            if pending_content and pending_titles:
                records.append(
                    SftRecord(
                        system=QA_SYSTEM,
                        user=_qa_question_text(pending_titles),
                        assistant="\n\n".join(pending_content),
                        meta={
                            "source": SOURCE_MDQA,
                            "doc_id": chunk.doc_id,
                            "ordinal": chunk.ordinal,
                            "header_path": list(pending_titles),
                        },
                    )
                )
            pending_content.clear()

        for block in blocks:
            if block.is_header:
                flush()
                while pending_levels and pending_levels[-1] >= block.level:
                    pending_levels.pop()
                    pending_titles.pop()
                pending_levels.append(block.level)
                pending_titles.append(block.text)
            else:
                pending_content.append(block.text)
        flush()
    return records


def response_format_ok(text: str, variant_id: str) -> bool:
    """Does ``text`` carry the scaffold its variant demands, with a label?"""
    if extract_answer(text).label is None:
        return False
    if variant_id == COT:
        return "ดังนั้น คำตอบที่ถูกต้องคือ:" in text
    if variant_id == ZERO_SHOT_BIAS:
        return ANSWER_PREFIX.strip() in text and REASON_MARKER in text
    return True


def pair_multi_llm(
    question: ExamQuestion,
    responses: Sequence[GeneratedResponse],
    pair_cap: int = DEFAULT_PAIR_CAP,
) -> list[DpoRecord]:
    """Validate responses per prompt variant and cross accepted × rejected.

    A response is accepted when its format scaffold is present and the
    extracted label equals the answer key; everything else is rejected.
    Pairs are capped per variant, preferring cross-backend pairs.
    """
    if pair_cap < 1:
        raise ValueError("pair_cap must be at least 1")
    user = render_question_block(question)
    variant_order: list[str] = []
    grouped: dict[str, list[GeneratedResponse]] = {}
    for response in responses:
        if response.prompt_variant not in grouped:
            variant_order.append(response.prompt_variant)
            grouped[response.prompt_variant] = []
        grouped[response.prompt_variant].append(response)

    records = []
    for variant_id in variant_order:
        accepted = []
        rejected = []
        for response in grouped[variant_id]:
            ok = (
                response_format_ok(response.text, variant_id)
                and extract_answer(response.text).label == question.answer_key
            )
            (accepted if ok else rejected).append(response)
        pairs = [
            (a_idx, r_idx, a, r)
            for a_idx, a in enumerate(accepted)
            for r_idx, r in enumerate(rejected)
        ]
        pairs.sort(key=lambda p: (p[2].backend_id == p[3].backend_id, p[0], p[1]))
        system = VARIANTS[variant_id].system_text if variant_id in VARIANTS else COT_SYSTEM
        for _, _, chosen, reject in pairs[:pair_cap]:
            records.append(
                DpoRecord(
                    system=system,
                    user=user,
                    chosen=chosen.text,
                    rejected=reject.text,
                    meta={
                        "source": SOURCE_MULTI_LLM,
                        "question_id": question.id,
                        "prompt_variant": variant_id,
                        "chosen_backend": chosen.backend_id,
                        "rejected_backend": reject.backend_id,
                    },
                )
            )
    return records
