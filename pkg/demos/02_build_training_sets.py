"""Build every kind of training record from the demo exam and study guide.

Covers all four offline augmentation procedures plus a train/holdout
split:

  1. biased-reasoning harvest  -> SFT + DPO (bias_sft / bias_dpo)
  2. system prompt expansion   -> SFT x3 variants (expanded_sft)
  3. choice shuffling          -> SFT (shuffle_sft)
  4. markdown Q&A              -> SFT (mdqa_sft)

Run from anywhere:

    python3 demos/02_build_training_sets.py
"""

from __future__ import annotations

from pathlib import Path

from examkit.augment import (
    build_shuffle_set,
    expand_system_prompts,
    harvest_bias_outputs,
    qa_from_markdown,
)
from examkit.chunking import ChunkConfig, chunk_document
from examkit.exams import load_exam
from examkit.prompts import VARIANTS
from examkit.store import dedupe, read_records, split, write_records

HERE = Path(__file__).resolve().parent
SEED = 0
SHUFFLES_PER_QUESTION = 4


def load_reasons(path: Path) -> dict[str, dict[int, str]]:
    by_question: dict[str, dict[int, str]] = {}
    for row in read_records(path):
        by_question.setdefault(row["question_id"], {})[int(row["choice_label"])] = row[
            "reason_text"
        ]
    return by_question


def main() -> None:
    out_dir = HERE / "out"
    out_dir.mkdir(exist_ok=True)
    exam = load_exam(HERE / "data" / "exam_p1.json")
    reasons = load_reasons(HERE / "data" / "bias_reasons.jsonl")

    bias_sft, bias_dpo = [], []
    for question in exam.questions:
        sft, dpo = harvest_bias_outputs(question, reasons[question.id])
        bias_sft.extend(sft)
        bias_dpo.extend(dpo)
    write_records(dedupe(bias_sft), out_dir / "bias_sft.jsonl")
    write_records(dedupe(bias_dpo), out_dir / "bias_dpo.jsonl")
    print(f"bias harvest: {len(bias_sft)} SFT + {len(bias_dpo)} DPO records")

    expanded = []
    for record in bias_sft:
        expanded.extend(expand_system_prompts(record, list(VARIANTS.values())))
    write_records(dedupe(expanded), out_dir / "expanded_sft.jsonl")
    print(f"prompt expansion: {len(expanded)} SFT records across {len(VARIANTS)} variants")

    shuffled = []
    for index, question in enumerate(exam.questions):
        shuffled.extend(
            build_shuffle_set(
                question, SHUFFLES_PER_QUESTION, SEED + index * SHUFFLES_PER_QUESTION
            )
        )
    write_records(dedupe(shuffled), out_dir / "shuffle_sft.jsonl")
    print(f"choice shuffling: {len(shuffled)} SFT records")

    text = (HERE / "data" / "study_material.md").read_text(encoding="utf-8")
    chunks = chunk_document(text, ChunkConfig(max_tokens=160, doc_label="P1"), doc_id="study")
    qa = qa_from_markdown(chunks)
    write_records(dedupe(qa), out_dir / "mdqa_sft.jsonl")
    print(f"markdown QA: {len(qa)} SFT records from {len(chunks)} chunks")

    pool = dedupe(bias_sft + expanded + shuffled + qa)
    train, held_out = split([r.to_dict() for r in pool], (0.9, 0.1), seed=SEED)
    write_records(train, out_dir / "train_sft.jsonl")
    write_records(held_out, out_dir / "holdout_sft.jsonl")
    print(f"combined pool: {len(pool)} unique records -> {len(train)} train / {len(held_out)} holdout")

    sample = bias_dpo[0]
    print()
    print("One DPO pair (user prompt truncated):")
    print(f"  user    : {sample.user[:60]}...")
    print(f"  chosen  : {sample.chosen[:60]}...")
    print(f"  rejected: {sample.rejected[:60]}...")


if __name__ == "__main__":
    main()
