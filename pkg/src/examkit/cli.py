"""Command-line pipeline driver.

Every command is re-runnable: identical inputs and seeds produce
byte-identical outputs, and a run manifest with the effective settings is
written next to each command's outputs.  Per-item failures (one backend
down, one response malformed) are warned about and counted; only hard
errors (unreadable files, schema violations) exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import augment, chunking, evaluate, store
from .exams import ExamError, load_exam
from .gateway import (
    AUGMENT_TEMPERATURE,
    DEFAULT_MAX_OUTPUT_TOKENS,
    EVAL_SEED,
    BackendSpec,
    ChatRequest,
    GatewayError,
    LlmGateway,
    load_backends,
    request_cache_key,
)
from .prompts import COT, VARIANTS, ZERO_SHOT_MULTI_LLM, get_variant
from .tokenizers import DEFAULT_COUNTER_ID

logger = logging.getLogger("examkit")

CACHE_DIR_ENV = "EXAMKIT_CACHE_DIR"
MANIFEST_NAME = "run_manifest.json"


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return config


def _setting(args, config: dict, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return config.get(name, default)


def _out_dir(args, config: dict) -> Path:
    out = Path(_setting(args, config, "out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out_dir: Path, command: str, settings: dict) -> None:
    manifest = {"command": command, "settings": settings}
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def _gateway(args, config: dict) -> LlmGateway:
    cache_dir = os.environ.get(CACHE_DIR_ENV) or config.get("cache_dir")
    return LlmGateway(cache_dir=cache_dir)


def _backend_by_id(backends: list[BackendSpec], backend_id: str) -> BackendSpec:
    for backend in backends:
        if backend.id == backend_id:
            return backend
    known = ", ".join(b.id for b in backends)
    raise ValueError(f"no backend with id {backend_id!r} in config (known: {known})")


# -- chunk ------------------------------------------------------------


def _iter_md_inputs(inputs: list[str], flag_label: str | None):
    """Yield (path, doc_id, label) for every markdown file named or found."""
    for raw in inputs:
        path = Path(raw)
        if path.is_dir():
            label = flag_label if flag_label is not None else path.name
            for md in sorted(path.rglob("*.md")):
                yield md, md.stem, label
        else:
            yield path, path.stem, flag_label if flag_label is not None else ""


def cmd_chunk(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    max_tokens = int(_setting(args, config, "max_tokens", 512))
    split_level = int(_setting(args, config, "split_level", 2))
    tokenizer = _setting(args, config, "tokenizer", DEFAULT_COUNTER_ID)
    label_flag = _setting(args, config, "label", None)

    all_chunks = []
    written = {}
    for path, doc_id, label in _iter_md_inputs(args.inputs, label_flag):
        chunk_config = chunking.ChunkConfig(
            max_tokens=max_tokens,
            primary_split_level=split_level,
            tokenizer=tokenizer,
            doc_label=label,
        )
        text = path.read_text(encoding="utf-8")
        chunks = chunking.chunk_document(text, chunk_config, doc_id=doc_id)
        out_path = out_dir / f"{doc_id}.chunks.jsonl"
        chunking.write_chunks(chunks, out_path)
        written[str(path)] = len(chunks)
        all_chunks.extend(chunks)

    stats = chunking.corpus_stats(all_chunks, tokenizer=tokenizer)
    print(chunking.render_stats_table(stats))
    _write_json(out_dir / "corpus_stats.json", stats)
    _write_manifest(
        out_dir,
        "chunk",
        {
            "inputs": list(args.inputs),
            "max_tokens": max_tokens,
            "split_level": split_level,
            "tokenizer": tokenizer,
            "label": label_flag,
            "files": written,
        },
    )
    return 0


# -- stats ------------------------------------------------------------


def cmd_stats(args) -> int:
    config = _load_config(args.config)
    tokenizer = _setting(args, config, "tokenizer", DEFAULT_COUNTER_ID)
    label_filter = _setting(args, config, "label", None)
    chunks = []
    for path in args.inputs:
        chunks.extend(chunking.read_chunks(path))
    if label_filter is not None:
        chunks = [c for c in chunks if c.label == label_filter]
    print(chunking.render_stats_table(chunking.corpus_stats(chunks, tokenizer=tokenizer)))
    return 0


# -- augment ----------------------------------------------------------


def _load_bias_reasons(path) -> dict[str, dict[int, str]]:
    by_question: dict[str, dict[int, str]] = {}
    for record in store.read_records(path):
        by_question.setdefault(record["question_id"], {})[int(record["choice_label"])] = record[
            "reason_text"
        ]
    return by_question


def cmd_augment(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    seed = int(_setting(args, config, "seed", 0))
    warnings = 0
    settings: dict = {"mode": args.mode, "seed": seed}

    if args.mode == "bias":
        exam = load_exam(args.exam)
        reasons = _load_bias_reasons(args.reasons)
        sft_records, dpo_records = [], []
        for question in exam.questions:
            if question.id not in reasons:
                logger.warning("question %s has no harvested reasons; skipped", question.id)
                warnings += 1
                continue
            try:
                sft, dpo = augment.harvest_bias_outputs(question, reasons[question.id])
            except augment.MissingCorrectReason as exc:
                logger.warning("%s", exc)
                warnings += 1
                continue
            sft_records.extend(sft)
            dpo_records.extend(dpo)
        n_sft = store.write_records(store.dedupe(sft_records), out_dir / "bias_sft.jsonl")
        n_dpo = store.write_records(store.dedupe(dpo_records), out_dir / "bias_dpo.jsonl")
        print(f"bias: {n_sft} SFT records, {n_dpo} DPO records ({warnings} warnings)")
        settings.update({"exam": args.exam, "reasons": args.reasons})

    elif args.mode == "shuffle":
        exam = load_exam(args.exam)
        shuffles = int(_setting(args, config, "shuffles", augment.DEFAULT_SHUFFLES))
        records = []
        for index, question in enumerate(exam.questions):
            records.extend(augment.build_shuffle_set(question, shuffles, seed + index * shuffles))
        count = store.write_records(store.dedupe(records), out_dir / "shuffle_sft.jsonl")
        print(f"shuffle: {count} SFT records")
        settings.update({"exam": args.exam, "shuffles": shuffles})

    elif args.mode == "prompts":
        variants = [get_variant(v) for v in (args.variant or list(VARIANTS))]
        records = []
        for raw in store.read_records(args.sft):
            record = augment.SftRecord(raw["system"], raw["user"], raw["assistant"], raw["meta"])
            records.extend(augment.expand_system_prompts(record, variants))
        count = store.write_records(store.dedupe(records), out_dir / "expanded_sft.jsonl")
        print(f"prompts: {count} SFT records across {len(variants)} variants")
        settings.update({"sft": args.sft, "variants": [v.id for v in variants]})

    elif args.mode == "mdqa":
        chunks = []
        for path in args.chunks:
            chunks.extend(chunking.read_chunks(path))
        records = augment.qa_from_markdown(chunks)
        count = store.write_records(store.dedupe(records), out_dir / "mdqa_sft.jsonl")
        print(f"mdqa: {count} SFT records from {len(chunks)} chunks")
        settings.update({"chunks": list(args.chunks)})

    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown mode {args.mode!r}")

    _write_manifest(out_dir, "augment", settings)
    return 0


# -- generate ---------------------------------------------------------


def cmd_generate(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    seed = int(_setting(args, config, "seed", 0))
    exam = load_exam(args.exam)
    backends = load_backends(args.backends)
    if args.backend:
        backends = [_backend_by_id(backends, backend_id) for backend_id in args.backend]
    variant_ids = args.variant or [COT, ZERO_SHOT_MULTI_LLM]
    variants = [get_variant(v) for v in variant_ids]
    gateway = _gateway(args, config)

    records = []
    failures = 0
    for question in exam.questions:
        for variant in variants:
            system, user = evaluate.render_exam_prompt(question, variant)
            request = ChatRequest(
                system=system,
                user=user,
                temperature=AUGMENT_TEMPERATURE,
                max_output_tokens=DEFAULT_MAX_OUTPUT_TOKENS,
                seed=seed,
            )
            for result in gateway.fan_out(request, backends):
                backend = _backend_by_id(backends, result.backend_id)
                record = {
                    "question_id": question.id,
                    "backend_id": result.backend_id,
                    "prompt_variant": variant.id,
                    "request_hash": request_cache_key(request, backend),
                    "text": result.response.text if result.response else "",
                    "error": result.error,
                }
                if result.error:
                    failures += 1
                    logger.warning(
                        "question %s backend %s: %s", question.id, result.backend_id, result.error
                    )
                records.append(record)
    count = store.write_records(records, out_dir / "responses.jsonl")
    print(f"generate: {count} responses ({failures} failures)")
    _write_manifest(
        out_dir,
        "generate",
        {
            "exam": args.exam,
            "backends": [b.id for b in backends],
            "variants": variant_ids,
            "seed": seed,
            "temperature": AUGMENT_TEMPERATURE,
        },
    )
    return 0


# -- pair-dpo ---------------------------------------------------------


def cmd_pair_dpo(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    pair_cap = int(_setting(args, config, "pair_cap", augment.DEFAULT_PAIR_CAP))
    exam = load_exam(args.exam)
    by_question: dict[str, list[augment.GeneratedResponse]] = {}
    for raw in store.read_records(args.responses):
        if raw.get("error"):
            continue
        by_question.setdefault(raw["question_id"], []).append(
            augment.GeneratedResponse(raw["backend_id"], raw["prompt_variant"], raw["text"])
        )
    records = []
    for question in exam.questions:
        records.extend(
            augment.pair_multi_llm(question, by_question.get(question.id, []), pair_cap=pair_cap)
        )
    count = store.write_records(store.dedupe(records), out_dir / "multi_llm_dpo.jsonl")
    print(f"pair-dpo: {count} DPO records (cap {pair_cap} per question per variant)")
    _write_manifest(
        out_dir,
        "pair-dpo",
        {"exam": args.exam, "responses": args.responses, "pair_cap": pair_cap},
    )
    return 0


# -- eval -------------------------------------------------------------


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    exam = load_exam(args.exam)
    backends = load_backends(args.backends)
    backend = _backend_by_id(backends, args.backend)
    variant = get_variant(_setting(args, config, "variant_id", None) or (args.variant or [COT])[0])
    gateway = _gateway(args, config)

    audit_path = out_dir / f"audit_{exam.level}_{backend.id}_{variant.id}.jsonl"
    report = evaluate.run_eval(exam, backend, variant, gateway, audit_path=audit_path)
    _write_json(out_dir / f"report_{exam.level}_{backend.id}_{variant.id}.json", report.to_dict())
    print(evaluate.emit_report([report]))
    failures = sum(1 for r in report.results if r.error)
    if failures:
        logger.warning("%d questions failed at the gateway", failures)
    _write_manifest(
        out_dir,
        "eval",
        {
            "exam": args.exam,
            "backend": backend.id,
            "variant": variant.id,
            "seed": EVAL_SEED,
            "audit": audit_path.name,
        },
    )
    return 0


# -- report -----------------------------------------------------------


def _report_from_dict(raw: dict) -> evaluate.ExamReport:
    results = [
        evaluate.QuestionResult(
            question_id=r["question_id"],
            extracted=evaluate.ExtractedAnswer(
                r["extracted"]["label"], r["extracted"]["method"], r["extracted"]["raw_span"]
            ),
            correct=r["correct"],
            module_tag=r.get("module_tag"),
            error=r.get("error"),
        )
        for r in raw.get("results", [])
    ]
    return evaluate.ExamReport(
        exam_level=raw["exam_level"],
        backend_id=raw["backend_id"],
        variant_id=raw["variant_id"],
        results=results,
        overall_pct=raw["overall_pct"],
        module_pct=raw.get("module_pct", {}),
        passed=raw["passed"],
    )


def cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        with open(path, encoding="utf-8") as fh:
            reports.append(_report_from_dict(json.load(fh)))
    print(evaluate.emit_report(reports, format=args.format))
    return 0


# -- parser -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="examkit",
        description="Chunk study materials, build SFT/DPO datasets, and evaluate chat models "
        "against multiple-choice certification exams.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", help="output directory (default: out/)")
        p.add_argument("--seed", type=int, help="seed for anything randomized")

    p_chunk = sub.add_parser("chunk", help="chunk markdown files under a token budget")
    common(p_chunk)
    p_chunk.add_argument("inputs", nargs="+", help="markdown files or directories of .md files")
    p_chunk.add_argument("--max-tokens", type=int, dest="max_tokens")
    p_chunk.add_argument("--split-level", type=int, dest="split_level")
    p_chunk.add_argument("--tokenizer", help=f"token counter id (default {DEFAULT_COUNTER_ID})")
    p_chunk.add_argument("--label", help="corpus label (default: directory name, else empty)")
    p_chunk.set_defaults(func=cmd_chunk)

    p_stats = sub.add_parser("stats", help="token totals per label from chunk JSONL files")
    common(p_stats)
    p_stats.add_argument("inputs", nargs="+", help="chunk JSONL files")
    p_stats.add_argument("--tokenizer")
    p_stats.add_argument("--label", help="only count chunks with this label")
    p_stats.set_defaults(func=cmd_stats)

    p_aug = sub.add_parser("augment", help="build SFT/DPO records from an exam or chunks")
    common(p_aug)
    p_aug.add_argument("--mode", required=True, choices=("bias", "shuffle", "prompts", "mdqa"))
    p_aug.add_argument("--exam", help="exam JSON (bias and shuffle modes)")
    p_aug.add_argument("--reasons", help="harvested per-choice reasons JSONL (bias mode)")
    p_aug.add_argument("--sft", help="SFT JSONL to expand (prompts mode)")
    p_aug.add_argument("--chunks", nargs="+", help="chunk JSONL files (mdqa mode)")
    p_aug.add_argument("--shuffles", type=int, help="shuffled copies per question")
    p_aug.add_argument("--variant", action="append", help="prompt variant id (repeatable)")
    p_aug.set_defaults(func=cmd_augment)

    p_gen = sub.add_parser("generate", help="collect model responses for every exam question")
    common(p_gen)
    p_gen.add_argument("--exam", required=True)
    p_gen.add_argument("--backends", required=True, help="backend config JSON")
    p_gen.add_argument("--backend", action="append", help="restrict to backend id (repeatable)")
    p_gen.add_argument("--variant", action="append", help="prompt variant id (repeatable)")
    p_gen.set_defaults(func=cmd_generate)

    p_pair = sub.add_parser("pair-dpo", help="pair collected responses into DPO records")
    common(p_pair)
    p_pair.add_argument("--exam", required=True)
    p_pair.add_argument("--responses", required=True, help="responses JSONL from generate")
    p_pair.add_argument("--pair-cap", type=int, dest="pair_cap")
    p_pair.set_defaults(func=cmd_pair_dpo)

    p_eval = sub.add_parser("eval", help="score one backend against one exam")
    common(p_eval)
    p_eval.add_argument("--exam", required=True)
    p_eval.add_argument("--backends", required=True, help="backend config JSON")
    p_eval.add_argument("--backend", required=True, help="backend id to evaluate")
    p_eval.add_argument("--variant", action="append", help="prompt variant id (default cot)")
    p_eval.set_defaults(func=cmd_eval)

    p_rep = sub.add_parser("report", help="combine saved reports into a table or CSV")
    p_rep.add_argument("inputs", nargs="+", help="report JSON files from eval")
    p_rep.add_argument("--format", choices=("table", "csv"), default="table")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ExamError, GatewayError, OSError, ValueError, KeyError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
