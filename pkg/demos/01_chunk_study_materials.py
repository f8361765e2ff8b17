"""Chunk the demo study material and show what the downstream steps see.

Run from anywhere:

    python3 demos/01_chunk_study_materials.py

Outputs land in demos/out/.
"""

from __future__ import annotations

from pathlib import Path

from examkit.chunking import (
    ChunkConfig,
    chunk_document,
    corpus_stats,
    render_stats_table,
    rendered_text,
    write_chunks,
)

HERE = Path(__file__).resolve().parent


def main() -> None:
    text = (HERE / "data" / "study_material.md").read_text(encoding="utf-8")
    out_dir = HERE / "out"
    out_dir.mkdir(exist_ok=True)

    config = ChunkConfig(max_tokens=160, doc_label="P1")
    chunks = chunk_document(text, config, doc_id="study_material")
    write_chunks(chunks, out_dir / "study_material.chunks.jsonl")

    print(f"{len(chunks)} chunks under a budget of {config.max_tokens} tokens")
    oversized = [c for c in chunks if c.atomic_overflow]
    print(f"{len(oversized)} chunks flagged atomic_overflow")
    print()
    print(render_stats_table(corpus_stats(chunks)))
    print()
    print("First chunk exactly as a model would receive it:")
    print("-" * 60)
    print(rendered_text(chunks[0]))
    print("-" * 60)
    print()
    print("Context headers carried by each chunk:")
    for chunk in chunks:
        path = " > ".join(title for _, title in chunk.context) or "(none)"
        print(f"  chunk {chunk.ordinal}: {chunk.token_count:>4} tokens | {path}")


if __name__ == "__main__":
    main()
