"""Header-aware markdown chunking under a token budget.

Documents are first split at a primary header level (level 2 by default),
with every ancestor header repeated at the top of each chunk so no piece
loses its place in the outline.  Chunks that exceed the token budget are
split again: at the next deeper header level while one exists, then at
paragraph boundaries, then at list-item starts, and finally at lines that
end with sentence punctuation.  A piece that cannot be divided any further
is emitted whole and flagged ``atomic_overflow``.

All splits happen at source-line granularity, so the multiset of non-header
content lines across the output always equals the source's non-blank,
non-header lines.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .tokenizers import DEFAULT_COUNTER_ID, TokenCounter, get_token_counter

HEADER_RE = re.compile(r"^(#{1,6}) (.*)$")
SETEXT_H1_RE = re.compile(r"^=+\s*$")
SETEXT_H2_RE = re.compile(r"^-{2,}\s*$")
LIST_ITEM_RE = re.compile(r"^\s*(?:[-*+]|\d{1,3}[.)])\s+\S")
SENTENCE_END_RE = re.compile(r"[.!?][)\"'”]*$")

HeaderPath = tuple[tuple[int, str], ...]

HEADER_KIND = "header"
CONTENT_KIND = "content"


@dataclass(frozen=True)
class Block:
    """One outline element: a single header line or a run of content lines."""

    kind: str
    text: str
    source_line: int
    level: int = 0

    @property
    def is_header(self) -> bool:
        return self.kind == HEADER_KIND


@dataclass(frozen=True)
class ChunkConfig:
    max_tokens: int
    primary_split_level: int = 2
    tokenizer: str = DEFAULT_COUNTER_ID
    doc_label: str = ""

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if not 1 <= self.primary_split_level <= 6:
            raise ValueError("primary_split_level must be in 1..6")

    def counter(self) -> TokenCounter:
        return get_token_counter(self.tokenizer)


@dataclass(frozen=True)
class Chunk:
    context: HeaderPath
    body: str
    token_count: int
    doc_id: str
    ordinal: int
    atomic_overflow: bool = False
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "ordinal": self.ordinal,
            "context": [header_line(level, text) for level, text in self.context],
            "body": self.body,
            "token_count": self.token_count,
            "atomic_overflow": self.atomic_overflow,
            "label": self.label,
        }


def header_line(level: int, text: str) -> str:
    return "#" * level + " " + text


def rendered_text(chunk: Chunk) -> str:
    """The chunk as presented downstream: context header lines, then body."""
    lines = [header_line(level, text) for level, text in chunk.context]
    lines.append(chunk.body)
    return "\n\n".join(lines)


def parse_outline(text: str) -> list[Block]:
    """Split markdown into header blocks and contiguous content runs.

    ATX headers (``#`` through ``######`` followed by a space) become one
    Header block each.  Setext underlines promote the preceding content
    line to a level-1 (``=``) or level-2 (``-``) header.  Every other
    contiguous run of non-blank lines becomes a single Content block.
    """
    lines = text.split("\n")
    blocks: list[Block] = []
    run: list[str] = []
    run_start = 0

    def flush_run() -> None:
        if run:
            blocks.append(Block(CONTENT_KIND, "\n".join(run), run_start))
            run.clear()

    for idx, raw in enumerate(lines):
        line = raw.rstrip()
        if not line:
            flush_run()
            continue
        match = HEADER_RE.match(line)
        if match:
            flush_run()
            blocks.append(Block(HEADER_KIND, match.group(2), idx, level=len(match.group(1))))
            continue
        if run and (SETEXT_H1_RE.match(line) or SETEXT_H2_RE.match(line)):
            # Promote the line the underline sits beneath; earlier lines of
            # the run stay a content block.
            title = run.pop()
            flush_run()
            level = 1 if SETEXT_H1_RE.match(line) else 2
            blocks.append(Block(HEADER_KIND, title, idx - 1, level=level))
            continue
        if not run:
            run_start = idx
        run.append(line)
    flush_run()
    return blocks


def _assemble_body(blocks: Sequence[Block]) -> str:
    """Rejoin blocks, keeping a header adjacent to the content right under it."""
    parts: list[str] = []
    for i, block in enumerate(blocks):
        if i > 0:
            prev = blocks[i - 1]
            parts.append("\n" if prev.is_header and not block.is_header else "\n\n")
        parts.append(header_line(block.level, block.text) if block.is_header else block.text)
    return "".join(parts)


def _pop_to_ancestors(stack: list[tuple[int, str]], level: int) -> None:
    while stack and stack[-1][0] >= level:
        stack.pop()


def _make_chunk(
    context: HeaderPath,
    blocks: Sequence[Block],
    config: ChunkConfig,
    doc_id: str,
    ordinal: int,
    atomic_overflow: bool = False,
) -> Chunk:
    body = _assemble_body(blocks)
    chunk = Chunk(
        context=context,
        body=body,
        token_count=0,
        doc_id=doc_id,
        ordinal=ordinal,
        atomic_overflow=atomic_overflow,
        label=config.doc_label,
    )
    return replace(chunk, token_count=config.counter()(rendered_text(chunk)))


def _partition_at_level(
    blocks: Sequence[Block], initial_stack: HeaderPath, level: int
) -> list[tuple[HeaderPath, list[Block]]]:
    """Cut ``blocks`` before each header of ``level``.

    The leading piece (if any) keeps ``initial_stack`` as its context; each
    piece that starts at a split header takes the ancestor stack at that
    header, so headers crossed on the way down get replicated as context.
    """
    pieces: list[tuple[HeaderPath, list[Block]]] = []
    stack: list[tuple[int, str]] = list(initial_stack)
    current: list[Block] = []
    current_context: HeaderPath = tuple(initial_stack)
    for block in blocks:
        if block.is_header and block.level == level:
            if current:
                pieces.append((current_context, current))
            _pop_to_ancestors(stack, block.level)
            current_context = tuple(stack)
            current = [block]
        else:
            current.append(block)
        if block.is_header:
            _pop_to_ancestors(stack, block.level)
            stack.append((block.level, block.text))
    if current:
        pieces.append((current_context, current))
    return pieces


def chunk_primary(
    blocks: Sequence[Block], config: ChunkConfig, doc_id: str = "doc"
) -> list[Chunk]:
    """Step one: one chunk per primary-level header section.

    Content ahead of the first primary-level header becomes chunk 0 and
    carries only its ancestor headers as context.  Headers shallower than
    the split level close the open chunk and join the ancestor stack;
    deeper headers stay inside the chunk they appear in.
    """
    chunks: list[Chunk] = []
    stack: list[tuple[int, str]] = []
    current: list[Block] | None = None
    current_context: HeaderPath = ()

    def flush() -> None:
        nonlocal current
        if current:
            chunks.append(_make_chunk(current_context, current, config, doc_id, len(chunks)))
        current = None

    for block in blocks:
        if block.is_header:
            if block.level == config.primary_split_level:
                flush()
                _pop_to_ancestors(stack, block.level)
                current_context = tuple(stack)
                current = [block]
            elif block.level < config.primary_split_level:
                flush()
            else:
                if current is None:
                    _pop_to_ancestors(stack, block.level)
                    current_context = tuple(stack)
                    current = [block]
                else:
                    current.append(block)
            _pop_to_ancestors(stack, block.level)
            stack.append((block.level, block.text))
        else:
            if current is None:
                current_context = tuple(stack)
                current = [block]
            else:
                current.append(block)
    flush()

    if not chunks and blocks:
        # Nothing but headers shallower than the split level: keep the
        # document whole rather than dropping it.
        chunks.append(_make_chunk((), list(blocks), config, doc_id, 0))
    return chunks


def _fits(config: ChunkConfig, context: HeaderPath, body: str) -> bool:
    lines = [header_line(level, text) for level, text in context]
    lines.append(body)
    return config.counter()("\n\n".join(lines)) <= config.max_tokens


def _line_groups(lines: list[str], starts: list[int]) -> list[str]:
    groups = []
    for i, start in enumerate(starts):
        stop = starts[i + 1] if i + 1 < len(starts) else len(lines)
        groups.append("\n".join(lines[start:stop]))
    return groups


def _item_groups(text: str) -> list[str]:
    lines = text.split("\n")
    starts = [i for i, line in enumerate(lines) if i > 0 and LIST_ITEM_RE.match(line)]
    return _line_groups(lines, [0] + starts) if starts else [text]


def _sentence_groups(text: str) -> list[str]:
    lines = text.split("\n")
    starts = [i for i in range(1, len(lines)) if SENTENCE_END_RE.search(lines[i - 1])]
    return _line_groups(lines, [0] + starts) if starts else [text]


def _pack_groups(groups: list[str], fits) -> list[str]:
    packed: list[str] = []
    buf = ""
    for group in groups:
        candidate = buf + "\n" + group if buf else group
        if buf and not fits(candidate):
            packed.append(buf)
            buf = group
        else:
            buf = candidate
    if buf:
        packed.append(buf)
    return packed


def _split_text(text: str, fits) -> list[tuple[str, bool]]:
    """Cut one paragraph's text at list items, then sentence-final lines.

    Returns (piece, atomic) pairs where every piece either fits the budget
    or could not be divided further.
    """
    if fits(text):
        return [(text, False)]
    for grouper, deeper in ((_item_groups, _sentence_groups), (_sentence_groups, None)):
        groups = grouper(text)
        if len(groups) < 2:
            continue
        out: list[tuple[str, bool]] = []
        for piece in _pack_groups(groups, fits):
            if fits(piece):
                out.append((piece, False))
            elif deeper is not None and len(deeper(piece)) > 1:
                for sub in _pack_groups(deeper(piece), fits):
                    out.append((sub, not fits(sub)))
            else:
                out.append((piece, True))
        return out
    return [(text, True)]


def _split_blocks(
    context: HeaderPath,
    blocks: list[Block],
    config: ChunkConfig,
    doc_id: str,
) -> list[Chunk]:
    if _fits(config, context, _assemble_body(blocks)):
        return [_make_chunk(context, blocks, config, doc_id, 0)]

    deeper_levels = sorted({b.level for b in blocks[1:] if b.is_header})
    if deeper_levels:
        out: list[Chunk] = []
        for piece_context, piece_blocks in _partition_at_level(blocks, context, deeper_levels[0]):
            out.extend(_split_blocks(piece_context, piece_blocks, config, doc_id))
        return out

    content_blocks = [b for b in blocks if not b.is_header]
    if len(content_blocks) >= 2:
        return _split_paragraphs(context, blocks, config, doc_id)
    if not content_blocks:
        return [_make_chunk(context, blocks, config, doc_id, 0, atomic_overflow=True)]
    return _split_single_paragraph(context, blocks, config, doc_id)


def _split_paragraphs(
    context: HeaderPath, blocks: list[Block], config: ChunkConfig, doc_id: str
) -> list[Chunk]:
    """Greedy-pack paragraph blocks under the budget, then recurse."""
    pieces: list[tuple[HeaderPath, list[Block]]] = []
    stack: list[tuple[int, str]] = list(context)
    current: list[Block] = []
    current_context: HeaderPath = tuple(context)
    for block in blocks:
        if current:
            candidate = _assemble_body(current + [block])
            if not _fits(config, current_context, candidate) and any(
                not b.is_header for b in current
            ):
                pieces.append((current_context, current))
                ancestors = list(stack)
                if block.is_header:
                    _pop_to_ancestors(ancestors, block.level)
                current_context = tuple(ancestors)
                current = [block]
            else:
                current.append(block)
        else:
            current = [block]
        if block.is_header:
            _pop_to_ancestors(stack, block.level)
            stack.append((block.level, block.text))
    if current:
        pieces.append((current_context, current))

    out: list[Chunk] = []
    for piece_context, piece_blocks in pieces:
        if _fits(config, piece_context, _assemble_body(piece_blocks)):
            out.append(_make_chunk(piece_context, piece_blocks, config, doc_id, 0))
        else:
            out.extend(_split_blocks(piece_context, piece_blocks, config, doc_id))
    return out


def _split_single_paragraph(
    context: HeaderPath, blocks: list[Block], config: ChunkConfig, doc_id: str
) -> list[Chunk]:
    """Last resort: split the lone content block's text line-safely."""
    lead = [b for b in blocks if b.is_header]
    content = next(b for b in blocks if not b.is_header)
    tail_stack: list[tuple[int, str]] = list(context)
    for header in lead:
        _pop_to_ancestors(tail_stack, header.level)
        tail_stack.append((header.level, header.text))
    tail_context = tuple(tail_stack)

    def fits_part(text: str) -> bool:
        return _fits(config, tail_context, text)

    parts = _split_text(content.text, fits_part)
    if len(parts) == 1:
        text, atomic = parts[0]
        piece = lead + [Block(CONTENT_KIND, text, content.source_line)]
        return [_make_chunk(context, piece, config, doc_id, 0, atomic_overflow=atomic)]

    out: list[Chunk] = []
    for i, (text, atomic) in enumerate(parts):
        piece_blocks = [Block(CONTENT_KIND, text, content.source_line)]
        if i == 0:
            out.append(
                _make_chunk(context, lead + piece_blocks, config, doc_id, 0, atomic_overflow=atomic)
            )
        else:
            out.append(
                _make_chunk(tail_context, piece_blocks, config, doc_id, 0, atomic_overflow=atomic)
            )
    return out


def split_oversized(chunk: Chunk, config: ChunkConfig) -> list[Chunk]:
    """Step two: cut an over-budget chunk down, context repeated per piece.

    Under-budget (and already atomic) chunks come back unchanged, so the
    operation is idempotent over its own output.  Sub-chunk ordinals are
    renumbered from 0.
    """
    if chunk.atomic_overflow or chunk.token_count <= config.max_tokens:
        return [chunk]
    blocks = parse_outline(chunk.body)
    pieces = _split_blocks(chunk.context, blocks, config, chunk.doc_id)
    return [replace(piece, ordinal=i, label=chunk.label) for i, piece in enumerate(pieces)]


def chunk_document(text: str, config: ChunkConfig, doc_id: str = "doc") -> list[Chunk]:
    """Full pipeline: outline, primary split, budget enforcement."""
    blocks = parse_outline(text)
    final: list[Chunk] = []
    for chunk in chunk_primary(blocks, config, doc_id):
        final.extend(split_oversized(chunk, config))
    return [replace(chunk, ordinal=i) for i, chunk in enumerate(final)]


TOTAL_KEY = "total"


def corpus_stats(chunks: Iterable[Chunk], tokenizer: str = DEFAULT_COUNTER_ID) -> dict[str, int]:
    """Per-label sums of body tokens plus a grand total under ``"total"``.

    Context header repetitions are excluded so totals describe the source
    material rather than the chunking overhead.
    """
    counter = get_token_counter(tokenizer)
    stats: dict[str, int] = {}
    for chunk in chunks:
        stats[chunk.label] = stats.get(chunk.label, 0) + counter(chunk.body)
    stats[TOTAL_KEY] = sum(stats.values())
    return stats


def render_stats_table(stats: dict[str, int]) -> str:
    """Label/token table with one row per label and a closing Total row."""
    rows = [(label, stats[label]) for label in sorted(stats) if label != TOTAL_KEY]
    rows.append(("Total", stats.get(TOTAL_KEY, 0)))
    width = max(len(label) for label, _ in rows) if rows else 5
    width = max(width, len("Label"))
    lines = [f"{'Label':<{width}}  {'Tokens':>12}"]
    for label, tokens in rows:
        lines.append(f"{label:<{width}}  {tokens:>12}")
    return "\n".join(lines)


def write_chunks(chunks: Iterable[Chunk], path) -> int:
    """Write chunks as JSON Lines; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for chunk in chunks:
            fh.write(json.dumps(chunk.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    return count


def read_chunks(path) -> list[Chunk]:
    chunks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            context = []
            for rendered in raw["context"]:
                match = HEADER_RE.match(rendered)
                if not match:
                    raise ValueError(f"bad context header line: {rendered!r}")
                context.append((len(match.group(1)), match.group(2)))
            chunks.append(
                Chunk(
                    context=tuple(context),
                    body=raw["body"],
                    token_count=raw["token_count"],
                    doc_id=raw["doc_id"],
                    ordinal=raw["ordinal"],
                    atomic_overflow=raw["atomic_overflow"],
                    label=raw["label"],
                )
            )
    return chunks
