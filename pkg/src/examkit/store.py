"""JSON Lines persistence: canonical hashing, dedupe, seeded splits."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

KINDS = ("chunk", "sft", "dpo", "audit")

_REQUIRED_KEYS = {
    "chunk": {"doc_id", "ordinal", "context", "body", "token_count", "atomic_overflow", "label"},
    "sft": {"system", "user", "assistant", "meta"},
    "dpo": {"system", "user", "chosen", "rejected", "meta"},
    "audit": {
        "question_id",
        "backend_id",
        "variant",
        "request_hash",
        "response_text",
        "extracted",
        "correct",
    },
}


class BadFractions(ValueError):
    pass


def canonical_bytes(payload: Mapping) -> bytes:
    """Sorted-key, no-whitespace UTF-8 JSON; the dedupe identity."""
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )


def content_hash(payload: Mapping) -> str:
    return hashlib.sha256(canonical_bytes(payload)).hexdigest()


@dataclass(frozen=True)
class RecordEnvelope:
    kind: str
    payload: Mapping
    content_hash: str

    @classmethod
    def wrap(cls, kind: str, payload: Mapping) -> "RecordEnvelope":
        if kind not in KINDS:
            raise ValueError(f"unknown record kind {kind!r} (known: {', '.join(KINDS)})")
        missing = _REQUIRED_KEYS[kind] - set(payload)
        if missing:
            raise ValueError(f"{kind} record missing keys: {', '.join(sorted(missing))}")
        return cls(kind, payload, content_hash(payload))


def _as_dict(record) -> Mapping:
    if isinstance(record, Mapping):
        return record
    to_dict = getattr(record, "to_dict", None)
    if to_dict is None:
        raise TypeError(f"cannot serialize {type(record).__name__}: no to_dict()")
    return to_dict()


def write_records(records: Iterable, path) -> int:
    """One record per line, UTF-8, LF, stable key order. Returns the count."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(_as_dict(record), ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    return count


def read_records(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def dedupe(records: Iterable) -> list:
    """Keep the first record per content hash, preserving order."""
    seen: set[str] = set()
    out = []
    for record in records:
        digest = content_hash(_as_dict(record))
        if digest in seen:
            continue
        seen.add(digest)
        out.append(record)
    return out


def split(records: Sequence, fractions: Sequence[float], seed: int) -> list[list]:
    """Deterministic seeded partition by fractions (which must sum to 1)."""
    if not fractions:
        raise BadFractions("no fractions given")
    if any(f < 0 for f in fractions):
        raise BadFractions(f"negative fraction in {list(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions sum to {sum(fractions)!r}, expected 1.0")
    shuffled = list(records)
    random.Random(seed).shuffle(shuffled)
    n = len(shuffled)
    boundaries = []
    running = 0.0
    for fraction in fractions:
        running += fraction
        boundaries.append(round(running * n))
    boundaries[-1] = n
    out = []
    start = 0
    for stop in boundaries:
        out.append(shuffled[start:stop])
        start = stop
    return out
