"""Pluggable token counters used to budget chunk sizes.

Counters are registered under a string id so chunk configs stay
serializable; anything that maps text to a non-negative int works.
"""

from __future__ import annotations

from typing import Callable

TokenCounter = Callable[[str], int]

DEFAULT_COUNTER_ID = "cp3"

_REGISTRY: dict[str, TokenCounter] = {}


def register_token_counter(counter_id: str, counter: TokenCounter) -> None:
    """Register ``counter`` under ``counter_id``, replacing any prior entry."""
    if not counter_id:
        raise ValueError("counter_id must be a non-empty string")
    _REGISTRY[counter_id] = counter


def get_token_counter(counter_id: str) -> TokenCounter:
    try:
        return _REGISTRY[counter_id]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise KeyError(f"unknown token counter {counter_id!r} (registered: {known})") from None


def count_codepoint_thirds(text: str) -> int:
    """Approximate BPE token count as ceil(codepoints / 3).

    One token per three Unicode code points is a workable proxy for Thai
    text, where whitespace-based word counts badly undershoot.
    """
    return (len(text) + 2) // 3


register_token_counter(DEFAULT_COUNTER_ID, count_codepoint_thirds)
