"""Small text helpers shared across modules."""

from __future__ import annotations

import hashlib
import re

_WS_RE = re.compile(r"\s+")
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def normalize_name(name: str) -> str:
    """Trim and collapse internal whitespace; keeps original casing."""
    return _WS_RE.sub(" ", name.strip())


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def approx_tokens(text: str) -> int:
    """Approximate token count: words plus punctuation marks."""
    return len(_TOKEN_RE.findall(text))


def token_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of each approximate token, in document order."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]
