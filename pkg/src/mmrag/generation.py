"""Text answer generation and the frozen sentence splitter.

Ground-truth placements are defined against sentence indices, so the
splitter is rule-based and versioned rather than model-based: any drift in
how answers break into sentences would silently corrupt every placement
metric computed after it.
"""

from __future__ import annotations

import re
from typing import Sequence

from .errors import EmptyCompletion
from .model import DocumentChunk, Query, SentenceMap
from .prompts import TEXT_ANSWER, render
from .providers import ChatProvider, ChatRequest

SPLITTER_VERSION = 1

# Tokens whose trailing period never ends a sentence. Compared
# case-insensitively after stripping leading punctuation. Frozen: extending
# this list shifts sentence indices in previously split corpora.
ABBREVIATIONS = frozenset(
    {
        "e.g.",
        "i.e.",
        "etc.",
        "cf.",
        "vs.",
        "al.",
        "fig.",
        "figs.",
        "eq.",
        "eqs.",
        "no.",
        "sec.",
        "dr.",
        "mr.",
        "mrs.",
        "ms.",
        "prof.",
        "st.",
        "jr.",
        "sr.",
    }
)

_TERMINATORS = ".!?"
_LIST_ITEM_RE = re.compile(r"^\s*\d+[.)]\s+")
_NUMERIC_MARKER_RE = re.compile(r"^\d+[.)]?$")


def normalize_whitespace(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def _is_abbreviation(token: str) -> bool:
    stripped = token.lstrip("([{'\"“”‘’")
    return stripped.lower() in ABBREVIATIONS


def _split_block(block: str) -> list[str]:
    """Split one block of prose on terminators followed by whitespace and an
    uppercase letter or digit (or end of text)."""
    sentences: list[str] = []
    start = 0
    i = 0
    n = len(block)
    while i < n:
        if block[i] not in _TERMINATORS:
            i += 1
            continue
        end = i + 1
        while end < n and block[end] in _TERMINATORS:
            end += 1
        if _is_sentence_boundary(block, start, end):
            candidate = block[start:end].strip()
            if candidate:
                sentences.append(candidate)
            while end < n and block[end].isspace():
                end += 1
            start = end
        i = end
    tail = block[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def _is_sentence_boundary(block: str, start: int, end: int) -> bool:
    """Whether the terminator run ending at `end` closes the sentence that
    began at `start`."""
    sentence_so_far = block[start:end].strip()
    # "1." at the head of a numbered item is a list marker, not a sentence.
    if _NUMERIC_MARKER_RE.match(sentence_so_far):
        return False
    last_token = sentence_so_far.split()[-1] if sentence_so_far.split() else ""
    if _is_abbreviation(last_token):
        return False
    rest = block[end:]
    if not rest.strip():
        return True
    if not rest[0].isspace():
        return False
    following = rest.lstrip()
    return bool(following) and (following[0].isupper() or following[0].isdigit())


def split_sentences(answer: str) -> SentenceMap:
    """Deterministically split an answer into 1-indexed sentences.

    Numbered-list lines are their own sentences (split at newlines); other
    newlines act as plain whitespace. Joining the result with single spaces
    reproduces the answer modulo collapsed whitespace. An answer with no
    boundary becomes a single sentence.
    """
    if not answer or not answer.strip():
        raise ValueError("cannot split an empty answer")
    blocks: list[str] = []
    pending: list[str] = []
    for line in answer.split("\n"):
        if not line.strip():
            continue
        if _LIST_ITEM_RE.match(line):
            if pending:
                blocks.append(" ".join(pending))
                pending = []
            blocks.append(line.strip())
        else:
            pending.append(line.strip())
    if pending:
        blocks.append(" ".join(pending))

    sentences: list[str] = []
    for block in blocks:
        sentences.extend(_split_block(block))
    return SentenceMap(tuple(sentences))


def context_text(chunks: Sequence[DocumentChunk]) -> str:
    """Retrieved chunks rendered as generation context: full text of each
    chunk, concatenated in rank order."""
    return "\n\n".join(chunk.text for chunk in chunks)


def generate_answer(
    query: Query,
    context: Sequence[DocumentChunk],
    provider: ChatProvider,
    temperature: float = 0.0,
    max_tokens: int | None = None,
) -> str:
    """Produce the textual answer for a query over retrieved context."""
    if not context:
        raise ValueError("generation requires non-empty context")
    prompt = render(
        TEXT_ANSWER,
        {"query_str": query.text, "context_str": context_text(context)},
    )
    request = ChatRequest.user(
        prompt, model=provider.model, temperature=temperature, max_tokens=max_tokens
    )
    response = provider.complete(request)
    if not response.text.strip():
        raise EmptyCompletion("text generator returned an empty answer")
    return response.text
