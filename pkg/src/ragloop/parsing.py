"""Decompose a raw model turn into reasoning, query, final answer, and the
information-need signal that drives the retrieval loop.

Marker lines ("Initial Query:", "Refined Query:", "Query:", "Final Answer:")
are matched case-sensitively and only at line start, so markers echoed inside
retrieved-document text mid-line are ignored. When a marker appears several
times the last occurrence wins: models sometimes restate earlier queries, and
the final stated intent governs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .evaluation import normalize_answer
from .model import Document

QUERY_MARKERS = ("Initial Query:", "Refined Query:", "Query:")
ANSWER_MARKER = "Final Answer:"


class ParseError(ValueError):
    """Raised only for an empty raw turn."""


@dataclass(frozen=True)
class ParsedOutput:
    """One model turn, structurally decomposed.

    Both query and final_answer may be present at once; the engine applies
    the branch order (query first) rather than the parser.
    """

    raw: str
    reasoning: str
    query: str | None
    final_answer: str | None
    has_information_need: bool


def parse_turn(raw: str, trigger_terms: Sequence[str]) -> ParsedOutput:
    """Split a turn into reasoning and marker fields.

    The reasoning is the raw text minus all marker lines, whitespace
    normalized. A marker whose remainder is empty yields no field. Raises
    ParseError when raw is empty or whitespace-only.
    """
    if not raw.strip():
        raise ParseError("model turn is empty")

    query: str | None = None
    final_answer: str | None = None
    reasoning_lines: list[str] = []
    for line in raw.splitlines():
        marker = _match_marker(line)
        if marker is None:
            reasoning_lines.append(line)
            continue
        remainder = line[len(marker):].strip()
        if marker == ANSWER_MARKER:
            if remainder.endswith("."):
                remainder = remainder[:-1].rstrip()
            if remainder:
                final_answer = remainder
        elif remainder:
            query = remainder

    reasoning = " ".join("\n".join(reasoning_lines).split())
    return ParsedOutput(
        raw=raw,
        reasoning=reasoning,
        query=query,
        final_answer=final_answer,
        has_information_need=detect_information_need(reasoning, trigger_terms),
    )


def _match_marker(line: str) -> str | None:
    for marker in QUERY_MARKERS:
        if line.startswith(marker):
            return marker
    if line.startswith(ANSWER_MARKER):
        return ANSWER_MARKER
    return None


def detect_information_need(reasoning: str, trigger_terms: Sequence[str]) -> bool:
    """True iff any trigger term occurs case-insensitively in the reasoning."""
    lowered = reasoning.lower()
    return any(term.lower() in lowered for term in trigger_terms)


def extract_subanswer_hits(
    documents: Sequence[Document], sub_answers: Sequence[str]
) -> list[str]:
    """Sub-answers whose normalized form appears in any document's normalized
    text, in input order."""
    normalized_docs = [normalize_answer(doc.text) for doc in documents]
    return [
        sub
        for sub in sub_answers
        if any(normalize_answer(sub) in text for text in normalized_docs)
    ]
