"""Prompt rendering for every stage of the loop.

The few-shot demonstrations live in editable text assets under templates/
rather than code constants, since prompt variants are an experiment axis.
All renders are pure: identical inputs give byte-identical message lists.

The canonical turn surface used everywhere: documents for iteration t appear
as one "Retrieved Document_t:" block with the passage texts joined by a
single space, the first query rides an "Initial Query:" line, later queries
a "Refined Query:" line, and answers a "Final Answer:" line. The live prompt
renderer and the training-file formatter share these helpers so the two
surfaces match exactly.
"""

from __future__ import annotations

from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .llm import ChatMessage, assistant, system, user
from .model import Document, Question, Trajectory


class DatasetStyle(str, Enum):
    MULTI_HOP = "multihop"
    SINGLE_HOP = "singlehop"


_REASONING_TEMPLATES = {
    DatasetStyle.MULTI_HOP: "reasoning_multihop.txt",
    DatasetStyle.SINGLE_HOP: "reasoning_singlehop.txt",
}


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return (resources.files("ragloop") / "templates" / name).read_text(encoding="utf-8").rstrip("\n")


def document_block(index: int, documents: Sequence[Document]) -> str:
    """The user-turn surface for iteration index's knowledge."""
    joined = " ".join(doc.text for doc in documents)
    return f"Retrieved Document_{index}: {joined}"


def query_turn(reasoning: str, index: int, query: str) -> str:
    """Assistant turn ending in the query that drives iteration index."""
    marker = "Initial Query:" if index == 1 else "Refined Query:"
    return f"{reasoning}\n\n{marker} {query}"


def answer_turn(reasoning: str, answer: str) -> str:
    """Assistant turn ending in the final answer line."""
    period = "" if answer.endswith(".") else "."
    return f"{reasoning}\n\nFinal Answer: {answer}{period}"


def render_reasoning_prompt(
    question: Question,
    history: Trajectory | None,
    dataset_style: DatasetStyle,
) -> list[ChatMessage]:
    """The iterative-reasoning prompt: few-shot scaffold plus the dialogue
    so far.

    The opening user turn carries the demonstrations and the live question;
    each recorded step contributes the assistant turn that issued its query
    and the document block it received. The reasoning of the last step may
    still be pending (that is the turn about to be generated).
    """
    scaffold = load_template(_REASONING_TEMPLATES[DatasetStyle(dataset_style)])
    messages = [user(f"{scaffold}\n\nQuestion: {question.text}\n\nAnalysis:")]
    if history is None:
        return messages
    for i, step in enumerate(history.steps, start=1):
        reasoning = history.initial_reasoning if i == 1 else history.steps[i - 2].reasoning
        messages.append(assistant(query_turn(reasoning, i, step.query)))
        messages.append(user(document_block(i, step.documents)))
    return messages


def render_zero_shot_rewrite_prompt(question: Question, analysis: str) -> list[ChatMessage]:
    """Single-message prompt asking for a retrieval query given the question
    and the model's analysis; the reply is expected to follow "Query:"."""
    if not analysis.strip():
        raise ValueError("analysis must be non-empty")
    template = load_template("query_rewrite_zero_shot.txt")
    filled = template.replace("{question}", question.text).replace("{analysis}", analysis)
    return [user(filled)]


def render_parametric_doc_prompt(question: Question, query: str) -> list[ChatMessage]:
    """Prompt eliciting a self-generated wikipedia-style document for the
    query; ends with "Document:" awaiting the completion."""
    if not query.strip():
        raise ValueError("query must be non-empty")
    template = load_template("parametric_document.txt")
    filled = template.replace("{question}", question.text).replace("{query}", query)
    return [user(filled)]


def render_naive_prompt(question: Question) -> list[ChatMessage]:
    """Closed-book answer prompt."""
    return [
        system(load_template("naive_system.txt")),
        user(f"Question: {question.text}"),
    ]


def render_standard_rag_prompt(question: Question, documents: Sequence[Document]) -> list[ChatMessage]:
    """Single-shot read-then-answer prompt over retrieved documents, kept in
    retrieval rank order."""
    if not documents:
        raise ValueError("standard RAG prompt requires at least one document")
    doc_lines = "\n".join(
        f"Doc {i}(Title: {doc.title}) {doc.text}" for i, doc in enumerate(documents, start=1)
    )
    template = load_template("standard_rag_system.txt")
    return [
        system(template.replace("{documents}", doc_lines)),
        user(f"Question: {question.text}"),
    ]
