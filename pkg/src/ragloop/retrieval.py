"""Ranked document retrieval: a local Okapi BM25 index over a JSONL corpus,
plus a client for a remote retrieval service speaking a small JSON protocol.

BM25 uses k1=1.2, b=0.75 and the non-negative idf variant
ln(1 + (N - df + 0.5) / (df + 0.5)). Duplicate query terms accumulate.
Ties are broken by ascending document id so rankings are reproducible.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence

from .http import ProtocolError, post_json
from .model import Document, document_from_dict

_TOKEN_RE = re.compile(r"[^0-9a-z]+")

K1 = 1.2
B = 0.75


class DuplicateId(ValueError):
    def __init__(self, doc_id: str):
        super().__init__(f"duplicate document id {doc_id!r}")
        self.doc_id = doc_id


class EmptyCorpus(ValueError):
    pass


class EmptyQuery(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop empty tokens."""
    return [tok for tok in _TOKEN_RE.split(text.lower()) if tok]


@dataclass(frozen=True)
class RetrievalResult:
    document: Document
    score: float


@dataclass(frozen=True)
class CorpusIndex:
    """Immutable inverted index; safe for concurrent retrieval."""

    documents: dict
    postings: dict
    doc_lengths: dict
    avg_doc_length: float

    def __len__(self) -> int:
        return len(self.documents)


def build_index(documents: Iterable[Document]) -> CorpusIndex:
    """Index a document stream; raises DuplicateId / EmptyCorpus."""
    docs: dict[str, Document] = {}
    postings: dict[str, list] = {}
    doc_lengths: dict[str, int] = {}
    for doc in documents:
        if doc.id in docs:
            raise DuplicateId(doc.id)
        if not doc.text.strip():
            raise EmptyCorpus(f"document {doc.id!r} has empty text")
        docs[doc.id] = doc
        tokens = tokenize(doc.text)
        doc_lengths[doc.id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((doc.id, tf))
    if not docs:
        raise EmptyCorpus("no documents to index")
    avg = sum(doc_lengths.values()) / len(doc_lengths)
    return CorpusIndex(documents=docs, postings=postings, doc_lengths=doc_lengths, avg_doc_length=avg)


def retrieve(index: CorpusIndex, query: str, k: int) -> list[RetrievalResult]:
    """Top-k BM25 scoring of the query against the index.

    Only documents containing at least one query term are returned, so the
    result may be shorter than k (and empty when nothing matches). Raises
    EmptyQuery when the query has no tokens.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = tokenize(query)
    if not terms:
        raise EmptyQuery(f"query {query!r} has no tokens")

    n = len(index.documents)
    scores: dict[str, float] = {}
    for term in terms:
        posting = index.postings.get(term)
        if not posting:
            continue
        idf = math.log(1.0 + (n - len(posting) + 0.5) / (len(posting) + 0.5))
        for doc_id, tf in posting:
            length_norm = 1.0 - B + B * index.doc_lengths[doc_id] / index.avg_doc_length
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (K1 + 1.0) / (tf + K1 * length_norm)

    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return [RetrievalResult(document=index.documents[doc_id], score=score) for doc_id, score in ranked]


def remote_retrieve(
    endpoint: str,
    query: str,
    k: int,
    *,
    timeout: float = 30.0,
    max_attempts: int = 3,
    backoff_base: float = 0.5,
) -> list[RetrievalResult]:
    """Query a remote retrieval service.

    Wire format: POST {"query", "k"} -> {"results": [{"id", "title", "text",
    "score"}]}. Results are re-sorted under the local tie rule (score
    descending, id ascending). Transport failures raise NetworkError after
    the retry budget; malformed responses raise ProtocolError.
    """
    body = post_json(
        endpoint,
        {"query": query, "k": k},
        timeout=timeout,
        max_attempts=max_attempts,
        backoff_base=backoff_base,
    )
    try:
        raw_results = body["results"]
        results = [
            RetrievalResult(
                document=Document(id=item["id"], title=item.get("title", ""), text=item["text"]),
                score=float(item["score"]),
            )
            for item in raw_results
        ]
    except (KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed retrieval response: {exc}") from exc
    results.sort(key=lambda r: (-r.score, r.document.id))
    return results


class LocalRetriever:
    """Retriever handle backed by an in-process BM25 index."""

    def __init__(self, index: CorpusIndex):
        self.index = index

    def retrieve(self, query: str, k: int) -> list[RetrievalResult]:
        return retrieve(self.index, query, k)


class RemoteRetriever:
    """Retriever handle backed by a remote retrieval service."""

    def __init__(self, endpoint: str, *, timeout: float = 30.0, backoff_base: float = 0.5):
        self.endpoint = endpoint
        self.timeout = timeout
        self.backoff_base = backoff_base

    def retrieve(self, query: str, k: int) -> list[RetrievalResult]:
        return remote_retrieve(
            self.endpoint, query, k, timeout=self.timeout, backoff_base=self.backoff_base
        )


def load_corpus(fp: IO[str]) -> Iterator[Document]:
    """Read a JSONL corpus of {"id", "title", "text"} objects."""
    for line in fp:
        line = line.strip()
        if line:
            yield document_from_dict(json.loads(line))


def load_corpus_file(path) -> list[Document]:
    with open(path, encoding="utf-8") as fp:
        return list(load_corpus(fp))
