"""Manufacture iterative-retrieval training instances from QA pairs.

Per question: let the model plan from the bare question, then per iteration
sample several rewritten queries, keep the first whose retrieved documents
contain a known sub-answer (falling back to the first or a seeded-random
candidate), feed the documents back for fresh reasoning, and stop once the
reasoning stops signalling an information need. A final answer is then
elicited, and the whole record is kept only when that answer matches the
reference under normalization.

Retained records are formatted as alternating (input, output) turn pairs.
The inputs reuse the live prompt renderer's document-block surface, so
training and inference see identical strings; outputs end with a query line
except the last, which ends with the final-answer line. Exports carry a
train_mask marking which turns contribute to the training objective (the
model outputs, not the inputs).
"""

from __future__ import annotations

import hashlib
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .engine import Retriever, _History
from .evaluation import normalize_answer, read_trajectory_histogram
from .llm import Backend, GenerationRequest, assistant, user
from .model import (
    Document,
    EngineConfig,
    IterationStep,
    KnowledgeSource,
    Question,
    Termination,
    Trajectory,
    validate_config,
)
from .parsing import ParseError, detect_information_need, extract_subanswer_hits, parse_turn
from .prompts import (
    DatasetStyle,
    answer_turn,
    document_block,
    query_turn,
    render_reasoning_prompt,
    render_zero_shot_rewrite_prompt,
)
from .retrieval import EmptyQuery

DEFAULT_QUERY_SAMPLES = 5
DEFAULT_QUERY_TEMPERATURE = 0.7


class MissingAnswer(ValueError):
    """format_instance was given a trajectory without a final answer."""


@dataclass(frozen=True)
class TrainingInstance:
    """Alternating (input, output) turn pairs for one retained trajectory."""

    turns: tuple[tuple[str, str], ...]
    source_question_id: str
    iteration_count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(tuple(t) for t in self.turns))


def answer_matches(predicted: str, golden: Sequence[str]) -> bool:
    """True iff the normalized prediction equals any normalized alias."""
    pred = normalize_answer(predicted)
    return any(pred == normalize_answer(g) for g in golden)


def select_query(
    candidates: Sequence[str],
    retriever: Retriever,
    sub_answers: Sequence[str] | None,
    k: int,
    *,
    rng: random.Random | None = None,
) -> tuple[str, tuple[Document, ...]]:
    """Pick the retrieval query for one iteration.

    Candidates are scanned in sampling order and the first whose top-k
    documents contain a sub-answer wins. Without a hit the fallback is the
    first candidate when no sub-answers are known (reproducible synthesis on
    single-hop data), or a seeded-random candidate otherwise; either way only
    candidates that retrieved at least one document qualify.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    rng = rng or random.Random(0)
    retrieved: list[tuple[str, tuple[Document, ...]]] = []
    for candidate in candidates:
        try:
            results = retriever.retrieve(candidate, k)
        except EmptyQuery:
            results = []
        docs = tuple(r.document for r in results)
        retrieved.append((candidate, docs))
        if docs and sub_answers and extract_subanswer_hits(docs, sub_answers):
            return candidate, docs
    usable = [(q, docs) for q, docs in retrieved if docs]
    if not usable:
        raise ValueError("no candidate query retrieved any documents")
    if sub_answers:
        return usable[rng.randrange(len(usable))]
    return usable[0]


def synthesize_instance(
    question: Question,
    llm: Backend,
    retriever: Retriever,
    config: EngineConfig,
    max_iters: int,
    *,
    rewrite_llm: Backend | None = None,
    n_query_samples: int = DEFAULT_QUERY_SAMPLES,
    query_temperature: float = DEFAULT_QUERY_TEMPERATURE,
    dataset_style: DatasetStyle = DatasetStyle.SINGLE_HOP,
    rng: random.Random | None = None,
) -> Trajectory | None:
    """Build one candidate trajectory; return it only when the elicited final
    answer matches the reference, else None.

    A separate rewrite backend may craft the queries; it defaults to the
    reasoning backend. Exhausting max_iters while the reasoning still signals
    an information need proceeds to answer elicitation anyway and leaves the
    verdict to the filter.
    """
    validate_config(config)
    if not question.golden_answers:
        raise ValueError(f"question {question.id!r} has no golden answers")
    rewriter = rewrite_llm or llm
    rng = rng or random.Random(0)

    initial = _reason(llm, config, render_reasoning_prompt(question, None, dataset_style))
    if initial is None:
        return None

    steps: list[IterationStep] = []
    previous_reasoning = initial
    for t in range(1, max_iters + 1):
        candidates = _sample_queries(
            rewriter, config, question, previous_reasoning, n_query_samples, query_temperature
        )
        if not candidates:
            return None
        query, docs = select_query(
            candidates, retriever, question.sub_answers, config.docs_per_iteration, rng=rng
        )
        pending = IterationStep(
            index=t,
            query=query,
            documents=docs,
            reasoning="",
            knowledge_source=KnowledgeSource.EXTERNAL,
        )
        history = _History(initial, tuple(steps) + (pending,))
        reasoning = _reason(llm, config, render_reasoning_prompt(question, history, dataset_style))
        if reasoning is None:
            return None
        steps.append(
            IterationStep(
                index=t,
                query=query,
                documents=docs,
                reasoning=reasoning,
                knowledge_source=KnowledgeSource.EXTERNAL,
            )
        )
        if not detect_information_need(reasoning, config.trigger_terms):
            break
        previous_reasoning = reasoning

    answer = _elicit_answer(llm, config, question, initial, steps, dataset_style)
    if answer is None or not answer_matches(answer, question.golden_answers):
        return None
    return Trajectory(
        question=question,
        initial_reasoning=initial,
        steps=tuple(steps),
        final_answer=answer,
        termination=Termination.ANSWERED_EXTERNAL,
    )


def _generate(llm: Backend, config: EngineConfig, messages, *, temperature=None, n=1) -> list[str]:
    params = config.generation_params
    request = GenerationRequest(
        messages=tuple(messages),
        temperature=params.temperature if temperature is None else temperature,
        max_tokens=params.max_tokens,
        stop_sequences=params.stop_sequences,
        n_samples=n,
    )
    return llm.generate(request)


def _reason(llm: Backend, config: EngineConfig, messages) -> str | None:
    """One reasoning turn; the reasoning segment with marker lines stripped."""
    raw = _generate(llm, config, messages)[0]
    try:
        reasoning = parse_turn(raw, config.trigger_terms).reasoning
    except ParseError:
        return None
    return reasoning or None


def _sample_queries(
    rewriter: Backend,
    config: EngineConfig,
    question: Question,
    analysis: str,
    n_samples: int,
    temperature: float,
) -> list[str]:
    messages = render_zero_shot_rewrite_prompt(question, analysis)
    replies = _generate(rewriter, config, messages, temperature=temperature, n=n_samples)
    candidates = []
    for reply in replies:
        query = _extract_query(reply)
        if query:
            candidates.append(query)
    return candidates


def _extract_query(reply: str) -> str | None:
    """The rewriter may echo a "Query:" line or answer bare; accept both."""
    if not reply.strip():
        return None
    parsed = parse_turn(reply, ())
    if parsed.query:
        return parsed.query
    for line in reply.splitlines():
        if line.strip():
            return line.strip()
    return None


def _elicit_answer(
    llm: Backend,
    config: EngineConfig,
    question: Question,
    initial_reasoning: str,
    steps: Sequence[IterationStep],
    dataset_style: DatasetStyle,
) -> str | None:
    """Ask for the final answer on top of the full reasoning history."""
    history = _History(initial_reasoning, tuple(steps))
    messages = list(render_reasoning_prompt(question, history, dataset_style))
    last_reasoning = steps[-1].reasoning if steps else initial_reasoning
    messages.append(assistant(last_reasoning))
    messages.append(user(f"Question: {question.text}\n\nFinal Answer:"))
    raw = _generate(llm, config, messages)[0]
    try:
        parsed = parse_turn(raw, config.trigger_terms)
    except ParseError:
        return None
    if parsed.final_answer is not None:
        return parsed.final_answer
    bare = raw.strip()
    if bare.endswith("."):
        bare = bare[:-1].rstrip()
    return bare or None


# --- Formatting and export ----------------------------------------------------


def format_instance(trajectory: Trajectory) -> TrainingInstance:
    """Turn a finished trajectory into alternating (input, output) pairs.

    Turn 0 pairs the question text with the initial reasoning plus the first
    query; each later turn pairs a rendered document block with the reasoning
    it produced, ending with the final-answer turn.
    """
    if trajectory.final_answer is None:
        raise MissingAnswer(f"trajectory for {trajectory.question.id!r} has no final answer")
    steps = trajectory.steps
    turns: list[tuple[str, str]] = []
    if not steps:
        turns.append(
            (trajectory.question.text, answer_turn(trajectory.initial_reasoning, trajectory.final_answer))
        )
    else:
        turns.append(
            (trajectory.question.text, query_turn(trajectory.initial_reasoning, 1, steps[0].query))
        )
        for i, step in enumerate(steps):
            block = document_block(step.index, step.documents)
            if i + 1 < len(steps):
                nxt = steps[i + 1]
                turns.append((block, query_turn(step.reasoning, nxt.index, nxt.query)))
            else:
                turns.append((block, answer_turn(step.reasoning, trajectory.final_answer)))
    return TrainingInstance(
        turns=tuple(turns),
        source_question_id=trajectory.question.id,
        iteration_count=len(steps),
    )


def instance_to_dict(instance: TrainingInstance) -> dict:
    messages = []
    mask = []
    for x, y in instance.turns:
        messages.append({"role": "user", "content": x})
        messages.append({"role": "assistant", "content": y})
        mask.extend([0, 1])
    return {
        "source_question_id": instance.source_question_id,
        "messages": messages,
        "train_mask": mask,
    }


def instance_from_dict(data: dict) -> TrainingInstance:
    messages = data["messages"]
    if len(messages) % 2 != 0:
        raise ValueError("training line must hold alternating user/assistant pairs")
    turns = tuple(
        (messages[i]["content"], messages[i + 1]["content"]) for i in range(0, len(messages), 2)
    )
    return TrainingInstance(
        turns=turns,
        source_question_id=data["source_question_id"],
        iteration_count=len(turns) - 1,
    )


def export_training_file(
    instances: Sequence[TrainingInstance],
    path,
    *,
    seed: int = 0,
    config_digest: str = "",
) -> None:
    """Write the training JSONL: a meta header line, then one instance per
    line with its loss mask. Raises on an empty instance list without
    touching the file."""
    if not instances:
        raise ValueError("no instances to export")
    with open(path, "w", encoding="utf-8") as fp:
        header = {
            "meta": {
                "seed": seed,
                "config_digest": config_digest,
                "instance_count": len(instances),
            }
        }
        fp.write(json.dumps(header, ensure_ascii=False) + "\n")
        for instance in instances:
            fp.write(json.dumps(instance_to_dict(instance), ensure_ascii=False) + "\n")


def import_training_file(path) -> tuple[dict, list[TrainingInstance]]:
    with open(path, encoding="utf-8") as fp:
        lines = [line for line in (raw.strip() for raw in fp) if line]
    if not lines:
        raise ValueError(f"{path} is empty")
    meta = json.loads(lines[0])["meta"]
    return meta, [instance_from_dict(json.loads(line)) for line in lines[1:]]


# --- Batch driver ---------------------------------------------------------------


@dataclass
class SynthesisReport:
    """Outcome of a synthesis run over a dataset."""

    questions: int
    retained: int
    filtered: int
    errors: list
    trajectories: list
    instances: list

    @property
    def retention(self) -> float:
        return self.retained / self.questions if self.questions else 0.0

    def iteration_histogram(self) -> dict:
        return read_trajectory_histogram(self.trajectories)

    def stats_dict(self, *, seed: int, config_digest: str) -> dict:
        return {
            "seed": seed,
            "config_digest": config_digest,
            "questions": self.questions,
            "retained": self.retained,
            "filtered": self.filtered,
            "errors": [{"id": qid, "error": msg} for qid, msg in self.errors],
            "retention": self.retention,
            "iteration_histogram": {str(k): v for k, v in self.iteration_histogram().items()},
        }


def derive_seed(seed: int, question_id: str) -> int:
    """Per-question seed, stable across platforms and execution order."""
    digest = hashlib.sha256(f"{seed}:{question_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def synthesize_dataset(
    questions: Sequence[Question],
    llm: Backend,
    retriever: Retriever,
    config: EngineConfig,
    max_iters: int,
    *,
    seed: int = 0,
    parallelism: int = 1,
    rewrite_llm: Backend | None = None,
    n_query_samples: int = DEFAULT_QUERY_SAMPLES,
    query_temperature: float = DEFAULT_QUERY_TEMPERATURE,
    dataset_style: DatasetStyle = DatasetStyle.SINGLE_HOP,
) -> SynthesisReport:
    """Synthesize over a whole dataset; question order and per-question seeds
    make the output independent of parallelism."""

    def run_one(question: Question):
        backend = llm.clone() if hasattr(llm, "clone") else llm
        rewriter = None
        if rewrite_llm is not None:
            rewriter = rewrite_llm.clone() if hasattr(rewrite_llm, "clone") else rewrite_llm
        try:
            trajectory = synthesize_instance(
                question,
                backend,
                retriever,
                config,
                max_iters,
                rewrite_llm=rewriter,
                n_query_samples=n_query_samples,
                query_temperature=query_temperature,
                dataset_style=dataset_style,
                rng=random.Random(derive_seed(seed, question.id)),
            )
            return trajectory, None
        except Exception as exc:
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        outcomes = list(pool.map(run_one, questions))

    trajectories = []
    errors = []
    filtered = 0
    for question, (trajectory, error) in zip(questions, outcomes):
        if error is not None:
            errors.append((question.id, error))
        elif trajectory is None:
            filtered += 1
        else:
            trajectories.append(trajectory)
    instances = [format_instance(t) for t in trajectories]
    return SynthesisReport(
        questions=len(questions),
        retained=len(trajectories),
        filtered=filtered,
        errors=errors,
        trajectories=trajectories,
        instances=instances,
    )
