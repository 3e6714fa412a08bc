"""Domain records shared by every stage: questions, documents, iteration
steps, trajectories, and the engine configuration.

All types are immutable value records; once constructed they can be shared
freely across threads. Trajectories serialize to JSONL, one object per line,
with the field names used here.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, Iterable, Iterator


class ConfigError(ValueError):
    """Raised when an EngineConfig violates one of its invariants."""


class KnowledgeOrder(str, Enum):
    """Which knowledge phase runs first, or whether parametric is disabled."""

    EXTERNAL_THEN_PARAMETRIC = "external-parametric"
    PARAMETRIC_THEN_EXTERNAL = "parametric-external"
    NO_PARAMETRIC = "no-parametric"


class KnowledgeSource(str, Enum):
    EXTERNAL = "External"
    PARAMETRIC = "Parametric"


class Termination(str, Enum):
    ANSWERED_EXTERNAL = "AnsweredExternal"
    ANSWERED_PARAMETRIC = "AnsweredParametric"
    FALLBACK_DIRECT = "FallbackDirect"
    BUDGET_EXHAUSTED = "BudgetExhausted"


DEFAULT_TRIGGER_TERMS = ("however", "no information", "find", "refine")


@dataclass(frozen=True)
class Question:
    """A QA item: the user input plus its reference answers.

    golden_answers is a list because QA datasets ship alias sets; matching
    takes the best over aliases. sub_answers carries the intermediate answers
    of multi-hop questions, used only during synthesis filtering.
    """

    id: str
    text: str
    golden_answers: tuple[str, ...] = ()
    sub_answers: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"question {self.id!r} has empty text")
        object.__setattr__(self, "golden_answers", tuple(self.golden_answers))
        if self.sub_answers is not None:
            object.__setattr__(self, "sub_answers", tuple(self.sub_answers))


@dataclass(frozen=True)
class Document:
    """One corpus passage (or a model-generated stand-in for one)."""

    id: str
    title: str = ""
    text: str = ""


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 512
    stop_sequences: tuple[str, ...] = ("###",)

    def __post_init__(self) -> None:
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class IterationStep:
    """One loop iteration: the query issued, the knowledge received, and the
    reasoning produced on top of it."""

    index: int
    query: str
    documents: tuple[Document, ...]
    reasoning: str
    knowledge_source: KnowledgeSource

    def __post_init__(self) -> None:
        object.__setattr__(self, "documents", tuple(self.documents))


@dataclass(frozen=True)
class Trajectory:
    """The full record of one question's run: initial reasoning, every
    iteration, and the outcome."""

    question: Question
    initial_reasoning: str
    steps: tuple[IterationStep, ...]
    final_answer: str | None
    termination: Termination

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))


@dataclass(frozen=True)
class EngineConfig:
    """Loop budgets, retrieval width, knowledge ordering, and generation
    parameters.

    Defaults follow the single-hop setup (five retrieval iterations, five
    parametric iterations, three documents per iteration); multi-hop runs
    typically want max_external_iters=10 and docs_per_iteration=2.
    """

    max_external_iters: int = 5
    max_parametric_iters: int = 5
    docs_per_iteration: int = 3
    knowledge_order: KnowledgeOrder = KnowledgeOrder.EXTERNAL_THEN_PARAMETRIC
    trigger_terms: tuple[str, ...] = DEFAULT_TRIGGER_TERMS
    generation_params: GenerationParams = field(default_factory=GenerationParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "trigger_terms", tuple(self.trigger_terms))

    def digest(self) -> str:
        """Stable short hash of the effective configuration."""
        payload = json.dumps(_config_dict(self), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def validate_config(config: EngineConfig) -> EngineConfig:
    """Check every EngineConfig invariant, returning the config unchanged.

    Raises ConfigError naming the violated invariant.
    """
    if config.max_external_iters < 0:
        raise ConfigError("max_external_iters >= 0")
    if config.max_parametric_iters < 0:
        raise ConfigError("max_parametric_iters >= 0")
    if config.max_external_iters + config.max_parametric_iters < 1:
        raise ConfigError("max_external_iters + max_parametric_iters >= 1")
    if config.docs_per_iteration < 1:
        raise ConfigError("docs_per_iteration >= 1")
    if not config.trigger_terms:
        raise ConfigError("trigger_terms must be non-empty")
    if config.generation_params.max_tokens < 1:
        raise ConfigError("generation_params.max_tokens >= 1")
    if config.generation_params.temperature < 0:
        raise ConfigError("generation_params.temperature >= 0")
    return config


def _config_dict(config: EngineConfig) -> dict:
    return {
        "max_external_iters": config.max_external_iters,
        "max_parametric_iters": config.max_parametric_iters,
        "docs_per_iteration": config.docs_per_iteration,
        "knowledge_order": config.knowledge_order.value,
        "trigger_terms": list(config.trigger_terms),
        "generation_params": {
            "temperature": config.generation_params.temperature,
            "max_tokens": config.generation_params.max_tokens,
            "stop_sequences": list(config.generation_params.stop_sequences),
        },
    }


def config_to_dict(config: EngineConfig) -> dict:
    return _config_dict(config)


def config_from_dict(data: dict) -> EngineConfig:
    gen = data.get("generation_params", {})
    return EngineConfig(
        max_external_iters=int(data.get("max_external_iters", 5)),
        max_parametric_iters=int(data.get("max_parametric_iters", 5)),
        docs_per_iteration=int(data.get("docs_per_iteration", 3)),
        knowledge_order=KnowledgeOrder(data.get("knowledge_order", "external-parametric")),
        trigger_terms=tuple(data.get("trigger_terms", DEFAULT_TRIGGER_TERMS)),
        generation_params=GenerationParams(
            temperature=float(gen.get("temperature", 0.0)),
            max_tokens=int(gen.get("max_tokens", 512)),
            stop_sequences=tuple(gen.get("stop_sequences", ("###",))),
        ),
    )


def with_overrides(config: EngineConfig, **kwargs) -> EngineConfig:
    """Return a copy of config with the given fields replaced."""
    return replace(config, **kwargs)


# --- JSONL serialization -----------------------------------------------------
#
# Field names on the wire match the dataclass fields exactly; enums serialize
# as their string values.


def question_to_dict(question: Question) -> dict:
    data = {
        "id": question.id,
        "text": question.text,
        "golden_answers": list(question.golden_answers),
    }
    if question.sub_answers is not None:
        data["sub_answers"] = list(question.sub_answers)
    return data


def question_from_dict(data: dict) -> Question:
    sub = data.get("sub_answers")
    return Question(
        id=data["id"],
        text=data["text"],
        golden_answers=tuple(data.get("golden_answers", ())),
        sub_answers=tuple(sub) if sub is not None else None,
    )


def document_to_dict(doc: Document) -> dict:
    return {"id": doc.id, "title": doc.title, "text": doc.text}


def document_from_dict(data: dict) -> Document:
    return Document(id=data["id"], title=data.get("title", ""), text=data["text"])


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "question": question_to_dict(traj.question),
        "initial_reasoning": traj.initial_reasoning,
        "steps": [
            {
                "index": step.index,
                "query": step.query,
                "documents": [document_to_dict(d) for d in step.documents],
                "reasoning": step.reasoning,
                "knowledge_source": step.knowledge_source.value,
            }
            for step in traj.steps
        ],
        "final_answer": traj.final_answer,
        "termination": traj.termination.value,
    }


def trajectory_from_dict(data: dict) -> Trajectory:
    return Trajectory(
        question=question_from_dict(data["question"]),
        initial_reasoning=data["initial_reasoning"],
        steps=tuple(
            IterationStep(
                index=s["index"],
                query=s["query"],
                documents=tuple(document_from_dict(d) for d in s["documents"]),
                reasoning=s["reasoning"],
                knowledge_source=KnowledgeSource(s["knowledge_source"]),
            )
            for s in data["steps"]
        ),
        final_answer=data.get("final_answer"),
        termination=Termination(data["termination"]),
    )


def load_dataset(fp: IO[str], *, require_golden: bool = True) -> list[Question]:
    """Read a QA dataset: JSONL of {"id", "question", "golden_answers",
    "sub_answers" (optional)} records."""
    questions = []
    for line_no, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        sub = record.get("sub_answers")
        question = Question(
            id=str(record["id"]),
            text=record["question"],
            golden_answers=tuple(record.get("golden_answers", ())),
            sub_answers=tuple(sub) if sub is not None else None,
        )
        if require_golden and not question.golden_answers:
            raise ValueError(f"dataset line {line_no}: question {question.id!r} has no golden_answers")
        questions.append(question)
    if not questions:
        raise ValueError("dataset is empty")
    return questions


def load_dataset_file(path, *, require_golden: bool = True) -> list[Question]:
    with open(path, encoding="utf-8") as fp:
        return load_dataset(fp, require_golden=require_golden)


def dump_trajectories(trajectories: Iterable[Trajectory], fp: IO[str]) -> None:
    for traj in trajectories:
        fp.write(json.dumps(trajectory_to_dict(traj), ensure_ascii=False) + "\n")


def load_trajectories(fp: IO[str]) -> Iterator[Trajectory]:
    for line in fp:
        line = line.strip()
        if line:
            yield trajectory_from_dict(json.loads(line))
