"""The autonomous iterate-retrieve-reason loop.

A run starts from the bare question, lets the model plan and emit a query,
feeds retrieved documents back as user turns, and stops the moment a turn
carries a final answer. When the external-retrieval budget runs out, the
model's own generated documents take over for a second budget; if that also
runs out, a closed-book direct answer is the last resort. The two knowledge
phases can be reordered or the parametric one disabled via configuration.

At every turn the query branch is tested before the final-answer branch. A
turn carrying neither marker gets exactly one re-generation per run (an
untuned backend occasionally drops the scaffold); a second markerless turn
ends the run as BudgetExhausted with no answer.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Protocol, Sequence

from .llm import Backend, GenerationRequest
from .model import (
    Document,
    EngineConfig,
    IterationStep,
    KnowledgeOrder,
    KnowledgeSource,
    Question,
    Termination,
    Trajectory,
    validate_config,
)
from .parsing import ParseError, ParsedOutput, parse_turn
from .prompts import (
    DatasetStyle,
    render_naive_prompt,
    render_parametric_doc_prompt,
    render_reasoning_prompt,
)
from .retrieval import RetrievalResult

TraceSink = Callable[[dict], None]


class EngineError(RuntimeError):
    """A run could not proceed (for example, retrieval returned nothing)."""


class Retriever(Protocol):
    def retrieve(self, query: str, k: int) -> list[RetrievalResult]: ...


class EnginePhase(str, Enum):
    EXTERNAL = "external"
    PARAMETRIC = "parametric"
    DONE = "done"


@dataclass(frozen=True)
class TrajectoryFailure:
    """Error record for a batch slot whose run failed."""

    question: Question
    error: str


@dataclass(frozen=True)
class _History:
    """Duck-typed trajectory-so-far view for the prompt renderer."""

    initial_reasoning: str
    steps: tuple[IterationStep, ...]


class EngineSession:
    """One question's stateful run; single-threaded, use one per question."""

    def __init__(
        self,
        config: EngineConfig,
        question: Question,
        llm: Backend,
        retriever: Retriever | None,
        *,
        dataset_style: DatasetStyle = DatasetStyle.SINGLE_HOP,
        trace_sink: TraceSink | None = None,
    ):
        validate_config(config)
        if retriever is None and config.max_external_iters > 0:
            raise ValueError("a retriever is required when max_external_iters > 0")
        self.config = config
        self.question = question
        self.llm = llm
        self.retriever = retriever
        self.dataset_style = dataset_style
        self.trace_sink = trace_sink
        self.phase = EnginePhase.EXTERNAL
        self.llm_calls = 0
        self.retrievals = 0
        self._regenerated = False
        self._initial_reasoning = ""
        self._steps: list[IterationStep] = []

    # -- public ---------------------------------------------------------------

    def run(self) -> Trajectory:
        prev = self._generate_turn(render_reasoning_prompt(self.question, None, self.dataset_style))
        self._initial_reasoning = prev.reasoning
        t = 1

        for phase, budget in self._phases():
            self.phase = phase
            used = 0
            while used < budget:
                if prev.query is not None:
                    self._emit("iteration_started", t, {"phase": phase.value})
                    self._emit("query_issued", t, {"query": prev.query})
                    documents = self._acquire_documents(phase, prev.query, t)
                    self._emit(
                        "docs_received",
                        t,
                        {"source": phase.value, "document_ids": [d.id for d in documents]},
                    )
                    step = IterationStep(
                        index=t,
                        query=prev.query,
                        documents=documents,
                        reasoning="",
                        knowledge_source=(
                            KnowledgeSource.EXTERNAL
                            if phase is EnginePhase.EXTERNAL
                            else KnowledgeSource.PARAMETRIC
                        ),
                    )
                    history = _History(self._initial_reasoning, tuple(self._steps) + (step,))
                    turn = self._generate_turn(
                        render_reasoning_prompt(self.question, history, self.dataset_style)
                    )
                    self._steps.append(replace(step, reasoning=turn.reasoning))
                    if turn.query is None and turn.final_answer is None:
                        return self._finish(None, Termination.BUDGET_EXHAUSTED)
                    prev = turn
                    t += 1
                    used += 1
                elif prev.final_answer is not None:
                    termination = (
                        Termination.ANSWERED_EXTERNAL
                        if phase is EnginePhase.EXTERNAL
                        else Termination.ANSWERED_PARAMETRIC
                    )
                    self._emit("answer_found", t - 1, {"answer": prev.final_answer})
                    return self._finish(prev.final_answer, termination)
                else:
                    return self._finish(None, Termination.BUDGET_EXHAUSTED)

        answer = self._direct_answer()
        self._emit("answer_found", t - 1, {"answer": answer})
        return self._finish(answer, Termination.FALLBACK_DIRECT)

    # -- internals ------------------------------------------------------------

    def _phases(self) -> list[tuple[EnginePhase, int]]:
        external = (EnginePhase.EXTERNAL, self.config.max_external_iters)
        parametric = (EnginePhase.PARAMETRIC, self.config.max_parametric_iters)
        order = self.config.knowledge_order
        if order is KnowledgeOrder.NO_PARAMETRIC:
            return [external]
        if order is KnowledgeOrder.PARAMETRIC_THEN_EXTERNAL:
            return [parametric, external]
        return [external, parametric]

    def _acquire_documents(self, phase: EnginePhase, query: str, t: int) -> tuple[Document, ...]:
        if phase is EnginePhase.EXTERNAL:
            assert self.retriever is not None
            results = self.retriever.retrieve(query, self.config.docs_per_iteration)
            self.retrievals += 1
            if not results:
                raise EngineError(f"retrieval returned no documents for query {query!r}")
            return tuple(r.document for r in results)
        raw = self._generate_raw(render_parametric_doc_prompt(self.question, query))
        return (Document(id=f"parametric-{t}", title="", text=raw.strip()),)

    def _generate_raw(self, messages) -> str:
        params = self.config.generation_params
        request = GenerationRequest(
            messages=tuple(messages),
            temperature=params.temperature,
            max_tokens=params.max_tokens,
            stop_sequences=params.stop_sequences,
            n_samples=1,
        )
        self.llm_calls += 1
        return self.llm.generate(request)[0]

    def _generate_turn(self, messages) -> ParsedOutput:
        turn = self._parse(self._generate_raw(messages))
        if turn.query is None and turn.final_answer is None and not self._regenerated:
            self._regenerated = True
            turn = self._parse(self._generate_raw(messages))
        return turn

    def _parse(self, raw: str) -> ParsedOutput:
        try:
            return parse_turn(raw, self.config.trigger_terms)
        except ParseError:
            # An empty completion behaves like a markerless turn.
            return ParsedOutput(
                raw=raw, reasoning="", query=None, final_answer=None, has_information_need=False
            )

    def _direct_answer(self) -> str:
        return self._generate_raw(render_naive_prompt(self.question)).strip()

    def _finish(self, final_answer: str | None, termination: Termination) -> Trajectory:
        self.phase = EnginePhase.DONE
        return Trajectory(
            question=self.question,
            initial_reasoning=self._initial_reasoning,
            steps=tuple(self._steps),
            final_answer=final_answer,
            termination=termination,
        )

    def _emit(self, event: str, t: int, payload: dict) -> None:
        if self.trace_sink is not None:
            body = {"question_id": self.question.id}
            body.update(payload)
            self.trace_sink({"event": event, "t": t, "payload": body})


def run_trajectory(
    config: EngineConfig,
    question: Question,
    llm: Backend,
    retriever: Retriever | None,
    *,
    dataset_style: DatasetStyle = DatasetStyle.SINGLE_HOP,
    trace_sink: TraceSink | None = None,
) -> Trajectory:
    """Run the full loop for one question and return its trajectory."""
    session = EngineSession(
        config, question, llm, retriever, dataset_style=dataset_style, trace_sink=trace_sink
    )
    return session.run()


def run_batch(
    config: EngineConfig,
    questions: Sequence[Question],
    llm: Backend,
    retriever: Retriever | None,
    parallelism: int = 1,
    *,
    dataset_style: DatasetStyle = DatasetStyle.SINGLE_HOP,
    trace_sink: TraceSink | None = None,
) -> list[Trajectory | TrajectoryFailure]:
    """Run many questions, preserving input order in the result list.

    A failing question yields a TrajectoryFailure in its slot and never
    aborts the batch. Backends with a clone() method (the scripted mock) get
    one fresh instance per question, which keeps results identical at any
    parallelism; other backends are shared and must tolerate concurrent
    calls. The trace sink, when given, must be thread-safe.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def run_one(question: Question) -> Trajectory | TrajectoryFailure:
        backend = llm.clone() if hasattr(llm, "clone") else llm
        try:
            return run_trajectory(
                config,
                question,
                backend,
                retriever,
                dataset_style=dataset_style,
                trace_sink=trace_sink,
            )
        except Exception as exc:
            return TrajectoryFailure(question=question, error=f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run_one, questions))


def locked_sink(sink: TraceSink) -> TraceSink:
    """Wrap a trace sink so concurrent sessions cannot interleave writes."""
    lock = threading.Lock()

    def write(event: dict) -> None:
        with lock:
            sink(event)

    return write
