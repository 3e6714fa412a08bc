"""Model backends and the chat-message types they consume.

Two backends ship: a remote client speaking the de-facto chat-completions
JSON protocol, and a deterministic scripted mock for tests and synthesis
dry-runs. Both accept concurrent generate() calls; the mock serializes its
script consumption behind a lock so one instance stays deterministic.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

from .http import ProtocolError, post_json

ENV_URL = "AUTORAG_LLM_URL"
ENV_TOKEN = "AUTORAG_LLM_TOKEN"


class MockScriptExhausted(RuntimeError):
    """More generate() calls than the mock script provides for."""


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str


def system(content: str) -> ChatMessage:
    return ChatMessage(Role.SYSTEM, content)


def user(content: str) -> ChatMessage:
    return ChatMessage(Role.USER, content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage(Role.ASSISTANT, content)


@dataclass(frozen=True)
class GenerationRequest:
    """A validated chat-completion request.

    Messages may open with system turns, after which user and assistant
    turns must alternate starting with user; user/assistant content must be
    non-empty.
    """

    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 512
    stop_sequences: tuple[str, ...] = ()
    n_samples: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        expected = Role.USER
        seen_dialogue = False
        for msg in self.messages:
            if msg.role is Role.SYSTEM:
                if seen_dialogue:
                    raise ValueError("system messages must precede the dialogue")
                continue
            seen_dialogue = True
            if not msg.content:
                raise ValueError(f"{msg.role.value} message content must be non-empty")
            if msg.role is not expected:
                raise ValueError(f"expected {expected.value} turn, got {msg.role.value}")
            expected = Role.ASSISTANT if expected is Role.USER else Role.USER

    def last_user_content(self) -> str:
        for msg in reversed(self.messages):
            if msg.role is Role.USER:
                return msg.content
        return ""


class Backend(Protocol):
    """Anything that turns a GenerationRequest into completions."""

    def generate(self, request: GenerationRequest) -> list[str]: ...


class RemoteBackend:
    """Client for a chat-completions endpoint.

    Wire format: POST {"model", "messages", "temperature", "max_tokens",
    "n", "stop"} -> {"choices": [{"message": {"content": str}}]}. The
    endpoint and bearer token default to the AUTORAG_LLM_URL and
    AUTORAG_LLM_TOKEN environment variables.
    """

    def __init__(
        self,
        url: str | None = None,
        *,
        model: str = "default",
        token: str | None = None,
        timeout: float = 120.0,
        backoff_base: float = 0.5,
    ):
        self.url = url or os.environ.get(ENV_URL)
        if not self.url:
            raise ValueError(f"no backend URL given and {ENV_URL} is not set")
        self.model = model
        self.token = token if token is not None else os.environ.get(ENV_TOKEN)
        self.timeout = timeout
        self.backoff_base = backoff_base

    def generate(self, request: GenerationRequest) -> list[str]:
        payload = {
            "model": self.model,
            "messages": [{"role": m.role.value, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": request.n_samples,
            "stop": list(request.stop_sequences),
        }
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else None
        body = post_json(
            self.url, payload, headers=headers, timeout=self.timeout, backoff_base=self.backoff_base
        )
        try:
            contents = [choice["message"]["content"] for choice in body["choices"]]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed completion response: {exc}") from exc
        if len(contents) < request.n_samples or any(not isinstance(c, str) for c in contents):
            raise ProtocolError(
                f"expected {request.n_samples} string completions, got {len(contents)}"
            )
        return contents[: request.n_samples]


@dataclass
class ScriptEntry:
    """One mock rule: a substring pattern over the last user message and the
    responses it serves, consumed front to front."""

    match: str
    responses: list[str] = field(default_factory=list)


class ScriptedBackend:
    """Deterministic mock: entries are scanned in order and the first whose
    pattern is a substring of the last user message, with enough responses
    left for the request, serves it.

    Consumption is stateful; use clone() to give each trajectory its own
    instance so batch runs stay deterministic at any parallelism.
    """

    def __init__(self, entries: Sequence[ScriptEntry]):
        self._script = tuple(ScriptEntry(e.match, list(e.responses)) for e in entries)
        self._remaining = [list(e.responses) for e in self._script]
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        """Load a JSONL script of {"match": str, "responses": [str]} lines."""
        entries = []
        with open(path, encoding="utf-8") as fp:
            for line in fp:
                line = line.strip()
                if not line:
                    continue
                data = json.loads(line)
                entries.append(ScriptEntry(match=data["match"], responses=list(data["responses"])))
        return cls(entries)

    def clone(self) -> "ScriptedBackend":
        """Fresh backend with the pristine script, regardless of what this
        instance has already consumed."""
        return ScriptedBackend(self._script)

    def generate(self, request: GenerationRequest) -> list[str]:
        prompt = request.last_user_content()
        with self._lock:
            self.calls += 1
            for entry, remaining in zip(self._script, self._remaining):
                if entry.match in prompt and len(remaining) >= request.n_samples:
                    return [remaining.pop(0) for _ in range(request.n_samples)]
        raise MockScriptExhausted(
            f"no scripted entry with {request.n_samples} responses matches: {prompt[:120]!r}"
        )
