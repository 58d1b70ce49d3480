"""Chat completion providers: remote OpenAI-compatible, deterministic mock,
and record/replay cassettes.

Every paper-style result depends on an external LLM; cassettes make runs and
CI hermetic by replaying recorded transcripts, and the mock provider gives
fully offline determinism (its reply is a pure function of the request).
"""

from __future__ import annotations

import abc
import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import CassetteMiss, EmptyCompletion, ProviderError


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int | None = None

    @classmethod
    def user(
        cls,
        prompt: str,
        model: str = "default",
        system: str | None = None,
        temperature: float = 0.0,
        max_tokens: int | None = None,
    ) -> "ChatRequest":
        messages: list[ChatMessage] = []
        if system:
            messages.append(ChatMessage("system", system))
        messages.append(ChatMessage("user", prompt))
        return cls(model, tuple(messages), temperature, max_tokens)

    def canonical(self) -> str:
        return json.dumps(
            {
                "model": self.model,
                "messages": [{"role": m.role, "content": m.content} for m in self.messages],
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    def last_user_content(self) -> str:
        for message in reversed(self.messages):
            if message.role == "user":
                return message.content
        return ""


def request_hash(request: ChatRequest) -> str:
    return hashlib.sha256(request.canonical().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_s: float = 0.0


class ChatProvider(abc.ABC):
    name: str = "chat"
    model: str = "default"

    @abc.abstractmethod
    def complete(self, request: ChatRequest) -> ChatResponse:
        """Return the completion for a request. Raises ProviderError on failure."""


_IMG_INFO_RE = re.compile(r"^Image ID: (\S+)", re.MULTILINE)


class MockChatProvider(ChatProvider):
    """Offline stand-in whose reply is a pure function of the request.

    Replies are keyed off markers in the prompt text so the pipeline stays
    exercised end to end: insertion prompts get a structurally valid reply
    placing the first listed candidate after sentence 1, the one-pass prompt
    gets an interleaved answer, everything else gets ``ANSWER(<hash>)``.
    """

    name = "mock"
    model = "mock"

    def complete(self, request: ChatRequest) -> ChatResponse:
        content = request.last_user_content()
        digest = request_hash(request)[:12]
        first_image = None
        match = _IMG_INFO_RE.search(content)
        if match:
            first_image = match.group(1)

        if "Within <think> tags" in content:
            placements = {first_image: 1} if first_image else {}
            text = (
                f"<think>Candidate review {digest}: the first image supports "
                f"sentence 1.</think><answer>{json.dumps(placements)}</answer>"
            )
        elif "Only output the final answer in a single dict" in content:
            placements = {first_image: 1} if first_image else {}
            text = json.dumps(placements)
        elif "interleaved answer" in content:
            if first_image:
                text = f"ANSWER({digest}). <{first_image}> DETAIL({digest[:6]})."
            else:
                text = f"ANSWER({digest}). DETAIL({digest[:6]})."
        else:
            text = f"ANSWER({digest})"
        return ChatResponse(text=text, completion_tokens=len(text.split()))


class ScriptedChatProvider(ChatProvider):
    """Replays a fixed list of replies in order; for tests and demos."""

    name = "scripted"
    model = "scripted"

    def __init__(self, replies: list[str]):
        self._replies = list(replies)
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
            if not self._replies:
                raise ProviderError("scripted provider ran out of replies")
            return ChatResponse(text=self._replies.pop(0))


class RemoteChatProvider(ChatProvider):
    """OpenAI-compatible /chat/completions endpoint with retry + backoff."""

    name = "remote"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_s: float = 0.5,
        transport=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max(1, max_attempts)
        self.backoff_s = backoff_s
        self._transport = transport
        self._client = None

    def _get_client(self):
        import httpx

        if self._client is None:
            self._client = httpx.Client(timeout=self.timeout, transport=self._transport)
        return self._client

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: ChatRequest) -> ChatResponse:
        import httpx

        payload: dict[str, object] = {
            "model": request.model if request.model != "default" else self.model,
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages
            ],
            "temperature": request.temperature,
        }
        if request.max_tokens is not None:
            payload["max_tokens"] = request.max_tokens

        last_error: Exception | None = None
        started = time.monotonic()
        for attempt in range(self.max_attempts):
            try:
                response = self._get_client().post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=self._headers(),
                )
                response.raise_for_status()
                body = response.json()
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage", {})
                if not text or not text.strip():
                    raise EmptyCompletion("provider returned an empty completion")
                return ChatResponse(
                    text=text,
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                    latency_s=time.monotonic() - started,
                )
            except EmptyCompletion:
                raise
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff_s * (2**attempt))
        raise ProviderError(
            f"chat request failed after {self.max_attempts} attempts: {last_error}"
        ) from last_error


class CassetteChatProvider(ChatProvider):
    """Record/replay transcript provider.

    The cassette file is a JSON array of ``{request_hash, request, response}``
    entries. ``replay`` mode answers only from the file; ``record`` mode
    answers from the file when possible and otherwise asks the inner provider
    and appends the exchange (record once, replay thereafter).
    """

    name = "cassette"

    def __init__(
        self,
        path: str | Path,
        mode: str = "replay",
        inner: ChatProvider | None = None,
    ):
        if mode not in ("replay", "record"):
            raise ValueError(f"cassette mode must be replay or record, got {mode!r}")
        if mode == "record" and inner is None:
            raise ValueError("record mode requires an inner provider")
        self.path = Path(path)
        self.mode = mode
        self.inner = inner
        self.model = inner.model if inner is not None else "cassette"
        self._lock = threading.Lock()
        self._entries: list[dict] = []
        self._by_hash: dict[str, dict] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as handle:
                self._entries = json.load(handle)
            self._by_hash = {entry["request_hash"]: entry for entry in self._entries}
        if inner is None and self._entries:
            # replay requests must hash like the recorded ones, so adopt the
            # model name the transcript was recorded with
            self.model = str(self._entries[0]["request"].get("model", self.model))

    def _save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as handle:
            json.dump(self._entries, handle, ensure_ascii=False, indent=2)
        os.replace(tmp, self.path)

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = request_hash(request)
        with self._lock:
            entry = self._by_hash.get(key)
        if entry is not None:
            stored = entry["response"]
            return ChatResponse(
                text=stored["text"],
                prompt_tokens=int(stored.get("prompt_tokens", 0)),
                completion_tokens=int(stored.get("completion_tokens", 0)),
                latency_s=float(stored.get("latency_s", 0.0)),
            )
        if self.mode == "replay" or self.inner is None:
            raise CassetteMiss(f"no cassette entry for request {key[:12]}…")
        response = self.inner.complete(request)
        record = {
            "request_hash": key,
            "request": json.loads(request.canonical()),
            "response": {
                "text": response.text,
                "prompt_tokens": response.prompt_tokens,
                "completion_tokens": response.completion_tokens,
                "latency_s": response.latency_s,
            },
        }
        with self._lock:
            self._entries.append(record)
            self._by_hash[key] = record
            self._save()
        return response
