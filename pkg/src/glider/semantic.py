"""Task descriptions from an LLM and their embeddings (global routing vectors).

Two back ends share one small interface:

* ``complete(prompt) -> str`` for the description model
* ``embed(text) -> np.ndarray`` (unit norm) for the embedding model

The remote clients speak the chat-completions / embeddings JSON wire format
over HTTP with bearer auth. The mock clients are pure and deterministic so
tests and the CLI's ``--mock-llm`` mode never touch the network.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import time
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np

from .errors import BadExampleCount, EmbedUnavailable, EmptyCompletion, EmptyText, LlmUnavailable

logger = logging.getLogger(__name__)

INSTRUCTION = (
    "The following are three pairs of input-output examples from one task. "
    "Generate the task instruction in one sentence that is most possibly used to command "
    "a language model to produce them. In the instruction, remember to point out the skill "
    "or knowledge required for the task to guide the language model."
)

ENV_API_KEY = "GLIDER_LLM_API_KEY"
ENV_LLM_URL = "GLIDER_LLM_BASE_URL"
ENV_EMBED_URL = "GLIDER_EMBED_BASE_URL"
ENV_LLM_MODEL = "GLIDER_LLM_MODEL"
ENV_EMBED_MODEL = "GLIDER_EMBED_MODEL"

MAX_RETRIES = 2  # three attempts in total
BACKOFF_SECONDS = 1.0
TIMEOUT_SECONDS = 30.0


class LLMClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class Embedder(Protocol):
    d_g: int

    def embed(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class InstructionRequest:
    examples: tuple[tuple[str, str], ...]
    origin: str = "expert"  # or "query"

    def __post_init__(self):
        if len(self.examples) != 3:
            raise BadExampleCount(f"exactly 3 input/output pairs are required, got {len(self.examples)}")
        if self.origin not in ("expert", "query"):
            raise ValueError(f"origin must be 'expert' or 'query', got {self.origin!r}")
        object.__setattr__(self, "examples", tuple((str(i), str(o)) for i, o in self.examples))


def build_prompt(req: InstructionRequest) -> str:
    if len(req.examples) != 3:
        raise BadExampleCount(f"exactly 3 input/output pairs are required, got {len(req.examples)}")
    blocks = [f"- Input: {inp}\n- Output: {out}" for inp, out in req.examples]
    return INSTRUCTION + "\n\n" + "\n\n".join(blocks)


def _one_sentence(text: str) -> str:
    return " ".join(text.split())


def generate_description(req: InstructionRequest, client: LLMClient) -> str:
    text = _one_sentence(client.complete(build_prompt(req)))
    if not text:
        raise EmptyCompletion("description model returned an empty completion")
    return text


def embed(text: str, embedder: Embedder) -> np.ndarray:
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    return embedder.embed(text)


def make_global_vector(
    task_examples: Sequence[tuple[str, str]],
    client: LLMClient,
    embedder: Embedder,
    origin: str = "expert",
) -> tuple[np.ndarray, str]:
    """Describe a task from three examples and embed the description."""
    req = InstructionRequest(tuple(task_examples), origin)
    description = generate_description(req, client)
    return embed(description, embedder), description


# -- mocks -----------------------------------------------------------------

_INPUT_RE = re.compile(r"^- Input: (.*?)\n- Output: ", re.S | re.M)


class MockLLMClient:
    """Offline stand-in for the description model.

    With ``canned`` set, every completion is that string. Otherwise the
    reply is the first line shared by all three example inputs (prompted
    inputs carry their task's template line), falling back to a sentence
    keyed by a hash of the prompt.
    """

    def __init__(self, canned: str | None = None):
        self.canned = canned
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        if self.canned is not None:
            return self.canned
        heads = {m.group(1).split("\n", 1)[0].strip() for m in _INPUT_RE.finditer(prompt)}
        if len(heads) == 1:
            (head,) = heads
            if head:
                return head
        digest = hashlib.blake2b(prompt.encode(), digest_size=4).hexdigest()
        return f"Reproduce the input-output behaviour shown in the examples (pattern {digest})."


class MockEmbedder:
    """Hash-seeded Gaussian direction per text; identical texts share a vector."""

    def __init__(self, d_g: int = 64):
        if d_g < 8:
            raise ValueError("d_g must be >= 8")
        self.d_g = d_g
        self.calls = 0

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        self.calls += 1
        seed = int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")
        v = np.random.default_rng(seed).standard_normal(self.d_g)
        return v / np.linalg.norm(v)


# -- remote ----------------------------------------------------------------


class _HttpBase:
    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = TIMEOUT_SECONDS,
        max_retries: int = MAX_RETRIES,
        backoff: float = BACKOFF_SECONDS,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url:
            raise ValueError("base_url is required for a remote client")
        if not model:
            raise ValueError("model name is required for a remote client")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        headers = {"content-type": "application/json"}
        if api_key:
            headers["authorization"] = f"Bearer {api_key}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def _post(self, path: str, payload: dict, unavailable: type[Exception]) -> dict:
        url = f"{self.base_url}/{path}"
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(url, json=payload)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = RuntimeError(f"HTTP {resp.status_code}")
                    continue
                resp.raise_for_status()
                return resp.json()
            except httpx.TransportError as exc:
                last = exc
                logger.warning("request to %s failed (attempt %d): %s", url, attempt + 1, exc)
            except (httpx.HTTPStatusError, ValueError) as exc:
                raise unavailable(f"{url}: {exc}") from exc
        raise unavailable(f"{url} unavailable after {self.max_retries + 1} attempts: {last}")

    def close(self) -> None:
        self._http.close()


class RemoteLLMClient(_HttpBase):
    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        data = self._post("chat/completions", payload, LlmUnavailable)
        choices = data.get("choices") or []
        if not choices:
            raise EmptyCompletion("response has no choices")
        content = (choices[0].get("message") or {}).get("content") or ""
        if not content.strip():
            raise EmptyCompletion("response content is empty")
        return content


class RemoteEmbedder(_HttpBase):
    def __init__(self, *args, d_g: int | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.d_g = d_g

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        data = self._post("embeddings", {"model": self.model, "input": text}, EmbedUnavailable)
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError) as exc:
            raise EmbedUnavailable(f"malformed embeddings response: {exc}") from exc
        norm = np.linalg.norm(vec)
        if vec.ndim != 1 or not np.isfinite(norm) or norm == 0:
            raise EmbedUnavailable("embedding is empty or degenerate")
        if self.d_g is None:
            self.d_g = vec.size
        elif vec.size != self.d_g:
            raise EmbedUnavailable(f"embedding dim {vec.size} != expected {self.d_g}")
        return vec / norm


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "mock"  # or "remote"
    d_g: int = 64
    base_url: str | None = None
    model: str | None = None

    def build(self, api_key: str | None = None) -> Embedder:
        if self.kind == "mock":
            return MockEmbedder(self.d_g)
        if self.kind == "remote":
            return RemoteEmbedder(
                self.base_url or os.environ.get(ENV_EMBED_URL, ""),
                self.model or os.environ.get(ENV_EMBED_MODEL, ""),
                api_key if api_key is not None else os.environ.get(ENV_API_KEY),
            )
        raise ValueError(f"unknown embedder kind {self.kind!r}")


def clients_from_env(llm_model: str | None = None, embed_model: str | None = None) -> tuple[RemoteLLMClient, RemoteEmbedder]:
    """Remote clients configured from GLIDER_* environment variables."""
    key = os.environ.get(ENV_API_KEY)
    llm = RemoteLLMClient(
        os.environ.get(ENV_LLM_URL, ""),
        llm_model or os.environ.get(ENV_LLM_MODEL, ""),
        key,
    )
    emb = RemoteEmbedder(
        os.environ.get(ENV_EMBED_URL) or os.environ.get(ENV_LLM_URL, ""),
        embed_model or os.environ.get(ENV_EMBED_MODEL, ""),
        key,
    )
    return llm, emb
