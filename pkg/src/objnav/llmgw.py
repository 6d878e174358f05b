"""Gateway to chat-completion-style model endpoints.

Handles prompt templating, the request/response wire format, retry/timeout
policy, role-specific reply grammars, and per-episode transcript logging.
Every completed exchange lands exactly once in the transcript, so an episode
driven by remote models can be replayed decision-for-decision offline.
"""
from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import BackendFailure, ProtocolError, TemplateError

ROLES = ("pruner", "planner", "caption", "verify", "label_resolve", "detector")

TEMPLATE_DIR = Path(__file__).parent / "templates"


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model: str = "default"
    auth_env: str = ""
    timeout: float = 30.0
    max_retries: int = 2


@dataclass(frozen=True)
class PromptTemplate:
    role: str
    text: str
    grammar: str = ""


def load_template(role: str, path: str | Path | None = None) -> PromptTemplate:
    path = Path(path) if path else TEMPLATE_DIR / f"{role}.txt"
    return PromptTemplate(role=role, text=path.read_text())


class _StrictBindings(dict):
    def __missing__(self, key):
        raise TemplateError(f"unbound placeholder {{{key}}}")


@dataclass(frozen=True)
class TranscriptEntry:
    role: str
    request: str
    response: str
    latency: float


@dataclass
class Transcript:
    entries: list[TranscriptEntry] = field(default_factory=list)

    def append(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps({
                    "role": e.role, "request": e.request,
                    "response": e.response, "latency": e.latency,
                }) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        entries = []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            entries.append(TranscriptEntry(doc["role"], doc["request"],
                                           doc["response"], doc["latency"]))
        return cls(entries)


class ModelGateway:
    def __init__(self, transcript: Transcript | None = None):
        self.transcript = transcript if transcript is not None else Transcript()

    def render(self, template: PromptTemplate, bindings: dict[str, str]) -> str:
        return template.text.format_map(_StrictBindings(bindings))

    def complete(self, endpoint: ModelEndpoint, request: str, role: str = "generic") -> str:
        """Single-turn completion with retries; logs the exchange on success."""
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(endpoint.auth_env, "") if endpoint.auth_env else ""
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = json.dumps({
            "model": endpoint.model,
            "messages": [{"role": "user", "content": request}],
        })
        url = endpoint.base_url.rstrip("/") + "/v1/chat/completions"
        last_error: Exception | None = None
        for _attempt in range(endpoint.max_retries + 1):
            started = time.monotonic()
            try:
                resp = requests.post(url, data=body, headers=headers, timeout=endpoint.timeout)
                if resp.status_code >= 500:
                    raise BackendFailure(f"server error {resp.status_code}")
                if resp.status_code != 200:
                    raise BackendFailure(f"unexpected status {resp.status_code}")
                doc = resp.json()
                text = doc["choices"][0]["message"]["content"]
            except (requests.RequestException, BackendFailure, KeyError, IndexError,
                    ValueError) as exc:
                last_error = exc
                continue
            self.transcript.append(TranscriptEntry(role, request, text,
                                                   time.monotonic() - started))
            return text
        raise BackendFailure(f"{role} call failed after {endpoint.max_retries + 1} attempts: {last_error}")

    def parse(self, role: str, response: str):
        return parse_reply(role, response)


class ReplayGateway(ModelGateway):
    """Serves recorded responses in order; drives transcript replay."""

    def __init__(self, transcript: Transcript):
        super().__init__(Transcript())
        self._source = list(transcript.entries)
        self._cursor = 0

    def complete(self, endpoint: ModelEndpoint, request: str, role: str = "generic") -> str:
        if self._cursor >= len(self._source):
            raise BackendFailure("transcript exhausted during replay")
        entry = self._source[self._cursor]
        self._cursor += 1
        if entry.role != role:
            raise ProtocolError(f"replay expected role {entry.role!r}, got {role!r}")
        self.transcript.append(TranscriptEntry(role, request, entry.response, 0.0))
        return entry.response


_BRACKET_RE = re.compile(r"\[([^\[\]]*)\]")
_EXPLORE_OBJ_RE = re.compile(r"<\s*explore_obj\s*>\s*[:\(]?\s*([^\n\)<]*)")
_EXPLORE_SCENE_RE = re.compile(r"<\s*explore_scene\s*>")
_YES_RE = re.compile(r"\byes\b", re.IGNORECASE)
_NO_RE = re.compile(r"\bno\b", re.IGNORECASE)


def parse_reply(role: str, response: str):
    """Apply the role's answer grammar; raises ProtocolError on mismatch.

    pruner       -> list[str]        bracketed, comma-separated labels
    planner      -> (action, ref)    "<explore_scene>" or "<explore_obj> <node>"
    verify       -> bool             yes/no
    caption      -> str              non-empty free text
    label_resolve-> str              single label line
    """
    if role == "pruner":
        match = _BRACKET_RE.search(response)
        if not match:
            raise ProtocolError("pruner reply has no bracketed list")
        inner = match.group(1).strip()
        if not inner:
            return []
        return [part.strip().strip("'\"") for part in inner.split(",") if part.strip()]
    if role == "planner":
        obj = _EXPLORE_OBJ_RE.search(response)
        if obj:
            ref = obj.group(1).strip().strip("'\"")
            if not ref:
                raise ProtocolError("explore_obj reply names no node")
            return ("explore_obj", ref)
        if _EXPLORE_SCENE_RE.search(response):
            return ("explore_scene", "")
        raise ProtocolError("planner reply contains no action token")
    if role == "verify":
        yes = _YES_RE.search(response)
        no = _NO_RE.search(response)
        if yes and not no:
            return True
        if no and not yes:
            return False
        if yes and no:
            return yes.start() < no.start()
        raise ProtocolError("verify reply is neither yes nor no")
    if role in ("caption", "label_resolve"):
        text = response.strip()
        if not text:
            raise ProtocolError(f"{role} reply is empty")
        return text.splitlines()[0].strip() if role == "label_resolve" else text
    raise ProtocolError(f"unknown role {role!r}")
