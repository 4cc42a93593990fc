"""Offline task-aware user summaries: request building, generation, validation, caching."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import sys
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Protocol

import httpx

from .container import ContainerError, read_container, write_container
from .prompts import count_tokens, render_item
from .retrieval import tokenize
from .store import UserProfile
from .tasks import TaskKind, TaskTable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

OUTPUT_MARGIN_TOKENS = 512
DEFAULT_MAX_ATTEMPTS = 2


@dataclass(frozen=True)
class SummaryPromptTemplate:
    task_kind: TaskKind
    instruction: str
    strict_template: str | None = None

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError(f"{self.task_kind.value}: empty summarization instruction")

    @property
    def prompt_version(self) -> str:
        blob = json.dumps([self.task_kind.value, self.instruction, self.strict_template])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class BackendDescriptor:
    backend_id: str
    endpoint: str
    context_limit_tokens: int
    model: str = ""
    prompt_prefix: str = ""
    prompt_suffix: str = ""

    def __post_init__(self):
        if self.context_limit_tokens <= 0:
            raise ValueError(f"{self.backend_id}: context_limit_tokens must be positive")


@dataclass(frozen=True)
class UserSummary:
    user_id: str
    task_kind: TaskKind
    backend_id: str
    prompt_version: str
    text: str
    created_at: float = 0.0

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.user_id, self.task_kind.value, self.backend_id, self.prompt_version)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task_kind"] = self.task_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> UserSummary:
        return cls(d["user_id"], TaskKind.parse(d["task_kind"]), d["backend_id"],
                   d["prompt_version"], d["text"], float(d.get("created_at", 0.0)))


def load_summary_config(path: str | Path | None = None):
    """Return ``(templates, backends)`` from a prompts TOML file (bundled if None)."""
    if path is None:
        raw = tomllib.loads(resources.files("lampsum.data").joinpath("summary_prompts.toml").read_text("utf-8"))
    else:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    templates = {}
    for code, d in raw.get("prompts", {}).items():
        kind = TaskKind.parse(code)
        templates[kind] = SummaryPromptTemplate(kind, d["instruction"], d.get("strict_template"))
    for kind in (TaskKind.NewsCat, TaskKind.ProductRating):
        if kind in templates and not templates[kind].strict_template:
            raise ValueError(f"{kind.value} summaries require a strict_template")
    backends = {}
    for bid, d in raw.get("backends", {}).items():
        backends[bid] = BackendDescriptor(
            backend_id=bid,
            endpoint=d.get("endpoint", ""),
            context_limit_tokens=int(d["context_limit_tokens"]),
            model=d.get("model", bid),
            prompt_prefix=d.get("prompt_prefix", ""),
            prompt_suffix=d.get("prompt_suffix", ""),
        )
    return templates, backends


# ---------------------------------------------------------------------------
# request construction


class SummaryBudgetError(ValueError):
    pass


def _recency_order(profile: UserProfile) -> list[int]:
    # Newest first.  Timestamped items sort by timestamp; file order counts as
    # chronological, so later items are newer.
    return sorted(range(len(profile.items)),
                  key=lambda i: (profile.items[i].timestamp or "", i), reverse=True)


def build_summary_request(
    profile: UserProfile,
    template: SummaryPromptTemplate,
    backend: BackendDescriptor,
    cold_start_text: str | None = None,
    token_counter_id: str = "default",
    output_margin: int = OUTPUT_MARGIN_TOKENS,
    table: TaskTable | None = None,
) -> str:
    if not profile.items and not (cold_start_text and cold_start_text.strip()):
        raise ValueError(f"user {profile.user_id!r} has an empty profile and no cold-start description")
    budget = backend.context_limit_tokens - output_margin

    def tok(s: str) -> int:
        return count_tokens(s, token_counter_id)

    head = [template.instruction]
    if cold_start_text and cold_start_text.strip():
        head.append(f"User self-description: {cold_start_text.strip()}")
    used = tok(backend.prompt_prefix) + tok(backend.prompt_suffix) + sum(tok(h) for h in head)
    if used > budget:
        raise SummaryBudgetError(
            f"summary instruction needs {used} tokens but {backend.backend_id} allows {budget} "
            f"({backend.context_limit_tokens} context - {output_margin} output margin)")
    lines = []
    for i in _recency_order(profile):
        line = render_item(profile.items[i], profile.task_kind, table)
        cost = tok(line)
        if used + cost > budget:
            break
        lines.append(line)
        used += cost

    def assemble(lines: list[str]) -> str:
        body = "\n\n".join(head + (["\n".join(lines)] if lines else []))
        return f"{backend.prompt_prefix}{body}{backend.prompt_suffix}"

    request = assemble(lines)
    # counters that charge for separators can push the joined text over
    while lines and tok(request) > budget:
        lines.pop()
        request = assemble(lines)
    return request


# ---------------------------------------------------------------------------
# validation


def validate_template(text: str, task_kind: TaskKind | str,
                      templates: dict[TaskKind, SummaryPromptTemplate] | None = None) -> str | None:
    """Return None when *text* fits the task's strict template, else a description of the violation."""
    kind = TaskKind.parse(task_kind)
    if templates is None:
        templates = default_templates()
    tpl = templates.get(kind)
    if tpl is None or not tpl.strict_template:
        return None
    if re.fullmatch(tpl.strict_template, text.strip(), re.IGNORECASE | re.DOTALL):
        return None
    excerpt = text.strip()[:120]
    return f"{kind.value} summary does not match template {tpl.strict_template!r}: {excerpt!r}"


@lru_cache(maxsize=1)
def _bundled_config():
    return load_summary_config()


def default_templates() -> dict[TaskKind, SummaryPromptTemplate]:
    return _bundled_config()[0]


def default_backends() -> dict[str, BackendDescriptor]:
    return _bundled_config()[1]


# ---------------------------------------------------------------------------
# backends


class BackendTransportError(RuntimeError):
    retryable = True


class TemplateViolationError(RuntimeError):
    retryable = False

    def __init__(self, message: str, last_output: str, attempts: int):
        super().__init__(message)
        self.last_output = last_output
        self.attempts = attempts


class LLMBackend(Protocol):
    def complete(self, prompt: str, max_tokens: int) -> str: ...


class HttpLLMBackend:
    """POST ``{model, prompt, max_tokens}`` and read ``{text}`` back."""

    def __init__(self, descriptor: BackendDescriptor, timeout: float = 120.0, client: httpx.Client | None = None):
        self.descriptor = descriptor
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, prompt: str, max_tokens: int) -> str:
        body = {"model": self.descriptor.model or self.descriptor.backend_id, "prompt": prompt,
                "max_tokens": max_tokens}
        try:
            resp = self._client.post(self.descriptor.endpoint, json=body)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise BackendTransportError(f"{self.descriptor.backend_id}: {exc}") from exc
        try:
            text = resp.json()["text"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendTransportError(
                f"{self.descriptor.backend_id}: malformed response {resp.text[:200]!r}") from exc
        if not isinstance(text, str):
            raise BackendTransportError(f"{self.descriptor.backend_id}: response text is not a string")
        return text

    def close(self) -> None:
        self._client.close()


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class StubLLMBackend:
    """Table-driven stub: sha256(prompt) -> canned response, with an optional fallback."""

    def __init__(self, table: dict[str, str] | None = None, default: str | None = None):
        self.table = dict(table or {})
        self.default = default
        self.calls: list[str] = []

    def complete(self, prompt: str, max_tokens: int) -> str:
        self.calls.append(prompt)
        h = prompt_hash(prompt)
        if h in self.table:
            return self.table[h]
        if self.default is None:
            raise BackendTransportError(f"stub has no response for prompt {h[:12]}")
        return self.default


_CATEGORY_RE = re.compile(r'category: "([^"]+)"')
_STARS_RE = re.compile(r"^([1-5]) stars:", re.MULTILINE)
_STOP = frozenset("a an and are as at be by for from has have in is it of on or that the this to with was were".split())


class HeuristicLLMStub:
    """Deterministic stand-in for a summarization model.

    Reads the rendered profile lines out of the request and answers in the
    task's expected form: the modal category for news, modal positive and
    negative scores for ratings, and a keyword-based template sentence for the
    free-text tasks.
    """

    def __init__(self, task_kind: TaskKind | str):
        self.task_kind = TaskKind.parse(task_kind)
        self.calls = 0

    def complete(self, prompt: str, max_tokens: int) -> str:
        self.calls += 1
        if self.task_kind is TaskKind.NewsCat:
            cats = Counter(_CATEGORY_RE.findall(prompt))
            return f"most popular category: {cats.most_common(1)[0][0] if cats else 'politics'}"
        if self.task_kind is TaskKind.ProductRating:
            scores = [int(s) for s in _STARS_RE.findall(prompt)]
            pos = Counter(s for s in scores if s >= 4).most_common(1)
            neg = Counter(s for s in scores if s <= 2).most_common(1)
            return (f"most common positive score: {pos[0][0] if pos else 5}, "
                    f"most common negative score: {neg[0][0] if neg else 1}")
        body = prompt.split("\n\n", 1)[-1]
        words = Counter(w for w in tokenize(body) if w not in _STOP and len(w) > 2)
        top = sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))[:6]
        topics = ", ".join(w for w, _ in top) or "general topics"
        return f"This user frequently writes about {topics}."


# ---------------------------------------------------------------------------
# generation


def generate_summary(
    backend: LLMBackend,
    request: str,
    user_id: str,
    task_kind: TaskKind | str,
    backend_id: str,
    template: SummaryPromptTemplate,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    max_output_tokens: int = OUTPUT_MARGIN_TOKENS,
    clock=time.time,
) -> UserSummary:
    """Call the backend and accept the first output that passes validation.

    Transport failures propagate as ``BackendTransportError`` (retryable by the
    caller).  After *max_attempts* template violations a
    ``TemplateViolationError`` carrying the last raw output is raised.
    """
    kind = TaskKind.parse(task_kind)
    templates = {kind: template}
    last = ""
    for attempt in range(1, max_attempts + 1):
        last = backend.complete(request, max_output_tokens)
        problem = validate_template(last, kind, templates)
        if problem is None and last.strip():
            return UserSummary(user_id, kind, backend_id, template.prompt_version, last.strip(), clock())
        log.warning("user %s attempt %d/%d rejected: %s", user_id, attempt, max_attempts,
                    problem or "empty summary")
    raise TemplateViolationError(
        f"user {user_id!r}: {max_attempts} summaries failed the {kind.value} template", last, max_attempts)


# ---------------------------------------------------------------------------
# cache

CACHE_KIND = "summary"


class SummaryCache:
    """Content-addressed summary cache, one container file per key.

    Each file keeps every summary written under its key in ``history``; the
    newest is the last entry.  Writes for one key are serialized; readers see
    either the previous or the new file thanks to atomic replacement.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    @staticmethod
    def key_digest(user_id: str, task_kind: TaskKind | str, backend_id: str, prompt_version: str) -> str:
        blob = json.dumps([user_id, TaskKind.parse(task_kind).value, backend_id, prompt_version])
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _path(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.json"

    def _lock(self, digest: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(digest, threading.Lock())

    def _read(self, digest: str) -> list[UserSummary] | None:
        path = self._path(digest)
        if not path.exists():
            return None
        try:
            payload = read_container(path, CACHE_KIND)
            return [UserSummary.from_dict(d) for d in payload["history"]]
        except (ContainerError, KeyError, TypeError, ValueError) as exc:
            log.warning("ignoring corrupted summary cache entry %s: %s", path, exc)
            return None

    def put(self, summary: UserSummary) -> None:
        digest = self.key_digest(*summary.key)
        with self._lock(digest):
            history = self._read(digest) or []
            history.append(summary)
            write_container(self._path(digest), CACHE_KIND,
                            {"key": list(summary.key), "history": [s.to_dict() for s in history]})

    def get(self, user_id: str, task_kind: TaskKind | str, backend_id: str,
            prompt_version: str) -> UserSummary | None:
        history = self._read(self.key_digest(user_id, task_kind, backend_id, prompt_version))
        return history[-1] if history else None

    def history(self, user_id: str, task_kind: TaskKind | str, backend_id: str,
                prompt_version: str) -> list[UserSummary]:
        """All summaries ever stored under the key, oldest first (by ``created_at``)."""
        hist = self._read(self.key_digest(user_id, task_kind, backend_id, prompt_version)) or []
        return sorted(hist, key=lambda s: s.created_at)


def cache_put(cache: SummaryCache, summary: UserSummary) -> None:
    cache.put(summary)


def cache_get(cache: SummaryCache, user_id: str, task_kind: TaskKind | str, backend_id: str,
              prompt_version: str) -> UserSummary | None:
    return cache.get(user_id, task_kind, backend_id, prompt_version)
