"""Downstream prompt assembly under a hard token budget.

Layout is ``[summary] + [retrieved items, best first] + [task input]``, one
part per line.  When the budget is exceeded, retrieved items are dropped
whole from the lowest rank upward; the input and summary are never cut.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from .retrieval import ScoredItem, tokenize
from .store import ProfileItem, TaskInstance
from .tasks import TaskKind, TaskTable, task_spec

TokenCounter = Callable[[str], int]


def _approx_subword_count(text: str) -> int:
    # words x 1.3 rounded up, in integer arithmetic (10 * 1.3 is 13.000000000000002)
    return -(-13 * len(tokenize(text)) // 10)


_COUNTERS: dict[str, TokenCounter] = {
    "default": _approx_subword_count,
    "words": lambda text: len(tokenize(text)),
    "chars4": lambda text: math.ceil(len(text) / 4),
}


def register_counter(counter_id: str, fn: TokenCounter) -> None:
    """Attach a token counter, e.g. ``lambda s: len(tok.encode(s))`` for a model tokenizer."""
    _COUNTERS[counter_id] = fn


def get_counter(counter_id: str) -> TokenCounter:
    try:
        return _COUNTERS[counter_id]
    except KeyError:
        raise KeyError(f"unknown token counter {counter_id!r}; registered: {sorted(_COUNTERS)}") from None


def count_tokens(text: str, token_counter_id: str = "default") -> int:
    return get_counter(token_counter_id)(text)


class PromptBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class PromptPolicy:
    max_tokens: int = 512
    k: int = 1
    include_summary: bool = False
    token_counter_id: str = "default"
    separator: str = "\n"

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")
        if self.k < 0:
            raise ValueError(f"k must be non-negative, got {self.k}")


@dataclass(frozen=True)
class PromptPart:
    kind: str  # "summary" | "item" | "input"
    text: str
    token_count: int
    rank: int | None = None
    item_id: str | None = None


@dataclass(frozen=True)
class ConstructedPrompt:
    text: str
    parts: tuple[PromptPart, ...]
    total_tokens: int
    dropped_items: int
    separator_tokens: int = 0

    @property
    def items(self) -> tuple[PromptPart, ...]:
        return tuple(p for p in self.parts if p.kind == "item")

    @property
    def summary(self) -> PromptPart | None:
        return next((p for p in self.parts if p.kind == "summary"), None)


class HasText(Protocol):
    text: str


_WS = re.compile(r"\s+")


def _one_line(text: str) -> str:
    return _WS.sub(" ", text).strip()


def render_item(item: ProfileItem, task_kind: TaskKind | str, table: TaskTable | None = None) -> str:
    spec = task_spec(task_kind, table)
    values = {k: _one_line(v) for k, v in item.fields.items()}
    template = spec.item_template
    if spec.item_template_minimal and any(not values.get(f) for f in spec.optional_fields):
        template = spec.item_template_minimal
    try:
        return template.format_map(values)
    except KeyError as exc:
        raise KeyError(f"item {item.item_id!r} lacks field {exc} needed by the {spec.kind.value} rendering") from None


def _total(parts: Sequence[PromptPart], sep_tokens: int) -> int:
    return sum(p.token_count for p in parts) + sep_tokens * max(len(parts) - 1, 0)


def fit_to_budget(parts: Sequence[PromptPart], policy: PromptPolicy) -> tuple[list[PromptPart], int]:
    """Drop retrieved items, lowest rank first, until the parts fit ``policy.max_tokens``.

    Returns the surviving parts (original order) and the number dropped.
    """
    sep_tokens = count_tokens(policy.separator, policy.token_counter_id)
    kept = list(parts)
    dropped = 0
    while _total(kept, sep_tokens) > policy.max_tokens:
        items = [i for i, p in enumerate(kept) if p.kind == "item"]
        if not items:
            fixed = ", ".join(f"{p.kind} ({p.token_count} tokens)" for p in kept)
            raise PromptBudgetError(
                f"{fixed} exceed max_tokens={policy.max_tokens} even with every retrieved item dropped")
        worst = max(items, key=lambda i: (kept[i].rank if kept[i].rank is not None else i, i))
        del kept[worst]
        dropped += 1
    return kept, dropped


def build_prompt(
    instance: TaskInstance,
    retrieved: Sequence[tuple[ScoredItem, ProfileItem]],
    summary: HasText | str | None,
    policy: PromptPolicy,
    table: TaskTable | None = None,
) -> ConstructedPrompt:
    if len(retrieved) > policy.k:
        raise ValueError(f"{len(retrieved)} retrieved items exceed policy k={policy.k}")
    spec = task_spec(instance.task_kind, table)
    count = get_counter(policy.token_counter_id)
    parts: list[PromptPart] = []
    if policy.include_summary:
        if summary is None:
            raise ValueError(f"policy requires a summary but none was given for user {instance.user_id!r}")
        s_text = summary if isinstance(summary, str) else summary.text
        s_text = spec.summary_template.format(summary=s_text)
        parts.append(PromptPart("summary", s_text, count(s_text)))
    for rank, (scored, item) in enumerate(retrieved):
        line = render_item(item, instance.task_kind, table)
        parts.append(PromptPart("item", line, count(line), rank=rank, item_id=scored.item_id))
    x = spec.input_template.format(input=instance.input)
    parts.append(PromptPart("input", x, count(x)))
    kept, dropped = fit_to_budget(parts, policy)
    sep_tokens = count(policy.separator)
    return ConstructedPrompt(
        text=policy.separator.join(p.text for p in kept),
        parts=tuple(kept),
        total_tokens=_total(kept, sep_tokens),
        dropped_items=dropped,
        separator_tokens=sep_tokens * max(len(kept) - 1, 0),
    )
