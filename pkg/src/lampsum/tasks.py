"""The six public LaMP task kinds and their per-task configuration tables."""

from __future__ import annotations

import enum
import re
import sys
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class TaskKind(str, enum.Enum):
    CitationId = "LaMP-1"
    NewsCat = "LaMP-2"
    ProductRating = "LaMP-3"
    HeadlineGen = "LaMP-4"
    TitleGen = "LaMP-5"
    TweetPara = "LaMP-7"

    @classmethod
    def parse(cls, value: str | TaskKind) -> TaskKind:
        """Accept "LaMP-1", "LaMP_1", "lamp1", "1" or a member name."""
        if isinstance(value, TaskKind):
            return value
        text = str(value).strip()
        if text in cls.__members__:
            return cls.__members__[text]
        m = re.fullmatch(r"(?i)(?:lamp[-_ ]?)?(\d)", text)
        if m:
            code = f"LaMP-{m.group(1)}"
            for kind in cls:
                if kind.value == code:
                    return kind
        raise ValueError(f"unknown task kind {value!r}; expected one of {[k.value for k in cls]}")

    def __str__(self) -> str:
        return self.value


class OutputKind(str, enum.Enum):
    BINARY_CHOICE = "binary-choice"
    LABEL_SET = "label-set"
    INTEGER_RATING = "integer-rating"
    FREE_TEXT = "free-text"


# Metric sets from the benchmark's task table; kept in code, not config,
# because they are part of the task definition rather than a tunable.
METRICS: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.CitationId: ("accuracy",),
    TaskKind.NewsCat: ("accuracy", "f1"),
    TaskKind.ProductRating: ("mae", "rmse"),
    TaskKind.HeadlineGen: ("rouge1", "rougeL"),
    TaskKind.TitleGen: ("rouge1", "rougeL"),
    TaskKind.TweetPara: ("rouge1", "rougeL"),
}


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    output_kind: OutputKind
    metrics: tuple[str, ...]
    labels: tuple[str, ...]
    required_fields: tuple[str, ...]
    optional_fields: tuple[str, ...]
    retrievable_fields: tuple[str, ...]
    timestamp_field: str | None
    query_pattern: re.Pattern
    query_pattern_help: str
    item_template: str
    item_template_minimal: str | None
    input_template: str
    summary_template: str
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def known_fields(self) -> tuple[str, ...]:
        return self.required_fields + self.optional_fields


TaskTable = dict[TaskKind, TaskSpec]


def _spec_from_mapping(code: str, raw: dict) -> TaskSpec:
    kind = TaskKind.parse(code)
    metrics = tuple(raw.get("metrics", METRICS[kind]))
    if set(metrics) != set(METRICS[kind]):
        raise ValueError(f"{kind}: metric set {metrics} differs from {METRICS[kind]}")
    return TaskSpec(
        kind=kind,
        output_kind=OutputKind(raw["output_kind"]),
        metrics=metrics,
        labels=tuple(raw.get("labels", ())),
        required_fields=tuple(raw["required_fields"]),
        optional_fields=tuple(raw.get("optional_fields", ())),
        retrievable_fields=tuple(raw["retrievable_fields"]),
        timestamp_field=raw.get("timestamp_field") or None,
        query_pattern=re.compile(raw["query_pattern"], re.IGNORECASE | re.DOTALL),
        query_pattern_help=raw.get("query_pattern_help", raw["query_pattern"]),
        item_template=raw["item_template"],
        item_template_minimal=raw.get("item_template_minimal"),
        input_template=raw.get("input_template", "{input}"),
        summary_template=raw.get("summary_template", "{summary}"),
        extra={k: v for k, v in raw.items() if k not in TaskSpec.__dataclass_fields__},
    )


def load_task_table(path: str | Path | None = None) -> TaskTable:
    """Read a task table TOML file; the bundled table is used when *path* is None.

    A user file only needs to list the tasks it overrides; missing tasks and
    missing keys fall back to the bundled values.
    """
    bundled = tomllib.loads(resources.files("lampsum.data").joinpath("tasks.toml").read_text("utf-8"))
    tables = bundled["tasks"]
    if path is not None:
        with open(path, "rb") as fh:
            user = tomllib.load(fh).get("tasks", {})
        for code, overrides in user.items():
            base = next((v for k, v in tables.items() if TaskKind.parse(k) == TaskKind.parse(code)), {})
            tables[TaskKind.parse(code).value] = {**base, **overrides}
    table = {}
    for code, raw in tables.items():
        spec = _spec_from_mapping(code, raw)
        table[spec.kind] = spec
    missing = set(TaskKind) - set(table)
    if missing:
        raise ValueError(f"task table lacks {sorted(k.value for k in missing)}")
    return table


@lru_cache(maxsize=1)
def default_task_table() -> TaskTable:
    return load_task_table()


def task_spec(kind: TaskKind | str, table: TaskTable | None = None) -> TaskSpec:
    return (table or default_task_table())[TaskKind.parse(kind)]
