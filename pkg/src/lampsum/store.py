"""Dataset ingestion, profile validation and the persisted dataset store."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .container import read_container, write_container
from .tasks import OutputKind, TaskKind, TaskTable, task_spec

log = logging.getLogger(__name__)

STORE_KIND = "store"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileItem:
    item_id: str
    fields: dict[str, str]
    timestamp: str | None = None

    def get(self, name: str, default: str = "") -> str:
        return self.fields.get(name, default)


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    task_kind: TaskKind
    items: tuple[ProfileItem, ...] = ()

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class TaskInstance:
    instance_id: str
    task_kind: TaskKind
    input: str
    user_id: str
    gold: str | None = None


@dataclass(frozen=True)
class Violation:
    item_id: str
    field: str
    message: str

    def __str__(self) -> str:
        return f"item {self.item_id!r} field {self.field!r}: {self.message}"


@dataclass
class ValidationReport:
    user_id: str
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def parse_rating(text: str) -> int | None:
    """Return the integer rating 1..5 encoded in *text*, or None."""
    s = str(text).strip()
    try:
        value = float(s)
    except ValueError:
        return None
    if not value.is_integer() or not 1 <= value <= 5:
        return None
    return int(value)


def gold_conforms(kind: TaskKind, gold: str, table: TaskTable | None = None) -> bool:
    spec = task_spec(kind, table)
    if spec.output_kind is OutputKind.INTEGER_RATING:
        return parse_rating(gold) is not None
    if spec.output_kind in (OutputKind.BINARY_CHOICE, OutputKind.LABEL_SET):
        labels = {label.casefold() for label in spec.labels}
        return gold.strip().casefold() in labels
    return bool(gold.strip())


# ---------------------------------------------------------------------------
# ingestion


def _text(value: Any) -> str:
    if isinstance(value, str):
        return value
    if value is None:
        return ""
    return json.dumps(value) if isinstance(value, (list, dict)) else str(value)


def _read_json(path: str | Path, what: str) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{what} file {path} is not valid JSON: {exc}") from None


def _parse_item(raw: Any, where: str, timestamp_field: str | None) -> ProfileItem:
    if not isinstance(raw, dict):
        raise DatasetError(f"{where}: expected an object")
    if "id" not in raw:
        raise DatasetError(f"{where}: missing field 'id'")
    fields = {k: _text(v) for k, v in raw.items() if k != "id"}
    timestamp = fields.get(timestamp_field) if timestamp_field else None
    return ProfileItem(item_id=_text(raw["id"]), fields=fields, timestamp=timestamp or None)


def parse_questions(records: Any, task_kind: TaskKind | str, table: TaskTable | None = None):
    kind = TaskKind.parse(task_kind)
    spec = task_spec(kind, table)
    if not isinstance(records, list):
        raise DatasetError("questions file must contain a JSON array of records")
    instances: list[TaskInstance] = []
    profiles: dict[str, UserProfile] = {}
    seen: set[str] = set()
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise DatasetError(f"record {i}: expected an object")
        for name in ("id", "input", "profile"):
            if name not in rec:
                raise DatasetError(f"record {i}: missing field {name!r}")
        if not isinstance(rec["profile"], list):
            raise DatasetError(f"record {i}: field 'profile' must be an array")
        instance_id = _text(rec["id"])
        if instance_id in seen:
            raise DatasetError(f"record {i}: duplicate question id {instance_id!r}")
        seen.add(instance_id)
        text = _text(rec["input"])
        if not text.strip():
            raise DatasetError(f"record {i}: field 'input' is empty")
        user_id = _text(rec.get("user_id", instance_id))
        items = tuple(
            _parse_item(raw, f"record {i} profile item {j}", spec.timestamp_field)
            for j, raw in enumerate(rec["profile"])
        )
        profile = UserProfile(user_id=user_id, task_kind=kind, items=items)
        if user_id in profiles and profiles[user_id] != profile:
            raise DatasetError(f"record {i}: user {user_id!r} appears with a different profile")
        profiles[user_id] = profile
        instances.append(TaskInstance(instance_id, kind, text, user_id))
    return instances, profiles


def load_dataset(
    questions_path: str | Path,
    golds_path: str | Path | None,
    task_kind: TaskKind | str,
    table: TaskTable | None = None,
) -> tuple[list[TaskInstance], dict[str, UserProfile]]:
    kind = TaskKind.parse(task_kind)
    instances, profiles = parse_questions(_read_json(questions_path, "questions"), kind, table)
    if golds_path is not None:
        doc = _read_json(golds_path, "golds")
        if not isinstance(doc, dict) or not isinstance(doc.get("golds"), list):
            raise DatasetError(f"golds file {golds_path} must be an object with a 'golds' array")
        if "task" in doc and TaskKind.parse(doc["task"]) != kind:
            raise DatasetError(f"golds file is for task {doc['task']!r}, expected {kind.value}")
        golds: dict[str, str] = {}
        for j, g in enumerate(doc["golds"]):
            if not isinstance(g, dict) or "id" not in g or "output" not in g:
                raise DatasetError(f"gold {j}: missing field 'id' or 'output'")
            golds[_text(g["id"])] = _text(g["output"])
        by_id = {inst.instance_id for inst in instances}
        unknown = [gid for gid in golds if gid not in by_id]
        if unknown:
            raise DatasetError(f"gold id {unknown[0]!r} has no matching question" + (
                f" (and {len(unknown) - 1} more)" if len(unknown) > 1 else ""))
        joined = []
        for inst in instances:
            gold = golds.get(inst.instance_id)
            if gold is not None and not gold_conforms(kind, gold, table):
                raise DatasetError(f"gold for {inst.instance_id!r} ({gold!r}) does not fit {kind.value} outputs")
            joined.append(TaskInstance(inst.instance_id, kind, inst.input, inst.user_id, gold))
        instances = joined
    n_items = sum(len(p) for p in profiles.values())
    n_gold = sum(inst.gold is not None for inst in instances)
    log.info("loaded %s: %d instances, %d users, %d profile items, %d golds",
             kind.value, len(instances), len(profiles), n_items, n_gold)
    return instances, profiles


# ---------------------------------------------------------------------------
# validation


def validate_profile(profile: UserProfile, table: TaskTable | None = None) -> ValidationReport:
    spec = task_spec(profile.task_kind, table)
    report = ValidationReport(profile.user_id)
    seen: set[str] = set()
    for item in profile.items:
        if item.item_id in seen:
            report.violations.append(Violation(item.item_id, "id", "duplicate item id in profile"))
        seen.add(item.item_id)
        for name in spec.required_fields:
            if name not in item.fields:
                report.violations.append(Violation(item.item_id, name, "missing required field"))
            elif not item.fields[name].strip():
                report.violations.append(Violation(item.item_id, name, "required field is empty"))
        if spec.output_kind is OutputKind.INTEGER_RATING:
            score = item.fields.get("score", "")
            if score.strip() and parse_rating(score) is None:
                report.violations.append(Violation(item.item_id, "score", f"score {score!r} is not an integer 1..5"))
    return report


# ---------------------------------------------------------------------------
# persistence


def _profile_to_dict(p: UserProfile) -> dict:
    return {
        "user_id": p.user_id,
        "task_kind": p.task_kind.value,
        "items": [{"id": it.item_id, "fields": it.fields, "timestamp": it.timestamp} for it in p.items],
    }


def _profile_from_dict(d: dict) -> UserProfile:
    items = tuple(ProfileItem(it["id"], dict(it["fields"]), it.get("timestamp")) for it in d["items"])
    return UserProfile(d["user_id"], TaskKind.parse(d["task_kind"]), items)


def _instance_to_dict(t: TaskInstance) -> dict:
    return {"id": t.instance_id, "task_kind": t.task_kind.value, "input": t.input,
            "user_id": t.user_id, "gold": t.gold}


def _instance_from_dict(d: dict) -> TaskInstance:
    return TaskInstance(d["id"], TaskKind.parse(d["task_kind"]), d["input"], d["user_id"], d.get("gold"))


def persist_store(instances: Iterable[TaskInstance], profiles: dict[str, UserProfile], path: str | Path) -> None:
    payload = {
        "instances": [_instance_to_dict(t) for t in instances],
        "profiles": [_profile_to_dict(p) for p in profiles.values()],
    }
    write_container(path, STORE_KIND, payload)


def open_store(path: str | Path) -> tuple[list[TaskInstance], dict[str, UserProfile]]:
    payload = read_container(path, STORE_KIND)
    instances = [_instance_from_dict(d) for d in payload["instances"]]
    profiles = {}
    for d in payload["profiles"]:
        p = _profile_from_dict(d)
        profiles[p.user_id] = p
    return instances, profiles
