"""Per-user inverted indexes, task-specific query extraction and Okapi BM25 top-k."""

from __future__ import annotations

import heapq
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .container import read_container, write_container
from .store import ProfileItem, TaskInstance, UserProfile
from .tasks import TaskKind, TaskTable, task_spec

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character.

    >>> tokenize("QuickSense: Fast and energy-efficient")
    ['quicksense', 'fast', 'and', 'energy', 'efficient']
    """
    return _TOKEN_RE.findall(text.lower())


class QueryExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 1
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if not isinstance(self.k, int) or self.k < 0:
            raise ValueError(f"k must be a non-negative integer, got {self.k!r}")
        if not self.k1 > 0:
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must lie in [0, 1], got {self.b}")


@dataclass(frozen=True)
class ScoredItem:
    item_ordinal: int
    score: float
    item_id: str


@dataclass(frozen=True)
class ProfileIndex:
    user_id: str
    postings: Mapping[str, tuple[tuple[int, int], ...]]
    doc_lengths: tuple[int, ...]
    item_ids: tuple[str, ...]
    avg_doc_len: float = field(init=False)

    def __post_init__(self):
        n = len(self.doc_lengths)
        object.__setattr__(self, "avg_doc_len", sum(self.doc_lengths) / n if n else 0.0)

    @property
    def N(self) -> int:
        return len(self.doc_lengths)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def tf(self, term: str, ordinal: int) -> int:
        for doc, count in self.postings.get(term, ()):
            if doc == ordinal:
                return count
        return 0


def document_text(item: ProfileItem, kind: TaskKind, table: TaskTable | None = None) -> str:
    spec = task_spec(kind, table)
    return " ".join(item.fields.get(name, "") for name in spec.retrievable_fields)


def build_index(profile: UserProfile, table: TaskTable | None = None) -> ProfileIndex:
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths = []
    for ordinal, item in enumerate(profile.items):
        counts: dict[str, int] = {}
        for tok in tokenize(document_text(item, profile.task_kind, table)):
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((ordinal, tf))
        lengths.append(sum(counts.values()))
    return ProfileIndex(
        user_id=profile.user_id,
        postings={t: tuple(p) for t, p in postings.items()},
        doc_lengths=tuple(lengths),
        item_ids=tuple(it.item_id for it in profile.items),
    )


def build_indexes(profiles: Iterable[UserProfile], table: TaskTable | None = None,
                  workers: int = 1) -> dict[str, ProfileIndex]:
    profiles = list(profiles)
    if workers <= 1:
        built = [build_index(p, table) for p in profiles]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            built = list(pool.map(lambda p: build_index(p, table), profiles))
    return {ix.user_id: ix for ix in built}


def generate_query(instance: TaskInstance, table: TaskTable | None = None) -> str:
    """Extract the retrieval query from a task input using the task's pattern."""
    spec = task_spec(instance.task_kind, table)
    m = spec.query_pattern.search(instance.input)
    if m is None:
        raise QueryExtractionError(
            f"{instance.task_kind.value} input {instance.instance_id!r} does not match the expected "
            f"pattern: {spec.query_pattern_help}")
    parts = [g.strip() for g in m.groups() if g is not None] or [m.group(0).strip()]
    return " ".join(parts)


def idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


def _unique(tokens: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(tokens))


def bm25_score(index: ProfileIndex, query_tokens: Iterable[str], item_ordinal: int,
               config: RetrievalConfig = RetrievalConfig()) -> float:
    if not 0 <= item_ordinal < index.N:
        raise IndexError(f"item ordinal {item_ordinal} outside 0..{index.N - 1}")
    k1, b = config.k1, config.b
    norm = k1 * (1.0 - b + b * index.doc_lengths[item_ordinal] / index.avg_doc_len) if index.avg_doc_len else k1 * (1.0 - b)
    score = 0.0
    for term in _unique(query_tokens):
        tf = index.tf(term, item_ordinal)
        if tf:
            score += idf(index.N, index.df(term)) * (tf * (k1 + 1.0)) / (tf + norm)
    return score


def score_all(index: ProfileIndex, query_tokens: Iterable[str],
              config: RetrievalConfig = RetrievalConfig()) -> dict[int, float]:
    """Scores for every item sharing at least one term with the query."""
    k1, b, avg = config.k1, config.b, index.avg_doc_len
    lengths = index.doc_lengths
    scores: dict[int, float] = {}
    for term in _unique(query_tokens):
        plist = index.postings.get(term)
        if not plist:
            continue
        w = idf(index.N, len(plist))
        for doc, tf in plist:
            norm = k1 * (1.0 - b + b * lengths[doc] / avg)
            scores[doc] = scores.get(doc, 0.0) + w * (tf * (k1 + 1.0)) / (tf + norm)
    return scores


def retrieve_top_k(index: ProfileIndex, query: str | list[str],
                   config: RetrievalConfig = RetrievalConfig()) -> list[ScoredItem]:
    """Top ``min(k, N)`` items by score, ties broken by profile order.

    Items with no query overlap score 0 and still fill the list when fewer
    than k items match.
    """
    n = index.N
    k = min(config.k, n)
    if k == 0:
        return []
    tokens = tokenize(query) if isinstance(query, str) else list(query)
    scores = score_all(index, tokens, config)
    ranked = heapq.nsmallest(k, range(n), key=lambda d: (-scores.get(d, 0.0), d))
    return [ScoredItem(d, scores.get(d, 0.0), index.item_ids[d]) for d in ranked]


# ---------------------------------------------------------------------------
# optional on-disk cache of built indexes

INDEX_KIND = "indexes"


def save_indexes(indexes: Mapping[str, ProfileIndex], path: str | Path) -> None:
    payload = [
        {"user_id": ix.user_id, "item_ids": list(ix.item_ids), "doc_lengths": list(ix.doc_lengths),
         "postings": {t: [list(p) for p in plist] for t, plist in sorted(ix.postings.items())}}
        for ix in indexes.values()
    ]
    write_container(path, INDEX_KIND, payload)


def load_indexes(path: str | Path) -> dict[str, ProfileIndex]:
    out = {}
    for d in read_container(path, INDEX_KIND):
        out[d["user_id"]] = ProfileIndex(
            user_id=d["user_id"],
            postings={t: tuple((int(a), int(c)) for a, c in plist) for t, plist in d["postings"].items()},
            doc_lengths=tuple(d["doc_lengths"]),
            item_ids=tuple(d["item_ids"]),
        )
    return out
