"""End-to-end experiment grids: configuration, offline summarization, runs, comparison reports."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import summarizer
from .client import ModelEndpoint, Prediction, PredictionError, Transport, batch_predict, make_transport
from .container import atomic_write_text
from .metrics import MetricValue, aggregate_runs, evaluate, higher_is_better
from .prompts import ConstructedPrompt, PromptBudgetError, PromptPolicy, build_prompt
from .retrieval import QueryExtractionError, RetrievalConfig, build_indexes, generate_query, retrieve_top_k
from .store import UserProfile, load_dataset, open_store
from .summarizer import (BackendDescriptor, BackendTransportError, HeuristicLLMStub, HttpLLMBackend,
                         LLMBackend, StubLLMBackend, SummaryCache, SummaryPromptTemplate,
                         TemplateViolationError, build_summary_request, load_summary_config)
from .tasks import TaskKind, TaskTable, default_task_table, load_task_table, task_spec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class MissingSummariesError(RuntimeError):
    """Raised before a run when any user lacks a cached summary; lists every gap."""

    def __init__(self, missing: Mapping[str, Sequence[str]]):
        self.missing = {b: sorted(us) for b, us in missing.items()}
        parts = [f"{b}: {len(us)} users without a cached summary ({', '.join(us)})"
                 for b, us in sorted(self.missing.items())]
        super().__init__("run `summarize` first; " + "; ".join(parts))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    task_kind: TaskKind
    questions: str | None
    golds: str | None
    output: str
    retrieval: RetrievalConfig = RetrievalConfig()
    include_summary: bool = False
    backend_id: str | None = None
    policy: PromptPolicy = PromptPolicy()
    seeds: tuple[int, ...] = (0, 1, 2)
    endpoint: ModelEndpoint = ModelEndpoint("stub:constant:")
    store: str | None = None
    summary_cache: str | None = None
    summary_prompts: str | None = None
    task_table: str | None = None
    max_in_flight: int = 4
    base_dir: str = "."

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.include_summary and not self.backend_id:
            raise ConfigError("include_summary requires backend_id")
        if self.policy.k != self.retrieval.k:
            raise ConfigError(f"prompt k={self.policy.k} differs from retrieval k={self.retrieval.k}")
        if self.questions is None and self.store is None:
            raise ConfigError("either questions or store must be given")

    @property
    def k(self) -> int:
        return self.retrieval.k

    @property
    def variant(self) -> str:
        return f"summ:{self.backend_id}" if self.include_summary else "baseline"

    def path(self, p: str | None) -> Path | None:
        return None if p is None else Path(self.base_dir) / p

    def canonical(self, prompt_version: str | None = None) -> dict:
        """Settings that define the run; seeds and output locations are excluded."""
        return {
            "task": self.task_kind.value,
            "questions": self.questions,
            "golds": self.golds,
            "store": self.store,
            "k": self.retrieval.k,
            "k1": self.retrieval.k1,
            "b": self.retrieval.b,
            "include_summary": self.include_summary,
            "backend_id": self.backend_id if self.include_summary else None,
            "prompt_version": prompt_version if self.include_summary else None,
            "max_tokens": self.policy.max_tokens,
            "token_counter": self.policy.token_counter_id,
            "endpoint": self.endpoint.address,
            "model": self.endpoint.model_id,
            "task_table": self.task_table,
        }

    def fingerprint(self, prompt_version: str | None = None) -> str:
        blob = json.dumps(self.canonical(prompt_version), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class SummarizerSettings:
    backends: tuple[str, ...] = ()
    endpoints: Mapping[str, str] = field(default_factory=dict)
    max_attempts: int = summarizer.DEFAULT_MAX_ATTEMPTS
    parallelism: int = 4
    cold_start: str | None = None


@dataclass(frozen=True)
class GridConfig:
    base: ExperimentConfig
    baseline_k: tuple[int, ...] = (0, 1, 4)
    summary_k: tuple[int, ...] = (0, 1)
    summarizer: SummarizerSettings = SummarizerSettings()
    source: str | None = None

    def experiments(self) -> list[ExperimentConfig]:
        out = []
        for k in self.baseline_k:
            out.append(_with_k(self.base, k, include_summary=False, backend_id=None))
        for backend_id in self.summarizer.backends:
            for k in self.summary_k:
                out.append(_with_k(self.base, k, include_summary=True, backend_id=backend_id))
        return out


def _with_k(cfg: ExperimentConfig, k: int, include_summary: bool, backend_id: str | None) -> ExperimentConfig:
    return replace(cfg, retrieval=replace(cfg.retrieval, k=k),
                   policy=replace(cfg.policy, k=k, include_summary=include_summary),
                   include_summary=include_summary, backend_id=backend_id)


_TOP_KEYS = {"task", "questions", "golds", "store", "output", "seeds", "summary_cache", "summary_prompts",
             "task_table", "retrieval", "prompt", "endpoint", "summarizer", "grid"}


def load_config(path: str | Path) -> GridConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(raw, base_dir=path.parent, source=str(path))


def config_from_mapping(raw: Mapping, base_dir: str | Path = ".", source: str | None = None) -> GridConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "task" not in raw:
        raise ConfigError("config lacks 'task'")
    try:
        kind = TaskKind.parse(raw["task"])
        r = raw.get("retrieval", {})
        p = raw.get("prompt", {})
        e = raw.get("endpoint", {})
        s = raw.get("summarizer", {})
        g = raw.get("grid", {})
        endpoint = ModelEndpoint(
            address=e.get("address", "stub:constant:"),
            model_id=e.get("model", "flan-t5-base"),
            timeout=float(e.get("timeout", 30.0)),
            max_retries=int(e.get("max_retries", 2)),
        )
        base = ExperimentConfig(
            task_kind=kind,
            questions=raw.get("questions"),
            golds=raw.get("golds"),
            store=raw.get("store"),
            output=raw.get("output", "results.rows.jsonl"),
            retrieval=RetrievalConfig(k=int(r.get("k", 1)), k1=float(r.get("k1", 1.2)), b=float(r.get("b", 0.75))),
            policy=PromptPolicy(max_tokens=int(p.get("max_tokens", 512)), k=int(r.get("k", 1)),
                                token_counter_id=p.get("token_counter", "default")),
            seeds=tuple(int(x) for x in raw.get("seeds", (0, 1, 2))),
            endpoint=endpoint,
            summary_cache=raw.get("summary_cache"),
            summary_prompts=raw.get("summary_prompts"),
            task_table=raw.get("task_table"),
            max_in_flight=int(e.get("max_in_flight", 4)),
            base_dir=str(base_dir),
        )
        backends = s.get("backends", [])
        if isinstance(backends, str):
            backends = [backends]
        endpoints = dict(s.get("endpoints", {}))
        if "endpoint" in s:
            for b in backends:
                endpoints.setdefault(b, s["endpoint"])
        settings = SummarizerSettings(
            backends=tuple(backends),
            endpoints=endpoints,
            max_attempts=int(s.get("max_attempts", summarizer.DEFAULT_MAX_ATTEMPTS)),
            parallelism=int(s.get("parallelism", 4)),
            cold_start=s.get("cold_start"),
        )
        return GridConfig(
            base=base,
            baseline_k=tuple(int(k) for k in g.get("baseline_k", (0, 1, 4))),
            summary_k=tuple(int(k) for k in g.get("summary_k", (0, 1))),
            summarizer=settings,
            source=source,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None


# ---------------------------------------------------------------------------
# shared loading helpers


def load_task_data(cfg: ExperimentConfig, table: TaskTable | None = None):
    if cfg.store is not None:
        instances, profiles = open_store(cfg.path(cfg.store))
    else:
        instances, profiles = load_dataset(cfg.path(cfg.questions), cfg.path(cfg.golds), cfg.task_kind, table)
    return instances, profiles


def _task_table(cfg: ExperimentConfig) -> TaskTable:
    return load_task_table(cfg.path(cfg.task_table)) if cfg.task_table else default_task_table()


def _summary_config(cfg: ExperimentConfig):
    return load_summary_config(cfg.path(cfg.summary_prompts))


# ---------------------------------------------------------------------------
# offline summarization


@dataclass
class SummarizeReport:
    backend_id: str
    succeeded: list[str] = field(default_factory=list)
    cached: list[str] = field(default_factory=list)
    retries: dict[str, int] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"backend {self.backend_id}: {len(self.succeeded)} generated, {len(self.cached)} already cached, "
               f"{sum(self.retries.values())} retries, {len(self.failures)} failures"]
        out += [f"  FAILED {u}: {why}" for u, why in sorted(self.failures.items())]
        return out


class _CountingBackend:
    def __init__(self, inner: LLMBackend):
        self.inner = inner
        self.calls = 0

    def complete(self, prompt: str, max_tokens: int) -> str:
        self.calls += 1
        return self.inner.complete(prompt, max_tokens)


def summarize_all(
    profiles: Mapping[str, UserProfile],
    backend: BackendDescriptor,
    llm: LLMBackend,
    template: SummaryPromptTemplate,
    cache: SummaryCache,
    cold_start: Mapping[str, str] | None = None,
    max_attempts: int = summarizer.DEFAULT_MAX_ATTEMPTS,
    parallelism: int = 4,
    token_counter_id: str = "default",
    table: TaskTable | None = None,
) -> SummarizeReport:
    """Populate the cache with one validated summary per user.

    Users already cached under the same prompt version are skipped.  A user
    whose summaries keep failing is reported and does not stop the batch.
    """
    report = SummarizeReport(backend.backend_id)
    cold_start = cold_start or {}
    version = template.prompt_version

    def work(user_id: str):
        profile = profiles[user_id]
        if cache.get(user_id, profile.task_kind, backend.backend_id, version) is not None:
            return user_id, "cached", 0, None
        counting = _CountingBackend(llm)
        try:
            request = build_summary_request(profile, template, backend, cold_start.get(user_id),
                                            token_counter_id=token_counter_id, table=table)
            for attempt in range(1, max_attempts + 1):
                try:
                    s = summarizer.generate_summary(counting, request, user_id, profile.task_kind,
                                                    backend.backend_id, template, max_attempts=max_attempts)
                    break
                except BackendTransportError:
                    if attempt == max_attempts:
                        raise
            cache.put(s)
            return user_id, "ok", counting.calls - 1, None
        except (TemplateViolationError, BackendTransportError, ValueError) as exc:
            return user_id, "failed", max(counting.calls - 1, 0), str(exc)

    users = sorted(profiles)
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(work, users))
    for user_id, status, retries, err in results:
        if retries:
            report.retries[user_id] = retries
        if status == "cached":
            report.cached.append(user_id)
        elif status == "ok":
            report.succeeded.append(user_id)
        else:
            report.failures[user_id] = err
    return report


def make_llm_backend(address: str, task_kind: TaskKind, descriptor: BackendDescriptor) -> LLMBackend:
    """``stub:heuristic``, ``stub:prose``, ``stub:table:<json file>`` or an HTTP URL."""
    if address == "stub:heuristic":
        return HeuristicLLMStub(task_kind)
    if address == "stub:prose":
        return StubLLMBackend(default="This user writes about a wide range of things in a friendly voice.")
    if address.startswith("stub:table:"):
        with open(address[len("stub:table:"):], encoding="utf-8") as fh:
            return StubLLMBackend(json.load(fh))
    if address.startswith("stub:"):
        raise ConfigError(f"unknown summarizer stub {address!r}")
    return HttpLLMBackend(replace(descriptor, endpoint=address))


def run_summarize(grid: GridConfig, llm_override: LLMBackend | None = None) -> list[SummarizeReport]:
    cfg = grid.base
    if not grid.summarizer.backends:
        raise ConfigError("no summarizer backend configured ([summarizer] backends = [...])")
    if not cfg.summary_cache:
        raise ConfigError("summary_cache path is not configured")
    table = _task_table(cfg)
    _, profiles = load_task_data(cfg, table)
    templates, descriptors = _summary_config(cfg)
    template = templates[cfg.task_kind]
    cold = {}
    if grid.summarizer.cold_start:
        with open(cfg.path(grid.summarizer.cold_start), encoding="utf-8") as fh:
            cold = json.load(fh)
    cache = SummaryCache(cfg.path(cfg.summary_cache))
    reports = []
    for backend_id in grid.summarizer.backends:
        if backend_id not in descriptors:
            raise ConfigError(f"unknown summarizer backend {backend_id!r}; known: {sorted(descriptors)}")
        desc = descriptors[backend_id]
        llm = llm_override or make_llm_backend(grid.summarizer.endpoints.get(backend_id, desc.endpoint),
                                               cfg.task_kind, desc)
        reports.append(summarize_all(profiles, desc, llm, template, cache, cold,
                                     max_attempts=grid.summarizer.max_attempts,
                                     parallelism=grid.summarizer.parallelism,
                                     token_counter_id=cfg.policy.token_counter_id, table=table))
    return reports


# ---------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class ResultRow:
    fingerprint: str
    task: str
    variant: str
    k: int
    seed: int
    metrics: Mapping[str, MetricValue]
    excluded: int = 0

    def records(self) -> list[dict]:
        return [
            {"fingerprint": self.fingerprint, "task": self.task, "variant": self.variant, "k": self.k,
             "seed": self.seed, "metric": m.metric_id, "value": m.value, "n": m.n, "excluded": self.excluded}
            for m in self.metrics.values()
        ]


@dataclass
class RunOutcome:
    rows: list[ResultRow]
    prompts: dict[tuple[int, str], ConstructedPrompt]
    excluded: dict[tuple[int, str], str]
    timing: list[dict]


def serialize_rows(rows: Iterable[ResultRow]) -> str:
    lines = [json.dumps(rec, sort_keys=True, separators=(",", ":")) for row in rows for rec in row.records()]
    return "".join(line + "\n" for line in lines)


def read_rows(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{n}: {exc}") from None
    return out


def _missing_summaries(cfg: ExperimentConfig, users: Iterable[str], cache: SummaryCache, version: str,
                       backend_id: str | None = None) -> list[str]:
    backend_id = backend_id or cfg.backend_id
    return sorted(u for u in set(users) if cache.get(u, cfg.task_kind, backend_id, version) is None)


def execute(cfg: ExperimentConfig, transport: Transport | None = None,
            data=None, indexes=None, table: TaskTable | None = None) -> RunOutcome:
    """Run one configuration over every seed without writing anything."""
    table = table or _task_table(cfg)
    instances, profiles = data if data is not None else load_task_data(cfg, table)
    spec = task_spec(cfg.task_kind, table)
    version = None
    summaries = {}
    if cfg.include_summary:
        templates, _ = _summary_config(cfg)
        version = templates[cfg.task_kind].prompt_version
        if not cfg.summary_cache:
            raise ConfigError("include_summary requires summary_cache")
        cache = SummaryCache(cfg.path(cfg.summary_cache))
        missing = _missing_summaries(cfg, (i.user_id for i in instances), cache, version)
        if missing:
            raise MissingSummariesError({cfg.backend_id: missing})
        for uid in sorted({i.user_id for i in instances}):
            summaries[uid] = cache.get(uid, cfg.task_kind, cfg.backend_id, version)
    if indexes is None:
        indexes = build_indexes(profiles.values(), table)
    golds = {i.instance_id: i.gold for i in instances if i.gold is not None}
    transport = transport or make_transport(cfg.endpoint, golds)
    fingerprint = cfg.fingerprint(version)

    rows, prompts, excluded, timing = [], {}, {}, []
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        batch: list[tuple[str, ConstructedPrompt]] = []
        for inst in instances:
            try:
                profile = profiles[inst.user_id]
                hits = retrieve_top_k(indexes[inst.user_id], generate_query(inst, table), cfg.retrieval)
                retrieved = [(h, profile.items[h.item_ordinal]) for h in hits]
                prompt = build_prompt(inst, retrieved, summaries.get(inst.user_id), cfg.policy, table)
            except (QueryExtractionError, PromptBudgetError) as exc:
                excluded[(seed, inst.instance_id)] = str(exc)
                continue
            prompts[(seed, inst.instance_id)] = prompt
            batch.append((inst.instance_id, prompt))
        results = batch_predict(cfg.endpoint, batch, transport, max_in_flight=cfg.max_in_flight)
        preds: dict[str, Prediction] = {}
        for res in results:
            if isinstance(res, PredictionError):
                excluded[(seed, res.instance_id)] = str(res)
            else:
                preds[res.instance_id] = res
        scored = [i for i in instances if i.instance_id in preds and i.gold is not None]
        n_excl = sum(1 for (s, _) in excluded if s == seed)
        if not scored:
            raise RuntimeError(f"{cfg.variant} k={cfg.k} seed={seed}: no instance could be scored "
                               f"({n_excl} excluded)")
        metrics = evaluate(spec.metrics, [preds[i.instance_id].output for i in scored],
                           [i.gold for i in scored], spec.labels)
        rows.append(ResultRow(fingerprint, cfg.task_kind.value, cfg.variant, cfg.k, seed, metrics, n_excl))
        lat = [p.latency_ms for p in preds.values()]
        timing.append({"fingerprint": fingerprint, "variant": cfg.variant, "k": cfg.k, "seed": seed,
                       "wall_s": time.perf_counter() - t0, "n_predictions": len(lat),
                       "median_latency_ms": statistics.median(lat) if lat else None})
        if n_excl:
            log.warning("%s k=%d seed=%d: %d instances excluded", cfg.variant, cfg.k, seed, n_excl)
    return RunOutcome(rows, prompts, excluded, timing)


def _write_results(path: Path, rows: Sequence[ResultRow], timing: list[dict], append: bool) -> None:
    text = serialize_rows(rows)
    if append and path.exists():
        text = path.read_text("utf-8") + text
    atomic_write_text(path, text)
    sidecar = path.with_name(path.name + ".timing.json")
    atomic_write_text(sidecar, json.dumps({"written_at": time.time(), "runs": timing}, indent=1) + "\n")


def run_experiment(cfg: ExperimentConfig, transport: Transport | None = None) -> RunOutcome:
    """Run one configuration and append its rows to ``cfg.output``."""
    outcome = execute(cfg, transport)
    _write_results(cfg.path(cfg.output), outcome.rows, outcome.timing, append=True)
    return outcome


def run_grid(grid: GridConfig, transport: Transport | None = None,
             output: str | Path | None = None) -> list[RunOutcome]:
    """Run every configuration of the grid and write one results file.

    Missing summaries for any summary variant abort the run before anything
    is predicted or written.
    """
    base = grid.base
    table = _task_table(base)
    data = load_task_data(base, table)
    experiments = grid.experiments()
    summary_exps = [c for c in experiments if c.include_summary]
    if summary_exps:
        templates, _ = _summary_config(base)
        version = templates[base.task_kind].prompt_version
        if not base.summary_cache:
            raise ConfigError("summary variants require summary_cache")
        cache = SummaryCache(base.path(base.summary_cache))
        missing = {}
        for backend_id in dict.fromkeys(c.backend_id for c in summary_exps):
            gaps = _missing_summaries(summary_exps[0], (i.user_id for i in data[0]), cache, version,
                                      backend_id=backend_id)
            if gaps:
                missing[backend_id] = gaps
        if missing:
            raise MissingSummariesError(missing)
    indexes = build_indexes(data[1].values(), table)
    outcomes = [execute(cfg, transport, data=data, indexes=indexes, table=table) for cfg in experiments]
    rows = [r for o in outcomes for r in o.rows]
    timing = [t for o in outcomes for t in o.timing]
    _write_results(Path(output) if output else base.path(base.output), rows, timing, append=False)
    return outcomes


def plan_lines(grid: GridConfig) -> list[str]:
    base = grid.base
    lines = [f"task {base.task_kind.value}; seeds {list(base.seeds)}; endpoint {base.endpoint.address}",
             f"data: {base.store or base.questions} (golds: {base.golds})",
             f"prompt budget {base.policy.max_tokens} tokens ({base.policy.token_counter_id} counter); "
             f"BM25 k1={base.retrieval.k1} b={base.retrieval.b}",
             f"results -> {base.path(base.output)}"]
    version = None
    if grid.summarizer.backends:
        version = _summary_config(base)[0][base.task_kind].prompt_version
    for cfg in grid.experiments():
        lines.append(f"  run {cfg.variant:<24} k={cfg.k}  fingerprint {cfg.fingerprint(version)}")
    return lines


# ---------------------------------------------------------------------------
# comparison report


class CompareError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    task: str
    metric: str
    variant: str
    k: int
    mean: float
    stddev: float
    n_runs: int
    bold: bool = False
    underline: bool = False

    def to_dict(self) -> dict:
        return {"task": self.task, "metric": self.metric, "variant": self.variant, "k": self.k,
                "mean": self.mean, "stddev": self.stddev, "n_runs": self.n_runs,
                "bold": self.bold, "underline": self.underline}


@dataclass
class Report:
    columns: list[tuple[str, int]]
    rows: list[tuple[str, str, dict[tuple[str, int], Cell]]]

    def cells(self) -> list[Cell]:
        return [c for _, _, row in self.rows for c in row.values()]

    def cell(self, task: str, metric: str, variant: str, k: int) -> Cell | None:
        for t, m, row in self.rows:
            if t == task and m == metric:
                return row.get((variant, k))
        return None

    def to_records(self) -> list[dict]:
        return [c.to_dict() for c in self.cells()]

    def render(self, show_std: bool = False) -> str:
        heads = ["task", "metric"] + [f"{v} k={k}" for v, k in self.columns]
        body = []
        for task, metric, row in self.rows:
            line = [task, metric]
            for col in self.columns:
                c = row.get(col)
                if c is None:
                    line.append("-")
                    continue
                s = f"{c.mean:.3f}" + (f"±{c.stddev:.3f}" if show_std else "")
                if c.underline:
                    s = f"_{s}_"
                if c.bold:
                    s = f"**{s}**"
                line.append(s)
            body.append(line)
        widths = [max(len(r[i]) for r in [heads] + body) for i in range(len(heads))]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        out = [fmt.format(*heads), fmt.format(*("-" * w for w in widths))]
        out += [fmt.format(*r) for r in body]
        out.append("")
        out.append("**x** best in row (lower is better for mae/rmse); _x_ summary beats baseline at the same k. "
                   "f1 is macro-averaged.")
        return "\n".join(out) + "\n"


def _better(a: float, b: float, metric: str) -> bool:
    if math.isclose(a, b, rel_tol=0.0, abs_tol=1e-12):
        return False
    return a > b if higher_is_better(metric) else a < b


def compare(records: Iterable[dict]) -> Report:
    """Aggregate result records over seeds and mark best and improved cells."""
    seen: dict[tuple, float] = {}
    fingerprints: dict[tuple, str] = {}
    groups: dict[tuple, list[MetricValue]] = {}
    for rec in records:
        try:
            task, variant, k, metric = rec["task"], rec["variant"], int(rec["k"]), rec["metric"]
            fp, seed, value, n = rec["fingerprint"], rec["seed"], float(rec["value"]), int(rec["n"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CompareError(f"malformed result record {rec!r}: {exc}") from None
        higher_is_better(metric)
        cfg_key = (task, variant, k)
        if fingerprints.setdefault(cfg_key, fp) != fp:
            raise CompareError(f"{task} {variant} k={k}: rows come from differently configured runs "
                               f"(fingerprints {fingerprints[cfg_key]} and {fp})")
        run_key = (fp, seed, metric)
        if run_key in seen:
            if seen[run_key] != value:
                raise CompareError(f"{task} {variant} k={k} seed={seed} {metric}: conflicting values")
            continue
        seen[run_key] = value
        groups.setdefault((task, metric, variant, k), []).append(MetricValue(metric, value, n))
    if not groups:
        raise CompareError("no result rows to compare")

    variants: list[str] = []
    for (_, _, v, _) in groups:
        if v not in variants:
            variants.append(v)
    order = sorted(variants, key=lambda v: (v != "baseline", variants.index(v)))
    columns = sorted({(v, k) for (_, _, v, k) in groups}, key=lambda c: (order.index(c[0]), c[1]))

    row_keys: list[tuple[str, str]] = []
    for (t, m, _, _) in groups:
        if (t, m) not in row_keys:
            row_keys.append((t, m))
    table_rows = []
    for task, metric in sorted(row_keys, key=lambda tm: (tm[0], row_keys.index(tm))):
        aggs = {(v, k): aggregate_runs(vals) for (t, m, v, k), vals in groups.items() if (t, m) == (task, metric)}
        best = None
        if len(aggs) > 1:
            best = max(a.mean for a in aggs.values()) if higher_is_better(metric) else min(a.mean for a in aggs.values())
        row = {}
        for (v, k), a in aggs.items():
            bold = best is not None and math.isclose(a.mean, best, rel_tol=0.0, abs_tol=1e-12)
            base = aggs.get(("baseline", k))
            under = v != "baseline" and base is not None and _better(a.mean, base.mean, metric)
            row[(v, k)] = Cell(task, metric, v, k, a.mean, a.stddev, a.n_runs, bold, under)
        table_rows.append((task, metric, row))
    return Report(columns, table_rows)


def compare_files(paths: Sequence[str | Path]) -> Report:
    records = []
    for p in paths:
        records.extend(read_rows(p))
    return compare(records)


def write_report(report: Report, path: str | Path) -> None:
    path = Path(path)
    atomic_write_text(path, report.render(show_std=True))
    atomic_write_text(path.with_suffix(path.suffix + ".json"),
                      json.dumps(report.to_records(), indent=1, sort_keys=True) + "\n")
