import json
import os
from dataclasses import replace

import pytest

from conftest import fixture_path, make_grid
from lampsum import cli, summarizer
from lampsum.runner import (CompareError, ConfigError, MissingSummariesError, compare, config_from_mapping, execute,
                            read_rows, run_grid, run_summarize, summarize_all)
from lampsum.store import load_dataset
from lampsum.summarizer import (HeuristicLLMStub, StubLLMBackend, SummaryCache, default_backends, default_templates,
                                validate_template)
from lampsum.tasks import TaskKind
from reference_grid import ROUNDING_TIES, mark_mismatches, records


def only(grid, k, summary=False):
    return next(c for c in grid.experiments() if c.k == k and c.include_summary == summary)


def test_grid_expands_to_all_configurations(tmp_path):
    grid = make_grid(tmp_path, backends=("vicuna-13b", "gpt-3.5-turbo-16k"))
    assert [(c.variant, c.k) for c in grid.experiments()] == [
        ("baseline", 0), ("baseline", 1), ("baseline", 4),
        ("summ:vicuna-13b", 0), ("summ:vicuna-13b", 1),
        ("summ:gpt-3.5-turbo-16k", 0), ("summ:gpt-3.5-turbo-16k", 1)]


def test_unknown_config_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config keys"):
        config_from_mapping({"task": "LaMP-1", "questions": "q", "bogus": 1})


def test_fingerprint_ignores_seeds_and_output(tmp_path):
    cfg = make_grid(tmp_path).base
    assert cfg.fingerprint() == replace(cfg, seeds=(7,), output="elsewhere").fingerprint()
    assert cfg.fingerprint() != replace(cfg, policy=replace(cfg.policy, max_tokens=256)).fingerprint()


def test_constant_stub_accuracy_on_fixture(tmp_path):
    out = execute(only(make_grid(tmp_path), 1))
    assert [r.metrics["accuracy"].value for r in out.rows] == [0.6, 0.6, 0.6]
    assert [r.seed for r in out.rows] == [0, 1, 2]


def test_echo_gold_stub_is_perfect(tmp_path):
    out = execute(only(make_grid(tmp_path, address="stub:echo-gold"), 4))
    assert all(r.metrics["accuracy"].value == 1.0 for r in out.rows)


def test_summarize_then_run_with_summary(tmp_path):
    grid = make_grid(tmp_path)
    [rep] = run_summarize(grid)
    assert len(rep.succeeded) == 10 and not rep.failures
    out = execute(only(grid, 1, summary=True))
    for prompt in out.prompts.values():
        assert len(prompt.items) == 1 and prompt.summary is not None
        assert prompt.text.startswith("user summary: ")


def test_second_summarize_skips_cached_users(tmp_path):
    grid = make_grid(tmp_path)
    run_summarize(grid)
    [rep] = run_summarize(grid)
    assert len(rep.cached) == 10 and not rep.succeeded


def three_users():
    _, profiles = load_dataset(fixture_path("lamp3_questions.json"), fixture_path("lamp3_golds.json"), "LaMP-3")
    assert len(profiles) == 3
    return profiles


def test_summarize_all_three_users(tmp_path):
    cache = SummaryCache(tmp_path)
    template = default_templates()[TaskKind.ProductRating]
    backend = default_backends()["vicuna-13b"]
    rep = summarize_all(three_users(), backend, HeuristicLLMStub(TaskKind.ProductRating), template, cache)
    assert len(rep.succeeded) == 3 and not rep.failures
    for uid in three_users():
        s = cache.get(uid, TaskKind.ProductRating, "vicuna-13b", template.prompt_version)
        assert validate_template(s.text, TaskKind.ProductRating) is None


def test_malformed_stub_leaves_cache_empty(tmp_path):
    cache = SummaryCache(tmp_path)
    template = default_templates()[TaskKind.ProductRating]
    stub = StubLLMBackend(default="They seem happy with most purchases.")
    rep = summarize_all(three_users(), default_backends()["vicuna-13b"], stub, template, cache)
    assert len(rep.failures) == 3 and not rep.succeeded
    assert not any(tmp_path.rglob("*.json"))


def test_run_without_summaries_lists_every_user(tmp_path):
    grid = make_grid(tmp_path, backends=("vicuna-13b", "gpt-3.5-turbo-16k"))
    with pytest.raises(MissingSummariesError) as err:
        run_grid(grid)
    users = sorted(i.user_id for i in load_dataset(fixture_path("lamp1_questions.json"), None, "LaMP-1")[0])
    assert err.value.missing == {"vicuna-13b": users, "gpt-3.5-turbo-16k": users}
    assert "summarize" in str(err.value)
    assert not (tmp_path / "results.rows.jsonl").exists()


def test_partial_cache_reports_only_the_gaps(tmp_path):
    grid = make_grid(tmp_path)
    run_summarize(grid)
    cache = SummaryCache(tmp_path / "cache")
    version = default_templates()[TaskKind.CitationId].prompt_version
    cache._path(cache.key_digest("1050", TaskKind.CitationId, "vicuna-13b", version)).unlink()
    with pytest.raises(MissingSummariesError) as err:
        execute(only(grid, 0, summary=True))
    assert err.value.missing == {"vicuna-13b": ["1050"]}


def test_runs_never_generate_summaries(tmp_path, monkeypatch):
    grid = make_grid(tmp_path)
    run_summarize(grid)
    calls = []
    real = summarizer.generate_summary
    monkeypatch.setattr(summarizer, "generate_summary", lambda *a, **kw: calls.append(1) or real(*a, **kw))
    run_grid(grid)
    assert calls == []


def test_grid_results_are_deterministic(tmp_path):
    grid = make_grid(tmp_path)
    run_summarize(grid)
    run_grid(grid, output=tmp_path / "a.jsonl")
    run_grid(grid, output=tmp_path / "b.jsonl")
    a, b = (tmp_path / "a.jsonl").read_bytes(), (tmp_path / "b.jsonl").read_bytes()
    assert a == b
    rows = read_rows(tmp_path / "a.jsonl")
    assert len(rows) == 5 * 3
    assert (tmp_path / "a.jsonl.timing.json").exists()


def test_prediction_failures_are_excluded_not_imputed(tmp_path):
    from lampsum.client import TableStub
    golds = {i.instance_id: i.gold for i in load_dataset(*map(fixture_path, ("lamp1_questions.json",
                                                                            "lamp1_golds.json")), "LaMP-1")[0]}
    golds.pop("1000")
    out = execute(only(make_grid(tmp_path), 1), transport=TableStub(golds))
    assert all(r.excluded == 1 and r.metrics["accuracy"].value == 1.0 and r.metrics["accuracy"].n == 9
               for r in out.rows)


def test_interrupted_write_leaves_previous_file(tmp_path, monkeypatch):
    grid = make_grid(tmp_path, grid={"baseline_k": [1], "summary_k": []})
    out = tmp_path / "results.rows.jsonl"
    run_grid(grid)
    before = out.read_bytes()

    def boom(src, dst):
        raise KeyboardInterrupt

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(KeyboardInterrupt):
        run_grid(replace(grid, base=replace(grid.base, seeds=(5,))))
    assert out.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir() if p.name.endswith(".tmp")] == []


# ---------------------------------------------------------------------------
# compare


def row(variant, k, value, metric="accuracy", seed=0, fp=None, task="LaMP-1"):
    return {"fingerprint": fp or f"{variant}{k}", "task": task, "variant": variant, "k": k, "seed": seed,
            "metric": metric, "value": value, "n": 10, "excluded": 0}


def test_compare_marks_best_and_improvement():
    rep = compare([row("baseline", 4, 0.709), row("summ:gpt-3.5-turbo-16k", 1, 0.743), row("baseline", 1, 0.650)])
    c = rep.cell("LaMP-1", "accuracy", "summ:gpt-3.5-turbo-16k", 1)
    assert c.bold and c.underline
    assert not rep.cell("LaMP-1", "accuracy", "baseline", 4).bold


def test_compare_lower_is_better_for_mae():
    rep = compare([row("baseline", 1, 0.284, "mae", task="LaMP-3"), row("baseline", 4, 0.280, "mae", task="LaMP-3"),
                   row("summ:vicuna-13b", 1, 0.277, "mae", task="LaMP-3")])
    c = rep.cell("LaMP-3", "mae", "summ:vicuna-13b", 1)
    assert c.bold and c.underline
    assert not rep.cell("LaMP-3", "mae", "baseline", 4).bold


def test_single_configuration_has_no_marks():
    rep = compare([row("baseline", 1, 0.5)])
    c = rep.cell("LaMP-1", "accuracy", "baseline", 1)
    assert not c.bold and not c.underline
    assert "**0.500**" not in rep.render()


def test_ties_are_all_bold():
    rep = compare([row("baseline", 4, 0.448), row("summ:x", 1, 0.448)])
    assert all(c.bold for c in rep.cells())


def test_means_over_seeds():
    rep = compare([row("baseline", 1, v, seed=s) for s, v in enumerate([0.70, 0.71, 0.72])])
    c = rep.cell("LaMP-1", "accuracy", "baseline", 1)
    assert c.mean == pytest.approx(0.71) and c.stddev == pytest.approx(0.01) and c.n_runs == 3


def test_compare_refuses_mixed_fingerprints():
    with pytest.raises(CompareError, match="differently configured"):
        compare([row("baseline", 1, 0.5, fp="aaa"), row("baseline", 1, 0.6, seed=1, fp="bbb")])


def test_compare_unknown_metric():
    with pytest.raises(Exception, match="direction"):
        compare([row("baseline", 1, 0.5, metric="bleu")])


def test_reference_grid_marks_reproduced():
    assert set(mark_mismatches(compare(records(seeds=(0, 1, 2))))) == ROUNDING_TIES


# ---------------------------------------------------------------------------
# cli


def write_config(tmp_path, **over):
    fields = {
        "task": '"LaMP-1"',
        "questions": json.dumps(str(fixture_path("lamp1_questions.json"))),
        "golds": json.dumps(str(fixture_path("lamp1_golds.json"))),
        "output": '"out/rows.jsonl"',
        "summary_cache": '"out/cache"',
    }
    fields.update(over)
    lines = [f"{k} = {v}" for k, v in fields.items()]
    lines += ["[endpoint]", 'address = "stub:constant:[1]"', "[grid]", "baseline_k = [0, 1]", "summary_k = [1]"]
    path = tmp_path / "grid.toml"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_cli_dry_run_has_no_side_effects(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["run", "--config", str(cfg), "--dry-run"]) == 0
    assert "fingerprint" in capsys.readouterr().out
    assert not (tmp_path / "out").exists()


def test_cli_summarize_without_backend_exits_1(tmp_path, capsys):
    assert cli.main(["summarize", "--config", str(write_config(tmp_path))]) == 1
    assert "backend" in capsys.readouterr().err


def test_cli_unknown_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as err:
        cli.main(["run", "--bogus"])
    assert err.value.code == 2


def test_cli_full_flow(tmp_path, capsys):
    cfg = write_config(tmp_path)
    with cfg.open("a") as fh:
        fh.write('[summarizer]\nbackends = ["vicuna-13b"]\nendpoint = "stub:heuristic"\n')
    assert cli.main(["run", "--config", str(cfg)]) == 1
    assert "summarize" in capsys.readouterr().err
    assert cli.main(["summarize", "--config", str(cfg)]) == 0
    assert cli.main(["run", "--config", str(cfg)]) == 0
    capsys.readouterr()
    assert cli.main(["compare", str(tmp_path / "out" / "rows.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "baseline k=0" in out and "summ:vicuna-13b k=1" in out
    assert cli.main(["report", "--config", str(cfg), "--out", str(tmp_path / "r.txt")]) == 0
    assert json.loads((tmp_path / "r.txt.json").read_text())


def test_cli_ingest_validate_index(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "store.json")]) == 0
    assert cli.main(["validate", "--config", str(cfg), "--strict"]) == 0
    assert cli.main(["index", "--config", str(cfg), "--out", str(tmp_path / "ix.json")]) == 0
    assert "10 indexes" in capsys.readouterr().out


def test_bundled_configs_dry_run(capsys):
    root = fixture_path("").parents[3] / "configs"
    for cfg in sorted(root.glob("*.toml")):
        assert cli.main(["run", "--config", str(cfg), "--dry-run"]) == 0, cfg
