from importlib import resources
from pathlib import Path

import pytest

from lampsum.runner import config_from_mapping

FIXTURES = Path(str(resources.files("lampsum.data").joinpath("fixtures")))


def fixture_path(name: str) -> Path:
    return FIXTURES / name


@pytest.fixture
def lamp1_paths():
    return fixture_path("lamp1_questions.json"), fixture_path("lamp1_golds.json")


def make_grid(tmp_path, task="LaMP-1", address="stub:constant:[1]", backends=("vicuna-13b",),
              summarizer_endpoint="stub:heuristic", **extra):
    code = task.split("-")[1]
    raw = {
        "task": task,
        "questions": str(fixture_path(f"lamp{code}_questions.json")),
        "golds": str(fixture_path(f"lamp{code}_golds.json")),
        "output": str(tmp_path / "results.rows.jsonl"),
        "summary_cache": str(tmp_path / "cache"),
        "seeds": [0, 1, 2],
        "endpoint": {"address": address},
        "summarizer": {"backends": list(backends), "endpoint": summarizer_endpoint},
        "grid": {"baseline_k": [0, 1, 4], "summary_k": [0, 1]},
    }
    raw.update(extra)
    return config_from_mapping(raw, base_dir=tmp_path)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
