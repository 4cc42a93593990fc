"""Versioned, self-describing JSON container shared by every on-disk artifact.

Each file carries a header ``{"format": <name>, "version": <int>}`` next to
its payload.  Writes go to a temporary file in the same directory followed by
``os.replace`` so readers never observe a partial file.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any

FORMAT_VERSION = 1


class ContainerError(Exception):
    pass


class ContainerVersionError(ContainerError):
    def __init__(self, path: Path, found: Any, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(f"{path}: on-disk format version {found} is not supported (this build reads version {expected})")


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path: str | Path, kind: str, payload: Any, version: int = FORMAT_VERSION) -> None:
    doc = {"format": f"lampsum.{kind}", "version": version, "payload": payload}
    atomic_write_text(path, json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=1) + "\n")


def read_container(path: str | Path, kind: str, version: int = FORMAT_VERSION) -> Any:
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{path}: not a valid container ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != f"lampsum.{kind}":
        raise ContainerError(f"{path}: expected a lampsum.{kind} container")
    if doc.get("version") != version:
        raise ContainerVersionError(path, doc.get("version"), version)
    return doc["payload"]
