"""Client for the downstream model endpoint plus deterministic in-process stubs.

Wire format: ``POST {id, model, prompt}`` answered by ``{id, output}``.  Stubs
implement the same ``send(request) -> response`` surface so the pipeline
cannot tell them apart from HTTP.
"""

from __future__ import annotations

import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .prompts import ConstructedPrompt


@dataclass(frozen=True)
class ModelEndpoint:
    address: str
    model_id: str = "flan-t5-base"
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be non-negative, got {self.max_retries}")


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    output: str
    latency_ms: float


class TransportError(RuntimeError):
    """Timeout or connection failure; the request may be retried."""


class MalformedResponseError(RuntimeError):
    pass


class PredictionError(RuntimeError):
    def __init__(self, instance_id: str, message: str, attempts: int):
        super().__init__(f"{instance_id}: {message}")
        self.instance_id = instance_id
        self.attempts = attempts


class Transport(Protocol):
    def send(self, request: dict) -> dict: ...


class HttpTransport:
    def __init__(self, endpoint: ModelEndpoint, client: httpx.Client | None = None):
        self.endpoint = endpoint
        self._client = client or httpx.Client(timeout=endpoint.timeout)

    def send(self, request: dict) -> dict:
        try:
            resp = self._client.post(self.endpoint.address, json=request)
        except httpx.TransportError as exc:
            raise TransportError(f"{self.endpoint.address}: {exc!r}") from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(f"{self.endpoint.address}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise MalformedResponseError(f"HTTP {resp.status_code}: {resp.text[:200]!r}")
        try:
            return resp.json()
        except ValueError:
            raise MalformedResponseError(f"response is not JSON: {resp.text[:200]!r}") from None

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# stubs


class ConstantStub:
    def __init__(self, output: str):
        self.output = output

    def send(self, request: dict) -> dict:
        return {"id": request["id"], "output": self.output}


_LABEL_PATTERNS = (
    re.compile(r'category: "([^"]+)"'),
    re.compile(r"^([1-5]) stars:", re.MULTILINE),
    re.compile(r"most popular category:\s*([^\n]+)", re.IGNORECASE),
)


class FirstRetrievedLabelStub:
    """Answers with the label of the first rendered profile item.

    Falls back to a category named in a user summary, then to *fallback*.
    """

    def __init__(self, fallback: str = ""):
        self.fallback = fallback

    def send(self, request: dict) -> dict:
        for pat in _LABEL_PATTERNS:
            m = pat.search(request["prompt"])
            if m:
                return {"id": request["id"], "output": m.group(1)}
        return {"id": request["id"], "output": self.fallback}


class TableStub:
    """Looks the output up by instance id; used as the echo-gold oracle in tests."""

    def __init__(self, outputs: Mapping[str, str], default: str | None = None):
        self.outputs = dict(outputs)
        self.default = default

    def send(self, request: dict) -> dict:
        out = self.outputs.get(request["id"], self.default)
        if out is None:
            raise MalformedResponseError(f"table stub has no output for {request['id']!r}")
        return {"id": request["id"], "output": out}


class CallableStub:
    def __init__(self, fn: Callable[[dict], dict]):
        self.fn = fn

    def send(self, request: dict) -> dict:
        return self.fn(request)


class RecordingTransport:
    """Wraps a transport and keeps every request it forwards."""

    def __init__(self, inner: Transport):
        self.inner = inner
        self.requests: list[dict] = []
        self._lock = threading.Lock()

    def send(self, request: dict) -> dict:
        with self._lock:
            self.requests.append(dict(request))
        return self.inner.send(request)


def make_transport(endpoint: ModelEndpoint, golds: Mapping[str, str] | None = None) -> Transport:
    """Resolve an endpoint address to a transport.

    ``stub:constant:<text>``, ``stub:first-label[:<fallback>]`` and
    ``stub:echo-gold`` select stubs; anything else is treated as an HTTP URL.
    """
    addr = endpoint.address
    if addr.startswith("stub:constant:"):
        return ConstantStub(addr[len("stub:constant:"):])
    if addr == "stub:first-label" or addr.startswith("stub:first-label:"):
        return FirstRetrievedLabelStub(addr[len("stub:first-label:"):] if ":" in addr[5:] else "")
    if addr == "stub:echo-gold":
        if golds is None:
            raise ValueError("stub:echo-gold needs gold outputs")
        return TableStub(golds)
    if addr.startswith("stub:"):
        raise ValueError(f"unknown stub {addr!r}")
    return HttpTransport(endpoint)


# ---------------------------------------------------------------------------


def _check_response(resp: object, instance_id: str) -> str:
    if not isinstance(resp, dict) or not isinstance(resp.get("output"), str):
        raise MalformedResponseError(f"expected {{id, output}}, got {str(resp)[:200]!r}")
    if resp.get("id") != instance_id:
        raise MalformedResponseError(f"response id {resp.get('id')!r} does not match request {instance_id!r}")
    return resp["output"]


def predict(endpoint: ModelEndpoint, prompt: ConstructedPrompt | str, instance_id: str,
            transport: Transport | None = None) -> Prediction:
    transport = transport or make_transport(endpoint)
    text = prompt if isinstance(prompt, str) else prompt.text
    request = {"id": instance_id, "model": endpoint.model_id, "prompt": text}
    attempts = 0
    t0 = time.perf_counter()
    while True:
        attempts += 1
        try:
            resp = transport.send(request)
            break
        except TransportError as exc:
            if attempts > endpoint.max_retries:
                raise PredictionError(instance_id, f"giving up after {attempts} attempts: {exc}", attempts) from exc
        except MalformedResponseError as exc:
            raise PredictionError(instance_id, str(exc), attempts) from exc
    try:
        output = _check_response(resp, instance_id)
    except MalformedResponseError as exc:
        raise PredictionError(instance_id, str(exc), attempts) from exc
    return Prediction(instance_id, output, (time.perf_counter() - t0) * 1000.0)


def batch_predict(endpoint: ModelEndpoint, prompts: Sequence[tuple[str, ConstructedPrompt | str]],
                  transport: Transport | None = None,
                  max_in_flight: int = 4) -> list[Prediction | PredictionError]:
    """Predict every ``(instance_id, prompt)`` pair, keeping submission order.

    A failing item yields its ``PredictionError`` in place instead of aborting
    the batch.
    """
    if not prompts:
        return []
    transport = transport or make_transport(endpoint)

    def one(pair):
        iid, prompt = pair
        try:
            return predict(endpoint, prompt, iid, transport)
        except PredictionError as exc:
            return exc

    if max_in_flight <= 1:
        return [one(p) for p in prompts]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, prompts))
