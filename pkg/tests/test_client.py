import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from lampsum.client import (CallableStub, ConstantStub, FirstRetrievedLabelStub, ModelEndpoint, Prediction,
                            PredictionError, RecordingTransport, TableStub, TransportError, batch_predict,
                            make_transport, predict)

STUB = ModelEndpoint("stub:constant:[1]")


def test_constant_stub_prediction():
    p = predict(STUB, "any prompt", "q1", ConstantStub("[1]"))
    assert isinstance(p, Prediction) and p.output == "[1]" and p.instance_id == "q1"


def test_echo_gold_stub():
    transport = make_transport(ModelEndpoint("stub:echo-gold"), {"a": "x", "b": "y"})
    assert [p.output for p in batch_predict(STUB, [("b", "p"), ("a", "p")], transport)] == ["y", "x"]


def test_echo_gold_needs_golds():
    with pytest.raises(ValueError):
        make_transport(ModelEndpoint("stub:echo-gold"))


@pytest.mark.parametrize("prompt, expected", [
    ('category: "sports" article: "x"\narticle: y', "sports"),
    ('4 stars: "nice"\nreview: ok', "4"),
    ("user summary: most popular category: crime\narticle: y", "crime"),
    ("nothing here", "politics"),
])
def test_first_label_stub(prompt, expected):
    assert FirstRetrievedLabelStub("politics").send({"id": "i", "prompt": prompt})["output"] == expected


def test_make_transport_first_label_fallback():
    assert make_transport(ModelEndpoint("stub:first-label:4")).fallback == "4"
    with pytest.raises(ValueError, match="unknown stub"):
        make_transport(ModelEndpoint("stub:wat"))


def test_transport_errors_retry_then_give_up():
    calls = []

    def fail(request):
        calls.append(request)
        raise TransportError("down")

    with pytest.raises(PredictionError) as err:
        predict(ModelEndpoint("stub:x", max_retries=2), "p", "q1", CallableStub(fail))
    assert len(calls) == 3 and err.value.attempts == 3 and err.value.instance_id == "q1"


def test_retry_succeeds_after_transient_failure():
    state = {"n": 0}

    def flaky(request):
        state["n"] += 1
        if state["n"] == 1:
            raise TransportError("blip")
        return {"id": request["id"], "output": "ok"}

    assert predict(STUB, "p", "q1", CallableStub(flaky)).output == "ok"


@pytest.mark.parametrize("response", [{"output": "x"}, {"id": "other", "output": "x"}, {"id": "q1"}, "junk"])
def test_malformed_response_is_terminal(response):
    calls = []

    def send(request):
        calls.append(1)
        return response

    with pytest.raises(PredictionError):
        predict(STUB, "p", "q1", CallableStub(send))
    assert len(calls) == 1


def closed_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_unreachable_endpoint_attempts_one_plus_retries():
    endpoint = ModelEndpoint(f"http://127.0.0.1:{closed_port()}/predict", timeout=2.0, max_retries=2)
    with pytest.raises(PredictionError) as err:
        predict(endpoint, "p", "q1")
    assert err.value.attempts == 3


def test_batch_isolates_failures_in_place():
    transport = TableStub({"a": "1", "c": "3"})
    out = batch_predict(STUB, [("a", "p"), ("b", "p"), ("c", "p")], transport)
    assert out[0].output == "1" and isinstance(out[1], PredictionError) and out[2].output == "3"


def test_empty_batch():
    assert batch_predict(STUB, [], ConstantStub("x")) == []


@pytest.mark.parametrize("workers", [1, 2, 8])
def test_batch_order_and_prompts_untouched(workers):
    prompts = [(f"q{i}", f"prompt number {i}") for i in range(25)]
    rec = RecordingTransport(CallableStub(lambda r: {"id": r["id"], "output": r["prompt"].upper()}))
    out = batch_predict(STUB, prompts, rec, max_in_flight=workers)
    assert [p.instance_id for p in out] == [iid for iid, _ in prompts]
    assert [p.output for p in out] == [text.upper() for _, text in prompts]
    assert sorted(r["prompt"] for r in rec.requests) == sorted(text for _, text in prompts)
    assert all(r["model"] == "flan-t5-base" for r in rec.requests)


class _Handler(BaseHTTPRequestHandler):
    received = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).received.append(body)
        out = json.dumps({"id": body["id"], "output": body["prompt"][::-1]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


def test_http_round_trip():
    _Handler.received = []
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        endpoint = ModelEndpoint(f"http://127.0.0.1:{server.server_port}/predict", model_id="flan-t5-xxl")
        out = batch_predict(endpoint, [("a", "abc"), ("b", "xyz")], max_in_flight=2)
    finally:
        server.shutdown()
    assert [p.output for p in out] == ["cba", "zyx"]
    assert sorted(_Handler.received, key=lambda r: r["id"]) == [
        {"id": "a", "model": "flan-t5-xxl", "prompt": "abc"}, {"id": "b", "model": "flan-t5-xxl", "prompt": "xyz"}]
