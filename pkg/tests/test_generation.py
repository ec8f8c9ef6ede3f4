from __future__ import annotations

import json
import math
import random
import socket
import socketserver
import sys
import threading

import pytest

from convmr.errors import (
    GenerationError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from convmr.generation import (
    GenerationParams,
    ModelOutput,
    RemoteGenerator,
    ScriptedGenerator,
    logprobs_from_probs,
    nll_loss,
    resolve_generator,
    uniform_logprobs,
)
from convmr.serializer import SerializedInstance


def _instance(text="[QU] q [SEP] [SC] s [SEP] [SN] [EDU] e"):
    return SerializedInstance(example_id="u1", input_text=text, retrieved_rule_ids=("r1",))


class TestScriptedGenerator:
    def test_table_hit(self):
        gen = ScriptedGenerator({_instance().input_text: "Yes"})
        out = gen.generate(_instance(), GenerationParams())
        assert out.text == "Yes"
        assert not out.truncated
        assert not out.fallback

    def test_miss_uses_default_and_flags(self):
        gen = ScriptedGenerator({}, default="No")
        out = gen.generate(_instance(), GenerationParams())
        assert out.text == "No"
        assert out.fallback

    def test_word_budget_truncates_and_reports(self):
        long_answer = "Inquire " + " ".join(f"w{i}" for i in range(40))
        gen = ScriptedGenerator({_instance().input_text: long_answer})
        out = gen.generate(_instance(), GenerationParams(max_length=10))
        assert out.truncated
        assert len(out.text.split()) == 10
        full = gen.generate(_instance(), GenerationParams(max_length=50))
        assert not full.truncated
        assert full.text == long_answer

    def test_referential_transparency(self):
        gen = ScriptedGenerator({_instance().input_text: "Inquire why?"})
        params = GenerationParams()
        assert gen.generate(_instance(), params) == gen.generate(_instance(), params)

    def test_from_file_flat_and_structured(self, tmp_path):
        flat = tmp_path / "flat.json"
        flat.write_text(json.dumps({"in": "out"}), encoding="utf-8")
        assert ScriptedGenerator.from_file(flat).table == {"in": "out"}
        structured = tmp_path / "structured.json"
        structured.write_text(
            json.dumps({"table": {"in": "out"}, "default": "No"}), encoding="utf-8"
        )
        gen = ScriptedGenerator.from_file(structured)
        assert gen.default == "No"

    def test_params_validated(self):
        with pytest.raises(ValidationError):
            GenerationParams(max_length=0)
        with pytest.raises(ValidationError):
            GenerationParams(num_beams=0)

    def test_defaults(self):
        params = GenerationParams()
        assert params.max_length == 30
        assert params.num_beams == 5


class TestModelOutput:
    def test_tokens_and_logprobs_must_pair(self):
        with pytest.raises(ValidationError):
            ModelOutput(text="x", tokens=("a",), logprobs=None)
        with pytest.raises(ValidationError):
            ModelOutput(text="x", tokens=("a",), logprobs=(0.0, -1.0))


class TestNllLoss:
    def test_uniform_steps(self):
        steps = [uniform_logprobs([f"t{i}" for i in range(10)])] * 3
        target = ["t1", "t2", "t3"]
        assert nll_loss(steps, target) == pytest.approx(3 * math.log(10), abs=1e-12)

    def test_certain_steps_zero_loss(self):
        steps = [{"a": 0.0}, {"b": 0.0}]
        assert nll_loss(steps, ["a", "b"]) == 0.0

    def test_hand_case(self):
        steps = [
            logprobs_from_probs({"x": 0.5, "y": 0.5}),
            logprobs_from_probs({"x": 0.25, "y": 0.75}),
            logprobs_from_probs({"x": 0.125, "y": 0.875}),
        ]
        assert nll_loss(steps, ["x", "x", "x"]) == pytest.approx(6 * math.log(2), abs=1e-12)

    def test_additivity(self):
        rng = random.Random(13)
        for _ in range(100):
            k = rng.randint(2, 12)
            steps = []
            target = []
            for _ in range(k):
                support = [f"t{i}" for i in range(rng.randint(2, 6))]
                weights = [rng.random() + 0.05 for _ in support]
                total = sum(weights)
                steps.append(logprobs_from_probs(
                    {t: w / total for t, w in zip(support, weights)}
                ))
                target.append(rng.choice(support))
            split = rng.randint(1, k - 1)
            whole = nll_loss(steps, target)
            parts = nll_loss(steps[:split], target[:split]) + nll_loss(
                steps[split:], target[split:]
            )
            assert whole == pytest.approx(parts, abs=1e-9)
            assert whole >= 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            nll_loss([{"a": 0.0}], ["a", "b"])

    def test_missing_token_is_a_hard_error(self):
        with pytest.raises(ValueError, match="support"):
            nll_loss([uniform_logprobs(["a", "b"])], ["z"])

    def test_overweight_distribution_rejected(self):
        bad = logprobs_from_probs({"a": 0.9, "b": 0.9})
        with pytest.raises(ValidationError, match="sum"):
            nll_loss([bad], ["a"])


class _StubSidecar(socketserver.ThreadingTCPServer):
    """Minimal wire-protocol server for client tests."""

    allow_reuse_address = True

    def __init__(self, handler_fn):
        self.handler_fn = handler_fn
        super().__init__(("127.0.0.1", 0), _StubHandler)


class _StubHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            request = json.loads(raw.decode("utf-8"))
            for response in self.server.handler_fn(request):
                line = (
                    response if isinstance(response, str) else json.dumps(response)
                ) + "\n"
                self.wfile.write(line.encode("utf-8"))
                self.wfile.flush()


@pytest.fixture
def stub_server():
    servers = []

    def start(handler_fn):
        server = _StubSidecar(handler_fn)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return server.server_address

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


class TestRemoteGenerator:
    def test_echo_round_trip(self, stub_server):
        def echo(request):
            yield {"id": request["id"], "output": "Yes", "truncated": False}

        host, port = stub_server(echo)
        with RemoteGenerator.connect(host, port) as gen:
            out = gen.generate(_instance(), GenerationParams())
        assert out.text == "Yes"
        assert not out.truncated

    def test_request_carries_params(self, stub_server):
        seen = {}

        def capture(request):
            seen.update(request)
            yield {"id": request["id"], "output": "No"}

        host, port = stub_server(capture)
        with RemoteGenerator.connect(host, port) as gen:
            gen.generate(_instance("hello"), GenerationParams(max_length=7, num_beams=2))
        assert seen["input"] == "hello"
        assert seen["max_length"] == 7
        assert seen["num_beams"] == 2
        assert seen["return_logprobs"] is False

    def test_out_of_order_responses_pair_by_id(self, stub_server):
        lock = threading.Lock()
        parked = []

        def delayed(request):
            # hold the first request's reply until the second arrives
            with lock:
                if not parked:
                    parked.append(request)
                    return
            first = parked[0] if parked else None
            yield {"id": request["id"], "output": f"Inquire {request['input']}"}
            if first is not None:
                yield {"id": first["id"], "output": f"Inquire {first['input']}"}

        host, port = stub_server(delayed)
        with RemoteGenerator.connect(host, port) as gen:
            outputs = {}
            errors = []

            def call(text):
                try:
                    outputs[text] = gen.generate(_instance(text), GenerationParams()).text
                except Exception as exc:  # pragma: no cover - failure reporting
                    errors.append(exc)

            threads = [threading.Thread(target=call, args=(t,)) for t in ("first", "second")]
            threads[0].start()
            import time

            time.sleep(0.2)
            threads[1].start()
            for thread in threads:
                thread.join(timeout=10)
        assert not errors
        assert outputs == {"first": "Inquire first", "second": "Inquire second"}

    def test_tokens_logprobs_round_trip(self, stub_server):
        def with_logprobs(request):
            yield {
                "id": request["id"],
                "output": "Yes",
                "tokens": ["Yes", "</s>"],
                "logprobs": [-0.1, -0.2],
                "truncated": False,
            }

        host, port = stub_server(with_logprobs)
        with RemoteGenerator.connect(host, port, return_logprobs=True) as gen:
            out = gen.generate(_instance(), GenerationParams())
        assert out.tokens == ("Yes", "</s>")
        assert out.logprobs == (-0.1, -0.2)

    def test_error_line_raises_generation_error(self, stub_server):
        def broken(request):
            yield {"id": request["id"], "error": "model exploded"}

        host, port = stub_server(broken)
        with RemoteGenerator.connect(host, port) as gen:
            with pytest.raises(GenerationError, match="model exploded"):
                gen.generate(_instance(), GenerationParams())

    def test_connection_close_raises_transport_error(self, stub_server):
        def close_immediately(request):
            return iter(())

        host, port = stub_server(close_immediately)
        with RemoteGenerator.connect(host, port) as gen:
            gen._transport._sock.settimeout(5)
            with pytest.raises(TransportError):
                gen.generate(_instance(), GenerationParams())

    def test_malformed_response_raises_protocol_error(self, stub_server):
        def garbage(request):
            yield "this is not json"

        host, port = stub_server(garbage)
        with RemoteGenerator.connect(host, port) as gen:
            with pytest.raises(ProtocolError):
                gen.generate(_instance(), GenerationParams())

    def test_mismatched_payload_raises_protocol_error(self, stub_server):
        def missing_output(request):
            yield {"id": request["id"], "tokens": ["a"], "logprobs": [-0.5]}

        host, port = stub_server(missing_output)
        with RemoteGenerator.connect(host, port) as gen:
            with pytest.raises(ProtocolError, match="output"):
                gen.generate(_instance(), GenerationParams())

    def test_pipe_transport_smoke(self):
        child = (
            "import sys, json\n"
            "for line in sys.stdin:\n"
            "    req = json.loads(line)\n"
            "    print(json.dumps({'id': req['id'], 'output': 'Yes'}), flush=True)\n"
        )
        gen = RemoteGenerator.spawn([sys.executable, "-c", child])
        try:
            out = gen.generate(_instance(), GenerationParams())
            assert out.text == "Yes"
        finally:
            gen.close()


class TestResolveGenerator:
    def test_scripted_spec(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text(json.dumps({"a": "Yes"}), encoding="utf-8")
        gen = resolve_generator(f"scripted:{path}")
        assert isinstance(gen, ScriptedGenerator)

    def test_unknown_spec_rejected(self):
        with pytest.raises(ValidationError):
            resolve_generator("magic:whatever")
        with pytest.raises(ValidationError):
            resolve_generator("remote:no-port")
