"""Generator contract, deterministic scripted generator, remote client, and loss.

Generators turn a serialized instance into output text.  The scripted
generator is a lookup table used for closure tests and offline replays; the
remote generator speaks a newline-delimited JSON protocol to an inference
sidecar over a TCP socket or a child process's pipes:

    request:  {"id": str, "input": str, "max_length": int,
               "num_beams": int, "return_logprobs": bool}
    response: {"id": str, "output": str, "tokens": [str]?,
               "logprobs": [float]?, "truncated": bool}
    error:    {"id": str, "error": str}

One JSON document per line, UTF-8, responses may arrive out of order;
requests and responses are paired by id.  Transport failures raise
:class:`TransportError` (retryable); malformed replies raise
:class:`ProtocolError`; explicit error lines raise :class:`GenerationError`.

Log probabilities are natural-log everywhere, which is what the sequence
loss here expects.
"""

from __future__ import annotations

import json
import math
import shlex
import socket
import subprocess
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Mapping, Protocol, Sequence

from .errors import GenerationError, ProtocolError, TransportError, ValidationError
from .serializer import SerializedInstance

DEFAULT_MAX_LENGTH = 30
DEFAULT_NUM_BEAMS = 5

_SUM_TOLERANCE = 1e-6
_LOGPROB_TOLERANCE = 1e-12


@dataclass(frozen=True)
class GenerationParams:
    max_length: int = DEFAULT_MAX_LENGTH
    num_beams: int = DEFAULT_NUM_BEAMS

    def __post_init__(self):
        if self.max_length < 1:
            raise ValidationError(f"max_length must be positive, got {self.max_length}")
        if self.num_beams < 1:
            raise ValidationError(f"num_beams must be positive, got {self.num_beams}")


@dataclass(frozen=True)
class ModelOutput:
    """Generated text, optional per-token detail, and whether the budget cut it off."""

    text: str
    tokens: tuple[str, ...] | None = None
    logprobs: tuple[float, ...] | None = None
    truncated: bool = False
    fallback: bool = False

    def __post_init__(self):
        if (self.tokens is None) != (self.logprobs is None):
            raise ValidationError("tokens and logprobs must be provided together")
        if self.tokens is not None and len(self.tokens) != len(self.logprobs):
            raise ValidationError(
                f"tokens ({len(self.tokens)}) and logprobs ({len(self.logprobs)}) differ in length"
            )


class Generator(Protocol):
    def generate(self, instance: SerializedInstance, params: GenerationParams) -> ModelOutput: ...


class ScriptedGenerator:
    """Table-driven generator: input text in, scripted output out.

    Unmapped inputs produce the configured default output with the fallback
    flag set.  The length budget is enforced on whitespace tokens, so
    sweeps over the generation length are observable without a model.
    """

    def __init__(self, table: Mapping[str, str], default: str = ""):
        self.table = dict(table)
        self.default = default

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedGenerator":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(payload, dict):
            raise ValidationError(f"scripted table {path} must be a JSON object")
        if "table" in payload:
            table = payload["table"]
            default = payload.get("default", "")
            if not isinstance(table, dict):
                raise ValidationError(f"scripted table {path}: 'table' must be an object")
            return cls(table, default=default)
        return cls(payload)

    def generate(self, instance: SerializedInstance, params: GenerationParams) -> ModelOutput:
        scripted = self.table.get(instance.input_text)
        fallback = scripted is None
        text = self.default if fallback else scripted
        words = text.split()
        truncated = len(words) > params.max_length
        if truncated:
            text = " ".join(words[: params.max_length])
        return ModelOutput(text=text, truncated=truncated, fallback=fallback)


class _Transport(Protocol):
    def write_line(self, line: str) -> None: ...
    def read_line(self) -> str: ...
    def close(self) -> None: ...


class _SocketTransport:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._reader = sock.makefile("r", encoding="utf-8", newline="\n")

    def write_line(self, line: str) -> None:
        try:
            self._sock.sendall(line.encode("utf-8"))
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def read_line(self) -> str:
        try:
            line = self._reader.readline()
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if not line:
            raise TransportError("connection closed by the remote side")
        return line

    def close(self) -> None:
        try:
            self._reader.close()
            self._sock.close()
        except OSError:
            pass


class _PipeTransport:
    def __init__(self, proc: subprocess.Popen):
        self._proc = proc
        self._stdin: IO[str] = proc.stdin
        self._stdout: IO[str] = proc.stdout

    def write_line(self, line: str) -> None:
        try:
            self._stdin.write(line)
            self._stdin.flush()
        except (OSError, ValueError) as exc:
            raise TransportError(f"send to child process failed: {exc}") from exc

    def read_line(self) -> str:
        try:
            line = self._stdout.readline()
        except (OSError, ValueError) as exc:
            raise TransportError(f"receive from child process failed: {exc}") from exc
        if not line:
            raise TransportError("child process closed its output")
        return line

    def close(self) -> None:
        try:
            self._stdin.close()
        except (OSError, ValueError):
            pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()


class RemoteGenerator:
    """Client for the JSON-lines generation protocol.

    Safe for concurrent callers: requests are paired to responses by id, so
    replies arriving out of order reach the right caller.  Reads happen on
    at most one thread at a time; everyone else waits on the shared buffer.
    """

    def __init__(self, transport: _Transport, *, return_logprobs: bool = False):
        self._transport = transport
        self.return_logprobs = return_logprobs
        self._cond = threading.Condition()
        self._responses: dict[str, dict] = {}
        self._reading = False
        self._read_error: Exception | None = None

    @classmethod
    def connect(cls, host: str, port: int, *, timeout: float = 30.0, **kwargs) -> "RemoteGenerator":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        return cls(_SocketTransport(sock), **kwargs)

    @classmethod
    def spawn(cls, argv: Sequence[str], **kwargs) -> "RemoteGenerator":
        try:
            proc = subprocess.Popen(
                list(argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
            )
        except OSError as exc:
            raise TransportError(f"cannot start {argv!r}: {exc}") from exc
        return cls(_PipeTransport(proc), **kwargs)

    def close(self) -> None:
        self._transport.close()

    def __enter__(self) -> "RemoteGenerator":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def generate(self, instance: SerializedInstance, params: GenerationParams) -> ModelOutput:
        request_id = uuid.uuid4().hex
        request = {
            "id": request_id,
            "input": instance.input_text,
            "max_length": params.max_length,
            "num_beams": params.num_beams,
            "return_logprobs": self.return_logprobs,
        }
        line = json.dumps(request, ensure_ascii=False) + "\n"
        with self._cond:
            self._transport.write_line(line)
        response = self._await_response(request_id)
        return _parse_response(response, request_id)

    def _await_response(self, request_id: str) -> dict:
        while True:
            with self._cond:
                if request_id in self._responses:
                    return self._responses.pop(request_id)
                if self._read_error is not None:
                    raise self._read_error
                if self._reading:
                    self._cond.wait()
                    continue
                self._reading = True
            raw = None
            error: Exception | None = None
            try:
                raw = self._transport.read_line()
            except Exception as exc:
                error = exc
            with self._cond:
                self._reading = False
                if error is not None:
                    # wake everyone; the transport is dead for all callers
                    self._read_error = error
                    self._cond.notify_all()
                    raise error
                try:
                    payload = json.loads(raw)
                except json.JSONDecodeError as exc:
                    failure = ProtocolError(f"response line is not valid JSON: {raw!r}")
                    failure.__cause__ = exc
                    self._read_error = failure
                    self._cond.notify_all()
                    raise failure
                if not isinstance(payload, dict) or not isinstance(payload.get("id"), str):
                    failure = ProtocolError(f"response line lacks a string id: {raw!r}")
                    self._read_error = failure
                    self._cond.notify_all()
                    raise failure
                self._responses[payload["id"]] = payload
                self._cond.notify_all()


def _parse_response(payload: dict, request_id: str) -> ModelOutput:
    if "error" in payload:
        raise GenerationError(str(payload["error"]))
    output = payload.get("output")
    if not isinstance(output, str):
        raise ProtocolError(f"response for {request_id} lacks an 'output' string")
    tokens = payload.get("tokens")
    logprobs = payload.get("logprobs")
    if (tokens is None) != (logprobs is None):
        raise ProtocolError(f"response for {request_id} has tokens or logprobs but not both")
    if tokens is not None:
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise ProtocolError(f"response for {request_id} has a malformed 'tokens' list")
        if not isinstance(logprobs, list) or not all(
            isinstance(lp, (int, float)) for lp in logprobs
        ):
            raise ProtocolError(f"response for {request_id} has a malformed 'logprobs' list")
        if len(tokens) != len(logprobs):
            raise ProtocolError(
                f"response for {request_id}: tokens and logprobs differ in length"
            )
        tokens = tuple(tokens)
        logprobs = tuple(float(lp) for lp in logprobs)
    truncated = payload.get("truncated", False)
    if not isinstance(truncated, bool):
        raise ProtocolError(f"response for {request_id} has a non-boolean 'truncated'")
    return ModelOutput(text=output, tokens=tokens, logprobs=logprobs, truncated=truncated)


def resolve_generator(spec: str) -> Generator:
    """Build a generator from a spec string.

    ``scripted:PATH`` loads a JSON lookup table; ``remote:HOST:PORT``
    connects over TCP; ``remote:cmd:COMMAND ...`` spawns a child process and
    talks over its pipes.
    """
    kind, _, rest = spec.partition(":")
    if kind == "scripted":
        if not rest:
            raise ValidationError("scripted generator spec needs a path: scripted:PATH")
        return ScriptedGenerator.from_file(rest)
    if kind == "remote":
        if rest.startswith("cmd:"):
            command = rest[len("cmd:") :]
            if not command.strip():
                raise ValidationError("remote:cmd: spec needs a command line")
            return RemoteGenerator.spawn(shlex.split(command))
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValidationError(
                f"remote generator spec must be remote:HOST:PORT or remote:cmd:COMMAND, got {spec!r}"
            )
        return RemoteGenerator.connect(host, int(port))
    raise ValidationError(f"unknown generator spec {spec!r}")


def nll_loss(
    steps: Sequence[Mapping[str, float]],
    target: Sequence[str],
) -> float:
    """Negative log-likelihood of a target sequence under per-step distributions.

    Each step is a natural-log probability map over candidate tokens,
    conditioned on the target prefix; the target includes its terminal
    marker.  A target token missing from its step's support is a hard error
    rather than a silent infinity.
    """
    if len(steps) != len(target):
        raise ValidationError(
            f"got {len(steps)} step distributions for {len(target)} target tokens"
        )
    total = 0.0
    for position, (step, token) in enumerate(zip(steps, target)):
        mass = math.fsum(math.exp(lp) for lp in step.values())
        if mass > 1.0 + _SUM_TOLERANCE:
            raise ValidationError(
                f"step {position}: probabilities sum to {mass}, more than 1"
            )
        if token not in step:
            raise ValueError(
                f"step {position}: target token {token!r} is not in the distribution's support"
            )
        logprob = step[token]
        if not math.isfinite(logprob) or logprob > _LOGPROB_TOLERANCE:
            raise ValidationError(
                f"step {position}: log-probability {logprob} of {token!r} is not a valid log-prob"
            )
        total -= logprob
    return total


def uniform_logprobs(tokens: Sequence[str]) -> dict[str, float]:
    """A uniform natural-log distribution over the given tokens."""
    if not tokens:
        raise ValidationError("cannot build a distribution over zero tokens")
    logprob = -math.log(len(tokens))
    return {token: logprob for token in tokens}


def logprobs_from_probs(probs: Mapping[str, float]) -> dict[str, float]:
    return {token: math.log(p) for token, p in probs.items()}
