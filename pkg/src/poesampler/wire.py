"""Client side of the external-expert wire protocol.

Records are newline-delimited JSON objects with a fixed field order (see
wire/PROTOCOL.md at the repository root).  Requests carry a correlation id;
responses may arrive out of order and are matched by id only.  One server
connection serves one client; per-chain use opens one connection per chain.

Endpoints: "HOST:PORT" for a TCP server, or "cmd:<command line>" to spawn a
subprocess speaking the protocol on stdin/stdout.
"""
from __future__ import annotations

import json
import shlex
import socket
import subprocess
from dataclasses import dataclass

import numpy as np

from .errors import ExternalExpertFailure, ParseError
from .experts import Expert, UNSUPERVISED
from .seqspace import OneHotSequence, PermutationMap, Vocabulary, gather_columns

REQUEST_OPS = ("score_and_grad", "info", "shutdown")


def dump_record(record: dict) -> str:
    """Canonical one-line serialization; key order is the insertion order."""
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def parse_record(line: str) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(None, f"not valid JSON: {exc.msg}") from None
    if not isinstance(record, dict):
        raise ParseError(None, "record must be a JSON object")
    return record


def make_request(req_id: int, op: str, sequences=None) -> dict:
    if op not in REQUEST_OPS:
        raise ValueError(f"unknown op {op!r}")
    record = {"id": int(req_id), "op": op}
    if op == "score_and_grad":
        record["sequences"] = [[int(t) for t in seq] for seq in sequences]
    return record


def parse_request(line: str) -> dict:
    """Strict request validation; raises ParseError with the reason."""
    record = parse_record(line)
    if set(record) - {"id", "op", "sequences"}:
        extra = sorted(set(record) - {"id", "op", "sequences"})
        raise ParseError(None, f"unexpected fields {extra}")
    if not isinstance(record.get("id"), int) or isinstance(record.get("id"), bool):
        raise ParseError(None, "id must be an integer")
    op = record.get("op")
    if op not in REQUEST_OPS:
        raise ParseError(None, f"op must be one of {list(REQUEST_OPS)}")
    if op == "score_and_grad":
        seqs = record.get("sequences")
        if not isinstance(seqs, list) or not seqs:
            raise ParseError(None, "sequences must be a non-empty list")
        for seq in seqs:
            if not isinstance(seq, list) or not all(
                isinstance(t, int) and not isinstance(t, bool) and t >= 0 for t in seq
            ):
                raise ParseError(None, "each sequence must be a list of indices >= 0")
    elif "sequences" in record:
        raise ParseError(None, f"op {op!r} takes no sequences")
    return record


def serialize_request(record: dict) -> str:
    ordered = {"id": record["id"], "op": record["op"]}
    if record["op"] == "score_and_grad":
        ordered["sequences"] = record["sequences"]
    return dump_record(ordered)


def parse_response(line: str) -> dict:
    record = parse_record(line)
    if not isinstance(record.get("id"), int) or isinstance(record.get("id"), bool):
        raise ParseError(None, "id must be an integer")
    ok = record.get("ok")
    if not isinstance(ok, bool):
        raise ParseError(None, "ok must be a boolean")
    if not ok:
        if not isinstance(record.get("error"), str):
            raise ParseError(None, "failed responses carry an error string")
        if set(record) - {"id", "ok", "error"}:
            raise ParseError(None, "failed responses carry only id, ok, error")
        return record
    allowed = {"id", "ok", "values", "grads", "info"}
    if set(record) - allowed:
        raise ParseError(None, f"unexpected fields {sorted(set(record) - allowed)}")
    return record


def serialize_response(record: dict) -> str:
    ordered = {"id": record["id"], "ok": record["ok"]}
    for key in ("values", "grads", "info", "error"):
        if key in record:
            ordered[key] = record[key]
    return dump_record(ordered)


@dataclass(frozen=True)
class ModelInfo:
    """Shape handshake: connection-constant, so data records omit shapes."""

    length: int
    vocab_size: int
    token_order: str

    @classmethod
    def from_payload(cls, payload) -> "ModelInfo":
        if not isinstance(payload, dict):
            raise ParseError(None, "info payload must be an object")
        try:
            info = cls(int(payload["length"]), int(payload["vocab_size"]),
                       str(payload["token_order"]))
        except KeyError as exc:
            raise ParseError(None, f"info payload missing {exc.args[0]!r}") from None
        if info.vocab_size != len(info.token_order):
            raise ParseError(None, "token_order length must equal vocab_size")
        return info


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ExternalExpertFailure(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(timeout)
        self._file = self._sock.makefile("rw", encoding="utf-8", newline="\n")

    def send(self, line: str):
        self._file.write(line + "\n")
        self._file.flush()

    def recv(self) -> str:
        line = self._file.readline()
        if line == "":
            raise ExternalExpertFailure("server closed the connection")
        return line.rstrip("\n")

    def close(self):
        try:
            self._file.close()
        finally:
            self._sock.close()


class _StdioTransport:
    def __init__(self, command: str):
        self._proc = subprocess.Popen(
            shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1,
        )

    def send(self, line: str):
        if self._proc.poll() is not None:
            raise ExternalExpertFailure("server process has exited")
        self._proc.stdin.write(line + "\n")
        self._proc.stdin.flush()

    def recv(self) -> str:
        line = self._proc.stdout.readline()
        if line == "":
            raise ExternalExpertFailure("server process closed its output")
        return line.rstrip("\n")

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class WireClient:
    """Blocking request/response client with id correlation."""

    def __init__(self, transport):
        self._transport = transport
        self._next_id = 0
        self._pending: dict[int, dict] = {}

    @classmethod
    def connect(cls, endpoint: str, timeout: float = 30.0) -> "WireClient":
        if endpoint.startswith("cmd:"):
            return cls(_StdioTransport(endpoint[len("cmd:"):]))
        host, sep, port = endpoint.rpartition(":")
        if not sep or not port.isdigit():
            raise ExternalExpertFailure(
                f"endpoint {endpoint!r} is neither HOST:PORT nor cmd:<command>"
            )
        return cls(_TcpTransport(host, int(port), timeout))

    def _roundtrip(self, op: str, sequences=None) -> dict:
        req_id = self._next_id
        self._next_id += 1
        try:
            self._transport.send(serialize_request(make_request(req_id, op, sequences)))
            while req_id not in self._pending:
                response = parse_response(self._transport.recv())
                if response["id"] == -1:
                    # reserved for lines the peer could not parse; it will
                    # never match a pending id, so waiting on would hang
                    raise ExternalExpertFailure(
                        f"peer rejected a line: {response.get('error', 'unspecified')}"
                    )
                self._pending[response["id"]] = response
        except ExternalExpertFailure:
            raise
        except (ParseError, OSError, ValueError) as exc:
            raise ExternalExpertFailure(str(exc)) from exc
        response = self._pending.pop(req_id)
        if not response["ok"]:
            raise ExternalExpertFailure(response["error"])
        return response

    def info(self) -> ModelInfo:
        response = self._roundtrip("info")
        try:
            return ModelInfo.from_payload(response.get("info"))
        except ParseError as exc:
            raise ExternalExpertFailure(str(exc)) from exc

    def score_and_grad(self, sequences) -> tuple[list[float], list[np.ndarray]]:
        response = self._roundtrip("score_and_grad", sequences)
        values = response.get("values")
        grads = response.get("grads")
        if not isinstance(values, list) or not isinstance(grads, list):
            raise ExternalExpertFailure("response lacks values/grads")
        if len(values) != len(sequences) or len(grads) != len(sequences):
            raise ExternalExpertFailure("batch length mismatch in response")
        return [float(v) for v in values], [np.asarray(g, dtype=np.float64) for g in grads]

    def shutdown(self):
        try:
            self._roundtrip("shutdown")
        finally:
            self.close()

    def close(self):
        self._transport.close()


class ExternalExpert(Expert):
    """Expert whose score and gradient come from a wire-protocol peer.

    The handshake fixes the model shape; sequences are re-indexed into the
    model's token order on the way out and gradient columns are gathered back
    into canonical order on the way in.
    """

    kind = "external"

    def __init__(self, client: WireClient, vocab: Vocabulary, role: str = UNSUPERVISED):
        super().__init__(role)
        self._client = client
        self._info = client.info()
        self._pmap = PermutationMap.between(vocab, self._info.token_order)
        self._columns = np.array(self._pmap.mapping, dtype=np.int64)
        self._vocab = vocab

    @property
    def shape(self) -> tuple[int, int]:
        return (self._info.length, len(self._vocab))

    @property
    def model_info(self) -> ModelInfo:
        return self._info

    def score_and_grad(self, x: OneHotSequence) -> tuple[float, np.ndarray]:
        self._check_shape(x)
        model_tokens = self._columns[x.tokens]
        values, grads = self._client.score_and_grad([model_tokens.tolist()])
        flat = grads[0]
        expected = self._info.length * self._info.vocab_size
        if flat.size != expected:
            raise ExternalExpertFailure(
                f"gradient has {flat.size} entries, expected {expected}"
            )
        grid = flat.reshape(self._info.length, self._info.vocab_size)
        return values[0], gather_columns(grid, self._pmap)

    def close(self):
        self._client.close()
