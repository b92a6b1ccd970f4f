"""Wire records: parsing, validation, and byte-exact serialization.

One JSON object per line, UTF-8, no whitespace, fixed field order. The
canonical error strings and the validation order below are normative; the
shared conformance corpus checks them byte-for-byte, so none of them may be
reworded without regenerating the corpus on both sides.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

OPS = ("score_and_grad", "info", "shutdown")
KNOWN_FIELDS = frozenset({"id", "op", "sequences"})


class MalformedLine(Exception):
    """No correlation id could be recovered; the reply carries id -1."""


class InvalidRequest(Exception):
    """Parsed far enough to echo the id back in an error response."""

    def __init__(self, request_id: int, message: str):
        super().__init__(message)
        self.request_id = request_id
        self.message = message


@dataclass(frozen=True)
class Request:
    id: int
    op: str
    sequences: tuple[tuple[int, ...], ...] | None = None


def _is_index(token) -> bool:
    # bool is an int subclass; true/false are not token indices
    return isinstance(token, int) and not isinstance(token, bool) and token >= 0


def parse_request_line(line: str, length: int, vocab_size: int) -> Request:
    """Validate one request line against a connection-constant model shape.

    Raises MalformedLine or InvalidRequest with the canonical message; the
    checks run in the fixed order: unexpected fields, op, sequences schema,
    per-sequence length, token range.
    """
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, ValueError):
        raise MalformedLine("malformed line: not valid JSON") from None
    if not isinstance(obj, dict):
        raise MalformedLine("malformed line: not a JSON object")
    request_id = obj.get("id")
    if not isinstance(request_id, int) or isinstance(request_id, bool):
        raise MalformedLine("malformed line: id must be an integer")

    extra = sorted(set(obj) - KNOWN_FIELDS)
    if extra:
        raise InvalidRequest(request_id, f"unexpected fields {extra!r}")
    op = obj.get("op")
    if op not in OPS:
        raise InvalidRequest(request_id, f"op must be one of {list(OPS)!r}")

    if op != "score_and_grad":
        if "sequences" in obj:
            raise InvalidRequest(request_id, f"op '{op}' takes no sequences")
        return Request(request_id, op)

    sequences = obj.get("sequences")
    if not isinstance(sequences, list) or not sequences:
        raise InvalidRequest(request_id, "sequences must be a non-empty list")
    for seq in sequences:
        if not isinstance(seq, list) or not all(_is_index(t) for t in seq):
            raise InvalidRequest(
                request_id, "each sequence must be a list of indices >= 0")
    for k, seq in enumerate(sequences):
        if len(seq) != length:
            raise InvalidRequest(
                request_id,
                f"sequence {k} has length {len(seq)}, expected {length}")
    for k, seq in enumerate(sequences):
        for i, token in enumerate(seq):
            if token >= vocab_size:
                raise InvalidRequest(
                    request_id,
                    f"sequence {k} position {i}: token index {token} "
                    f">= vocab_size {vocab_size}")
    return Request(request_id, "score_and_grad",
                   tuple(tuple(seq) for seq in sequences))


def _dump(obj: dict) -> str:
    # repr-shortest floats, no NaN/Infinity, insertion order preserved
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def serialize_request(request: Request) -> str:
    obj: dict = {"id": request.id, "op": request.op}
    if request.op == "score_and_grad":
        obj["sequences"] = [list(seq) for seq in request.sequences]
    return _dump(obj)


def info_response(request_id: int, length: int, vocab_size: int,
                  token_order: str) -> str:
    return _dump({"id": request_id, "ok": True,
                  "info": {"length": length, "vocab_size": vocab_size,
                           "token_order": token_order}})


def score_response(request_id: int, values, grads) -> str:
    out_values = [float(v) for v in values]
    out_grads = [[float(g) for g in row] for row in grads]
    for v in out_values:
        if not math.isfinite(v):
            raise ValueError("non-finite value in adapter output")
    for row in out_grads:
        for g in row:
            if not math.isfinite(g):
                raise ValueError("non-finite gradient in adapter output")
    return _dump({"id": request_id, "ok": True,
                  "values": out_values, "grads": out_grads})


def shutdown_response(request_id: int) -> str:
    return _dump({"id": request_id, "ok": True})


def error_response(request_id: int, message: str) -> str:
    return _dump({"id": request_id, "ok": False, "error": message})
