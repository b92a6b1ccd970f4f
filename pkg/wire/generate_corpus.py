#!/usr/bin/env python3
"""Regenerate the wire-protocol conformance corpus.

The corpus model is the linear scorer documented in PROTOCOL.md: weights are
exact quarters so every value on the wire is a dyadic rational and the JSON
encoding is byte-stable across platforms.

Run from the repository root: python3 wire/generate_corpus.py
"""
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from poesampler.errors import ParseError
from poesampler.wire import make_request, parse_request, serialize_request, serialize_response

LENGTH = 5
VOCAB_SIZE = 6
TOKEN_ORDER = "ACDEFG"
BIAS = 0.25
WEIGHTS = [[((3 * l + 5 * v) % 7 - 3) / 4 for v in range(VOCAB_SIZE)] for l in range(LENGTH)]
FLAT_WEIGHTS = [w for row in WEIGHTS for w in row]


def score(seq):
    return BIAS + sum(WEIGHTS[l][t] for l, t in enumerate(seq))


def respond(line: str) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError:
        return {"id": -1, "ok": False, "error": "malformed line: not valid JSON"}
    if not isinstance(record, dict):
        return {"id": -1, "ok": False, "error": "malformed line: not a JSON object"}
    rid = record.get("id")
    if not isinstance(rid, int) or isinstance(rid, bool):
        return {"id": -1, "ok": False, "error": "malformed line: id must be an integer"}
    try:
        request = parse_request(line)
    except ParseError as exc:
        return {"id": rid, "ok": False, "error": exc.reason}
    if request["op"] == "info":
        payload = {"length": LENGTH, "vocab_size": VOCAB_SIZE, "token_order": TOKEN_ORDER}
        return {"id": rid, "ok": True, "info": payload}
    if request["op"] == "shutdown":
        return {"id": rid, "ok": True}
    for k, seq in enumerate(request["sequences"]):
        if len(seq) != LENGTH:
            return {"id": rid, "ok": False,
                    "error": f"sequence {k} has length {len(seq)}, expected {LENGTH}"}
        for i, t in enumerate(seq):
            if t >= VOCAB_SIZE:
                return {"id": rid, "ok": False,
                        "error": f"sequence {k} position {i}: "
                                 f"token index {t} >= vocab_size {VOCAB_SIZE}"}
    values = [score(seq) for seq in request["sequences"]]
    grads = [FLAT_WEIGHTS for _ in request["sequences"]]
    return {"id": rid, "ok": True, "values": values, "grads": grads}


def request_lines():
    valid = [
        make_request(0, "info"),
        make_request(1, "score_and_grad", [[0, 1, 2, 3, 4]]),
        make_request(2, "score_and_grad", [[0, 0, 0, 0, 0], [5, 4, 3, 2, 1]]),
        make_request(7, "score_and_grad",
                     [[5, 5, 5, 5, 5], [1, 3, 0, 2, 4], [2, 2, 1, 1, 0]]),
        make_request(3, "score_and_grad", [[4, 0, 3, 5, 1]]),
        make_request(42, "score_and_grad", [[1, 1, 2, 2, 3]]),
        make_request(5, "info"),
    ]
    lines = [serialize_request(r) for r in valid]
    lines += [
        'this is not json',
        '[1,2,3]',
        '{"op":"info"}',
        '{"id":"seven","op":"info"}',
        '{"id":true,"op":"info"}',
        '{"id":9,"op":"poke"}',
        '{"id":10,"op":"score_and_grad"}',
        '{"id":11,"op":"score_and_grad","sequences":[]}',
        '{"id":12,"op":"score_and_grad","sequences":[[0,1,-2,3,4]]}',
        '{"id":13,"op":"score_and_grad","sequences":[[0,1,2.5,3,4]]}',
        '{"id":14,"op":"info","sequences":[[0]]}',
        '{"id":15,"op":"score_and_grad","sequences":[[0,1,2],[0,1,2,3,4]]}',
        '{"id":16,"op":"score_and_grad","sequences":[[0,1,2,3,4],[0,1,2,3,9]]}',
        '{"id":17,"op":"score_and_grad","sequences":[[0,1,2,3,6]]}',
        '{"id":18,"op":"score_and_grad","sequences":[[0,1,2,3,4]],"shape":[5,6]}',
        '{"id":19,"op":"score_and_grad","sequences":[["A","C"]]}',
        serialize_request(make_request(20, "score_and_grad",
                                       [[3, 2, 1, 0, 5], [0, 5, 0, 5, 0]])),
        serialize_request(make_request(21, "shutdown")),
    ]
    return lines


def main():
    corpus_dir = Path(__file__).resolve().parent / "corpus"
    corpus_dir.mkdir(exist_ok=True)
    requests = request_lines()
    responses = [serialize_response(respond(line)) for line in requests]
    (corpus_dir / "requests.txt").write_text("\n".join(requests) + "\n")
    (corpus_dir / "responses.txt").write_text("\n".join(responses) + "\n")
    print(f"wrote {len(requests)} request/response pairs to {corpus_dir}")


if __name__ == "__main__":
    main()
