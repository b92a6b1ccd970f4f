#!/usr/bin/env python3
"""Minimal wire-protocol server used as a test double for the client.

Hosts the corpus linear model (quarter weights, see wire/PROTOCOL.md) and can
be told to misbehave to exercise the client's failure paths. Speaks stdio by
default; --tcp serves a single connection and prints "PORT <n>" first.
"""
import argparse
import json
import socket
import sys

LENGTH = 5
VOCAB_SIZE = 6
TOKEN_ORDER = "ACDEFG"
BIAS = 0.25
WEIGHTS = [[((3 * l + 5 * v) % 7 - 3) / 4 for v in range(VOCAB_SIZE)] for l in range(LENGTH)]
FLAT_WEIGHTS = [w for row in WEIGHTS for w in row]
OPS = ("score_and_grad", "info", "shutdown")


def dump(record):
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def fail(rid, message):
    return dump({"id": rid, "ok": False, "error": message})


def respond(line):
    try:
        record = json.loads(line)
    except json.JSONDecodeError:
        return fail(-1, "malformed line: not valid JSON"), False
    if not isinstance(record, dict):
        return fail(-1, "malformed line: not a JSON object"), False
    rid = record.get("id")
    if not isinstance(rid, int) or isinstance(rid, bool):
        return fail(-1, "malformed line: id must be an integer"), False
    op = record.get("op")
    if op not in OPS:
        return fail(rid, f"op must be one of {list(OPS)}"), False
    if op == "info":
        payload = {"length": LENGTH, "vocab_size": VOCAB_SIZE, "token_order": TOKEN_ORDER}
        return dump({"id": rid, "ok": True, "info": payload}), False
    if op == "shutdown":
        return dump({"id": rid, "ok": True}), True
    seqs = record.get("sequences")
    if not isinstance(seqs, list) or not seqs:
        return fail(rid, "sequences must be a non-empty list"), False
    for k, seq in enumerate(seqs):
        if len(seq) != LENGTH:
            return fail(rid, f"sequence {k} has length {len(seq)}, expected {LENGTH}"), False
        for i, t in enumerate(seq):
            if not isinstance(t, int) or t < 0:
                return fail(rid, "each sequence must be a list of indices >= 0"), False
            if t >= VOCAB_SIZE:
                return fail(rid, f"sequence {k} position {i}: "
                                 f"token index {t} >= vocab_size {VOCAB_SIZE}"), False
    values = [BIAS + sum(WEIGHTS[l][t] for l, t in enumerate(seq)) for seq in seqs]
    grads = [FLAT_WEIGHTS for _ in seqs]
    return dump({"id": rid, "ok": True, "values": values, "grads": grads}), False


def serve(read_line, write_line, args):
    sent_any = False
    while True:
        line = read_line()
        if line == "":
            return
        line = line.rstrip("\n")
        if args.die_silently:
            return
        if args.garbage_first and not sent_any:
            write_line("%%% not a protocol line %%%")
            sent_any = True
            continue
        if args.stale_first and not sent_any:
            write_line(dump({"id": 999_999, "ok": True, "values": [0.0], "grads": [[0.0]]}))
        if args.fail_all:
            write_line(fail(-1, "induced failure"))
            sent_any = True
            continue
        reply, stop = respond(line)
        write_line(reply)
        sent_any = True
        if stop:
            return


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tcp", action="store_true")
    ap.add_argument("--garbage-first", action="store_true")
    ap.add_argument("--stale-first", action="store_true")
    ap.add_argument("--die-silently", action="store_true")
    ap.add_argument("--fail-all", action="store_true")
    args = ap.parse_args()

    if args.tcp:
        listener = socket.create_server(("127.0.0.1", 0))
        print(f"PORT {listener.getsockname()[1]}", flush=True)
        conn, _ = listener.accept()
        with conn, conn.makefile("rw", encoding="utf-8", newline="\n") as f:
            serve(f.readline, lambda s: (f.write(s + "\n"), f.flush()), args)
        listener.close()
    else:
        out = sys.stdout
        serve(sys.stdin.readline, lambda s: (out.write(s + "\n"), out.flush()), args)


if __name__ == "__main__":
    main()
