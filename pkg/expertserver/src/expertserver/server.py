"""Request loop: one connection, pipelined line-delimited records.

The reference server replies strictly in request order, which is what makes
the conformance corpus reproducible; clients must still correlate by id
only. A malformed or invalid line never terminates the connection, an
adapter exception is reported in-band, and only a shutdown request (or EOF)
ends the loop.
"""

from __future__ import annotations

import socket
from collections.abc import Iterable, Iterator

import numpy as np

from .adapters import ModelAdapter
from .protocol import (InvalidRequest, MalformedLine, error_response,
                       info_response, parse_request_line, score_response,
                       shutdown_response)


def handle_line(adapter: ModelAdapter, line: str) -> tuple[str, bool]:
    """Produce the response line for one request line.

    Returns (response, stop); stop is True only for a valid shutdown.
    """
    try:
        request = parse_request_line(line, adapter.length, adapter.vocab_size)
    except MalformedLine as exc:
        return error_response(-1, str(exc)), False
    except InvalidRequest as exc:
        return error_response(exc.request_id, exc.message), False
    if request.op == "info":
        return info_response(request.id, adapter.length, adapter.vocab_size,
                             adapter.token_order), False
    if request.op == "shutdown":
        return shutdown_response(request.id), True
    try:
        values, grads = adapter.batch(request.sequences)
        flat = [np.asarray(g, dtype=np.float64).reshape(-1) for g in grads]
        return score_response(request.id, values, flat), False
    except Exception as exc:
        return error_response(request.id, str(exc)), False


def serve_lines(adapter: ModelAdapter, lines: Iterable[str]) -> Iterator[str]:
    """Drive the loop over an iterable of decoded lines (no trailing \\n)."""
    for line in lines:
        response, stop = handle_line(adapter, line)
        yield response
        if stop:
            return


def serve_stream(adapter: ModelAdapter, reader, writer) -> None:
    """Text-mode loop: read request lines, write one response line each.

    Flushes after every response so pipelined clients never block on a
    buffered reply.
    """
    def lines():
        for raw in reader:
            yield raw.rstrip("\n")

    for response in serve_lines(adapter, lines()):
        writer.write(response + "\n")
        writer.flush()


def serve_stdio(adapter: ModelAdapter) -> None:
    import sys
    serve_stream(adapter, sys.stdin, sys.stdout)


def serve_tcp(adapter: ModelAdapter, host: str, port: int) -> None:
    """Accept connections one at a time until a client sends shutdown."""
    with socket.create_server((host, port)) as server:
        while True:
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("r", encoding="utf-8", newline="\n")
                writer = conn.makefile("w", encoding="utf-8", newline="\n")
                done = False
                for line in reader:
                    response, done = handle_line(adapter, line.rstrip("\n"))
                    writer.write(response + "\n")
                    writer.flush()
                    if done:
                        break
                if done:
                    return
