"""Reference external-expert server for the sampler wire protocol."""

from .adapters import LinearAdapter, MlmAdapter, ModelAdapter, corpus_adapter
from .mlm import UnsupportedModel, mlm_delta_score, reference_gradient
from .protocol import (InvalidRequest, MalformedLine, Request,
                       parse_request_line, serialize_request)
from .server import handle_line, serve_lines, serve_stdio, serve_stream, serve_tcp

__all__ = [
    "InvalidRequest",
    "LinearAdapter",
    "MalformedLine",
    "MlmAdapter",
    "ModelAdapter",
    "Request",
    "UnsupportedModel",
    "corpus_adapter",
    "handle_line",
    "mlm_delta_score",
    "parse_request_line",
    "reference_gradient",
    "serialize_request",
    "serve_lines",
    "serve_stdio",
    "serve_stream",
    "serve_tcp",
]
