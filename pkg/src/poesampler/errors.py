"""Exception types shared across the package."""
from __future__ import annotations


class PoeSamplerError(Exception):
    """Base class for all errors raised by this package."""


class UnknownSymbol(PoeSamplerError):
    """A symbol outside the vocabulary was encountered."""

    def __init__(self, position: int, symbol: str):
        self.position = position
        self.symbol = symbol
        super().__init__(f"unknown symbol {symbol!r} at position {position}")


class OutOfBounds(PoeSamplerError):
    """A position or token index lies outside the sequence grid."""


class ShapeMismatch(PoeSamplerError):
    """Two objects that must share a shape do not."""


class DegenerateSystem(PoeSamplerError):
    """A linear system required by a closed-form fit is singular."""


class EmptyPool(PoeSamplerError):
    """A calibration pool contains no sequences."""


class InsufficientData(PoeSamplerError):
    """A dataset cannot supply the pools a command needs."""


class EmptyPopulation(PoeSamplerError):
    """A population statistic was requested for zero sequences."""


class TooLargeToEnumerate(PoeSamplerError):
    """The state space or neighborhood exceeds the enumeration cap."""


class NonLinearExpertPresent(PoeSamplerError):
    """An operation that requires linear experts saw a non-linear one."""


class NonFiniteState(PoeSamplerError):
    """A relaxed chain state left the finite range."""


class ExternalExpertFailure(PoeSamplerError):
    """An external expert peer failed or returned an error response."""


class ChainFailure(PoeSamplerError):
    """A sampling chain aborted; carries the failing chain id."""

    def __init__(self, chain_id: int, cause: str):
        self.chain_id = chain_id
        super().__init__(f"chain {chain_id} failed: {cause}")


class ParseError(PoeSamplerError):
    """A config or data file could not be parsed."""

    def __init__(self, line: int | None, reason: str):
        self.line = line
        self.reason = reason
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{reason}")


class ValidationError(PoeSamplerError):
    """A parsed config or file violates the schema."""
