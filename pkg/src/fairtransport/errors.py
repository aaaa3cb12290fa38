"""
Exception hierarchy shared by every stage of the pipeline.

The CLI turns any ``FairTransportError`` into exit code 2.
"""

from __future__ import annotations

from typing import Optional


class FairTransportError(Exception):
    """Base class for all errors raised by fairtransport."""


class OntologyParseError(FairTransportError):
    """Raised when ontology text cannot be parsed or validated."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.message = message
        self.line = line
        self.column = column
        if line is not None:
            super().__init__(f"line {line}, column {column}: {message}")
        else:
            super().__init__(message)


class OntologyError(FairTransportError):
    """Unknown vocabulary or misuse of a FactStore."""


class DatasetError(FairTransportError):
    """Malformed CSV, type mismatch, duplicate row id, conflicting values."""


class BindingError(FairTransportError):
    """Binding document references something that does not exist."""


class TrivialSigmaAlgebraError(FairTransportError):
    """The ontology declares no sensitive concepts."""


class EventExpressionError(FairTransportError):
    """Malformed Boolean event expression."""


class TransportError(FairTransportError):
    """Invalid inputs to the transport engine."""


class AuditError(FairTransportError):
    """Independence audit preconditions violated (too few rows or permutations)."""


class CertificateSchemaError(FairTransportError):
    """A certificate document does not match the schema."""
