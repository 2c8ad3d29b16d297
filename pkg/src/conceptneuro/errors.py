"""Exception types shared across the package."""


class ConceptNeuroError(Exception):
    """Base class; the CLI maps these to exit code 1."""

    code = "error"


class SchemaError(ConceptNeuroError):
    code = "schema"


class InputError(ConceptNeuroError):
    code = "input"


class DimensionError(ConceptNeuroError, ValueError):
    code = "dimension"


class NumericFault(ConceptNeuroError, FloatingPointError):
    code = "numeric-fault"


class NonDeterminismError(ConceptNeuroError):
    code = "non-determinism"


class NoValidConcepts(ConceptNeuroError):
    code = "no-valid-concepts"


class CheckpointError(ConceptNeuroError):
    code = "checkpoint"


class TransportError(ConceptNeuroError):
    code = "transport"


class MissingCredential(TransportError):
    code = "missing-credential"


class AuthError(TransportError):
    code = "auth"


class HTTPStatusError(TransportError):
    code = "http-status"


class EmptyGeneration(ConceptNeuroError):
    code = "empty-generation"
