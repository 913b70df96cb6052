"""Exception hierarchy shared by every stage of the pipeline."""


class SmartLoopError(Exception):
    """Base class for all errors raised by smartloop."""


class ValidationError(SmartLoopError, ValueError):
    """A record, argument or file violates a documented invariant."""


class ManifestError(ValidationError):
    """A line-delimited file could not be parsed.

    ``line`` is 1-based; ``field`` names the offending key when known.
    """

    def __init__(self, path, line, field, message):
        self.path = str(path)
        self.line = line
        self.field = field
        where = f"{self.path}:{line}"
        if field:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}")


class InsufficientSamplesError(ValidationError):
    pass


class GenerationError(SmartLoopError):
    """Base for failures while talking to an inference backend."""

    kind = "generation-error"

    def __init__(self, message, fingerprint=None):
        self.fingerprint = fingerprint
        if fingerprint:
            message = f"{message} (request {fingerprint[:16]})"
        super().__init__(message)


class TransportError(GenerationError):
    kind = "transport"


class ProtocolError(GenerationError):
    kind = "protocol"


class EmptyOutputError(GenerationError):
    kind = "empty-output"


class TrainingError(SmartLoopError):
    """Non-finite loss or gradient during an update."""

    def __init__(self, message, step=None, pair_ids=()):
        self.step = step
        self.pair_ids = list(pair_ids)
        super().__init__(f"{message} at step {step}; pairs {self.pair_ids}")
