"""Exception types shared across the pipeline."""


class ValidationError(ValueError):
    """Input violates a documented contract (bad field, bad config, bad state)."""


class CorpusParseError(ValidationError):
    """A corpus file line could not be parsed.  Carries the offending location."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class TransportError(ConnectionError):
    """The remote generator transport failed (timeout, EOF, socket error).

    Safe to retry: the failure happened in transit, not in the model.
    """


class ProtocolError(RuntimeError):
    """The remote generator replied with something the wire protocol does not allow."""


class GenerationError(RuntimeError):
    """The remote generator answered with an explicit error line for this request."""


class GeneratorFailureError(RuntimeError):
    """Generation failed on too many examples to produce a trustworthy report."""
