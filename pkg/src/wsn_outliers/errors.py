"""Exception hierarchy shared by every stage of the pipeline."""


class PipelineError(Exception):
    """Base class; ``code`` is the machine-readable error kind."""

    code = "pipeline_error"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details

    def record(self) -> dict:
        return {"error": self.code, "message": str(self), **self.details}


class InvalidArgument(PipelineError, ValueError):
    code = "invalid_argument"


class EmptyTrace(PipelineError):
    code = "empty_trace"


class TraceIOError(PipelineError, OSError):
    code = "io_error"


class InsufficientData(PipelineError):
    code = "insufficient_data"


class InsufficientHistory(PipelineError):
    code = "insufficient_history"


class NoCandidates(PipelineError):
    code = "no_candidates"


class DegenerateLabels(PipelineError):
    code = "degenerate_labels"


class NoOOBRows(PipelineError):
    code = "no_oob_rows"


class ConfigError(PipelineError):
    code = "config_error"
