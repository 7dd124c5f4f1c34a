"""Exception hierarchy."""


class FarecourtError(Exception):
    """Base class for pipeline errors."""


class NetworkError(FarecourtError):
    pass


class UnreachableError(NetworkError):
    pass


class InfeasibleError(FarecourtError):
    """A sampling procedure could not satisfy its constraints."""


class MutationError(FarecourtError):
    pass


class JunctionGapError(FarecourtError):
    pass


class RenderError(FarecourtError):
    pass


class BackendError(FarecourtError):
    def __init__(self, message: str, retriable: bool = True):
        super().__init__(message)
        self.retriable = retriable


class RefinementParseError(FarecourtError):
    pass


class LabelSpaceError(FarecourtError):
    pass


class PipelineError(FarecourtError):
    """Wraps a component failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(FarecourtError):
    pass
