"""Exception hierarchy. Each error carries a category that the CLI maps to an exit code."""

USAGE = 1
INPUT = 2
COMPUTE = 3
TRANSPORT = 4


class CxrError(Exception):
    category = INPUT
    module = "cxrlabel"


class SchemaError(CxrError):
    module = "taxonomy"


class NormalizationError(CxrError):
    module = "normalizer"
    reason = "invalid-record"


class MalformedAgeError(NormalizationError):
    reason = "malformed-age"


class AgeOutOfRangeError(NormalizationError):
    reason = "age-out-of-range"


class EmptyReportError(NormalizationError):
    reason = "overly-brief"


class WindowError(CxrError):
    module = "windowing"


class InvalidWindowError(WindowError):
    pass


class MissingWindowError(WindowError):
    pass


class UnsupportedDicomError(WindowError):
    pass


class LabelerError(CxrError):
    module = "labeler"
    category = COMPUTE


class EmptyCorpusError(LabelerError):
    category = INPUT


class DivergenceError(LabelerError):
    pass


class CheckpointError(LabelerError):
    category = INPUT


class MetricsError(CxrError):
    module = "metrics"


class LengthMismatchError(MetricsError):
    pass


class DegenerateWeightsError(MetricsError):
    category = COMPUTE


class DatasetError(CxrError):
    module = "dataset"


class TooFewSamplesError(DatasetError):
    pass


class DuplicateIdError(DatasetError):
    pass


class UnassignedSplitError(DatasetError):
    pass


class TemplateError(CxrError):
    module = "llm_adapter"


class TransportError(CxrError):
    module = "llm_adapter"
    category = TRANSPORT

    def __init__(self, message, attempts=1):
        super().__init__(message)
        self.attempts = attempts


class NetworkError(TransportError):
    pass


class AuthError(TransportError):
    pass


class RateLimitError(TransportError):
    pass
