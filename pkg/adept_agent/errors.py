"""Exception hierarchy for the ADEPT pipeline.

Every error carries a stable ``code`` string. Tool errors are turned into
error observations using that code, and violation logs reuse it verbatim.
"""

from typing import Optional


class AdeptError(Exception):
    """Base class for all pipeline errors."""

    code = "adept_error"

    def __init__(self, message: str = "", code: Optional[str] = None):
        super().__init__(message or self.code)
        if code:
            self.code = code


# labels

class UnknownLabel(AdeptError, ValueError):
    code = "unknown_label"

    def __init__(self, raw: str):
        super().__init__(f"Unknown emotion label: {raw!r}")
        self.raw = raw


class EmptyAfterFilter(AdeptError, ValueError):
    code = "empty_after_filter"


class ManifestError(AdeptError, ValueError):
    code = "manifest_error"

    def __init__(self, message: str, line_no: int, code: Optional[str] = None):
        super().__init__(f"line {line_no}: {message}", code=code)
        self.line_no = line_no
        self.detail = message


class AlignmentError(AdeptError, ValueError):
    code = "alignment_error"

    def __init__(self, message: str, word_index: int):
        super().__init__(f"word {word_index}: {message}")
        self.word_index = word_index


# prior

class EmptyCandidateSet(AdeptError, ValueError):
    code = "empty_candidate_set"


class AnchorNotInCandidates(AdeptError, ValueError):
    code = "anchor_not_in_candidates"


# acoustic

class TooShort(AdeptError, ValueError):
    code = "too_short"


class UnsupportedFormat(AdeptError, ValueError):
    code = "unsupported_format"


class SegmentTooShort(AdeptError, ValueError):
    code = "segment_too_short"


class SegmentOutOfBounds(AdeptError, ValueError):
    code = "segment_out_of_bounds"


class UnknownMetric(AdeptError, ValueError):
    code = "unknown_metric"


class IndexOutOfRange(AdeptError, IndexError):
    code = "index_out_of_range"


# agent

class PolicyTimeout(AdeptError):
    code = "policy_timeout"


class MalformedPolicyMessage(AdeptError):
    code = "malformed_policy_message"


class ScriptExhausted(MalformedPolicyMessage):
    code = "script_exhausted"


class TransportError(AdeptError):
    code = "backend_unavailable"

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


# reward / refstats / pipeline

class GroupTooSmall(AdeptError, ValueError):
    code = "group_too_small"


class InsufficientData(AdeptError):
    code = "insufficient_data"


class StageError(AdeptError):
    code = "stage_failed"

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
