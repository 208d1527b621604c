"""Exception hierarchy shared across the pipeline.

ConfigurationError maps to CLI exit code 2, every other CoverifyError to 1.
"""


class CoverifyError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(CoverifyError):
    """Bad config, missing toolchain, unusable endpoint definition."""


class ToolchainError(ConfigurationError):
    """Requested compiler is not present or not executable."""


class CorpusError(CoverifyError):
    """Unreadable corpus input or malformed record."""


class SignatureError(CorpusError):
    """Function header missing, unbalanced, or uses an unsupported construct."""


class GatewayError(CoverifyError):
    """Endpoint unreachable after retries, or all samples unusable."""


class ExtractionError(GatewayError):
    """Tagged payload missing from a model response."""


class SuiteFormatError(ExtractionError):
    """Test-case markers absent or fewer than requested.

    Carries the raw model output so the caller can log or retry.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class WrapperMismatchError(GatewayError):
    """Generated kernel wrapper does not replicate the kernel interface."""


class HarnessError(CoverifyError):
    """Harness generation rejected the inputs (bad snippet, missing wrapper)."""


class TranscriptError(CoverifyError):
    """Execution output has no recognizable records, or is incomplete where a
    complete transcript is required."""
