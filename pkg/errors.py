#!/usr/bin/env python3
"""
Exception hierarchy for nuggetprobe
Every error carries the exit code the CLI should report for it
"""

from typing import Optional


class NuggetProbeError(Exception):
    """Base class for all nuggetprobe errors"""

    exit_code = 1


class ValidationError(NuggetProbeError):
    """Input violates a schema or an invariant (duplicate ids, budget overflow, ...)"""

    exit_code = 1


class ParseError(ValidationError):
    """Malformed input, optionally pinned to a line of the offending file"""

    def __init__(self, message: str, line_number: Optional[int] = None, path: Optional[str] = None):
        self.line_number = line_number
        self.path = path
        where = ''
        if path:
            where = f"{path}"
        if line_number is not None:
            where = f"{where}:{line_number}" if where else f"line {line_number}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(ValidationError):
    """Experiment prerequisites are not satisfied"""


class StatisticsError(ValidationError):
    """Degenerate input to a meta-evaluation statistic"""


class TemplateError(ValidationError):
    """Prompt template could not be rendered"""

    def __init__(self, message: str, placeholder: Optional[str] = None):
        self.placeholder = placeholder
        super().__init__(message)


class BackendError(NuggetProbeError):
    """Judge or generation backend failed"""

    exit_code = 2
    retryable = False


class TransportError(BackendError):
    """HTTP transport failure; safe to retry"""

    retryable = True


class VerdictParseError(BackendError):
    """Model output could not be mapped to a decision"""

    def __init__(self, message: str, raw_response: str = ''):
        self.raw_response = raw_response
        super().__init__(f"{message} (raw response: {raw_response[:200]!r})")
