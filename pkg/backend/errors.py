"""
Error hierarchy shared by the parser, the engines, and the front ends.
Every failure a user can trigger is a ScoopError; the CLI maps them to exit
code 1 and the web API to a JSON error payload.
"""

from typing import List, Optional, Sequence


class ScoopError(Exception):
    """Base class for all scooplock errors"""

    code = "error"

    def to_dict(self) -> dict:
        return {'code': self.code, 'message': str(self)}


class ParseError(ScoopError):
    """Syntax error in a .scp program or a strategy expression"""

    code = "syntax-error"

    def __init__(self, message: str, line: int = 1, column: int = 1,
                 expected: Optional[Sequence[str]] = None):
        self.line = line
        self.column = column
        self.expected: List[str] = sorted(expected or [])
        detail = f"{message} at line {line}, column {column}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)

    def to_dict(self) -> dict:
        return {
            'code': self.code,
            'message': str(self),
            'line': self.line,
            'col': self.column,
            'expected': self.expected,
        }


class ValidationFailed(ScoopError):
    """Raised by front ends when validate_program reports errors"""

    code = "validation-failed"

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0].message if self.diagnostics else "invalid program"
        super().__init__(f"{len(self.diagnostics)} validation error(s); first: {first}")


class FeatureNotFound(ScoopError):
    code = "feature-not-found"

    def __init__(self, class_name: str, feature_name: str):
        self.class_name = class_name
        self.feature_name = feature_name
        super().__init__(f"class {class_name} has no feature {feature_name}")


class InitializationError(ScoopError):
    code = "initialization-error"


class ConfigError(ScoopError):
    code = "config-error"


class EngineError(ScoopError):
    """A transition could not be applied; signals an engine bug or a broken invariant"""

    code = "engine-error"


class StuckConfiguration(EngineError):
    code = "stuck-configuration"


class VoidDereference(EngineError):
    code = "void-dereference"


class LockViolation(EngineError):
    code = "lock-violation"


class ChannelViolation(EngineError):
    code = "channel-violation"


class StrategyError(ScoopError):
    code = "strategy-error"

    def __init__(self, message: str, step_index: Optional[int] = None):
        self.step_index = step_index
        if step_index is not None:
            message = f"strategy step {step_index}: {message}"
        super().__init__(message)


class ReplayDivergence(ScoopError):
    code = "replay-divergence"


class OracleSizeError(ScoopError):
    code = "oracle-size"
