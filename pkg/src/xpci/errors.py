"""Exceptions and structured warnings shared by all modules.

Warnings carry a machine-readable ``code`` and ``details`` mapping so that
the command line front-end can forward them as JSON lines and record them
in run manifests.
"""
import json


class XpciError(ValueError):
    """Base class for rejected inputs."""


class GridMismatchError(XpciError):
    """Two operands live on different sampling grids."""


class StageError(XpciError):
    """A cascade stage is incompatible with the field it receives."""

    def __init__(self, index, message):
        super().__init__(f"stage {index}: {message}")
        self.index = index


class SingularFilterError(XpciError):
    """A Fourier-space denominator vanishes at some frequency sample."""

    def __init__(self, message, index):
        super().__init__(f"{message} at frequency index (iy, ix) = {index}")
        self.index = index


class XpciWarning(UserWarning):
    """Structured warning; ``str()`` gives the human message."""

    code = "warning"

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        return {"code": self.code, "message": self.message,
                "details": _jsonable(self.details)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


class SamplingWarning(XpciWarning):
    code = "sampling"


class ClampWarning(XpciWarning):
    code = "clamp"


class ValidityWarning(XpciWarning):
    code = "validity"


class TruncationWarning(XpciWarning):
    code = "truncation"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj
