"""
Exception types shared by the assignment lab.
"""

from typing import Optional


class MusuError(Exception):
    """Base class for every error the lab reports to the user."""


class ConfigError(MusuError):
    """Experiment configuration is malformed or out of range."""

    def __init__(self, message: str, field_path: Optional[str] = None):
        self.field_path = field_path
        if field_path:
            message = f"{field_path}: {message}"
        super().__init__(message)


class InvalidInputError(MusuError, ValueError):
    """Numeric input violates a guard (NaN probabilities, bad shapes)."""


class SceneGenerationError(MusuError):
    """Rejection sampling could not satisfy the scene constraints."""


class SceneFileError(MusuError):
    """A scene file could not be parsed or fails schema validation."""


class CheckpointError(MusuError):
    """A checkpoint file is missing, malformed, or of the wrong version."""


class EvaluationError(MusuError):
    """Evaluation cannot produce a defined metric."""


class TrainingDivergedError(MusuError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, message: str, step: int, dump_path: Optional[str] = None):
        self.step = step
        self.dump_path = dump_path
        super().__init__(message)
