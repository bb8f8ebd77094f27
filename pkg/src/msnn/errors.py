"""Exception hierarchy shared by every subpackage."""


class MSNNError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MSNNError, ValueError):
    pass


class PropagationError(MSNNError, FloatingPointError):
    """A NaN entered a computation that cannot meaningfully carry it."""


class MissingKeypointError(MSNNError):
    def __init__(self, joint: str, confidence: float = float("nan")):
        super().__init__(f"keypoint {joint!r} missing (confidence {confidence:.3f})")
        self.joint = joint
        self.confidence = confidence


class DegenerateBoxError(InvalidArgumentError):
    pass


class DataError(MSNNError):
    """Manifest, frame or keypoint data could not be used."""


class EmptyDatasetError(DataError):
    pass


class ManifestParseError(DataError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class DivergenceError(MSNNError, ArithmeticError):
    pass


class CorruptCheckpointError(MSNNError):
    pass


class MissingArtifactError(MSNNError, FileNotFoundError):
    pass
