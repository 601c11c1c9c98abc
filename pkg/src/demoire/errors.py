"""Exception types shared across the package."""


class DemoireError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(DemoireError, ValueError):
    """An array has the wrong rank, an axis mismatch, or indivisible dims."""


class ConfigError(DemoireError, ValueError):
    """A configuration value is out of its legal range or inconsistent."""


class NumericalError(DemoireError, ArithmeticError):
    """A computation produced non-finite values."""


class DataError(DemoireError, ValueError):
    """An input file or record could not be read or parsed."""


class DetectionError(DemoireError, RuntimeError):
    """Corner detection found nothing usable in the image."""


class CleaningError(DemoireError, RuntimeError):
    """Corner cleaning did not end with the expected corner count.

    Carries the surviving points so callers can inspect what was kept.
    """

    def __init__(self, message, survivors=None):
        super().__init__(message)
        self.survivors = survivors


class DegenerateGeometryError(DemoireError, RuntimeError):
    """A point configuration does not pin down a homography."""


class SynthesisError(DemoireError, RuntimeError):
    """The moire simulator could not produce an acceptable pair."""


class TrainingDivergedError(DemoireError, RuntimeError):
    """Training hit non-finite losses; the last good checkpoint was kept.

    ``checkpoint_path`` points at the recovery checkpoint when one was written.
    """

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
