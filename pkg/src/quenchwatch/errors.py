"""Exception hierarchy.

Invalid arguments raise the builtin ``ValueError``. Problems with the data
itself (bad shot files, weight files, unlabeled shots) derive from
``DataError`` so the CLI can map them to a distinct exit code.
"""


class DataError(Exception):
    """Input data is malformed or inadmissible."""


class ShotFormatError(DataError):
    """A shot file does not follow the canonical text layout."""


class AlignmentError(DataError):
    """Channel time origins disagree by more than half a grid step."""


class WeightFileError(DataError):
    """Base class for weight-file load failures."""


class VersionMismatchError(WeightFileError):
    pass


class DimensionMismatchError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass


class DivergenceError(Exception):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, shot_id: int, loss: float):
        self.epoch = epoch
        self.shot_id = shot_id
        self.loss = loss
        super().__init__(
            f"training diverged at epoch {epoch} on shot {shot_id} (loss={loss})"
        )
