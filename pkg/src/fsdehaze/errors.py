"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration / bad-input errors exit
with 2, numerical divergence with 3, anything else with 1.
"""


class FsdehazeError(Exception):
    """Base class for package-specific errors."""


class ConfigError(FsdehazeError):
    """Invalid configuration or unusable input (missing dirs, bad flags)."""


class DataError(FsdehazeError):
    """Dataset integrity problem (unmatched pairs, unreadable files)."""


class CheckpointError(FsdehazeError):
    """Checkpoint cannot be used: wrong format version or architecture."""


class TrainingDivergedError(FsdehazeError):
    """A loss went non-finite during training."""

    def __init__(self, iteration, batch_names, losses):
        self.iteration = iteration
        self.batch_names = list(batch_names)
        self.losses = dict(losses)
        super().__init__(
            f"non-finite loss at iteration {iteration} "
            f"(batch {self.batch_names}): {self.losses}"
        )
