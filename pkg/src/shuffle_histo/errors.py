"""Exception types shared across the package."""


class ShuffleHistoError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ShuffleHistoError, ValueError):
    """A configuration value violates its contract."""


class PretrainedWeightsError(ConfigError):
    """Pretrained weights were requested but could not be obtained."""


class FilenameParseError(ShuffleHistoError, ValueError):
    """A dataset filename does not follow the expected convention."""

    def __init__(self, name: str, component: str, detail: str = ""):
        self.name = name
        self.component = component
        msg = f"cannot parse {component!r} from filename {name!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EmptyDatasetError(ShuffleHistoError, ValueError):
    """A dataset scan or split produced no usable records."""


class SplitInfeasibleError(ShuffleHistoError, ValueError):
    """The requested split cannot be satisfied with the available records."""


class InvalidImageError(ShuffleHistoError, ValueError):
    """An image does not meet the preprocessing contract."""


class CheckpointError(ShuffleHistoError):
    """Base class for checkpoint load failures."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint files are unreadable or truncated."""


class ConfigMismatchError(CheckpointError):
    """Checkpoint metadata disagrees with the stored weights or caller config."""


class UndefinedMetricError(ShuffleHistoError, ValueError):
    """A metric is undefined for the given counts (e.g. zero samples)."""


class DivergenceError(ShuffleHistoError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


class ConcurrentBenchmarkError(ShuffleHistoError, RuntimeError):
    """A latency benchmark was started while another one is running."""


class IncompleteReportError(ShuffleHistoError, ValueError):
    """A report is missing required rows or magnification columns."""
