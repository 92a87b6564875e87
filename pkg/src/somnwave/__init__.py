"""Single-channel EEG sleep staging from Sleep-EDF recordings."""

from somnwave.stages import SleepStage

__version__ = "0.1.0"

__all__ = ["SleepStage", "__version__"]
