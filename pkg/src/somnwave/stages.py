"""AASM sleep stages and the R&K label mapping used by Sleep-EDF."""

from enum import IntEnum

from somnwave.exceptions import UnknownStageLabel


class SleepStage(IntEnum):
    # integer order doubles as the deterministic argmax tie-break order
    W = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4
    EXCLUDED = 5

    @property
    def label(self):
        return "Excluded" if self is SleepStage.EXCLUDED else self.name

    @classmethod
    def from_name(cls, name):
        """Inverse of :attr:`label` (also accepts integer codes as text)."""
        if isinstance(name, (int,)) or (isinstance(name, str) and name.isdigit()):
            return cls(int(name))
        if name == "Excluded":
            return cls.EXCLUDED
        try:
            return cls[name]
        except KeyError:
            raise UnknownStageLabel(f"unknown stage name {name!r}") from None


SCORED_STAGES = (SleepStage.W, SleepStage.N1, SleepStage.N2, SleepStage.N3, SleepStage.REM)

_LABEL_MAP = {
    "Sleep stage W": SleepStage.W,
    "Sleep stage 1": SleepStage.N1,
    "Sleep stage 2": SleepStage.N2,
    "Sleep stage 3": SleepStage.N3,
    "Sleep stage 4": SleepStage.N3,
    "Sleep stage R": SleepStage.REM,
    "Sleep stage ?": SleepStage.EXCLUDED,
    "Movement time": SleepStage.EXCLUDED,
}


def stage_from_label(label):
    """Map a Sleep-EDF hypnogram annotation to an AASM stage.

    R&K stages 3 and 4 are merged into N3; unscored and movement epochs
    become ``EXCLUDED``.
    """
    try:
        return _LABEL_MAP[label]
    except KeyError:
        raise UnknownStageLabel(f"unrecognised stage annotation {label!r}") from None
