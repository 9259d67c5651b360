"""Hawk NALM: balanced event schedules, trace simulation, differential-current
event recognition and clock-synchronisation simulation."""

from ._core import *  # noqa: F401,F403
from ._core import (
    DegenerateInputError,
    FormatError,
    HawkError,
    ParameterError,
)

EXIT_CODES = {ParameterError: 2, FormatError: 3, DegenerateInputError: 4}

__all__ = [name for name in dir() if not name.startswith("_")]
