"""Spatial-audio guidance signals derived from heading error.

A walker hears short beeps whose apparent direction and pitch encode how
far their heading deviates from the desired one: the virtual source sits
at the scaled error angle one meter away, and pitch drops from 1 toward
1 - pitch_range as the error grows. Larger route turns are announced with
discrete spoken prompts instead.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

BEEP_DURATION = 0.09
SOURCE_DISTANCE = 1.0
MAX_HEADING_ERROR = 180.0

RATE_RANGE = (0.5, 11.0)
PITCH_RANGE_RANGE = (0.0, 0.8)
SCALING_RANGE = (0.5, 2.0)


@dataclass(frozen=True)
class AudioParams:
    """Personalizable feedback parameters.

    Attributes:
        rate: Beep rate in Hz, within [0.5, 11].
        pitch_range: How far pitch may drop below 1, within [0, 0.8].
        scaling: Multiplier exaggerating the source angle, within [0.5, 2].
    """

    rate: float = 3.0
    pitch_range: float = 0.5
    scaling: float = 1.0

    def __post_init__(self) -> None:
        for value, (lo, hi), name in (
            (self.rate, RATE_RANGE, "rate"),
            (self.pitch_range, PITCH_RANGE_RANGE, "pitch_range"),
            (self.scaling, SCALING_RANGE, "scaling"),
        ):
            if not (lo <= value <= hi):
                raise ValueError(f"{name} must be within [{lo}, {hi}]")


GENERIC_PARAMS = AudioParams(rate=3.0, pitch_range=0.5, scaling=1.0)


@dataclass(frozen=True)
class BeepEvent:
    """One spatialized beep.

    Attributes:
        time: Onset in seconds from the start of the schedule.
        source_angle: Virtual source direction in degrees, positive right.
        pitch: Playback-rate multiplier within [1 - pitch_range, 1].
        duration: Beep length in seconds.
        distance: Virtual source distance in meters.
    """

    time: float
    source_angle: float
    pitch: float
    duration: float = BEEP_DURATION
    distance: float = SOURCE_DISTANCE


class TurnSeverity(enum.Enum):
    SLIGHT = "slight"
    NORMAL = "normal"
    SHARP = "sharp"


@dataclass(frozen=True)
class TurnPrompt:
    """A discrete spoken turn announcement.

    Attributes:
        severity: How tight the turn is.
        direction: "left" or "right".
    """

    severity: TurnSeverity
    direction: str

    @property
    def phrase(self) -> str:
        """Spoken form, e.g. "take a sharp right turn"."""
        if self.severity is TurnSeverity.NORMAL:
            return f"take a {self.direction} turn"
        return f"take a {self.severity.value} {self.direction} turn"


def feedback(
    heading_error: float,
    params: AudioParams,
    max_error: float = MAX_HEADING_ERROR,
) -> tuple[float, float]:
    """Maps a signed heading error to a source angle and beep pitch.

    Args:
        heading_error: Desired-minus-actual heading in degrees, positive
            meaning the target is to the user's right, within (-180, 180].
        params: Feedback parameters.
        max_error: Error magnitude at which pitch reaches its floor.

    Returns:
        (source_angle, pitch): the virtual source direction in degrees,
        scaled by params.scaling and clamped to +/-180 so the cue never
        wraps past "behind the user", and the pitch multiplier, 1 at zero
        error falling linearly to 1 - pitch_range at max_error.
    """
    scaled = heading_error * params.scaling
    source_angle = max(-180.0, min(180.0, scaled))
    magnitude = min(abs(heading_error), max_error)
    pitch = 1.0 - params.pitch_range * magnitude / max_error
    return source_angle, pitch


def beep_schedule(duration: float, rate: float) -> list[float]:
    """Beep onset times at a constant rate.

    Args:
        duration: Schedule length in seconds; must be nonnegative.
        rate: Beeps per second.

    Returns:
        Times 0, 1/rate, 2/rate, ... strictly less than duration.

    Raises:
        ValueError: If duration is negative or rate is not positive.
    """
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    if rate <= 0:
        raise ValueError("rate must be positive")
    times = []
    k = 0
    while k / rate < duration:
        times.append(k / rate)
        k += 1
    return times


def turn_prompt(turn_angle: float) -> TurnPrompt | None:
    """Categorizes a route turn angle into a spoken prompt.

    Args:
        turn_angle: Signed turn angle in degrees, positive right,
            within (-180, 180].

    Returns:
        The prompt, or None when the turn is too shallow to announce
        (|angle| <= 15 degrees). Severity bands are half-open at the
        lower edge: (15, 45] slight, (45, 120] normal, (120, 180] sharp.
    """
    magnitude = abs(turn_angle)
    if magnitude <= 15.0:
        return None
    direction = "right" if turn_angle > 0 else "left"
    if magnitude <= 45.0:
        severity = TurnSeverity.SLIGHT
    elif magnitude <= 120.0:
        severity = TurnSeverity.NORMAL
    else:
        severity = TurnSeverity.SHARP
    return TurnPrompt(severity=severity, direction=direction)


def synthesize_beep(pitch: float, sample_rate: int = 44100) -> np.ndarray:
    """Renders one beep as mono float samples in [-1, 1].

    A 880 Hz base tone is pitch-shifted by the multiplier and shaped
    with a raised-cosine envelope over the fixed beep duration.

    Args:
        pitch: Playback-rate multiplier.
        sample_rate: Output sampling frequency in Hz.

    Returns:
        float64 samples of length round(duration * sample_rate).
    """
    count = round(BEEP_DURATION * sample_rate)
    t = np.arange(count) / sample_rate
    envelope = 0.5 * (1.0 - np.cos(2.0 * math.pi * t / BEEP_DURATION))
    return envelope * np.sin(2.0 * math.pi * 880.0 * pitch * t)
