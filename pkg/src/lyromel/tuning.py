"""Snap continuous generator output to legal, in-key melodies.

Three pure steps: quantise each attribute to its nearest legal value, pick
the major or natural-minor scale containing the most notes, then move
out-of-scale pitches to the nearest in-scale pitch. Every tie goes down.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import (
    DURATION_VALUES,
    MIDI_MAX,
    MIDI_MIN,
    REST_VALUES,
    NoteTriplet,
    nearest_value,
)

MODES = {
    "major": (0, 2, 4, 5, 7, 9, 11),
    "minor": (0, 2, 3, 5, 7, 8, 10),
}
PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


@dataclass(frozen=True)
class Scale:
    root: int
    mode: str

    def __post_init__(self):
        if not 0 <= self.root < 12 or self.mode not in MODES:
            raise ValueError(f"bad scale ({self.root}, {self.mode!r})")

    @property
    def pitch_classes(self) -> frozenset[int]:
        return frozenset((self.root + step) % 12 for step in MODES[self.mode])

    def __contains__(self, midi: int) -> bool:
        return int(midi) % 12 in self.pitch_classes

    def __str__(self) -> str:
        return f"{PITCH_NAMES[self.root]} {self.mode}"


# search order doubles as the tie-break: lower root first, major before minor
CANDIDATE_SCALES = tuple(Scale(root, mode) for root in range(12) for mode in ("major", "minor"))


def _round_half_down(x: float) -> int:
    return int(math.ceil(x - 0.5))


def quantize_triplet(triplet) -> NoteTriplet:
    midi, dur, rest = (float(v) for v in triplet)
    if not all(math.isfinite(v) for v in (midi, dur, rest)):
        raise ValueError(f"triplet must be finite, got {triplet}")
    m = min(max(midi, MIDI_MIN), MIDI_MAX)
    return NoteTriplet(
        _round_half_down(m),
        nearest_value(dur, DURATION_VALUES),
        nearest_value(rest, REST_VALUES),
    )


def quantize_sequence(triplets) -> list[NoteTriplet]:
    return [quantize_triplet(t) for t in triplets]


def scale_scores(notes: Sequence) -> list[int]:
    """In-scale note count for each of the 24 candidate scales."""
    classes = np.bincount([int(n[0]) % 12 for n in notes], minlength=12)
    return [int(sum(classes[pc] for pc in s.pitch_classes)) for s in CANDIDATE_SCALES]


def detect_scale(notes: Sequence) -> Scale:
    if len(notes) == 0:
        raise ValueError("cannot detect the scale of an empty sequence")
    scores = scale_scores(notes)
    return CANDIDATE_SCALES[int(np.argmax(scores))]


def nearest_in_scale(midi: int, scale: Scale) -> int:
    """Closest pitch in ``scale`` and in the piano range; ties go down."""
    for distance in range(12):
        for candidate in (midi - distance, midi + distance):
            if MIDI_MIN <= candidate <= MIDI_MAX and candidate in scale:
                return candidate
    raise AssertionError("every scale has a member within an octave")


def constrain_to_scale(notes: Sequence[NoteTriplet], scale: Scale) -> list[NoteTriplet]:
    return [n if n.midi in scale else n._replace(midi=nearest_in_scale(n.midi, scale)) for n in notes]


def tune(triplets) -> tuple[list[NoteTriplet], Scale]:
    """quantize -> detect -> constrain for one continuous sequence."""
    q = quantize_sequence(triplets)
    scale = detect_scale(q)
    return constrain_to_scale(q, scale), scale
