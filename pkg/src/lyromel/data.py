"""Syllable-aligned melody data: MIDI parsing, quantisation, datasets.

A song becomes a list of :class:`ParsedNote` (one per note that carries an
English syllable). Consecutive notes turn into :class:`NoteTriplet` values
``(midi, duration, rest)`` in beats, snapped to the legal value sets below,
and fixed 20-note windows of those are the training examples.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import midi as smf
from .checkpoint import atomic_write_bytes

SEQ_LEN = 20
MIDI_MIN, MIDI_MAX = 21, 108
DURATION_VALUES = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 16.0, 32.0)
REST_VALUES = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
ATTRIBUTE_VALUES = {"duration": DURATION_VALUES, "rest": REST_VALUES}
WRITE_BPM = 120.0
WRITE_DIVISION = 480

_SYLLABLE_CHARS = re.compile(r"[^a-z']+")


class NoteTriplet(NamedTuple):
    midi: int
    duration: float
    rest: float


class ParsedNote(NamedTuple):
    syllable: str
    midi: int
    note_on: float  # seconds
    note_off: float  # seconds
    bpm: float
    word: str
    line_start: bool


class ParsedSong(list):
    """List of :class:`ParsedNote` that also records whether lyrics existed.

    ``has_lyrics`` is False when the file carried no lyric/text events at all,
    which is different from a file whose lyrics matched no notes.
    """

    def __init__(self, notes: Iterable[ParsedNote] = (), has_lyrics: bool = True,
                 bpm: float = WRITE_BPM):
        super().__init__(notes)
        self.has_lyrics = has_lyrics
        self.bpm = bpm


@dataclass(frozen=True)
class AlignedSequence:
    syllables: tuple[tuple[str, str], ...]  # (word, syllable) per note
    notes: tuple[NoteTriplet, ...]
    source_id: str = ""

    def __post_init__(self):
        if len(self.syllables) != SEQ_LEN or len(self.notes) != SEQ_LEN:
            raise ValueError(
                f"aligned sequence needs {SEQ_LEN} syllables and notes, "
                f"got {len(self.syllables)} and {len(self.notes)}"
            )

    def array(self) -> np.ndarray:
        return np.array(self.notes, dtype=np.float64)

    def to_json(self) -> dict:
        return {
            "source_id": self.source_id,
            "syllables": [list(p) for p in self.syllables],
            "notes": [[int(n.midi), float(n.duration), float(n.rest)] for n in self.notes],
        }

    @classmethod
    def from_json(cls, record: dict) -> "AlignedSequence":
        return cls(
            syllables=tuple((str(w), str(s)) for w, s in record["syllables"]),
            notes=tuple(NoteTriplet(int(m), float(d), float(r)) for m, d, r in record["notes"]),
            source_id=record.get("source_id", ""),
        )


@dataclass
class AttributeHistograms:
    midi: dict[int, float]
    duration: dict[float, float]
    rest: dict[float, float]

    def to_json(self) -> dict:
        return {
            "midi": {str(k): v for k, v in sorted(self.midi.items())},
            "duration": {repr(float(k)): v for k, v in sorted(self.duration.items())},
            "rest": {repr(float(k)): v for k, v in sorted(self.rest.items())},
        }

    @classmethod
    def from_json(cls, record: dict) -> "AttributeHistograms":
        return cls(
            midi={int(k): float(v) for k, v in record["midi"].items()},
            duration={float(k): float(v) for k, v in record["duration"].items()},
            rest={float(k): float(v) for k, v in record["rest"].items()},
        )


@dataclass
class DatasetSplit:
    train: list[AlignedSequence]
    validation: list[AlignedSequence]
    test: list[AlignedSequence]


# ----------------------------------------------------------------------------
# quantisation


def nearest_value(x: float, values: Sequence[float]) -> float:
    """Closest member of ascending ``values``; ties go to the smaller one."""
    best = values[0]
    best_dist = abs(x - best)
    for v in values[1:]:
        dist = abs(x - v)
        if dist < best_dist:
            best, best_dist = v, dist
    return best


def quantize_attribute(x: float, kind: str) -> float:
    if kind not in ATTRIBUTE_VALUES:
        raise ValueError(f"unknown attribute kind {kind!r}")
    return nearest_value(x, ATTRIBUTE_VALUES[kind])


def beats_from_seconds(t: float, bpm: float, kind: str) -> float:
    """Seconds to beats (t * bpm / 60), snapped to the attribute's value set."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if bpm <= 0:
        raise ValueError(f"bpm must be positive, got {bpm}")
    return quantize_attribute(t * bpm / 60.0, kind)


def clamp_midi(m: int) -> int:
    return min(max(int(m), MIDI_MIN), MIDI_MAX)


# ----------------------------------------------------------------------------
# MIDI parsing


def clean_syllable(text: str) -> str:
    """Lowercase, keep ASCII letters and inner apostrophes; '' if not English."""
    if any(ord(ch) > 127 for ch in text):
        return ""
    s = _SYLLABLE_CHARS.sub("", text.lower()).strip("'")
    return s if any(ch.isalpha() for ch in s) else ""


def _lyric_events(mf: smf.MidiFile) -> tuple[list[smf.MetaEvent], bool]:
    """Lyric events (0x05), falling back to text events (0x01)."""
    for mtype in (smf.META_LYRIC, smf.META_TEXT):
        events = []
        for track in mf.tracks:
            events.extend(
                m for m in track.metas
                if m.type == mtype and not (mtype == smf.META_TEXT and m.text.startswith("@"))
            )
        if events:
            events.sort(key=lambda m: m.tick)
            return events, True
    return [], False


def _pair_notes(track: smf.Track) -> list[tuple[int, int, int]]:
    """(on_tick, off_tick, pitch) for every completed note, in onset order."""
    open_notes: dict[tuple[int, int], list[int]] = {}
    notes = []
    for ev in sorted(track.notes, key=lambda e: (e.tick, e.on)):
        key = (ev.channel, ev.pitch)
        if ev.on:
            open_notes.setdefault(key, []).append(ev.tick)
        elif open_notes.get(key):
            notes.append((open_notes[key].pop(0), ev.tick, ev.pitch))
    notes.sort(key=lambda n: (n[0], -n[2]))
    return notes


def _group_words(raw_texts: list[str], syllables: list[str]) -> tuple[list[str], list[bool]]:
    """Rebuild words from karaoke-style syllable events.

    A trailing '-' always joins the next syllable to the current word. When
    the file uses whitespace to delimit words, a syllable continues the word
    unless whitespace separates it from its predecessor; without whitespace
    markers each syllable is its own word.
    """
    spaced = any(t[:1] in (" ", "/", "\\") or t[-1:].isspace() for t in raw_texts)
    groups: list[list[int]] = []
    line_start = []
    for k, raw in enumerate(raw_texts):
        starts_line = k == 0 or raw[:1] in ("/", "\\") or "\n" in raw or "\r" in raw
        line_start.append(starts_line)
        if k == 0:
            groups.append([k])
            continue
        prev = raw_texts[k - 1]
        if prev.rstrip().endswith("-") or raw.lstrip().startswith("-"):
            joined = True
        elif spaced:
            joined = not (prev[-1:].isspace() or raw[:1] in (" ", "/", "\\") or starts_line)
        else:
            joined = False
        if joined and not starts_line:
            groups[-1].append(k)
        else:
            groups.append([k])
    words = [""] * len(raw_texts)
    for group in groups:
        word = "".join(syllables[k] for k in group)
        for k in group:
            words[k] = word
    return words, line_start


def parse_midi(data: bytes) -> ParsedSong:
    """Notes carrying an English syllable, with onset/offset in seconds.

    Timing uses the file's first tempo event for the whole file. When several
    tracks have notes under lyric events, the one holding lyric events wins,
    then the one with most syllable-attached notes. In a chord the highest
    pitch takes the syllable.
    """
    mf = smf.read_midi(data)
    tempo = smf.DEFAULT_TEMPO
    tempos = sorted(
        (m for t in mf.tracks for m in t.metas if m.type == smf.META_TEMPO and len(m.data) == 3),
        key=lambda m: m.tick,
    )
    if tempos:
        tempo = int.from_bytes(tempos[0].data, "big") or smf.DEFAULT_TEMPO
    bpm = 60_000_000 / tempo
    spt = mf.seconds_per_tick(tempo)

    lyrics, has_lyrics = _lyric_events(mf)
    if not has_lyrics:
        return ParsedSong([], has_lyrics=False, bpm=bpm)
    by_tick: dict[int, str] = {}
    for ev in lyrics:
        by_tick[ev.tick] = by_tick.get(ev.tick, "") + ev.text

    best = None
    for idx, track in enumerate(mf.tracks):
        attached = []
        used_ticks = set()
        for on, off, pitch in _pair_notes(track):
            if on in by_tick and on not in used_ticks:
                used_ticks.add(on)
                attached.append((on, off, pitch, by_tick[on]))
        if not attached:
            continue
        holds_lyrics = any(m.type in (smf.META_LYRIC, smf.META_TEXT) for m in track.metas)
        key = (holds_lyrics, len(attached), -idx)
        if best is None or key > best[0]:
            best = (key, attached)
    if best is None:
        return ParsedSong([], has_lyrics=True, bpm=bpm)

    kept = [(on, off, pitch, raw, clean_syllable(raw)) for on, off, pitch, raw in best[1]]
    kept = [k for k in kept if k[4]]
    words, line_start = _group_words([k[3] for k in kept], [k[4] for k in kept])
    notes = [
        ParsedNote(syl, pitch, on * spt, off * spt, bpm, word, ls)
        for (on, off, pitch, _, syl), word, ls in zip(kept, words, line_start)
    ]
    return ParsedSong(notes, has_lyrics=True, bpm=bpm)


def song_triplets(song: Sequence[ParsedNote]) -> list[NoteTriplet]:
    """Quantised triplets for consecutive syllable notes.

    The rest of note k is the silence between the end of note k-1 and the
    start of note k (zero when they overlap); the first note's rest is 0.
    """
    out = []
    for k, note in enumerate(song):
        dur = beats_from_seconds(max(note.note_off - note.note_on, 0.0), note.bpm, "duration")
        if k == 0:
            rest = 0.0
        else:
            gap = max(note.note_on - song[k - 1].note_off, 0.0)
            rest = beats_from_seconds(gap, note.bpm, "rest")
        out.append(NoteTriplet(clamp_midi(note.midi), dur, rest))
    return out


def extract_sequences(song: Sequence[ParsedNote], source_id: str = "") -> list[AlignedSequence]:
    """0 windows below 20 notes, 1 below 40, otherwise 2 (notes 1-20 and 21-40)."""
    n = len(song)
    if n < SEQ_LEN:
        return []
    count = 1 if n < 2 * SEQ_LEN else 2
    triplets = song_triplets(song)
    out = []
    for k in range(count):
        lo, hi = k * SEQ_LEN, (k + 1) * SEQ_LEN
        out.append(AlignedSequence(
            syllables=tuple((note.word, note.syllable) for note in song[lo:hi]),
            notes=tuple(triplets[lo:hi]),
            source_id=f"{source_id}#{k}" if source_id else str(k),
        ))
    return out


def lyric_sentences(song: Sequence[ParsedNote]) -> list[list[tuple[str, str]]]:
    """(word, syllable) pairs grouped into lyric lines."""
    sentences: list[list[tuple[str, str]]] = []
    for note in song:
        if note.line_start or not sentences:
            sentences.append([])
        sentences[-1].append((note.word, note.syllable))
    return sentences


# ----------------------------------------------------------------------------
# writing melodies back to MIDI


def melody_to_midi(notes: Sequence[NoteTriplet], syllables: Sequence[tuple[str, str]] | None = None,
                   bpm: float = WRITE_BPM, division: int = WRITE_DIVISION) -> bytes:
    """Monophonic format-0 file with one lyric event per note.

    Note k starts ``rest_k`` beats after note k-1 ends. Syllables that
    continue into the next syllable of the same word get a trailing '-',
    word-final syllables a trailing space, so :func:`parse_midi` recovers the
    words.
    """
    if syllables is None:
        syllables = [("la", "la")] * len(notes)
    if len(syllables) != len(notes):
        raise ValueError("need exactly one syllable per note")
    # at equal ticks: note-offs, then the lyric, then the note-on
    events = [(0, (0, -1), smf.tempo_event(bpm))]
    tick = 0
    spelled = ""
    for k, (note, (word, syl)) in enumerate(zip(notes, syllables)):
        on = tick + int(round(note.rest * division))
        off = on + int(round(note.duration * division))
        spelled += syl
        nxt = syllables[k + 1] if k + 1 < len(syllables) else None
        continues = (nxt is not None and nxt[0] == word and spelled != word
                     and word.startswith(spelled + nxt[1]))
        text = syl + ("-" if continues else " ")
        if not continues:
            spelled = ""
        pitch = clamp_midi(note.midi)
        events.append((on, (1, k), smf.lyric_event(text)))
        events.append((on, (2, k), smf.note_on(0, pitch, 100)))
        events.append((off, (0, k), smf.note_off(0, pitch)))
        tick = off
    return smf.write_midi(events, division)


# ----------------------------------------------------------------------------
# dataset level


def compute_histograms(dataset: Sequence[AlignedSequence]) -> AttributeHistograms:
    if not dataset:
        raise ValueError("cannot build histograms from an empty dataset")
    counts = [Counter(), Counter(), Counter()]
    for seq in dataset:
        for note in seq.notes:
            counts[0][int(note.midi)] += 1
            counts[1][float(note.duration)] += 1
            counts[2][float(note.rest)] += 1
    hists = []
    for c in counts:
        total = sum(c.values())
        hists.append({k: v / total for k, v in sorted(c.items())})
    return AttributeHistograms(*hists)


def split_dataset(dataset: Sequence[AlignedSequence], seed: int,
                  fractions: tuple[float, float] = (0.1, 0.1)) -> DatasetSplit:
    """Shuffled 0.8/0.1/0.1 split; validation and test sizes are round(0.1 n)."""
    n = len(dataset)
    if n < 10:
        raise ValueError(f"need at least 10 sequences to split, got {n}")
    n_val = int(round(fractions[0] * n))
    n_test = int(round(fractions[1] * n))
    order = np.random.default_rng(seed).permutation(n)
    items = [dataset[i] for i in order]
    n_train = n - n_val - n_test
    return DatasetSplit(items[:n_train], items[n_train:n_train + n_val], items[n_train + n_val:])


def dumps_jsonl(records: Iterable[dict]) -> bytes:
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in records]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def save_dataset(path, dataset: Iterable[AlignedSequence]) -> None:
    atomic_write_bytes(path, dumps_jsonl(seq.to_json() for seq in dataset))


def load_dataset(path) -> list[AlignedSequence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(AlignedSequence.from_json(json.loads(line)))
                except (KeyError, ValueError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc
    return out


def split_from_manifest(dataset: Sequence[AlignedSequence], manifest: dict) -> DatasetSplit:
    by_id = {seq.source_id: seq for seq in dataset}
    try:
        return DatasetSplit(*([by_id[i] for i in manifest[part]]
                              for part in ("train", "validation", "test")))
    except KeyError as exc:
        raise ValueError(f"split manifest references unknown sequence {exc}") from exc


def split_manifest(split: DatasetSplit) -> dict:
    return {
        "train": [s.source_id for s in split.train],
        "validation": [s.source_id for s in split.validation],
        "test": [s.source_id for s in split.test],
    }


def scan_midi_dir(directory) -> tuple[list[tuple[str, ParsedSong]], list[tuple[str, str]]]:
    """Parse every .mid/.midi/.kar file under ``directory`` in sorted path order.

    Returns ``(songs, failures)`` where failures pairs a relative path with
    the reason it was skipped.
    """
    root = Path(directory)
    songs, failures = [], []
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in (".mid", ".midi", ".kar"))
    for path in paths:
        rel = path.relative_to(root).as_posix()
        try:
            song = parse_midi(path.read_bytes())
        except smf.MidiParseError as exc:
            failures.append((rel, str(exc)))
            continue
        if not song.has_lyrics:
            failures.append((rel, "no lyric events"))
            continue
        songs.append((rel, song))
    return songs, failures
