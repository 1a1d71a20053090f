"""Minimal Standard MIDI File reader and writer.

Only what the melody pipeline needs: note on/off, tempo and text/lyric meta
events. Everything else is parsed for framing and then dropped.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

DEFAULT_TEMPO = 500_000  # microseconds per quarter note, i.e. 120 BPM
META_TEXT = 0x01
META_TRACK_NAME = 0x03
META_LYRIC = 0x05
META_END_OF_TRACK = 0x2F
META_TEMPO = 0x51


class MidiParseError(ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class NoteEvent:
    tick: int
    on: bool
    channel: int
    pitch: int
    velocity: int


@dataclass
class MetaEvent:
    tick: int
    type: int
    data: bytes

    @property
    def text(self) -> str:
        return self.data.decode("latin-1")


@dataclass
class Track:
    notes: list[NoteEvent] = field(default_factory=list)
    metas: list[MetaEvent] = field(default_factory=list)


@dataclass
class MidiFile:
    format: int
    division: int
    tracks: list[Track]

    @property
    def smpte(self) -> bool:
        return bool(self.division & 0x8000)

    def seconds_per_tick(self, tempo: int) -> float:
        if self.smpte:
            fps = 256 - (self.division >> 8)
            fps = 29.97 if fps == 29 else fps
            return 1.0 / (fps * (self.division & 0xFF))
        return tempo / 1e6 / self.division


class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise MidiParseError("unexpected end of data", self.pos)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MidiParseError(f"need {n} bytes, only {self.end - self.pos} left", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", self.pos)


def _parse_track(data: bytes, start: int, end: int) -> Track:
    r = _Reader(data, start, end)
    track = Track()
    tick = 0
    status = None
    while r.pos < r.end:
        tick += r.varlen()
        here = r.pos
        b = r.byte()
        if b & 0x80:
            if b < 0xF0:
                status = b
            data1 = None
        else:
            if status is None:
                raise MidiParseError("data byte without running status", here)
            data1 = b
            b = status
        if b == 0xFF:
            mtype = r.byte()
            payload = r.take(r.varlen())
            track.metas.append(MetaEvent(tick, mtype, payload))
            if mtype == META_END_OF_TRACK:
                break
            continue
        if b in (0xF0, 0xF7):
            r.take(r.varlen())
            continue
        if b >= 0xF0:
            raise MidiParseError(f"unexpected system status byte 0x{b:02X}", here)
        kind = b & 0xF0
        channel = b & 0x0F
        if data1 is None:
            data1 = r.byte()
        if kind in (0xC0, 0xD0):
            continue
        data2 = r.byte()
        if data1 > 127 or data2 > 127:
            raise MidiParseError("channel message data byte out of range", here)
        if kind == 0x90:
            track.notes.append(NoteEvent(tick, data2 > 0, channel, data1, data2))
        elif kind == 0x80:
            track.notes.append(NoteEvent(tick, False, channel, data1, data2))
    return track


def read_midi(data: bytes) -> MidiFile:
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    (length,) = struct.unpack(">I", data[4:8])
    if length < 6 or 8 + length > len(data):
        raise MidiParseError("bad header length", 4)
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt > 2:
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division == 0:
        raise MidiParseError("zero time division", 12)
    pos = 8 + length
    tracks = []
    while pos < len(data) and len(tracks) < ntracks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        kind = data[pos:pos + 4]
        (size,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body = pos + 8
        if body + size > len(data):
            raise MidiParseError(f"chunk {kind!r} runs past end of file", pos)
        if kind == b"MTrk":
            tracks.append(_parse_track(data, body, body + size))
        pos = body + size
    if len(tracks) < ntracks:
        raise MidiParseError(f"header declares {ntracks} tracks, found {len(tracks)}", pos)
    return MidiFile(fmt, division, tracks)


# ----------------------------------------------------------------------------
# writing


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _meta(mtype: int, payload: bytes) -> bytes:
    return bytes([0xFF, mtype]) + _varlen(len(payload)) + payload


def write_midi(events: list[tuple[int, object, bytes]], division: int = 480) -> bytes:
    """Format-0 file from ``(tick, order, message)`` triples.

    ``order`` breaks ties between events at the same tick so output is
    deterministic; messages are raw event bytes without delta times.
    """
    body = bytearray()
    last = 0
    for tick, _, message in sorted(events, key=lambda e: (e[0], e[1])):
        body += _varlen(tick - last) + message
        last = tick
    body += _varlen(0) + _meta(META_END_OF_TRACK, b"")
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def tempo_event(bpm: float) -> bytes:
    tempo = int(round(60_000_000 / bpm))
    return _meta(META_TEMPO, tempo.to_bytes(3, "big"))


def lyric_event(text: str) -> bytes:
    return _meta(META_LYRIC, text.encode("latin-1", errors="replace"))


def note_on(channel: int, pitch: int, velocity: int) -> bytes:
    return bytes([0x90 | channel, pitch, velocity])


def note_off(channel: int, pitch: int) -> bytes:
    return bytes([0x80 | channel, pitch, 0])
