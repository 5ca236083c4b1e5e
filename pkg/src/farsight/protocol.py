"""Bit-exact wire formats: frame packets, detection text, detector stdout.

The byte layouts and grammars here are normative and documented in
PROTOCOL.md. Frame identity and capture timestamp travel in-band because
end-to-end latency is unmeasurable without correlating a detection back to
the frame that produced it.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    BadMagicError,
    BadPayloadError,
    BadVersionError,
    DetectionParseError,
    LengthMismatchError,
    PayloadTooLargeError,
)
from .types import BoundingBox, Detection, U64_MAX

log = logging.getLogger(__name__)

MAGIC = b"\x43\x43"
VERSION = 1
FLAG_KEYFRAME = 0x01
_RESERVED_FLAGS = 0xFE

_HEADER = struct.Struct(">2sBBQQI")  # magic, version, flags, frame_id, ts, payload_len
HEADER_SIZE = _HEADER.size  # 24
MAX_PAYLOAD = 2**32 - 1
JPEG_SOI = b"\xff\xd8"


@dataclass(frozen=True)
class FramePacket:
    """Decoded client-to-server frame envelope."""

    frame_id: int
    capture_ts_us: int
    flags: int
    payload: bytes

    @property
    def keyframe(self) -> bool:
        return bool(self.flags & FLAG_KEYFRAME)


def encode_frame_packet(
    frame_id: int, capture_ts_us: int, keyframe: bool, payload: bytes
) -> bytes:
    """Serialize one frame message; deterministic for equal inputs."""
    if not 0 <= frame_id <= U64_MAX:
        raise ValueError(f"frame_id {frame_id!r} outside unsigned 64-bit range")
    if not 0 <= capture_ts_us <= U64_MAX:
        raise ValueError(f"capture_ts_us {capture_ts_us!r} outside unsigned 64-bit range")
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLargeError(f"payload of {len(payload)} bytes exceeds 32-bit length field")
    if len(payload) < 1 or not payload.startswith(JPEG_SOI):
        raise BadPayloadError("payload must be a JPEG stream starting with the SOI marker")
    flags = FLAG_KEYFRAME if keyframe else 0x00
    return _HEADER.pack(MAGIC, VERSION, flags, frame_id, capture_ts_us, len(payload)) + payload


def decode_frame_packet(data: bytes) -> FramePacket:
    """Parse and validate one frame message.

    Each malformation class raises its own error: BadMagicError,
    BadVersionError, LengthMismatchError, BadPayloadError. Reserved flag
    bits are ignored for forward compatibility.
    """
    if len(data) < HEADER_SIZE:
        raise LengthMismatchError(f"packet of {len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, flags, frame_id, ts, payload_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"unknown version {version}")
    if len(data) != HEADER_SIZE + payload_len:
        raise LengthMismatchError(
            f"declared payload of {payload_len} bytes but {len(data) - HEADER_SIZE} present"
        )
    payload = data[HEADER_SIZE:]
    if payload_len < 1 or not payload.startswith(JPEG_SOI):
        raise BadPayloadError("payload does not start with the JPEG SOI marker")
    return FramePacket(frame_id=frame_id, capture_ts_us=ts, flags=flags, payload=payload)


# --- detection text messages --------------------------------------------------
#
# DET <frame_id> <label> <confidence> <cx> <cy> <w> <h>
# ...
# EOF <frame_id> <detection_count>
#
# Reals carry 6 fractional digits; fields are single-space separated; every
# line is newline-terminated. Confidence precedes the coordinates.


def format_detections(frame_id: int, detections: Sequence[Detection]) -> str:
    """Render one frame's detections as the text message grammar."""
    if not 0 <= frame_id <= U64_MAX:
        raise ValueError(f"frame_id {frame_id!r} outside unsigned 64-bit range")
    lines = []
    for det in detections:
        if det.frame_id != frame_id:
            raise ValueError(f"detection for frame {det.frame_id} in message for frame {frame_id}")
        if any(ch.isspace() for ch in det.label):
            raise ValueError(f"label {det.label!r} contains whitespace")
        b = det.box
        lines.append(
            f"DET {frame_id} {det.label} {det.confidence:.6f} "
            f"{b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n"
        )
    lines.append(f"EOF {frame_id} {len(detections)}\n")
    return "".join(lines)


def _parse_uint(token: str, what: str, line_no: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise DetectionParseError(f"non-numeric {what} {token!r}", line_no) from None
    if value < 0 or value > U64_MAX:
        raise DetectionParseError(f"{what} {token!r} outside unsigned 64-bit range", line_no)
    return value


def _parse_real(token: str, what: str, line_no: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise DetectionParseError(f"non-numeric {what} {token!r}", line_no) from None


def _parse_det_line(tokens: list[str], line_no: int) -> Detection:
    if len(tokens) != 8:
        raise DetectionParseError(f"DET line has {len(tokens)} fields, expected 8", line_no)
    frame_id = _parse_uint(tokens[1], "frame_id", line_no)
    label = tokens[2]
    confidence = _parse_real(tokens[3], "confidence", line_no)
    reals = [_parse_real(tokens[4 + i], name, line_no) for i, name in enumerate(("cx", "cy", "w", "h"))]
    try:
        box = BoundingBox(*reals)
        return Detection(frame_id=frame_id, label=label, confidence=confidence, box=box)
    except Exception as exc:
        raise DetectionParseError(str(exc), line_no) from None


def parse_detections(text: str) -> tuple[int, list[Detection]]:
    """Parse one websocket detection message; inverse of format_detections."""
    detections: list[Detection] = []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    eof_seen = False
    frame_id = None
    for line_no, line in enumerate(lines, start=1):
        if eof_seen:
            raise DetectionParseError("content after EOF line", line_no)
        tokens = line.split(" ")
        if tokens[0] == "DET":
            det = _parse_det_line(tokens, line_no)
            if frame_id is None:
                frame_id = det.frame_id
            elif det.frame_id != frame_id:
                raise DetectionParseError(
                    f"DET frame_id {det.frame_id} differs from {frame_id}", line_no
                )
            detections.append(det)
        elif tokens[0] == "EOF":
            if len(tokens) != 3:
                raise DetectionParseError(f"EOF line has {len(tokens)} fields, expected 3", line_no)
            eof_id = _parse_uint(tokens[1], "frame_id", line_no)
            count = _parse_uint(tokens[2], "detection_count", line_no)
            if frame_id is not None and eof_id != frame_id:
                raise DetectionParseError(f"EOF frame_id {eof_id} differs from {frame_id}", line_no)
            if count != len(detections):
                raise DetectionParseError(
                    f"EOF count {count} but {len(detections)} DET lines", line_no
                )
            frame_id = eof_id
            eof_seen = True
        else:
            raise DetectionParseError(f"unknown line {line!r}", line_no)
    if not eof_seen:
        raise DetectionParseError("missing EOF line", len(lines) + 1)
    assert frame_id is not None
    return frame_id, detections


# --- detector subprocess stdout -----------------------------------------------
#
# Per analyzed frame the detector emits:
#   FRAME <frame_id>
#   DET ...     (zero or more, same grammar, same frame_id)
#   EOF <frame_id> <count>
# one line per write, flushed immediately. Unknown lines are skipped with a
# warning so detector debug chatter cannot break the stream.


def format_detector_block(frame_id: int, detections: Sequence[Detection]) -> str:
    return f"FRAME {frame_id}\n" + format_detections(frame_id, detections)


class DetectorStreamParser:
    """Incremental parser for the detector stdout grammar.

    feed_line() returns a completed (frame_id, detections) block or None.
    Grammar violations raise DetectionParseError after the parser has reset
    itself, so one bad frame never poisons the next; non-grammar chatter is
    skipped with a logged warning.
    """

    def __init__(self):
        self._frame_id: int | None = None
        self._detections: list[Detection] = []
        self._line_no = 0
        self.skipped_lines = 0

    def _reset(self):
        self._frame_id = None
        self._detections = []

    def _fail(self, message: str) -> DetectionParseError:
        self._reset()
        return DetectionParseError(message, self._line_no)

    def feed_line(self, line: str) -> tuple[int, list[Detection]] | None:
        try:
            return self._feed(line)
        except DetectionParseError:
            self._reset()
            raise

    def _feed(self, line: str) -> tuple[int, list[Detection]] | None:
        self._line_no += 1
        line = line.rstrip("\r\n")
        tokens = line.split(" ")
        kind = tokens[0]
        if kind == "FRAME":
            if len(tokens) != 2:
                raise self._fail(f"FRAME line has {len(tokens)} fields, expected 2")
            if self._frame_id is not None:
                log.warning("detector: FRAME %s opened before EOF of %s", tokens[1], self._frame_id)
                self._reset()
            self._frame_id = _parse_uint(tokens[1], "frame_id", self._line_no)
            return None
        if kind == "DET":
            if self._frame_id is None:
                raise self._fail("DET line outside a FRAME block")
            det = _parse_det_line(tokens, self._line_no)
            if det.frame_id != self._frame_id:
                raise self._fail(f"DET frame_id {det.frame_id} inside FRAME {self._frame_id}")
            self._detections.append(det)
            return None
        if kind == "EOF":
            if self._frame_id is None:
                raise self._fail("EOF line outside a FRAME block")
            if len(tokens) != 3:
                raise self._fail(f"EOF line has {len(tokens)} fields, expected 3")
            eof_id = _parse_uint(tokens[1], "frame_id", self._line_no)
            count = _parse_uint(tokens[2], "detection_count", self._line_no)
            if eof_id != self._frame_id:
                raise self._fail(f"EOF frame_id {eof_id} inside FRAME {self._frame_id}")
            if count != len(self._detections):
                raise self._fail(f"EOF count {count} but {len(self._detections)} DET lines")
            block = (self._frame_id, self._detections)
            self._reset()
            return block
        # tolerated chatter (e.g. "loading weights...")
        self.skipped_lines += 1
        log.warning("detector: skipping unrecognized line %r", line)
        return None


def parse_detector_stream(lines: Iterable[str]) -> Iterable[tuple[int, list[Detection]]]:
    """Parse a complete detector transcript, yielding blocks."""
    parser = DetectorStreamParser()
    for line in lines:
        block = parser.feed_line(line)
        if block is not None:
            yield block
