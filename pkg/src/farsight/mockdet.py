"""Standalone mock detector subprocess.

Consumes the server's MJPEG stream, finds bright regions, and speaks the
detector stdout grammar. Stdout carries grammar lines only; diagnostics go
to stderr. Designed to be launched by the detector supervisor, which
appends the MJPEG URL to the command line.
"""

from __future__ import annotations

import sys
import time

from . import mjpeg
from .compression import jpeg_decode
from .detect import mock_detect
from .errors import FarsightError
from .protocol import format_detector_block


def run(
    mjpeg_url: str,
    luma_threshold: int = 200,
    min_area_px: int = 50,
    max_frames: int | None = None,
    out=None,
    reconnect_delay_s: float = 0.5,
) -> None:
    out = out or sys.stdout
    emitted = 0
    while True:
        try:
            for headers, jpeg_bytes in mjpeg.iter_http_parts(mjpeg_url):
                frame_id = mjpeg.frame_id_of(headers)
                frame_id = 0 if frame_id is None else frame_id
                try:
                    frame = jpeg_decode(jpeg_bytes, frame_id=frame_id)
                    detections = mock_detect(frame, luma_threshold, min_area_px)
                except FarsightError as exc:
                    print(f"frame {frame_id}: {exc}", file=sys.stderr)
                    detections = []
                for line in format_detector_block(frame_id, detections).splitlines():
                    out.write(line + "\n")
                    out.flush()
                emitted += 1
                if max_frames is not None and emitted >= max_frames:
                    return
        except (ConnectionError, OSError, TimeoutError) as exc:
            print(f"stream lost ({exc}); reconnecting", file=sys.stderr)
            time.sleep(reconnect_delay_s)
