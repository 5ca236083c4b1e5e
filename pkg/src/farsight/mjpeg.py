"""Multipart/x-mixed-replace framing for the rebroadcast stream.

Each part carries one JPEG plus the frame identity headers:

    --<boundary>\r\n
    Content-Type: image/jpeg\r\n
    Content-Length: <n>\r\n
    X-Frame-Id: <id>\r\n
    X-Capture-Ts: <us>\r\n
    \r\n
    <jpeg>\r\n

Consumers must be able to decode every part independently (baseline JPEG
only upstream).
"""

from __future__ import annotations

import http.client
import logging
import urllib.parse
from typing import Iterator, Optional

log = logging.getLogger(__name__)

DEFAULT_BOUNDARY = "frame"


def content_type(boundary: str = DEFAULT_BOUNDARY) -> str:
    return f"multipart/x-mixed-replace; boundary={boundary}"


def format_part(
    jpeg: bytes,
    frame_id: int,
    capture_ts_us: int,
    boundary: str = DEFAULT_BOUNDARY,
) -> bytes:
    head = (
        f"--{boundary}\r\n"
        "Content-Type: image/jpeg\r\n"
        f"Content-Length: {len(jpeg)}\r\n"
        f"X-Frame-Id: {frame_id}\r\n"
        f"X-Capture-Ts: {capture_ts_us}\r\n"
        "\r\n"
    ).encode("ascii")
    return head + jpeg + b"\r\n"


class MjpegPartReader:
    """Incremental parser for a multipart/x-mixed-replace byte stream.

    feed() accepts arbitrary chunks and returns completed parts as
    (headers, jpeg) tuples. A malformed part (bad headers, wrong
    Content-Length) abandons the current part, counts the loss, and
    resynchronizes at the next boundary marker.
    """

    def __init__(self, boundary: str = DEFAULT_BOUNDARY):
        self._delim = f"--{boundary}".encode("ascii")
        self._buf = bytearray()
        self._headers: Optional[dict[str, str]] = None
        self._body_len = 0
        self.lost_parts = 0

    def feed(self, data: bytes) -> list[tuple[dict[str, str], bytes]]:
        self._buf.extend(data)
        parts = []
        while True:
            part = self._try_extract()
            if part is None:
                return parts
            parts.append(part)

    def _resync(self, search_from: int):
        """Drop the broken part and hunt for the next boundary marker."""
        self.lost_parts += 1
        self._headers = None
        nxt = self._buf.find(self._delim, search_from)
        del self._buf[: nxt if nxt >= 0 else len(self._buf)]

    def _try_extract(self) -> Optional[tuple[dict[str, str], bytes]]:
        if self._headers is None:
            start = self._buf.find(self._delim)
            if start < 0:
                # keep a tail in case the marker straddles two chunks
                if len(self._buf) > len(self._delim):
                    del self._buf[: len(self._buf) - len(self._delim)]
                return None
            head_end = self._buf.find(b"\r\n\r\n", start)
            if head_end < 0:
                del self._buf[:start]
                return None
            block = bytes(self._buf[start + len(self._delim) : head_end])
            headers: dict[str, str] = {}
            ok = True
            for line in block.split(b"\r\n"):
                if not line:
                    continue
                name, sep, value = line.partition(b":")
                if not sep:
                    ok = False
                    break
                try:
                    headers[name.decode("ascii").strip().lower()] = value.decode("ascii").strip()
                except UnicodeDecodeError:
                    ok = False
                    break
            length = headers.get("content-length")
            if not ok or length is None or not length.isdigit():
                log.warning("mjpeg: malformed part headers, resynchronizing")
                self._resync(start + 1)
                return self._try_extract() if self._buf else None
            del self._buf[: head_end + 4]
            self._headers = headers
            self._body_len = int(length)
        # body + trailing CRLF
        if len(self._buf) < self._body_len + 2:
            return None
        body = bytes(self._buf[: self._body_len])
        trailer = bytes(self._buf[self._body_len : self._body_len + 2])
        if trailer != b"\r\n":
            log.warning("mjpeg: part body did not end at Content-Length, resynchronizing")
            self._resync(0)
            return None
        del self._buf[: self._body_len + 2]
        headers = self._headers
        self._headers = None
        return headers, body


def frame_id_of(headers: dict[str, str]) -> Optional[int]:
    raw = headers.get("x-frame-id")
    if raw is None or not raw.isdigit():
        return None
    return int(raw)


def capture_ts_of(headers: dict[str, str]) -> Optional[int]:
    raw = headers.get("x-capture-ts")
    if raw is None or not raw.isdigit():
        return None
    return int(raw)


def iter_http_parts(
    url: str, timeout: float = 10.0, chunk_size: int = 65536
) -> Iterator[tuple[dict[str, str], bytes]]:
    """Consume an MJPEG HTTP endpoint, yielding (headers, jpeg) parts.

    Blocking; meant for subprocess consumers like the mock detector. The
    boundary is taken from the response Content-Type.
    """
    parsed = urllib.parse.urlsplit(url)
    if parsed.scheme != "http":
        raise ValueError(f"only http:// MJPEG URLs are supported, got {url!r}")
    conn = http.client.HTTPConnection(parsed.hostname, parsed.port or 80, timeout=timeout)
    try:
        conn.request("GET", parsed.path or "/", headers={"Accept": "multipart/x-mixed-replace"})
        resp = conn.getresponse()
        if resp.status != 200:
            raise ConnectionError(f"MJPEG endpoint returned HTTP {resp.status}")
        ctype = resp.getheader("Content-Type", "")
        boundary = DEFAULT_BOUNDARY
        for token in ctype.split(";"):
            key, sep, value = token.strip().partition("=")
            if sep and key.lower() == "boundary":
                boundary = value.strip('"')
        reader = MjpegPartReader(boundary)
        while True:
            # read1 returns as soon as bytes arrive; read(n) would sit on
            # the socket until a full chunk accumulated, adding frames of lag
            chunk = resp.read1(chunk_size)
            if not chunk:
                return
            yield from reader.feed(chunk)
    finally:
        conn.close()
