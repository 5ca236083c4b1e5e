"""Device-side pipeline: capture -> compress -> encode -> send.

Three concurrent tasks mirror the device's workload: a capture/compress
loop feeding a bounded drop-oldest queue, a network sender pushing packets
over the ingest websocket, and a receiver that parses detection messages,
publishes the latest set for the blackout stage, and forwards each set to
the action sinks. Shared state is limited to that latest-detections value
(replaced atomically) and the queue; capture never blocks on the network.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from PIL import Image
from websockets.asyncio.client import connect
from websockets.exceptions import ConnectionClosed

from .compression import compress_to_jpeg
from .errors import DetectionParseError, InvalidParameterError
from .protocol import encode_frame_packet, parse_detections
from .types import CompressionPolicy, Detection, Frame

log = logging.getLogger(__name__)

RETRY_DELAY_S = 1.0
DEFAULT_QUEUE_CAPACITY = 2

ActionSink = Callable[[int, Sequence[Detection]], None]


def now_us() -> int:
    return time.time_ns() // 1000


# --- capture sources ----------------------------------------------------------


class CaptureSource:
    """Produces one RGB pixel array per call; pacing is the sender's job."""

    def next_pixels(self) -> np.ndarray:
        raise NotImplementedError


class DirectoryReplaySource(CaptureSource):
    """Replays image files in lexicographic order, looping forever."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.files = sorted(p for p in self.path.iterdir() if p.is_file())
        if not self.files:
            raise InvalidParameterError(f"no files to replay in {self.path}")
        self._cycle = itertools.cycle(self.files)

    def next_pixels(self) -> np.ndarray:
        with Image.open(next(self._cycle)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)


class DeviceSource(CaptureSource):
    """Platform camera via OpenCV; unavailable in headless environments."""

    def __init__(self, index: int):
        try:
            import cv2
        except ImportError as exc:
            raise InvalidParameterError("device capture requires opencv-python") from exc
        self._cap = cv2.VideoCapture(index)
        if not self._cap.isOpened():
            raise InvalidParameterError(f"cannot open capture device {index}")

    def next_pixels(self) -> np.ndarray:
        ok, bgr = self._cap.read()
        if not ok:
            raise RuntimeError("camera read failed")
        return np.ascontiguousarray(bgr[:, :, ::-1])


def make_token_pixels(width: int, height: int, square_px: int = 60) -> np.ndarray:
    """White square centered on black: trivially visible to the mock detector."""
    px = np.zeros((height, width, 3), dtype=np.uint8)
    y0 = (height - square_px) // 2
    x0 = (width - square_px) // 2
    px[y0 : y0 + square_px, x0 : x0 + square_px] = 255
    return px


class BlankThenTokenSource(CaptureSource):
    """Black frames, then a fixed token image forever.

    Reproduces the detection-latency methodology: the feed swaps from an
    empty scene to a known picture, and the interesting number is how long
    until that picture is first detected. The first token frame is capture
    number ``blank_frames`` (0-based).
    """

    def __init__(self, blank_frames: int, token_pixels: np.ndarray):
        if blank_frames < 1:
            raise InvalidParameterError(f"blank_frames must be >= 1, got {blank_frames}")
        self.blank_frames = blank_frames
        self.token_pixels = np.ascontiguousarray(token_pixels, dtype=np.uint8)
        self._blank = np.zeros_like(self.token_pixels)
        self._count = 0

    def next_pixels(self) -> np.ndarray:
        self._count += 1
        if self._count <= self.blank_frames:
            return self._blank
        return self.token_pixels


class MovingSquareSource(CaptureSource):
    """White square bouncing horizontally over a static mid-gray texture.

    The textured background gives JPEG something to compress away when the
    blackout stage is active; velocity 0 produces a static scene.
    """

    def __init__(
        self,
        width: int = 480,
        height: int = 270,
        square_px: int = 40,
        velocity_px_per_frame: int = 4,
        seed: int = 7,
    ):
        if square_px < 1 or square_px > min(width, height):
            raise InvalidParameterError("square_px must fit inside the frame")
        rng = np.random.default_rng(seed)
        self._background = rng.integers(64, 128, size=(height, width, 3), dtype=np.uint8)
        self.width = width
        self.height = height
        self.square_px = square_px
        self.velocity = velocity_px_per_frame
        self._x = 0
        self._dir = 1
        self._y = (height - square_px) // 2

    def next_pixels(self) -> np.ndarray:
        px = self._background.copy()
        px[self._y : self._y + self.square_px, self._x : self._x + self.square_px] = 255
        nxt = self._x + self._dir * self.velocity
        if nxt < 0 or nxt + self.square_px > self.width:
            self._dir = -self._dir
            nxt = self._x + self._dir * self.velocity
        self._x = max(0, min(self.width - self.square_px, nxt))
        return px


# --- action sinks -------------------------------------------------------------


def compute_steering(detections: Sequence[Detection], target_label: str) -> str:
    """left/center/right by which third of the image holds the target;
    "none" when the target is absent. The most confident match wins."""
    matches = [d for d in detections if d.label == target_label]
    if not matches:
        return "none"
    target = max(matches, key=lambda d: d.confidence)
    if target.box.cx < 1 / 3:
        return "left"
    if target.box.cx < 2 / 3:
        return "center"
    return "right"


def log_sink(frame_id: int, detections: Sequence[Detection]) -> None:
    log.info(
        "frame %d: %s",
        frame_id,
        ", ".join(f"{d.label}({d.confidence:.2f})" for d in detections) or "no detections",
    )


class JsonlSink:
    """Appends one JSON object per result to a file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def __call__(self, frame_id: int, detections: Sequence[Detection]) -> None:
        record = {
            "frame_id": frame_id,
            "detections": [
                {
                    "label": d.label,
                    "confidence": d.confidence,
                    "cx": d.box.cx,
                    "cy": d.box.cy,
                    "w": d.box.w,
                    "h": d.box.h,
                }
                for d in detections
            ],
        }
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")


class FollowSink:
    """Prints a steering direction toward the target label."""

    def __init__(self, target_label: str, emit: Callable[[str], None] = print):
        self.target_label = target_label
        self.emit = emit

    def __call__(self, frame_id: int, detections: Sequence[Detection]) -> None:
        self.emit(compute_steering(detections, self.target_label))


# --- client pipeline ----------------------------------------------------------


@dataclass
class ClientStats:
    frames_captured: int = 0
    packets_sent: int = 0
    queue_drops: int = 0
    send_drops: int = 0
    reconnects: int = 0
    messages_received: int = 0
    parse_errors: int = 0
    sink_errors: int = 0


class FarsightClient:
    """Wires a capture source to a server over the two websockets."""

    def __init__(
        self,
        source: CaptureSource,
        policy: CompressionPolicy,
        ingest_url: str,
        results_url: Optional[str],
        sinks: Sequence[ActionSink] = (),
        fps: float = 15.0,
        queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
        max_frames: Optional[int] = None,
        initial_frame_id: int = 0,
    ):
        if fps <= 0:
            raise InvalidParameterError(f"fps must be > 0, got {fps}")
        if queue_capacity < 1:
            raise InvalidParameterError(f"queue_capacity must be >= 1, got {queue_capacity}")
        self.source = source
        self.policy = policy
        self.ingest_url = ingest_url
        self.results_url = results_url
        self.sinks = list(sinks)
        self.fps = fps
        self.max_frames = max_frames
        self.initial_frame_id = initial_frame_id
        self.stats = ClientStats()
        self.latest_detections: tuple[int, tuple[Detection, ...]] = (-1, ())
        self._queue: asyncio.Queue[bytes] = asyncio.Queue(queue_capacity)
        self._stopped = asyncio.Event()
        # observation hooks for benchmarks and tests
        self.on_capture: Optional[Callable[[Frame], None]] = None
        self.on_packet: Optional[Callable[[int, int, bool, int], None]] = None
        self.on_result: Optional[Callable[[int, list[Detection], int], None]] = None

    def stop(self) -> None:
        self._stopped.set()

    # -- capture + compress ----------------------------------------------

    def _enqueue_drop_oldest(self, packet: bytes) -> None:
        while True:
            try:
                self._queue.put_nowait(packet)
                return
            except asyncio.QueueFull:
                try:
                    self._queue.get_nowait()
                    self._queue.task_done()
                    self.stats.queue_drops += 1
                except asyncio.QueueEmpty:
                    pass

    async def _capture_loop(self) -> None:
        loop = asyncio.get_running_loop()
        interval = 1.0 / self.fps
        next_tick = loop.time()
        for frame_id in itertools.count(self.initial_frame_id):
            if self._stopped.is_set():
                return
            if self.max_frames is not None and self.stats.frames_captured >= self.max_frames:
                return
            pixels = self.source.next_pixels()
            frame = Frame(frame_id, now_us(), pixels)
            self.stats.frames_captured += 1
            if self.on_capture is not None:
                self.on_capture(frame)
            jpeg, is_key = compress_to_jpeg(frame, self.policy, self.latest_detections[1])
            packet = encode_frame_packet(frame.frame_id, frame.capture_ts_us, is_key, jpeg)
            self._enqueue_drop_oldest(packet)
            if self.on_packet is not None:
                self.on_packet(frame.frame_id, frame.capture_ts_us, is_key, len(jpeg))
            next_tick += interval
            delay = next_tick - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_tick = loop.time()  # fell behind; do not burst

    # -- network sender ----------------------------------------------------

    async def _sender_loop(self) -> None:
        while not self._stopped.is_set():
            try:
                async with connect(self.ingest_url, max_size=None) as ws:
                    while True:
                        packet = await self._queue.get()
                        try:
                            await ws.send(packet)
                        except Exception:
                            self.stats.send_drops += 1
                            raise
                        finally:
                            self._queue.task_done()
                        self.stats.packets_sent += 1
            except asyncio.CancelledError:
                raise
            except (OSError, ConnectionClosed) as exc:
                self.stats.reconnects += 1
                log.warning("ingest connection lost (%s); retrying in %.0fs", exc, RETRY_DELAY_S)
                await asyncio.sleep(RETRY_DELAY_S)

    # -- receiver ----------------------------------------------------------

    def _dispatch(self, frame_id: int, detections: list[Detection]) -> None:
        self.latest_detections = (frame_id, tuple(detections))
        self.stats.messages_received += 1
        if self.on_result is not None:
            self.on_result(frame_id, detections, now_us())
        for sink in self.sinks:
            try:
                sink(frame_id, detections)
            except Exception:
                self.stats.sink_errors += 1
                log.exception("action sink failed")

    async def _receiver_loop(self) -> None:
        if self.results_url is None:
            return
        while not self._stopped.is_set():
            try:
                async with connect(self.results_url) as ws:
                    async for message in ws:
                        if isinstance(message, bytes):
                            message = message.decode("utf-8", errors="replace")
                        try:
                            frame_id, detections = parse_detections(message)
                        except DetectionParseError as exc:
                            self.stats.parse_errors += 1
                            log.warning("malformed detection message: %s", exc)
                            continue
                        self._dispatch(frame_id, detections)
            except asyncio.CancelledError:
                raise
            except (OSError, ConnectionClosed) as exc:
                self.stats.reconnects += 1
                log.warning("results connection lost (%s); retrying in %.0fs", exc, RETRY_DELAY_S)
                await asyncio.sleep(RETRY_DELAY_S)

    # -- orchestration ------------------------------------------------------

    async def run(self, drain_timeout: float = 10.0) -> ClientStats:
        """Run until the source is exhausted (max_frames) or stop() is called."""
        sender = asyncio.create_task(self._sender_loop(), name="client-sender")
        receiver = asyncio.create_task(self._receiver_loop(), name="client-receiver")
        try:
            await self._capture_loop()
            try:
                await asyncio.wait_for(self._queue.join(), timeout=drain_timeout)
            except asyncio.TimeoutError:
                log.warning("send queue did not drain within %.1fs", drain_timeout)
        finally:
            for task in (sender, receiver):
                task.cancel()
            await asyncio.gather(sender, receiver, return_exceptions=True)
        return self.stats


# --- CLI spec parsing ----------------------------------------------------------


def _parse_kv(args: list[str], spec: str) -> dict[str, str]:
    out = {}
    for item in args:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidParameterError(f"bad parameter {item!r} in source spec {spec!r}")
        out[key] = value
    return out


def parse_source(spec: str) -> CaptureSource:
    """dir:<path> | synthetic:<scenario>[,k=v...] | device:<n>

    Scenarios: ``moving_square`` (width, height, square, velocity, seed) and
    ``blank_then_token`` (blank, width, height, square, token=<image path>).
    """
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise InvalidParameterError(f"source spec {spec!r} must look like kind:value")
    if kind == "dir":
        return DirectoryReplaySource(rest)
    if kind == "device":
        return DeviceSource(int(rest))
    if kind == "synthetic":
        name, *args = rest.split(",")
        kv = _parse_kv(args, spec)
        width = int(kv.get("width", 480))
        height = int(kv.get("height", 270))
        if name == "moving_square":
            return MovingSquareSource(
                width=width,
                height=height,
                square_px=int(kv.get("square", 40)),
                velocity_px_per_frame=int(kv.get("velocity", 4)),
                seed=int(kv.get("seed", 7)),
            )
        if name == "blank_then_token":
            if "token" in kv:
                with Image.open(kv["token"]) as img:
                    token = np.asarray(img.convert("RGB"), dtype=np.uint8)
                if token.shape != (height, width, 3):
                    raise InvalidParameterError(
                        f"token image is {token.shape[1]}x{token.shape[0]}, expected {width}x{height}"
                    )
            else:
                token = make_token_pixels(width, height, int(kv.get("square", 60)))
            return BlankThenTokenSource(int(kv.get("blank", 30)), token)
        raise InvalidParameterError(f"unknown synthetic scenario {name!r}")
    raise InvalidParameterError(f"unknown source kind {kind!r}")


def parse_sink(spec: str) -> ActionSink:
    """log | jsonl:<path> | follow:<label>"""
    kind, _, rest = spec.partition(":")
    if kind == "log":
        return log_sink
    if kind == "jsonl":
        return JsonlSink(rest)
    if kind == "follow":
        return FollowSink(rest)
    raise InvalidParameterError(f"unknown sink {spec!r}")
