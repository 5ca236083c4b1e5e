"""Cloud-side service.

Four externally visible endpoints, all serviced by one event loop:

* ingest (websocket): binary frame packets from the device, decoded into a
  single latest-wins slot. Malformed packets are counted and dropped.
* mjpeg (HTTP): GET /stream rebroadcasts the slot as multipart/x-mixed-replace
  for the detector subprocess; GET /healthz reports counters. Loopback by
  default: the stream is the detector's private feed, not a public one.
* results (websocket): fans each detector result out to every connected
  client.
* echo (websocket) and raw-echo (TCP): byte-identical echoes for the
  round-trip benchmarks.

A detector supervisor spawns the configured subprocess with the MJPEG URL
appended to its command line, parses its stdout, and restarts it with
exponential backoff when it dies. Dropping stale frames everywhere keeps
latency bounded when the detector cannot keep up with the device.
"""

from __future__ import annotations

import asyncio
import logging
import shlex
from dataclasses import dataclass
from typing import Optional

from websockets.asyncio.server import serve

from . import mjpeg, protocol
from .errors import DetectionParseError, PacketError
from .protocol import DetectorStreamParser, format_detections

log = logging.getLogger(__name__)

MAX_WS_MESSAGE = 2**24

BACKOFF_BASE_S = 0.5
BACKOFF_CAP_S = 30.0


@dataclass(frozen=True)
class SlotEntry:
    frame_id: int
    capture_ts_us: int
    keyframe: bool
    jpeg: bytes


class Metrics:
    """Plain counters surfaced through /healthz."""

    def __init__(self):
        self.frames_ingested = 0
        self.frames_dropped = 0
        self.decode_errors = 0
        self.detector_restarts = 0

    def render(self, detector_running: bool) -> str:
        return (
            f"frames_ingested {self.frames_ingested}\n"
            f"frames_dropped {self.frames_dropped}\n"
            f"decode_errors {self.decode_errors}\n"
            f"detector_restarts {self.detector_restarts}\n"
            f"detector_running {int(detector_running)}\n"
        )


class FrameSlot:
    """Single-entry latest-wins buffer with change notification.

    Arrival order wins over frame_id order: wall-clock recency is what
    detection freshness needs. Readers block until the sequence passes the
    last value they saw, then receive the newest complete entry; writes
    never wait for readers.
    """

    def __init__(self):
        self._entry: Optional[SlotEntry] = None
        self._seq = 0
        self._delivered = False
        self._cond = asyncio.Condition()

    @property
    def sequence(self) -> int:
        return self._seq

    @property
    def latest(self) -> Optional[SlotEntry]:
        return self._entry

    async def put(self, entry: SlotEntry) -> bool:
        """Replace the slot content; returns False when the previous entry
        was overwritten before any consumer saw it."""
        async with self._cond:
            previous_seen = self._delivered or self._entry is None
            self._entry = entry
            self._seq += 1
            self._delivered = False
            self._cond.notify_all()
        return previous_seen

    async def wait_newer(self, last_seq: int) -> tuple[int, SlotEntry]:
        async with self._cond:
            await self._cond.wait_for(lambda: self._seq > last_seq and self._entry is not None)
            self._delivered = True
            return self._seq, self._entry


class DetectionHub:
    """Fan-out of formatted detection messages to results subscribers."""

    def __init__(self, queue_limit: int = 1024):
        self._queues: set[asyncio.Queue] = set()
        self._queue_limit = queue_limit
        self.last_frame_id: Optional[int] = None

    def subscribe(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue(self._queue_limit)
        self._queues.add(q)
        return q

    def unsubscribe(self, q: asyncio.Queue) -> None:
        self._queues.discard(q)

    def publish(self, frame_id: int, message: str) -> None:
        self.last_frame_id = frame_id
        for q in self._queues:
            if q.full():  # slow client: shed its oldest result
                try:
                    q.get_nowait()
                except asyncio.QueueEmpty:
                    pass
            q.put_nowait(message)


class DetectorSupervisor:
    """Runs the detector subprocess and republishes its parsed stdout.

    The MJPEG URL is appended to the configured command line. Crashes are
    restarted with exponential backoff (base 0.5 s, doubling to a 30 s
    cap); the backoff resets once a process proves healthy by emitting a
    parsed block. Per-frame parse errors are logged and skipped without
    poisoning later frames.
    """

    def __init__(
        self,
        command: str,
        mjpeg_url: str,
        hub: DetectionHub,
        metrics: Metrics,
        stamp_with_slot: Optional[FrameSlot] = None,
    ):
        if not command.strip():
            raise ValueError("detector command must be non-empty")
        self.command = command
        self.mjpeg_url = mjpeg_url
        self.hub = hub
        self.metrics = metrics
        self.stamp_with_slot = stamp_with_slot
        self.parse_errors = 0
        self.blocks_parsed = 0
        self._proc: Optional[asyncio.subprocess.Process] = None
        self._task: Optional[asyncio.Task] = None
        self._stopping = False

    @property
    def running(self) -> bool:
        return self._proc is not None and self._proc.returncode is None

    @property
    def pid(self) -> Optional[int]:
        return self._proc.pid if self.running else None

    def start(self) -> None:
        self._task = asyncio.create_task(self._run(), name="detector-supervisor")

    async def stop(self) -> None:
        self._stopping = True
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
        await self._terminate()

    async def kill_current(self) -> None:
        """Kill the running detector (used to exercise crash recovery)."""
        if self.running:
            self._proc.kill()

    async def _terminate(self) -> None:
        if self.running:
            self._proc.kill()
            try:
                await asyncio.wait_for(self._proc.wait(), timeout=5)
            except asyncio.TimeoutError:
                pass

    async def _run(self) -> None:
        backoff = BACKOFF_BASE_S
        first = True
        try:
            while True:
                if not first:
                    self.metrics.detector_restarts += 1
                argv = shlex.split(self.command) + [self.mjpeg_url]
                healthy = False
                try:
                    self._proc = await asyncio.create_subprocess_exec(
                        *argv,
                        stdout=asyncio.subprocess.PIPE,
                        stderr=asyncio.subprocess.PIPE,
                    )
                except OSError as exc:
                    log.error("detector spawn failed: %s", exc)
                else:
                    log.info("detector started (pid %d): %s", self._proc.pid, argv)
                    stderr_task = asyncio.create_task(self._drain_stderr(self._proc))
                    healthy = await self._consume_stdout(self._proc)
                    await self._proc.wait()
                    stderr_task.cancel()
                    log.warning("detector exited with code %s", self._proc.returncode)
                first = False
                if healthy:
                    backoff = BACKOFF_BASE_S
                await asyncio.sleep(backoff)
                backoff = min(backoff * 2, BACKOFF_CAP_S)
        finally:
            await self._terminate()

    async def _consume_stdout(self, proc: asyncio.subprocess.Process) -> bool:
        parser = DetectorStreamParser()
        healthy = False
        while True:
            line = await proc.stdout.readline()
            if not line:
                return healthy
            try:
                block = parser.feed_line(line.decode("utf-8", errors="replace"))
            except DetectionParseError as exc:
                self.parse_errors += 1
                log.warning("detector output: %s", exc)
                continue
            if block is None:
                continue
            frame_id, detections = block
            if self.stamp_with_slot is not None:
                # detector cannot echo X-Frame-Id: approximate with the
                # newest ingested frame (documented accuracy caveat)
                entry = self.stamp_with_slot.latest
                if entry is not None:
                    frame_id = entry.frame_id
                    detections = [
                        protocol.Detection(frame_id, d.label, d.confidence, d.box)
                        for d in detections
                    ]
            healthy = True
            self.blocks_parsed += 1
            self.hub.publish(frame_id, format_detections(frame_id, detections))

    async def _drain_stderr(self, proc: asyncio.subprocess.Process) -> None:
        while True:
            line = await proc.stderr.readline()
            if not line:
                return
            log.debug("detector stderr: %s", line.decode("utf-8", errors="replace").rstrip())


@dataclass
class ServerConfig:
    ingest_host: str = "0.0.0.0"
    ingest_port: int = 8760
    results_host: str = "0.0.0.0"
    results_port: int = 8761
    mjpeg_host: str = "127.0.0.1"
    mjpeg_port: int = 8762
    echo_host: str = "0.0.0.0"
    echo_port: int = 8763
    raw_echo_host: Optional[str] = None
    raw_echo_port: int = 8764
    boundary: str = mjpeg.DEFAULT_BOUNDARY
    detector_cmd: Optional[str] = None
    detector_stamp_slot_id: bool = False


class FarsightServer:
    """Owns the slot, the hub, all endpoints, and the supervisor."""

    def __init__(self, config: ServerConfig):
        self.config = config
        self.slot = FrameSlot()
        self.hub = DetectionHub()
        self.metrics = Metrics()
        self.supervisor: Optional[DetectorSupervisor] = None
        self._ws_servers = []
        self._tcp_servers = []
        self._http_tasks: set[asyncio.Task] = set()
        self.ingest_port = config.ingest_port
        self.results_port = config.results_port
        self.mjpeg_port = config.mjpeg_port
        self.echo_port = config.echo_port
        self.raw_echo_port = config.raw_echo_port

    # -- endpoints -------------------------------------------------------

    async def _handle_ingest(self, ws) -> None:
        async for message in ws:
            if isinstance(message, str):
                self.metrics.decode_errors += 1
                continue
            try:
                packet = protocol.decode_frame_packet(message)
            except PacketError as exc:
                self.metrics.decode_errors += 1
                log.debug("dropping malformed packet: %s", exc)
                continue
            self.metrics.frames_ingested += 1
            seen = await self.slot.put(
                SlotEntry(packet.frame_id, packet.capture_ts_us, packet.keyframe, packet.payload)
            )
            if not seen:
                self.metrics.frames_dropped += 1

    async def _handle_results(self, ws) -> None:
        queue = self.hub.subscribe()

        async def forward():
            while True:
                message = await queue.get()
                await ws.send(message)

        task = asyncio.create_task(forward())
        try:
            # drain (and ignore) client traffic; returns when the client
            # disconnects, which is the only signal a quiet client gives us
            async for _ in ws:
                pass
        except Exception:
            pass
        finally:
            task.cancel()
            try:
                await task
            except (asyncio.CancelledError, Exception):
                pass
            self.hub.unsubscribe(queue)

    async def _handle_echo(self, ws) -> None:
        async for message in ws:
            await ws.send(message)

    async def _handle_raw_echo(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        try:
            while True:
                chunk = await reader.read(65536)
                if not chunk:
                    break
                writer.write(chunk)
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    async def _handle_http(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        task = asyncio.current_task()
        self._http_tasks.add(task)
        try:
            request_line = await reader.readline()
            while True:
                line = await reader.readline()
                if line in (b"\r\n", b"\n", b""):
                    break
            parts = request_line.decode("latin-1").split()
            path = parts[1] if len(parts) >= 2 else "/"
            if path.startswith("/stream"):
                await self._serve_stream(writer)
            elif path.startswith("/healthz"):
                body = self.metrics.render(
                    self.supervisor.running if self.supervisor else False
                ).encode()
                writer.write(
                    b"HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\n"
                    + f"Content-Length: {len(body)}\r\n".encode()
                    + b"Connection: close\r\n\r\n"
                    + body
                )
                await writer.drain()
            else:
                writer.write(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self._http_tasks.discard(task)
            writer.close()

    async def _serve_stream(self, writer: asyncio.StreamWriter) -> None:
        """One MJPEG consumer: always the newest frame, at its own pace.

        A part goes out only when the slot sequence advances past what this
        consumer already saw, so a slow reader skips frames instead of
        queueing them, and ids it observes are strictly increasing.
        """
        boundary = self.config.boundary
        writer.write(
            b"HTTP/1.1 200 OK\r\n"
            + f"Content-Type: {mjpeg.content_type(boundary)}\r\n".encode()
            + b"Cache-Control: no-store\r\nConnection: close\r\n\r\n"
        )
        await writer.drain()
        last_seq = 0
        while True:
            last_seq, entry = await self.slot.wait_newer(last_seq)
            writer.write(
                mjpeg.format_part(entry.jpeg, entry.frame_id, entry.capture_ts_us, boundary)
            )
            await writer.drain()

    # -- lifecycle -------------------------------------------------------

    async def start(self) -> None:
        cfg = self.config
        ingest = await serve(
            self._handle_ingest, cfg.ingest_host, cfg.ingest_port, max_size=MAX_WS_MESSAGE
        )
        results = await serve(self._handle_results, cfg.results_host, cfg.results_port)
        echo = await serve(self._handle_echo, cfg.echo_host, cfg.echo_port, max_size=MAX_WS_MESSAGE)
        self._ws_servers = [ingest, results, echo]
        self.ingest_port = ingest.sockets[0].getsockname()[1]
        self.results_port = results.sockets[0].getsockname()[1]
        self.echo_port = echo.sockets[0].getsockname()[1]

        http_server = await asyncio.start_server(self._handle_http, cfg.mjpeg_host, cfg.mjpeg_port)
        self._tcp_servers = [http_server]
        self.mjpeg_port = http_server.sockets[0].getsockname()[1]

        if cfg.raw_echo_host is not None:
            raw = await asyncio.start_server(self._handle_raw_echo, cfg.raw_echo_host, cfg.raw_echo_port)
            self._tcp_servers.append(raw)
            self.raw_echo_port = raw.sockets[0].getsockname()[1]

        if cfg.detector_cmd:
            self.supervisor = DetectorSupervisor(
                cfg.detector_cmd,
                self.mjpeg_url,
                self.hub,
                self.metrics,
                stamp_with_slot=self.slot if cfg.detector_stamp_slot_id else None,
            )
            self.supervisor.start()
        log.info(
            "server up: ingest :%d results :%d mjpeg :%d echo :%d",
            self.ingest_port,
            self.results_port,
            self.mjpeg_port,
            self.echo_port,
        )

    @property
    def mjpeg_url(self) -> str:
        host = self.config.mjpeg_host
        if host in ("0.0.0.0", "::"):
            host = "127.0.0.1"
        return f"http://{host}:{self.mjpeg_port}/stream"

    @property
    def healthz_url(self) -> str:
        return self.mjpeg_url.replace("/stream", "/healthz")

    async def stop(self) -> None:
        if self.supervisor is not None:
            await self.supervisor.stop()
        for server in self._ws_servers:
            server.close()
        for server in self._tcp_servers:
            server.close()
        for task in list(self._http_tasks):
            task.cancel()
        if self._http_tasks:
            await asyncio.gather(*self._http_tasks, return_exceptions=True)
        for server in self._ws_servers:
            await server.wait_closed()
        for server in self._tcp_servers:
            await server.wait_closed()
        self._ws_servers = []
        self._tcp_servers = []
        self._http_tasks = set()

    async def serve_forever(self) -> None:
        await self.start()
        try:
            await asyncio.Event().wait()
        finally:
            await self.stop()


def parse_hostport(text: str, default_host: str = "0.0.0.0") -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return default_host, int(text)
    return host or default_host, int(port)
