"""Measurement harness: round-trip latency, capture-to-detection latency,
and per-policy compressed frame sizes.

Round-trip runs are strictly sequential ping-pong, which isolates latency
from throughput. Absolute numbers are machine-specific; the interesting
outputs are orderings (larger payloads cost more, websocket framing costs
little over raw TCP) and the compression ratios over a fixed corpus.
"""

from __future__ import annotations

import asyncio
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from websockets.asyncio.client import connect

from . import _kernels, compression
from .client import BlankThenTokenSource, FarsightClient, make_token_pixels
from .errors import BenchError, IntegrityError, InvalidParameterError
from .server import FarsightServer, ServerConfig
from .types import Blackout, Blur, BoundingBox, CompressionPolicy, Detection, Downscale, Frame, RttStats

DEFAULT_ROUNDS = 2000
ROUND_TIMEOUT_S = 5.0
MAX_TIMEOUT_FRACTION = 0.01


def _check_payload(payload_bytes: int, rounds: int) -> None:
    if payload_bytes < 1:
        raise InvalidParameterError(
            "payload must be at least 1 byte; empty echoes are ambiguous across transports"
        )
    if rounds < 1:
        raise InvalidParameterError(f"rounds must be >= 1, got {rounds}")


async def _run_rounds(payload_bytes: int, rounds: int, send_recv, timeout_s: float) -> RttStats:
    rng = np.random.default_rng(payload_bytes * 1000003 + rounds)
    samples: list[float] = []
    timeouts = 0
    for _ in range(rounds):
        payload = rng.bytes(payload_bytes)
        start = time.perf_counter_ns()
        try:
            echoed = await asyncio.wait_for(send_recv(payload), timeout=timeout_s)
        except asyncio.TimeoutError:
            timeouts += 1
            if timeouts > max(1, rounds) * MAX_TIMEOUT_FRACTION:
                raise BenchError(f"{timeouts} rounds timed out (> {MAX_TIMEOUT_FRACTION:.0%})")
            continue
        elapsed_us = (time.perf_counter_ns() - start) / 1000.0
        if echoed != payload:
            raise IntegrityError(f"echo mismatch on a {payload_bytes}-byte round")
        samples.append(elapsed_us)
    if not samples:
        raise BenchError("all rounds timed out")
    return RttStats.from_samples(payload_bytes, samples, timeouts=timeouts)


async def rtt_bench(
    echo_url: str,
    payload_bytes: int,
    rounds: int = DEFAULT_ROUNDS,
    timeout_s: float = ROUND_TIMEOUT_S,
) -> RttStats:
    """Sequential websocket echo round trips; every echo must match."""
    _check_payload(payload_bytes, rounds)
    async with connect(echo_url, max_size=None) as ws:

        async def send_recv(payload: bytes) -> bytes:
            await ws.send(payload)
            return await ws.recv()

        return await _run_rounds(payload_bytes, rounds, send_recv, timeout_s)


async def raw_stream_rtt_bench(
    host: str,
    port: int,
    payload_bytes: int,
    rounds: int = DEFAULT_ROUNDS,
    timeout_s: float = ROUND_TIMEOUT_S,
) -> RttStats:
    """Same methodology over a bare TCP echo, to price websocket framing."""
    _check_payload(payload_bytes, rounds)
    reader, writer = await asyncio.open_connection(host, port)
    try:

        async def send_recv(payload: bytes) -> bytes:
            writer.write(payload)
            await writer.drain()
            return await reader.readexactly(len(payload))

        return await _run_rounds(payload_bytes, rounds, send_recv, timeout_s)
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass


@dataclass
class OverheadReport:
    websocket: RttStats
    raw: RttStats

    @property
    def overhead_us(self) -> float:
        return self.websocket.mean_us - self.raw.mean_us

    def to_dict(self) -> dict:
        return {
            "websocket": self.websocket.to_dict(),
            "raw": self.raw.to_dict(),
            "overhead_us": self.overhead_us,
        }


async def websocket_overhead_bench(
    echo_url: str, raw_host: str, raw_port: int, payload_bytes: int, rounds: int = DEFAULT_ROUNDS
) -> OverheadReport:
    ws_stats = await rtt_bench(echo_url, payload_bytes, rounds)
    raw_stats = await raw_stream_rtt_bench(raw_host, raw_port, payload_bytes, rounds)
    return OverheadReport(websocket=ws_stats, raw=raw_stats)


# --- capture-to-detection latency ----------------------------------------------


@dataclass
class LatencyTrial:
    token_frame_id: int
    token_capture_ts_us: Optional[int]
    detection_recv_ts_us: Optional[int]

    @property
    def ok(self) -> bool:
        return self.token_capture_ts_us is not None and self.detection_recv_ts_us is not None

    @property
    def latency_us(self) -> Optional[int]:
        if not self.ok:
            return None
        return self.detection_recv_ts_us - self.token_capture_ts_us


@dataclass
class LatencyReport:
    trials: list[LatencyTrial]

    @property
    def failures(self) -> int:
        return sum(1 for t in self.trials if not t.ok)

    @property
    def latencies_us(self) -> list[int]:
        return [t.latency_us for t in self.trials if t.ok]

    @property
    def median_us(self) -> Optional[float]:
        values = self.latencies_us
        return statistics.median(values) if values else None

    def to_dict(self) -> dict:
        return {
            "trials": len(self.trials),
            "failures": self.failures,
            "latencies_us": self.latencies_us,
            "median_us": self.median_us,
        }


async def detection_latency_trial(
    server: FarsightServer,
    initial_frame_id: int,
    blank_frames: int = 8,
    fps: float = 15.0,
    width: int = 480,
    height: int = 270,
    token_pixels: Optional[np.ndarray] = None,
    timeout_s: float = 10.0,
    policy: Optional[CompressionPolicy] = None,
) -> LatencyTrial:
    """One swap-in-a-token run against an already-running pipeline.

    Latency is measured on a single clock: the token frame's capture
    timestamp versus the client wall clock when the first detection with
    frame_id >= the token's arrives.
    """
    if token_pixels is None:
        token_pixels = make_token_pixels(width, height)
    source = BlankThenTokenSource(blank_frames, token_pixels)
    client = FarsightClient(
        source=source,
        policy=policy or CompressionPolicy(),
        ingest_url=f"ws://127.0.0.1:{server.ingest_port}",
        results_url=f"ws://127.0.0.1:{server.results_port}",
        fps=fps,
        initial_frame_id=initial_frame_id,
    )
    token_frame_id = initial_frame_id + blank_frames
    trial = LatencyTrial(token_frame_id, None, None)
    detected = asyncio.Event()

    def on_capture(frame: Frame) -> None:
        if frame.frame_id == token_frame_id:
            trial.token_capture_ts_us = frame.capture_ts_us

    def on_result(frame_id: int, detections: list[Detection], recv_ts_us: int) -> None:
        if detections and frame_id >= token_frame_id and trial.detection_recv_ts_us is None:
            if trial.token_capture_ts_us is not None and recv_ts_us > trial.token_capture_ts_us:
                trial.detection_recv_ts_us = recv_ts_us
                detected.set()

    client.on_capture = on_capture
    client.on_result = on_result
    run_task = asyncio.create_task(client.run())
    try:
        await asyncio.wait_for(detected.wait(), timeout=timeout_s)
    except asyncio.TimeoutError:
        pass
    finally:
        client.stop()
        run_task.cancel()
        try:
            await run_task
        except asyncio.CancelledError:
            pass
    return trial


async def detection_latency_bench(
    server: FarsightServer,
    trials: int = 10,
    quiesce_s: float = 0.3,
    **trial_kwargs,
) -> LatencyReport:
    """Repeated trials with a quiesce gap; frame ids never repeat across
    trials so stale detections cannot satisfy a later trial."""
    results = []
    next_id = 0
    for _ in range(trials):
        trial = await detection_latency_trial(server, initial_frame_id=next_id, **trial_kwargs)
        results.append(trial)
        next_id = trial.token_frame_id + 10_000
        await asyncio.sleep(quiesce_s)
    return LatencyReport(results)


# --- compression size bench -----------------------------------------------------


@dataclass
class PolicySize:
    name: str
    mean_bytes: float
    size_ratio: float  # mean / original mean
    reduction_factor: float  # original mean / mean

    def to_dict(self) -> dict:
        return {
            "policy": self.name,
            "mean_bytes": self.mean_bytes,
            "size_ratio": self.size_ratio,
            "reduction_factor": self.reduction_factor,
        }


def synthetic_prior_boxes(area_fraction: float = 0.2) -> list[Detection]:
    """One centered box covering the requested fraction of the frame."""
    if not 0.0 < area_fraction <= 1.0:
        raise InvalidParameterError(f"area_fraction must be in (0, 1], got {area_fraction}")
    side = float(np.sqrt(area_fraction))
    box = BoundingBox(cx=0.5, cy=0.5, w=side, h=side)
    return [Detection(frame_id=1, label="object", confidence=0.9, box=box)]


def load_corpus(corpus_dir: str | Path) -> list[Frame]:
    """Decode every readable image in the directory; warn-and-skip others."""
    from PIL import Image, UnidentifiedImageError

    frames = []
    paths = sorted(Path(corpus_dir).iterdir())
    for i, path in enumerate(paths):
        if not path.is_file():
            continue
        try:
            with Image.open(path) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError):
            import warnings

            warnings.warn(f"skipping undecodable corpus file {path}")
            continue
        frames.append(Frame(i + 1, 0, pixels))
    if not frames:
        raise BenchError(f"no decodable images in {corpus_dir}")
    return frames


def compression_size_bench(
    corpus_dir: str | Path,
    policies: Sequence[tuple[str, CompressionPolicy]] = (),
    jpeg_quality: int = 80,
    blackout_area_fraction: float = 0.2,
) -> list[PolicySize]:
    """Mean encoded size per policy over the corpus, with ratios vs original.

    Non-keyframe blackout frames use synthetic prior boxes covering
    ``blackout_area_fraction`` of the image.
    """
    frames = load_corpus(corpus_dir)
    if not policies:
        policies = default_size_policies(jpeg_quality)
    prior = synthetic_prior_boxes(blackout_area_fraction)

    original_mean = float(
        np.mean([len(compression.jpeg_encode(f, jpeg_quality)) for f in frames])
    )
    out = [PolicySize("original", original_mean, 1.0, 1.0)]
    for name, policy in policies:
        sizes = []
        for frame in frames:
            # force the non-keyframe path so blackout actually engages
            staged = compression.apply_policy(
                Frame(frame.frame_id * 2 + 1, frame.capture_ts_us, frame.pixels), policy, prior
            )
            sizes.append(len(compression.jpeg_encode(staged, policy.jpeg_quality)))
        mean = float(np.mean(sizes))
        out.append(PolicySize(name, mean, mean / original_mean, original_mean / mean))
    return out


def default_size_policies(quality: int = 80) -> list[tuple[str, CompressionPolicy]]:
    return [
        ("blur5", CompressionPolicy((Blur(5, 0.04),), quality)),
        ("downscale2", CompressionPolicy((Downscale(2),), quality)),
        ("blackout", CompressionPolicy((Blackout(15, 30),), quality)),
    ]


# --- kernel backend micro-benchmark ----------------------------------------------


@dataclass
class KernelTiming:
    op: str
    backend: str
    mean_ms: float

    def to_dict(self) -> dict:
        return {"op": self.op, "backend": self.backend, "mean_ms": self.mean_ms}


def kernel_bench(width: int = 960, height: int = 540, repeat: int = 5) -> list[KernelTiming]:
    """Times each hot kernel on every available backend with equal inputs."""
    rng = np.random.default_rng(42)
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    padded = np.pad(pixels, ((2, 2), (2, 2), (0, 0)), mode="edge")
    mask = _kernels.get_backend("fallback").binarize_luma(pixels, 128)
    cases = [
        ("blur_box", lambda impl: impl.blur_box(padded, 5, 0.04)),
        ("downscale_mean", lambda impl: impl.downscale_mean(pixels, 2)),
        ("binarize_luma", lambda impl: impl.binarize_luma(pixels, 128)),
        ("label4", lambda impl: impl.label4(mask)),
    ]
    timings = []
    for op, fn in cases:
        for name in _kernels.available_backends():
            impl = _kernels.get_backend(name)
            fn(impl)  # warm-up
            start = time.perf_counter()
            for _ in range(repeat):
                fn(impl)
            elapsed = (time.perf_counter() - start) / repeat
            timings.append(KernelTiming(op, name, elapsed * 1000.0))
    return timings
