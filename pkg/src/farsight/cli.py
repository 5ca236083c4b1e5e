"""Command-line entry points: server, client, benchmarks, mock detector."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys

from . import bench as bench_mod
from . import mockdet
from .client import FarsightClient, parse_sink, parse_source
from .compression import load_policy
from .server import FarsightServer, ServerConfig, parse_hostport
from .types import CompressionPolicy, load_class_names


def _add_server_parser(sub):
    p = sub.add_parser("server", help="run the cloud-side service")
    p.add_argument("--ingest", default="0.0.0.0:8760", help="frame ingest websocket host:port")
    p.add_argument("--results", default="0.0.0.0:8761", help="detection results websocket host:port")
    p.add_argument("--mjpeg", default="127.0.0.1:8762", help="MJPEG rebroadcast HTTP host:port (loopback by default)")
    p.add_argument("--echo", default="0.0.0.0:8763", help="websocket echo host:port for RTT benchmarks")
    p.add_argument("--raw-echo", default=None, help="optional raw TCP echo host:port for overhead benchmarks")
    p.add_argument("--detector-cmd", default=None, help="detector command line; the MJPEG URL is appended")
    p.add_argument("--detector-stamp-slot-id", action="store_true",
                   help="stamp results with the newest ingested frame id (for detectors that cannot echo X-Frame-Id)")
    p.add_argument("--classes", default=None, help="class list file (one label per line)")
    p.add_argument("--boundary", default="frame", help="MJPEG multipart boundary token")


def _add_client_parser(sub):
    p = sub.add_parser("client", help="run the device-side pipeline")
    p.add_argument("--source", required=True, help="dir:<path> | synthetic:<scenario>[,k=v...] | device:<n>")
    p.add_argument("--fps", type=float, default=15.0)
    p.add_argument("--ingest", required=True, help="server ingest websocket URL")
    p.add_argument("--results", default=None, help="server results websocket URL")
    p.add_argument("--policy", default=None, help="compression policy file")
    p.add_argument("--sink", action="append", default=[], help="log | jsonl:<path> | follow:<label>")
    p.add_argument("--queue-capacity", type=int, default=2)
    p.add_argument("--max-frames", type=int, default=None, help="stop after this many captures")


def _add_bench_parser(sub):
    p = sub.add_parser("bench", help="measurement harness")
    bench_sub = p.add_subparsers(dest="bench_command", required=True)

    rtt = bench_sub.add_parser("rtt", help="websocket echo round trips")
    rtt.add_argument("--url", required=True, help="ws:// echo endpoint")
    rtt.add_argument("--payload", type=int, default=26)
    rtt.add_argument("--rounds", type=int, default=2000)
    rtt.add_argument("--json", action="store_true")

    raw = bench_sub.add_parser("raw-rtt", help="raw TCP echo round trips")
    raw.add_argument("--host", required=True)
    raw.add_argument("--port", type=int, required=True)
    raw.add_argument("--payload", type=int, default=26)
    raw.add_argument("--rounds", type=int, default=2000)
    raw.add_argument("--json", action="store_true")

    lat = bench_sub.add_parser("latency", help="capture-to-detection latency on a loopback pipeline")
    lat.add_argument("--trials", type=int, default=10)
    lat.add_argument("--fps", type=float, default=15.0)
    lat.add_argument("--blank-frames", type=int, default=8)
    lat.add_argument("--json", action="store_true")

    sizes = bench_sub.add_parser("sizes", help="per-policy mean encoded sizes over a corpus")
    sizes.add_argument("--corpus", required=True, help="directory of corpus images")
    sizes.add_argument("--quality", type=int, default=80)
    sizes.add_argument("--blackout-area", type=float, default=0.2)
    sizes.add_argument("--json", action="store_true")

    kern = bench_sub.add_parser("kernels", help="compare compiled vs fallback pixel kernels")
    kern.add_argument("--width", type=int, default=960)
    kern.add_argument("--height", type=int, default=540)
    kern.add_argument("--repeat", type=int, default=5)
    kern.add_argument("--json", action="store_true")


def _add_mockdet_parser(sub):
    p = sub.add_parser("mock-detector", help="deterministic bright-region detector subprocess")
    p.add_argument("--luma", type=int, default=200, help="luma threshold 0-255")
    p.add_argument("--min-area", type=int, default=50, help="minimum region area in pixels")
    p.add_argument("--max-frames", type=int, default=None)
    p.add_argument("url", help="MJPEG stream URL (appended by the supervisor)")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="farsight")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_server_parser(sub)
    _add_client_parser(sub)
    _add_bench_parser(sub)
    _add_mockdet_parser(sub)
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "server":
        return _run_server(args)
    if args.command == "client":
        return _run_client(args)
    if args.command == "bench":
        return _run_bench(args)
    if args.command == "mock-detector":
        mockdet.run(args.url, args.luma, args.min_area, args.max_frames)
        return 0
    return 2


def _run_server(args) -> int:
    ingest_host, ingest_port = parse_hostport(args.ingest)
    results_host, results_port = parse_hostport(args.results)
    mjpeg_host, mjpeg_port = parse_hostport(args.mjpeg, default_host="127.0.0.1")
    echo_host, echo_port = parse_hostport(args.echo)
    config = ServerConfig(
        ingest_host=ingest_host,
        ingest_port=ingest_port,
        results_host=results_host,
        results_port=results_port,
        mjpeg_host=mjpeg_host,
        mjpeg_port=mjpeg_port,
        echo_host=echo_host,
        echo_port=echo_port,
        boundary=args.boundary,
        detector_cmd=args.detector_cmd,
        detector_stamp_slot_id=args.detector_stamp_slot_id,
    )
    if args.raw_echo:
        config.raw_echo_host, config.raw_echo_port = parse_hostport(args.raw_echo)
    if args.classes:
        load_class_names(args.classes)  # fail fast on a bad file
    try:
        asyncio.run(FarsightServer(config).serve_forever())
    except KeyboardInterrupt:
        pass
    return 0


def _run_client(args) -> int:
    source = parse_source(args.source)
    policy = load_policy(args.policy) if args.policy else CompressionPolicy()
    sinks = [parse_sink(s) for s in args.sink]
    client = FarsightClient(
        source=source,
        policy=policy,
        ingest_url=args.ingest,
        results_url=args.results,
        sinks=sinks,
        fps=args.fps,
        queue_capacity=args.queue_capacity,
        max_frames=args.max_frames,
    )
    try:
        stats = asyncio.run(client.run())
    except KeyboardInterrupt:
        return 0
    print(
        f"captured={stats.frames_captured} sent={stats.packets_sent} "
        f"queue_drops={stats.queue_drops} received={stats.messages_received}",
        file=sys.stderr,
    )
    return 0


def _emit(rows, as_json: bool) -> None:
    if as_json:
        print(json.dumps(rows, indent=2))
        return
    if isinstance(rows, dict):
        rows = [rows]
    for row in rows:
        print("  ".join(f"{k}={v}" for k, v in row.items()))


def _run_bench(args) -> int:
    if args.bench_command == "rtt":
        stats = asyncio.run(bench_mod.rtt_bench(args.url, args.payload, args.rounds))
        _emit(stats.to_dict(), args.json)
        return 0
    if args.bench_command == "raw-rtt":
        stats = asyncio.run(
            bench_mod.raw_stream_rtt_bench(args.host, args.port, args.payload, args.rounds)
        )
        _emit(stats.to_dict(), args.json)
        return 0
    if args.bench_command == "latency":
        report = asyncio.run(_loopback_latency(args))
        _emit(report.to_dict(), args.json)
        return 0 if report.failures == 0 else 1
    if args.bench_command == "sizes":
        rows = bench_mod.compression_size_bench(
            args.corpus, jpeg_quality=args.quality, blackout_area_fraction=args.blackout_area
        )
        _emit([r.to_dict() for r in rows], args.json)
        return 0
    if args.bench_command == "kernels":
        rows = bench_mod.kernel_bench(args.width, args.height, args.repeat)
        _emit([r.to_dict() for r in rows], args.json)
        return 0
    return 2


async def _loopback_latency(args):
    config = ServerConfig(
        ingest_host="127.0.0.1",
        ingest_port=0,
        results_host="127.0.0.1",
        results_port=0,
        mjpeg_host="127.0.0.1",
        mjpeg_port=0,
        echo_host="127.0.0.1",
        echo_port=0,
        detector_cmd=f"{sys.executable} -m farsight mock-detector",
    )
    server = FarsightServer(config)
    await server.start()
    try:
        return await bench_mod.detection_latency_bench(
            server, trials=args.trials, fps=args.fps, blank_frames=args.blank_frames
        )
    finally:
        await server.stop()


if __name__ == "__main__":
    sys.exit(main())
