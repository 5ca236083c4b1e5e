"""Offloaded real-time object detection for low-power devices.

A client streams compressed camera frames to a server over a websocket;
the server rebroadcasts them as MJPEG to a pluggable detector subprocess
and fans detections back out to clients. A benchmark harness measures
round-trip latency, capture-to-detection latency, and per-policy frame
sizes.
"""

from .types import (
    Blackout,
    Blur,
    BoundingBox,
    CompressionPolicy,
    Detection,
    Downscale,
    Frame,
    GridTensor,
    RttStats,
    clip_box,
    default_class_names,
    load_class_names,
)

__version__ = "0.1.0"

__all__ = [
    "Blackout",
    "Blur",
    "BoundingBox",
    "CompressionPolicy",
    "Detection",
    "Downscale",
    "Frame",
    "GridTensor",
    "RttStats",
    "clip_box",
    "default_class_names",
    "load_class_names",
    "__version__",
]
