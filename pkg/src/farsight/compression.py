"""Frame-size-reduction transforms and JPEG codec.

Three schemes trade detail for transmitted bytes: a weighted box blur
(same resolution, smoother content compresses better), block-mean
downscaling, and blacking out everything away from the previously detected
objects. All transforms are pure frame-to-frame functions; identity and
capture timestamp ride along unchanged.
"""

from __future__ import annotations

import io
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import _kernels
from .errors import InvalidParameterError, JpegDecodeError
from .types import Blackout, Blur, BoundingBox, CompressionPolicy, Detection, Downscale, Frame

JPEG_SOI = b"\xff\xd8"


def blur_average(frame: Frame, kernel: int = 5, weight: float = 0.04) -> Frame:
    """Weighted kernel x kernel box filter with edge replication.

    Each output sample is round-half-up(neighborhood_sum * weight), clamped
    to [0, 255]; channels are independent. With weight = 1/kernel^2 the
    weights sum to 1 and constant images are fixed points.
    """
    if not isinstance(kernel, int) or kernel < 1 or kernel % 2 == 0:
        raise InvalidParameterError(f"kernel must be an odd integer >= 1, got {kernel!r}")
    if not weight > 0:
        raise InvalidParameterError(f"weight must be > 0, got {weight!r}")
    pad = kernel // 2
    padded = np.pad(frame.pixels, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    return frame.with_pixels(_kernels.blur_box(padded, kernel, float(weight)))


def downscale(frame: Frame, divisor: int) -> Frame:
    """Block-mean downscale; output dims floor(w/d) x floor(h/d)."""
    if not isinstance(divisor, int) or divisor < 1:
        raise InvalidParameterError(f"divisor must be a positive integer, got {divisor!r}")
    if divisor > frame.width or divisor > frame.height:
        raise InvalidParameterError(
            f"divisor {divisor} exceeds frame dimensions {frame.width}x{frame.height}"
        )
    if divisor == 1:
        return frame
    return frame.with_pixels(_kernels.downscale_mean(frame.pixels, divisor))


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def box_to_pixel_rect(
    box: BoundingBox, width: int, height: int, margin_px: int = 0
) -> tuple[int, int, int, int]:
    """Half-open pixel rect (x0, y0, x1, y1) covering ``box`` plus a margin.

    Normalized coordinates map through round-half-up so a box built from an
    exact pixel rect maps back to it.
    """
    x0n, y0n, x1n, y1n = box.clipped_extent()
    x0 = max(0, _round_half_up(x0n * width) - margin_px)
    y0 = max(0, _round_half_up(y0n * height) - margin_px)
    x1 = min(width, _round_half_up(x1n * width) + margin_px)
    y1 = min(height, _round_half_up(y1n * height) + margin_px)
    return x0, y0, x1, y1


def blackout(
    frame: Frame,
    prior: Sequence[Detection],
    margin_px: int = 15,
    is_keyframe: bool = False,
) -> Frame:
    """Zero every pixel outside the union of prior boxes plus a margin.

    Keyframes and frames with no prior detections pass through unmodified:
    without temporal data a fully black frame would never detect anything
    again.
    """
    if not isinstance(margin_px, int) or margin_px < 0:
        raise InvalidParameterError(f"margin_px must be >= 0, got {margin_px!r}")
    if is_keyframe or not prior:
        return frame
    src = frame.pixels
    out = np.zeros_like(src)
    for det in prior:
        x0, y0, x1, y1 = box_to_pixel_rect(det.box, frame.width, frame.height, margin_px)
        if x1 > x0 and y1 > y0:
            out[y0:y1, x0:x1] = src[y0:y1, x0:x1]
    return frame.with_pixels(out)


def keyframe_due(frame_id: int, interval: int) -> bool:
    """True when this frame must be sent complete (not blacked out)."""
    if not isinstance(interval, int) or interval < 1:
        raise InvalidParameterError(f"interval must be >= 1, got {interval!r}")
    return frame_id % interval == 0


def jpeg_encode(frame: Frame, quality: int = 80) -> bytes:
    """Encode to a baseline JFIF stream (no progressive scans)."""
    if not isinstance(quality, int) or not 1 <= quality <= 100:
        raise InvalidParameterError(f"quality must be in [1, 100], got {quality!r}")
    buf = io.BytesIO()
    Image.fromarray(frame.pixels, "RGB").save(buf, format="JPEG", quality=quality, progressive=False)
    return buf.getvalue()


def jpeg_decode(data: bytes, frame_id: int = 0, capture_ts_us: int = 0) -> Frame:
    """Decode a JPEG byte stream; raises JpegDecodeError with a byte offset."""
    if len(data) < 2 or data[:2] != JPEG_SOI:
        raise JpegDecodeError("missing JPEG SOI marker", offset=0)
    try:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB")
            pixels = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        # Pillow does not report where it stopped; the stream end is the
        # first position known to be missing data.
        raise JpegDecodeError(f"undecodable JPEG stream: {exc}", offset=len(data)) from exc
    return Frame(frame_id, capture_ts_us, pixels)


def apply_policy(
    frame: Frame,
    policy: CompressionPolicy,
    prior: Sequence[Detection] = (),
) -> Frame:
    """Run the policy's stages in order; blackout is gated by its keyframe
    interval and consumes the caller's latest detection set."""
    out = frame
    for stage in policy.stages:
        if isinstance(stage, Blur):
            out = blur_average(out, stage.kernel, stage.weight)
        elif isinstance(stage, Downscale):
            out = downscale(out, stage.divisor)
        elif isinstance(stage, Blackout):
            is_key = keyframe_due(frame.frame_id, stage.keyframe_interval)
            out = blackout(out, prior, stage.margin_px, is_keyframe=is_key)
        else:
            raise InvalidParameterError(f"unknown stage {stage!r}")
    return out


def compress_to_jpeg(
    frame: Frame, policy: CompressionPolicy, prior: Sequence[Detection] = ()
) -> tuple[bytes, bool]:
    """Apply the policy and encode; returns (jpeg_bytes, is_keyframe).

    A frame counts as a keyframe when no blackout stage removed content
    from it: every blackout either hit its periodic gate or had no prior
    detections to keep. Policies without blackout send only keyframes.
    """
    is_key = all(
        not prior or keyframe_due(frame.frame_id, st.keyframe_interval)
        for st in policy.stages
        if isinstance(st, Blackout)
    )
    out = apply_policy(frame, policy, prior)
    return jpeg_encode(out, policy.jpeg_quality), is_key


# --- policy file parsing ------------------------------------------------------

_STAGE_PARSERS = {
    "blur": (Blur, {"kernel": int, "weight": float}),
    "downscale": (Downscale, {"divisor": int}),
    "blackout": (Blackout, {"margin_px": int, "keyframe_interval": int}),
}


def parse_policy(text: str) -> CompressionPolicy:
    """Parse the one-stage-per-line policy format.

    Example::

        # stages run top to bottom
        blur kernel=5 weight=0.04
        blackout margin_px=15 keyframe_interval=30
        jpeg_quality 80
    """
    stages: list = []
    quality = 80
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        name, args = tokens[0], tokens[1:]
        if name == "jpeg_quality":
            if len(args) != 1:
                raise InvalidParameterError(f"policy line {line_no}: jpeg_quality takes one value")
            quality = int(args[0])
            continue
        if name not in _STAGE_PARSERS:
            raise InvalidParameterError(f"policy line {line_no}: unknown stage {name!r}")
        cls, schema = _STAGE_PARSERS[name]
        kwargs = {}
        for arg in args:
            key, sep, value = arg.partition("=")
            if not sep or key not in schema:
                raise InvalidParameterError(f"policy line {line_no}: bad parameter {arg!r}")
            kwargs[key] = schema[key](value)
        stages.append(cls(**kwargs))
    return CompressionPolicy(stages=tuple(stages), jpeg_quality=quality)


def load_policy(path) -> CompressionPolicy:
    with open(path, encoding="utf-8") as fh:
        return parse_policy(fh.read())
