"""Domain types shared by every other module.

Coordinate convention: all boxes that cross a module boundary are
normalized center-format (cx, cy, w, h) in [0, 1], so boxes computed on a
downscaled frame remain comparable with the original. Timestamps are
microseconds since the Unix epoch, assigned at capture and carried
end-to-end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import InvalidGeometryError, InvalidParameterError, ShapeError

U64_MAX = 2**64 - 1

BOX_FIELDS_PER_BOX = 5  # tx, ty, tw, th, tc


def _check_u64(value: int, name: str) -> int:
    if not isinstance(value, int) or value < 0 or value > U64_MAX:
        raise InvalidParameterError(f"{name} must be an unsigned 64-bit integer, got {value!r}")
    return value


@dataclass(frozen=True, eq=False)
class Frame:
    """A decoded raster image: the unit of capture and compression.

    ``pixels`` is an (height, width, 3) uint8 RGB array, made read-only at
    construction so frames can be shared across tasks without copying.
    """

    frame_id: int
    capture_ts_us: int
    pixels: np.ndarray

    def __post_init__(self):
        _check_u64(self.frame_id, "frame_id")
        _check_u64(self.capture_ts_us, "capture_ts_us")
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
            raise InvalidParameterError("pixels must be an (h, w, 3) uint8 array")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidParameterError("frame dimensions must be at least 1x1")
        if not px.flags.c_contiguous:
            px = np.ascontiguousarray(px)
            object.__setattr__(self, "pixels", px)
        px.flags.writeable = False

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.capture_ts_us == other.capture_ts_us
            and self.pixels.shape == other.pixels.shape
            and np.array_equal(self.pixels, other.pixels)
        )

    def with_pixels(self, pixels: np.ndarray) -> "Frame":
        """New frame with the same identity and timestamp, different raster."""
        return Frame(self.frame_id, self.capture_ts_us, pixels)


@dataclass(frozen=True)
class BoundingBox:
    """Normalized center-format box; every field must lie in [0, 1].

    The extent (cx - w/2, cx + w/2) x (cy - h/2, cy + h/2) may stick out of
    the unit square; area computations always use the extent clipped to it.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidGeometryError(f"{name} must be finite, got {v!r}")
            if not 0.0 <= v <= 1.0:
                raise InvalidGeometryError(f"{name}={v!r} outside [0, 1]")
            object.__setattr__(self, name, float(v))

    def extent(self) -> tuple[float, float, float, float]:
        """Unclipped (x0, y0, x1, y1)."""
        hx = self.w / 2.0
        hy = self.h / 2.0
        return self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy

    def clipped_extent(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) intersected with the unit square."""
        x0, y0, x1, y1 = self.extent()
        clamp = lambda v: min(1.0, max(0.0, v))
        return clamp(x0), clamp(y0), clamp(x1), clamp(y1)

    def area(self) -> float:
        x0, y0, x1, y1 = self.clipped_extent()
        return (x1 - x0) * (y1 - y0)


def clip_box(box: BoundingBox) -> BoundingBox:
    """Re-express ``box`` so its extent lies fully inside the unit square.

    A box whose extent is already interior is returned unchanged (the same
    object), which also makes the operation exactly idempotent: the center
    of a clipped box is rebuilt as x0 + w/2 so re-deriving the extent can
    never escape [0, 1] again.
    """
    if not isinstance(box, BoundingBox):
        raise InvalidGeometryError(f"expected BoundingBox, got {type(box).__name__}")
    x0, y0, x1, y1 = box.extent()
    x_inside = 0.0 <= x0 and x1 <= 1.0
    y_inside = 0.0 <= y0 and y1 <= 1.0
    if x_inside and y_inside:
        return box
    clamp = lambda v: min(1.0, max(0.0, v))
    cx, w = box.cx, box.w
    cy, h = box.cy, box.h
    if not x_inside:
        x0, x1 = clamp(x0), clamp(x1)
        w = x1 - x0
        cx = x0 + w / 2.0
    if not y_inside:
        y0, y1 = clamp(y0), clamp(y1)
        h = y1 - y0
        cy = y0 + h / 2.0
    return BoundingBox(cx=cx, cy=cy, w=w, h=h)


@dataclass(frozen=True)
class Detection:
    """One recognized object in one frame."""

    frame_id: int
    label: str
    confidence: float
    box: BoundingBox

    def __post_init__(self):
        _check_u64(self.frame_id, "frame_id")
        if not isinstance(self.label, str) or not self.label:
            raise InvalidParameterError("label must be a non-empty string")
        c = self.confidence
        if not isinstance(c, (int, float)) or not math.isfinite(c) or not 0.0 <= c <= 1.0:
            raise InvalidParameterError(f"confidence={c!r} outside [0, 1]")
        object.__setattr__(self, "confidence", float(c))
        if not isinstance(self.box, BoundingBox):
            raise InvalidParameterError("box must be a BoundingBox")


@dataclass(frozen=True, eq=False)
class GridTensor:
    """Raw s*s*(b*5+c) prediction volume consumed by the grid decoder.

    Per-cell layout, cells in row-major order:
    b blocks of (tx, ty, tw, th, tc), then c class-conditional
    probabilities. tx/ty are cell-relative, tw/th image-relative, and tc is
    the box confidence (the network's already-multiplied objectness * fit
    term); all values lie in [0, 1].
    """

    s: int
    b: int
    c: int
    values: np.ndarray

    def __post_init__(self):
        for name in ("s", "b", "c"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise InvalidParameterError(f"{name} must be a positive integer, got {v!r}")
        expected = self.s * self.s * (self.b * 5 + self.c)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != expected:
            raise ShapeError(
                f"values must be a flat array of length {expected}, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
            raise InvalidParameterError("all tensor values must be finite and within [0, 1]")
        values = np.ascontiguousarray(values)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def cell_stride(self) -> int:
        return self.b * 5 + self.c

    def box_offset(self, cell_row: int, cell_col: int, box_index: int, field_index: int) -> int:
        """Flat offset of one of the 5 box fields; bijective over its domain."""
        if not (0 <= cell_row < self.s and 0 <= cell_col < self.s):
            raise InvalidParameterError(f"cell ({cell_row}, {cell_col}) outside {self.s}x{self.s} grid")
        if not 0 <= box_index < self.b:
            raise InvalidParameterError(f"box_index {box_index} outside [0, {self.b})")
        if not 0 <= field_index < BOX_FIELDS_PER_BOX:
            raise InvalidParameterError(f"field_index {field_index} outside [0, 5)")
        cell = cell_row * self.s + cell_col
        return cell * self.cell_stride + box_index * BOX_FIELDS_PER_BOX + field_index

    def class_offset(self, cell_row: int, cell_col: int, class_index: int) -> int:
        """Flat offset of one class-conditional probability."""
        if not (0 <= cell_row < self.s and 0 <= cell_col < self.s):
            raise InvalidParameterError(f"cell ({cell_row}, {cell_col}) outside {self.s}x{self.s} grid")
        if not 0 <= class_index < self.c:
            raise InvalidParameterError(f"class_index {class_index} outside [0, {self.c})")
        cell = cell_row * self.s + cell_col
        return cell * self.cell_stride + self.b * BOX_FIELDS_PER_BOX + class_index

    def box(self, cell_row: int, cell_col: int, box_index: int) -> tuple[float, float, float, float, float]:
        base = self.box_offset(cell_row, cell_col, box_index, 0)
        v = self.values
        return v[base], v[base + 1], v[base + 2], v[base + 3], v[base + 4]

    def class_probs(self, cell_row: int, cell_col: int) -> np.ndarray:
        base = self.class_offset(cell_row, cell_col, 0)
        return self.values[base : base + self.c]


# --- compression policy -----------------------------------------------------


@dataclass(frozen=True)
class Blur:
    """Weighted box filter; the stock 5x5/0.04 configuration sums to 1."""

    kernel: int = 5
    weight: float = 0.04

    def __post_init__(self):
        if not isinstance(self.kernel, int) or self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidParameterError(f"kernel must be an odd integer >= 1, got {self.kernel!r}")
        if not isinstance(self.weight, (int, float)) or not math.isfinite(self.weight) or self.weight <= 0:
            raise InvalidParameterError(f"weight must be > 0, got {self.weight!r}")
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True)
class Downscale:
    divisor: int = 2

    def __post_init__(self):
        if not isinstance(self.divisor, int) or self.divisor < 1:
            raise InvalidParameterError(f"divisor must be a positive integer, got {self.divisor!r}")


@dataclass(frozen=True)
class Blackout:
    """Zero everything outside the previous detections, plus a pixel margin.

    Every ``keyframe_interval``-th frame is passed through untouched so new
    objects can still be discovered.
    """

    margin_px: int = 15
    keyframe_interval: int = 30

    def __post_init__(self):
        if not isinstance(self.margin_px, int) or self.margin_px < 0:
            raise InvalidParameterError(f"margin_px must be >= 0, got {self.margin_px!r}")
        if not isinstance(self.keyframe_interval, int) or self.keyframe_interval < 1:
            raise InvalidParameterError(
                f"keyframe_interval must be >= 1, got {self.keyframe_interval!r}"
            )


Stage = Blur | Downscale | Blackout


@dataclass(frozen=True)
class CompressionPolicy:
    """Ordered frame transforms plus the JPEG quality used after them."""

    stages: tuple[Stage, ...] = ()
    jpeg_quality: int = 80

    def __post_init__(self):
        stages = tuple(self.stages)
        for st in stages:
            if not isinstance(st, (Blur, Downscale, Blackout)):
                raise InvalidParameterError(f"unknown stage {st!r}")
        object.__setattr__(self, "stages", stages)
        q = self.jpeg_quality
        if not isinstance(q, int) or not 1 <= q <= 100:
            raise InvalidParameterError(f"jpeg_quality must be in [1, 100], got {q!r}")


# --- benchmark statistics ---------------------------------------------------


@dataclass(frozen=True)
class RttStats:
    """Round-trip latency summary in microseconds."""

    payload_bytes: int
    rounds: int
    mean_us: float
    min_us: float
    max_us: float
    p50_us: float
    p99_us: float
    timeouts: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise InvalidParameterError("rounds must be >= 1")
        if not self.min_us <= self.p50_us <= self.p99_us <= self.max_us:
            raise InvalidParameterError(
                "percentile ordering violated: "
                f"min={self.min_us} p50={self.p50_us} p99={self.p99_us} max={self.max_us}"
            )

    @classmethod
    def from_samples(cls, payload_bytes: int, samples_us: Sequence[float], timeouts: int = 0) -> "RttStats":
        if not samples_us:
            raise InvalidParameterError("at least one sample is required")
        ordered = sorted(samples_us)
        n = len(ordered)
        nearest_rank = lambda q: ordered[max(0, math.ceil(q * n) - 1)]
        return cls(
            payload_bytes=payload_bytes,
            rounds=n,
            mean_us=sum(ordered) / n,
            min_us=ordered[0],
            max_us=ordered[-1],
            p50_us=nearest_rank(0.50),
            p99_us=nearest_rank(0.99),
            timeouts=timeouts,
        )

    def to_dict(self) -> dict:
        return {
            "payload_bytes": self.payload_bytes,
            "rounds": self.rounds,
            "mean_us": self.mean_us,
            "min_us": self.min_us,
            "max_us": self.max_us,
            "p50_us": self.p50_us,
            "p99_us": self.p99_us,
            "timeouts": self.timeouts,
        }


# --- class lists -------------------------------------------------------------


def load_class_names(path) -> list[str]:
    """Read a class list: UTF-8, one label per line, index = line number.

    Blank lines are a format error. Spaces inside labels are replaced with
    underscores so labels are single tokens on the wire.
    """
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline
    names = []
    for i, line in enumerate(lines, start=1):
        if line.strip() == "":
            raise InvalidParameterError(f"class file {path}: blank line {i}")
        names.append(line.strip().replace(" ", "_"))
    if not names:
        raise InvalidParameterError(f"class file {path} is empty")
    return names


def default_class_names() -> list[str]:
    """The bundled 80-class COCO label list."""
    ref = resources.files("farsight.data").joinpath("coco_names.txt")
    with resources.as_file(ref) as path:
        return load_class_names(path)
