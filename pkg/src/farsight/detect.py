"""Grid-prediction decoding, IoU, optional NMS, and a mock detector.

The decoder turns an s x s x (b*5+c) prediction volume into thresholded
detections: per box, confidence is the class-conditional probability times
the box confidence, and the winning class is the argmax of that product
(ties to the lower class index). Box centers are cell-relative, sizes
image-relative; the converted box is clipped to the unit square.

The mock detector finds bright connected regions, giving the pipeline a
deterministic stand-in for a neural detector so everything runs without a
GPU.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels
from .errors import InvalidParameterError, LabelMismatchError
from .types import BoundingBox, Detection, Frame, GridTensor, clip_box

DEFAULT_CONFIDENCE_THRESHOLD = 0.5


def decode_grid(
    tensor: GridTensor,
    threshold: float,
    class_names: Sequence[str],
    frame_id: int = 0,
) -> list[Detection]:
    """Decode thresholded detections, ordered by (cell row, cell col, box).

    A cell may emit several boxes; there is no per-cell argmax across
    boxes, only across classes within each box.
    """
    if not 0.0 <= threshold <= 1.0:
        raise InvalidParameterError(f"threshold must be in [0, 1], got {threshold!r}")
    if len(class_names) != tensor.c:
        raise LabelMismatchError(
            f"{len(class_names)} class names for a tensor with {tensor.c} classes"
        )
    out: list[Detection] = []
    s = tensor.s
    for row in range(s):
        for col in range(s):
            probs = tensor.class_probs(row, col)
            for j in range(tensor.b):
                tx, ty, tw, th, tc = tensor.box(row, col, j)
                best_i = 0
                best_conf = probs[0] * tc
                for i in range(1, tensor.c):
                    conf = probs[i] * tc
                    if conf > best_conf:
                        best_i = i
                        best_conf = conf
                if best_conf >= threshold:
                    box = clip_box(
                        BoundingBox(cx=(col + tx) / s, cy=(row + ty) / s, w=tw, h=th)
                    )
                    out.append(
                        Detection(
                            frame_id=frame_id,
                            label=class_names[best_i],
                            confidence=float(best_conf),
                            box=box,
                        )
                    )
    return out


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of the clipped extents; 0 when the union is
    empty (two zero-area boxes)."""
    ax0, ay0, ax1, ay1 = a.clipped_extent()
    bx0, by0, bx1, by1 = b.clipped_extent()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = iw * ih if iw > 0.0 and ih > 0.0 else 0.0
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-label suppression; OFF by default in the pipeline.

    Detections are visited by descending confidence (ties keep the original
    order); one is kept iff its IoU with every already-kept detection of
    the same label is strictly below ``iou_threshold``.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise InvalidParameterError(f"iou_threshold must be in [0, 1], got {iou_threshold!r}")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    kept: list[Detection] = []
    for i in order:
        det = detections[i]
        if all(
            iou(det.box, other.box) < iou_threshold
            for other in kept
            if other.label == det.label
        ):
            kept.append(det)
    return kept


def mock_detect(
    frame: Frame,
    luma_threshold: int = 200,
    min_area_px: int = 50,
    label: str = "object",
) -> list[Detection]:
    """Detect bright 4-connected regions; deterministic by construction.

    Confidence is min(1, region_area / frame_area * 10) -- arbitrary but
    reproducible and in (0, 1]. Output is ordered by the (top, left) corner
    of each region's tight bounding rectangle.
    """
    if not 0 <= luma_threshold <= 255:
        raise InvalidParameterError(f"luma_threshold must be in [0, 255], got {luma_threshold!r}")
    mask = _kernels.binarize_luma(frame.pixels, luma_threshold)
    labels, count = _kernels.label4(mask)
    if count == 0:
        return []
    w = frame.width
    h = frame.height
    frame_area = w * h
    rects = []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    boundaries = np.searchsorted(flat[order], np.arange(1, count + 1))
    positions = order  # flat indices grouped by label
    for lab in range(1, count + 1):
        start = boundaries[lab - 1]
        end = boundaries[lab] if lab < count else flat.shape[0]
        idx = positions[start:end]
        area = idx.shape[0]
        if area < min_area_px:
            continue
        ys = idx // w
        xs = idx % w
        y0 = int(ys.min())
        y1 = int(ys.max())
        x0 = int(xs.min())
        x1 = int(xs.max())
        rects.append((y0, x0, y1, x1, area))
    rects.sort(key=lambda r: (r[0], r[1]))
    out = []
    for y0, x0, y1, x1, area in rects:
        box = BoundingBox(
            cx=(x0 + x1 + 1) / (2 * w),
            cy=(y0 + y1 + 1) / (2 * h),
            w=(x1 - x0 + 1) / w,
            h=(y1 - y0 + 1) / h,
        )
        out.append(
            Detection(
                frame_id=frame.frame_id,
                label=label,
                confidence=min(1.0, area / frame_area * 10.0),
                box=box,
            )
        )
    return out
