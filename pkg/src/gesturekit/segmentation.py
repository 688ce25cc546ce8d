"""Hand detection and extraction.

A frame goes through background differencing and HSV skin masking, the two
masks are ANDed and opened, and the largest blob becomes the hand. The palm
center is the argmax of the city-block distance transform; everything more
than ``cut_factor`` palm radii below the center is treated as arm and cut.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .imaging import (
    BinaryMask,
    Contour,
    Frame,
    connected_components,
    distance_transform,
    morph,
    otsu_threshold,
    to_grayscale,
    trace_boundary,
)


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class BackgroundModel:
    reference: Frame
    diff_threshold: int = 30

    def __post_init__(self):
        if self.reference.channels != 1:
            object.__setattr__(self, "reference", to_grayscale(self.reference))
        if not 1 <= self.diff_threshold <= 255:
            raise ValueError(f"diff_threshold must be in [1, 255], got {self.diff_threshold}")


@dataclass(frozen=True)
class SkinRange:
    """HSV box; hue in degrees, saturation/value in [0, 1].

    ``hue_lo > hue_hi`` means the hue interval wraps through 0.
    """

    hue_lo: float = 340.0
    hue_hi: float = 35.0
    sat_lo: float = 0.15
    sat_hi: float = 0.9
    val_lo: float = 0.2
    val_hi: float = 1.0

    def __post_init__(self):
        if not (0 <= self.hue_lo <= 360 and 0 <= self.hue_hi <= 360):
            raise ValueError("hue bounds must lie in [0, 360]")
        for lo, hi, name in ((self.sat_lo, self.sat_hi, "sat"), (self.val_lo, self.val_hi, "val")):
            if not 0 <= lo <= hi <= 1:
                raise ValueError(f"{name} bounds must satisfy 0 <= lo <= hi <= 1")


@dataclass(frozen=True)
class HandRegion:
    contour: Contour
    palm_center: tuple  # (row, col) in frame coordinates
    palm_radius: int
    roi: BinaryMask
    source_dims: tuple  # (w, h)

    @property
    def centroid_xy(self) -> tuple[float, float]:
        """Palm center as ``(x, y)`` camera pixels, the quantity fed to tracking."""
        return float(self.palm_center[1]), float(self.palm_center[0])


def motion_mask(model: BackgroundModel, frame: Frame) -> BinaryMask:
    gray = to_grayscale(frame)
    ref = model.reference
    if gray.pixels.shape != ref.pixels.shape:
        raise SegmentationError(
            f"frame is {gray.width}x{gray.height}, background is {ref.width}x{ref.height}")
    diff = np.abs(gray.pixels.astype(np.int16) - ref.pixels.astype(np.int16))
    return BinaryMask.from_bool(diff > model.diff_threshold)


def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexcone RGB→HSV. Hue in degrees [0, 360), S and V in [0, 1]."""
    r, g, b = (rgb[..., i].astype(np.float32) for i in range(3))
    mx = np.maximum(np.maximum(r, g), b)
    c = mx - np.minimum(np.minimum(r, g), b)
    safe_c = np.where(c > 0, c, np.float32(1))
    s = c / np.where(mx > 0, mx, np.float32(1))
    h = np.empty_like(r)
    # branch order matters when two channels share the max: red wins, then green
    is_r = mx == r
    is_g = ~is_r & (mx == g)
    is_b = ~(is_r | is_g)
    h[is_r] = ((g[is_r] - b[is_r]) / safe_c[is_r]) % 6
    h[is_g] = (b[is_g] - r[is_g]) / safe_c[is_g] + 2
    h[is_b] = (r[is_b] - g[is_b]) / safe_c[is_b] + 4
    h *= 60
    h[c == 0] = 0
    return h, s, mx / np.float32(255)


def _in_skin(px: np.ndarray, skin: SkinRange) -> np.ndarray:
    h, s, v = rgb_to_hsv(px)
    if skin.hue_lo <= skin.hue_hi:
        hue_ok = (h >= skin.hue_lo) & (h <= skin.hue_hi)
    else:
        hue_ok = (h >= skin.hue_lo) | (h <= skin.hue_hi)
    return hue_ok & (s >= skin.sat_lo) & (s <= skin.sat_hi) & (v >= skin.val_lo) & (v <= skin.val_hi)


def skin_mask(frame: Frame, skin: SkinRange = SkinRange(), where: np.ndarray | None = None) -> BinaryMask:
    """Foreground where the pixel's HSV lies in ``skin``.

    ``where`` restricts the test to a boolean subset of pixels (everything else
    is background); the pipeline passes the motion mask so only moving pixels
    pay for the HSV conversion.
    """
    if frame.channels != 3:
        raise SegmentationError("skin_mask needs a 3-channel frame")
    if where is None:
        return BinaryMask.from_bool(_in_skin(frame.pixels, skin))
    out = np.zeros(where.shape, dtype=bool)
    out[where] = _in_skin(frame.pixels[where], skin)
    return BinaryMask.from_bool(out)


def palm_from_region(region: np.ndarray) -> tuple[tuple[int, int], int]:
    """Palm center (local row, col) and radius of a boolean blob.

    Ties on the maximal distance go to the smallest row, then smallest column,
    which is what ``argmax`` over a row-major array gives.
    """
    dist = distance_transform(BinaryMask.from_bool(region)).dist
    flat = int(np.argmax(dist))
    r, c = divmod(flat, dist.shape[1])
    return (r, c), int(dist[r, c])


def wrist_cut(mask: BinaryMask, center, radius: float, cut_factor: float = 1.6) -> BinaryMask:
    """Clear rows more than ``cut_factor * radius`` below ``center`` and crop.

    The arm is assumed to enter from the bottom of an upright camera frame.
    """
    if not cut_factor > 1:
        raise ValueError(f"cut_factor must be > 1, got {cut_factor}")
    fg = mask.fg.copy()
    limit = center[0] + cut_factor * radius
    rows = np.arange(fg.shape[0])
    fg[rows > limit, :] = False
    if not fg.any():
        raise SegmentationError("wrist cut removed every foreground pixel")
    rr = np.flatnonzero(fg.any(axis=1))
    cc = np.flatnonzero(fg.any(axis=0))
    return BinaryMask.from_bool(fg[rr[0]:rr[-1] + 1, cc[0]:cc[-1] + 1])


def detect_hand(mask: BinaryMask, min_area: int | None = None,
                cut_factor: float = 1.6) -> HandRegion | None:
    """Pick the largest blob and locate palm, radius and wrist-cut ROI.

    ``min_area`` defaults to 1% of the frame. Returns ``None`` when no blob is
    large enough, so the caller can skip the frame.
    """
    if min_area is None:
        min_area = default_min_area(mask.width, mask.height)
    comps = connected_components(mask, trace=False)
    if not comps or comps[0].area < min_area:
        return None
    best = comps[0]
    top, left = best.bbox[0], best.bbox[1]
    (lr, lc), radius = palm_from_region(best.region)
    # trace only the chosen blob; noise blobs never need a boundary
    contour = Contour(
        pixels=[(r + top, c + left) for r, c in trace_boundary(best.region)],
        area=best.area, bbox=best.bbox, region=best.region)
    roi = wrist_cut(BinaryMask.from_bool(best.region), (lr, lc), radius, cut_factor)
    return HandRegion(
        contour=contour,
        palm_center=(lr + top, lc + left),
        palm_radius=radius,
        roi=roi,
        source_dims=(mask.width, mask.height),
    )


def default_min_area(width: int, height: int, frac: float = 0.01) -> int:
    return max(1, int(round(frac * width * height)))


def letterbox(fg: np.ndarray) -> np.ndarray:
    h, w = fg.shape
    side = max(h, w)
    out = np.zeros((side, side), dtype=bool)
    top, left = (side - h) // 2, (side - w) // 2
    out[top:top + h, left:left + w] = fg
    return out


def resize_nearest(fg: np.ndarray, side: int) -> np.ndarray:
    h, w = fg.shape
    rows = (np.arange(side) * h) // side
    cols = (np.arange(side) * w) // side
    return fg[rows[:, None], cols[None, :]]


def extract_input(region: HandRegion | BinaryMask, side: int = 64) -> BinaryMask:
    """Square, resize and clean the ROI into a ``side x side`` classifier input.

    Cleanup is open(3) then close(3) with out-of-image pixels ignored, so a
    shape filling the whole square keeps its edge rows and columns.
    """
    if side not in (64, 128):
        raise ValueError(f"side must be 64 or 128, got {side}")
    roi = region.roi if isinstance(region, HandRegion) else region
    sq = resize_nearest(letterbox(roi.fg), side)
    out = morph(BinaryMask.from_bool(sq), "open", 3, border="ignore")
    return morph(out, "close", 3, border="ignore")


@dataclass(frozen=True)
class SegmentConfig:
    skin_range: SkinRange = SkinRange()
    diff_threshold: int = 30
    cut_factor: float = 1.6
    min_area_frac: float = 0.01
    input_side: int = 64
    open_kernel: int = 5


def segment_frame(frame: Frame, background: BackgroundModel | None,
                  cfg: SegmentConfig = SegmentConfig(), timings: dict | None = None) -> HandRegion | None:
    """Full per-frame path: motion AND skin, open, largest blob.

    Without a background model (dataset images) a grayscale frame is taken as an
    already-segmented image: it is Otsu-thresholded and goes straight to
    ``detect_hand``. ``timings``, when given, accumulates milliseconds per stage.
    """
    clock = _StageClock(timings)
    if background is None:
        _, mask, _ = otsu_threshold(to_grayscale(frame))
        clock.lap("threshold")
    else:
        motion = motion_mask(background, frame)
        clock.lap("motion")
        mask = skin_mask(frame, cfg.skin_range, where=motion.fg)
        clock.lap("skin")
        if cfg.open_kernel > 1:
            mask = morph(mask, "open", cfg.open_kernel)
        clock.lap("morph")
    min_area = default_min_area(mask.width, mask.height, cfg.min_area_frac)
    region = detect_hand(mask, min_area, cfg.cut_factor)
    clock.lap("detect")
    return region


class _StageClock:
    def __init__(self, sink: dict | None):
        self.sink = sink
        self.t = time.perf_counter() if sink is not None else 0.0

    def lap(self, stage: str):
        if self.sink is None:
            return
        now = time.perf_counter()
        self.sink[stage] = self.sink.get(stage, 0.0) + (now - self.t) * 1000.0
        self.t = now
