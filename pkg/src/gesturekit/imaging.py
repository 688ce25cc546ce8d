"""Raster primitives for the hand pipeline.

Frames and masks wrap read-only ``uint8`` numpy arrays. Masks only ever hold
0 (background) or 255 (foreground). Pixels outside the image are treated as
background by every operation unless a function says otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

FG = 255


class ImageFormatError(ValueError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Frame:
    """Grayscale ``(H, W)`` or RGB ``(H, W, 3)`` image."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 3 and px.shape[2] == 1:
            px = px[:, :, 0]
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] != 3):
            raise ValueError(f"frame must be HxW or HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("frame dimensions must be >= 1")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class BinaryMask:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype == np.bool_:
            px = px.view(np.uint8) * np.uint8(FG)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty HxW array, got shape {px.shape}")
        if not np.isin(px, (0, FG)).all():
            raise ValueError("mask values must be 0 or 255")
        object.__setattr__(self, "pixels", _frozen(px))

    @classmethod
    def from_bool(cls, arr) -> "BinaryMask":
        return cls(np.asarray(arr, dtype=bool))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    @property
    def fg(self) -> np.ndarray:
        """Boolean foreground view."""
        return self.pixels == FG

    def count(self) -> int:
        return int(np.count_nonzero(self.pixels))


@dataclass(frozen=True)
class Contour:
    """One 8-connected foreground component.

    ``pixels`` is the Moore boundary trace starting at the top-left-most pixel.
    ``region`` is the component's boolean footprint cropped to ``bbox``
    (inclusive ``top, left, bottom, right``).
    """

    pixels: list
    area: int
    bbox: tuple
    region: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class DistanceMap:
    dist: np.ndarray

    @property
    def height(self) -> int:
        return self.dist.shape[0]

    @property
    def width(self) -> int:
        return self.dist.shape[1]

    def max(self) -> int:
        return int(self.dist.max())


# --- intensity ----------------------------------------------------------------


def to_grayscale(frame: Frame) -> Frame:
    if frame.channels == 1:
        return frame
    px = frame.pixels
    # integer form of round(0.299R + 0.587G + 0.114B), halves rounded up
    gray = (299 * px[..., 0].astype(np.int32) + 587 * px[..., 1].astype(np.int32)
            + 114 * px[..., 2].astype(np.int32) + 500) // 1000
    return Frame(gray.astype(np.uint8))


def otsu_threshold(gray: Frame) -> tuple[int, BinaryMask, bool]:
    """Otsu's method over the 256-bin histogram.

    Returns ``(threshold, mask, degenerate)``. Foreground is ``pixel > threshold``;
    ties in between-class variance go to the smallest threshold. A constant image
    is degenerate: threshold is its value and the mask is empty.
    """
    if gray.channels != 1:
        raise ValueError("otsu_threshold expects a 1-channel frame")
    px = gray.pixels
    hist = np.bincount(px.ravel(), minlength=256).astype(np.float64)
    nonzero = np.flatnonzero(hist)
    if nonzero.size == 1:
        t = int(nonzero[0])
        return t, BinaryMask(np.zeros_like(px)), True

    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * levels)
    s1 = s0[-1] - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -1.0)
    # scale-aware tie tolerance so float noise doesn't pick a later threshold
    best = between.max()
    t = int(np.flatnonzero(between >= best - 1e-9 * max(best, 1.0))[0])
    return t, BinaryMask.from_bool(px > t), False


def fixed_threshold(gray: Frame, threshold: int) -> BinaryMask:
    if gray.channels != 1:
        raise ValueError("fixed_threshold expects a 1-channel frame")
    return BinaryMask.from_bool(gray.pixels > threshold)


# --- morphology -----------------------------------------------------------------


def _sweep(fg: np.ndarray, k: int, op, pad_value: bool) -> np.ndarray:
    r = k // 2
    out = fg
    for axis in (0, 1):
        padded = np.pad(out, [(r, r) if a == axis else (0, 0) for a in (0, 1)],
                        constant_values=pad_value)
        n = out.shape[axis]
        acc = np.take(padded, range(0, n), axis=axis)
        for off in range(1, k):
            acc = op(acc, np.take(padded, range(off, off + n), axis=axis))
        out = acc
    return out


def _erode(fg, k, border):
    return _sweep(fg, k, np.logical_and, border == "ignore")


def _dilate(fg, k, border):
    return _sweep(fg, k, np.logical_or, False)


def morph(mask: BinaryMask, op: str, kernel: int = 3, border: str = "background") -> BinaryMask:
    """Binary morphology with a ``kernel x kernel`` square.

    ``border="background"`` treats out-of-image neighbours as background.
    ``border="ignore"`` leaves them out of the min/max, so erosion does not eat
    into shapes touching the image edge.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    if border not in ("background", "ignore"):
        raise ValueError(f"unknown border mode {border!r}")
    fg = mask.fg
    if op == "erode":
        out = _erode(fg, kernel, border)
    elif op == "dilate":
        out = _dilate(fg, kernel, border)
    elif op == "open":
        out = _dilate(_erode(fg, kernel, border), kernel, border)
    elif op == "close":
        out = _erode(_dilate(fg, kernel, border), kernel, border)
    else:
        raise ValueError(f"unknown morphology op {op!r}")
    return BinaryMask.from_bool(out)


# --- components -----------------------------------------------------------------

# Moore neighbourhood, clockwise starting west (row, col offsets)
_MOORE = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]
_EIGHT = np.ones((3, 3), dtype=bool)


def trace_boundary(region: np.ndarray) -> list[tuple[int, int]]:
    """Moore-neighbour trace of a single 8-connected boolean blob.

    Coordinates are local to ``region``. Stops on Jacob's criterion (re-entering
    the start pixel from the initial direction).
    """
    rows, cols = np.nonzero(region)
    start = (int(rows[0]), int(cols[0]))
    h, w = region.shape

    def inside(r, c):
        return 0 <= r < h and 0 <= c < w and region[r, c]

    # the start pixel is top-most then left-most, so its west neighbour is background
    trace = [start]
    cur = start
    back = 0  # index into _MOORE of the background pixel we came from
    first_move = None
    while True:
        found = None
        for i in range(1, 9):
            d = (back + i) % 8
            dr, dc = _MOORE[d]
            nr, nc = cur[0] + dr, cur[1] + dc
            if inside(nr, nc):
                found = (d, (nr, nc))
                break
        if found is None:
            return trace  # isolated pixel
        d, nxt = found
        if first_move is None:
            first_move = (cur, nxt)
        elif (cur, nxt) == first_move:
            trace.pop()
            return trace
        # the pixel examined just before ``nxt`` was background; point back at it
        prev_d = (d - 1) % 8
        pr, pc = cur[0] + _MOORE[prev_d][0], cur[1] + _MOORE[prev_d][1]
        back = _MOORE.index((pr - nxt[0], pc - nxt[1]))
        cur = nxt
        trace.append(cur)


def connected_components(mask: BinaryMask, trace: bool = True) -> list[Contour]:
    """8-connected components sorted by area, largest first.

    Equal areas keep raster order of each component's first pixel.
    ``trace=False`` skips boundary tracing (``pixels`` left empty).
    """
    labels, n = ndimage.label(mask.fg, structure=_EIGHT)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel())[1:]
    slices = ndimage.find_objects(labels)
    order = sorted(range(n), key=lambda i: -areas[i])
    out = []
    for i in order:
        sl = slices[i]
        region = labels[sl] == i + 1
        top, left = sl[0].start, sl[1].start
        bbox = (top, left, sl[0].stop - 1, sl[1].stop - 1)
        pixels = []
        if trace:
            pixels = [(r + top, c + left) for r, c in trace_boundary(region)]
        out.append(Contour(pixels=pixels, area=int(areas[i]), bbox=bbox, region=region))
    return out


# --- distance transform -------------------------------------------------------------


def _min_plus_sweep(a: np.ndarray) -> np.ndarray:
    # forward then backward scan along axis 0: a[i] = min(a[i], a[i -+ 1] + 1);
    # the virtual row outside the image holds distance 0
    a = a.copy()
    prev = np.zeros(a.shape[1:], dtype=a.dtype)
    for i in range(a.shape[0]):
        np.minimum(a[i], prev + 1, out=a[i])
        prev = a[i]
    prev = np.zeros(a.shape[1:], dtype=a.dtype)
    for i in range(a.shape[0] - 1, -1, -1):
        np.minimum(a[i], prev + 1, out=a[i])
        prev = a[i]
    return a


def distance_transform(mask: BinaryMask) -> DistanceMap:
    """City-block distance from every foreground pixel to the nearest background.

    Two-pass chamfer, run separably: a forward/backward sweep along rows, then the
    same along columns seeded with the row distances. Exact for the L1 metric.
    """
    fg = mask.fg
    big = fg.shape[0] + fg.shape[1] + 2
    init = np.where(fg, big, 0).astype(np.int32)
    rows = _min_plus_sweep(init.T).T
    dist = _min_plus_sweep(rows)
    return DistanceMap(dist)


# --- PGM / PPM --------------------------------------------------------------------


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError(f"truncated header at byte {start}")
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> Frame:
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"bad magic {magic[:8]!r} at byte 0, expected P5 or P6")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"non-integer {name} {tok!r} at byte {pos - len(tok)}") from None
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise ImageFormatError(f"invalid dimensions {w}x{h}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}, only 255 is handled")
    pos += 1  # single whitespace byte after maxval
    ch = 1 if magic == b"P5" else 3
    need = w * h * ch
    payload = buf[pos:pos + need]
    if len(payload) != need:
        raise ImageFormatError(f"payload truncated: expected {need} bytes at byte {pos}, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return Frame(arr.reshape(h, w) if ch == 1 else arr.reshape(h, w, 3))


def encode_pnm(img) -> bytes:
    px = img.pixels
    magic = b"P5" if px.ndim == 2 else b"P6"
    h, w = px.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + px.tobytes()


def read_frame(path) -> Frame:
    return decode_pnm(Path(path).read_bytes())


def write_image(path, img) -> None:
    Path(path).write_bytes(encode_pnm(img))


def read_mask(path) -> BinaryMask:
    frame = read_frame(path)
    if frame.channels != 1:
        raise ImageFormatError(f"{path}: mask must be a P5 (grayscale) file")
    bad = ~np.isin(frame.pixels, (0, FG))
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ImageFormatError(
            f"{path}: pixel ({r},{c}) has value {frame.pixels[r, c]}, masks allow only 0/255")
    return BinaryMask(frame.pixels)
