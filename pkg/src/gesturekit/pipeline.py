"""Frame-level orchestration: synthetic camera scenes, the per-frame
segment/classify/track loop and the throughput benchmark."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier.ops import NumericError
from .dataset import render
from .hmi import Observation
from .imaging import Frame, ImageFormatError, read_frame
from .segmentation import BackgroundModel, SegmentConfig, extract_input, segment_frame
from .tracking import Tracker


class PipelineError(RuntimeError):
    """A stage failed; carries the stage name and frame index."""

    def __init__(self, stage: str, frame: int, message: str):
        super().__init__(f"{stage} failed at frame {frame}: {message}")
        self.stage = stage
        self.frame = frame


SKIN_RGB = (222, 172, 140)


@dataclass
class SyntheticScene:
    """A skin-coloured shape gliding over a textured, non-skin background.

    Frame ``i`` is a pure function of ``(seed, i)``; the shape cycles through
    ``classes`` every ``hold`` frames.
    """

    width: int = 640
    height: int = 480
    classes: tuple = ("disk", "square", "bar", "cross")
    hold: int = 60
    shape_side: int = 160
    noise: float = 3.0
    seed: int = 0
    _background: np.ndarray = field(init=False, repr=False)
    _stamps: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 0])
        yy, xx = np.mgrid[0:self.height, 0:self.width]
        base = np.stack([70 + 30 * xx / self.width, 95 + 20 * yy / self.height,
                         135 + 0 * xx], axis=-1)
        texture = rng.normal(0.0, 6.0, size=(self.height // 8 + 1, self.width // 8 + 1, 1))
        texture = np.kron(texture, np.ones((8, 8, 1)))[:self.height, :self.width]
        self._background = np.clip(base + texture, 0, 255).astype(np.uint8)

    @property
    def background(self) -> Frame:
        return Frame(self._background)

    def _stamp(self, name: str) -> np.ndarray:
        if name not in self._stamps:
            self._stamps[name] = render(name, self.shape_side, scale=self.shape_side / 64)
        return self._stamps[name]

    def position(self, i: int) -> tuple[float, float]:
        """Top-left corner of the shape stamp in frame ``i`` (x, y)."""
        span_x = self.width - self.shape_side
        span_y = self.height - self.shape_side
        t = i / 90.0
        return (span_x * (0.5 + 0.4 * np.sin(t)), span_y * (0.5 + 0.35 * np.sin(1.7 * t + 0.5)))

    def label(self, i: int) -> str:
        return self.classes[(i // self.hold) % len(self.classes)]

    def frame(self, i: int) -> Frame:
        rng = np.random.default_rng([self.seed, 1, i])
        img = self._background.astype(np.int16)
        if self.noise:
            img += rng.normal(0.0, self.noise, size=img.shape).round().astype(np.int16)
        x, y = (int(round(v)) for v in self.position(i))
        stamp = self._stamp(self.label(i))
        window = img[y:y + self.shape_side, x:x + self.shape_side]
        window[stamp] = SKIN_RGB
        return Frame(np.clip(img, 0, 255).astype(np.uint8))


@dataclass
class FrameResult:
    index: int
    region: object = None         # HandRegion | None
    label: str | None = None
    conf: float = 0.0
    kalman: object = None         # KalmanState | None


class FramePipeline:
    """segment -> extract -> classify -> track for one frame at a time."""

    def __init__(self, background: BackgroundModel | None, seg: SegmentConfig = SegmentConfig(),
                 model=None, class_names=None, tracker: Tracker | None = None):
        self.background = background
        self.seg = seg
        self.model = model
        self.class_names = list(class_names or [])
        self.tracker = tracker if tracker is not None else Tracker()
        self.timings: dict = {}
        if model is not None and model.config.input_side != seg.input_side:
            raise PipelineError("classify", -1, f"model expects {model.config.input_side}px inputs, "
                                f"segmentation produces {seg.input_side}px")

    def _lap(self, stage, t0):
        now = time.perf_counter()
        self.timings[stage] = self.timings.get(stage, 0.0) + (now - t0) * 1000.0
        return now

    def process(self, frame: Frame, index: int) -> FrameResult:
        res = FrameResult(index)
        try:
            res.region = segment_frame(frame, self.background, self.seg, timings=self.timings)
        except ValueError as exc:
            raise PipelineError("segment", index, str(exc)) from exc
        t = time.perf_counter()
        if res.region is not None and self.model is not None:
            x = extract_input(res.region, self.seg.input_side).fg.astype(np.float32)
            t = self._lap("extract", t)
            probs = self.model.predict_proba(x)[0]
            if not np.isfinite(probs).all():
                raise PipelineError("classify", index, "non-finite class probabilities") \
                    from NumericError("non-finite class probabilities")
            k = int(np.argmax(probs))
            res.label = self.class_names[k] if k < len(self.class_names) else str(k)
            res.conf = float(probs[k])
            t = self._lap("classify", t)
        res.kalman = self.tracker.step(res.region.centroid_xy if res.region else None, index)
        self._lap("track", t)
        return res


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageFormatError(f"frame directory {directory} does not exist")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".ppm", ".pgm", ".pnm"))
    if not paths:
        raise ImageFormatError(f"no .ppm/.pgm frames in {directory}")
    return paths


def check_frames(paths) -> None:
    """Decode every frame once so unreadable input fails before any dispatch."""
    shape = None
    for i, p in enumerate(paths):
        try:
            f = read_frame(p)
        except (OSError, ImageFormatError) as exc:
            raise PipelineError("read", i, f"{p}: {exc}") from None
        if shape is not None and f.pixels.shape != shape:
            raise PipelineError("read", i, f"{p}: size {f.pixels.shape} differs from {shape}")
        shape = f.pixels.shape


def frame_observations(frames, pipeline: FramePipeline, fps: float = 30.0, expected=None):
    """Turn an iterable of frames into session observations.

    Timestamps are virtual (``index * 1000 / fps``) so a session over the same
    frames is reproducible.
    """
    for i, frame in enumerate(frames):
        res = pipeline.process(frame, i)
        centroid = res.region.centroid_xy if res.region is not None else None
        yield Observation(frame=i, t_ms=i * 1000.0 / fps, label=res.label, conf=res.conf,
                          centroid=centroid, expected=None if expected is None else expected(i))


@dataclass
class BenchResult:
    frames: int
    seg_track_fps: float
    full_fps: float
    stage_ms: dict          # mean ms per frame for each stage
    detected: int

    def lines(self) -> list[str]:
        out = [f"frames: {self.frames}",
               f"segmentation+tracking: {self.seg_track_fps:.1f} fps",
               f"full path (incl. tiny-CNN inference): {self.full_fps:.1f} fps",
               f"hand detected in {self.detected}/{self.frames} frames",
               "per-stage mean latency (ms):"]
        out += [f"  {k:<10}{v:8.3f}" for k, v in self.stage_ms.items()]
        return out


def bench(n_frames: int = 1000, model=None, class_names=None, seed: int = 0,
          seg: SegmentConfig = SegmentConfig()) -> BenchResult:
    """Time both paths over the same ``n_frames`` synthetic 640x480 frames.

    Frame synthesis is outside the timed region.
    """
    scene = SyntheticScene(seed=seed)
    background = BackgroundModel(scene.background, seg.diff_threshold)

    def run(with_model):
        pipe = FramePipeline(background, seg, model if with_model else None, class_names)
        elapsed, detected = 0.0, 0
        for i in range(n_frames):
            frame = scene.frame(i)
            t0 = time.perf_counter()
            res = pipe.process(frame, i)
            elapsed += time.perf_counter() - t0
            detected += res.region is not None
        return elapsed, detected, pipe.timings

    seg_time, detected, stage = run(False)
    full_time = float("nan")
    if model is not None:
        full_time, _, stage = run(True)
    return BenchResult(frames=n_frames, seg_track_fps=n_frames / seg_time,
                       full_fps=n_frames / full_time if model is not None else float("nan"),
                       stage_ms={k: v / n_frames for k, v in stage.items()}, detected=detected)
