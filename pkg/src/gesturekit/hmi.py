"""Gesture to command dispatch against simulated target applications.

Nothing here touches the operating system. Each target is a small immutable
state machine and every dispatched command is an :class:`ActionEvent`; a real
keyboard/mouse adapter would consume the same events.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .evaluation import RunStats
from .tracking import CursorSample, Tracker, map_to_screen


class HMIError(ValueError):
    pass


CONTEXTS = ("vlc", "audio", "mario", "mouse")

# gesture label -> action, verbatim from the application control tables
DEFAULT_MAPS = {
    "vlc": {"Ok": "Play", "L": "Volume Up", "Hang": "Volume down", "Close": "Video quit",
            "Two": "Go to next video", "Five": "Pause"},
    "audio": {"Ok": "Play", "Five": "Pause", "Fist": "Resume", "Two": "Go to next song",
              "Three": "Go to previous song"},
    "mario": {"Ok": "Run", "Five": "Jump right", "Two": "Hold/Stay", "Four": "Jump left",
              "Thumb": "Jump"},
    "mouse": {"Two": "Right click", "Ok": "Double click", "Index": "Left click",
              "Five": "Pointer movement", "Heavy": "Scroll up", "Hang": "Scroll down",
              "Palm": "Drag"},
}

ACTIONS = {ctx: frozenset(m.values()) for ctx, m in DEFAULT_MAPS.items()}

NOOP = "noop"
VOLUME_STEP = 10


@dataclass(frozen=True)
class GestureMap:
    context: str
    entries: dict

    def __post_init__(self):
        if self.context not in CONTEXTS:
            raise HMIError(f"unknown context {self.context!r}; expected one of {CONTEXTS}")
        bad = sorted(a for a in self.entries.values() if a not in ACTIONS[self.context])
        if bad:
            raise HMIError(f"{self.context}: actions {bad} not supported; "
                           f"valid: {sorted(ACTIONS[self.context])}")

    def action(self, label):
        return self.entries.get(label)

    def to_json(self) -> str:
        return json.dumps({"context": self.context, "entries": self.entries}, indent=2) + "\n"


def default_map(context: str) -> GestureMap:
    if context not in DEFAULT_MAPS:
        raise HMIError(f"unknown context {context!r}; expected one of {CONTEXTS}")
    return GestureMap(context, dict(DEFAULT_MAPS[context]))


def _no_duplicate_keys(pairs):
    keys = [k for k, _ in pairs]
    dup = sorted({k for k in keys if keys.count(k) > 1})
    if dup:
        raise HMIError(f"duplicate gesture labels {dup}")
    return dict(pairs)


def parse_map(text: str) -> GestureMap:
    try:
        obj = json.loads(text, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise HMIError(f"gesture map is not valid JSON: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {"context", "entries"}:
        raise HMIError("gesture map must be an object with exactly 'context' and 'entries'")
    if not isinstance(obj["entries"], dict):
        raise HMIError("'entries' must map gesture labels to action names")
    return GestureMap(obj["context"], obj["entries"])


def load_map(path) -> GestureMap:
    return parse_map(Path(path).read_text())


# --- debouncing ----------------------------------------------------------------------------


class Debouncer:
    """Edge-triggered k-in-a-row filter over per-frame predictions.

    A label commits on the k-th consecutive frame that predicts it with
    confidence ``>= conf_min``. Holding the gesture longer does not commit it
    again; the run must first be broken by another label, a low-confidence
    frame or a frame without a hand. With ``k == 1`` every qualifying frame
    commits.
    """

    def __init__(self, k: int = 5, conf_min: float = 0.8):
        if k < 1:
            raise HMIError("debounce k must be >= 1")
        if not 0.0 <= conf_min <= 1.0:
            raise HMIError("conf_min must lie in [0, 1]")
        self.k = k
        self.conf_min = conf_min
        self._label = None
        self._run = 0

    def push(self, label, conf: float):
        """Feed one frame; returns the committed label or None."""
        if label is None or conf < self.conf_min:
            self._label, self._run = None, 0
            return None
        if self.k == 1:
            return label
        if label == self._label:
            self._run += 1
        else:
            self._label, self._run = label, 1
        return label if self._run == self.k else None


def debounce(stream, k: int = 5, conf_min: float = 0.8) -> list[tuple[int, str]]:
    """``stream`` yields ``(label, conf)``; returns ``[(frame_index, label)]`` commits."""
    deb = Debouncer(k, conf_min)
    out = []
    for i, (label, conf) in enumerate(stream):
        hit = deb.push(label, conf)
        if hit is not None:
            out.append((i, hit))
    return out


# --- target applications -----------------------------------------------------------------------


@dataclass(frozen=True)
class VlcState:
    playing: bool = False
    paused: bool = False
    volume: int = 50
    track: int = 0
    quit: bool = False


@dataclass(frozen=True)
class AudioState:
    playing: bool = False
    paused: bool = False
    track: int = 0


@dataclass(frozen=True)
class MarioState:
    action: str | None = None


@dataclass(frozen=True)
class MouseState:
    cursor: tuple = (0.0, 0.0)
    screen: tuple = (1920, 1080)
    pressed: frozenset = frozenset()
    scroll: int = 0
    drag_anchor: tuple | None = None
    follow: bool = False      # cursor tracks the hand (pointer movement or drag)
    buttons: tuple = ()       # (("press"|"release", button), ...) in order


@dataclass(frozen=True)
class TargetState:
    vlc: VlcState = VlcState()
    audio: AudioState = AudioState()
    mario: MarioState = MarioState()
    mouse: MouseState = MouseState()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mouse"]["pressed"] = sorted(self.mouse.pressed)
        d["mouse"]["buttons"] = [list(b) for b in self.mouse.buttons]
        d["mouse"]["cursor"] = list(self.mouse.cursor)
        d["mouse"]["screen"] = list(self.mouse.screen)
        if self.mouse.drag_anchor is not None:
            d["mouse"]["drag_anchor"] = list(self.mouse.drag_anchor)
        return d


@dataclass(frozen=True)
class ActionEvent:
    context: str
    action: str
    gesture: str
    frame_index: int
    detect_t_ms: float
    apply_t_ms: float
    warning: str | None = None

    def __post_init__(self):
        if self.apply_t_ms < self.detect_t_ms:
            raise HMIError("an action cannot be applied before it was detected")

    @property
    def response_ms(self) -> float:
        return self.apply_t_ms - self.detect_t_ms

    def to_json(self) -> str:
        rec = {"ctx": self.context, "gesture": self.gesture, "action": self.action,
               "frame": self.frame_index, "response_ms": round(self.response_ms, 6)}
        if self.warning:
            rec["warning"] = self.warning
        return json.dumps(rec)


def _vlc(s: VlcState, action: str):
    if s.quit:
        return s, "player has quit"
    if action == "Play":
        return replace(s, playing=True, paused=False), None
    if action == "Pause":
        if not s.playing or s.paused:
            return s, "nothing is playing"
        return replace(s, paused=True), None
    if action == "Volume Up":
        return replace(s, volume=min(100, s.volume + VOLUME_STEP)), None
    if action == "Volume down":
        return replace(s, volume=max(0, s.volume - VOLUME_STEP)), None
    if action == "Go to next video":
        return replace(s, track=s.track + 1), None
    return replace(s, playing=False, paused=False, quit=True), None  # Video quit


def _audio(s: AudioState, action: str):
    if action == "Play":
        return replace(s, playing=True, paused=False), None
    if action == "Pause":
        if not s.playing or s.paused:
            return s, "nothing is playing"
        return replace(s, paused=True), None
    if action == "Resume":
        if not s.paused:
            return s, "nothing is paused"
        return replace(s, paused=False), None
    if action == "Go to next song":
        return replace(s, track=s.track + 1), None
    if s.track == 0:
        return s, "already at the first song"
    return replace(s, track=s.track - 1), None


def _clamp_cursor(xy, screen):
    return (min(max(float(xy[0]), 0.0), screen[0] - 1.0),
            min(max(float(xy[1]), 0.0), screen[1] - 1.0))


def _buttons(s: MouseState, *events) -> MouseState:
    pressed = set(s.pressed)
    for kind, button in events:
        if kind == "press":
            pressed.add(button)
        else:
            pressed.discard(button)
    return replace(s, pressed=frozenset(pressed), buttons=s.buttons + tuple(events))


def _end_drag(s: MouseState) -> MouseState:
    if s.drag_anchor is None:
        return s
    return replace(_buttons(s, ("release", "left")), drag_anchor=None)


def mouse_apply(action: str, s: MouseState, cursor: CursorSample | None = None) -> MouseState:
    """Apply one committed mouse action.

    Drag presses the left button at the current cursor and holds it; the next
    committed action other than Drag releases it first.
    """
    if action not in ACTIONS["mouse"]:
        raise HMIError(f"unknown mouse action {action!r}")
    if cursor is not None:
        s = replace(s, cursor=_clamp_cursor(cursor.smoothed, s.screen))
    if action == "Drag":
        if s.drag_anchor is not None:
            return s
        return replace(_buttons(s, ("press", "left")), drag_anchor=s.cursor, follow=True)
    s = _end_drag(s)
    if action == "Pointer movement":
        return replace(s, follow=True)
    s = replace(s, follow=False)
    if action == "Left click":
        return _buttons(s, ("press", "left"), ("release", "left"))
    if action == "Right click":
        return _buttons(s, ("press", "right"), ("release", "right"))
    if action == "Double click":
        return _buttons(s, ("press", "left"), ("release", "left"),
                        ("press", "left"), ("release", "left"))
    if action == "Scroll up":
        return replace(s, scroll=s.scroll + 1)
    return replace(s, scroll=s.scroll - 1)  # Scroll down


def move_cursor(s: MouseState, cursor: CursorSample) -> MouseState:
    """Per-frame cursor update; only moves while pointer movement or drag is held."""
    if not s.follow:
        return s
    return replace(s, cursor=_clamp_cursor(cursor.smoothed, s.screen))


def dispatch(label, gmap: GestureMap, state: TargetState, frame_index: int = 0,
             detect_t_ms: float = 0.0, apply_t_ms: float | None = None,
             cursor: CursorSample | None = None):
    """Apply a committed label to the active context.

    Returns ``(state', event)``; unmapped labels give ``(state, None)``. A
    transition the target cannot take leaves the state unchanged and emits a
    ``noop`` event carrying a warning.
    """
    action = gmap.action(label)
    if action is None:
        return state, None
    ctx = gmap.context
    warning = None
    if ctx == "vlc":
        sub, warning = _vlc(state.vlc, action)
        state = replace(state, vlc=sub)
    elif ctx == "audio":
        sub, warning = _audio(state.audio, action)
        state = replace(state, audio=sub)
    elif ctx == "mario":
        state = replace(state, mario=MarioState(action))
    else:
        if action == "Drag" and state.mouse.drag_anchor is not None:
            warning = "already dragging"
        else:
            state = replace(state, mouse=mouse_apply(action, state.mouse, cursor))
    event = ActionEvent(ctx, NOOP if warning else action, label, frame_index, detect_t_ms,
                        detect_t_ms if apply_t_ms is None else apply_t_ms, warning)
    return state, event


def replay_commits(commits, gmap: GestureMap, state: TargetState | None = None):
    """Fold ``[(frame_index, label)]`` through :func:`dispatch`; returns ``(state, events)``."""
    state = state or TargetState()
    events = []
    for frame, label in commits:
        state, ev = dispatch(label, gmap, state, frame_index=frame)
        if ev is not None:
            events.append(ev)
    return state, events


# --- sessions ----------------------------------------------------------------------------------


@dataclass
class Observation:
    """One frame as the session loop sees it."""

    frame: int
    t_ms: float
    label: str | None
    conf: float
    centroid: tuple | None = None
    expected: str | None = None
    trial: object = None


@dataclass
class SessionResult:
    events: list
    state: TargetState
    stats: RunStats
    cursor: list = field(default_factory=list)   # CursorSample per tracked frame

    def log_text(self) -> str:
        return "".join(ev.to_json() + "\n" for ev in self.events)


def _trial_key(obs: Observation):
    return None if obs.expected is None else (obs.trial, obs.expected)


def run_session(observations, gmap: GestureMap, k: int = 5, conf_min: float = 0.8,
                state: TargetState | None = None, cam_dims=(640, 480),
                screen_dims=(1920, 1080), clock=None, tracker: Tracker | None = None) -> SessionResult:
    """Debounce, dispatch and (in the mouse context) track a frame-ordered stream.

    Frames annotated with an ``expected`` gesture form trials: a maximal run of
    frames sharing ``(trial, expected)``. A trial is a hit when a commit of the
    expected gesture is dispatched inside it (a ``noop`` still counts: the
    gesture was detected), otherwise a miss. Both are tallied under the
    expected gesture's action.

    ``clock`` returns milliseconds; ``response_ms`` is the time spent applying
    a commit. Without a clock the response is taken as zero, which keeps logs
    reproducible.
    """
    state = state or TargetState()
    if gmap.context == "mouse":
        state = replace(state, mouse=replace(state.mouse, screen=tuple(screen_dims)))
    deb = Debouncer(k, conf_min)
    tracker = tracker or Tracker()
    stats = RunStats()
    events, cursor = [], []
    trial, trial_hit, trial_ms = None, False, None

    def close_trial():
        if trial is None:
            return
        action = gmap.action(trial[1])
        if action is not None:
            stats.record(gmap.context, action, trial_hit, trial_ms)

    for obs in observations:
        key = _trial_key(obs)
        if key != trial:
            close_trial()
            trial, trial_hit, trial_ms = key, False, None
        sample = None
        if gmap.context == "mouse":
            ks = tracker.step(obs.centroid, obs.frame)
            if ks is not None:
                sample = map_to_screen(ks, cam_dims, screen_dims, raw=obs.centroid, t_ms=obs.t_ms)
                cursor.append(sample)
                state = replace(state, mouse=move_cursor(state.mouse, sample))
        label = deb.push(obs.label, obs.conf)
        if label is None:
            continue
        t0 = clock() if clock else 0.0
        new_state, ev = dispatch(label, gmap, state, obs.frame, obs.t_ms, cursor=sample)
        if ev is None:
            continue
        if clock:
            ev = replace(ev, apply_t_ms=obs.t_ms + max(0.0, clock() - t0))
        state = new_state
        events.append(ev)
        if trial is not None and label == trial[1] and not trial_hit:
            trial_hit, trial_ms = True, ev.response_ms
    close_trial()
    return SessionResult(events=events, state=state, stats=stats, cursor=cursor)


def monotonic_ms() -> float:
    return time.perf_counter() * 1000.0


# --- prediction traces -------------------------------------------------------------------------

TRACE_KEYS = {"frame", "t_ms", "label", "conf", "centroid", "expected", "trial"}


def parse_trace(text: str) -> list[Observation]:
    """Parse a JSONL prediction trace; the whole trace is validated up front."""
    out = []
    last = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise HMIError(f"trace line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise HMIError(f"trace line {lineno}: expected an object")
        unknown = set(rec) - TRACE_KEYS
        if unknown:
            raise HMIError(f"trace line {lineno}: unknown keys {sorted(unknown)}")
        frame = rec.get("frame", len(out))
        if not isinstance(frame, int) or (last is not None and frame <= last):
            raise HMIError(f"trace line {lineno}: frame indices must be increasing integers")
        last = frame
        conf = rec.get("conf", 1.0 if rec.get("label") is not None else 0.0)
        if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            raise HMIError(f"trace line {lineno}: conf must be a probability, got {conf!r}")
        centroid = rec.get("centroid")
        if centroid is not None:
            if not (isinstance(centroid, list) and len(centroid) == 2):
                raise HMIError(f"trace line {lineno}: centroid must be [x, y]")
            centroid = (float(centroid[0]), float(centroid[1]))
        out.append(Observation(frame=frame, t_ms=float(rec.get("t_ms", frame * 1000.0 / 30)),
                               label=rec.get("label"), conf=float(conf), centroid=centroid,
                               expected=rec.get("expected"), trial=rec.get("trial")))
    return out


def load_trace(path) -> list[Observation]:
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise HMIError(f"cannot read trace {path}: {exc}") from None
    return parse_trace(text)


def trials_trace(outcomes, context: str, burst: int = 8, gap: int = 4, fps: float = 30.0):
    """Synthetic replay trace from per-gesture ``{gesture: (hits, misses)}`` outcomes.

    Each hit is a clean ``burst``-frame run of the gesture; each miss is the same
    run with confidence below any sensible threshold. Trials are separated by
    ``gap`` empty frames. Returns observations in frame order.
    """
    gmap = default_map(context)
    obs = []
    frame = 0
    trial = 0
    for gesture, (hits, misses) in outcomes.items():
        if gmap.action(gesture) is None:
            raise HMIError(f"{gesture!r} is not mapped in the {context} context")
        for j in range(hits + misses):
            conf = 0.99 if j < hits else 0.3
            for _ in range(burst):
                obs.append(Observation(frame, frame * 1000.0 / fps, gesture, conf,
                                       expected=gesture, trial=trial))
                frame += 1
            for _ in range(gap):
                obs.append(Observation(frame, frame * 1000.0 / fps, None, 0.0))
                frame += 1
            trial += 1
    return obs


def trace_text(observations) -> str:
    lines = []
    for o in observations:
        rec = {"frame": o.frame, "t_ms": round(o.t_ms, 3), "label": o.label, "conf": o.conf}
        if o.centroid is not None:
            rec["centroid"] = [round(v, 3) for v in o.centroid]
        if o.expected is not None:
            rec["expected"] = o.expected
            rec["trial"] = o.trial
        lines.append(json.dumps(rec) + "\n")
    return "".join(lines)
