import json
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gesturekit.hmi import (
    CONTEXTS,
    NOOP,
    ActionEvent,
    AudioState,
    Debouncer,
    GestureMap,
    HMIError,
    MouseState,
    Observation,
    TargetState,
    VlcState,
    debounce,
    default_map,
    dispatch,
    load_map,
    load_trace,
    mouse_apply,
    parse_map,
    parse_trace,
    replay_commits,
    run_session,
    trace_text,
    trials_trace,
)
from gesturekit.tracking import CursorSample

# desktop-application and virtual-mouse control tables, row by row
TABLE_VLC = [("Ok", "Play"), ("L", "Volume Up"), ("Hang", "Volume down"), ("Close", "Video quit"),
             ("Two", "Go to next video"), ("Five", "Pause")]
TABLE_AUDIO = [("Ok", "Play"), ("Five", "Pause"), ("Fist", "Resume"), ("Two", "Go to next song"),
               ("Three", "Go to previous song")]
TABLE_MARIO = [("Ok", "Run"), ("Five", "Jump right"), ("Two", "Hold/Stay"), ("Four", "Jump left"),
               ("Thumb", "Jump")]
TABLE_MOUSE = [("Two", "Right click"), ("Ok", "Double click"), ("Index", "Left click"),
               ("Five", "Pointer movement"), ("Heavy", "Scroll up"), ("Hang", "Scroll down"),
               ("Palm", "Drag")]
TABLES = {"vlc": TABLE_VLC, "audio": TABLE_AUDIO, "mario": TABLE_MARIO, "mouse": TABLE_MOUSE}

# real-time trial outcomes: gesture -> (hits, misses, detection rate %)
OUTCOMES = {
    "vlc": {"Ok": (10, 0, 100), "L": (8, 2, 80), "Hang": (9, 1, 90), "Close": (10, 0, 100),
            "Two": (7, 3, 70), "Five": (9, 1, 90)},
    "audio": {"Ok": (10, 0, 100), "Five": (10, 0, 100), "Fist": (9, 1, 90), "Two": (8, 2, 80),
              "Three": (7, 3, 70)},
}


def cs(x, y):
    return CursorSample(raw=(x, y), smoothed=(x, y), frame_index=0)


# --- maps ---------------------------------------------------------------------------------

@pytest.mark.parametrize("ctx", CONTEXTS)
def test_default_maps_verbatim(ctx):
    assert default_map(ctx).entries == dict(TABLES[ctx])


@pytest.mark.parametrize("ctx,gesture,action", [
    (ctx, g, a) for ctx, rows in TABLES.items() for g, a in rows])
def test_every_pair_dispatches_its_action(ctx, gesture, action):
    # each action taken from a state where it is legal
    ready = {"Pause": dict(playing=True), "Resume": dict(playing=True, paused=True),
             "Go to previous song": dict(playing=True, track=1)}.get(action, {})
    base = TargetState()
    if ctx in ("vlc", "audio"):
        sub = getattr(base, ctx)
        base = replace(base, **{ctx: replace(sub, **ready)})
    _, ev = dispatch(gesture, default_map(ctx), base)
    assert ev.action == action and ev.gesture == gesture and ev.context == ctx
    assert ev.warning is None


def test_named_examples():
    assert dispatch("Ok", default_map("vlc"), TargetState())[1].action == "Play"
    assert dispatch("Three", default_map("audio"), TargetState(audio=AudioState(playing=True, track=2)))[1].action == "Go to previous song"
    assert dispatch("Two", default_map("mouse"), TargetState())[1].action == "Right click"


def test_unmapped_label_ignored():
    s = TargetState()
    assert dispatch("Fist", default_map("vlc"), s) == (s, None)


def test_map_json_roundtrip(tmp_path):
    for ctx in CONTEXTS:
        m = default_map(ctx)
        (tmp_path / f"{ctx}.json").write_text(m.to_json())
        assert load_map(tmp_path / f"{ctx}.json") == m


@pytest.mark.parametrize("text,msg", [
    ('{"context": "vlc", "entries": {"Ok": "Play", "Ok": "Pause"}}', "duplicate"),
    ('{"context": "tv", "entries": {}}', "unknown context"),
    ('{"context": "vlc", "entries": {"Ok": "Fly"}}', "not supported"),
    ('{"context": "vlc"}', "exactly"),
    ('{"context": "vlc", "entries": [], "x": 1}', "exactly"),
    ('{"context": "vlc", "entries": []}', "entries"),
    ("{", "JSON"),
])
def test_map_errors(text, msg):
    with pytest.raises(HMIError, match=msg):
        parse_map(text)


def test_custom_map_context_field_disambiguates():
    m = GestureMap("mouse", {"Ok": "Left click"})
    assert dispatch("Ok", m, TargetState())[1].action == "Left click"


# --- debounce -----------------------------------------------------------------------------

def _stream(labels, conf=0.9):
    return [(lab, conf) for lab in labels]


def test_debounce_examples():
    assert debounce(_stream("AAA"), k=3) == [(2, "A")]
    assert debounce(_stream("AABAAA"), k=3) == [(5, "A")]
    assert debounce(_stream("AAAAAAA"), k=3) == [(2, "A")]
    assert debounce(_stream("ABAB"), k=1) == [(0, "A"), (1, "B"), (2, "A"), (3, "B")]
    assert debounce(_stream("AAA", conf=0.5), k=1) == []


def test_debounce_edge_triggered_recommit():
    s = _stream("AAA") + [("A", 0.1)] + _stream("AAA") + [(None, 0.0)] + _stream("AAA")
    assert debounce(s, k=3) == [(2, "A"), (6, "A"), (10, "A")]


def test_debounce_low_confidence_breaks_run():
    s = [("A", 0.9), ("A", 0.9), ("A", 0.79), ("A", 0.9), ("A", 0.9)]
    assert debounce(s, k=3, conf_min=0.8) == []
    assert debounce(s, k=3, conf_min=0.79) == [(2, "A")]


@given(st.lists(st.tuples(st.sampled_from(["A", "B", None]), st.floats(0, 1)), max_size=60),
       st.integers(2, 6))
def test_no_spurious_single_frame_commits(stream, k):
    commits = debounce(stream, k=k, conf_min=0.5)
    for i, lab in commits:
        assert i >= k - 1
        window = stream[i - k + 1:i + 1]
        assert all(l == lab and c >= 0.5 for l, c in window)
        if i - k >= 0:
            prev = stream[i - k]
            assert not (prev[0] == lab and prev[1] >= 0.5)


def test_debouncer_rejects_bad_params():
    with pytest.raises(HMIError):
        Debouncer(k=0)
    with pytest.raises(HMIError):
        Debouncer(conf_min=1.5)


# --- target state machines ----------------------------------------------------------------

@given(st.lists(st.sampled_from(["L", "Hang"]), max_size=80))
def test_volume_clamped(seq):
    state, events = replay_commits(list(enumerate(seq)), default_map("vlc"))
    assert 0 <= state.vlc.volume <= 100
    vol = 50
    for lab in seq:
        vol = min(100, vol + 10) if lab == "L" else max(0, vol - 10)
    assert state.vlc.volume == vol


def test_vlc_illegal_transitions():
    m = default_map("vlc")
    s, ev = dispatch("Five", m, TargetState())
    assert ev.action == NOOP and ev.warning
    s, _ = dispatch("Close", m, s)
    assert s.vlc.quit
    s2, ev = dispatch("Close", m, s)
    assert ev.action == NOOP and ev.warning and s2 == s
    s2, ev = dispatch("Ok", m, s)
    assert ev.action == NOOP


def test_audio_transitions():
    m = default_map("audio")
    s, ev = dispatch("Fist", m, TargetState())
    assert ev.action == NOOP
    s, ev = dispatch("Three", m, s)
    assert ev.action == NOOP and s.audio.track == 0
    for g in ("Ok", "Five", "Fist", "Two", "Two", "Three"):
        s, ev = dispatch(g, m, s)
        assert ev.action != NOOP
    assert s.audio.playing and not s.audio.paused and s.audio.track == 1


def test_mario_register():
    s, _ = replay_commits([(0, "Ok"), (1, "Four"), (2, "Thumb")], default_map("mario"))
    assert s.mario.action == "Jump"


def test_mouse_examples():
    s = mouse_apply("Pointer movement", MouseState(), cs(10, 20))
    assert s.cursor == (10.0, 20.0) and s.follow
    s = mouse_apply("Scroll up", s)
    assert s.scroll == 1 and not s.follow
    s = mouse_apply("Scroll down", mouse_apply("Scroll down", s))
    assert s.scroll == -1
    s = mouse_apply("Left click", MouseState())
    assert s.buttons == (("press", "left"), ("release", "left")) and not s.pressed
    s = mouse_apply("Double click", MouseState())
    assert s.buttons == (("press", "left"), ("release", "left")) * 2
    s = mouse_apply("Right click", MouseState())
    assert s.buttons == (("press", "right"), ("release", "right"))


def test_mouse_cursor_clamped():
    s = mouse_apply("Pointer movement", MouseState(screen=(100, 50)), cs(500, -3))
    assert s.cursor == (99.0, 0.0)


def test_drag_hold_semantics():
    s = mouse_apply("Drag", MouseState(), cs(5, 6))
    assert s.pressed == {"left"} and s.drag_anchor == (5.0, 6.0)
    s = mouse_apply("Drag", s, cs(9, 9))
    assert s.buttons == (("press", "left"),)
    s = mouse_apply("Scroll up", s)
    assert not s.pressed and s.drag_anchor is None
    assert s.buttons == (("press", "left"), ("release", "left"))
    state, ev = dispatch("Palm", default_map("mouse"),
                         TargetState(mouse=mouse_apply("Drag", MouseState())))
    assert ev.action == NOOP and ev.warning == "already dragging"


@given(st.lists(st.sampled_from([g for g, _ in TABLE_MOUSE]), max_size=40))
def test_every_release_follows_its_press(seq):
    state, _ = replay_commits(list(enumerate(seq)), default_map("mouse"))
    held = set()
    for kind, button in state.mouse.buttons:
        if kind == "press":
            assert button not in held
            held.add(button)
        else:
            assert button in held
            held.remove(button)
    assert held == set(state.mouse.pressed)


@given(st.sampled_from(CONTEXTS).flatmap(
    lambda c: st.tuples(st.just(c), st.lists(st.sampled_from([g for g, _ in TABLES[c]] + ["X"]),
                                             max_size=30))))
def test_replay_is_a_pure_fold(args):
    ctx, seq = args
    commits = list(enumerate(seq))
    a = replay_commits(commits, default_map(ctx))
    b = replay_commits(commits, default_map(ctx))
    assert a == b
    assert [e.to_json() for e in a[1]] == [e.to_json() for e in b[1]]


def test_action_event_json_and_response():
    ev = ActionEvent("vlc", "Play", "Ok", 12, 100.0, 100.35)
    rec = json.loads(ev.to_json())
    assert rec == {"ctx": "vlc", "gesture": "Ok", "action": "Play", "frame": 12,
                   "response_ms": pytest.approx(0.35)}
    with pytest.raises(HMIError):
        ActionEvent("vlc", "Play", "Ok", 0, 5.0, 4.0)


def test_state_to_dict_is_json():
    s, _ = replay_commits([(0, "Palm")], default_map("mouse"))
    json.dumps(s.to_dict())
    assert s.to_dict()["mouse"]["pressed"] == ["left"]


# --- sessions ------------------------------------------------------------------------------

def test_ten_ok_bursts_give_ten_plays():
    obs = trials_trace({"Ok": (10, 0)}, "vlc")
    res = run_session(obs, default_map("vlc"))
    assert [e.action for e in res.events] == ["Play"] * 10
    assert res.state.vlc.playing


def test_empty_trace():
    res = run_session([], default_map("vlc"))
    assert res.events == [] and res.state == TargetState() and not res.stats.actions
    assert res.log_text() == ""


@pytest.mark.parametrize("ctx", ["vlc", "audio"])
def test_trial_outcomes_reproduce_detection_rates(ctx):
    outcomes = {g: (h, m) for g, (h, m, _) in OUTCOMES[ctx].items()}
    res = run_session(trials_trace(outcomes, ctx), default_map(ctx))
    rows = {r["action"]: r for r in res.stats.rows()}
    for g, (h, m, rate) in OUTCOMES[ctx].items():
        row = rows[default_map(ctx).action(g)]
        assert (row["hits"], row["misses"], row["N"]) == (h, m, 10)
        assert round(100 * row["detection_rate"]) == rate


def test_single_frame_glitches_never_dispatch():
    obs = [Observation(i, i * 33.3, "Ok" if i % 2 else "L", 0.99) for i in range(40)]
    assert run_session(obs, default_map("vlc"), k=2).events == []


def test_session_clock_sets_response():
    ticks = iter(range(0, 1000, 3))
    res = run_session(trials_trace({"Ok": (2, 0)}, "vlc"), default_map("vlc"),
                      clock=lambda: float(next(ticks)))
    assert [e.response_ms for e in res.events] == [3.0, 3.0]
    assert all(e.response_ms >= 0 for e in res.events)


def test_mouse_session_tracks_cursor():
    obs = [Observation(i, i * 33.3, "Five", 0.99, centroid=(100.0 + i, 200.0)) for i in range(30)]
    res = run_session(obs, default_map("mouse"), cam_dims=(640, 480), screen_dims=(1920, 1080))
    assert [e.action for e in res.events] == ["Pointer movement"]
    assert len(res.cursor) == 30
    assert res.state.mouse.follow
    assert res.state.mouse.cursor == pytest.approx(res.cursor[-1].smoothed)
    x, y = res.state.mouse.cursor
    assert 0 <= x <= 1919 and 0 <= y <= 1079


# --- traces -------------------------------------------------------------------------------

def test_trace_roundtrip(tmp_path):
    obs = trials_trace({"Ok": (2, 1), "L": (1, 0)}, "vlc")
    obs[0].centroid = (1.5, 2.5)
    (tmp_path / "t.jsonl").write_text(trace_text(obs))
    back = load_trace(tmp_path / "t.jsonl")
    assert [(o.frame, o.label, o.conf, o.expected, o.trial, o.centroid) for o in back] == \
        [(o.frame, o.label, o.conf, o.expected, o.trial, o.centroid) for o in obs]


@pytest.mark.parametrize("text,msg", [
    ("{bad\n", "line 1"),
    ('{"frame": 0}\n[1]\n', "line 2"),
    ('{"frame": 0, "who": 1}\n', "unknown keys"),
    ('{"frame": 3}\n{"frame": 3}\n', "increasing"),
    ('{"frame": 0, "label": "Ok", "conf": 1.5}\n', "probability"),
    ('{"frame": 0, "centroid": [1]}\n', "centroid"),
])
def test_trace_errors(text, msg):
    with pytest.raises(HMIError, match=msg):
        parse_trace(text)


def test_trace_defaults():
    obs = parse_trace('{"label": "Ok"}\n\n{"label": null}\n')
    assert [(o.frame, o.conf) for o in obs] == [(0, 1.0), (1, 0.0)]
    with pytest.raises(HMIError):
        load_trace("/nonexistent/trace.jsonl")


def test_trials_trace_rejects_unmapped():
    with pytest.raises(HMIError):
        trials_trace({"Palm": (1, 0)}, "vlc")


def test_vlc_state_default_volume():
    assert VlcState().volume == 50
