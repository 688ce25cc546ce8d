"""``gk`` command line: synth, train, eval, segment, track, run, bench.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import SCHEMA_VERSION, WEIGHTS_FORMAT, WEIGHTS_VERSION, __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_SHAPES = ["disk", "square", "bar", "cross", "star", "fork"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _limit_threads(n: int) -> None:
    # must happen before numpy loads its BLAS to have any effect
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _write(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- configuration -----------------------------------------------------------------------------


def _config(args):
    from .config import RunConfig, apply_overrides, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(cfg, args.set or [])


# --- subcommands --------------------------------------------------------------------------------


def cmd_synth(args, cfg):
    from .dataset import SynthSpec, synth_generate

    if args.shapes:
        classes = [s.strip() for s in args.shapes.split(",") if s.strip()]
    else:
        if not 2 <= args.classes <= len(DEFAULT_SHAPES):
            raise UsageError(f"--classes must be in [2, {len(DEFAULT_SHAPES)}]")
        classes = DEFAULT_SHAPES[:args.classes]
    seed = cfg.seed if args.seed is None else args.seed
    if args.scene:
        from .imaging import write_image
        from .pipeline import SyntheticScene

        out = Path(args.out or cfg.io.frames or "frames")
        out.mkdir(parents=True, exist_ok=True)
        scene = SyntheticScene(seed=seed)
        write_image(out.parent / f"{out.name}_background.ppm", scene.background)
        labels = []
        for i in range(args.scene):
            write_image(out / f"{i:05d}.ppm", scene.frame(i))
            labels.append(f"{i:05d}.ppm,{scene.label(i)}\n")
        (out.parent / f"{out.name}_labels.csv").write_text("file,label\n" + "".join(labels))
        print(f"wrote {args.scene} frames to {out} (background {out.name}_background.ppm)")
        return
    spec = SynthSpec(classes=classes, per_class=args.per_class, noise=args.noise, seed=seed)
    out = Path(args.out or cfg.io.data or "dataset")
    manifest, _ = synth_generate(spec, out)
    print(f"wrote {len(manifest.entries)} masks ({len(classes)} classes) to {out}")


def _load_dataset(data, cfg):
    from .dataset import load_manifest, load_masks, prepare_inputs

    if not data:
        raise UsageError("no dataset given (use --data or io.data)")
    manifest = load_manifest(Path(data) / "manifest.csv")
    x = prepare_inputs(load_masks(manifest), cfg.segmentation.input_side, cfg.segmentation.cut_factor)
    return manifest, x, manifest.label_indices()


def cmd_train(args, cfg):
    from .classifier import history_csv, save_model, train
    from .classifier.training import evaluate
    from .config import with_section
    from .evaluation import split_dataset

    cfg = with_section(cfg, "classifier", arch=args.arch, epochs=args.epochs)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    manifest, x, y = _load_dataset(args.data or cfg.io.data, cfg)
    split = split_dataset(list(y), seed=cfg.seed)
    ccfg = cfg.classifier.build(len(manifest.class_names), cfg.segmentation.input_side, cfg.seed)
    out = Path(args.out or cfg.io.out or "model")
    out.mkdir(parents=True, exist_ok=True)

    def log(rec):
        _info(f"epoch {rec.epoch:3d}  lr {rec.lr:g}  train loss {rec.train_loss:.4f} "
              f"acc {rec.train_acc:.4f}  val loss {rec.val_loss:.4f} acc {rec.val_acc:.4f}")

    t0 = time.perf_counter()
    model, history = train(x[split["train"]], y[split["train"]], x[split["val"]], y[split["val"]],
                           ccfg, log=log)
    _info(f"training took {time.perf_counter() - t0:.1f} s")
    save_model(model, out / "weights.gkw", manifest.class_names)
    (out / "history.csv").write_text(history_csv(history))
    (out / "split.json").write_text(json.dumps(split, sort_keys=True) + "\n")
    _, test_acc = evaluate(model, x[split["test"]], y[split["test"]])
    best = max(history, key=lambda r: r.val_acc)
    print(f"best val accuracy {best.val_acc:.4f} (epoch {best.epoch}); test accuracy {test_acc:.4f}")
    print(f"wrote {out / 'weights.gkw'}")


def cmd_eval(args, cfg):
    import numpy as np

    from .classifier import load_model
    from .evaluation import (ConfusionMatrix, format_metrics_table, format_ttest_table, kfold,
                             metrics, metrics_csv, split_dataset, t_test)

    weights = args.weights or cfg.io.weights
    if not weights:
        raise UsageError("no weights given (use --weights or io.weights)")
    model, class_names = load_model(weights)
    manifest, x, y = _load_dataset(args.data or cfg.io.data, cfg)
    if list(manifest.class_names) != list(class_names):
        raise ValueError(f"dataset classes {manifest.class_names} do not match model classes {class_names}")
    if args.split == "all":
        idx = list(range(len(y)))
    else:
        idx = split_dataset(list(y), seed=model.config.seed)[args.split]
    x, y = x[idx], y[idx]
    pred = model.predict_proba(x).argmax(axis=1)
    cm = ConfusionMatrix.from_pairs(y, pred, len(class_names))
    m = metrics(cm)
    report = format_metrics_table(m, cm, class_names)
    csv = metrics_csv(m, class_names)
    if args.folds:
        folds = np.asarray(kfold(list(y), folds=args.folds, seed=model.config.seed))
        acc = [100.0 * float((pred[folds == f] == y[folds == f]).mean()) for f in range(args.folds)]
        r = t_test(acc, args.mu)
        report += "\n" + format_ttest_table(r)
        csv += (f"ttest_k,{r.k},,\nttest_mean,{r.mean:.6f},,\nttest_sd,{r.sd:.6f},,\n"
                f"ttest_se,{r.se:.6f},,\nttest_t,{r.t:.6f},,\nttest_df,{r.df},,\n"
                f"ttest_p_two,{r.p_two:.6g},,\nttest_ci95,{r.ci95[0]:.6f},{r.ci95[1]:.6f},\n")
    print(report, end="")
    if args.out:
        _write(args.out, csv)


def _region_record(i, name, region):
    rec = {"frame": i, "file": name, "found": region is not None}
    if region is not None:
        rec.update(palm_center=list(region.palm_center), palm_radius=int(region.palm_radius),
                   centroid=list(region.centroid_xy), area=int(region.contour.area),
                   bbox=list(region.contour.bbox))
    return rec


def cmd_segment(args, cfg):
    from .imaging import read_frame
    from .pipeline import PipelineError, check_frames, list_frames
    from .segmentation import BackgroundModel, segment_frame

    seg = cfg.segmentation.build()
    paths = list_frames(args.frames or cfg.io.frames)
    check_frames(paths)
    bg_path = args.background or cfg.io.background
    first = read_frame(paths[0])
    background = None
    if bg_path or first.channels == 3:
        background = BackgroundModel(read_frame(bg_path) if bg_path else first, seg.diff_threshold)
    lines = []
    for i, p in enumerate(paths):
        try:
            region = segment_frame(read_frame(p), background, seg)
        except ValueError as exc:
            raise PipelineError("segment", i, str(exc)) from exc
        lines.append(json.dumps(_region_record(i, p.name, region)) + "\n")
    _write(args.out, "".join(lines))


def cmd_track(args, cfg):
    import numpy as np

    from .tracking import TraceWriter, Tracker, map_to_screen, simulate_track, smoothness_report

    fps = cfg.hmi.fps
    if args.simulate:
        rng = np.random.default_rng(cfg.seed if args.seed is None else args.seed)
        _, centroids = simulate_track(args.simulate, args.sigma, rng, dropout=args.dropout)
    else:
        src = args.input
        if not src:
            raise UsageError("give --input segment.jsonl or --simulate N")
        centroids = []
        for lineno, line in enumerate(Path(src).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{src} line {lineno}: invalid JSON ({exc.msg})") from None
            c = rec.get("centroid")
            centroids.append(None if c is None else (float(c[0]), float(c[1])))
    tr = cfg.tracking
    tracker = Tracker(tr.model(), tr.p0, tr.max_coast)
    writer = TraceWriter()
    raw, smooth = [], []
    cam = (args.cam_width, args.cam_height)
    screen = (tr.screen_w, tr.screen_h)
    for i, c in enumerate(centroids):
        state = tracker.step(c, i)
        if state is None:
            continue
        sample = map_to_screen(state, cam, screen, raw=c, t_ms=i * 1000.0 / fps)
        writer.add(sample, state.coasting)
        if c is not None:
            raw.append(c)
            smooth.append((float(state.x[0]), float(state.x[1])))
    if tracker.state is None:
        raise ValueError("no detections to track")
    _write(args.out, writer.text())
    if len(raw) >= 2:
        r, s = smoothness_report(raw, smooth)
        _info(f"rms jitter raw {r.rms_jitter:.3f} px -> smoothed {s.rms_jitter:.3f} px; "
              f"max jump {r.max_jump:.3f} -> {s.max_jump:.3f} px")


def cmd_run(args, cfg):
    from .config import with_section
    from .evaluation import format_detection_table
    from .hmi import default_map, load_map, load_trace, monotonic_ms, run_session

    cfg = with_section(cfg, "hmi", context=args.context, k=args.k, conf_min=args.conf_min,
                       map=args.map)
    h = cfg.hmi
    gmap = load_map(h.map) if h.map else default_map(h.context)
    if gmap.context != h.context:
        raise ValueError(f"gesture map is for context {gmap.context!r}, run asked for {h.context!r}")
    clock = monotonic_ms if args.clock == "monotonic" else None
    tr = cfg.tracking
    screen = (tr.screen_w, tr.screen_h)
    trace = args.trace or cfg.io.trace
    frames_dir = args.frames or cfg.io.frames
    if trace and frames_dir:
        raise UsageError("give either --trace or --frames, not both")
    from .tracking import Tracker

    tracker = Tracker(tr.model(), tr.p0, tr.max_coast)
    if trace:
        obs = load_trace(trace)
        cam = (args.cam_width, args.cam_height)
    elif frames_dir:
        from .classifier import load_model
        from .imaging import read_frame
        from .pipeline import FramePipeline, check_frames, frame_observations, list_frames
        from .segmentation import BackgroundModel

        weights = args.weights or cfg.io.weights
        if not weights:
            raise UsageError("frames mode needs --weights")
        paths = list_frames(frames_dir)
        check_frames(paths)
        bg_path = args.background or cfg.io.background
        bg = BackgroundModel(read_frame(bg_path or paths[0]), cfg.segmentation.diff_threshold)
        model, class_names = load_model(weights)
        seg = cfg.segmentation.build()
        pipe = FramePipeline(bg, seg, model, class_names, tracker=Tracker(tr.model(), tr.p0, tr.max_coast))
        first = read_frame(paths[0])
        cam = (first.width, first.height)
        obs = list(frame_observations((read_frame(p) for p in paths), pipe, fps=h.fps))
    else:
        raise UsageError("give --trace FILE (replay) or --frames DIR")
    result = run_session(obs, gmap, k=h.k, conf_min=h.conf_min, cam_dims=cam, screen_dims=screen,
                         clock=clock, tracker=tracker)
    out = Path(args.out or cfg.io.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    (out / "actions.jsonl").write_text(result.log_text())
    (out / "state.json").write_text(json.dumps(result.state.to_dict(), indent=2, sort_keys=True) + "\n")
    rows = [{k: v for k, v in row.items() if k != "avg_response_ms"} for row in result.stats.rows()]
    (out / "stats.json").write_text(json.dumps(rows, indent=2) + "\n")
    print(f"{len(result.events)} action(s) in context {h.context}")
    if result.stats.actions:
        print(format_detection_table(result.stats), end="")


def cmd_bench(args, cfg):
    import numpy as np

    from .classifier import Classifier, ClassifierConfig, load_model
    from .pipeline import bench

    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    seg = cfg.segmentation.build()
    if args.weights:
        model, names = load_model(args.weights)
    else:
        model = Classifier(ClassifierConfig(n_classes=4, input_side=seg.input_side, seed=cfg.seed))
        names = DEFAULT_SHAPES[:4]
    runs = [bench(args.frames, model, names, seed=cfg.seed, seg=seg) for _ in range(args.repeats)]
    for i, r in enumerate(runs, start=1):
        if args.repeats > 1:
            print(f"repeat {i}")
        print("\n".join(r.lines()))
    if args.repeats > 1:
        fps = np.array([r.seg_track_fps for r in runs])
        print(f"segmentation+tracking fps over {args.repeats} repeats: mean {fps.mean():.1f}, "
              f"spread {(fps.max() - fps.min()) / fps.mean():.1%}")
    if args.out:
        rec = [{"frames": r.frames, "seg_track_fps": r.seg_track_fps, "full_fps": r.full_fps,
                "stage_ms": r.stage_ms, "detected": r.detected} for r in runs]
        _write(args.out, json.dumps(rec, indent=2) + "\n")


# --- argument parsing ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--threads", type=int, default=1, help="worker/BLAS threads (default 1)")
    common.add_argument("--clock", choices=("monotonic", "virtual"), default="monotonic",
                        help="response-time clock; 'virtual' makes run logs reproducible")

    p = _Parser(prog="gk", description="Hand-gesture segmentation, classification, tracking "
                                       "and command dispatch.")
    p.add_argument("--version", action="version",
                   version=f"gk {__version__} (config schema {SCHEMA_VERSION}, "
                           f"weights {WEIGHTS_FORMAT} v{WEIGHTS_VERSION})")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic mask dataset")
    s.add_argument("--classes", type=int, default=4, help="use the first N built-in shapes")
    s.add_argument("--shapes", help="comma-separated shape programs (overrides --classes)")
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--noise", type=float, default=0.01, help="speckle probability")
    s.add_argument("--scene", type=int, default=0, metavar="N",
                   help="instead write N synthetic 640x480 camera frames")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory (default io.data or ./dataset)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a classifier on a mask dataset")
    s.add_argument("--data", help="dataset directory holding manifest.csv")
    s.add_argument("--arch", choices=("tiny_cnn", "micro_vit"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory for weights and history")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate weights on a dataset split")
    s.add_argument("--weights")
    s.add_argument("--data")
    s.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    s.add_argument("--folds", type=int, default=0, help="per-fold accuracies + one-sample t-test")
    s.add_argument("--mu", type=float, default=99.0, help="t-test reference accuracy (%%)")
    s.add_argument("--out", help="metrics CSV path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("segment", parents=[common], help="segment frames to HandRegion JSONL")
    s.add_argument("--frames", help="directory of .ppm/.pgm frames")
    s.add_argument("--background", help="background frame (default: first frame)")
    s.add_argument("--out", help="JSONL output (default stdout)")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("track", parents=[common], help="Kalman-smooth centroids into a cursor trace")
    s.add_argument("--input", help="segment JSONL with centroids")
    s.add_argument("--simulate", type=int, default=0, metavar="N", help="use a simulated track")
    s.add_argument("--sigma", type=float, default=8.0)
    s.add_argument("--dropout", type=float, default=0.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--cam-width", type=int, default=640)
    s.add_argument("--cam-height", type=int, default=480)
    s.add_argument("--out", help="trace JSONL (default stdout)")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("run", parents=[common], help="debounce and dispatch gestures to a target")
    s.add_argument("--context", choices=("vlc", "audio", "mario", "mouse"))
    s.add_argument("--map", help="gesture map JSON (default: built-in table)")
    s.add_argument("--trace", help="prediction trace JSONL (replay mode)")
    s.add_argument("--frames", help="frame directory (full pipeline)")
    s.add_argument("--background")
    s.add_argument("--weights")
    s.add_argument("--k", type=int)
    s.add_argument("--conf-min", type=float)
    s.add_argument("--cam-width", type=int, default=640)
    s.add_argument("--cam-height", type=int, default=480)
    s.add_argument("--out", help="output directory (actions.jsonl, state.json, stats.json)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("bench", parents=[common], help="throughput on synthetic 640x480 frames")
    s.add_argument("--frames", type=int, default=1000)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--weights", help="classifier for the full path (default: untrained tiny CNN)")
    s.add_argument("--out", help="JSON results path")
    s.set_defaults(func=cmd_bench)
    return p


def _exit_code(exc: BaseException) -> int:
    from .classifier.ops import NumericError
    from .config import ConfigError
    from .tracking import TrackingError

    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    while exc is not None:
        if isinstance(exc, (NumericError, TrackingError, FloatingPointError, OverflowError)):
            return EXIT_NUMERIC
        exc = exc.__cause__
    return EXIT_DATA


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    _limit_threads(args.threads)
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except (UsageError, ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        stage = getattr(exc, "stage", None) or args.command
        print(f"gk {args.command}: {stage}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
