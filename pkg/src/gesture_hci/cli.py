"""Command-line entry point: run / train / eval / synth / frames / calibrate.

Exit codes: 0 success, 1 usage, 2 I/O, 3 config/model mismatch.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cnn, synth
from .cnn import ModelFormatError, TrainConfig
from .netpbm import NetpbmError
from .pipeline import ConfigError, PipelineConfig, calibrate, iter_frame_dir, run_pipeline
from .responder import load_bindings
from .sinks import StreamSink, open_sink
from .synth import DatasetError
from .tracksmooth import write_track_csv

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MISMATCH = 0, 1, 2, 3

log = logging.getLogger("gesture_hci")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _patch(text: str):
    try:
        x, y, w, h = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("patch must be x,y,w,h") from None
    return x, y, w, h


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gesture-hci", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run the pipeline over a frame directory")
    r.add_argument("--frames", required=True)
    r.add_argument("--config")
    r.add_argument("--model")
    r.add_argument("--bindings")
    r.add_argument("--sink", default="stdout", help="stdout or tcp:HOST:PORT")
    r.add_argument("--log", help="also write the event log to this file")
    r.add_argument("--trace", help="per-frame JSON lines")
    r.add_argument("--track-csv", help="raw/filtered/screen trajectory CSV")

    t = sub.add_parser("train", help="train a classifier on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--alpha", type=float, default=1e-4)
    t.add_argument("--mu", type=float, default=0.9)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.add_argument("--shift", type=int, default=3, help="training translation jitter in px")

    e = sub.add_parser("eval", help="evaluate a model on a dataset directory")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--confusion", help="write the confusion matrix CSV here")

    s = sub.add_parser("synth", help="generate a synthetic silhouette dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--per-class", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)

    f = sub.add_parser("frames", help="render a synthetic frame sequence")
    f.add_argument("--out", required=True)
    f.add_argument("--script", choices=("transition", "sweep"), default="transition")
    f.add_argument("--first", default="Palm")
    f.add_argument("--second", default="Fist")
    f.add_argument("--length", type=int, default=40)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--color", action="store_true")

    c = sub.add_parser("calibrate", help="derive background/colour config")
    c.add_argument("--frame", required=True, help="background reference frame (P6)")
    c.add_argument("--patch", required=True, type=_patch, help="x,y,w,h of a hand patch")
    c.add_argument("--out", required=True)
    c.add_argument("--hand", help="frame to sample the patch from (default: --frame)")
    return p


def _write_curves(path, losses, accs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "heldout_accuracy"])
        for i, l in enumerate(losses):
            w.writerow([i + 1, f"{l:.6f}", f"{accs[i]:.6f}" if i < len(accs) else ""])


def _write_confusion(path, conf, names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, conf):
            w.writerow([name, *row.tolist()])


def cmd_run(args) -> int:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    model_path = args.model or cfg.model_path
    bindings_path = args.bindings or cfg.bindings_path
    if not model_path or not bindings_path:
        raise UsageError("run needs --model and --bindings (or model.path/bindings.path)")
    model = cnn.load_model(model_path)
    bindings = load_bindings(bindings_path)
    sink = open_sink(args.sink)
    log_sink = StreamSink(open(args.log, "w")) if args.log else None
    trace = open(args.trace, "w") if args.trace else None
    raw, filt, lat, n_events = [], [], [], 0
    try:
        for fe in run_pipeline(iter_frame_dir(args.frames), model, bindings, cfg):
            recs = fe.records()
            n_events += len(recs)
            sink.publish(recs)
            if log_sink:
                log_sink.publish(recs)
            if trace:
                trace.write(json.dumps(fe.to_json()) + "\n")
            raw.append(fe.raw)
            filt.append(fe.filtered)
            lat.append(fe.latency_ms)
    finally:
        for h in (log_sink, trace):
            if h:
                h.close()
        if args.sink != "stdout":
            sink.close()
    if args.track_csv:
        write_track_csv(args.track_csv, raw, filt, cfg.screen)
    p95 = float(np.percentile(lat, 95)) if lat else 0.0
    print(f"frames={len(lat)} events={n_events} dropped={sink.dropped} "
          f"p95_latency_ms={p95:.1f}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    ds = synth.read_dataset(args.data)
    cfg = TrainConfig(alpha=args.alpha, mu=args.mu, batch_size=args.batch_size,
                      epochs=args.epochs, seed=args.seed, val_fraction=args.val_fraction,
                      shift=args.shift)

    def progress(epoch, loss, acc):
        log.info("epoch %d loss %.4f heldout %.4f", epoch + 1, loss, acc if acc is not None else -1)

    res = cnn.train(ds, cfg, log=progress)
    out = Path(args.out)
    cnn.save_model(res.model, out)
    _write_curves(out.with_suffix(".curves.csv"), res.losses, res.accuracies)
    report = {"model": str(out), "epochs": cfg.epochs,
              "final_loss": res.losses[-1] if res.losses else None}
    if res.heldout is not None and len(res.heldout):
        acc, conf = cnn.evaluate(res.model, res.heldout)
        _write_confusion(out.with_suffix(".confusion.csv"), conf, ds.class_names)
        report["heldout_accuracy"] = acc
    print(json.dumps(report))
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = synth.read_dataset(args.data)
    model = cnn.load_model(args.model)
    if model.class_names != ds.class_names:
        raise ModelFormatError("model classes do not match the dataset manifest")
    acc, conf = cnn.evaluate(model, ds)
    if args.confusion:
        _write_confusion(args.confusion, conf, ds.class_names)
    print(json.dumps({"accuracy": acc, "samples": len(ds),
                      "confusion": conf.tolist(), "classes": ds.class_names}))
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = synth.synth_dataset(args.classes, args.per_class, args.seed)
    synth.write_dataset(ds, args.out)
    print(json.dumps({"out": args.out, "classes": ds.class_names, "samples": len(ds)}))
    return EXIT_OK


def cmd_frames(args) -> int:
    if args.script == "transition":
        script = synth.transition_script(args.first, args.second, args.length, args.length)
    else:
        script = synth.sweep_script(args.first, args.length)
    frames = synth.render_sequence(script, seed=args.seed, color=args.color)
    synth.write_frames(frames, args.out)
    print(json.dumps({"out": args.out, "frames": len(frames)}))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    frag = calibrate(args.frame, args.patch, args.out, hand_path=args.hand)
    print(json.dumps(frag))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "train": cmd_train, "eval": cmd_eval, "synth": cmd_synth,
            "frames": cmd_frames, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"gesture-hci: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ModelFormatError) as exc:
        print(f"gesture-hci: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (OSError, NetpbmError, DatasetError) as exc:
        print(f"gesture-hci: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"gesture-hci: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
