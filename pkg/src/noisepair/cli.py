"""Command line entry points, thin wrappers over the library.

Subcommands: synth | label | train | predict | fuse | eval | pipeline | serve.
The store path defaults to the NOISEPAIR_STORE environment variable.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .detector import TrainConfig, create_model, load_model, make_windows, predict_stream, save_model, train
from .evaluation import evaluate_verdicts, pr_curve, write_pr_csv
from .frontend import FrontendConfig, level_series, stack_channels
from .fusion import FusionConfig, bundle, bundle_by_name, fuse_stream
from .hmm import label_stream
from .pipeline import ingest, model_filename, resolve_bundle_models, run_pipeline
from .store import EventStore
from .streams import (
    read_labels,
    read_prediction_series,
    read_verdicts,
    write_labels,
    write_prediction_series,
    write_spectrogram_stream,
    write_verdicts,
)
from .synth import RECEIVER_DEVICE, SOURCE_DEVICE, ScenarioConfig, generate, scenario_spectrograms


def _pick_stream(result, device, path):
    for dev, msg in result.device_errors.items():
        print(f"warning: device {dev} rejected: {msg}", file=sys.stderr)
    if result.skipped_lines:
        print(f"warning: skipped {result.skipped_lines} malformed lines", file=sys.stderr)
    if device is None:
        if len(result.streams) != 1:
            raise SystemExit(
                f"{path} contains devices {sorted(result.streams)}; pass --device"
            )
        return next(iter(result.streams.values()))
    if device not in result.streams:
        raise SystemExit(f"device {device!r} not found in {path}")
    return result.streams[device]


def cmd_synth(args):
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = ScenarioConfig(**overrides)
    scenario = generate(cfg)
    streams = scenario_spectrograms(scenario)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_spectrogram_stream(out / "source.jsonl", [streams[SOURCE_DEVICE]])
    write_spectrogram_stream(out / "receiver.jsonl", [streams[RECEIVER_DEVICE]])
    write_labels(out / "truth.jsonl", scenario.truth.events)
    write_labels(out / "labels_source.jsonl", scenario.truth.source_local_events())
    write_labels(out / "labels_receiver.jsonl", scenario.truth.receiver_local_events())
    print(
        f"wrote {len(scenario.truth.events)} truth events and two streams "
        f"({scenario.truth.duration_s:.0f} s) to {out}"
    )


def cmd_label(args):
    stream = _pick_stream(ingest(args.stream), args.device, args.stream)
    labels = label_stream(
        level_series(stream), tol=args.tol, max_iter=args.max_iter, seed=args.seed
    )
    write_labels(args.out, labels)
    print(f"wrote {len(labels)} proposed event spans to {args.out}")


def cmd_train(args):
    stream = _pick_stream(ingest(args.stream), args.device, args.stream)
    events = read_labels(args.labels)
    positives = [e for e in events if e.audibility is None or e.binary]
    stack = stack_channels(stream, args.order)
    windows = make_windows(stack, events=positives)
    model = create_model(args.order + 1, seed=args.seed)
    result = train(
        model,
        windows,
        TrainConfig(
            learning_rate=args.learning_rate,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
        ),
    )
    save_model(result.model, args.out)
    n_pos = sum(1 for w in windows if w.label)
    print(
        f"trained on {len(windows)} windows ({n_pos} positive), "
        f"final loss {result.loss_history[-1]:.4f}, saved to {args.out}"
    )


def cmd_predict(args):
    stream = _pick_stream(ingest(args.stream), args.device, args.stream)
    model = load_model(args.model)
    series = predict_stream(model, stack_channels(stream, model.input_channels - 1))
    write_prediction_series(args.out, series)
    print(f"wrote {len(series)} predictions to {args.out}")


def _fusion_config(args) -> FusionConfig:
    return FusionConfig(
        window_s=args.window,
        window_hop_s=args.hop,
        threshold_source=args.threshold_src,
        threshold_receiver=args.threshold_rcv,
        max_drift_s=args.max_drift,
        caption_max_aggregation=args.caption_max,
    )


def cmd_fuse(args):
    src = read_prediction_series(args.src)
    rcv = read_prediction_series(args.rcv)
    verdicts = fuse_stream(src, rcv, _fusion_config(args))
    write_verdicts(args.out, verdicts)
    hot = sum(1 for v in verdicts if v.score > 0.5)
    print(f"wrote {len(verdicts)} window verdicts ({hot} above 0.5) to {args.out}")


def cmd_eval(args):
    verdicts = read_verdicts(args.verdicts)
    truth = read_labels(args.truth)
    samples = evaluate_verdicts(verdicts, truth, window_s=args.window)
    curve = pr_curve(samples)
    if args.out_csv:
        write_pr_csv(args.out_csv, curve)
    print(
        f"AP {curve.ap:.4f}  optimal F1 {curve.optimal_f1:.4f} "
        f"at threshold {curve.optimal_threshold:.4f}"
        + (f"  (curve -> {args.out_csv})" if args.out_csv else "")
    )


def cmd_pipeline(args):
    src = _pick_stream(ingest(args.src), args.src_device, args.src)
    rcv = _pick_stream(ingest(args.rcv), args.rcv_device, args.rcv)
    spec = bundle_by_name(args.bundle) if args.bundle in ("one", "two") else bundle(
        args.receiver_order, args.source_order
    )
    models = resolve_bundle_models(args.models, spec)
    store = EventStore(args.store)
    added = run_pipeline(
        src, rcv, spec, models, store,
        fusion_cfg=_fusion_config(args),
        candidate_threshold=args.candidate_threshold,
    )
    print(f"added {len(added)} candidates (store now {store.summary()})")


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    store = EventStore(args.store)
    app = create_app(store, ui_dir=args.ui, pr_csv=args.pr_csv)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def _add_fusion_flags(p):
    p.add_argument("--window", type=float, default=26.0)
    p.add_argument("--hop", type=float, default=13.0)
    p.add_argument("--threshold-src", type=float, default=0.8)
    p.add_argument("--threshold-rcv", type=float, default=0.6)
    p.add_argument("--max-drift", type=float, default=10.0)
    p.add_argument("--caption-max", action="store_true",
                   help="score windows with the max of both series maxima")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisepair",
        description="Paired-sensor impulsive noise origin pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired scenario")
    p.add_argument("--config", help="JSON file of scenario parameters")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="propose event spans with the 2-state labeler")
    p.add_argument("--stream", required=True)
    p.add_argument("--device", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a detector on a labeled stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--device", default=None)
    p.add_argument("--labels", required=True)
    p.add_argument("--order", type=int, default=0, choices=(0, 1, 2, 3))
    p.add_argument("--out", required=True)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a stream with a trained model")
    p.add_argument("--stream", required=True)
    p.add_argument("--device", default=None)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fuse", help="combine two prediction series into verdicts")
    p.add_argument("--src", required=True)
    p.add_argument("--rcv", required=True)
    p.add_argument("--bundle", default="custom",
                   help="one|two|custom (bookkeeping only at this stage)")
    _add_fusion_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score verdicts against truth events")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--window", type=float, default=26.0)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="detect + fuse + persist candidates")
    p.add_argument("--src", required=True)
    p.add_argument("--rcv", required=True)
    p.add_argument("--src-device", default=None)
    p.add_argument("--rcv-device", default=None)
    p.add_argument("--models", required=True, help="directory of trained models")
    p.add_argument("--bundle", default="one")
    p.add_argument("--receiver-order", type=int, default=0)
    p.add_argument("--source-order", type=int, default=3)
    _add_fusion_flags(p)
    p.add_argument("--candidate-threshold", type=float, default=0.5)
    p.add_argument("--store", default=os.environ.get("NOISEPAIR_STORE"),
                   help="store path (default: $NOISEPAIR_STORE)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("serve", help="run the review HTTP API / UI")
    p.add_argument("--store", default=os.environ.get("NOISEPAIR_STORE"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--ui", default=None, help="directory of built UI assets")
    p.add_argument("--pr-csv", default=None, help="PR curve CSV to expose")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("pipeline", "serve") and not args.store:
        raise SystemExit("no store path: pass --store or set NOISEPAIR_STORE")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
