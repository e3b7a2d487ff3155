"""JSON Lines file formats shared by the sensors, simulator and service.

Spectrogram stream, one object per frame:
    {"device_id": "...", "t": <device-clock seconds>, "period": 0.125,
     "mel_db": [30 values]}
Frames must be in nondecreasing t order per device. The same format is both
the ingestion input and the simulator output.

Prediction series, one object per point:
    {"device_id": "...", "t": <window start>, "prob": <0..1>}

Labels / truth, one object per event:
    {"start": s, "end": s, "audibility": "clear|faint|not_heard"[, "origin": ...]}

Verdicts, one object per fused window:
    {"window_start": s, "score": r, "branch": "...", "lag_s": r|null}
"""

import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .events import EventLabel
from .frontend import MelSpectrogram


def iter_jsonl(path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_jsonl(path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def spectrogram_records(spec: MelSpectrogram, ndigits: int = 2) -> Iterator[dict]:
    """Frame records for one device, rounded for transport."""
    times = spec.frame_times()
    for i in range(spec.n_frames):
        yield {
            "device_id": spec.device_id,
            "t": round(float(times[i]), 6),
            "period": spec.frame_period_s,
            "mel_db": [round(float(v), ndigits) for v in spec.frames[i]],
        }


def write_spectrogram_stream(path, specs: Iterable[MelSpectrogram]) -> None:
    def records():
        for spec in specs:
            yield from spectrogram_records(spec)

    write_jsonl(path, records())


def write_labels(path, events: Iterable[EventLabel]) -> None:
    write_jsonl(path, (e.to_dict() for e in events))


def read_labels(path) -> list[EventLabel]:
    return [EventLabel.from_dict(d) for d in iter_jsonl(path)]


def prediction_records(series) -> Iterator[dict]:
    for t, p in zip(series.times, series.probs):
        yield {"device_id": series.device_id, "t": float(t), "prob": float(p)}


def write_prediction_series(path, series) -> None:
    write_jsonl(path, prediction_records(series))


def read_prediction_series(path):
    from .detector import PredictionSeries

    device, times, probs = "", [], []
    for rec in iter_jsonl(path):
        device = rec.get("device_id", device)
        times.append(float(rec["t"]))
        probs.append(float(rec["prob"]))
    if not times:
        raise ValueError("no predictions")
    return PredictionSeries(
        times=np.array(times), probs=np.array(probs), device_id=device
    )


def verdict_records(verdicts) -> Iterator[dict]:
    for v in verdicts:
        yield {
            "window_start": float(v.window_start_s),
            "score": float(v.score),
            "branch": v.branch.value,
            "lag_s": None if v.best_lag_s is None else float(v.best_lag_s),
        }


def write_verdicts(path, verdicts) -> None:
    write_jsonl(path, verdict_records(verdicts))


def read_verdicts(path):
    from .fusion import Branch, FusionVerdict

    verdicts = []
    for rec in iter_jsonl(path):
        verdicts.append(
            FusionVerdict(
                window_start_s=float(rec["window_start"]),
                score=float(rec["score"]),
                branch=Branch(rec["branch"]),
                best_lag_s=None if rec.get("lag_s") is None else float(rec["lag_s"]),
            )
        )
    return verdicts
