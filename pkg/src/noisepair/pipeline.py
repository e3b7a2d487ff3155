"""Operational glue: ingest streams, run detection + fusion, persist candidates.

Ingestion enforces the privacy floor (no frame period below 125 ms gets
past this point) and per-device timestamp order. The pipeline is
idempotent: candidate ids are derived from a hash of the inputs and
configuration plus the window start, so re-running the same job appends
nothing new.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detector import CnnModel, load_model, predict_stream
from .frontend import MelSpectrogram, PRIVACY_ERROR, PRIVACY_FLOOR_S, stack_channels
from .fusion import BundleSpec, FusionConfig, fuse_stream
from .store import CandidateEvent, EventStore
from .streams import iter_jsonl


@dataclass
class IngestResult:
    streams: dict[str, MelSpectrogram]
    device_errors: dict[str, str] = field(default_factory=dict)
    skipped_lines: int = 0


def ingest(path) -> IngestResult:
    """Validate and group a spectrogram stream file by device.

    Malformed lines are skipped and counted; a device with a sub-privacy
    frame period or out-of-order timestamps has its whole batch rejected,
    recorded under device_errors. Devices keep their own clocks; nothing is
    reordered across devices.
    """
    per_device: dict[str, dict] = {}
    errors: dict[str, str] = {}
    skipped = 0

    for rec in _iter_jsonl_tolerant(path):
        try:
            device = rec["device_id"]
            t = float(rec["t"])
            period = float(rec["period"])
            mel = rec["mel_db"]
            if not isinstance(mel, list) or not mel:
                raise ValueError
        except (KeyError, TypeError, ValueError):
            skipped += 1
            continue

        if device in errors:
            continue
        if period < PRIVACY_FLOOR_S:
            errors[device] = PRIVACY_ERROR
            per_device.pop(device, None)
            continue

        slot = per_device.setdefault(
            device, {"t0": t, "last_t": None, "period": period, "frames": []}
        )
        if slot["period"] != period:
            errors[device] = "inconsistent frame period"
            per_device.pop(device, None)
            continue
        if slot["last_t"] is not None and t < slot["last_t"]:
            errors[device] = f"non-monotonic timestamps (device {device})"
            per_device.pop(device, None)
            continue
        slot["last_t"] = t
        slot["frames"].append(mel)

    streams = {}
    for device, slot in per_device.items():
        streams[device] = MelSpectrogram(
            frames=np.asarray(slot["frames"], dtype=np.float64),
            frame_period_s=slot["period"],
            device_id=device,
            start_time_s=slot["t0"],
        )
    return IngestResult(streams=streams, device_errors=errors, skipped_lines=skipped)


def _iter_jsonl_tolerant(path):
    """JSONL iteration; unparsable lines come out as empty records so the
    caller counts them as skipped."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                yield rec if isinstance(rec, dict) else {}
            except json.JSONDecodeError:
                yield {}


@dataclass
class ModelPair:
    source: CnnModel
    receiver: CnnModel


def model_filename(role: str, order: int) -> str:
    return f"{role}_order{order}.json"


def resolve_bundle_models(models_dir, bundle: BundleSpec) -> ModelPair:
    """Load the trained pair matching a bundle's stack orders."""
    models_dir = Path(models_dir)
    src_path = models_dir / model_filename("source", bundle.source_order)
    rcv_path = models_dir / model_filename("receiver", bundle.receiver_order)
    if not src_path.exists() or not rcv_path.exists():
        raise FileNotFoundError(
            f"bundle models not found: expected {src_path.name} and "
            f"{rcv_path.name} in {models_dir}"
        )
    return ModelPair(source=load_model(src_path), receiver=load_model(rcv_path))


def _stream_digest(spec: MelSpectrogram) -> str:
    h = hashlib.sha256()
    h.update(spec.device_id.encode())
    h.update(np.ascontiguousarray(spec.frames).tobytes())
    h.update(f"{spec.start_time_s:.6f}:{spec.frame_period_s:.6f}".encode())
    return h.hexdigest()


def run_key(src: MelSpectrogram, rcv: MelSpectrogram, bundle: BundleSpec,
            fusion_cfg: FusionConfig, candidate_threshold: float) -> str:
    """Hash identifying one pipeline job; identical inputs give identical keys."""
    doc = {
        "src": _stream_digest(src),
        "rcv": _stream_digest(rcv),
        "bundle": [bundle.receiver_order, bundle.source_order],
        "fusion": [fusion_cfg.window_s, fusion_cfg.window_hop_s,
                   fusion_cfg.threshold_source, fusion_cfg.threshold_receiver,
                   fusion_cfg.max_drift_s, fusion_cfg.caption_max_aggregation],
        "threshold": candidate_threshold,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _context_payload(window_start, cfg, src_series, rcv_series, rcv_stream):
    pad = cfg.max_drift_s
    src_win = src_series.slice_time(window_start, window_start + cfg.window_s)
    rcv_win = rcv_series.slice_time(window_start - pad, window_start + cfg.window_s + pad)
    spec_win = rcv_stream.slice_time(window_start - pad, window_start + cfg.window_s + pad)
    return {
        "window_start_s": window_start,
        "window_s": cfg.window_s,
        "step_s": 0.375,
        "source_series": {
            "times": [round(float(t), 4) for t in src_win.times],
            "probs": [round(float(p), 4) for p in src_win.probs],
        },
        "receiver_series": {
            "times": [round(float(t), 4) for t in rcv_win.times],
            "probs": [round(float(p), 4) for p in rcv_win.probs],
        },
        "receiver_spectrogram": {
            "t0": round(float(spec_win.start_time_s), 4),
            "period": spec_win.frame_period_s,
            "mel_db": [[round(float(v), 1) for v in row] for row in spec_win.frames],
        },
    }


def run_pipeline(
    src_stream: MelSpectrogram,
    rcv_stream: MelSpectrogram,
    bundle: BundleSpec,
    models: ModelPair,
    store: EventStore,
    fusion_cfg: FusionConfig = FusionConfig(),
    candidate_threshold: float = 0.5,
) -> list[CandidateEvent]:
    """Detect, fuse, and persist pending candidates above the threshold.

    Returns the candidates newly added by this run (idempotent re-runs
    return an empty list and leave the store untouched).
    """
    src_stack = stack_channels(src_stream, bundle.source_order)
    rcv_stack = stack_channels(rcv_stream, bundle.receiver_order)
    src_series = predict_stream(models.source, src_stack)
    rcv_series = predict_stream(models.receiver, rcv_stack)

    verdicts = fuse_stream(src_series, rcv_series, fusion_cfg)
    key = run_key(src_stream, rcv_stream, bundle, fusion_cfg, candidate_threshold)

    added = []
    for v in verdicts:
        if v.score <= candidate_threshold:
            continue
        candidate_id = hashlib.sha256(
            f"{key}:{v.window_start_s:.3f}".encode()
        ).hexdigest()[:16]
        candidate = CandidateEvent(
            id=candidate_id,
            window_start_s=v.window_start_s,
            score=round(float(v.score), 6),
            branch=v.branch.value,
            source_device=src_stream.device_id,
            receiver_device=rcv_stream.device_id,
            lag_s=None if v.best_lag_s is None else round(float(v.best_lag_s), 4),
            context=_context_payload(v.window_start_s, fusion_cfg,
                                     src_series, rcv_series, rcv_stream),
        )
        if store.add_candidate(candidate):
            added.append(candidate)
    return added
