"""Paired-stream scenario generator with ground truth.

Events are short broadband bursts (exponentially decaying white noise,
50-200 ms) on white-noise backgrounds, fired at fixed spacing, optionally
grouped into repetition series with pauses between groups the way acoustic
tests are run. The receiver copy of each burst is delayed by the
propagation time, attenuated to the receiver SNR, possibly rendered faint
or dropped entirely, and the receiver's timestamps are shifted by its
clock offset. Interfering bursts appear only at the receiver. Everything
is driven by one seed; the clock offset affects timestamps and truth only,
never the waveforms.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .events import Audibility, EventLabel, ORIGIN_INTERFERER, ORIGIN_SOURCE
from .frontend import AudioClip, FrontendConfig, MelSpectrogram, compute_mel_spectrogram

SOURCE_DEVICE = "source"
RECEIVER_DEVICE = "receiver"


@dataclass(frozen=True)
class ScenarioConfig:
    n_events: int = 10
    event_spacing_s: float = 30.0
    source_snr_db: float = 20.0
    receiver_snr_db: float = 6.0
    propagation_delay_s: float = 0.3
    clock_offset_s: float = 0.0
    p_not_heard: float = 0.0
    p_faint: float = 0.0
    n_interferers: int = 0
    seed: int = 0
    # events per repetition series; 0 means one continuous series
    repetitions_per_series: int = 0
    series_gap_s: float = 120.0
    onset_s: float = 2.0
    # fraction of clear events rendered quieter at the receiver (still
    # clearly audible truth, but below detector confidence)
    p_quiet: float = 0.0
    quiet_drop_db: float = 6.0
    interferer_snr_db: float | None = None
    background_level_db: float = -50.0
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if self.n_events < 1:
            raise ValueError("invalid scenario: n_events must be >= 1")
        if abs(self.clock_offset_s) > 10.0:
            raise ValueError("invalid scenario: |clock_offset_s| must be <= 10")
        for p in (self.p_not_heard, self.p_faint, self.p_quiet):
            if not 0.0 <= p <= 1.0:
                raise ValueError("invalid scenario: probabilities must be in [0, 1]")
        if self.p_not_heard + self.p_faint > 1.0:
            raise ValueError("invalid scenario: p_not_heard + p_faint > 1")
        for v in (self.source_snr_db, self.receiver_snr_db):
            if not math.isfinite(v):
                raise ValueError("invalid scenario: SNR must be finite")
        if self.event_spacing_s < 1.0:
            raise ValueError("invalid scenario: event spacing must be >= 1 s")
        if self.onset_s < 0 or self.propagation_delay_s < 0:
            raise ValueError("invalid scenario: times must be nonnegative")


@dataclass
class ScenarioTruth:
    events: list[EventLabel]
    clock_offsets: dict[str, float]
    duration_s: float
    propagation_delay_s: float = 0.0

    def source_events(self) -> list[EventLabel]:
        return [e for e in self.events if e.origin == ORIGIN_SOURCE]

    def source_local_events(self) -> list[EventLabel]:
        """Spans for training the source detector: every fired event,
        regardless of how it carried to the receiver."""
        return self.source_events()

    def receiver_local_events(self) -> list[EventLabel]:
        """Spans audible at the receiver, on the receiver's own clock.

        Clear source events arrive after the propagation delay; interferers
        are local. Faint and unheard events count as absence. This mirrors
        aligning labels to a device before window labeling.
        """
        offset = self.clock_offsets.get(RECEIVER_DEVICE, 0.0)
        out = []
        for e in self.events:
            if e.origin == ORIGIN_SOURCE and e.binary:
                shift = offset + self.propagation_delay_s
            elif e.origin == ORIGIN_INTERFERER:
                shift = offset
            else:
                continue
            out.append(replace(e, start_s=e.start_s + shift, end_s=e.end_s + shift))
        return out


@dataclass
class GeneratedScenario:
    source: AudioClip
    receiver: AudioClip
    truth: ScenarioTruth


def _event_start_times(cfg: ScenarioConfig) -> list[float]:
    reps = cfg.repetitions_per_series
    starts = []
    for k in range(cfg.n_events):
        if reps and reps > 0:
            group, within = divmod(k, reps)
            t = cfg.onset_s + group * (reps * cfg.event_spacing_s + cfg.series_gap_s)
            t += within * cfg.event_spacing_s
        else:
            t = cfg.onset_s + k * cfg.event_spacing_s
        starts.append(t)
    return starts


def _burst(rng: np.random.Generator, duration_s: float, sr: int) -> np.ndarray:
    """Unit-mean-power decaying noise burst."""
    n = max(8, int(round(duration_s * sr)))
    t = np.arange(n) / sr
    tau = duration_s / 4.0
    u = np.exp(-t / tau) * rng.standard_normal(n)
    rms = math.sqrt(float(np.mean(u**2)))
    return u / max(rms, 1e-12)


def _add(buffer: np.ndarray, start_s: float, burst: np.ndarray, amp: float, sr: int):
    i = int(round(start_s * sr))
    j = min(i + burst.size, buffer.size)
    if i < buffer.size:
        buffer[i:j] += amp * burst[: j - i]


def generate(cfg: ScenarioConfig) -> GeneratedScenario:
    """Seed-deterministic paired clips plus ground truth.

    Truth times are on the source (reference) clock; the receiver clip's
    start_time_s carries its clock offset so its frame timestamps come out
    shifted, while waveform content is independent of the offset.
    """
    rng = np.random.default_rng(cfg.seed)
    sr = cfg.sample_rate_hz
    starts = _event_start_times(cfg)

    # Per-event randomness, drawn before any background noise so the event
    # structure is stable under config tweaks that only change lengths.
    durations = rng.uniform(0.05, 0.2, cfg.n_events)
    bursts = [_burst(rng, d, sr) for d in durations]
    audibility_dice = rng.random(cfg.n_events)
    quiet_dice = rng.random(cfg.n_events)

    duration_s = starts[-1] + cfg.event_spacing_s
    n_samples = int(round(duration_s * sr))

    interferer_starts = []
    interferer_bursts = []
    if cfg.n_interferers > 0:
        inter_durations = rng.uniform(0.05, 0.2, cfg.n_interferers)
        attempts = 0
        while len(interferer_starts) < cfg.n_interferers and attempts < 10000:
            attempts += 1
            t = float(rng.uniform(cfg.onset_s, max(duration_s - 1.0, cfg.onset_s + 1.0)))
            if all(abs(t - u) >= 1.0 + 0.2 for u in interferer_starts):
                interferer_starts.append(t)
        interferer_starts.sort()
        interferer_bursts = [_burst(rng, d, sr) for d in inter_durations]

    sigma_bg = 10.0 ** (cfg.background_level_db / 20.0)
    amp_source = sigma_bg * 10.0 ** (cfg.source_snr_db / 20.0)
    amp_receiver = sigma_bg * 10.0 ** (cfg.receiver_snr_db / 20.0)
    inter_snr = cfg.interferer_snr_db if cfg.interferer_snr_db is not None else cfg.receiver_snr_db
    amp_interferer = sigma_bg * 10.0 ** (inter_snr / 20.0)

    source_samples = sigma_bg * rng.standard_normal(n_samples)
    receiver_samples = sigma_bg * rng.standard_normal(n_samples)

    events = []
    for k, (t, dur, burst) in enumerate(zip(starts, durations, bursts)):
        _add(source_samples, t, burst, amp_source, sr)

        r = audibility_dice[k]
        if r < cfg.p_not_heard:
            audibility = Audibility.NOT_HEARD
        elif r < cfg.p_not_heard + cfg.p_faint:
            audibility = Audibility.FAINT
        else:
            audibility = Audibility.CLEAR

        if audibility != Audibility.NOT_HEARD:
            amp = amp_receiver
            if audibility == Audibility.FAINT:
                amp *= 10.0 ** (-10.0 / 20.0)
            elif quiet_dice[k] < cfg.p_quiet:
                amp *= 10.0 ** (-cfg.quiet_drop_db / 20.0)
            _add(receiver_samples, t + cfg.propagation_delay_s, burst, amp, sr)

        events.append(EventLabel(t, t + dur, audibility, origin=ORIGIN_SOURCE))

    for t, burst in zip(interferer_starts, interferer_bursts):
        _add(receiver_samples, t, burst, amp_interferer, sr)
        events.append(
            EventLabel(t, t + burst.size / sr, Audibility.CLEAR, origin=ORIGIN_INTERFERER)
        )

    events.sort(key=lambda e: e.start_s)
    truth = ScenarioTruth(
        events=events,
        clock_offsets={SOURCE_DEVICE: 0.0, RECEIVER_DEVICE: cfg.clock_offset_s},
        duration_s=duration_s,
        propagation_delay_s=cfg.propagation_delay_s,
    )
    return GeneratedScenario(
        source=AudioClip(source_samples, sr, SOURCE_DEVICE, start_time_s=0.0),
        receiver=AudioClip(receiver_samples, sr, RECEIVER_DEVICE,
                           start_time_s=cfg.clock_offset_s),
        truth=truth,
    )


def scenario_spectrograms(
    scenario: GeneratedScenario, frontend: FrontendConfig = FrontendConfig()
) -> dict[str, MelSpectrogram]:
    """Both devices' streams in the transmissible representation."""
    return {
        SOURCE_DEVICE: compute_mel_spectrogram(scenario.source, frontend),
        RECEIVER_DEVICE: compute_mel_spectrogram(scenario.receiver, frontend),
    }


@dataclass
class ScenarioPartition:
    t_lo: float
    t_hi: float
    streams: dict[str, MelSpectrogram]
    events: list[EventLabel]


def split(
    truth: ScenarioTruth,
    streams: dict[str, MelSpectrogram],
    ratios,
) -> list[ScenarioPartition]:
    """Contiguous time-based partitions; boundaries never split an event.

    A boundary landing inside an event span is moved to the nearest gap
    midpoint between events. Stream slices account for each device's clock
    offset so all partitions line up on the reference timeline.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    total = truth.duration_s
    spans = sorted((e.start_s, e.end_s) for e in truth.events)

    gap_points = [0.0]
    for (s1, e1), (s2, _) in zip(spans, spans[1:]):
        if s2 > e1:
            gap_points.append((e1 + s2) / 2.0)
    gap_points.append(total)

    boundaries = [0.0]
    acc = 0.0
    for r in ratios[:-1]:
        acc += r
        b = acc * total
        if any(s < b < e for s, e in spans):
            b = min(gap_points, key=lambda g: abs(g - b))
        boundaries.append(b)
    boundaries.append(total)

    parts = []
    for t_lo, t_hi in zip(boundaries, boundaries[1:]):
        part_streams = {}
        for device, spec in streams.items():
            off = truth.clock_offsets.get(device, 0.0)
            part_streams[device] = spec.slice_time(t_lo + off, t_hi + off)
        part_events = [e for e in truth.events if e.start_s >= t_lo and e.end_s <= t_hi]
        parts.append(ScenarioPartition(t_lo, t_hi, part_streams, part_events))
    return parts
