"""Mel spectrogram frontend for paired noise sensors.

Raw audio never leaves this module: everything downstream works on mel
spectrograms with a frame period of at least 125 ms, which is the floor
below which speech becomes intelligible again. Each 125 ms frame is the
dB of mel-filtered average power over that block, computed from short
Hann sub-windows inside the block.
"""

import math
from dataclasses import dataclass, field

import numpy as np

PRIVACY_FLOOR_S = 0.125
PRIVACY_ERROR = "privacy violation: frame period too small"

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_N_MELS = 30
DEFAULT_DB_FLOOR = -80.0
DB_EPS = 1e-10


@dataclass(frozen=True)
class FrontendConfig:
    """Parameters of the on-sensor preprocessing.

    The exported frame period is the privacy-relevant quantity; the STFT
    sub-window/hop only affect how power is estimated inside each block.
    """

    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    n_mels: int = DEFAULT_N_MELS
    frame_period_s: float = PRIVACY_FLOOR_S
    f_min_hz: float = 50.0
    f_max_hz: float | None = None  # None -> Nyquist
    stft_window_s: float = 0.032
    stft_hop_s: float = 0.016
    floor_db: float = DEFAULT_DB_FLOOR

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.frame_period_s < PRIVACY_FLOOR_S:
            raise ValueError(PRIVACY_ERROR)

    @property
    def f_max_effective_hz(self) -> float:
        return self.sample_rate_hz / 2 if self.f_max_hz is None else self.f_max_hz


@dataclass
class AudioClip:
    """Raw audio on one device's own clock. Never transmitted or persisted."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    device_id: str = ""
    start_time_s: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass
class MelSpectrogram:
    """Per-device time series of mel-band dB frames.

    frames has shape [n_frames, n_mels]. This is the unit of transmission;
    construction with a frame period under the privacy floor is rejected.
    """

    frames: np.ndarray
    frame_period_s: float = PRIVACY_FLOOR_S
    device_id: str = ""
    start_time_s: float = 0.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError("frames must be a 2-d [n_frames, n_mels] array")
        if self.frame_period_s < PRIVACY_FLOOR_S:
            raise ValueError(PRIVACY_ERROR)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    def frame_times(self) -> np.ndarray:
        return self.start_time_s + np.arange(self.n_frames) * self.frame_period_s

    def slice_time(self, t_lo: float, t_hi: float) -> "MelSpectrogram":
        """Frames whose start time falls in [t_lo, t_hi)."""
        times = self.frame_times()
        lo = int(np.searchsorted(times, t_lo - 1e-9, side="left"))
        hi = int(np.searchsorted(times, t_hi - 1e-9, side="left"))
        return MelSpectrogram(
            frames=self.frames[lo:hi].copy(),
            frame_period_s=self.frame_period_s,
            device_id=self.device_id,
            start_time_s=self.start_time_s + lo * self.frame_period_s,
        )


@dataclass
class ChannelStack:
    """Spectrogram plus its first k time differences, stacked as channels.

    tensor has shape [order + 1, n_mels, n_frames]; channel 0 is the base
    spectrogram, channel k its order-k difference.
    """

    tensor: np.ndarray
    order: int
    device_id: str = ""
    start_time_s: float = 0.0
    frame_period_s: float = PRIVACY_FLOOR_S

    @property
    def n_channels(self) -> int:
        return self.tensor.shape[0]

    @property
    def n_frames(self) -> int:
        return self.tensor.shape[2]


@dataclass
class LevelSeries:
    """Per-frame broadband dB level, used by the two-state labeler."""

    values: np.ndarray
    frame_period_s: float = PRIVACY_FLOOR_S
    device_id: str = ""
    start_time_s: float = 0.0

    def __len__(self) -> int:
        return self.values.size


def hz_to_mel(f_hz):
    """Map frequency to mel via 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(
    n_mels: int,
    fft_bins: int,
    sample_rate_hz: int,
    f_min_hz: float,
    f_max_hz: float,
) -> np.ndarray:
    """Triangular mel-spaced filterbank, [n_mels, fft_bins].

    fft_bins is the number of one-sided spectrum bins (n_fft // 2 + 1),
    assumed to span 0..Nyquist linearly. Rows are unit-peak triangles
    ordered by ascending center frequency.
    """
    if n_mels < 1:
        raise ValueError("invalid filterbank config: n_mels must be >= 1")
    if not (0.0 <= f_min_hz < f_max_hz <= sample_rate_hz / 2):
        raise ValueError(
            "invalid filterbank config: need 0 <= f_min < f_max <= nyquist"
        )
    freqs = np.linspace(0.0, sample_rate_hz / 2, fft_bins)
    mel_edges = np.linspace(hz_to_mel(f_min_hz), hz_to_mel(f_max_hz), n_mels + 2)
    hz_edges = mel_to_hz(mel_edges)

    fb = np.zeros((n_mels, fft_bins))
    for m in range(n_mels):
        lo, center, hi = hz_edges[m], hz_edges[m + 1], hz_edges[m + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def power_to_db(power, floor_db: float = DEFAULT_DB_FLOOR, eps: float = DB_EPS):
    """dB of power relative to full scale 1.0, clamped at floor_db.

    Returns max(10 * log10(power + eps), floor_db); monotone nondecreasing
    in power. Scalar in, scalar out; arrays pass through elementwise.
    """
    arr = np.asarray(power, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("invalid power: must be nonnegative")
    db = np.maximum(10.0 * np.log10(arr + eps), floor_db)
    if np.isscalar(power) or getattr(power, "ndim", 1) == 0:
        return float(db)
    return db


def _hann(n: int) -> np.ndarray:
    # Symmetric Hann; for n == 1 a rectangular window avoids an all-zero taper.
    if n == 1:
        return np.ones(1)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def compute_mel_spectrogram(
    clip: AudioClip, config: FrontendConfig = FrontendConfig()
) -> MelSpectrogram:
    """Convert a raw clip into 125 ms mel dB frames.

    Each frame covers one frame_period_s block: Hann sub-windows inside the
    block are transformed, their power spectra averaged, mel-filtered and
    converted to dB. n_frames = floor(duration / frame_period_s). Trailing
    samples that do not fill a block are dropped. Deterministic.
    """
    samples = clip.samples
    if samples.size == 0 or not np.all(np.isfinite(samples)):
        raise ValueError("invalid audio: empty or non-finite samples")
    if clip.sample_rate_hz != config.sample_rate_hz:
        raise ValueError(
            f"unsupported sample rate {clip.sample_rate_hz}; "
            f"expected {config.sample_rate_hz} (resampling is out of scope)"
        )

    sr = config.sample_rate_hz
    block = int(round(config.frame_period_s * sr))
    n_frames = samples.size // block
    if n_frames == 0:
        raise ValueError("insufficient audio: clip shorter than one frame")

    win = min(int(round(config.stft_window_s * sr)), block)
    hop = max(1, int(round(config.stft_hop_s * sr)))
    n_sub = (block - win) // hop + 1
    window = _hann(win)
    fft_bins = win // 2 + 1
    fb = build_mel_filterbank(
        config.n_mels, fft_bins, sr, config.f_min_hz, config.f_max_effective_hz
    ).T  # [fft_bins, n_mels]

    blocks = samples[: n_frames * block].reshape(n_frames, block)
    frames = np.empty((n_frames, config.n_mels))
    # Index grid pulling every sub-window out of a block: [n_sub, win]
    sub_idx = np.arange(n_sub)[:, None] * hop + np.arange(win)[None, :]
    # Chunk over blocks so the sub-window tensor stays small on long clips.
    chunk = 4096
    for start in range(0, n_frames, chunk):
        part = blocks[start : start + chunk]
        sub = part[:, sub_idx]  # [n_part, n_sub, win]
        spec = np.fft.rfft(sub * window, axis=-1)
        power = spec.real**2 + spec.imag**2
        mean_power = power.mean(axis=1)  # [n_part, fft_bins]
        frames[start : start + chunk] = 10.0 * np.log10(mean_power @ fb + DB_EPS)
    np.maximum(frames, config.floor_db, out=frames)

    return MelSpectrogram(
        frames=frames,
        frame_period_s=config.frame_period_s,
        device_id=clip.device_id,
        start_time_s=clip.start_time_s,
    )


def delta(spec: np.ndarray, order: int = 1) -> np.ndarray:
    """Order-k time difference of a [n_frames, n_mels] matrix.

    Applies the first difference `order` times along the time axis, with the
    first frame replicated so output length equals input length (the first
    `order` rows are therefore boundary values, zero for order 1).
    """
    if order < 1:
        raise ValueError("delta order must be >= 1")
    x = np.asarray(spec, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("too short for delta: need at least 2 frames")
    for _ in range(order):
        x = np.diff(x, axis=0, prepend=x[:1])
    return x


def stack_channels(spec: MelSpectrogram, order: int) -> ChannelStack:
    """Base spectrogram plus deltas up to `order`, as [order+1, n_mels, n_frames].

    order 0 is the plain mel representation; orders 1..3 append the
    corresponding difference channels.
    """
    if order not in (0, 1, 2, 3):
        raise ValueError("unsupported stack order: must be in 0..3")
    channels = [spec.frames.T]
    for k in range(1, order + 1):
        channels.append(delta(spec.frames, k).T)
    return ChannelStack(
        tensor=np.stack(channels),
        order=order,
        device_id=spec.device_id,
        start_time_s=spec.start_time_s,
        frame_period_s=spec.frame_period_s,
    )


def level_series(spec: MelSpectrogram, floor_db: float = DEFAULT_DB_FLOOR) -> LevelSeries:
    """Broadband dB level per frame: mel-band powers summed, then to dB.

    Note a spectrogram sitting at the dB floor sums to n_mels times the
    floor power, so the minimum level is floor_db + 10*log10(n_mels).
    """
    if spec.n_frames == 0:
        raise ValueError("empty spectrogram")
    power = np.power(10.0, spec.frames / 10.0).sum(axis=1)
    values = np.maximum(10.0 * np.log10(power + DB_EPS), floor_db)
    return LevelSeries(
        values=values,
        frame_period_s=spec.frame_period_s,
        device_id=spec.device_id,
        start_time_s=spec.start_time_s,
    )
