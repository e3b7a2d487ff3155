"""Single-sensor event detector: windowing plus a small convolutional net.

Channel-stacked spectrograms are sliced into 1 s windows (8 frames) at a
0.375 s hop (3 frames); each window is scored by a fixed-architecture CNN
with a logistic output. Forward and backward passes are written out by
hand in numpy so the analytic gradients can be checked against finite
differences, and training is plain seeded SGD for full determinism.

Architecture: [C x 30 x 8] -> conv 3x3/16 + ReLU -> maxpool 2x2
-> conv 3x3/32 + ReLU -> maxpool 2x2 -> flatten -> dense 64 + ReLU
-> dense 1 -> logistic.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .events import EventLabel
from .frontend import ChannelStack

MODEL_VERSION = 1
N_MELS = 30
PROB_CLIP = 1e-12


@dataclass(frozen=True)
class WindowingConfig:
    window_frames: int = 8  # 1 s at 125 ms frames
    hop_frames: int = 3  # 0.375 s

    def __post_init__(self):
        if self.window_frames < 1:
            raise ValueError("window_frames must be >= 1")
        if not (1 <= self.hop_frames <= self.window_frames):
            raise ValueError("hop_frames must be in [1, window_frames]")


@dataclass
class DetectionWindow:
    tensor: np.ndarray  # [n_channels, n_mels, window_frames]
    start_time_s: float
    label: bool | None = None

    @property
    def n_channels(self) -> int:
        return self.tensor.shape[0]


@dataclass
class PredictionSeries:
    """Event probabilities at each window start, one device."""

    times: np.ndarray
    probs: np.ndarray
    device_id: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.times.size != self.probs.size:
            raise ValueError("times and probs must have equal length")
        if self.times.size > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-6:
                raise ValueError("times must be strictly increasing with constant step")
        if self.probs.size and (self.probs.min() < 0 or self.probs.max() > 1):
            raise ValueError("probs must lie in [0, 1]")

    def __len__(self) -> int:
        return self.times.size

    @property
    def step_s(self) -> float:
        if self.times.size < 2:
            return 3 * 0.125
        return float(self.times[1] - self.times[0])

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        """End of the covered span (one step past the last window start)."""
        return float(self.times[-1]) + self.step_s

    def slice_time(self, t_lo: float, t_hi: float) -> "PredictionSeries":
        lo = int(np.searchsorted(self.times, t_lo - 1e-9, side="left"))
        hi = int(np.searchsorted(self.times, t_hi - 1e-9, side="left"))
        return PredictionSeries(
            times=self.times[lo:hi].copy(),
            probs=self.probs[lo:hi].copy(),
            device_id=self.device_id,
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def make_windows(
    stack: ChannelStack,
    cfg: WindowingConfig = WindowingConfig(),
    events: list[EventLabel] | None = None,
) -> list[DetectionWindow]:
    """Overlapping windows over a channel stack, optionally labeled.

    Window i covers frames [i*hop, i*hop + window) and gets a positive
    label iff its time span overlaps at least one of the given event spans
    (half-open interval overlap). Callers decide which events count; for
    binary training pass only the spans of the positive class.
    """
    n_frames = stack.n_frames
    if n_frames < cfg.window_frames:
        raise ValueError("stream shorter than one window")
    period = stack.frame_period_s
    window_s = cfg.window_frames * period

    windows = []
    n = (n_frames - cfg.window_frames) // cfg.hop_frames + 1
    for i in range(n):
        f0 = i * cfg.hop_frames
        start = stack.start_time_s + f0 * period
        label = None
        if events is not None:
            label = any(ev.overlaps(start, start + window_s) for ev in events)
        windows.append(
            DetectionWindow(
                tensor=stack.tensor[:, :, f0 : f0 + cfg.window_frames],
                start_time_s=start,
                label=label,
            )
        )
    return windows


# --------------------------------------------------------------------------
# Layers. Each forward returns (output, cache); each backward takes the
# upstream gradient plus the cache and returns (input gradient, param grads).
# --------------------------------------------------------------------------


def _im2col(x: np.ndarray, pad: int = 1) -> np.ndarray:
    """[N, C, H, W] -> [C*9, N*H*W] patches of every 3x3 neighborhood.

    The 2-d layout lets both the forward pass and the two backward
    contractions run as single dgemm calls.
    """
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + w] = x
    view = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    # [N, C, H, W, 3, 3] -> [C, 3, 3, N, H, W] -> [C*9, N*H*W]
    return np.ascontiguousarray(view.transpose(1, 4, 5, 0, 2, 3)).reshape(c * 9, n * h * w)


def _col2im(dcols: np.ndarray, shape: tuple, pad: int = 1) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch gradients back to the input."""
    n, c, h, w = shape
    d = dcols.reshape(c, 3, 3, n, h, w)
    dxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + h, j : j + w] += d[:, i, j]
    return np.ascontiguousarray(dxp.transpose(1, 0, 2, 3)[:, :, pad : pad + h, pad : pad + w])


class Conv(object):
    """3x3 convolution, zero padding 1, stride 1 (spatial size preserved)."""

    kind = "conv"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight  # [out, in, 3, 3]
        self.bias = bias  # [out]

    def forward(self, x):
        n, c, h, w = x.shape
        o = self.weight.shape[0]
        cols = _im2col(x)  # [c*9, n*h*w]
        out2d = self.weight.reshape(o, -1) @ cols  # [o, n*h*w]
        out = np.ascontiguousarray(out2d.reshape(o, n, h * w).transpose(1, 0, 2))
        out = out.reshape(n, o, h, w)
        out += self.bias[None, :, None, None]
        return out, (cols, x.shape)

    def backward(self, dout, cache):
        cols, x_shape = cache
        n, _, h, w = x_shape
        o = self.weight.shape[0]
        dflat = np.ascontiguousarray(
            dout.reshape(n, o, h * w).transpose(1, 0, 2)
        ).reshape(o, n * h * w)
        dw = (dflat @ cols.T).reshape(self.weight.shape)
        db = dout.sum(axis=(0, 2, 3))
        dcols = self.weight.reshape(o, -1).T @ dflat  # [c*9, n*h*w]
        dx = _col2im(dcols, x_shape)
        return dx, {"weight": dw, "bias": db}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


class Relu(object):
    kind = "relu"

    def forward(self, x):
        out = np.maximum(x, 0.0)
        return out, x > 0

    def backward(self, dout, cache):
        return dout * cache, {}

    def params(self):
        return {}


class MaxPool(object):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped.

    The argmax (first winner on exact ties) is cached so the backward pass
    routes each gradient to exactly one input position.
    """

    kind = "pool"
    _offsets = ((0, 0), (0, 1), (1, 0), (1, 1))

    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        a = x[:, :, 0 : h2 * 2 : 2, 0 : w2 * 2 : 2]
        b = x[:, :, 0 : h2 * 2 : 2, 1 : w2 * 2 : 2]
        cc = x[:, :, 1 : h2 * 2 : 2, 0 : w2 * 2 : 2]
        d = x[:, :, 1 : h2 * 2 : 2, 1 : w2 * 2 : 2]
        ab = np.maximum(a, b)
        cd = np.maximum(cc, d)
        out = np.maximum(ab, cd)
        # first winner on ties, matching the offset order above
        idx = np.where(ab >= cd, np.where(a >= b, 0, 1), np.where(cc >= d, 2, 3))
        return out, (idx.astype(np.int8), x.shape)

    def backward(self, dout, cache):
        idx, (n, c, h, w) = cache
        dx = np.zeros((n, c, h, w))
        for k, (di, dj) in enumerate(self._offsets):
            np.copyto(dx[:, :, di : h // 2 * 2 : 2, dj : w // 2 * 2 : 2], dout,
                      where=idx == k)
        return dx, {}

    def params(self):
        return {}


class Flatten(object):
    kind = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache), {}

    def params(self):
        return {}


class Dense(object):
    kind = "dense"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight  # [out, in]
        self.bias = bias

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def backward(self, dout, cache):
        dw = dout.T @ cache
        db = dout.sum(axis=0)
        dx = dout @ self.weight
        return dx, {"weight": dw, "bias": db}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


def _glorot(rng, shape, fan_in, fan_out):
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, shape)


@dataclass
class CnnModel:
    """Fixed-architecture detector with per-channel input standardization.

    norm_mean/norm_std come from the training set and are applied to every
    input before the first layer; a fresh model starts at identity.
    """

    input_channels: int
    layers: list
    norm_mean: np.ndarray
    norm_std: np.ndarray
    version: int = MODEL_VERSION

    def parameters(self):
        """(layer_index, name, array) triples for every trainable tensor."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out.append((i, name, arr))
        return out


def create_model(input_channels: int, seed: int = 0) -> CnnModel:
    """Seeded Glorot-uniform initialization of the fixed architecture."""
    if input_channels < 1:
        raise ValueError("input_channels must be >= 1")
    rng = np.random.default_rng(seed)
    c = input_channels
    flat = 32 * (N_MELS // 2 // 2) * (8 // 2 // 2)  # 32 * 7 * 2
    layers = [
        Conv(_glorot(rng, (16, c, 3, 3), c * 9, 16 * 9), np.zeros(16)),
        Relu(),
        MaxPool(),
        Conv(_glorot(rng, (32, 16, 3, 3), 16 * 9, 32 * 9), np.zeros(32)),
        Relu(),
        MaxPool(),
        Flatten(),
        Dense(_glorot(rng, (64, flat), flat, 64), np.zeros(64)),
        Relu(),
        Dense(_glorot(rng, (1, 64), 64, 1), np.zeros(1)),
    ]
    return CnnModel(
        input_channels=c,
        layers=layers,
        norm_mean=np.zeros(c),
        norm_std=np.ones(c),
    )


def _normalize(model: CnnModel, x: np.ndarray) -> np.ndarray:
    return (x - model.norm_mean[None, :, None, None]) / model.norm_std[None, :, None, None]


def _forward_logits(model: CnnModel, x: np.ndarray, with_cache: bool = False):
    h = _normalize(model, x)
    caches = []
    for layer in model.layers:
        h, cache = layer.forward(h)
        if with_cache:
            caches.append(cache)
    return h[:, 0], caches


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce(z: np.ndarray, y: np.ndarray) -> float:
    """Stable mean binary cross-entropy from logits."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def forward_batch(model: CnnModel, tensors: np.ndarray) -> np.ndarray:
    """Probabilities for a [N, C, 30, 8] batch, clipped strictly inside (0,1)."""
    if tensors.shape[1] != model.input_channels:
        raise ValueError(
            f"model/input channel mismatch: model expects {model.input_channels}, "
            f"got {tensors.shape[1]}"
        )
    z, _ = _forward_logits(model, tensors)
    return np.clip(_sigmoid(z), PROB_CLIP, 1.0 - PROB_CLIP)


def forward(model: CnnModel, window: DetectionWindow) -> float:
    """Event probability of a single window; deterministic, in (0,1)."""
    return float(forward_batch(model, window.tensor[None])[0])


def _backward(model: CnnModel, caches, dz: np.ndarray):
    """Gradient of the loss w.r.t. every parameter, given d(loss)/d(logit)."""
    grads = [{} for _ in model.layers]
    dh = dz[:, None]
    for i in range(len(model.layers) - 1, -1, -1):
        dh, g = model.layers[i].backward(dh, caches[i])
        grads[i] = g
    return grads


@dataclass
class TrainResult:
    model: CnnModel
    loss_history: list


def train(model: CnnModel, windows: list[DetectionWindow], cfg: TrainConfig) -> TrainResult:
    """Seeded SGD on binary cross-entropy; mutates and returns the model.

    Input standardization statistics are computed from the training windows
    once at the start. With epochs == 0 the model (including its
    normalization) is left untouched and the history is empty.
    """
    labels = [w.label for w in windows]
    if any(l is None for l in labels):
        raise ValueError("all training windows must be labeled")
    y_all = np.array(labels, dtype=np.float64)
    if y_all.min() == y_all.max():
        raise ValueError("degenerate training set: need both classes")

    if cfg.epochs == 0:
        return TrainResult(model=model, loss_history=[])

    x_all = np.stack([w.tensor for w in windows]).astype(np.float64)
    if x_all.shape[1] != model.input_channels:
        raise ValueError("model/input channel mismatch")

    model.norm_mean = x_all.mean(axis=(0, 2, 3))
    model.norm_std = np.maximum(x_all.std(axis=(0, 2, 3)), 1e-6)

    rng = np.random.default_rng(cfg.seed)
    n = len(windows)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            xb, yb = x_all[batch], y_all[batch]
            z, caches = _forward_logits(model, xb, with_cache=True)
            epoch_loss += _bce(z, yb) * len(batch)
            dz = (_sigmoid(z) - yb) / len(batch)
            grads = _backward(model, caches, dz)
            for i, layer in enumerate(model.layers):
                for name, arr in layer.params().items():
                    arr -= cfg.learning_rate * grads[i][name]
        history.append(epoch_loss / n)
    return TrainResult(model=model, loss_history=history)


def gradient_check(
    model: CnnModel,
    window: DetectionWindow,
    label: bool,
    step: float = 1e-4,
    samples_per_tensor: int = 12,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    A random subset of coordinates of every parameter tensor is perturbed by
    +-step; the error for a coordinate is |a - n| / (|a| + |n| + 1e-3), the
    small additive term keeping dead coordinates (both gradients zero) from
    dividing by zero. Coordinates whose perturbation flips a ReLU sign or a
    pooling argmax are skipped: the loss is not differentiable across the
    kink and the difference quotient is meaningless there. All arithmetic is
    64-bit.
    """
    x = window.tensor[None].astype(np.float64)
    y = np.array([float(label)])

    z, caches = _forward_logits(model, x, with_cache=True)
    dz = _sigmoid(z) - y
    grads = _backward(model, caches, dz)

    def loss_and_pattern():
        zz, cc = _forward_logits(model, x, with_cache=True)
        pattern = []
        for layer, cache in zip(model.layers, cc):
            if layer.kind == "relu":
                pattern.append(cache.tobytes())
            elif layer.kind == "pool":
                pattern.append(cache[0].tobytes())
        return _bce(zz, y), tuple(pattern)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, layer in enumerate(model.layers):
        for name, arr in layer.params().items():
            flat = arr.reshape(-1)
            gflat = grads[i][name].reshape(-1)
            k = min(samples_per_tensor, flat.size)
            for j in rng.choice(flat.size, size=k, replace=False):
                orig = flat[j]
                flat[j] = orig + step
                up, pattern_up = loss_and_pattern()
                flat[j] = orig - step
                down, pattern_down = loss_and_pattern()
                flat[j] = orig
                if pattern_up != pattern_down:
                    continue
                numeric = (up - down) / (2 * step)
                analytic = gflat[j]
                err = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-3)
                worst = max(worst, err)
    return worst


def predict_stream(
    model: CnnModel,
    stack: ChannelStack,
    cfg: WindowingConfig = WindowingConfig(),
    batch_size: int = 1024,
) -> PredictionSeries:
    """Score every window of a stream; series step is hop * frame period."""
    if stack.n_channels != model.input_channels:
        raise ValueError(
            f"model/input channel mismatch: model expects {model.input_channels}, "
            f"got {stack.n_channels}"
        )
    windows = make_windows(stack, cfg)
    tensors = np.stack([w.tensor for w in windows])
    probs = np.empty(len(windows))
    for lo in range(0, len(windows), batch_size):
        probs[lo : lo + batch_size] = forward_batch(model, tensors[lo : lo + batch_size])
    times = np.array([w.start_time_s for w in windows])
    return PredictionSeries(times=times, probs=probs, device_id=stack.device_id)


# --------------------------------------------------------------------------
# Persistence: versioned JSON, 64-bit values serialized losslessly (python
# emits shortest round-trip decimal representations).
# --------------------------------------------------------------------------


def save_model(model: CnnModel, path) -> None:
    layers = []
    for layer in model.layers:
        entry = {"kind": layer.kind}
        if layer.params():
            entry["shape"] = list(layer.weight.shape)
            entry["weights"] = layer.weight.reshape(-1).tolist()
            entry["bias"] = layer.bias.tolist()
        layers.append(entry)
    layers.append({"kind": "logistic"})
    doc = {
        "version": model.version,
        "input_channels": model.input_channels,
        "norm": {"mean": model.norm_mean.tolist(), "std": model.norm_std.tolist()},
        "layers": layers,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> CnnModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValueError("corrupt model file") from exc

    if not isinstance(doc, dict) or "version" not in doc:
        raise ValueError("corrupt model file")
    if doc["version"] != MODEL_VERSION:
        raise ValueError(f"unsupported model version: {doc['version']}")

    kinds = {"conv": Conv, "dense": Dense, "relu": Relu, "pool": MaxPool,
             "flatten": Flatten}
    try:
        layers = []
        for entry in doc["layers"]:
            kind = entry["kind"]
            if kind == "logistic":
                continue  # implicit output activation
            cls = kinds[kind]
            if kind in ("conv", "dense"):
                shape = tuple(entry["shape"])
                weight = np.array(entry["weights"], dtype=np.float64).reshape(shape)
                bias = np.array(entry["bias"], dtype=np.float64)
                if bias.shape != (shape[0],):
                    raise ValueError
                layers.append(cls(weight, bias))
            else:
                layers.append(cls())
        c = int(doc["input_channels"])
        model = CnnModel(
            input_channels=c,
            layers=layers,
            norm_mean=np.array(doc["norm"]["mean"], dtype=np.float64),
            norm_std=np.array(doc["norm"]["std"], dtype=np.float64),
            version=doc["version"],
        )
        if model.norm_mean.shape != (c,) or model.norm_std.shape != (c,):
            raise ValueError
        # dry run validates that the layer shapes compose
        _forward_logits(model, np.zeros((1, c, N_MELS, 8)))
    except ValueError as exc:
        if "unsupported model version" in str(exc):
            raise
        raise ValueError("corrupt model file") from exc
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError("corrupt model file") from exc
    return model
