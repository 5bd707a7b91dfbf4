"""Hybrid event-frame MLP spike detector (MLP-SPD).

A frame is built around a non-zero PCM bin ``c``: the ON counts of bins
``c - tau_f .. c + tau_f`` followed by the OFF counts of the same bins, each
clipped at ``count_clip`` and scaled into [0, 1].  A small fully connected
network (ReLU hidden layers, logistic output) scores the frame as spike or
background.  Training is plain mini-batch SGD with momentum on binary
cross-entropy, written directly in numpy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import DetectionSet, GroundTruth, atomic_write_text
from .encoder import PcmSeries
from .errors import ConfigError, DatasetError, FormatError, TrainingError

MODEL_FORMAT = "mlp-spd-v1"
SPIKE, BACKGROUND = 1, 0
_CHUNK = 8192


@dataclass(frozen=True)
class FrameConfig:
    tau_f_bins: int = 24
    count_clip: int = 15
    label_margin_us: float = 1000.0

    def __post_init__(self):
        if self.tau_f_bins < 1:
            raise ConfigError("tau_f_bins >= 1 violated")
        if self.count_clip < 1:
            raise ConfigError("count_clip >= 1 violated")

    @property
    def frame_length(self) -> int:
        return 2 * (2 * self.tau_f_bins + 1)


@dataclass(frozen=True)
class EventFrame:
    values: np.ndarray
    center_bin: int
    label: int | None = None


@dataclass(eq=False)
class FrameSet:
    """A stack of frames: ``values`` is (N, D), ``labels`` holds 1 for spike, 0 for background."""

    values: np.ndarray
    labels: np.ndarray
    center_bins: np.ndarray

    def __len__(self):
        return int(self.labels.size)

    def __getitem__(self, i) -> EventFrame:
        return EventFrame(self.values[i], int(self.center_bins[i]), int(self.labels[i]))

    @classmethod
    def concat(cls, sets: list[FrameSet]) -> FrameSet:
        return cls(np.concatenate([s.values for s in sets]),
                   np.concatenate([s.labels for s in sets]),
                   np.concatenate([s.center_bins for s in sets]))


class FrameBuilder:
    """Builds normalized frames from one PCM series (dense, zero-padded copy held once)."""

    def __init__(self, pcm: PcmSeries, fcfg: FrameConfig = FrameConfig()):
        self.fcfg = fcfg
        tau = fcfg.tau_f_bins
        on, off = pcm.dense()
        scale = 1.0 / fcfg.count_clip
        self._on = np.pad(np.minimum(on, fcfg.count_clip) * scale, tau)
        self._off = np.pad(np.minimum(off, fcfg.count_clip) * scale, tau)
        self._offsets = np.arange(2 * tau + 1)

    def build(self, centers) -> np.ndarray:
        c = np.asarray(centers, dtype=np.int64)
        # padded index of bin (c + j - tau) is c + j
        idx = c[:, None] + self._offsets[None, :]
        return np.concatenate([self._on[idx], self._off[idx]], axis=1)


def build_frames(pcm: PcmSeries, centers, fcfg: FrameConfig = FrameConfig()) -> np.ndarray:
    return FrameBuilder(pcm, fcfg).build(centers)


def _nearest_distance(times: np.ndarray, ref: np.ndarray) -> np.ndarray:
    if ref.size == 0:
        return np.full(times.size, np.inf)
    j = np.searchsorted(ref, times)
    left = np.abs(times - ref[np.clip(j - 1, 0, ref.size - 1)])
    right = np.abs(ref[np.clip(j, 0, ref.size - 1)] - times)
    return np.minimum(left, right).astype(np.float64)


def label_candidates(pcm: PcmSeries, gt: GroundTruth, fcfg: FrameConfig = FrameConfig(),
                     delta_t_us: float = 500.0) -> tuple[np.ndarray, np.ndarray]:
    """Label every non-zero bin; returns ``(bins, labels)`` with the ambiguous ring dropped."""
    dist = _nearest_distance(pcm.bin_times_us(), gt.spike_times_us)
    spike = dist <= delta_t_us
    background = dist > fcfg.label_margin_us
    keep = spike | background
    return pcm.bins[keep], spike[keep].astype(np.int8)


def extract_frames(pcm: PcmSeries, gt: GroundTruth, fcfg: FrameConfig = FrameConfig(),
                   delta_t_us: float = 500.0, seed: int = 0) -> FrameSet:
    """Balanced, labeled frames centered on every non-zero bin.

    The majority class is undersampled uniformly at random (seeded); frames
    stay in time order.
    """
    if pcm.bins.size == 0:
        raise DatasetError("PCM series has no non-zero bins, so there are no frame candidates")
    bins, labels = label_candidates(pcm, gt, fcfg, delta_t_us)
    pos = np.flatnonzero(labels == SPIKE)
    neg = np.flatnonzero(labels == BACKGROUND)
    if pos.size == 0 or neg.size == 0:
        raise DatasetError(f"need both classes, got {pos.size} spike and {neg.size} background frames")
    rng = np.random.default_rng(seed)
    n = min(pos.size, neg.size)
    if pos.size > n:
        pos = np.sort(rng.choice(pos, n, replace=False))
    if neg.size > n:
        neg = np.sort(rng.choice(neg, n, replace=False))
    keep = np.sort(np.concatenate([pos, neg]))
    centers = bins[keep]
    return FrameSet(build_frames(pcm, centers, fcfg), labels[keep].copy(), centers)


# ---------------------------------------------------------------- network


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(eq=False)
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    decision_threshold: float = 0.5
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = [int(d) for d in self.layer_dims]
        if len(dims) < 2 or dims[-1] != 1 or min(dims) < 1:
            raise ConfigError(f"layer_dims must be [D, H..., 1] with positive sizes, got {dims}")
        self.layer_dims = dims
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ConfigError("number of weight/bias arrays does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ConfigError(f"layer {i}: expected weight {(dims[i], dims[i + 1])} and bias "
                                  f"{(dims[i + 1],)}, got {w.shape} and {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError(f"layer {i} has non-finite parameters")

    @classmethod
    def initialize(cls, layer_dims, seed: int = 0) -> MlpModel:
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(list(layer_dims), ws, bs)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> MlpModel:
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.decision_threshold, dict(self.train_meta))

    def _forward(self, x):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def logits(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self._forward(x)[-1][:, 0]

    def predict_proba(self, x) -> np.ndarray:
        return _sigmoid(self.logits(x))

    def predict(self, x) -> np.ndarray:
        return (self.predict_proba(x) > self.decision_threshold).astype(np.int8)

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def loss_and_grads(model: MlpModel, x, y) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean binary cross-entropy and its gradients w.r.t. every weight and bias."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    acts = model._forward(x)
    z = acts[-1][:, 0]
    # log(1 + e^z) - y z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    delta = ((_sigmoid(z) - y) / y.size)[:, None]
    gws = [None] * len(model.weights)
    gbs = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gws[i] = acts[i].T @ delta
        gbs[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, gws, gbs


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    validation_fraction: float = 0.2
    seed: int = 0
    early_stop_patience: int = 10

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("0 < validation_fraction < 1 violated")
        if self.epochs < 0 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, early_stop_patience >= 1 required")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate > 0 violated")


def stratified_split(labels: np.ndarray, fraction: float, rng: np.random.Generator):
    """Index arrays ``(train, val)`` with each class split in the same proportion."""
    train, val = [], []
    for cls_ in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls_))
        n_val = int(round(idx.size * fraction))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def accuracy(model: MlpModel, x, y) -> float:
    if len(y) == 0:
        return 0.0
    return float(np.mean(model.predict(x) == np.asarray(y)))


def train(frames: FrameSet, layer_dims, tcfg: TrainConfig = TrainConfig()) -> tuple[MlpModel, list[dict]]:
    """Fit an MLP on labeled frames; returns the best-validation model and a per-epoch log.

    "Best" is the lowest validation loss, which is also what early stopping
    watches: balanced-frame accuracy saturates within a few epochs and then
    jitters, so it makes a poor stopping signal.  Epoch 0 in the log is the
    untrained initialization, so ``epochs=0`` returns the initial parameters
    unchanged.
    """
    layer_dims = [int(d) for d in layer_dims]
    x = np.asarray(frames.values, dtype=np.float64)
    y = np.asarray(frames.labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer_dims[0]:
        raise ConfigError(f"frame length {x.shape[-1]} does not match input dim {layer_dims[0]}")
    ss = np.random.SeedSequence(int(tcfg.seed))
    rng_init, rng_split, rng_shuffle = (np.random.default_rng(s) for s in ss.spawn(3))
    model = MlpModel.initialize(layer_dims, seed=int(rng_init.integers(2**63)))
    tr, va = stratified_split(frames.labels, tcfg.validation_fraction, rng_split)
    xt, yt, xv, yv = x[tr], y[tr], x[va], y[va]

    def val_loss(m):
        return loss_and_grads(m, xv, yv)[0] if len(yv) else 0.0

    best = model.copy()
    best_loss, best_acc, best_epoch = val_loss(model), accuracy(model, xv, yv), 0
    log = [{"epoch": 0, "train_loss": loss_and_grads(model, xt, yt)[0] if len(yt) else 0.0,
            "val_loss": best_loss, "val_acc": best_acc}]
    vel = [np.zeros_like(p) for p in model.parameters()]
    stale = 0
    epochs_run = 0
    for epoch in range(1, tcfg.epochs + 1):
        order = rng_shuffle.permutation(len(yt))
        total = 0.0
        for start in range(0, len(order), tcfg.batch_size):
            bi = order[start:start + tcfg.batch_size]
            loss, gws, gbs = loss_and_grads(model, xt[bi], yt[bi])
            if not math.isfinite(loss):
                raise TrainingError(f"loss became non-finite in epoch {epoch}", epoch=epoch)
            total += loss * bi.size
            grads = [g for pair in zip(gws, gbs) for g in pair]
            for p, v, g in zip(model.parameters(), vel, grads):
                v *= tcfg.momentum
                v -= tcfg.learning_rate * g
                p += v
        epochs_run = epoch
        if not all(np.all(np.isfinite(p)) for p in model.parameters()):
            raise TrainingError(f"parameters became non-finite in epoch {epoch}", epoch=epoch)
        vl, va_acc = val_loss(model), accuracy(model, xv, yv)
        log.append({"epoch": epoch, "train_loss": total / max(len(yt), 1), "val_loss": vl, "val_acc": va_acc})
        if vl < best_loss:
            best, best_loss, best_acc, best_epoch, stale = model.copy(), vl, va_acc, epoch, 0
        else:
            stale += 1
            if stale >= tcfg.early_stop_patience:
                break
    best.train_meta = {"seed": int(tcfg.seed), "epochs_run": epochs_run, "best_epoch": best_epoch,
                       "best_val_acc": best_acc, "best_val_loss": best_loss}
    return best, log


# ---------------------------------------------------------------- inference


def score_candidates(pcm: PcmSeries, model: MlpModel, fcfg: FrameConfig = FrameConfig()) -> np.ndarray:
    """Spike probability for a frame centered on every non-zero bin."""
    if model.input_dim != fcfg.frame_length:
        raise ConfigError(f"model input dim {model.input_dim} != frame length {fcfg.frame_length}")
    fb = FrameBuilder(pcm, fcfg)
    out = np.empty(pcm.bins.size)
    for s in range(0, pcm.bins.size, _CHUNK):
        out[s:s + _CHUNK] = model.predict_proba(fb.build(pcm.bins[s:s + _CHUNK]))
    return out


def infer_online(pcm: PcmSeries, model: MlpModel, fcfg: FrameConfig = FrameConfig(),
                 t_ref_us: float = 1000.0, channel_id: int = 0) -> DetectionSet:
    """Refractory-gated frame classification over a PCM stream.

    Each non-zero bin outside the refractory span is classified from its
    frame; a score above the decision threshold emits a detection at the
    bin's center time.  Frames need ``tau_f_bins`` future bins, so a live
    implementation lags by that much; emitted timestamps are center times.
    Classification is stateless, so frames are scored in vectorized chunks
    and the refractory gate is applied as one ordered pass.
    """
    if pcm.bins.size == 0:
        return DetectionSet(np.zeros(0, np.int64), channel_id, "mlp")
    scores = score_candidates(pcm, model, fcfg)
    times = pcm.bin_times_us()
    keep = kernels.refractory_gate(times, t_ref_us, scores > model.decision_threshold)
    return DetectionSet(times[keep], channel_id, "mlp")


# ---------------------------------------------------------------- accounting


@dataclass(frozen=True)
class ComplexityReport:
    mac_per_frame_dense: int
    mac_per_frame_effective: float
    num_params: int
    bit_width: int
    memory_bits: int


def complexity(model_or_dims, s_pcm: float, bit_width: int = 32) -> ComplexityReport:
    """MAC and parameter-memory cost of one frame.

    Dense MACs sum ``fan_in * fan_out`` over layers; the effective count
    scales the first layer by the input sparsity ``s_pcm``, since zero inputs
    need no multiply.
    """
    if not 0 <= s_pcm <= 1:
        raise ConfigError("0 <= s_pcm <= 1 violated")
    dims = model_or_dims.layer_dims if isinstance(model_or_dims, MlpModel) else [int(d) for d in model_or_dims]
    layers = list(zip(dims[:-1], dims[1:]))
    dense = sum(i * o for i, o in layers)
    effective = s_pcm * layers[0][0] * layers[0][1] + sum(i * o for i, o in layers[1:])
    params = sum(i * o + o for i, o in layers)
    return ComplexityReport(dense, effective, params, int(bit_width), params * int(bit_width))


# ---------------------------------------------------------------- persistence


def model_to_json(model: MlpModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "layer_dims": model.layer_dims,
        "hidden_activation": "relu",
        "output_activation": "logistic",
        "decision_threshold": model.decision_threshold,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "train_meta": model.train_meta,
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def model_from_json(text: str) -> MlpModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}", offset=exc.pos) from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"not an {MODEL_FORMAT} model file")
    if doc.get("hidden_activation", "relu") != "relu" or doc.get("output_activation", "logistic") != "logistic":
        raise FormatError("unsupported activation tags")
    try:
        return MlpModel(doc["layer_dims"], [np.asarray(w, dtype=np.float64) for w in doc["weights"]],
                        [np.asarray(b, dtype=np.float64) for b in doc["biases"]],
                        float(doc.get("decision_threshold", 0.5)), dict(doc.get("train_meta", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model: {exc}") from None


def save_model(path, model: MlpModel) -> None:
    atomic_write_text(path, model_to_json(model))


def load_model(path) -> MlpModel:
    with open(path) as fh:
        return model_from_json(fh.read())
