"""Emotion classifier: two parallel convolution branches and a transformer
branch over the mel map, fused into a 7-way softmax.

Each convolution branch stacks three 3x3 blocks (conv, batch norm, ReLU,
2x2 max pool) with channel expansion 16-32-64 and ends in global average
pooling; the transformer branch runs on a 4x4 max-pooled map so its
attention touches 1/16 of the positions. Branch embeddings are
concatenated and projected to class probabilities.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import bundle
from .audio import AudioClip, pad_or_trim, read_wav
from .augment import AugmentSpec, apply_spectrogram_steps, apply_waveform_steps
from .autodiff import Graph, Tensor, backward
from .dsp import DspConfig, mel_spectrogram
from .errors import ConfigError, DataError, LabelError, ShapeError
from .labels import EMOTIONS, label_index
from .layers import (
    BatchNormState,
    ParameterSet,
    add_batch_norm,
    add_conv,
    add_encoder_block,
    add_linear,
    batch_norm2d,
    global_average_pool,
    linear,
    sinusoidal_positions,
    transformer_encoder_block,
)
from .metrics import ConfusionMatrix, f1_report
from .optim import make_optimizer


@dataclass(frozen=True)
class SerConfig:
    """Input geometry and branch widths; kernel size is pinned at 3."""

    n_mels: int = 32
    n_frames: int = 49
    conv_channels: tuple = (16, 32, 64)
    conv_kernel: int = 3
    pool: int = 2
    transformer_pool: int = 4
    transformer_blocks: int = 2
    d_model: int = 32
    n_heads: int = 2
    fc_hidden: int | None = None  # optional hidden layer before the class head
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.conv_kernel != 3:
            raise ConfigError("convolution branches use 3x3 kernels")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        spatial = min(self.n_mels, self.n_frames)
        if spatial // self.pool ** len(self.conv_channels) < 1:
            raise ConfigError(f"input {self.n_mels}x{self.n_frames} too small for {len(self.conv_channels)} pooled blocks")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def token_dim(self) -> int:
        return self.n_mels // self.transformer_pool

    @property
    def embedding_dim(self) -> int:
        return 2 * self.conv_channels[-1] + self.d_model


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epoch_loss": self.epoch_loss, "epoch_accuracy": self.epoch_accuracy}


class SerModel:
    """Parameters, batch-norm state, and the class list for one classifier."""

    def __init__(self, config: SerConfig):
        self.config = config
        self.classes = list(EMOTIONS)
        self.params = ParameterSet()
        self.bn_states: dict[str, BatchNormState] = {}
        self.report: TrainReport | None = None
        rng = np.random.default_rng(config.seed)
        c_prev = 1
        for branch in ("cnn0", "cnn1"):
            c_in = c_prev
            for i, c_out in enumerate(config.conv_channels):
                add_conv(self.params, f"{branch}.conv{i}", c_in, c_out, config.conv_kernel, rng)
                add_batch_norm(self.params, f"{branch}.bn{i}", c_out)
                self.bn_states[f"{branch}.bn{i}"] = BatchNormState(c_out)
                c_in = c_out
        add_linear(self.params, "trans.proj", config.token_dim, config.d_model, rng)
        for b in range(config.transformer_blocks):
            add_encoder_block(self.params, f"trans.blk{b}", config.d_model, 2 * config.d_model, rng)
        head_in = config.embedding_dim
        if config.fc_hidden:
            add_linear(self.params, "fc", head_in, config.fc_hidden, rng)
            head_in = config.fc_hidden
        add_linear(self.params, "head", head_in, len(EMOTIONS), rng)
        self._positions = sinusoidal_positions(
            max(1, config.n_frames // config.transformer_pool), config.d_model
        )

    def branch_prefixes(self) -> list[str]:
        return ["cnn0", "cnn1", "trans", "head"]


def build_model(config: SerConfig | None = None, seed: int | None = None) -> SerModel:
    """Fresh model; an explicit seed overrides the one in the config."""
    config = config or SerConfig()
    if seed is not None:
        config = SerConfig(**{**asdict(config), "seed": seed})
    return SerModel(config)


def _conv_branch(model: SerModel, branch: str, x, training: bool):
    cfg = model.config
    h = x
    for i in range(len(cfg.conv_channels)):
        h = ad.conv2d(h, model.params[f"{branch}.conv{i}.W"], model.params[f"{branch}.conv{i}.b"], padding=1)
        h = batch_norm2d(h, model.params, f"{branch}.bn{i}", model.bn_states[f"{branch}.bn{i}"], training)
        h = ad.relu(h)
        h = ad.maxpool2d(h, cfg.pool)
    return global_average_pool(h)


def _transformer_branch(model: SerModel, mels: np.ndarray):
    cfg = model.config
    pooled = ad.maxpool2d(Tensor(mels[:, None, :, :]), cfg.transformer_pool)
    tokens = pooled.data[:, 0].transpose(0, 2, 1).copy()  # [N, frames, bands]
    t = tokens.shape[1]
    x = ad.add(linear(Tensor(tokens), model.params, "trans.proj"), Tensor(model._positions[:t]))
    for b in range(cfg.transformer_blocks):
        x = transformer_encoder_block(x, model.params, f"trans.blk{b}", cfg.n_heads)
    return ad.tmean(x, axis=1)


def forward(model: SerModel, mels: np.ndarray, training: bool = False, dropout_seed: int = 0):
    """Class probabilities for a batch of mel maps [N, n_mels, T]."""
    cfg = model.config
    mels = np.asarray(mels, dtype=np.float32)
    if mels.ndim == 2:
        mels = mels[None]
    if mels.shape[1:] != (cfg.n_mels, cfg.n_frames):
        raise ShapeError(f"expected mel maps of {cfg.n_mels}x{cfg.n_frames}, got {mels.shape[1:]}")
    x = Tensor(mels[:, None, :, :])
    emb = ad.concat(
        [
            _conv_branch(model, "cnn0", x, training),
            _conv_branch(model, "cnn1", x, training),
            _transformer_branch(model, mels),
        ],
        axis=1,
    )
    if training and cfg.dropout > 0:
        emb = ad.dropout(emb, cfg.dropout, seed=dropout_seed)
    if cfg.fc_hidden:
        emb = ad.relu(linear(emb, model.params, "fc"))
    return ad.softmax(linear(emb, model.params, "head"), axis=-1)


def predict(model: SerModel, mel: np.ndarray) -> np.ndarray:
    """Probability distribution over the 7 classes for one mel map."""
    probs = forward(model, mel[None] if mel.ndim == 2 else mel, training=False)
    return probs.data[0].astype(np.float64)


def predicted_label(model: SerModel, mel: np.ndarray) -> str:
    dist = predict(model, mel)
    return model.classes[int(np.argmax(dist))]


def normalize_mel(values: np.ndarray) -> np.ndarray:
    """Standardize a dB mel map; keeps optimization well-conditioned."""
    mu = values.mean()
    sd = values.std()
    return (values - mu) / (sd + 1e-6)


def prepare_items(
    entries: list[dict],
    dsp_cfg: DspConfig,
    target_len: int,
    augment: AugmentSpec | None = None,
    seed: int = 0,
) -> list[tuple[np.ndarray, int]]:
    """Featurize labeled clips into (normalized mel, class index) pairs.

    Entries carry either a loaded clip under "clip" or a WAV path under
    "path", plus an "emotion" label. With an AugmentSpec, augmented copies
    supplement the originals (one extra copy per entry).
    """
    if not entries:
        raise DataError("empty manifest")
    items: list[tuple[np.ndarray, int]] = []
    for i, entry in enumerate(entries):
        if "emotion" not in entry or entry["emotion"] is None:
            raise LabelError(f"entry {i} has no emotion label")
        label = label_index(entry["emotion"])
        clip: AudioClip = entry["clip"] if "clip" in entry else read_wav(entry["path"])
        clip = pad_or_trim(clip, target_len)
        mel = mel_spectrogram(clip, dsp_cfg)
        items.append((normalize_mel(mel.values), label))
        if augment is not None and augment.steps:
            aug_clip = apply_waveform_steps(clip, augment, item_seed=augment.seed + i)
            aug_mel = mel_spectrogram(aug_clip, dsp_cfg)
            aug_mel = apply_spectrogram_steps(aug_mel, augment, item_seed=augment.seed + i)
            items.append((normalize_mel(aug_mel.values), label))
    return items


def stratified_split(
    items: list[tuple[np.ndarray, int]], ratios=(0.8, 0.1, 0.1), seed: int = 0
) -> tuple[list, list, list]:
    """Per-class proportional split into train/val/test."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split ratios must sum to 1")
    rng = np.random.default_rng(seed)
    buckets: dict[int, list] = {}
    for item in items:
        buckets.setdefault(item[1], []).append(item)
    splits: tuple[list, list, list] = ([], [], [])
    for label in sorted(buckets):
        group = buckets[label]
        order = rng.permutation(len(group))
        n_train = int(round(ratios[0] * len(group)))
        n_val = int(round(ratios[1] * len(group)))
        for j, idx in enumerate(order):
            which = 0 if j < n_train else (1 if j < n_train + n_val else 2)
            splits[which].append(group[idx])
    return splits


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 40
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float | None = None
    momentum: float = 0.9
    seed: int = 0
    target_accuracy: float | None = None  # stop early once train accuracy reaches it


def train(model: SerModel, items: list[tuple[np.ndarray, int]], settings: TrainSettings | None = None) -> TrainReport:
    """Minimize cross-entropy over (mel, label) items; deterministic per seed."""
    settings = settings or TrainSettings()
    if not items:
        raise DataError("empty training set")
    for _, label in items:
        if not 0 <= label < len(EMOTIONS):
            raise LabelError(f"class index {label} outside the 7-class set")

    mels = np.stack([m for m, _ in items]).astype(np.float32)
    labels = np.array([lab for _, lab in items], dtype=np.int64)
    opt = make_optimizer(settings.optimizer, lr=settings.lr, momentum=settings.momentum)
    rng = np.random.default_rng(settings.seed)
    report = TrainReport()
    step = 0
    for _ in range(settings.epochs):
        order = rng.permutation(len(items))
        total_loss = 0.0
        correct = 0
        for start in range(0, len(items), settings.batch_size):
            batch = order[start : start + settings.batch_size]
            model.params.zero_grad()
            with Graph() as g:
                probs = forward(model, mels[batch], training=True, dropout_seed=settings.seed + step)
                loss = ad.cross_entropy(probs, labels[batch])
            backward(g, loss)
            opt.step(model.params)
            total_loss += loss.item() * len(batch)
            correct += int((probs.data.argmax(axis=1) == labels[batch]).sum())
            step += 1
        report.epoch_loss.append(total_loss / len(items))
        report.epoch_accuracy.append(correct / len(items))
        if settings.target_accuracy is not None and report.epoch_accuracy[-1] >= settings.target_accuracy:
            break
    model.report = report
    return report


def evaluate(model: SerModel, items: list[tuple[np.ndarray, int]], batch_size: int = 64) -> dict:
    """Confusion matrix plus the precision/recall/F1 report."""
    if not items:
        raise DataError("empty evaluation set")
    mels = np.stack([m for m, _ in items]).astype(np.float32)
    labels = [model.classes[lab] for _, lab in items]
    predictions: list[str] = []
    for start in range(0, len(items), batch_size):
        probs = forward(model, mels[start : start + batch_size], training=False)
        predictions.extend(model.classes[int(i)] for i in probs.data.argmax(axis=1))
    cm = ConfusionMatrix.from_pairs(labels, predictions, model.classes)
    report = f1_report(cm)
    report["confusion"] = cm.counts.tolist()
    report["classes"] = model.classes
    return report


def save_model(model: SerModel, path) -> None:
    tensors = dict(model.params.state_dict())
    for name, state in model.bn_states.items():
        tensors[f"state.{name}.mean"] = state.mean
        tensors[f"state.{name}.var"] = state.var
    meta = {
        "kind": "ser",
        "config": asdict(model.config),
        "classes": model.classes,
        "report": model.report.to_dict() if model.report else None,
    }
    bundle.save(tensors, path, meta=meta)


def load_model(path) -> SerModel:
    tensors, meta = bundle.load(path)
    if not meta or meta.get("kind") != "ser":
        raise ConfigError(f"{path} is not an emotion-classifier checkpoint")
    cfg_dict = dict(meta["config"])
    cfg_dict["conv_channels"] = tuple(cfg_dict["conv_channels"])
    model = SerModel(SerConfig(**cfg_dict))
    model.params.load_state({k: v for k, v in tensors.items() if not k.startswith("state.")})
    for name, state in model.bn_states.items():
        state.mean = tensors[f"state.{name}.mean"].copy()
        state.var = tensors[f"state.{name}.var"].copy()
    if meta.get("report"):
        model.report = TrainReport(**meta["report"])
    return model


def config_to_json(config: SerConfig) -> str:
    return json.dumps(asdict(config))
