"""Recurrent acoustic model: per-frame character probabilities from
spectrogram features, plus greedy collapse decoding.

Five hidden layers: three per-frame dense layers with the clipped ReLU,
one bidirectional recurrence whose directions are summed, one more dense
layer, then a softmax over the 29-symbol alphabet. Training is out of
scope; weights load from tensor bundles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bundle
from .errors import FormatError, ShapeError

ACTIVATION_CAP = 20.0

WEIGHT_NAMES = ["W1", "b1", "W2", "b2", "W3", "b3", "W4", "Wrf", "Wrb", "b4", "W5", "b5", "W6", "b6"]


@dataclass(frozen=True)
class Alphabet:
    """a-z, space, apostrophe, then the non-emitting blank (index 28)."""

    symbols: tuple = field(default_factory=lambda: tuple("abcdefghijklmnopqrstuvwxyz") + (" ", "'", "<blank>"))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def blank_id(self) -> int:
        return len(self.symbols) - 1

    def decode_ids(self, ids) -> str:
        return "".join(self.symbols[i] for i in ids if i != self.blank_id)

    def encode(self, text: str) -> list[int]:
        index = {s: i for i, s in enumerate(self.symbols)}
        return [index[ch] for ch in text.lower() if ch in index]


@dataclass
class AcousticWeights:
    """Dense, recurrent, and output weights plus the context half-width."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    W4: np.ndarray
    Wrf: np.ndarray
    Wrb: np.ndarray
    b4: np.ndarray
    W5: np.ndarray
    b5: np.ndarray
    W6: np.ndarray
    b6: np.ndarray
    context_frames: int = 5
    feature_dim: int | None = None

    def __post_init__(self):
        if self.context_frames < 0:
            raise ShapeError("context_frames must be >= 0")
        if self.feature_dim is None:
            self.feature_dim = self.W1.shape[0] // (2 * self.context_frames + 1)
        chain = [
            ("W1->W2", self.W1.shape[1], self.W2.shape[0]),
            ("W2->W3", self.W2.shape[1], self.W3.shape[0]),
            ("W3->W4", self.W3.shape[1], self.W4.shape[0]),
            ("W4->W5", self.W4.shape[1], self.W5.shape[0]),
            ("W5->W6", self.W5.shape[1], self.W6.shape[0]),
        ]
        for name, got, want in chain:
            if got != want:
                raise ShapeError(f"layer chain broken at {name}: {got} vs {want}")
        d4 = self.W4.shape[1]
        if self.Wrf.shape != (d4, d4) or self.Wrb.shape != (d4, d4):
            raise ShapeError("recurrent matrices must be square on layer-4 width")

    @classmethod
    def random(cls, feature_dim: int, hidden: int = 32, context_frames: int = 2, seed: int = 0, n_symbols: int = 29):
        """Small random weights, handy for toy decoding and property tests."""
        rng = np.random.default_rng(seed)
        width = feature_dim * (2 * context_frames + 1)

        def mat(m, n):
            return (rng.standard_normal((m, n)) / np.sqrt(m)).astype(np.float32)

        return cls(
            W1=mat(width, hidden), b1=np.zeros(hidden, dtype=np.float32),
            W2=mat(hidden, hidden), b2=np.zeros(hidden, dtype=np.float32),
            W3=mat(hidden, hidden), b3=np.zeros(hidden, dtype=np.float32),
            W4=mat(hidden, hidden), Wrf=mat(hidden, hidden), Wrb=mat(hidden, hidden),
            b4=np.zeros(hidden, dtype=np.float32),
            W5=mat(hidden, hidden), b5=np.zeros(hidden, dtype=np.float32),
            W6=mat(hidden, n_symbols), b6=np.zeros(n_symbols, dtype=np.float32),
            context_frames=context_frames, feature_dim=feature_dim,
        )


def _clipped_relu(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, ACTIVATION_CAP)


def stack_context(frames: np.ndarray, context: int) -> np.ndarray:
    """Concatenate each frame with its +-context neighbors, zero-padded edges."""
    t, f = frames.shape
    if context == 0:
        return frames
    padded = np.zeros((t + 2 * context, f), dtype=frames.dtype)
    padded[context : context + t] = frames
    return np.concatenate([padded[i : i + t] for i in range(2 * context + 1)], axis=1)


def acoustic_forward(frames: np.ndarray, weights: AcousticWeights) -> np.ndarray:
    """Per-frame character probabilities, shape (T, 29), rows summing to 1."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError(f"frames must be 2-D (T x F), got {frames.shape}")
    stacked = stack_context(frames, weights.context_frames)
    if stacked.shape[1] != weights.W1.shape[0]:
        raise ShapeError(
            f"stacked frame width {stacked.shape[1]} does not match W1 input dim {weights.W1.shape[0]}"
        )

    h = _clipped_relu(stacked @ weights.W1 + weights.b1)
    h = _clipped_relu(h @ weights.W2 + weights.b2)
    h3 = _clipped_relu(h @ weights.W3 + weights.b3)

    t, d4 = h3.shape[0], weights.W4.shape[1]
    pre = h3 @ weights.W4 + weights.b4
    hf = np.zeros((t, d4))
    hb = np.zeros((t, d4))
    prev = np.zeros(d4)
    for i in range(t):
        prev = _clipped_relu(pre[i] + prev @ weights.Wrf)
        hf[i] = prev
    prev = np.zeros(d4)
    for i in range(t - 1, -1, -1):
        prev = _clipped_relu(pre[i] + prev @ weights.Wrb)
        hb[i] = prev

    h5 = _clipped_relu((hf + hb) @ weights.W5 + weights.b5)
    logits = h5 @ weights.W6 + weights.b6
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def greedy_decode(probs: np.ndarray, alphabet: Alphabet | None = None) -> str:
    """Per-frame argmax, collapse adjacent repeats, then drop blanks."""
    alphabet = alphabet or Alphabet()
    ids = np.asarray(probs).argmax(axis=1)
    collapsed = [int(i) for i, prev in zip(ids, np.concatenate([[-1], ids[:-1]])) if i != prev]
    return alphabet.decode_ids(collapsed)


def transcribe(frames: np.ndarray, weights: AcousticWeights, alphabet: Alphabet | None = None) -> str:
    return greedy_decode(acoustic_forward(frames, weights), alphabet)


def save_weights(weights: AcousticWeights, path) -> None:
    tensors = {name: getattr(weights, name) for name in WEIGHT_NAMES}
    meta = {"context_frames": weights.context_frames, "feature_dim": weights.feature_dim}
    bundle.save(tensors, path, meta=meta)


def load_weights(path) -> AcousticWeights:
    tensors, meta = bundle.load(path)
    bundle.require(tensors, WEIGHT_NAMES, "acoustic weights")
    if not meta or "context_frames" not in meta:
        raise FormatError(f"{path}: missing context_frames metadata")
    return AcousticWeights(
        **{name: tensors[name] for name in WEIGHT_NAMES},
        context_frames=int(meta["context_frames"]),
        feature_dim=meta.get("feature_dim"),
    )
