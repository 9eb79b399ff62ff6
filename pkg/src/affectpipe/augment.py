"""Waveform and spectrogram augmentation, deterministic under explicit seeds.

Waveform transforms (noise, signal loss, volume) run before feature
extraction; time/frequency masking operates on the mel image afterwards.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .audio import AudioClip
from .dsp import MelSpectrogram
from .errors import ConfigError, RangeError, SilentInput

GAIN_DB_LIMIT = 40.0


@dataclass(frozen=True)
class NoiseStep:
    snr_db: float
    kind: str = "noise"


@dataclass(frozen=True)
class SignalLossStep:
    drop_fraction: float
    chunk_len: int
    kind: str = "signal_loss"

    def __post_init__(self):
        if not 0.0 <= self.drop_fraction <= 1.0:
            raise ConfigError(f"drop_fraction must be in [0,1], got {self.drop_fraction}")
        if self.chunk_len < 1:
            raise ConfigError(f"chunk_len must be >= 1, got {self.chunk_len}")


@dataclass(frozen=True)
class VolumeStep:
    gain_db: float
    kind: str = "volume"

    def __post_init__(self):
        if abs(self.gain_db) > GAIN_DB_LIMIT:
            raise ConfigError(f"gain must be within +-{GAIN_DB_LIMIT} dB, got {self.gain_db}")


@dataclass(frozen=True)
class SpecAugmentStep:
    n_time_masks: int = 1
    max_t: int = 4
    n_freq_masks: int = 1
    max_f: int = 10
    kind: str = "spec_augment"

    def __post_init__(self):
        if min(self.n_time_masks, self.max_t, self.n_freq_masks, self.max_f) < 0:
            raise ConfigError("mask counts and widths must be >= 0")


Step = NoiseStep | SignalLossStep | VolumeStep | SpecAugmentStep

_STEP_TYPES = {
    "noise": NoiseStep,
    "signal_loss": SignalLossStep,
    "volume": VolumeStep,
    "spec_augment": SpecAugmentStep,
}


@dataclass(frozen=True)
class AugmentSpec:
    """Ordered augmentation steps plus the seed that makes them reproducible."""

    steps: tuple
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "steps": [asdict(s) for s in self.steps]})

    @classmethod
    def from_json(cls, text: str) -> "AugmentSpec":
        raw = json.loads(text)
        steps = []
        for entry in raw.get("steps", []):
            entry = dict(entry)
            kind = entry.pop("kind", None)
            if kind not in _STEP_TYPES:
                raise ConfigError(f"unknown augment step kind {kind!r}")
            steps.append(_STEP_TYPES[kind](**entry))
        return cls(steps=tuple(steps), seed=int(raw.get("seed", 0)))

    def waveform_steps(self) -> list:
        return [s for s in self.steps if not isinstance(s, SpecAugmentStep)]

    def spectrogram_steps(self) -> list:
        return [s for s in self.steps if isinstance(s, SpecAugmentStep)]


def add_white_noise(clip: AudioClip, snr_db: float, seed: int) -> AudioClip:
    """Add Gaussian noise scaled to hit the requested signal-to-noise ratio."""
    signal_rms = clip.rms()
    if signal_rms == 0.0:
        raise SilentInput("SNR is undefined for an all-zero clip")
    noise_rms = signal_rms * 10.0 ** (-snr_db / 20.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(clip)) * noise_rms
    return AudioClip(np.clip(clip.samples + noise, -1.0, 1.0), clip.sample_rate)


def signal_loss(clip: AudioClip, drop_fraction: float, chunk_len: int, seed: int) -> AudioClip:
    """Zero out random contiguous chunks until ~drop_fraction of samples are gone."""
    if not 0.0 <= drop_fraction <= 1.0:
        raise RangeError(f"drop_fraction must be in [0,1], got {drop_fraction}")
    n = len(clip)
    if drop_fraction == 0.0 or n == 0:
        return clip
    if drop_fraction >= 1.0:
        return AudioClip(np.zeros(n), clip.sample_rate)

    chunk_len = min(chunk_len, n)
    target = int(round(drop_fraction * n))
    rng = np.random.default_rng(seed)
    zeroed = np.zeros(n, dtype=bool)
    count = 0
    while count < target:
        # draw roughly enough chunk offsets to cover the deficit, scaled by
        # the expected fresh coverage per chunk; coverage is resolved in
        # bulk with a difference array so tiny chunks stay fast
        fresh_per_chunk = max(chunk_len * (1.0 - count / n), 1.0)
        need = max(1, int(np.ceil((target - count) / fresh_per_chunk)))
        offsets = rng.integers(0, n - chunk_len + 1, size=need)
        diff = np.zeros(n + 1, dtype=np.int64)
        np.add.at(diff, offsets, 1)
        np.add.at(diff, offsets + chunk_len, -1)
        zeroed |= np.cumsum(diff[:-1]) > 0
        count = int(zeroed.sum())
    samples = clip.samples.copy()
    samples[zeroed] = 0.0
    return AudioClip(samples, clip.sample_rate)


def change_volume(clip: AudioClip, gain_db: float) -> AudioClip:
    """Scale by 10^(gain/20), saturating at full scale like a real recorder."""
    if abs(gain_db) > GAIN_DB_LIMIT:
        raise RangeError(f"gain must be within +-{GAIN_DB_LIMIT} dB, got {gain_db}")
    return AudioClip(np.clip(clip.samples * 10.0 ** (gain_db / 20.0), -1.0, 1.0), clip.sample_rate)


def spec_augment(mel: MelSpectrogram, spec: SpecAugmentStep, seed: int) -> MelSpectrogram:
    """Mask random time and frequency bands, filling with the spectrogram mean."""
    values = mel.values.copy()
    n_mels, t = values.shape
    if spec.max_t > t or spec.max_f > n_mels:
        raise RangeError(
            f"mask widths ({spec.max_t} frames, {spec.max_f} bands) exceed "
            f"spectrogram size ({t} frames, {n_mels} bands)"
        )
    fill = float(mel.values.mean())
    rng = np.random.default_rng(seed)
    for _ in range(spec.n_time_masks):
        width = int(rng.integers(0, spec.max_t + 1))
        start = int(rng.integers(0, t - width + 1))
        values[:, start : start + width] = fill
    for _ in range(spec.n_freq_masks):
        width = int(rng.integers(0, spec.max_f + 1))
        start = int(rng.integers(0, n_mels - width + 1))
        values[start : start + width, :] = fill
    return MelSpectrogram(values=values, config=mel.config, sample_rate=mel.sample_rate)


def apply_waveform_steps(clip: AudioClip, spec: AugmentSpec, item_seed: int | None = None) -> AudioClip:
    """Run the waveform portion of an AugmentSpec in order."""
    seed = spec.seed if item_seed is None else item_seed
    for i, step in enumerate(spec.waveform_steps()):
        if isinstance(step, NoiseStep):
            clip = add_white_noise(clip, step.snr_db, seed + i)
        elif isinstance(step, SignalLossStep):
            clip = signal_loss(clip, step.drop_fraction, step.chunk_len, seed + i)
        elif isinstance(step, VolumeStep):
            clip = change_volume(clip, step.gain_db)
    return clip


def apply_spectrogram_steps(mel: MelSpectrogram, spec: AugmentSpec, item_seed: int | None = None) -> MelSpectrogram:
    """Run the spectrogram portion of an AugmentSpec in order."""
    seed = spec.seed if item_seed is None else item_seed
    for i, step in enumerate(spec.spectrogram_steps()):
        mel = spec_augment(mel, step, seed + 1000 + i)
    return mel
