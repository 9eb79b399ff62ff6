"""Waveform I/O and length/silence conditioning.

Clips are mono float arrays in [-1, 1] plus a sample rate. WAV files are
RIFF PCM 16-bit; stereo input is downmixed by per-frame averaging.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputTooShort, IoError, UnsupportedFormat

INT16_FULL_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise FormatError(f"clip must be 1-D, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise FormatError("clip contains non-finite samples")
        if self.sample_rate <= 0:
            raise FormatError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        if self.samples.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples**2)))


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM RIFF/WAVE file into an AudioClip.

    Samples are scaled by 1/32768; stereo is downmixed by averaging the
    two channels per frame.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            if sampwidth != 2:
                raise UnsupportedFormat(f"only 16-bit PCM supported, got {8 * sampwidth}-bit")
            if n_channels not in (1, 2):
                raise UnsupportedFormat(f"only mono/stereo supported, got {n_channels} channels")
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        raise FormatError(f"malformed WAV file {path}: {exc}") from None
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None

    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / INT16_FULL_SCALE
    if n_channels == 2:
        data = data.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=data, sample_rate=rate)


def write_wav(clip: AudioClip, path) -> None:
    """Write an AudioClip as mono 16-bit PCM; values outside [-1,1] saturate."""
    quantized = np.clip(np.round(clip.samples * INT16_FULL_SCALE), -32768, 32767).astype("<i2")
    try:
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(clip.sample_rate)
            wf.writeframes(quantized.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def pad_or_trim(clip: AudioClip, target_len: int) -> AudioClip:
    """Normalize clip length: symmetric zero padding or center cropping.

    When padding an odd number of samples, the extra one goes on the right.
    """
    n = len(clip)
    if n == target_len:
        return clip
    if n < target_len:
        missing = target_len - n
        left = missing // 2
        out = np.zeros(target_len, dtype=np.float64)
        out[left : left + n] = clip.samples
        return AudioClip(out, clip.sample_rate)
    start = (n - target_len) // 2
    return AudioClip(clip.samples[start : start + target_len].copy(), clip.sample_rate)


def trim_silence(clip: AudioClip, threshold_db: float = -40.0, window_ms: float = 20.0) -> AudioClip:
    """Drop leading/trailing windows whose RMS is below threshold re clip peak.

    The clip is scanned in consecutive windows (default 20 ms); a window is
    silent when its RMS is more than ``|threshold_db|`` below the clip's peak
    amplitude. An all-silent clip trims to length zero.
    """
    n = len(clip)
    if n == 0:
        return clip
    peak = float(np.max(np.abs(clip.samples)))
    if peak == 0.0:
        return AudioClip(np.zeros(0), clip.sample_rate)
    win = max(1, int(round(clip.sample_rate * window_ms / 1000.0)))
    n_windows = (n + win - 1) // win
    floor = peak * 10.0 ** (threshold_db / 20.0)
    keep = np.zeros(n_windows, dtype=bool)
    for i in range(n_windows):
        seg = clip.samples[i * win : (i + 1) * win]
        keep[i] = np.sqrt(np.mean(seg**2)) >= floor
    if not keep.any():
        return AudioClip(np.zeros(0), clip.sample_rate)
    first = int(np.argmax(keep))
    last = int(n_windows - 1 - np.argmax(keep[::-1]))
    return AudioClip(clip.samples[first * win : min(n, (last + 1) * win)].copy(), clip.sample_rate)


def require_min_length(clip: AudioClip, min_len: int) -> None:
    """Raise InputTooShort when the clip has fewer than min_len samples."""
    if len(clip) < min_len:
        raise InputTooShort(f"clip has {len(clip)} samples, need at least {min_len}")
