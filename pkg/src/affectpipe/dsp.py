"""Time-frequency analysis: STFT, mel filterbanks, MFCC, deltas, and
phase-reconstruction synthesis back to a waveform.

Conventions: unpadded framing (T = 1 + floor((len - frame) / hop), the
trailing partial frame is dropped), one-sided spectra, and dB as
10*log10 of power so doubling an amplitude adds ~6.02 dB.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import dct, idct

from .audio import AudioClip
from .errors import ConfigError, DomainError, InputTooShort, ResolutionError

WINDOW_KINDS = ("hann", "rectangular")


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


@dataclass(frozen=True)
class DspConfig:
    """Framing, filterbank, and cepstral parameters for one analysis chain."""

    frame_len: int
    hop_len: int
    fft_size: int
    window: str = "hann"
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float | None = None  # None means Nyquist at use time
    log_floor: float = 1e-10
    n_mfcc: int = 30
    delta_window: int = 2

    def __post_init__(self):
        if not (1 <= self.hop_len <= self.frame_len <= self.fft_size):
            raise ConfigError(
                f"need hop <= frame <= fft, got hop={self.hop_len} "
                f"frame={self.frame_len} fft={self.fft_size}"
            )
        if self.fft_size & (self.fft_size - 1):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.window not in WINDOW_KINDS:
            raise ConfigError(f"window must be one of {WINDOW_KINDS}, got {self.window!r}")
        if self.f_min < 0 or (self.f_max is not None and self.f_max <= self.f_min):
            raise ConfigError(f"need 0 <= f_min < f_max, got [{self.f_min}, {self.f_max}]")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if not (1 <= self.n_mfcc <= self.n_mels):
            raise ConfigError(f"need 1 <= n_mfcc <= n_mels, got {self.n_mfcc} > {self.n_mels}")
        if self.delta_window < 1:
            raise ConfigError("delta_window must be >= 1")

    @classmethod
    def for_sample_rate(cls, sample_rate: int, frame_ms: float = 25.0, hop_ms: float = 10.0, **kwargs) -> "DspConfig":
        """Build a config with 25 ms / 10 ms framing at the given rate."""
        frame = int(round(sample_rate * frame_ms / 1000.0))
        hop = int(round(sample_rate * hop_ms / 1000.0))
        return cls(frame_len=frame, hop_len=hop, fft_size=next_pow2(frame), **kwargs)

    def effective_f_max(self, sample_rate: int) -> float:
        nyquist = sample_rate / 2.0
        f_max = nyquist if self.f_max is None else self.f_max
        if f_max > nyquist + 1e-9:
            raise ConfigError(f"f_max {f_max} exceeds Nyquist {nyquist}")
        return f_max

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def with_(self, **kwargs) -> "DspConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ComplexSpectrogram:
    """One-sided complex spectrogram, shape (fft_size/2+1, T)."""

    bins: np.ndarray
    config: DspConfig
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]


@dataclass(frozen=True)
class MelSpectrogram:
    """Mel-band power in dB, shape (n_mels, T)."""

    values: np.ndarray
    config: DspConfig
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MfccMatrix:
    """Cepstral coefficients, shape (n_mfcc, T)."""

    coeffs: np.ndarray
    config: DspConfig
    sample_rate: int


def frame_count(n_samples: int, frame_len: int, hop_len: int) -> int:
    """Number of complete frames under unpadded framing."""
    if n_samples < frame_len:
        return 0
    return 1 + (n_samples - frame_len) // hop_len


def _window(cfg: DspConfig) -> np.ndarray:
    if cfg.window == "hann":
        # Periodic Hann, the usual STFT analysis window.
        n = np.arange(cfg.frame_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / cfg.frame_len)
    return np.ones(cfg.frame_len)


def _frames(samples: np.ndarray, cfg: DspConfig) -> np.ndarray:
    t = frame_count(samples.size, cfg.frame_len, cfg.hop_len)
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop_len * np.arange(t)[:, None]
    return samples[idx]


def stft(clip: AudioClip, cfg: DspConfig) -> ComplexSpectrogram:
    """Windowed short-time Fourier transform, one-sided spectrum per frame."""
    if len(clip) < cfg.frame_len:
        raise InputTooShort(f"clip of {len(clip)} samples is shorter than one {cfg.frame_len}-sample frame")
    frames = _frames(clip.samples, cfg) * _window(cfg)
    bins = np.fft.rfft(frames, n=cfg.fft_size, axis=1).T
    return ComplexSpectrogram(bins=bins, config=cfg, sample_rate=clip.sample_rate)


def power_spectrogram(spec: ComplexSpectrogram) -> np.ndarray:
    """Elementwise squared magnitude of the complex bins."""
    return np.abs(spec.bins) ** 2


def hz_to_mel(f) -> np.ndarray | float:
    """HTK mel scale: 2595 * log10(1 + f/700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise DomainError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m) -> np.ndarray | float:
    """Inverse of hz_to_mel."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise DomainError("mel value must be non-negative")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def mel_filterbank(cfg: DspConfig, sample_rate: int) -> np.ndarray:
    """Triangular unit-peak filters, centers equally spaced in mel.

    Triangle i rises from center i-1 to center i and falls to center i+1,
    evaluated at the exact FFT bin frequencies, so adjacent filters sum to
    one everywhere strictly between the first and last centers.
    """
    f_max = cfg.effective_f_max(sample_rate)
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(f_max), cfg.n_mels + 2))
    bin_freqs = np.arange(cfg.n_bins) * sample_rate / cfg.fft_size

    fb = np.zeros((cfg.n_mels, cfg.n_bins))
    for i in range(cfg.n_mels):
        left, center, right = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (bin_freqs - left) / max(center - left, 1e-12)
        down = (right - bin_freqs) / max(right - center, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, 1.0)
        if not np.any(fb[i] > 0):
            raise ResolutionError(
                f"mel filter {i} ({left:.1f}-{right:.1f} Hz) covers no FFT bin; "
                f"reduce n_mels or increase fft_size"
            )
    return fb


def mel_spectrogram(clip: AudioClip, cfg: DspConfig) -> MelSpectrogram:
    """Mel-band power in dB: 10*log10(max(filterbank @ power, floor))."""
    spec = stft(clip, cfg)
    fb = mel_filterbank(cfg, clip.sample_rate)
    energies = fb @ power_spectrogram(spec)
    values = 10.0 * np.log10(np.maximum(energies, cfg.log_floor))
    return MelSpectrogram(values=values, config=cfg, sample_rate=clip.sample_rate)


def mfcc(clip: AudioClip, cfg: DspConfig) -> MfccMatrix:
    """Orthonormal DCT-II of the dB mel bands, truncated to n_mfcc rows."""
    mel = mel_spectrogram(clip, cfg)
    coeffs = dct(mel.values, type=2, norm="ortho", axis=0)[: cfg.n_mfcc]
    return MfccMatrix(coeffs=coeffs, config=cfg, sample_rate=clip.sample_rate)


def mel_db_from_mfcc(coeffs: np.ndarray, n_mels: int) -> np.ndarray:
    """Invert the truncated DCT (exact when n_mfcc == n_mels)."""
    full = np.zeros((n_mels, coeffs.shape[1]))
    full[: coeffs.shape[0]] = coeffs
    return idct(full, type=2, norm="ortho", axis=0)


def delta(coeffs: np.ndarray, reg_window: int = 2) -> np.ndarray:
    """Least-squares slope of each coefficient track over +-reg_window frames.

    Edges are handled by replicating the first/last frame, so the output
    has the same shape as the input.
    """
    if reg_window < 1:
        raise DomainError("reg_window must be >= 1")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    t = coeffs.shape[-1]
    denom = 2.0 * sum(n * n for n in range(1, reg_window + 1))
    out = np.zeros_like(coeffs)
    idx = np.arange(t)
    for n in range(1, reg_window + 1):
        ahead = np.clip(idx + n, 0, t - 1)
        behind = np.clip(idx - n, 0, t - 1)
        out += n * (coeffs[..., ahead] - coeffs[..., behind])
    return out / denom


def istft(bins: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """Weighted overlap-add inversion; output length (T-1)*hop + frame_len."""
    t = bins.shape[1]
    frames = np.fft.irfft(bins.T, n=cfg.fft_size, axis=1)[:, : cfg.frame_len]
    win = _window(cfg)
    out_len = (t - 1) * cfg.hop_len + cfg.frame_len
    acc = np.zeros(out_len)
    norm = np.zeros(out_len)
    for i in range(t):
        start = i * cfg.hop_len
        acc[start : start + cfg.frame_len] += frames[i] * win
        norm[start : start + cfg.frame_len] += win**2
    return acc / np.maximum(norm, 1e-12)


def mel_to_linear_power(mel_db: np.ndarray, fb: np.ndarray, iterations: int = 100) -> np.ndarray:
    """Non-negative least squares inversion of the filterbank, per frame.

    Projected gradient descent on ||fb @ p - m||^2 with p >= 0; the step
    size comes from a power-iteration bound on the Lipschitz constant.
    """
    target = 10.0 ** (mel_db / 10.0)
    gram = fb.T @ fb
    v = np.ones(gram.shape[0])
    for _ in range(20):
        v = gram @ v
        v /= np.linalg.norm(v) + 1e-30
    lipschitz = 2.0 * float(v @ (gram @ v))
    step = 1.0 / max(lipschitz, 1e-12)

    p = np.maximum(fb.T @ target, 0.0)  # warm start from the transpose map
    for _ in range(iterations):
        grad = 2.0 * (fb.T @ (fb @ p - target))
        p = np.maximum(p - step * grad, 0.0)
    return p


def griffin_lim(mel: MelSpectrogram, cfg: DspConfig | None = None, iterations: int = 32) -> AudioClip:
    """Reconstruct a waveform from a mel spectrogram.

    Mel dB is inverted to a linear power spectrogram by non-negative least
    squares against the filterbank, then iterative phase reconstruction
    alternates overlap-add synthesis and re-analysis. Deterministic
    (zero-phase start); the result never leaves [-1, 1].
    """
    if iterations < 1:
        raise DomainError("iterations must be >= 1")
    cfg = mel.config if cfg is None else cfg
    fb = mel_filterbank(cfg, mel.sample_rate)
    magnitude = np.sqrt(mel_to_linear_power(mel.values, fb))

    spec = magnitude.astype(np.complex128)
    samples = istft(spec, cfg)
    for _ in range(iterations):
        reanalysis = np.fft.rfft(_frames(samples, cfg) * _window(cfg), n=cfg.fft_size, axis=1).T
        phase = reanalysis / np.maximum(np.abs(reanalysis), 1e-12)
        samples = istft(magnitude * phase, cfg)

    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > 1.0:
        samples = samples / peak
    return AudioClip(samples, mel.sample_rate)
