"""Affective speech toolkit: features, augmentation, emotion
classification, transcription, retrieval dialogue, flow synthesis, and
the end-to-end pipeline binding them together."""

from .audio import AudioClip, pad_or_trim, read_wav, trim_silence, write_wav
from .dsp import DspConfig, MelSpectrogram, MfccMatrix, delta, griffin_lim, mel_spectrogram, mfcc, stft
from .labels import EMOTIONS

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "DspConfig",
    "EMOTIONS",
    "MelSpectrogram",
    "MfccMatrix",
    "delta",
    "griffin_lim",
    "mel_spectrogram",
    "mfcc",
    "pad_or_trim",
    "read_wav",
    "stft",
    "trim_silence",
    "write_wav",
    "__version__",
]
