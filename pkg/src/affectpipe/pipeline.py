"""End-to-end orchestration: WAV in, emotion + transcript out, an
emotion-conditioned textual reply, and a synthesized reply WAV.

Every stage is pluggable; each binding is either a checkpoint path or
"mock". Mocks are deterministic, input-dependent stand-ins so the whole
chain runs (and is testable) without any trained model. All randomness
fans out from one config seed by fixed per-stage offsets.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import flow as flowmod
from . import ser as sermod
from . import stt as sttmod
from .audio import AudioClip, pad_or_trim, read_wav, write_wav
from .dialogue import (
    BigramScorer,
    DecodeConfig,
    PolyEncoderConfig,
    PolyEncoderModel,
    Vocabulary,
    retrieve_and_refine,
)
from .dsp import DspConfig, griffin_lim, mel_spectrogram
from .errors import ConfigError, StageError
from .labels import EMOTIONS
from .manifest import parse_manifest

SYNTH_SAMPLE_RATE = 22050

DIALOGUE_SEED_OFFSET = 202
TTS_SEED_OFFSET = 303

MOCK_CANDIDATE_REPLIES = (
    "that sounds interesting tell me more",
    "i am glad to hear that",
    "i am sorry that happened to you",
    "let us talk about something nice",
    "how does that make you feel",
    "that is quite surprising indeed",
    "everything will be alright",
    "thank you for sharing that with me",
)


@dataclass(frozen=True)
class PipelineConfig:
    """Stage bindings plus analysis, decode, and seeding settings."""

    ser: str | dict = "mock"
    stt: str | dict = "mock"
    dialogue: str | dict = "mock"
    tts: str | dict = "mock"
    input_duration_s: float = 3.0
    n_mels: int = 32
    decode: dict = field(default_factory=lambda: asdict(DecodeConfig(max_len=12, min_len=3, beam_size=4)))
    seed: int = 0

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls(**json.loads(text))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def validate_paths(self) -> None:
        for stage_name, binding in (("ser", self.ser), ("stt", self.stt),
                                    ("dialogue", self.dialogue), ("tts", self.tts)):
            if isinstance(binding, dict):
                for key, value in binding.items():
                    if key.endswith(("checkpoint", "weights", "manifest", "candidates")) and value:
                        if not Path(value).exists():
                            raise StageError(stage_name, ConfigError(f"bound path {value} does not exist"))


@dataclass
class PipelineRecord:
    input_path: str
    emotion_distribution: dict[str, float] | None = None
    emotion: str | None = None
    transcript: str | None = None
    reply_text: str | None = None
    reply_wav: str | None = None
    timings: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# stages


class SerStage:
    def __init__(self, binding, n_mels: int):
        self.n_mels = n_mels
        self.model = None
        if isinstance(binding, dict):
            self.model = sermod.load_model(binding["checkpoint"])

    def run(self, mel_values: np.ndarray) -> np.ndarray:
        if self.model is not None:
            cfg = self.model.config
            trimmed = mel_values[: cfg.n_mels, : cfg.n_frames]
            padded = np.full((cfg.n_mels, cfg.n_frames), mel_values.min(), dtype=np.float64)
            padded[: trimmed.shape[0], : trimmed.shape[1]] = trimmed
            return sermod.predict(self.model, sermod.normalize_mel(padded))
        # mock: softmax over 7 mel-band energies
        bands = np.array_split(mel_values, len(EMOTIONS), axis=0)
        means = np.array([b.mean() for b in bands]) / 10.0
        e = np.exp(means - means.max())
        return e / e.sum()


class SttStage:
    MOCK_WORDS = ("ah", "oh", "ee", "oo", "mm", "la", "na", "so")

    def __init__(self, binding):
        self.weights = None
        if isinstance(binding, dict):
            self.weights = sttmod.load_weights(binding["weights"])

    def run(self, mel_values: np.ndarray) -> str:
        if self.weights is not None:
            frames = mel_values.T.astype(np.float64)
            frames = (frames - frames.mean()) / (frames.std() + 1e-6)
            return sttmod.transcribe(frames, self.weights)
        # mock: one word per quarter-second window, chosen by dominant band
        t = mel_values.shape[1]
        chunk = max(1, t // 4)
        words = []
        for start in range(0, t, chunk):
            window = mel_values[:, start : start + chunk]
            band = int(np.argmax(window.mean(axis=1)))
            words.append(self.MOCK_WORDS[band % len(self.MOCK_WORDS)])
        return " ".join(words)


class DialogueStage:
    def __init__(self, binding, decode: DecodeConfig, seed: int):
        self.decode = decode
        candidate_texts = list(MOCK_CANDIDATE_REPLIES)
        if isinstance(binding, dict) and binding.get("candidates"):
            entries = [json.loads(line) for line in Path(binding["candidates"]).read_text().splitlines() if line.strip()]
            candidate_texts = [e["text"] for e in entries]
        self.vocab = Vocabulary.from_texts(candidate_texts)
        self.candidates = [self.vocab.encode(t.lower().split()) for t in candidate_texts]
        self.model = PolyEncoderModel(self.vocab, PolyEncoderConfig(seed=seed))
        self.scorer = self._candidate_bigram_scorer()

    def _candidate_bigram_scorer(self) -> BigramScorer:
        v = len(self.vocab)
        counts = np.full((v, v), 0.1)
        initial = np.full(v, 0.1)
        for ids in self.candidates:
            if not ids:
                continue
            initial[ids[0]] += 1.0
            for a, b in zip(ids, ids[1:]):
                counts[a, b] += 1.0
            counts[ids[-1], self.vocab.eos_id] += 2.0
        return BigramScorer(np.log(initial), np.log(counts))

    def run(self, emotion: str, transcript: str) -> str:
        context = [self.vocab.emotion_id(emotion)] + self.vocab.encode(transcript.lower().split())
        reply_ids = retrieve_and_refine(context, self.candidates, self.model, self.scorer, self.decode)
        return " ".join(self.vocab.decode(reply_ids))

    def context_tokens(self, emotion: str, transcript: str) -> list[str]:
        context = [self.vocab.emotion_id(emotion)] + self.vocab.encode(transcript.lower().split())
        return self.vocab.decode(context)


class TtsStage:
    def __init__(self, binding, seed: int):
        self.synth_dsp = DspConfig.for_sample_rate(SYNTH_SAMPLE_RATE, n_mels=32, n_mfcc=13)
        self.mel_mean = -35.0
        self.mel_std = 12.0
        self.style_frames: list[np.ndarray] | None = None
        if isinstance(binding, dict):
            self.model, extra = flowmod.load_flow(binding["checkpoint"])
            if extra.get("mel_mean") is not None:
                self.mel_mean = float(extra["mel_mean"])
                self.mel_std = float(extra["mel_std"])
            if extra.get("dsp"):
                self.synth_dsp = DspConfig(**extra["dsp"])
            if binding.get("style_manifest"):
                self.style_frames = self._style_frames_from_manifest(binding["style_manifest"])
        else:
            cfg = flowmod.FlowConfig(
                frame_dim=self.synth_dsp.n_mels, n_steps=2, hidden=16,
                text_vocab=64, text_embed=8, speaker_dim=4, seed=seed,
            )
            self.model = flowmod.FlowModel(cfg)

    def _style_frames_from_manifest(self, path) -> list[np.ndarray]:
        frames = []
        for entry in parse_manifest(path):
            clip = read_wav(entry["path"])
            mel = mel_spectrogram(clip, self.synth_dsp)
            frames.append(((mel.values - self.mel_mean) / self.mel_std).T)
        return frames

    def text_ids(self, text: str) -> list[int]:
        vocab_size = self.model.config.text_vocab or 1
        return [zlib.crc32(w.encode()) % vocab_size for w in text.split()]

    def run(self, reply_text: str, seed: int) -> AudioClip:
        from .dsp import MelSpectrogram

        n_frames = 10 * max(1, len(reply_text.split())) + 20
        cond = self.model.conditioning(self.text_ids(reply_text))
        if self.style_frames:
            frames = flowmod.style_transfer(self.model, self.style_frames, cond, seed=seed, n_frames=n_frames)
        else:
            frames = flowmod.sample(self.model, cond, sigma=0.7, n_frames=n_frames, seed=seed)
        mel_db = np.clip(frames.T * self.mel_std + self.mel_mean, -80.0, 15.0)
        mel = MelSpectrogram(values=mel_db, config=self.synth_dsp, sample_rate=SYNTH_SAMPLE_RATE)
        return griffin_lim(mel, iterations=30)


# ---------------------------------------------------------------------------
# orchestration


class Pipeline:
    """Stage chain bound once from a config, reusable across files."""

    def __init__(self, config: PipelineConfig):
        config.validate_paths()
        self.config = config
        self.dsp = DspConfig.for_sample_rate(16000, n_mels=config.n_mels, n_mfcc=13)
        decode = DecodeConfig(**config.decode)
        self.ser_stage = SerStage(config.ser, config.n_mels)
        self.stt_stage = SttStage(config.stt)
        self.dialogue_stage = DialogueStage(config.dialogue, decode, config.seed + DIALOGUE_SEED_OFFSET)
        self.tts_stage = TtsStage(config.tts, config.seed + TTS_SEED_OFFSET)

    def run_file(self, wav_path, out_dir, file_seed: int | None = None) -> PipelineRecord:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        record = PipelineRecord(input_path=str(wav_path))
        seed = self.config.seed if file_seed is None else file_seed
        stage = "featurize"
        try:
            started = time.perf_counter()
            clip = read_wav(wav_path)
            clip = pad_or_trim(clip, int(self.config.input_duration_s * clip.sample_rate))
            dsp = DspConfig.for_sample_rate(clip.sample_rate, n_mels=self.config.n_mels, n_mfcc=13)
            mel = mel_spectrogram(clip, dsp)
            record.timings[stage] = time.perf_counter() - started

            stage = "ser"
            started = time.perf_counter()
            dist = self.ser_stage.run(mel.values)
            record.emotion_distribution = {c: float(p) for c, p in zip(EMOTIONS, dist)}
            record.emotion = EMOTIONS[int(np.argmax(dist))]
            record.timings[stage] = time.perf_counter() - started

            stage = "stt"
            started = time.perf_counter()
            record.transcript = self.stt_stage.run(mel.values)
            record.timings[stage] = time.perf_counter() - started

            stage = "dialogue"
            started = time.perf_counter()
            record.reply_text = self.dialogue_stage.run(record.emotion, record.transcript)
            record.timings[stage] = time.perf_counter() - started

            stage = "tts"
            started = time.perf_counter()
            reply = self.tts_stage.run(record.reply_text, seed=seed + TTS_SEED_OFFSET)
            wav_out = out_dir / f"{Path(wav_path).stem}_reply.wav"
            write_wav(reply, wav_out)
            record.reply_wav = str(wav_out)
            record.timings[stage] = time.perf_counter() - started
        except Exception as exc:
            record.error = f"{stage}: {exc}"
            self._persist(record, out_dir)
            raise StageError(stage, exc) from exc

        self._persist(record, out_dir)
        return record

    def _persist(self, record: PipelineRecord, out_dir: Path) -> None:
        path = Path(out_dir) / f"{Path(record.input_path).stem}_record.json"
        path.write_text(json.dumps(record.to_dict(), sort_keys=True, indent=2) + "\n")


def file_seed(config_seed: int, wav_path) -> int:
    """Stable per-file seed so manifest runs are order-independent."""
    return config_seed + zlib.crc32(Path(wav_path).name.encode())


def run_pipeline(wav_path, config: PipelineConfig, out_dir) -> PipelineRecord:
    """One-shot convenience wrapper around Pipeline.run_file."""
    return Pipeline(config).run_file(wav_path, out_dir)
