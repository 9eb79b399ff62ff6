"""Command-line entry points.

Subcommands: featurize, augment, ser {train,eval,predict}, stt decode,
chat respond, tts {train,synth,style-transfer}, metrics {wer,f1,mos},
pipeline run, manifest build. Exit codes: 0 success, 1 usage error,
2 data/model error. Commands only write inside their --out directory;
report-producing commands also render figures there unless --no-figures.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bundle
from . import flow as flowmod
from . import ser as sermod
from . import stt as sttmod
from .audio import read_wav, write_wav
from .augment import AugmentSpec, apply_waveform_steps
from .dialogue import DecodeConfig
from .dsp import DspConfig, delta, griffin_lim, mel_spectrogram, mfcc
from .errors import AffectPipeError, StageError
from .manifest import build_manifest, load_label_map, parse_manifest, write_manifest
from .metrics import ConfusionMatrix, WerUtterance, f1_report, format_f1_table, mos, tokenize, wer
from .pipeline import Pipeline, PipelineConfig, file_seed

USAGE_ERROR = 1
DATA_ERROR = 2


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dsp_for(args, sample_rate: int) -> DspConfig:
    if getattr(args, "dsp_config", None):
        return DspConfig(**json.loads(Path(args.dsp_config).read_text()))
    return DspConfig.for_sample_rate(sample_rate, n_mels=args.n_mels, n_mfcc=min(30, args.n_mels))


def cmd_featurize(args) -> int:
    out = _out_dir(args)
    clip = read_wav(args.wav)
    cfg = _dsp_for(args, clip.sample_rate)
    mel = mel_spectrogram(clip, cfg)
    coeffs = mfcc(clip, cfg)
    deltas = delta(coeffs.coeffs, cfg.delta_window)
    stem = Path(args.wav).stem
    bundle.save(
        {"mel": mel.values, "mfcc": coeffs.coeffs, "delta": deltas},
        out / f"{stem}_features.aftb",
        meta={"sample_rate": clip.sample_rate, "dsp": asdict(cfg)},
    )
    if args.figures:
        from . import plots

        plots.save_mel_figure(mel.values, out / f"{stem}_mel.png", clip.sample_rate, cfg.hop_len)
        plots.save_matrix_figure(coeffs.coeffs, out / f"{stem}_mfcc.png", "coefficient")
        plots.save_matrix_figure(deltas, out / f"{stem}_delta.png", "delta")
    print(f"features written to {out / f'{stem}_features.aftb'}")
    return 0


def cmd_augment(args) -> int:
    out = _out_dir(args)
    clip = read_wav(args.wav)
    spec = AugmentSpec.from_json(Path(args.spec).read_text())
    augmented = apply_waveform_steps(clip, spec)
    stem = Path(args.wav).stem
    wav_out = out / f"{stem}_augmented.wav"
    write_wav(augmented, wav_out)
    if args.figures:
        from . import plots

        plots.save_waveform_figure(augmented.samples, augmented.sample_rate, out / f"{stem}_augmented.png")
    print(f"augmented clip written to {wav_out}")
    if spec.spectrogram_steps():
        # masking lives on the mel image, so emit the masked features too
        from .augment import apply_spectrogram_steps

        cfg = _dsp_for(args, augmented.sample_rate)
        mel = apply_spectrogram_steps(mel_spectrogram(augmented, cfg), spec)
        bundle.save({"mel": mel.values}, out / f"{stem}_augmented_mel.aftb",
                    meta={"sample_rate": augmented.sample_rate, "dsp": asdict(cfg)})
        if args.figures:
            from . import plots

            plots.save_mel_figure(mel.values, out / f"{stem}_augmented_mel.png",
                                  augmented.sample_rate, cfg.hop_len)
        print(f"masked mel written to {out / f'{stem}_augmented_mel.aftb'}")
    return 0


def _prepared_items(manifest_path, args, augment_spec=None):
    entries = parse_manifest(manifest_path)
    dsp = DspConfig.for_sample_rate(args.sample_rate, hop_ms=args.hop_ms, n_mels=args.n_mels,
                                    n_mfcc=min(30, args.n_mels))
    target = int(args.duration * args.sample_rate)
    return sermod.prepare_items(entries, dsp, target, augment=augment_spec, seed=args.seed), dsp


def cmd_ser_train(args) -> int:
    out = _out_dir(args)
    augment_spec = AugmentSpec.from_json(Path(args.augment).read_text()) if args.augment else None
    items, dsp = _prepared_items(args.manifest, args, augment_spec)
    train_items, val_items, _ = sermod.stratified_split(items, seed=args.seed)
    frames = 1 + (int(args.duration * args.sample_rate) - dsp.frame_len) // dsp.hop_len
    model = sermod.build_model(
        sermod.SerConfig(n_mels=args.n_mels, n_frames=frames, seed=args.seed)
    )
    settings = sermod.TrainSettings(
        epochs=args.epochs, batch_size=args.batch, optimizer=args.optimizer,
        lr=args.lr, seed=args.seed, target_accuracy=args.target_accuracy,
    )
    report = sermod.train(model, train_items, settings)
    sermod.save_model(model, out / "ser_model.aftb")
    (out / "train_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    if val_items:
        val = sermod.evaluate(model, val_items)
        (out / "val_report.json").write_text(json.dumps(val, indent=2) + "\n")
        print(format_f1_table(val))
    if args.figures:
        from . import plots

        plots.save_training_curves(report.to_dict(), out / "train_curves.png", title="emotion classifier")
    print(f"final train accuracy {report.epoch_accuracy[-1]:.3f} after {len(report.epoch_loss)} epochs")
    return 0


def cmd_ser_eval(args) -> int:
    out = _out_dir(args)
    model = sermod.load_model(args.checkpoint)
    entries = parse_manifest(args.manifest)
    dsp = DspConfig.for_sample_rate(args.sample_rate, hop_ms=args.hop_ms,
                                    n_mels=model.config.n_mels, n_mfcc=13)
    target = int(args.duration * args.sample_rate)
    items = sermod.prepare_items(entries, dsp, target)
    report = sermod.evaluate(model, items)
    (out / "eval_report.json").write_text(json.dumps(report, indent=2) + "\n")
    table = format_f1_table(report)
    (out / "eval_report.txt").write_text(table + "\n")
    if args.figures:
        from . import plots

        plots.save_confusion_figure(np.array(report["confusion"]), report["classes"], out / "confusion.png")
    print(table)
    return 0


def cmd_ser_predict(args) -> int:
    model = sermod.load_model(args.checkpoint)
    clip = read_wav(args.wav)
    dsp = DspConfig.for_sample_rate(clip.sample_rate, hop_ms=args.hop_ms,
                                    n_mels=model.config.n_mels, n_mfcc=13)
    from .audio import pad_or_trim

    target = dsp.frame_len + (model.config.n_frames - 1) * dsp.hop_len
    mel = mel_spectrogram(pad_or_trim(clip, target), dsp)
    dist = sermod.predict(model, sermod.normalize_mel(mel.values))
    result = {c: round(float(p), 6) for c, p in zip(model.classes, dist)}
    print(json.dumps({"distribution": result, "label": model.classes[int(np.argmax(dist))]}, indent=2))
    return 0


def cmd_stt_decode(args) -> int:
    weights = sttmod.load_weights(args.weights)
    clip = read_wav(args.wav)
    cfg = DspConfig.for_sample_rate(clip.sample_rate, n_mels=weights.feature_dim,
                                    n_mfcc=min(30, weights.feature_dim))
    mel = mel_spectrogram(clip, cfg)
    frames = mel.values.T
    frames = (frames - frames.mean()) / (frames.std() + 1e-6)
    print(sttmod.transcribe(frames, weights))
    return 0


def cmd_chat_respond(args) -> int:
    decode = DecodeConfig(method=args.method, beam_size=args.beam_size, max_len=args.max_len,
                          min_len=args.min_len, block_trigrams=not args.allow_trigrams,
                          top_k=args.top_k, seed=args.seed)
    from .pipeline import DialogueStage

    binding = {"candidates": args.candidates} if args.candidates else "mock"
    stage = DialogueStage(binding, decode, args.seed)
    text = args.text
    if args.history:
        turns = [json.loads(line)["text"] for line in Path(args.history).read_text().splitlines() if line.strip()]
        text = " ".join(turns + [text])
    if args.dump_context:
        print("context:", " ".join(stage.context_tokens(args.emotion, text)))
    print(stage.run(args.emotion, text))
    return 0


def _flow_items_from_manifest(manifest_path, dsp: DspConfig, mel_mean: float | None = None, mel_std: float | None = None):
    entries = parse_manifest(manifest_path)
    raw = []
    for entry in entries:
        clip = read_wav(entry["path"])
        mel = mel_spectrogram(clip, dsp)
        text = entry.get("text") or ""
        raw.append((mel.values.T, text))
    stacked = np.concatenate([m for m, _ in raw], axis=0)
    mean = float(stacked.mean()) if mel_mean is None else mel_mean
    std = float(stacked.std() + 1e-6) if mel_std is None else mel_std
    items = []
    for values, text in raw:
        ids = [zlib.crc32(w.encode()) % 64 for w in text.split()]
        items.append((((values - mean) / std), ids))
    return items, mean, std


def cmd_tts_train(args) -> int:
    out = _out_dir(args)
    dsp = DspConfig.for_sample_rate(args.sample_rate, n_mels=args.n_mels, n_mfcc=min(30, args.n_mels))
    items, mean, std = _flow_items_from_manifest(args.manifest, dsp)
    cfg = flowmod.FlowConfig(frame_dim=args.n_mels, n_steps=args.steps, hidden=args.hidden,
                             text_vocab=64, text_embed=8, speaker_dim=4, seed=args.seed)
    model = flowmod.FlowModel(cfg)
    report = flowmod.train_flow(items, model, epochs=args.epochs, lr=args.lr, seed=args.seed)
    extra = {"mel_mean": mean, "mel_std": std, "dsp": asdict(dsp)}
    flowmod.save_flow(model, out / "flow_model.aftb", extra=extra)
    (out / "train_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    if args.figures:
        from . import plots

        plots.save_training_curves(report.to_dict(), out / "train_curves.png", title="flow synthesis")
    print(f"final NLL {report.epoch_nll[-1]:.3f} after {len(report.epoch_nll)} epochs")
    return 0


def _synthesize_and_write(frames: np.ndarray, stage, out: Path, stem: str, figures: bool) -> Path:
    from .dsp import MelSpectrogram

    mel_db = np.clip(frames.T * stage["std"] + stage["mean"], -80.0, 15.0)
    mel = MelSpectrogram(values=mel_db, config=stage["dsp"], sample_rate=stage["rate"])
    clip = griffin_lim(mel, iterations=30)
    wav_out = out / f"{stem}.wav"
    write_wav(clip, wav_out)
    if figures:
        from . import plots

        plots.save_mel_figure(mel_db, out / f"{stem}_mel.png", stage["rate"], stage["dsp"].hop_len)
    return wav_out


def _load_flow_stage(checkpoint) -> tuple:
    model, extra = flowmod.load_flow(checkpoint)
    dsp = DspConfig(**extra["dsp"]) if extra.get("dsp") else DspConfig.for_sample_rate(22050, n_mels=model.config.frame_dim, n_mfcc=13)
    stage = {
        "mean": float(extra.get("mel_mean", -35.0)),
        "std": float(extra.get("mel_std", 12.0)),
        "dsp": dsp,
        "rate": 22050,
    }
    return model, stage


def cmd_tts_synth(args) -> int:
    out = _out_dir(args)
    model, stage = _load_flow_stage(args.checkpoint)
    ids = [zlib.crc32(w.encode()) % max(1, model.config.text_vocab) for w in args.text.split()]
    cond = model.conditioning(ids)
    frames = flowmod.sample(model, cond, sigma=args.sigma, n_frames=args.frames, seed=args.seed)
    wav_out = _synthesize_and_write(frames, stage, out, "synth", args.figures)
    print(f"synthesized {wav_out}")
    return 0


def cmd_tts_style(args) -> int:
    out = _out_dir(args)
    model, stage = _load_flow_stage(args.checkpoint)
    style_items, _, _ = _flow_items_from_manifest(args.style_manifest, stage["dsp"], stage["mean"], stage["std"])
    style_frames = [frames for frames, _ in style_items]
    ids = [zlib.crc32(w.encode()) % max(1, model.config.text_vocab) for w in (args.text or "").split()]
    cond = model.conditioning(ids)
    frames = flowmod.style_transfer(model, style_frames, cond, seed=args.seed, n_frames=args.frames)
    wav_out = _synthesize_and_write(frames, stage, out, "style_transfer", args.figures)
    print(f"styled synthesis {wav_out}")
    return 0


def cmd_metrics_wer(args) -> int:
    from .errors import FormatError

    refs = Path(args.ref).read_text().splitlines()
    hyps = Path(args.hyp).read_text().splitlines()
    if len(refs) != len(hyps):
        raise FormatError(
            f"reference file has {len(refs)} lines, hypothesis file {len(hyps)}"
        )
    corpus = [
        WerUtterance(hypothesis=tokenize(h), references=[tokenize(r) for r in ref_line.split("\t")])
        for ref_line, h in zip(refs, hyps)
    ]
    print(f"{wer(corpus):.4f}")
    return 0


def cmd_metrics_f1(args) -> int:
    data = json.loads(Path(args.pairs).read_text())
    classes = data.get("classes") or sorted(set(data["true"]) | set(data["pred"]))
    cm = ConfusionMatrix.from_pairs(data["true"], data["pred"], classes)
    report = f1_report(cm)
    print(format_f1_table(report))
    if args.out:
        out = _out_dir(args)
        (out / "f1_report.json").write_text(json.dumps(report, indent=2) + "\n")
        if args.figures:
            from . import plots

            plots.save_confusion_figure(cm.counts, classes, out / "confusion.png")
    return 0


def cmd_metrics_mos(args) -> int:
    ratings = json.loads(Path(args.ratings).read_text())
    print(f"{mos(ratings):.3f}")
    return 0


def cmd_pipeline_run(args) -> int:
    out = _out_dir(args)
    config = PipelineConfig.from_json(Path(args.config).read_text()) if args.config else PipelineConfig(seed=args.seed)
    pipeline = Pipeline(config)
    wavs = list(args.wav)
    if args.manifest:
        wavs.extend(entry["path"] for entry in parse_manifest(args.manifest))
    if not wavs:
        raise SystemExit("error: no input WAVs (pass --wav or --manifest)")
    records = []
    for wav in wavs:
        record = pipeline.run_file(wav, out, file_seed=file_seed(config.seed, wav))
        records.append(record)
        if args.dump_context:
            tokens = pipeline.dialogue_stage.context_tokens(record.emotion, record.transcript)
            print(f"{wav} context: {' '.join(tokens)}")
        print(f"{wav}: emotion={record.emotion} transcript={record.transcript!r} reply={record.reply_text!r}")
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    (out / "records.jsonl").write_text("\n".join(lines) + "\n")
    return 0


def cmd_manifest_build(args) -> int:
    out = _out_dir(args)
    label_map = load_label_map(args.label_map)
    entries, skipped = build_manifest(args.root, label_map)
    write_manifest(entries, out / "manifest.jsonl")
    (out / "skipped.txt").write_text("\n".join(skipped) + ("\n" if skipped else ""))
    print(f"{len(entries)} labeled, {len(skipped)} skipped")
    return 0


def _add_figures_flag(parser):
    parser.add_argument("--no-figures", dest="figures", action="store_false",
                        help="skip rendering PNG figures")
    parser.set_defaults(figures=True)


def build_parser() -> CliParser:
    parser = CliParser(prog="affectpipe", description="Affective speech toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="extract mel/MFCC/delta features from a WAV")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-mels", type=int, default=64)
    p.add_argument("--dsp-config", help="JSON file of DspConfig fields")
    _add_figures_flag(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("augment", help="apply an augmentation spec to a WAV")
    p.add_argument("--wav", required=True)
    p.add_argument("--spec", required=True, help="AugmentSpec JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--n-mels", type=int, default=64)
    p.add_argument("--dsp-config", help="JSON file of DspConfig fields")
    _add_figures_flag(p)
    p.set_defaults(func=cmd_augment)

    ser_parser = sub.add_parser("ser", help="emotion classifier")
    ser_sub = ser_parser.add_subparsers(dest="ser_command", required=True)

    p = ser_sub.add_parser("train")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--augment", help="AugmentSpec JSON file (supplements originals)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=3.0, help="pad/trim length in seconds")
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.add_argument("--n-mels", type=int, default=64)
    p.add_argument("--target-accuracy", type=float, default=None)
    _add_figures_flag(p)
    p.set_defaults(func=cmd_ser_train)

    p = ser_sub.add_parser("eval")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    _add_figures_flag(p)
    p.set_defaults(func=cmd_ser_eval)

    p = ser_sub.add_parser("predict")
    p.add_argument("--wav", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.set_defaults(func=cmd_ser_predict)

    stt_parser = sub.add_parser("stt", help="speech to text")
    stt_sub = stt_parser.add_subparsers(dest="stt_command", required=True)
    p = stt_sub.add_parser("decode")
    p.add_argument("--wav", required=True)
    p.add_argument("--weights", required=True)
    p.set_defaults(func=cmd_stt_decode)

    chat_parser = sub.add_parser("chat", help="dialogue stage")
    chat_sub = chat_parser.add_subparsers(dest="chat_command", required=True)
    p = chat_sub.add_parser("respond")
    p.add_argument("--text", required=True)
    p.add_argument("--emotion", default="neutral")
    p.add_argument("--candidates", help="JSON-lines of {\"text\": ...} reply candidates")
    p.add_argument("--history", help="JSON-lines of {\"text\": ...} earlier turns")
    p.add_argument("--method", choices=("beam", "top_k"), default="beam")
    p.add_argument("--beam-size", type=int, default=4)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--allow-trigrams", action="store_true")
    p.add_argument("--dump-context", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_chat_respond)

    tts_parser = sub.add_parser("tts", help="flow synthesis")
    tts_sub = tts_parser.add_subparsers(dest="tts_command", required=True)

    p = tts_sub.add_parser("train")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--steps", type=int, default=2)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--n-mels", type=int, default=32)
    p.add_argument("--sample-rate", type=int, default=22050)
    p.add_argument("--seed", type=int, default=0)
    _add_figures_flag(p)
    p.set_defaults(func=cmd_tts_train)

    p = tts_sub.add_parser("synth")
    p.add_argument("--text", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--sigma", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    _add_figures_flag(p)
    p.set_defaults(func=cmd_tts_synth)

    p = tts_sub.add_parser("style-transfer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--style-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--text", default="")
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    _add_figures_flag(p)
    p.set_defaults(func=cmd_tts_style)

    metrics_parser = sub.add_parser("metrics", help="evaluation arithmetic")
    metrics_sub = metrics_parser.add_subparsers(dest="metrics_command", required=True)
    p = metrics_sub.add_parser("wer")
    p.add_argument("--ref", required=True, help="references, one line per utterance (tabs separate variants)")
    p.add_argument("--hyp", required=True, help="hypotheses, line-aligned with --ref")
    p.set_defaults(func=cmd_metrics_wer)
    p = metrics_sub.add_parser("f1")
    p.add_argument("--pairs", required=True, help="JSON with 'true' and 'pred' label lists")
    p.add_argument("--out")
    _add_figures_flag(p)
    p.set_defaults(func=cmd_metrics_f1)
    p = metrics_sub.add_parser("mos")
    p.add_argument("--ratings", required=True, help="JSON list of 1-5 ratings")
    p.set_defaults(func=cmd_metrics_mos)

    pipeline_parser = sub.add_parser("pipeline", help="end-to-end run")
    pipeline_sub = pipeline_parser.add_subparsers(dest="pipeline_command", required=True)
    p = pipeline_sub.add_parser("run")
    p.add_argument("--wav", action="append", default=[])
    p.add_argument("--manifest")
    p.add_argument("--config", help="PipelineConfig JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-context", action="store_true")
    p.set_defaults(func=cmd_pipeline_run)

    manifest_parser = sub.add_parser("manifest", help="corpus manifests")
    manifest_sub = manifest_parser.add_subparsers(dest="manifest_command", required=True)
    p = manifest_sub.add_parser("build")
    p.add_argument("--root", required=True)
    p.add_argument("--label-map", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_manifest_build)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_ERROR
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except AffectPipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return USAGE_ERROR
        return exc.code if exc.code is not None else USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
