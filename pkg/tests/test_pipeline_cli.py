"""End-to-end smoke runs, stage substitutability, and CLI contracts."""

import json
from pathlib import Path

import numpy as np
import pytest

from affectpipe.audio import read_wav, write_wav
from affectpipe.errors import StageError
from affectpipe.cli import main
from affectpipe.labels import EMOTIONS
from affectpipe.manifest import (
    build_manifest,
    label_for_filename,
    parse_manifest,
    write_manifest,
)
from affectpipe.pipeline import Pipeline, PipelineConfig, file_seed, run_pipeline
from affectpipe.toydata import toy_speech_clip


@pytest.fixture()
def toy_wav(tmp_path):
    path = tmp_path / "input.wav"
    write_wav(toy_speech_clip(seconds=1.0, seed=3), path)
    return path


class TestManifest:
    def test_label_map_application(self, tmp_path):
        label_map = {"separator": "-", "field": 2, "labels": {"06": "fear", "03": "happy"}}
        assert label_for_filename("03-01-06-01-02-01-12.wav", label_map) == "fear"
        assert label_for_filename("03-01-99-01.wav", label_map) is None

    def test_build_walks_and_reports_skips(self, tmp_path):
        root = tmp_path / "corpus"
        (root / "sub").mkdir(parents=True)
        for name in ("a-06.wav", "b-03.wav", "sub/c-99.wav"):
            write_wav(toy_speech_clip(seconds=0.1), root / name)
        label_map = {"separator": "-", "field": 1, "labels": {"06": "fear", "03": "happiness"}}
        entries, skipped = build_manifest(root, label_map)
        assert {e["emotion"] for e in entries} == {"fear", "happiness"}
        assert len(skipped) == 1 and skipped[0].endswith("c-99.wav")

    def test_empty_directory_gives_empty_manifest(self, tmp_path):
        root = tmp_path / "empty"
        root.mkdir()
        entries, skipped = build_manifest(root, {"separator": "-", "field": 0, "labels": {}})
        assert entries == [] and skipped == []

    def test_manifest_round_trip(self, tmp_path):
        entries = [
            {"path": "x.wav", "emotion": "anger", "split": "train"},
            {"path": "y.wav", "text": "hello"},
        ]
        path = tmp_path / "m.jsonl"
        write_manifest(entries, path)
        back = parse_manifest(path)
        assert back[0]["emotion"] == "anger"
        assert back[1]["text"] == "hello"


class TestPipeline:
    def test_mock_pipeline_populates_every_field(self, toy_wav, tmp_path):
        out = tmp_path / "out"
        record = run_pipeline(toy_wav, PipelineConfig(seed=1), out)
        assert record.emotion in EMOTIONS
        assert abs(sum(record.emotion_distribution.values()) - 1.0) < 1e-6
        assert record.transcript
        assert record.reply_text
        assert Path(record.reply_wav).exists()
        reply = read_wav(record.reply_wav)
        assert len(reply) > 0 and reply.sample_rate == 22050
        assert all(v >= 0 for v in record.timings.values())
        persisted = json.loads((out / "input_record.json").read_text())
        assert persisted["reply_text"] == record.reply_text

    def test_emotion_token_leads_dialogue_context(self, toy_wav, tmp_path):
        config = PipelineConfig(seed=2)
        pipeline = Pipeline(config)
        record = pipeline.run_file(toy_wav, tmp_path / "out")
        tokens = pipeline.dialogue_stage.context_tokens(record.emotion, record.transcript)
        assert tokens[0] == f"<emo:{record.emotion}>"

    def test_fixed_seed_reproduces_reply_wav_bytes(self, toy_wav, tmp_path):
        config = PipelineConfig(seed=7)
        a = tmp_path / "a"
        b = tmp_path / "b"
        run_pipeline(toy_wav, config, a)
        run_pipeline(toy_wav, config, b)
        wav_a = (a / "input_reply.wav").read_bytes()
        wav_b = (b / "input_reply.wav").read_bytes()
        assert wav_a == wav_b
        rec_a = json.loads((a / "input_record.json").read_text())
        rec_b = json.loads((b / "input_record.json").read_text())
        for rec in (rec_a, rec_b):
            rec.pop("timings")
            rec["reply_wav"] = Path(rec["reply_wav"]).name
        assert rec_a == rec_b

    def test_missing_checkpoint_raises_stage_error(self, toy_wav, tmp_path):
        config = PipelineConfig(ser={"checkpoint": str(tmp_path / "nope.aftb")})
        with pytest.raises(StageError) as err:
            run_pipeline(toy_wav, config, tmp_path / "out")
        assert err.value.stage == "ser"

    def test_stage_failure_persists_partial_record(self, tmp_path):
        bad = tmp_path / "broken.wav"
        bad.write_bytes(b"RIFF....WAVEjunk")
        with pytest.raises(StageError) as err:
            run_pipeline(bad, PipelineConfig(), tmp_path / "out")
        assert err.value.stage == "featurize"
        persisted = json.loads((tmp_path / "out" / "broken_record.json").read_text())
        assert persisted["error"].startswith("featurize:")
        assert persisted["reply_text"] is None

    def test_config_json_round_trip(self):
        config = PipelineConfig(seed=5, n_mels=48)
        back = PipelineConfig.from_json(config.to_json())
        assert back == config

    def test_real_checkpoints_keep_record_schema(self, toy_wav, tmp_path):
        # swapping every mock for a real (toy-trained) binding must leave
        # the record schema and downstream types unchanged
        from affectpipe import flow as flowmod
        from affectpipe import ser as sermod
        from affectpipe import stt as sttmod
        from affectpipe.dsp import DspConfig
        from affectpipe.toydata import emotion_corpus

        ser_path = tmp_path / "ser.aftb"
        dsp = DspConfig.for_sample_rate(16000, hop_ms=20.0, n_mels=32, n_mfcc=13)
        items = sermod.prepare_items(emotion_corpus(n_clips=14, seed=5), dsp, target_len=16000)
        ser_model = sermod.build_model(sermod.SerConfig(n_mels=32, n_frames=49, seed=5))
        sermod.train(ser_model, items, sermod.TrainSettings(epochs=1, batch_size=7, seed=5))
        sermod.save_model(ser_model, ser_path)

        stt_path = tmp_path / "stt.aftb"
        sttmod.save_weights(sttmod.AcousticWeights.random(feature_dim=32, seed=5), stt_path)

        flow_path = tmp_path / "flow.aftb"
        flow_cfg = flowmod.FlowConfig(frame_dim=32, n_steps=2, hidden=8,
                                      text_vocab=64, text_embed=8, speaker_dim=4, seed=5)
        flowmod.save_flow(
            flowmod.FlowModel(flow_cfg), flow_path,
            extra={"mel_mean": -35.0, "mel_std": 12.0},
        )

        candidates = tmp_path / "candidates.jsonl"
        candidates.write_text('{"text": "hello there friend"}\n{"text": "nice to meet you"}\n')

        real = PipelineConfig(
            ser={"checkpoint": str(ser_path)},
            stt={"weights": str(stt_path)},
            dialogue={"candidates": str(candidates)},
            tts={"checkpoint": str(flow_path)},
            seed=6,
        )
        mock_record = run_pipeline(toy_wav, PipelineConfig(seed=6), tmp_path / "mock_out")
        real_record = run_pipeline(toy_wav, real, tmp_path / "real_out")
        assert set(mock_record.to_dict()) == set(real_record.to_dict())
        assert real_record.emotion in EMOTIONS
        assert real_record.error is None
        assert read_wav(real_record.reply_wav).sample_rate == 22050

    def test_file_seed_stable(self):
        assert file_seed(3, "/a/b/x.wav") == file_seed(3, "/other/x.wav")
        assert file_seed(3, "x.wav") != file_seed(4, "x.wav")


class TestCli:
    def test_metrics_mos_prints_mean(self, tmp_path, capsys):
        ratings = tmp_path / "r.json"
        ratings.write_text("[5, 5, 5]")
        assert main(["metrics", "mos", "--ratings", str(ratings)]) == 0
        assert capsys.readouterr().out.strip() == "5.000"

    def test_metrics_wer_multi_reference(self, tmp_path, capsys):
        (tmp_path / "refs.txt").write_text("say the word dog\nhello world\thello word\n")
        (tmp_path / "hyps.txt").write_text("say word dot\nhello word\n")
        assert main(["metrics", "wer", "--ref", str(tmp_path / "refs.txt"), "--hyp", str(tmp_path / "hyps.txt")]) == 0
        value = float(capsys.readouterr().out.strip())
        assert value == pytest.approx(2 / 6, abs=1e-4)

    def test_metrics_f1_table(self, tmp_path, capsys):
        pairs = tmp_path / "pairs.json"
        pairs.write_text(json.dumps({"true": ["a", "a", "b"], "pred": ["a", "b", "b"]}))
        assert main(["metrics", "f1", "--pairs", str(pairs)]) == 0
        out = capsys.readouterr().out
        assert "Precision" in out and "Weighted avg" in out

    def test_missing_flag_exits_one(self, capsys):
        assert main(["metrics", "mos"]) == 1

    def test_unknown_subcommand_exits_one(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_featurize_writes_bundle_and_figures(self, toy_wav, tmp_path, capsys):
        out = tmp_path / "feat"
        assert main(["featurize", "--wav", str(toy_wav), "--out", str(out)]) == 0
        assert (out / "input_features.aftb").exists()
        assert (out / "input_mel.png").exists()
        from affectpipe import bundle

        tensors, meta = bundle.load(out / "input_features.aftb")
        assert set(tensors) == {"mel", "mfcc", "delta"}
        assert meta["sample_rate"] == 16000

    def test_augment_command(self, toy_wav, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"seed": 5, "steps": [{"kind": "noise", "snr_db": 20.0}]}))
        out = tmp_path / "aug"
        assert main(["augment", "--wav", str(toy_wav), "--spec", str(spec), "--out", str(out), "--no-figures"]) == 0
        assert (out / "input_augmented.wav").exists()
        assert not (out / "input_augmented_mel.aftb").exists()

    def test_augment_command_emits_masked_mel(self, toy_wav, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({
            "seed": 5,
            "steps": [{"kind": "spec_augment", "n_time_masks": 1, "max_t": 4,
                       "n_freq_masks": 1, "max_f": 10}],
        }))
        out = tmp_path / "aug2"
        assert main(["augment", "--wav", str(toy_wav), "--spec", str(spec), "--out", str(out), "--no-figures"]) == 0
        from affectpipe import bundle

        tensors, meta = bundle.load(out / "input_augmented_mel.aftb")
        assert "mel" in tensors and meta["sample_rate"] == 16000

    def test_chat_respond_with_history(self, tmp_path, capsys):
        history = tmp_path / "history.jsonl"
        history.write_text('{"text": "oh la"}\n')
        assert main(["chat", "respond", "--text", "ah oh", "--emotion", "fear",
                     "--history", str(history), "--dump-context"]) == 0
        out = capsys.readouterr().out
        assert "context: <emo:fear>" in out

    def test_pipeline_run_cli_missing_checkpoint_exits_two(self, toy_wav, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"ser": {"checkpoint": str(tmp_path / "missing.aftb")}}))
        code = main([
            "pipeline", "run", "--wav", str(toy_wav),
            "--config", str(config), "--out", str(tmp_path / "out"),
        ])
        assert code == 2

    def test_pipeline_run_cli_smoke(self, toy_wav, tmp_path, capsys):
        out = tmp_path / "runs"
        assert main(["pipeline", "run", "--wav", str(toy_wav), "--out", str(out), "--seed", "4"]) == 0
        records = (out / "records.jsonl").read_text().strip().splitlines()
        assert len(records) == 1
        record = json.loads(records[0])
        assert record["emotion"] in EMOTIONS
        assert Path(record["reply_wav"]).exists()

    def test_stt_decode_cli(self, tmp_path, capsys):
        from affectpipe import stt as sttmod

        weights = sttmod.AcousticWeights.random(feature_dim=64, seed=1)
        path = tmp_path / "w.aftb"
        sttmod.save_weights(weights, path)
        wav = tmp_path / "x.wav"
        write_wav(toy_speech_clip(seconds=0.5, seed=9), wav)
        assert main(["stt", "decode", "--wav", str(wav), "--weights", str(path)]) == 0

    def test_chat_respond_cli(self, capsys):
        assert main(["chat", "respond", "--text", "ah oh ee", "--emotion", "happiness", "--dump-context"]) == 0
        out = capsys.readouterr().out
        assert "context: <emo:happiness>" in out

    def test_manifest_build_cli(self, tmp_path, capsys):
        root = tmp_path / "corpus"
        root.mkdir()
        write_wav(toy_speech_clip(seconds=0.1), root / "a-06.wav")
        write_wav(toy_speech_clip(seconds=0.1), root / "b-xx.wav")
        label_map = tmp_path / "map.json"
        label_map.write_text(json.dumps({"separator": "-", "field": 1, "labels": {"06": "fear"}}))
        out = tmp_path / "mf"
        assert main(["manifest", "build", "--root", str(root), "--label-map", str(label_map), "--out", str(out)]) == 0
        entries = parse_manifest(out / "manifest.jsonl")
        assert len(entries) == 1 and entries[0]["emotion"] == "fear"
        assert (out / "skipped.txt").read_text().strip().endswith("b-xx.wav")

    def test_tts_train_synth_and_style_cli(self, tmp_path):
        wav_dir = tmp_path / "wavs"
        wav_dir.mkdir()
        entries = []
        for i in range(3):
            path = wav_dir / f"clip{i}.wav"
            write_wav(toy_speech_clip(seconds=0.4, sample_rate=22050, seed=i), path)
            entries.append({"path": str(path), "text": f"sample line {i}"})
        manifest = tmp_path / "tts.jsonl"
        write_manifest(entries, manifest)
        out = tmp_path / "tts out"
        code = main([
            "tts", "train", "--manifest", str(manifest), "--out", str(out),
            "--epochs", "2", "--n-mels", "16", "--no-figures",
        ])
        assert code == 0
        checkpoint = out / "flow_model.aftb"
        assert checkpoint.exists()
        synth_out = tmp_path / "synth"
        code = main([
            "tts", "synth", "--text", "hello there", "--checkpoint", str(checkpoint),
            "--out", str(synth_out), "--frames", "40", "--no-figures",
        ])
        assert code == 0
        assert (synth_out / "synth.wav").exists()
        style_out = tmp_path / "styled"
        code = main([
            "tts", "style-transfer", "--checkpoint", str(checkpoint),
            "--style-manifest", str(manifest), "--out", str(style_out),
            "--frames", "30", "--no-figures",
        ])
        assert code == 0
        styled = read_wav(style_out / "style_transfer.wav")
        assert len(styled) > 0 and styled.sample_rate == 22050

    def test_writes_stay_inside_out_dir(self, toy_wav, tmp_path, monkeypatch):
        out = tmp_path / "only_here"
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        assert main(["featurize", "--wav", str(toy_wav), "--out", str(out), "--no-figures"]) == 0
        assert list(workdir.iterdir()) == []
