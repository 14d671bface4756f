import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import ArchiveFormatError, ProtocolInfeasibleError
from dsp.containers import FrameConfig
from dsp.frontend import fbank
from dsp.wavio import read_wav
from synthdata.corpus import block_split, generate_corpus, plan_corpus
from synthdata.manifest import CorpusManifest, UtteranceRecord
from synthdata.protocol import SreProtocol, condition_label, make_sre_protocol
from synthdata.serializers import ProtocolSerializer, SynthSpecSerializer
from synthdata.specs import SynthSpec
from synthdata.synthesis import (
    emotion_profiles,
    phone_profiles,
    speaker_profiles,
    synthesize,
)

TINY = SynthSpec(
    n_phones=4,
    n_speakers=2,
    n_emotions=2,
    utterances_per_speaker=6,
    phones_per_utterance=(2, 3),
    phone_duration_frames=(3, 5),
    n_eval_speakers=2,
    eval_utterances_per_speaker=3,
    seed=7,
)


def record(utt_id, speaker_id, split="eval", n_frames=60, emotion_id=0):
    return UtteranceRecord(
        utt_id=utt_id,
        wav_path=f"wav/{utt_id}.wav",
        speaker_id=speaker_id,
        emotion_id=emotion_id,
        split=split,
        n_frames=n_frames,
        phone_segments=[(0, 0, n_frames // 2), (1, n_frames // 2, n_frames)],
    )


def sre_manifest(utterances=6, n_frames=60):
    records = [record(f"tr_u{u}", "tr", split="train") for u in range(4)]
    records += [record(f"tr_e{u}", "tr", split="eval") for u in range(2)]
    for speaker in ("a", "b", "c"):
        records += [record(f"{speaker}_u{u}", speaker, n_frames=n_frames) for u in range(utterances)]
    return CorpusManifest(records)


class SynthesisTests(SimpleTestCase):

    def test_emotion_changes_the_waveform(self):
        spec = SynthSpec(seed=1)
        speaker = speaker_profiles(spec)[0]
        first, second = emotion_profiles(spec)[:2]
        phones = phone_profiles(spec)
        segments = [(0, 0, 10), (3, 10, 22)]
        a = synthesize(segments, speaker, first, phones, FrameConfig(), -40.0, np.random.default_rng(3))
        b = synthesize(segments, speaker, second, phones, FrameConfig(), -40.0, np.random.default_rng(3))
        self.assertEqual(a.shape, b.shape)
        self.assertGreater(np.abs(a - b).max(), 1e-3)

    def test_output_length_matches_frame_count(self):
        spec = SynthSpec()
        samples = synthesize([(1, 0, 7), (2, 7, 15)], speaker_profiles(spec)[5],
                             emotion_profiles(spec)[1], phone_profiles(spec), FrameConfig(),
                             -40.0, np.random.default_rng(0))
        self.assertEqual(samples.shape[0], FrameConfig().n_samples(15))
        self.assertLess(np.abs(samples).max(), 1.0)
        self.assertGreater(np.sqrt(np.mean(samples**2)), 1e-3)

    def test_speaker_profiles_are_distinct(self):
        profiles = speaker_profiles(SynthSpec())
        self.assertEqual(len(profiles), 32)
        self.assertEqual(len({p.f0 for p in profiles}), 32)


class CorpusPlanTests(SimpleTestCase):

    def test_training_speakers_split_in_emotion_blocks(self):
        spec = SynthSpec(utterances_per_speaker=24, n_emotions=4)
        splits = [block_split(u, spec) for u in range(24)]
        self.assertEqual(splits.count("train"), 16)
        self.assertEqual(splits[16:20], ["dev"] * 4)
        self.assertEqual(splits[20:], ["eval"] * 4)

    def test_eval_only_speakers_only_in_eval(self):
        plan = plan_corpus(TINY)
        eval_only = {entry for entry in plan if entry[1] >= TINY.n_speakers}
        self.assertEqual({entry[3] for entry in eval_only}, {"eval"})
        self.assertEqual(len(plan), 2 * 6 + 2 * 3)


class GenerateCorpusTests(SimpleTestCase):

    def test_same_spec_gives_identical_corpus(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = generate_corpus(TINY, Path(tmp) / "a", workers=2)
            second = generate_corpus(TINY, Path(tmp) / "b", workers=3)
            self.assertEqual(first.to_lines(), second.to_lines())
            for rec in first:
                self.assertEqual(first.wav_path(rec).read_bytes(), second.wav_path(rec).read_bytes())

    def test_wavs_frame_to_the_manifest_length(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = generate_corpus(TINY, tmp, workers=1)
            reread = CorpusManifest.read(Path(tmp) / "manifest.jsonl")
            self.assertEqual(reread.to_lines(), manifest.to_lines())
            for rec in reread:
                features = fbank(read_wav(reread.wav_path(rec)), FrameConfig())
                self.assertEqual(features.n_frames, rec.n_frames)
            self.assertEqual(reread.sre_speakers(), ["spk02", "spk03"])
            self.assertEqual(set(reread.speakers("train")), {"spk00", "spk01"})


class ManifestTests(SimpleTestCase):

    def test_lines_round_trip(self):
        manifest = sre_manifest()
        again = CorpusManifest.from_lines(manifest.to_lines())
        self.assertEqual(again.records, manifest.records)

    def test_gap_between_segments_is_rejected(self):
        line = ('{"utt_id": "x", "wav_path": "wav/x.wav", "speaker_id": "s", "emotion_id": 0, '
                '"split": "train", "n_frames": 10, "phone_segments": [[0, 0, 4], [1, 5, 10]]}\n')
        with self.assertRaises(ArchiveFormatError):
            CorpusManifest.from_lines(line)

    def test_phone_labels_follow_segments(self):
        labels = record("u", "s", n_frames=6).phone_labels()
        np.testing.assert_array_equal(labels, [0, 0, 0, 1, 1, 1])

    def test_duplicate_ids_are_rejected(self):
        with self.assertRaises(ArchiveFormatError):
            CorpusManifest([record("u", "s"), record("u", "t")])


class SreProtocolTests(SimpleTestCase):

    def setUp(self):
        self.protocol = make_sre_protocol(sre_manifest(), enroll_seconds=1.0,
                                          test_frames_list=(20, 50), seed=3, tests_per_speaker=5)

    def test_speakers_exclude_training_speakers(self):
        self.assertEqual(self.protocol.speakers, ["a", "b", "c"])

    def test_tests_have_exactly_the_requested_length(self):
        for segment in self.protocol.tests_for("C(1-20f)"):
            self.assertEqual(segment.n_frames, 20)
        self.assertEqual(len(self.protocol.tests_for("C(1-20f)")), 15)

    def test_enrollment_and_tests_never_overlap(self):
        for speaker, pool in self.protocol.enrollment.items():
            tested = {t.utt_id for t in self.protocol.tests if t.speaker_id == speaker}
            self.assertFalse(set(pool) & tested)
            self.assertGreaterEqual(len(pool) * 60, 100)

    def test_segments_within_a_condition_are_disjoint(self):
        for condition in self.protocol.conditions:
            seen = {}
            for t in self.protocol.tests_for(condition):
                frames = set(range(t.start_frame, t.end_frame))
                self.assertFalse(seen.get(t.utt_id, set()) & frames)
                seen.setdefault(t.utt_id, set()).update(frames)

    def test_one_group_per_requested_length(self):
        protocol = make_sre_protocol(sre_manifest(utterances=8, n_frames=120), enroll_seconds=1.0,
                                     test_frames_list=(20, 50, 100))
        self.assertEqual(protocol.conditions, ["C(1-20f)", "C(1-50f)", "C(1-100f)"])
        self.assertEqual({t.condition for t in protocol.tests}, set(protocol.conditions))
        self.assertEqual(condition_label(30.0, 20), "C(30-20f)")

    def test_dict_round_trip(self):
        again = SreProtocol.from_dict(self.protocol.to_dict())
        self.assertEqual(again.tests, self.protocol.tests)
        self.assertEqual(again.enrollment, self.protocol.enrollment)

    def test_single_speaker_is_infeasible(self):
        records = [record(f"a_u{u}", "a") for u in range(6)]
        with self.assertRaisesMessage(ProtocolInfeasibleError, "protocol infeasible"):
            make_sre_protocol(CorpusManifest(records), enroll_seconds=1.0)

    def test_short_audio_is_infeasible(self):
        with self.assertRaises(ProtocolInfeasibleError):
            make_sre_protocol(sre_manifest(utterances=2), enroll_seconds=1.0)
        with self.assertRaises(ProtocolInfeasibleError):
            make_sre_protocol(sre_manifest(), enroll_seconds=1.0, test_frames_list=(61,))


class SynthSerializerTests(SimpleTestCase):

    def test_defaults(self):
        serializer = SynthSpecSerializer(data={})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save(), SynthSpec())

    def test_counts_below_two_are_invalid(self):
        serializer = SynthSpecSerializer(data={"n_speakers": 1, "utterances_per_speaker": 1})
        self.assertFalse(serializer.is_valid())
        self.assertEqual(set(serializer.errors), {"n_speakers"})

    def test_unordered_range_is_invalid(self):
        serializer = SynthSpecSerializer(data={"phones_per_utterance": [5, 3]})
        self.assertFalse(serializer.is_valid())

    def test_protocol_defaults(self):
        serializer = ProtocolSerializer(data={"enroll_seconds": 10})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        config = serializer.save()
        self.assertEqual(config.test_frames, (20, 50, 100))
        self.assertEqual(replace(config, enroll_seconds=30.0).enroll_seconds, 30.0)
