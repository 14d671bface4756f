import itertools
import math
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from cascade.factors import Cascade
from core.exceptions import CascadeMismatchError, LabelError, ProtocolError, ZeroVectorError
from dsp.archives import FeatureArchive
from networks.builders import build_aer_net, build_ctdnn
from networks.configs import AerNetConfig, CtdnnConfig
from synthdata.manifest import CorpusManifest, UtteranceRecord
from synthdata.protocol import make_sre_protocol

from evaluation.experiments import run_aer_experiment, run_sre_experiment
from evaluation.metrics import (
    EmotionReport,
    TrialResult,
    cosine_score,
    emotion_metrics,
    top1_identification,
)

FBANK_DIM = 8


def one_hot_posteriors(predicted, n_classes=2):
    return np.eye(n_classes)[predicted]


class CosineScoreTests(SimpleTestCase):

    def test_examples(self):
        self.assertAlmostEqual(cosine_score([2.0, 0.0], [5.0, 0.0]), 1.0)
        self.assertAlmostEqual(cosine_score([0.0, 1.0], [3.0, 0.0]), 0.0)
        self.assertAlmostEqual(cosine_score([1.0, 1.0], [1.0, 0.0]), 1 / math.sqrt(2), places=12)

    def test_zero_vector(self):
        with self.assertRaisesMessage(ZeroVectorError, "cannot score zero vector"):
            cosine_score([0.0, 0.0], [1.0, 0.0])


class Top1IdentificationTests(SimpleTestCase):

    def setUp(self):
        self.enrolled = {"b": np.array([1.0, 0.0]), "a": np.array([0.0, 1.0]), "c": np.array([-1.0, -1.0])}

    def brute_force(self, vector):
        best, best_score = None, -math.inf
        for speaker in sorted(self.enrolled):
            enroll = self.enrolled[speaker]
            score = float(vector @ enroll) / (np.linalg.norm(vector) * np.linalg.norm(enroll))
            if score > best_score:
                best, best_score = speaker, score
        return best

    def test_enrollment_vector_identifies_its_speaker(self):
        result = top1_identification(self.enrolled, [(np.array([1.0, 0.0]), "b")], "C(30-20f)")
        self.assertEqual(result.idr_percent, 100.0)

    def test_matches_a_brute_force_oracle(self):
        grid = [np.array(p) for p in itertools.product([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0], repeat=2)]
        for truth in self.enrolled:
            trials = [(v, truth) for v in grid]
            expected = sum(self.brute_force(v) == truth for v in grid)
            result = top1_identification(self.enrolled, trials, "toy")
            self.assertEqual(result.n_correct, expected)
            self.assertEqual(result.n_trials, len(grid))

    def test_scale_invariance(self):
        trials = [(np.array([0.3, 0.9]), "a"), (np.array([0.8, -0.1]), "b"), (np.array([-1.0, -0.2]), "c")]
        scaled = {s: 7.5 * v for s, v in self.enrolled.items()}
        first = top1_identification(self.enrolled, trials, "x")
        second = top1_identification(scaled, [(0.01 * v, s) for v, s in trials], "x")
        self.assertEqual(first, second)

    def test_ties_go_to_the_smallest_id(self):
        enrolled = {"z": np.array([1.0, 0.0]), "m": np.array([0.0, 1.0])}
        result = top1_identification(enrolled, [(np.array([1.0, 1.0]), "m")], "tie")
        self.assertEqual(result.n_correct, 1)

    def test_idr_arithmetic(self):
        self.assertEqual(TrialResult("C(30-100f)", 1000, 550).idr_percent, 55.0)

    def test_protocol_errors(self):
        with self.assertRaisesMessage(ProtocolError, "protocol error"):
            top1_identification(self.enrolled, [(np.ones(2), "q")], "x")
        with self.assertRaises(ProtocolError):
            top1_identification({"a": np.ones(2)}, [(np.ones(2), "a")], "x")


class EmotionMetricsTests(SimpleTestCase):

    def test_hand_computed_confusion(self):
        report = emotion_metrics(one_hot_posteriors([0, 0, 0, 1]), [0, 0, 1, 1])
        np.testing.assert_array_equal(report.confusion, [[2, 0], [1, 1]])
        self.assertAlmostEqual(report.acc_percent, 75.0)
        self.assertAlmostEqual(report.map_percent, 75.0)

    def test_macro_average_differs_from_accuracy(self):
        labels = [0] * 10 + [1, 1]
        report = emotion_metrics(one_hot_posteriors([0] * 10 + [1, 0]), labels)
        self.assertAlmostEqual(report.acc_percent, 100.0 * 11 / 12)
        self.assertAlmostEqual(report.map_percent, 75.0)

    def test_utterance_level_averages_posteriors(self):
        report = emotion_metrics([[0.6, 0.4], [0.2, 0.8]], [1, 1], level="utterance", utterances=["u", "u"])
        np.testing.assert_array_equal(report.confusion, [[0, 0], [0, 1]])
        self.assertEqual(report.total, 1)

    def test_duplicating_a_class_keeps_map(self):
        predicted, labels = [0, 1, 1, 0, 1], [0, 0, 1, 1, 1]
        base = emotion_metrics(one_hot_posteriors(predicted), labels)
        doubled = emotion_metrics(one_hot_posteriors(predicted + [1, 1, 0]), labels + [1, 1, 1])
        self.assertAlmostEqual(base.map_percent, doubled.map_percent)

    def test_one_frame_per_utterance_gives_equal_acc(self):
        posteriors = np.random.default_rng(0).dirichlet(np.ones(3), size=9)
        labels = [0, 1, 2] * 3
        frame = emotion_metrics(posteriors, labels)
        utterance = emotion_metrics(posteriors, labels, level="utterance", utterances=[f"u{i}" for i in range(9)])
        self.assertEqual(frame.acc_percent, utterance.acc_percent)

    def test_empty_class_is_excluded_with_a_warning(self):
        with self.assertLogs("evaluation.metrics", level="WARNING"):
            report = emotion_metrics(one_hot_posteriors([0, 1], n_classes=3), [0, 1])
        self.assertEqual(report.map_percent, 100.0)

    def test_label_errors(self):
        with self.assertRaisesMessage(LabelError, "label error"):
            emotion_metrics(one_hot_posteriors([0, 1]), [0, 2])
        with self.assertRaises(LabelError):
            emotion_metrics(one_hot_posteriors([0, 1]), [0, 1], level="utterance", utterances=["u", "u"])

    def test_report_dict(self):
        report = EmotionReport(np.array([[1, 0], [0, 1]]), "frame")
        self.assertEqual(report.to_dict()["acc_percent"], 100.0)


def eval_record(utt_id, speaker, split="eval", n_frames=60, emotion=0):
    return UtteranceRecord(utt_id, f"wav/{utt_id}.wav", speaker, emotion, split, n_frames,
                           [(0, 0, n_frames)])


class ExperimentTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        rng = np.random.default_rng(3)
        records = [eval_record("tr_u0", "tr", split="train")]
        for speaker in ("a", "b", "c"):
            records += [eval_record(f"{speaker}_u{u}", speaker, emotion=u % 2) for u in range(6)]
        self.manifest = CorpusManifest(records)
        self.archive = FeatureArchive(Path(self.tmp.name), "fbank")
        for record in records:
            self.archive.write(record.utt_id, rng.normal(size=(record.n_frames, FBANK_DIM)))
        self.protocol = make_sre_protocol(self.manifest, enroll_seconds=1.0, test_frames_list=(20, 50),
                                          tests_per_speaker=3)
        self.speaker_net = build_ctdnn(CtdnnConfig(fbank_dim=FBANK_DIM, n_speakers=2, conv1_channels=2,
                                                   conv1_kernel=(5, 3), conv2_channels=2,
                                                   conv2_kernel=(4, 3), td_units=8, feature_dim=4), seed=0)

    def tearDown(self):
        self.tmp.cleanup()

    def test_one_result_per_condition(self):
        results = run_sre_experiment(self.manifest, self.protocol, "idf", self.speaker_net, self.archive)
        self.assertEqual([r.condition for r in results], ["C(1-20f)", "C(1-50f)"])
        self.assertEqual([r.n_trials for r in results], [9, 9])
        again = run_sre_experiment(self.manifest, self.protocol, "idf", self.speaker_net, self.archive)
        self.assertEqual(again, results)

    def test_system_must_match_the_speaker_net(self):
        with self.assertRaisesMessage(CascadeMismatchError, "cascade mismatch"):
            run_sre_experiment(self.manifest, self.protocol, "cdf", self.speaker_net, self.archive)

    def test_aer_reports_both_levels(self):
        aer_net = build_aer_net(AerNetConfig(n_emotions=2, fbank_dim=FBANK_DIM, hidden_layers=1,
                                             hidden_units=8, pnorm_out=4), seed=1)
        cascade = Cascade(aer_net=aer_net)
        reports = run_aer_experiment(cascade, self.manifest.split("eval"), self.archive)
        self.assertEqual(reports["frame"].total, 18 * (60 - 19))
        self.assertEqual(reports["utterance"].total, 18)


class SreSweepTests(SimpleTestCase):
    """Identification over 100, 50 and 20 frame tests on noisy speaker directions."""

    N_SPEAKERS = 10
    NOISE = 2.5

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        rng = np.random.default_rng(11)
        directions = rng.normal(size=(self.N_SPEAKERS, FBANK_DIM))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        records = [eval_record("tr_u0", "tr", split="train")]
        for index in range(self.N_SPEAKERS):
            records += [eval_record(f"spk{index:02d}_u{u}", f"spk{index:02d}", n_frames=400)
                        for u in range(6)]
        self.manifest = CorpusManifest(records)
        self.archive = FeatureArchive(Path(self.tmp.name), "fbank")
        for record in records:
            index = int(record.speaker_id[3:]) if record.speaker_id != "tr" else 0
            noise = rng.normal(0.0, self.NOISE, size=(record.n_frames, FBANK_DIM))
            self.archive.write(record.utt_id, directions[index] + noise)
        self.protocol = make_sre_protocol(self.manifest, enroll_seconds=1.0,
                                          test_frames_list=(100, 50, 20), tests_per_speaker=20)
        self.speaker_net = build_ctdnn(CtdnnConfig(fbank_dim=FBANK_DIM, n_speakers=2, conv1_channels=2,
                                                   conv1_kernel=(5, 3), conv2_channels=2,
                                                   conv2_kernel=(4, 3), td_units=8, feature_dim=4), seed=0)

    def tearDown(self):
        self.tmp.cleanup()

    def test_shorter_tests_do_not_identify_better(self):
        # Frame features are the fbank rows themselves, so d-vectors are noisy speaker directions.
        with mock.patch.object(Cascade, "s", lambda cascade, frames, q=None: frames):
            results = run_sre_experiment(self.manifest, self.protocol, "idf", self.speaker_net, self.archive)
        self.assertEqual([r.condition for r in results], ["C(1-100f)", "C(1-50f)", "C(1-20f)"])
        self.assertEqual({r.n_trials for r in results}, {self.N_SPEAKERS * 20})
        idr = [r.idr_percent for r in results]
        for longer, shorter in zip(idr, idr[1:]):
            self.assertLessEqual(shorter, longer)
        self.assertGreater(idr[0], idr[-1])
        self.assertGreater(idr[-1], 100.0 / self.N_SPEAKERS)
