import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import CascadeMismatchError, CascadeOrderError, LabelError, NoFramesError
from dsp.archives import FeatureArchive
from dsp.containers import FrameConfig, Waveform
from networks.builders import build_aer_net, build_ctdnn
from networks.configs import AerNetConfig, CtdnnConfig, PhoneNetConfig
from nncore.checkpoint import load_checkpoint, save_checkpoint
from synthdata.manifest import CorpusManifest, UtteranceRecord

from cascade.configs import StageConfig, system_name
from cascade.datasets import WindowDataset
from cascade.factors import Cascade, factorize, utterance_dvector
from cascade.serializers import StageConfigSerializer
from cascade.stages import train_stage
from cascade.training import TrainingLog

FBANK_DIM = 8
N_PHONES = 3
N_FRAMES = 40

PHONE_NET = PhoneNetConfig(n_phones=N_PHONES, hidden_layers=1, hidden_units=16)
CTDNN = CtdnnConfig(conv1_channels=2, conv1_kernel=(5, 3), conv2_channels=2, conv2_kernel=(4, 3),
                    td_units=8, feature_dim=4)
AER_NET = AerNetConfig(n_emotions=2, hidden_layers=1, hidden_units=8, pnorm_out=4)


def toy_corpus(root, seed=0):
    """
    Three speakers, two emotions and three phones whose fbank frames are
    Gaussian around a class-dependent mean; writes the archive only.
    """
    rng = np.random.default_rng(seed)
    phone_means = rng.normal(0.0, 2.0, size=(N_PHONES, FBANK_DIM))
    speaker_means = rng.normal(0.0, 1.0, size=(3, FBANK_DIM))
    emotion_means = rng.normal(0.0, 1.0, size=(2, FBANK_DIM))
    archive = FeatureArchive(Path(root) / "features", "fbank")
    records = []
    for speaker in range(3):
        for u in range(5):
            utt_id = f"s{speaker}_u{u}"
            emotion = u % 2
            segments = [((u + k) % N_PHONES, 10 * k, 10 * k + 10) for k in range(4)]
            record = UtteranceRecord(utt_id, f"wav/{utt_id}.wav", f"s{speaker}", emotion,
                                     "dev" if u == 4 else "train", N_FRAMES, segments)
            frames = (phone_means[record.phone_labels()] + speaker_means[speaker]
                      + emotion_means[emotion] + rng.normal(0.0, 0.3, size=(N_FRAMES, FBANK_DIM)))
            archive.write(utt_id, frames)
            records.append(record)
    return CorpusManifest(records, root), archive


def stage(name, conditioning=(), upstream=None, epochs=3):
    return StageConfig(stage=name, conditioning=conditioning, epochs=epochs, batch_frames=32,
                       lr=0.01, seed=5, upstream=upstream or {})


class UtteranceDvectorTests(SimpleTestCase):

    def test_single_frame_is_returned(self):
        np.testing.assert_allclose(utterance_dvector([[0.6, 0.8]]), [0.6, 0.8])

    def test_identical_frames(self):
        np.testing.assert_allclose(utterance_dvector([[0.0, 1.0], [0.0, 1.0]]), [0.0, 1.0])

    def test_mean_then_normalize(self):
        np.testing.assert_allclose(utterance_dvector([[1.0, 0.0], [0.0, 1.0]]),
                                   [math.sqrt(0.5), math.sqrt(0.5)])
        np.testing.assert_allclose(utterance_dvector([[1.0, 0.0], [0.0, 1.0]], renormalize=False),
                                   [0.5, 0.5])

    def test_empty_input(self):
        with self.assertRaisesMessage(NoFramesError, "no frames"):
            utterance_dvector(np.zeros((0, 4)))


class WindowDatasetTests(SimpleTestCase):

    def test_edge_padded_windows_center_on_each_frame(self):
        frames = np.arange(5.0)[:, None]
        ds = WindowDataset([frames], [np.arange(5)], context=3, left=1, right=1)
        self.assertEqual(len(ds), 5)
        inputs, labels = ds.batch(np.array([0, 4]))
        np.testing.assert_array_equal(inputs[:, :, 0], [[0, 0, 1], [3, 4, 4]])
        np.testing.assert_array_equal(labels, [0, 4])

    def test_valid_windows_skip_short_utterances(self):
        ds = WindowDataset([np.ones((6, 2)), np.ones((2, 2)), np.zeros((4, 2))],
                           [np.zeros(6), np.ones(2), np.full(4, 2)], context=4, channel=True)
        self.assertEqual(len(ds), 3 + 1)
        inputs, labels = ds.batch(np.arange(4))
        self.assertEqual(inputs.shape, (4, 1, 4, 2))
        np.testing.assert_array_equal(labels, [0, 0, 0, 2])
        self.assertEqual(float(inputs[3].sum()), 0.0)


class StageConfigSerializerTests(SimpleTestCase):

    def test_phone_stage_takes_no_conditioning(self):
        serializer = StageConfigSerializer(data={"stage": "phone", "conditioning": ["ling"]})
        self.assertFalse(serializer.is_valid())
        self.assertIn("conditioning", serializer.errors)

    def test_speaker_stage_cannot_use_spk(self):
        serializer = StageConfigSerializer(data={"stage": "speaker", "conditioning": ["spk"]})
        self.assertFalse(serializer.is_valid())

    def test_conditioning_is_ordered(self):
        serializer = StageConfigSerializer(data={"stage": "emotion", "conditioning": ["spk", "ling"]})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        cfg = serializer.save()
        self.assertEqual(cfg.conditioning, ("ling", "spk"))
        self.assertEqual(system_name(cfg.stage, cfg.conditioning), "ling+spk")
        self.assertEqual(system_name("speaker", ()), "idf")


class TrainStageTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.manifest, self.archive = toy_corpus(self.root)

    def tearDown(self):
        self.tmp.cleanup()

    def train_phone(self):
        net, log = train_stage(stage("phone"), self.manifest, self.archive, PHONE_NET,
                               log_path=self.root / "logs" / "phone.jsonl",
                               metadata={"config_hash": "abc"})
        path = save_checkpoint(net, self.root / "models" / "phone.cdn")
        return net, log, path

    def test_phone_stage_learns(self):
        net, log, _ = self.train_phone()
        train_losses = log.losses("train")
        self.assertEqual(len(train_losses), 4)
        self.assertLess(train_losses[-1], math.log(N_PHONES))
        self.assertEqual(len(log.losses("dev")), 4)
        records = TrainingLog.read(self.root / "logs" / "phone.jsonl")
        self.assertEqual(records[0]["epoch"], 0)
        self.assertEqual(records[0]["config_hash"], "abc")
        self.assertEqual(net.metadata["system"], "phone")
        self.assertEqual(net.metadata["config_hash"], "abc")

    def test_training_is_deterministic(self):
        first, _, path = self.train_phone()
        second, _, _ = self.train_phone()
        for (_, a), (_, b) in zip(first.named_parameters(), second.named_parameters()):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(load_checkpoint(path).metadata, second.metadata)

    def test_ling_without_phone_checkpoint_is_an_order_violation(self):
        with self.assertRaisesMessage(CascadeOrderError, "cascade order violation"):
            train_stage(stage("emotion", ("ling",)), self.manifest, self.archive, AER_NET)
        missing = {"phone": str(self.root / "missing.cdn")}
        with self.assertRaises(CascadeOrderError):
            train_stage(stage("speaker", ("ling",), missing), self.manifest, self.archive, CTDNN)

    def test_spk_without_speaker_checkpoint_is_an_order_violation(self):
        _, _, phone_path = self.train_phone()
        with self.assertRaises(CascadeOrderError):
            train_stage(stage("emotion", ("ling", "spk"), {"phone": str(phone_path)}),
                        self.manifest, self.archive, AER_NET)

    def test_phone_outside_the_output_is_a_label_error(self):
        with self.assertRaisesMessage(LabelError, "label error"):
            train_stage(stage("phone"), self.manifest, self.archive,
                        PhoneNetConfig(n_phones=2, hidden_layers=1, hidden_units=8))

    def test_full_cascade_factorizes(self):
        phone_net, _, phone_path = self.train_phone()
        speaker_net, _ = train_stage(stage("speaker", ("ling",), {"phone": str(phone_path)}, epochs=1),
                                     self.manifest, self.archive, CTDNN)
        self.assertEqual(speaker_net.metadata["system"], "cdf")
        speaker_path = save_checkpoint(speaker_net, self.root / "models" / "speaker.cdn")
        upstream = {"phone": str(phone_path), "speaker": str(speaker_path)}
        aer_net, log = train_stage(stage("emotion", ("ling", "spk"), upstream, epochs=1),
                                   self.manifest, self.archive, AER_NET)
        self.assertEqual(aer_net.metadata["input_dim"], str(FBANK_DIM + N_PHONES + 4))

        cascade = Cascade(phone_net, speaker_net, aer_net)
        frames = self.archive.read("s0_u0")
        factors = cascade.factorize_frames(frames)
        self.assertEqual(len(factors), N_FRAMES - 19)
        self.assertEqual(factors.start_frame, 9)
        np.testing.assert_allclose(factors.q.sum(axis=1), 1.0, atol=1e-9)
        self.assertTrue(np.all(factors.q >= 0.0))
        np.testing.assert_allclose(np.linalg.norm(factors.s, axis=1), 1.0, atol=1e-9)
        self.assertEqual(factors[0].e.shape, (4,))
        again = cascade.factorize_frames(frames)
        np.testing.assert_array_equal(again.stacked(), factors.stacked())

        silence = factorize(Waveform(np.zeros(FrameConfig().n_samples(30)), 8000),
                            phone_net, speaker_net, aer_net, FrameConfig(n_mels=FBANK_DIM))
        self.assertEqual(len(silence), 30 - 19)
        np.testing.assert_allclose(silence.q, np.broadcast_to(silence.q[0], silence.q.shape))
        np.testing.assert_allclose(silence.s, np.broadcast_to(silence.s[0], silence.s.shape))


class CascadeConsistencyTests(SimpleTestCase):

    def test_aer_width_must_match_the_phone_net(self):
        from networks.builders import build_phone_net

        phone_net = build_phone_net(PhoneNetConfig(n_phones=3, fbank_dim=FBANK_DIM, hidden_layers=1,
                                                   hidden_units=8), seed=0)
        aer_net = build_aer_net(AerNetConfig(n_emotions=2, fbank_dim=FBANK_DIM, ling_dim=5,
                                             hidden_layers=1, hidden_units=8, pnorm_out=4), seed=0)
        with self.assertRaisesMessage(CascadeMismatchError, "cascade mismatch"):
            Cascade(phone_net, None, aer_net)

    def test_factorize_needs_every_network(self):
        with self.assertRaises(CascadeOrderError):
            Cascade().factorize_frames(np.zeros((30, FBANK_DIM)))

    def test_emotion_stage_aligns_to_the_configured_context(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest, archive = toy_corpus(tmp)
            aer_net, _ = train_stage(stage("emotion", epochs=1), manifest, archive, AER_NET,
                                     align_context=8)
            frames = archive.read("s0_u0")
        self.assertEqual(aer_net.metadata["align_context"], "8")
        cascade = Cascade(None, None, aer_net)
        self.assertEqual((cascade.context, cascade.offset), (8, 3))
        np.testing.assert_array_equal(cascade.emotion_inputs(frames), frames[3:3 + N_FRAMES - 7])

    def test_recorded_alignment_must_match_the_speaker_net(self):
        aer_config = replace(AER_NET, fbank_dim=FBANK_DIM)
        aer_net = build_aer_net(aer_config, seed=0)
        aer_net.metadata["align_context"] = "8"
        speaker_net = build_ctdnn(replace(CTDNN, fbank_dim=FBANK_DIM, n_speakers=3), seed=0)
        with self.assertRaisesMessage(CascadeMismatchError, "AER alignment context is 8, expected 20"):
            Cascade(None, speaker_net, aer_net)
        self.assertEqual(Cascade(None, speaker_net, build_aer_net(aer_config, seed=0)).context, 20)
