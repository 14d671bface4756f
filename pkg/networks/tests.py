from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import (
    ConfigError,
    GeometryError,
    ModelKindError,
    UtteranceTooShortError,
)
from networks.builders import build_aer_net, build_ctdnn, build_phone_net, ctdnn_geometry
from networks.configs import AerNetConfig, CtdnnConfig, PhoneNetConfig, conditioning_label
from networks.inference import emotion_outputs, phone_posteriors, speaker_features
from networks.serializers import (
    AerNetConfigSerializer,
    CtdnnConfigSerializer,
    PhoneNetConfigSerializer,
)
from nncore.checkpoint import dumps
from nncore.gradcheck import grad_check


def random_frames(n_frames, dim, seed=0):
    return np.random.default_rng(seed).normal(size=(n_frames, dim))


class PhoneNetTests(SimpleTestCase):

    def test_parameter_count_matches_layer_dimensions(self):
        cfg = PhoneNetConfig()
        net = build_phone_net(cfg, seed=0)
        spliced = len(cfg.context_offsets) * cfg.fbank_dim
        units = cfg.hidden_units
        expected = (spliced * units + units) \
            + (cfg.hidden_layers - 1) * (units * units + units) \
            + (units * cfg.n_phones + cfg.n_phones)
        self.assertEqual(net.n_parameters(), expected)

    def test_same_seed_gives_identical_checkpoint(self):
        self.assertEqual(dumps(build_phone_net(PhoneNetConfig(), 5)),
                         dumps(build_phone_net(PhoneNetConfig(), 5)))
        self.assertNotEqual(dumps(build_phone_net(PhoneNetConfig(), 5)),
                            dumps(build_phone_net(PhoneNetConfig(), 6)))

    def test_single_phone_is_rejected(self):
        with self.assertRaises(ConfigError):
            build_phone_net(PhoneNetConfig(n_phones=1), seed=0)

    def test_posteriors_are_distributions_for_every_frame(self):
        net = build_phone_net(PhoneNetConfig(), seed=1)
        posteriors = phone_posteriors(net, random_frames(37, 40))
        self.assertEqual(posteriors.shape, (37, 20))
        np.testing.assert_allclose(posteriors.sum(axis=1), 1.0, atol=1e-9)
        self.assertTrue(np.all(np.isfinite(posteriors)))

    def test_single_frame_utterance_is_padded(self):
        net = build_phone_net(PhoneNetConfig(), seed=1)
        self.assertEqual(phone_posteriors(net, random_frames(1, 40)).shape, (1, 20))

    def test_wrong_checkpoint_kind_is_rejected(self):
        net = build_aer_net(AerNetConfig(), seed=0)
        with self.assertRaisesMessage(ModelKindError, "model kind error"):
            phone_posteriors(net, random_frames(10, 40))


class CtdnnTests(SimpleTestCase):

    def test_default_geometry_consumes_twenty_frames(self):
        net = build_ctdnn(CtdnnConfig(), seed=0)
        self.assertEqual(net.metadata["context"], "20")
        self.assertEqual(speaker_features(net, random_frames(20, 40)).shape, (1, 40))
        self.assertEqual(speaker_features(net, random_frames(45, 40)).shape, (26, 40))

    def test_shorter_than_context_is_rejected(self):
        net = build_ctdnn(CtdnnConfig(), seed=0)
        with self.assertRaisesMessage(UtteranceTooShortError, "utterance too short"):
            speaker_features(net, random_frames(19, 40))

    def test_features_are_unit_norm(self):
        net = build_ctdnn(CtdnnConfig(), seed=2)
        features = speaker_features(net, random_frames(30, 40, seed=3))
        np.testing.assert_allclose(np.linalg.norm(features, axis=1), 1.0, atol=1e-9)

    def test_constant_input_gives_identical_rows(self):
        net = build_ctdnn(CtdnnConfig(), seed=2)
        frames = np.tile(random_frames(1, 40, seed=4), (32, 1))
        features = speaker_features(net, frames)
        np.testing.assert_allclose(features, np.broadcast_to(features[0], features.shape),
                                   atol=1e-12)

    def test_phone_posteriors_condition_the_speaker_features(self):
        net = build_ctdnn(CtdnnConfig(ling_dim=20), seed=3)
        self.assertEqual(net.metadata["conditioning"], "ling")
        fbank = random_frames(25, 40, seed=5)
        rng = np.random.default_rng(6)
        q1 = rng.dirichlet(np.ones(20), size=25)
        q2 = rng.dirichlet(np.ones(20), size=25)
        s1 = speaker_features(net, np.hstack([fbank, q1]))
        s2 = speaker_features(net, np.hstack([fbank, q2]))
        self.assertGreater(np.abs(s1 - s2).max(), 1e-6)

    def test_same_seed_gives_identical_checkpoint(self):
        self.assertEqual(dumps(build_ctdnn(CtdnnConfig(), 9)), dumps(build_ctdnn(CtdnnConfig(), 9)))

    def test_context_mismatch_is_geometry_error(self):
        with self.assertRaisesMessage(GeometryError, "geometry error"):
            build_ctdnn(CtdnnConfig(effective_context_frames=21), seed=0)

    def test_narrow_input_is_geometry_error(self):
        with self.assertRaises(GeometryError):
            build_ctdnn(CtdnnConfig(fbank_dim=4), seed=0)

    def test_odd_width_disables_frequency_pooling(self):
        cfg = CtdnnConfig(ling_dim=21)
        with self.assertLogs("networks.builders", level="INFO"):
            geometry = ctdnn_geometry(cfg)
        self.assertEqual((geometry["pool1"], geometry["pool2"]), (1, 1))
        self.assertEqual(geometry["td_in_dim"], cfg.conv2_channels * 55)

    def test_paper_scale_channels_keep_geometry(self):
        cfg = replace(CtdnnConfig(), conv1_channels=32, conv2_channels=64)
        self.assertEqual(ctdnn_geometry(cfg)["context"], 20)


class AerNetTests(SimpleTestCase):

    def test_emotion_factor_is_forty_dimensional(self):
        net = build_aer_net(AerNetConfig(), seed=0)
        posteriors, factor = emotion_outputs(net, random_frames(15, 40))
        self.assertEqual(posteriors.shape, (15, 4))
        self.assertEqual(factor.shape, (15, 40))
        np.testing.assert_allclose(posteriors.sum(axis=1), 1.0, atol=1e-9)

    def test_full_conditioning_input_width(self):
        cfg = AerNetConfig(ling_dim=20, spk_dim=40)
        self.assertEqual(cfg.input_dim, 40 + 20 + 40)
        net = build_aer_net(cfg, seed=0)
        self.assertEqual(net.metadata["conditioning"], "ling+spk")
        _, factor = emotion_outputs(net, random_frames(12, 100))
        self.assertTrue(np.all(factor >= 0.0))

    def test_input_width_mismatch_is_config_error(self):
        net = build_aer_net(AerNetConfig(ling_dim=20), seed=0)
        with self.assertRaisesMessage(ConfigError, "config error"):
            emotion_outputs(net, random_frames(12, 40))

    def test_indivisible_pnorm_is_config_error(self):
        with self.assertRaises(ConfigError):
            build_aer_net(AerNetConfig(hidden_units=210), seed=0)

    def test_conditioning_labels(self):
        self.assertEqual(conditioning_label(()), "none")
        self.assertEqual(conditioning_label(("spk", "ling")), "ling+spk")


class NetworkConfigSerializerTests(SimpleTestCase):

    def test_empty_sections_give_defaults(self):
        for serializer_class, expected in (
            (PhoneNetConfigSerializer, PhoneNetConfig()),
            (CtdnnConfigSerializer, CtdnnConfig()),
            (AerNetConfigSerializer, AerNetConfig()),
        ):
            serializer = serializer_class(data={})
            self.assertTrue(serializer.is_valid(), serializer.errors)
            self.assertEqual(serializer.save(), expected)

    def test_single_phone_is_invalid(self):
        serializer = PhoneNetConfigSerializer(data={"n_phones": 1})
        self.assertFalse(serializer.is_valid())
        self.assertIn("n_phones", serializer.errors)

    def test_unordered_offsets_are_invalid(self):
        serializer = CtdnnConfigSerializer(data={"td1_offsets": [0, -2, 2]})
        self.assertFalse(serializer.is_valid())
        self.assertIn("td1_offsets", serializer.errors)

    def test_pnorm_divisibility_is_checked(self):
        serializer = AerNetConfigSerializer(data={"hidden_units": 210})
        self.assertFalse(serializer.is_valid())
        self.assertIn("pnorm_out", serializer.errors)


class BuiltNetworkGradientTests(SimpleTestCase):
    """Central-difference checks of the stacks the pipeline trains."""

    def assert_all_parameters_pass(self, net, x, label):
        report = grad_check(net, x, label)
        self.assertTrue(report.passed, report.offending_parameter)
        self.assertEqual(set(report.per_tensor), {name for name, _ in net.named_parameters()})
        self.assertGreater(report.n_checked, 0)

    def test_phone_net(self):
        cfg = PhoneNetConfig(n_phones=3, fbank_dim=4, hidden_layers=2, hidden_units=6,
                             context_offsets=(-1, 0, 1))
        net = build_phone_net(cfg, seed=3)
        self.assert_all_parameters_pass(net, random_frames(8, 4, seed=3)[None], 2)

    def test_ctdnn(self):
        cfg = CtdnnConfig(fbank_dim=8, n_speakers=3, feature_dim=4,
                          conv1_channels=2, conv1_kernel=(3, 3),
                          conv2_channels=2, conv2_kernel=(2, 2),
                          td1_offsets=(-1, 0, 1), td2_offsets=(-1, 0, 1),
                          td_units=4, pnorm_group=2, effective_context_frames=8)
        net = build_ctdnn(cfg, seed=4)
        x = random_frames(10, 8, seed=4)[None, None]
        self.assert_all_parameters_pass(net, x, 1)

    def test_aer_net_with_full_conditioning(self):
        cfg = AerNetConfig(n_emotions=3, fbank_dim=4, ling_dim=2, spk_dim=3, hidden_layers=2,
                           hidden_units=8, pnorm_out=4, context_offsets=(-1, 0, 1))
        net = build_aer_net(cfg, seed=5)
        self.assert_all_parameters_pass(net, random_frames(8, cfg.input_dim, seed=5)[None], 0)
