import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from cascade.factors import Cascade
from core.exceptions import AlignmentError, DimensionError, NoDataError
from dsp.archives import FeatureArchive
from dsp.containers import FrameConfig, Waveform
from networks.builders import build_aer_net, build_ctdnn, build_phone_net
from networks.configs import AerNetConfig, CtdnnConfig, PhoneNetConfig
from nncore.gradcheck import grad_check
from reconstruct.configs import ReconConfig
from reconstruct.model import Reconstructor, reconstruct_frame, square_error
from reconstruct.resynthesis import resynthesize, write_resynthesis
from reconstruct.scoring import evaluate_reconstruction, mean_spectrum
from reconstruct.serializers import ReconConfigSerializer
from reconstruct.training import train_reconstructor

DIMS = (3, 4, 2)
SMALL = ReconConfig(spec_dim=5, hidden_layers=1, hidden_units=6)


def zero_parameters(network):
    network.assign_parameters([np.zeros_like(p) for p in network.parameter_arrays()])


def write_pair(root, utt_id, factors, spectrum):
    FeatureArchive(root, "factors").write(utt_id, factors)
    FeatureArchive(root, "spec").write(utt_id, spectrum)


def archives(root):
    return FeatureArchive(root, "factors"), FeatureArchive(root, "spec")


class ReconstructorTests(SimpleTestCase):

    def setUp(self):
        self.model = Reconstructor.build(*DIMS, cfg=SMALL, seed=4)
        self.rng = np.random.default_rng(0)

    def test_emotion_branch_ignores_q_and_s(self):
        for _ in range(1000):
            q1, q2 = self.rng.normal(size=(2, 3))
            s1, s2 = self.rng.normal(size=(2, 4))
            e1, e2 = self.rng.normal(size=(2, 2))
            f1, g1, h1 = self.model.branch_outputs(q1, s1, e1)
            f2, g2, h2 = self.model.branch_outputs(q2, s2, e1)
            self.assertTrue(np.array_equal(h1, h2))
            _, _, h3 = self.model.branch_outputs(q2, s1, e2)
            f4, g4, _ = self.model.branch_outputs(q1, s1, e2)
            self.assertTrue(np.array_equal(f1, f4))
            self.assertTrue(np.array_equal(g1, g4))
            self.assertTrue(np.array_equal(h3, self.model.branch_outputs(q1, s2, e2)[2]))
            swap = self.model.predict(q1, s1, e1) - self.model.predict(q2, s2, e2)
            np.testing.assert_array_equal(swap, (f1 + g1 + h1) - (f2 + g2 + h3))

    def test_zeroed_branches_leave_the_linguistic_output(self):
        zero_parameters(self.model.branches[1])
        zero_parameters(self.model.branches[2])
        q, s, e = self.rng.normal(size=3), self.rng.normal(size=4), self.rng.normal(size=2)
        np.testing.assert_array_equal(reconstruct_frame(q, s, e, self.model),
                                      self.model.branches[0].forward(q))

    def test_wrong_width_is_a_dimension_error(self):
        with self.assertRaisesMessage(DimensionError, "dimension error"):
            reconstruct_frame(np.ones(3), np.ones(5), np.ones(2), self.model)

    def test_checkpoint_round_trip(self):
        q, s, e = self.rng.normal(size=(6, 3)), self.rng.normal(size=(6, 4)), self.rng.normal(size=(6, 2))
        with tempfile.TemporaryDirectory() as tmp:
            path = self.model.save(Path(tmp) / "recon.cdn")
            again = Reconstructor.load(path)
        self.assertEqual(again.input_dims, DIMS)
        np.testing.assert_array_equal(again.predict(q, s, e), self.model.predict(q, s, e))
        np.testing.assert_array_equal(
            reconstruct_frame(q[0], s[0], e[0], self.model.to_network()), self.model.predict(q[0], s[0], e[0])
        )

    def test_branch_gradients_match_finite_differences(self):
        q, s, e = self.rng.normal(size=(7, 3)), self.rng.normal(size=(7, 4)), self.rng.normal(size=(7, 2))
        target = self.rng.normal(size=(7, 5))

        def loss():
            return square_error(self.model.predict(q, s, e), target)[0]

        _, grad = square_error(self.model.predict(q, s, e, keep_cache=True), target)
        self.model.backward(grad)
        h = 1e-5
        for branch in self.model.branches:
            for (name, param), (_, analytic) in zip(branch.named_parameters(), branch.named_gradients()):
                numeric = np.zeros_like(param)
                for index in np.ndindex(param.shape):
                    original = param[index]
                    param[index] = original + h
                    plus = loss()
                    param[index] = original - h
                    minus = loss()
                    param[index] = original
                    numeric[index] = (plus - minus) / (2 * h)
                scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
                self.assertLess(np.linalg.norm(analytic - numeric) / scale, 1e-4, name)

    def test_every_branch_passes_the_gradient_check(self):
        inputs = self.rng.normal(size=(6, 3)), self.rng.normal(size=(6, 4)), self.rng.normal(size=(6, 2))
        for branch, x in zip(self.model.branches, inputs):
            report = grad_check(branch, x, np.arange(6) % SMALL.spec_dim)
            self.assertTrue(report.passed, report.offending_parameter)
            self.assertEqual(set(report.per_tensor), {name for name, _ in branch.named_parameters()})


class TrainReconstructorTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_bias_only_fit_of_a_constant_spectrum(self):
        for utt_id in ("a", "b"):
            write_pair(self.root, utt_id, np.zeros((11, sum(DIMS))), np.full((30, 5), 2.0))
        cfg = ReconConfig(spec_dim=5, hidden_layers=0, epochs=20, batch_frames=64, lr=0.4,
                          lr_decay=1.0, optimizer="sgd", momentum=0.0)
        model, log = train_reconstructor(*archives(self.root), ["a"], ["b"], cfg, DIMS,
                                         log_path=self.root / "recon.jsonl")
        self.assertEqual(log.records[0]["epoch"], 0)
        self.assertAlmostEqual(log.losses("train")[0], 20.0, places=5)
        self.assertLess(log.losses("train")[-1], 1e-6)
        self.assertLess(log.losses("dev")[-1], 1e-6)
        self.assertEqual(model.metadata["model_kind"], "recon")

    def test_overshooting_epochs_are_undone(self):
        rng = np.random.default_rng(7)
        for utt_id in ("a", "b"):
            write_pair(self.root, utt_id, rng.normal(size=(11, sum(DIMS))), rng.normal(size=(30, 5)))
        cfg = ReconConfig(spec_dim=5, hidden_layers=0, epochs=6, batch_frames=4, lr=1.5,
                          lr_decay=1.0, optimizer="sgd", momentum=0.0)
        with self.assertLogs("reconstruct.training", "WARNING") as logs:
            _, log = train_reconstructor(*archives(self.root), ["a", "b"], [], cfg, DIMS)
        self.assertIn("retrying with lr 0.75", logs.output[0])
        losses = log.losses("train")
        self.assertEqual(len(losses), 7)
        for before, after in zip(losses, losses[1:]):
            self.assertLessEqual(after, 1.05 * before)
        self.assertLess(losses[-1], losses[0])

    def test_misaligned_archives(self):
        write_pair(self.root, "a", np.zeros((11, sum(DIMS))), np.zeros((29, 5)))
        with self.assertRaisesMessage(AlignmentError, "alignment error"):
            train_reconstructor(*archives(self.root), ["a"], [], SMALL, DIMS)
        FeatureArchive(self.root, "factors").write("b", np.zeros((11, sum(DIMS))))
        with self.assertRaises(AlignmentError):
            train_reconstructor(*archives(self.root), ["b"], [], SMALL, DIMS)


class EvaluateReconstructionTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.model = Reconstructor.build(*DIMS, cfg=SMALL, seed=1)
        for branch in self.model.branches:
            zero_parameters(branch)

    def tearDown(self):
        self.tmp.cleanup()

    def test_perfect_prediction_scores_zero(self):
        write_pair(self.root, "a", np.ones((4, sum(DIMS))), np.zeros((23, 5)))
        report = evaluate_reconstruction(self.model, *archives(self.root), ["a"])
        self.assertEqual(report.mean_frame_square_error, 0.0)
        self.assertEqual(report.n_frames, 4)

    def test_single_unit_error(self):
        spectrum = np.zeros((20, 5))
        spectrum[9, 0] = 1.0
        write_pair(self.root, "a", np.zeros((1, sum(DIMS))), spectrum)
        report = evaluate_reconstruction(self.model, *archives(self.root), ["a"], baseline=np.zeros(5))
        self.assertEqual(report.mean_frame_square_error, 1.0)
        self.assertEqual(report.baseline_square_error, 1.0)
        self.assertEqual(report.per_utterance["a"]["frames"], 1)

    def test_order_invariance_and_baseline(self):
        rng = np.random.default_rng(2)
        for utt_id in ("a", "b", "c"):
            write_pair(self.root, utt_id, rng.normal(size=(6, sum(DIMS))), rng.normal(size=(25, 5)))
        baseline = mean_spectrum(*archives(self.root), ["a", "b"])
        first = evaluate_reconstruction(self.model, *archives(self.root), ["a", "b", "c"], baseline=baseline)
        second = evaluate_reconstruction(self.model, *archives(self.root), ["c", "a", "b"], baseline=baseline)
        self.assertEqual(first.to_dict(), second.to_dict())
        self.assertEqual(set(first.per_utterance), {"a", "b", "c"})

    def test_no_utterances(self):
        with self.assertRaisesMessage(NoDataError, "no data"):
            evaluate_reconstruction(self.model, *archives(self.root), [])


class ResynthesisTests(SimpleTestCase):

    def setUp(self):
        fbank_dim = 8
        self.frame_config = FrameConfig(n_mels=fbank_dim)
        phone_net = build_phone_net(PhoneNetConfig(n_phones=3, fbank_dim=fbank_dim, hidden_layers=1,
                                                   hidden_units=8), seed=0)
        speaker_net = build_ctdnn(CtdnnConfig(fbank_dim=fbank_dim, ling_dim=3, n_speakers=2,
                                              conv1_channels=2, conv1_kernel=(5, 3), conv2_channels=2,
                                              conv2_kernel=(4, 3), td_units=8, feature_dim=4), seed=1)
        aer_net = build_aer_net(AerNetConfig(n_emotions=2, fbank_dim=fbank_dim, ling_dim=3, spk_dim=4,
                                             hidden_layers=1, hidden_units=8, pnorm_out=2), seed=2)
        self.cascade = Cascade(phone_net, speaker_net, aer_net)
        self.model = Reconstructor.build(3, 4, 2, ReconConfig(spec_dim=129, hidden_layers=1,
                                                              hidden_units=8), seed=3)
        samples = np.random.default_rng(5).normal(0.0, 0.1, size=self.frame_config.n_samples(50))
        self.waveform = Waveform(samples, 8000)

    def test_output_covers_the_aligned_frames(self):
        result = resynthesize(self.waveform, self.cascade, self.model, iterations=2, seed=0,
                              frame_config=self.frame_config)
        self.assertEqual(result.original.shape, (31, 129))
        self.assertEqual(result.reconstructed.shape, (31, 129))
        self.assertEqual(len(result.waveform), self.frame_config.n_samples(31))
        again = resynthesize(self.waveform, self.cascade, self.model, iterations=2, seed=0,
                             frame_config=self.frame_config)
        np.testing.assert_array_equal(again.waveform.samples, result.waveform.samples)

    def test_files_for_plotting(self):
        result = resynthesize(self.waveform, self.cascade, self.model, iterations=1,
                              frame_config=self.frame_config)
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_resynthesis(result, tmp, "u1")
            self.assertEqual([p.name for p in paths], ["u1.wav", "u1.original.txt", "u1.reconstructed.txt"])
            self.assertEqual(np.loadtxt(paths[2]).shape, (31, 129))


class ReconConfigSerializerTests(SimpleTestCase):

    def test_defaults(self):
        serializer = ReconConfigSerializer(data={})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save(), ReconConfig())

    def test_zero_iterations_rejected(self):
        serializer = ReconConfigSerializer(data={"griffin_lim_iterations": 0})
        self.assertFalse(serializer.is_valid())
