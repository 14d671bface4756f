import hashlib
import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock, skipUnless

import numpy as np
import yaml
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings, tag

from core.exceptions import CascadeOrderError, ConfigError, ConfigMismatchError
from core.seeds import derive_seed
from networks.inference import phone_posteriors
from nncore.checkpoint import load_checkpoint
from synthdata.manifest import CorpusManifest

from experiments.configs import load_config, parse_config
from experiments.management.commands.cdf import Command
from experiments.pipeline import Pipeline, model_name
from experiments.reporting import aer_tables, recon_table, render_report, sre_table
from experiments.workspace import Workspace, read_jsonl, sha256_file, toolkit_version

QUIET = {**settings.CDF, "SHOW_PROGRESS": False}

TINY = {
    "seed": 5,
    "frames": {"n_mels": 8},
    "synth": {
        "n_phones": 3,
        "n_speakers": 2,
        "n_emotions": 2,
        "utterances_per_speaker": 6,
        "phones_per_utterance": [4, 5],
        "phone_duration_frames": [6, 8],
        "n_eval_speakers": 2,
        "eval_utterances_per_speaker": 4,
    },
    "phone_net": {"hidden_layers": 1, "hidden_units": 8},
    "ctdnn": {
        "conv1_channels": 2,
        "conv1_kernel": [5, 3],
        "conv2_channels": 2,
        "conv2_kernel": [4, 3],
        "td_units": 8,
        "feature_dim": 4,
    },
    "aer_net": {"hidden_layers": 1, "hidden_units": 8, "pnorm_out": 4},
    "stages": {
        "phone": {"epochs": 1, "batch_frames": 64},
        "speaker": {"epochs": 1, "batch_frames": 64},
        "emotion": {"epochs": 1, "batch_frames": 64},
    },
    "recon": {
        "hidden_layers": 1,
        "hidden_units": 8,
        "epochs": 1,
        "griffin_lim_iterations": 2,
        "resynthesis_utterances": 1,
    },
    "protocol": {"enroll_seconds": 0.3, "test_frames": [20], "tests_per_speaker": 2},
}

RUN_ORDER = (
    "synth-data",
    "extract-features",
    "train-phone",
    "train-speaker",
    "train-emotion",
    "factorize",
    "train-recon",
    "eval-sre",
    "eval-aer",
    "reconstruct",
    "report",
)


def write_config(directory, data, name="experiment.yaml"):
    path = Path(directory) / name
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


class ConfigTests(SimpleTestCase):

    def test_defaults(self):
        config = parse_config({}, workspace="ws")
        self.assertEqual(config.systems("speaker"), ("idf", "cdf"))
        self.assertEqual(config.systems("emotion"), ("baseline", "ling", "spk", "ling+spk"))
        self.assertEqual(config.systems("phone"), ("phone",))
        self.assertEqual(config.recon.spec_dim, 129)
        self.assertEqual(config.workspace, Path("ws"))

    def test_sub_seeds_derive_from_the_global_seed(self):
        config = parse_config({"seed": 7})
        self.assertEqual(config.synth.seed, derive_seed(7, "synth"))
        self.assertEqual(config.protocol.seed, derive_seed(7, "protocol"))
        self.assertEqual(config.recon.seed, derive_seed(7, "recon"))
        self.assertEqual(config.stages["speaker"]["cdf"].seed, derive_seed(7, "speaker:cdf"))
        self.assertNotEqual(config.stages["speaker"]["idf"].seed, config.stages["speaker"]["cdf"].seed)

    def test_seed_override_changes_every_sub_seed_and_the_hash(self):
        base = parse_config({"seed": 7})
        overridden = parse_config({"seed": 7}, seed=8)
        self.assertEqual(overridden.seed, 8)
        self.assertNotEqual(base.synth.seed, overridden.synth.seed)
        self.assertNotEqual(base.config_hash, overridden.config_hash)

    def test_hash_ignores_the_workspace(self):
        first = parse_config({"seed": 1}, workspace="a")
        second = parse_config({"seed": 1}, workspace="b")
        self.assertEqual(first.config_hash, second.config_hash)
        self.assertRegex(first.config_hash, r"^[0-9a-f]{64}$")

    def test_paper_scale(self):
        config = parse_config({}, paper_scale=True)
        self.assertEqual(config.phone_net.hidden_units, 1024)
        self.assertEqual((config.ctdnn.conv1_channels, config.ctdnn.conv2_channels), (32, 64))
        self.assertNotEqual(config.config_hash, parse_config({}).config_hash)

    def test_stage_systems_and_conditioning(self):
        config = parse_config({"stages": {"emotion": {"systems": ["ling+spk", "baseline"], "epochs": 3}}})
        self.assertEqual(config.systems("emotion"), ("baseline", "ling+spk"))
        full = config.stage_config("emotion", "ling+spk", {"phone": "p.cdn"})
        self.assertEqual(full.conditioning, ("ling", "spk"))
        self.assertEqual(full.epochs, 3)
        self.assertEqual(full.upstream, {"phone": "p.cdn"})

    def test_invalid_configs(self):
        invalid = [
            {"frame": {}},
            {"frames": {"n_mels": 0}},
            {"frames": {"nmels": 40}},
            {"synth": {"seed": 3}},
            {"recon": {"spec_dim": 100}},
            {"synth": {"sample_rate": 16000}},
            {"stages": {"speaker": {"systems": ["spk"]}}},
            {"stages": {"emotion": {"conditioning": ["ling"]}}},
            {"stages": {"decoder": {}}},
            {"aer_net": {"hidden_units": 10, "pnorm_out": 4}},
            {"seed": -1},
            ["not", "a", "mapping"],
        ]
        for raw in invalid:
            with self.subTest(raw=raw), self.assertRaisesMessage(ConfigError, "config error"):
                parse_config(raw)

    def test_errors_name_the_section(self):
        with self.assertRaisesMessage(ConfigError, "[frames]"):
            parse_config({"frames": {"n_mels": 0}})

    def test_load_config_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                load_config(Path(tmp) / "missing.yaml")
            broken = Path(tmp) / "broken.yaml"
            broken.write_text("frames: [1, 2\n", encoding="utf-8")
            with self.assertRaisesMessage(ConfigError, "not valid YAML"):
                load_config(broken)

    def test_default_config_file(self):
        config = load_config(settings.BASE_DIR / "configs" / "default.yaml", workspace="ws")
        self.assertEqual(config.synth.n_eval_speakers, 16)
        self.assertEqual(config.protocol.test_frames, (20, 50, 100))
        self.assertEqual(config.to_dict()["stages"]["emotion"]["ling+spk"]["conditioning"], ("ling", "spk"))


class WorkspaceTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.workspace = Workspace(self.tmp.name, "abc", version="v1")

    def tearDown(self):
        self.tmp.cleanup()

    def test_register_records_hashes_and_stamp(self):
        path = self.workspace.root / "results" / "x.jsonl"
        path.parent.mkdir()
        path.write_bytes(b"payload")
        registry = self.workspace.register([path])
        self.assertEqual(registry["results/x.jsonl"], {
            "sha256": hashlib.sha256(b"payload").hexdigest(),
            "config_hash": "abc",
            "version": "v1",
        })
        self.assertEqual(self.workspace.config_hashes(), ["abc"])
        self.assertEqual(sha256_file(path), hashlib.sha256(b"payload").hexdigest())

    def test_require_names_the_missing_step(self):
        with self.assertRaisesMessage(CascadeOrderError, "run `train-phone` first"):
            self.workspace.require(self.workspace.model_path("phone"), "the phone checkpoint", "train-phone")

    def test_version_falls_back_outside_git(self):
        toolkit_version.cache_clear()
        try:
            with mock.patch("experiments.workspace.subprocess.run", side_effect=OSError):
                self.assertEqual(toolkit_version(), settings.CDF["VERSION_FALLBACK"])
        finally:
            toolkit_version.cache_clear()


class ReportingTests(SimpleTestCase):

    def test_sre_table_gap_and_chance(self):
        records = [
            {"system": "idf", "condition": "C(30-20f)", "n_trials": 100, "idr_percent": 37.0, "n_speakers": 16},
            {"system": "cdf", "condition": "C(30-20f)", "n_trials": 100, "idr_percent": 47.5, "n_speakers": 16},
        ]
        table = sre_table(records)
        self.assertEqual(table.rows[-1], ("cdf - idf", [10.5]))
        self.assertIn("chance rate 6.25%", table.notes[0])
        self.assertIn("10.50", table.lines[-1])

    def test_aer_tables_compare_against_the_baseline(self):
        records = [
            {"system": system, "split": "eval", "level": "frame", "acc_percent": acc, "map_percent": acc - 1}
            for system, acc in (("baseline", 50.0), ("ling", 55.0))
        ]
        [table] = aer_tables(records)
        self.assertEqual(table.columns, ["eval ACC", "eval MAP"])
        self.assertEqual(table.notes, ["ling vs baseline on eval: ACC +5.00, MAP +5.00"])

    def test_recon_table_ratios(self):
        log = [{"epoch": 0, "split": "dev", "loss": 100.0}, {"epoch": 2, "split": "dev", "loss": 4.0}]
        records = [
            {"split": "dev", "mean_frame_square_error": 4.0},
            {"split": "eval", "mean_frame_square_error": 5.0, "baseline_square_error": 9.0,
             "beats_baseline_everywhere": True},
        ]
        rows = dict(recon_table(records, log).rows)
        self.assertEqual(rows["dev drop ratio"], [25.0])
        self.assertEqual(rows["eval / dev ratio"], [1.25])
        self.assertEqual(rows["beats baseline on all"], [True])

    def test_render_report(self):
        table = sre_table([{"system": "idf", "condition": "C(1-20f)", "n_trials": 4, "idr_percent": 50.0}])
        text = render_report([table], "f" * 64, "v1", ["a" * 64, "f" * 64])
        self.assertIn("Speaker identification, Top-1 IDR (%)", text)
        self.assertIn("d-vector (idf)", text)
        self.assertIn("WARNING", text)


@override_settings(CDF=QUIET)
class CommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.config = write_config(self.root, {**TINY, "workspace": str(self.root / "ws")})

    def tearDown(self):
        self.tmp.cleanup()

    def call(self, *args, **options):
        return call_command("cdf", *args, stdout=StringIO(), stderr=StringIO(), **options)

    def test_config_error_exits_1(self):
        broken = write_config(self.root, {"frames": {"n_mels": 0}}, name="broken.yaml")
        with self.assertRaises(CommandError) as ctx:
            self.call("synth-data", config=str(broken))
        self.assertEqual(ctx.exception.returncode, 1)

    def test_unknown_step_exits_1(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("decode", config=str(self.config))
        self.assertEqual(ctx.exception.returncode, 1)

    def test_run_from_argv_exit_codes(self):
        command = Command(stdout=StringIO(), stderr=StringIO())
        with self.assertRaises(SystemExit) as ctx:
            command.run_from_argv(["manage.py", "cdf", "decode", "--config", str(self.config)])
        self.assertEqual(ctx.exception.code, 1)
        command = Command(stdout=StringIO(), stderr=StringIO())
        with self.assertRaises(SystemExit) as ctx:
            command.run_from_argv(["manage.py", "cdf", "train-phone", "--config", str(self.config)])
        self.assertEqual(ctx.exception.code, 2)

    def test_emotion_before_speaker_exits_2(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("train-emotion", config=str(self.config))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn("cascade order violation", str(ctx.exception))

    def test_report_without_results_exits_2(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("report", config=str(self.config))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_workspace_flag_overrides_the_file(self):
        other = self.root / "other"
        self.call("synth-data", config=str(self.config), workspace=str(other))
        self.assertTrue((other / "corpus" / "manifest.jsonl").is_file())
        self.assertFalse((self.root / "ws").exists())


@override_settings(CDF=QUIET)
class PipelineTests(SimpleTestCase):
    """One tiny end-to-end run shared by every test."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.config = parse_config(TINY, workspace=Path(cls.tmp.name) / "ws")
        cls.pipeline = Pipeline(cls.config, version="test")
        cls.outputs = {step: cls.pipeline.run(step) for step in RUN_ORDER}
        cls.workspace = cls.pipeline.workspace

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_every_artifact_is_registered_with_its_hash(self):
        artifacts = self.workspace.artifacts()
        for name in ("corpus/manifest.jsonl", "protocol.json", "models/phone.cdn", "models/speaker-cdf.cdn",
                     "models/emotion-ling+spk.cdn", "models/recon.cdn", "factors/cascade.json",
                     "results/sre.jsonl", "results/aer.jsonl", "results/recon.jsonl", "report.txt"):
            self.assertIn(name, artifacts)
        for name, entry in artifacts.items():
            self.assertEqual(sha256_file(self.workspace.root / name), entry["sha256"], name)
            self.assertEqual(entry["config_hash"], self.config.config_hash)
            self.assertEqual(entry["version"], "test")

    def test_checkpoints_carry_hash_and_system(self):
        network = load_checkpoint(self.workspace.model_path(model_name("speaker", "cdf")))
        self.assertEqual(network.metadata["config_hash"], self.config.config_hash)
        self.assertEqual(network.metadata["system"], "cdf")
        aer = load_checkpoint(self.workspace.model_path(model_name("emotion", "spk")))
        self.assertEqual(aer.metadata["speaker_system"], "cdf")
        self.assertEqual(aer.metadata["conditioning"], "spk")

    def test_factor_archive_is_aligned(self):
        info = self.outputs["factorize"]
        self.assertEqual(info["dims"], [3, 4, 4])
        self.assertEqual(info["context"], 20)
        manifest = self.pipeline._manifest()
        record = manifest.records[0]
        rows = self.workspace.factor_archive.read(record.utt_id)
        self.assertEqual(rows.shape, (record.n_frames - 19, 11))

    def test_training_logs_start_at_epoch_zero(self):
        log = read_jsonl(self.workspace.log_path("phone"))
        self.assertEqual([(r["epoch"], r["split"]) for r in log[:1]], [(0, "train")])
        self.assertTrue(all(r["config_hash"] == self.config.config_hash for r in log))

    def test_results(self):
        sre = read_jsonl(self.workspace.results_path("sre"))
        self.assertEqual([r["system"] for r in sre], ["idf", "cdf"])
        self.assertTrue(all(r["condition"] == "C(0.3-20f)" for r in sre))
        aer = read_jsonl(self.workspace.results_path("aer"))
        self.assertEqual(len(aer), 4 * 2 * 2)
        recon = read_jsonl(self.workspace.results_path("recon"))
        self.assertEqual([r["split"] for r in recon], ["dev", "eval", "resynthesis"])
        wavs = list(self.workspace.resynthesis_dir.glob("*.wav"))
        self.assertEqual(len(wavs), 1)

    def test_report(self):
        text = self.workspace.report_path.read_text(encoding="utf-8")
        for heading in ("Speaker identification", "Emotion recognition, frame level",
                        "Emotion recognition, utterance level", "Spectrum reconstruction", "Training"):
            self.assertIn(heading, text)
        self.assertIn("cdf - idf", text)
        self.assertIn("AER (ling+spk)", text)
        self.assertEqual(text, self.outputs["report"])

    def test_rerun_is_byte_identical(self):
        with tempfile.TemporaryDirectory() as tmp:
            again = Pipeline(parse_config(TINY, workspace=Path(tmp) / "ws"), version="test")
            for step in RUN_ORDER[:3]:
                again.run(step)
            first, second = self.workspace.artifacts(), again.workspace.artifacts()
            self.assertIn("models/phone.cdn", second)
            for name, entry in second.items():
                self.assertEqual(first[name]["sha256"], entry["sha256"], name)

    def test_report_refuses_mixed_config_hashes(self):
        with tempfile.TemporaryDirectory() as tmp:
            copy = Path(tmp) / "ws"
            shutil.copytree(self.workspace.root, copy)
            other = Pipeline(parse_config(TINY, seed=6, workspace=copy), version="test")
            with self.assertRaisesMessage(ConfigMismatchError, "config mismatch"):
                other.run("report")
            forced = Pipeline(parse_config(TINY, seed=6, workspace=copy), force=True, version="test")
            self.assertIn("WARNING", forced.run("report"))



def spliced(frames, half=4):
    padded = np.pad(frames, ((half, half), (0, 0)), mode="edge")
    return np.hstack([padded[k:k + frames.shape[0]] for k in range(2 * half + 1)])


def linear_oracle_accuracy(train_x, train_y, test_x, test_y, n_classes):
    """Least-squares one-vs-all linear classifier, scored on the test rows."""
    weights, *_ = np.linalg.lstsq(np.hstack([train_x, np.ones((len(train_x), 1))]),
                                  np.eye(n_classes)[train_y], rcond=None)
    scores = np.hstack([test_x, np.ones((len(test_x), 1))]) @ weights
    return float(np.mean(np.argmax(scores, axis=1) == test_y))


@tag("slow")
@skipUnless(settings.CDF["RUN_SLOW_TESTS"], "set CDF_SLOW_TESTS=1 to run the trend experiments")
@override_settings(CDF=QUIET)
class TrendTests(SimpleTestCase):
    """The default corpus, three seeds: directional trends of the factorization."""

    SEEDS = (0, 1, 2)

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.workspaces = []
        for seed in cls.SEEDS:
            config = load_config(settings.BASE_DIR / "configs" / "default.yaml", seed=seed,
                                 workspace=Path(cls.tmp.name) / f"seed{seed}")
            pipeline = Pipeline(config)
            for step in RUN_ORDER[:-1]:
                pipeline.run(step)
            cls.workspaces.append(pipeline.workspace)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def mean(self, name, select, value):
        values = [
            value(r) for ws in self.workspaces for r in read_jsonl(ws.results_path(name)) if select(r)
        ]
        return sum(values) / len(values)

    def test_cdf_dvectors_identify_at_least_as_well_as_idf(self):
        shortest = "C(30-20f)"
        idr = {
            system: self.mean("sre", lambda r, s=system: r["system"] == s and r["condition"] == shortest,
                              lambda r: r["idr_percent"])
            for system in ("idf", "cdf")
        }
        self.assertGreaterEqual(idr["cdf"], idr["idf"])
        for value in idr.values():
            self.assertGreaterEqual(value, 4 * 100.0 / 16)

    def test_conditioning_raises_training_accuracy(self):
        def acc(system, split="train", key="acc_percent"):
            return self.mean("aer", lambda r: (r["system"], r["split"], r["level"]) == (system, split, "frame"),
                             lambda r: r[key])

        self.assertLessEqual(acc("baseline"), acc("ling"))
        self.assertLessEqual(acc("ling"), acc("ling+spk"))
        self.assertLessEqual(acc("baseline"), acc("spk"))
        self.assertLessEqual(acc("spk"), acc("ling+spk"))
        for system in ("ling", "spk", "ling+spk"):
            self.assertGreaterEqual(acc(system, "eval", "map_percent"), acc("baseline", "eval", "map_percent") - 1.0)

    def test_reconstruction_learns_and_generalizes(self):
        for ws in self.workspaces:
            dev = {r["epoch"]: r["loss"] for r in read_jsonl(ws.log_path("recon")) if r["split"] == "dev"}
            self.assertGreaterEqual(dev[0] / dev[max(dev)], 10.0)
            recon = {r["split"]: r for r in read_jsonl(ws.results_path("recon"))}
            ratio = recon["eval"]["mean_frame_square_error"] / recon["dev"]["mean_frame_square_error"]
            self.assertLessEqual(ratio, 1.5)
            self.assertTrue(recon["eval"]["beats_baseline_everywhere"])
            self.assertTrue(json.dumps(recon["eval"]["per_utterance"]))

    def test_shorter_tests_do_not_identify_better(self):
        for system in ("idf", "cdf"):
            idr = [
                self.mean("sre", lambda r, s=system, c=f"C(30-{n}f)": (r["system"], r["condition"]) == (s, c),
                          lambda r: r["idr_percent"])
                for n in (100, 50, 20)
            ]
            for longer, shorter in zip(idr, idr[1:]):
                self.assertLessEqual(shorter, longer + 5.0, system)

    def test_speaker_conditioning_keeps_dev_accuracy(self):
        def dev_accuracy(system):
            last = []
            for ws in self.workspaces:
                records = [r for r in read_jsonl(ws.log_path(model_name("speaker", system))) if r["split"] == "dev"]
                last.append(max(records, key=lambda r: r["epoch"])["accuracy"])
            return 100.0 * sum(last) / len(last)

        self.assertGreaterEqual(dev_accuracy("cdf"), dev_accuracy("idf") - 1.0)

    def test_phone_net_beats_chance_on_eval(self):
        for ws in self.workspaces:
            manifest = CorpusManifest.read(ws.manifest_path)
            fbank_archive, _ = ws.feature_archives()
            phone_net = load_checkpoint(ws.model_path("phone"))
            correct = total = 0
            for record in manifest.split("eval"):
                posteriors = phone_posteriors(phone_net, fbank_archive.read(record.utt_id))
                correct += int(np.sum(np.argmax(posteriors, axis=1) == record.phone_labels()))
                total += record.n_frames
            self.assertGreater(correct / total, 5.0 / posteriors.shape[1])

    def test_corpus_factors_are_linearly_separable(self):
        ws = self.workspaces[0]
        manifest = CorpusManifest.read(ws.manifest_path)
        fbank_archive, _ = ws.feature_archives()
        speakers = {s: i for i, s in enumerate(manifest.speakers("train"))}
        n_emotions = len({r.emotion_id for r in manifest.split("train")})

        def split_data(split, step):
            inputs, phones, spk, emotions = [], [], [], []
            for record in manifest.split(split):
                rows = slice(None, None, step)
                inputs.append(spliced(fbank_archive.read(record.utt_id))[rows])
                labels = record.phone_labels()[rows]
                phones.append(labels)
                spk.append(np.full(labels.shape, speakers[record.speaker_id]))
                emotions.append(np.full(labels.shape, record.emotion_id))
            return [np.concatenate(part) for part in (inputs, phones, spk, emotions)]

        train_x, *train_labels = split_data("train", 3)
        dev_x, *dev_labels = split_data("dev", 1)
        n_phones = int(max(train_labels[0].max(), dev_labels[0].max())) + 1
        for n_classes, train_y, dev_y in zip((n_phones, len(speakers), n_emotions), train_labels, dev_labels):
            accuracy = linear_oracle_accuracy(train_x, train_y, dev_x, dev_y, n_classes)
            self.assertGreater(accuracy, 1.0 / n_classes)
