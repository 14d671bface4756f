"""
The experiment steps behind `manage.py cdf <step>`.

Each step reads its inputs from the workspace, refuses to run when an
upstream artifact is missing, writes its outputs and registers them in
`artifacts.json`. Steps are rerunnable: unchanged inputs give byte-identical
outputs.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor

from django.conf import settings
from tqdm import tqdm

from cascade.configs import STAGE_EMOTION, STAGE_PHONE, STAGE_SPEAKER, UPSTREAM_PHONE, UPSTREAM_SPEAKER
from cascade.factors import Cascade
from cascade.features import extract_features
from cascade.stages import train_stage
from cascade.training import SPLIT_DEV, SPLIT_TRAIN
from core.exceptions import CascadeOrderError, ConfigMismatchError, UtteranceTooShortError, WriteError
from core.seeds import derive_seed
from dsp.wavio import read_wav
from evaluation.experiments import SYSTEM_CDF, SYSTEM_IDF, run_aer_experiment, run_sre_experiment
from networks.configs import COND_LING, COND_SPK
from nncore.checkpoint import load_checkpoint, save_checkpoint
from reconstruct.model import Reconstructor
from reconstruct.resynthesis import resynthesize, write_resynthesis
from reconstruct.scoring import evaluate_reconstruction, mean_spectrum
from reconstruct.training import train_reconstructor
from synthdata.corpus import generate_corpus
from synthdata.manifest import CorpusManifest
from synthdata.protocol import SreProtocol, make_sre_protocol
from synthdata.specs import SPLIT_EVAL

from .reporting import build_report, render_report
from .serializers import STAGE_SYSTEMS
from .workspace import RECON_MODEL, Workspace, read_jsonl, write_json, write_jsonl

logger = logging.getLogger(__name__)

STEPS = (
    "synth-data",
    "extract-features",
    "train-phone",
    "train-speaker",
    "train-emotion",
    "train-recon",
    "factorize",
    "eval-sre",
    "eval-aer",
    "reconstruct",
    "report",
)

# The emotion system whose e feeds factorization and reconstruction.
FACTOR_SYSTEM = "ling+spk"


def model_name(stage, system):
    return stage if stage == system else f"{stage}-{system}"


class Pipeline:
    """
    Runs experiment steps against one workspace.

    Args:
        config (ExperimentConfig): Validated experiment.
        force (bool): Let `report` mix artifacts of different config hashes.
    """

    def __init__(self, config, force=False, version=None):
        self.config = config
        self.force = force
        self.workspace = Workspace(config.workspace, config.config_hash, version)

    def run(self, step):
        if step not in STEPS:
            raise ValueError(f"unknown step {step}")
        logger.info("Running %s in %s (config %s, version %s)", step, self.workspace.root,
                    self.config.config_hash[:12], self.workspace.version)
        return getattr(self, step.replace("-", "_"))()

    # Inputs

    def _manifest(self):
        path = self.workspace.require(self.workspace.manifest_path, "the corpus manifest", "synth-data")
        return CorpusManifest.read(path)

    def _archives(self, manifest):
        fbank_archive, spec_archive = self.workspace.feature_archives()
        for record in manifest:
            self.workspace.require(fbank_archive.path_for(record.utt_id), "fbank features", "extract-features")
            self.workspace.require(spec_archive.path_for(record.utt_id), "spectrum features", "extract-features")
        return fbank_archive, spec_archive

    def _load(self, name, step):
        path = self.workspace.require(self.workspace.model_path(name), f"the {name} checkpoint", step)
        return load_checkpoint(path)

    def _speaker_system(self):
        """The CDF speaker net when it exists, else the IDF one, else the configured preference."""
        for system in (SYSTEM_CDF, SYSTEM_IDF):
            if self.workspace.model_path(model_name(STAGE_SPEAKER, system)).is_file():
                return system
        return SYSTEM_CDF if SYSTEM_CDF in self.config.systems(STAGE_SPEAKER) else SYSTEM_IDF

    def _factor_system(self):
        systems = self.config.systems(STAGE_EMOTION)
        return FACTOR_SYSTEM if FACTOR_SYSTEM in systems else systems[-1]

    def _cascade(self, emotion_system):
        aer_net = self._load(model_name(STAGE_EMOTION, emotion_system), "train-emotion")
        speaker_system = aer_net.metadata.get("speaker_system") or self._speaker_system()
        speaker_net = self._load(model_name(STAGE_SPEAKER, speaker_system), "train-speaker")
        phone_net = self._load(STAGE_PHONE, "train-phone")
        return Cascade(phone_net, speaker_net, aer_net)

    def _split_ids(self, manifest, split, archive):
        return [r.utt_id for r in manifest.split(split) if archive.exists(r.utt_id)]

    def _factor_info(self):
        path = self.workspace.require(self.workspace.cascade_path, "the factor archive", "factorize")
        return json.loads(path.read_text(encoding="utf-8"))

    # Steps

    def synth_data(self):
        cfg = self.config
        manifest = generate_corpus(cfg.synth, self.workspace.corpus_dir, cfg.frames)
        protocol = make_sre_protocol(
            manifest,
            enroll_seconds=cfg.protocol.enroll_seconds,
            test_frames_list=cfg.protocol.test_frames,
            seed=cfg.protocol.seed,
            tests_per_speaker=cfg.protocol.tests_per_speaker,
            frame_config=cfg.frames,
        )
        protocol.write(self.workspace.protocol_path)
        paths = [self.workspace.manifest_path, self.workspace.protocol_path]
        paths += [manifest.wav_path(record) for record in manifest]
        self.workspace.register(paths)
        logger.info("Protocol: %d SRE speakers, %d test segments", len(protocol.speakers), len(protocol.tests))
        return manifest

    def extract_features(self):
        manifest = self._manifest()
        fbank_archive, spec_archive = extract_features(manifest, self.workspace.features_dir, self.config.frames)
        self.workspace.register(
            [archive.path_for(record.utt_id) for archive in (fbank_archive, spec_archive) for record in manifest]
        )
        return fbank_archive, spec_archive

    def _train(self, stage, system, upstream, metadata=None):
        manifest = self._manifest()
        fbank_archive, _ = self._archives(manifest)
        name = model_name(stage, system)
        network_config = {
            STAGE_PHONE: self.config.phone_net,
            STAGE_SPEAKER: self.config.ctdnn,
            STAGE_EMOTION: self.config.aer_net,
        }[stage]
        network, _ = train_stage(
            self.config.stage_config(stage, system, upstream),
            manifest,
            fbank_archive,
            network_config,
            log_path=self.workspace.log_path(name),
            metadata={**self.workspace.stamp, **(metadata or {})},
            align_context=self.config.ctdnn.effective_context_frames if stage == STAGE_EMOTION else None,
        )
        path = save_checkpoint(network, self.workspace.model_path(name))
        self.workspace.register([path, self.workspace.log_path(name)])
        return network

    def train_phone(self):
        return self._train(STAGE_PHONE, STAGE_PHONE, {})

    def train_speaker(self):
        phone_path = self.workspace.model_path(STAGE_PHONE)
        if SYSTEM_CDF in self.config.systems(STAGE_SPEAKER):
            self.workspace.require(phone_path, "the phone checkpoint", "train-phone")
        return [
            self._train(STAGE_SPEAKER, system, {UPSTREAM_PHONE: str(phone_path)})
            for system in self.config.systems(STAGE_SPEAKER)
        ]

    def train_emotion(self):
        speaker_system = self._speaker_system()
        upstream = {
            UPSTREAM_PHONE: self.workspace.model_path(STAGE_PHONE),
            UPSTREAM_SPEAKER: self.workspace.model_path(model_name(STAGE_SPEAKER, speaker_system)),
        }
        systems = self.config.systems(STAGE_EMOTION)
        # Every system's upstream is checked before any of them trains.
        needed = {c for system in systems for c in STAGE_SYSTEMS[STAGE_EMOTION][system]}
        if COND_SPK in needed:
            self.workspace.require(upstream[UPSTREAM_SPEAKER], f"the {speaker_system} speaker checkpoint",
                                   "train-speaker")
        if COND_LING in needed or (COND_SPK in needed and speaker_system == SYSTEM_CDF):
            self.workspace.require(upstream[UPSTREAM_PHONE], "the phone checkpoint", "train-phone")
        upstream = {key: str(path) for key, path in upstream.items()}
        return [
            self._train(STAGE_EMOTION, system, upstream, {"speaker_system": speaker_system})
            for system in systems
        ]

    def factorize(self):
        manifest = self._manifest()
        fbank_archive, _ = self._archives(manifest)
        emotion_system = self._factor_system()
        cascade = self._cascade(emotion_system)
        archive = self.workspace.factor_archive

        def job(record):
            try:
                factors = cascade.factorize_frames(fbank_archive.read(record.utt_id))
            except UtteranceTooShortError:
                logger.warning("Skipping %s: %d frames, shorter than the %d-frame context",
                               record.utt_id, record.n_frames, cascade.context)
                return None
            archive.write(record.utt_id, factors.stacked())
            return archive.path_for(record.utt_id), (factors.q.shape[1], factors.s.shape[1], factors.e.shape[1])

        with ThreadPoolExecutor(max_workers=settings.CDF["FEATURE_WORKERS"]) as pool:
            done = [r for r in tqdm(pool.map(job, manifest.records), total=len(manifest),
                                    desc="factorize", disable=not settings.CDF["SHOW_PROGRESS"]) if r]
        if not done:
            raise CascadeOrderError("cascade order violation: no utterance is long enough to factorize")
        info = {
            "emotion_system": emotion_system,
            "speaker_system": cascade.speaker_net.metadata.get("system", ""),
            "dims": list(done[0][1]),
            "context": cascade.context,
            **self.workspace.stamp,
        }
        write_json(self.workspace.cascade_path, info)
        self.workspace.register([path for path, _ in done] + [self.workspace.cascade_path])
        logger.info("Factorized %d utterances with q/s/e widths %s", len(done), info["dims"])
        return info

    def train_recon(self):
        info = self._factor_info()
        manifest = self._manifest()
        _, spec_archive = self._archives(manifest)
        factor_archive = self.workspace.factor_archive
        model, _ = train_reconstructor(
            factor_archive,
            spec_archive,
            self._split_ids(manifest, SPLIT_TRAIN, factor_archive),
            self._split_ids(manifest, SPLIT_DEV, factor_archive),
            self.config.recon,
            tuple(info["dims"]),
            context=info["context"],
            log_path=self.workspace.log_path(RECON_MODEL),
            metadata={**self.workspace.stamp, "emotion_system": info["emotion_system"]},
        )
        path = model.save(self.workspace.model_path(RECON_MODEL))
        self.workspace.register([path, self.workspace.log_path(RECON_MODEL)])
        return model

    def reconstruct(self):
        info = self._factor_info()
        model_path = self.workspace.require(self.workspace.model_path(RECON_MODEL), "the reconstructor",
                                            "train-recon")
        model = Reconstructor.load(model_path)
        manifest = self._manifest()
        _, spec_archive = self._archives(manifest)
        factor_archive = self.workspace.factor_archive
        context = info["context"]
        baseline = mean_spectrum(factor_archive, spec_archive,
                                 self._split_ids(manifest, SPLIT_TRAIN, factor_archive), context)

        records = []
        for split in (SPLIT_DEV, SPLIT_EVAL):
            utt_ids = self._split_ids(manifest, split, factor_archive)
            if not utt_ids:
                continue
            report = evaluate_reconstruction(model, factor_archive, spec_archive, utt_ids, context, baseline)
            records.append({
                "split": split,
                **report.to_dict(),
                "beats_baseline_everywhere": report.beats_baseline_everywhere,
                **self.workspace.stamp,
            })

        cascade = self._cascade(info["emotion_system"])
        paths = []
        eval_ids = sorted(self._split_ids(manifest, SPLIT_EVAL, factor_archive))
        for utt_id in eval_ids[:self.config.recon.resynthesis_utterances]:
            result = resynthesize(
                read_wav(manifest.wav_path(manifest[utt_id]), self.config.frames.sample_rate_hz),
                cascade,
                model,
                iterations=self.config.recon.griffin_lim_iterations,
                seed=derive_seed(self.config.griffin_lim_seed, utt_id),
                frame_config=self.config.frames,
            )
            paths += write_resynthesis(result, self.workspace.resynthesis_dir, utt_id)
            records.append({
                "split": "resynthesis",
                "utt_id": utt_id,
                "frames": len(result.reconstructed),
                "mean_square_error": result.mean_square_error,
                **self.workspace.stamp,
            })
        results = write_jsonl(self.workspace.results_path("recon"), records)
        self.workspace.register([results] + paths)
        return records

    def eval_sre(self):
        protocol_path = self.workspace.require(self.workspace.protocol_path, "the SRE protocol", "synth-data")
        protocol = SreProtocol.read(protocol_path)
        manifest = self._manifest()
        fbank_archive, _ = self._archives(manifest)
        records = []
        for system in self.config.systems(STAGE_SPEAKER):
            speaker_net = self._load(model_name(STAGE_SPEAKER, system), "train-speaker")
            phone_net = self._load(STAGE_PHONE, "train-phone") if system == SYSTEM_CDF else None
            results = run_sre_experiment(manifest, protocol, system, speaker_net, fbank_archive, phone_net)
            records += [
                {"system": system, "n_speakers": len(protocol.speakers), **r.to_dict(), **self.workspace.stamp}
                for r in results
            ]
        path = write_jsonl(self.workspace.results_path("sre"), records)
        self.workspace.register([path])
        return records

    def eval_aer(self):
        manifest = self._manifest()
        fbank_archive, _ = self._archives(manifest)
        records = []
        for system in self.config.systems(STAGE_EMOTION):
            cascade = self._cascade(system)
            for split in (SPLIT_TRAIN, SPLIT_EVAL):
                split_records = manifest.split(split)
                if not split_records:
                    continue
                reports = run_aer_experiment(cascade, split_records, fbank_archive)
                records += [
                    {"system": system, "split": split, **report.to_dict(), **self.workspace.stamp}
                    for report in reports.values()
                ]
        path = write_jsonl(self.workspace.results_path("aer"), records)
        self.workspace.register([path])
        return records

    def report(self):
        """
        Raises:
            ConfigMismatchError: The workspace holds artifacts of another
                config hash and `force` is off.
            CascadeOrderError: No evaluation has run yet.
        """
        hashes = self.workspace.config_hashes()
        foreign = [h for h in hashes if h != self.config.config_hash]
        if foreign and not self.force:
            raise ConfigMismatchError(
                f"config mismatch: the workspace holds artifacts of {len(hashes)} config hashes "
                f"({', '.join(h[:12] for h in hashes)}); rerun the pipeline or pass --force"
            )
        results = {}
        for name in ("sre", "aer", "recon"):
            path = self.workspace.results_path(name)
            if path.is_file():
                results[name] = read_jsonl(path)
        if not results:
            raise CascadeOrderError(
                "cascade order violation: no results to report; run `eval-sre`, `eval-aer` or `reconstruct` first"
            )
        logs = {
            path.stem: read_jsonl(path)
            for path in sorted((self.workspace.root / "logs").glob("*.jsonl"))
        }
        tables = build_report(results, logs)
        text = render_report(tables, self.config.config_hash, self.workspace.version, hashes if foreign else [])
        try:
            self.workspace.report_path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise WriteError(f"write error: {self.workspace.report_path}: {exc}") from exc
        summary = write_jsonl(self.workspace.results_path("report"), [t.to_dict() for t in tables])
        self.workspace.register([self.workspace.report_path, summary])
        return text
