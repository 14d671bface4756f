"""
Per-utterance feature extraction into "CDFF" archives.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

from django.conf import settings
from tqdm import tqdm

from core.exceptions import ConfigMismatchError
from dsp.archives import FeatureArchive
from dsp.containers import FrameConfig
from dsp.frontend import fbank, log_power_spectrogram
from dsp.wavio import read_wav

logger = logging.getLogger(__name__)

FBANK = "fbank"
SPECTRUM = "spec"


def feature_archives(root):
    """The fbank and log-power spectrum archives under `root`."""
    return FeatureArchive(root, FBANK), FeatureArchive(root, SPECTRUM)


def extract_features(manifest, root, frame_config=None, workers=None):
    """
    Write fbank and log-power spectrum records for every manifest utterance.

    Raises:
        ConfigMismatchError: A WAV yields a frame count other than the
            manifest's, i.e. it was rendered with another FrameConfig.
    """
    frame_config = frame_config or FrameConfig()
    workers = workers or settings.CDF["FEATURE_WORKERS"]
    fbank_archive, spec_archive = feature_archives(root)

    def job(record):
        waveform = read_wav(manifest.wav_path(record))
        features = fbank(waveform, frame_config)
        if features.n_frames != record.n_frames:
            raise ConfigMismatchError(
                f"config mismatch: {record.utt_id} has {features.n_frames} frames, "
                f"the manifest says {record.n_frames}"
            )
        fbank_archive.write(record.utt_id, features.frames)
        spec_archive.write(record.utt_id, log_power_spectrogram(waveform, frame_config).frames)
        return record.utt_id

    with ThreadPoolExecutor(max_workers=workers) as pool:
        done = list(tqdm(pool.map(job, manifest.records), total=len(manifest.records),
                         desc="extract-features", disable=not settings.CDF["SHOW_PROGRESS"]))
    logger.info("Extracted features for %d utterances into %s", len(done), root)
    return fbank_archive, spec_archive
