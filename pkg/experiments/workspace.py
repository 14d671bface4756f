"""
Layout and bookkeeping of an experiment workspace.

    <root>/
      corpus/manifest.jsonl, corpus/wav/*.wav
      protocol.json
      features/*.fbank.cdff, features/*.spec.cdff
      models/<stage>-<system>.cdn, models/recon.cdn
      factors/*.factors.cdff, factors/cascade.json
      logs/<name>.jsonl
      results/<name>.jsonl
      resynthesis/<utt>.wav, <utt>.original.txt, <utt>.reconstructed.txt
      report.txt
      artifacts.json

`artifacts.json` maps every output path (relative to the root) to its
SHA-256, the config hash and the toolkit version that produced it.
"""

import hashlib
import json
import logging
import subprocess
from functools import lru_cache
from pathlib import Path

from django.conf import settings

from cascade.features import feature_archives
from core.exceptions import CascadeOrderError, WriteError
from dsp.archives import FeatureArchive
from synthdata.manifest import MANIFEST_NAME

logger = logging.getLogger(__name__)

REGISTRY_NAME = "artifacts.json"
FACTORS = "factors"
RECON_MODEL = "recon"


@lru_cache(maxsize=1)
def toolkit_version():
    """`git describe` of the source tree, or CDF["VERSION_FALLBACK"] outside git."""
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=settings.BASE_DIR, capture_output=True, text=True, timeout=10, check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return settings.CDF["VERSION_FALLBACK"]
    return result.stdout.strip() or settings.CDF["VERSION_FALLBACK"]


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path, data):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise WriteError(f"write error: {path}: {exc}") from exc
    return path


def write_jsonl(path, records):
    path = Path(path)
    lines = "".join(json.dumps(record, sort_keys=True) + "\n" for record in records)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(lines, encoding="utf-8")
    except OSError as exc:
        raise WriteError(f"write error: {path}: {exc}") from exc
    return path


def read_jsonl(path):
    with open(path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


class Workspace:
    """
    Paths of every artifact plus the `artifacts.json` registry.

    Attributes:
        root (Path): Workspace directory.
        config_hash (str): Hash stamped on every registered artifact.
        version (str): Toolkit version stamped alongside.
    """

    def __init__(self, root, config_hash, version=None):
        self.root = Path(root)
        self.config_hash = config_hash
        self.version = version or toolkit_version()

    @property
    def corpus_dir(self):
        return self.root / "corpus"

    @property
    def manifest_path(self):
        return self.corpus_dir / MANIFEST_NAME

    @property
    def protocol_path(self):
        return self.root / "protocol.json"

    @property
    def features_dir(self):
        return self.root / "features"

    def feature_archives(self):
        return feature_archives(self.features_dir)

    @property
    def factor_archive(self):
        return FeatureArchive(self.root / FACTORS, FACTORS)

    @property
    def cascade_path(self):
        return self.root / FACTORS / "cascade.json"

    def model_path(self, name):
        return self.root / "models" / f"{name}.cdn"

    def log_path(self, name):
        return self.root / "logs" / f"{name}.jsonl"

    def results_path(self, name):
        return self.root / "results" / f"{name}.jsonl"

    @property
    def resynthesis_dir(self):
        return self.root / "resynthesis"

    @property
    def report_path(self):
        return self.root / "report.txt"

    @property
    def registry_path(self):
        return self.root / REGISTRY_NAME

    @property
    def stamp(self):
        return {"config_hash": self.config_hash, "version": self.version}

    def require(self, path, what, step):
        """
        Raises:
            CascadeOrderError: `path` does not exist yet.
        """
        if not Path(path).exists():
            raise CascadeOrderError(
                f"cascade order violation: {what} is missing at {path}; run `{step}` first"
            )
        return Path(path)

    def artifacts(self):
        if not self.registry_path.is_file():
            return {}
        return json.loads(self.registry_path.read_text(encoding="utf-8"))

    def register(self, paths):
        """Hash `paths` into the registry, replacing earlier entries of the same files."""
        registry = self.artifacts()
        for path in paths:
            path = Path(path)
            registry[path.relative_to(self.root).as_posix()] = {"sha256": sha256_file(path), **self.stamp}
        write_json(self.registry_path, registry)
        logger.info("Registered %d artifacts in %s", len(paths), self.registry_path)
        return registry

    def config_hashes(self):
        return sorted({entry["config_hash"] for entry in self.artifacts().values()})
