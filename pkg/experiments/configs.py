"""
Loading of experiment YAML files into a validated `ExperimentConfig`.

An experiment file holds one mapping per section plus a top-level `seed` and
`workspace`:

    seed: 0
    workspace: work/default
    frames: {n_mels: 40}
    synth: {n_speakers: 16}
    phone_net: {hidden_units: 128}
    ctdnn: {}
    aer_net: {}
    stages:
      phone: {epochs: 8}
      speaker: {epochs: 8, systems: [idf, cdf]}
      emotion: {epochs: 8, systems: [baseline, ling, spk, ling+spk]}
    recon: {epochs: 20}
    protocol: {enroll_seconds: 30.0}

Missing sections take their defaults. Seeds are not set per section: every
sub-seed derives from the top-level seed.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import yaml
from django.conf import settings

from cascade.configs import STAGES
from cascade.serializers import StageConfigSerializer
from core.exceptions import ConfigError
from core.seeds import derive_seed
from dsp.serializers import FrameConfigSerializer
from networks.configs import PAPER_SCALE
from networks.serializers import (
    AerNetConfigSerializer,
    CtdnnConfigSerializer,
    PhoneNetConfigSerializer,
)
from reconstruct.serializers import ReconConfigSerializer
from synthdata.serializers import ProtocolSerializer, SynthSpecSerializer

from .serializers import STAGE_SYSTEMS, ExperimentSerializer, StageSystemsSerializer

SECTIONS = {
    "frames": FrameConfigSerializer,
    "synth": SynthSpecSerializer,
    "phone_net": PhoneNetConfigSerializer,
    "ctdnn": CtdnnConfigSerializer,
    "aer_net": AerNetConfigSerializer,
    "recon": ReconConfigSerializer,
    "protocol": ProtocolSerializer,
}
SEEDED_SECTIONS = ("synth", "recon", "protocol")
TOP_LEVEL_KEYS = set(SECTIONS) | {"stages", "seed", "workspace"}

# Keys of StageConfig the pipeline sets itself.
PIPELINE_STAGE_KEYS = ("stage", "conditioning", "upstream", "seed")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A fully validated experiment.

    Attributes:
        stages (dict[str, dict[str, StageConfig]]): stage -> system -> config,
            systems in canonical order, seeds already derived.
        paper_scale (bool): Layer sizes switched to the published ones.
        griffin_lim_seed (int): Phase initialization seed of resynthesis.
    """

    seed: int
    workspace: Path
    paper_scale: bool
    frames: object
    synth: object
    phone_net: object
    ctdnn: object
    aer_net: object
    stages: dict
    recon: object
    protocol: object
    griffin_lim_seed: int

    def systems(self, stage):
        return tuple(self.stages[stage])

    def stage_config(self, stage, system, upstream=None):
        return replace(self.stages[stage][system], upstream=dict(upstream or {}))

    def to_dict(self):
        """Everything that shapes an artifact; the workspace location is left out."""
        data = {
            "seed": self.seed,
            "paper_scale": self.paper_scale,
            "griffin_lim_seed": self.griffin_lim_seed,
            "stages": {
                stage: {
                    system: {k: v for k, v in asdict(cfg).items() if k != "upstream"}
                    for system, cfg in systems.items()
                }
                for stage, systems in self.stages.items()
            },
        }
        for name in SECTIONS:
            data[name] = asdict(getattr(self, name))
        return data

    @property
    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _raise_invalid(section, errors):
    raise ConfigError(
        f"config error: [{section}] {json.dumps(errors, sort_keys=True)}", code="invalid"
    )


def _mapping(value, section):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"config error: [{section}] must be a mapping, got {type(value).__name__}")
    return dict(value)


def _check_keys(data, allowed, section):
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        _raise_invalid(section, {key: ["Unknown setting."] for key in unknown})


def _validated(serializer_class, data, section):
    _check_keys(data, serializer_class().fields, section)
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        _raise_invalid(section, serializer.errors)
    return serializer.save()


def _stage_configs(stage, data, seed):
    section = f"stages.{stage}"
    allowed = set(StageConfigSerializer().fields) - set(PIPELINE_STAGE_KEYS)
    _check_keys(data, allowed | {"systems"}, section)
    systems_data = {"stage": stage}
    if "systems" in data:
        systems_data["systems"] = data.pop("systems")
    systems = StageSystemsSerializer(data=systems_data)
    if not systems.is_valid():
        _raise_invalid(section, systems.errors)

    configs = {}
    for system in systems.validated_data["systems"]:
        stage_data = {
            **data,
            "stage": stage,
            "conditioning": list(STAGE_SYSTEMS[stage][system]),
            "seed": derive_seed(seed, f"{stage}:{system}"),
        }
        configs[system] = _validated(StageConfigSerializer, stage_data, f"{section}.{system}")
    return configs


def parse_config(raw, seed=None, workspace=None, paper_scale=False):
    """
    Validate a parsed experiment mapping.

    Args:
        raw (dict | None): The YAML document.
        seed (int | None): Overrides the file's seed, and with it every sub-seed.
        workspace (str | Path | None): Overrides the file's workspace.
        paper_scale (bool): Apply `PAPER_SCALE` on top of the file.

    Raises:
        ConfigError: Unknown keys, invalid values, per-section seeds, or
            sections that contradict each other.
    """
    raw = _mapping(raw, "top level")
    _check_keys(raw, TOP_LEVEL_KEYS, "top level")
    top = {key: raw[key] for key in ("seed", "workspace") if key in raw}
    if seed is not None:
        top["seed"] = seed
    top = ExperimentSerializer(data=top)
    if not top.is_valid():
        _raise_invalid("top level", top.errors)
    seed = top.validated_data["seed"]
    workspace = Path(workspace or top.validated_data.get("workspace") or settings.CDF["WORKSPACE"])

    validated = {}
    for name, serializer_class in SECTIONS.items():
        data = _mapping(raw.get(name), name)
        if name in SEEDED_SECTIONS:
            if "seed" in data:
                raise ConfigError(
                    f"config error: [{name}] seeds derive from the top-level seed; remove '{name}.seed'"
                )
            data["seed"] = derive_seed(seed, name)
        if paper_scale:
            data.update(PAPER_SCALE.get(name, {}))
        if name == "recon":
            data.setdefault("spec_dim", validated["frames"].n_bins)
        elif name == "phone_net":
            data.setdefault("n_phones", validated["synth"].n_phones)
        elif name == "aer_net":
            data.setdefault("n_emotions", validated["synth"].n_emotions)
        validated[name] = _validated(serializer_class, data, name)

    if validated["phone_net"].n_phones < validated["synth"].n_phones:
        raise ConfigError(
            f"config error: [phone_net] n_phones {validated['phone_net'].n_phones} is below "
            f"the {validated['synth'].n_phones} phones of the corpus"
        )
    if validated["aer_net"].n_emotions < validated["synth"].n_emotions:
        raise ConfigError(
            f"config error: [aer_net] n_emotions {validated['aer_net'].n_emotions} is below "
            f"the {validated['synth'].n_emotions} emotions of the corpus"
        )

    if validated["recon"].spec_dim != validated["frames"].n_bins:
        raise ConfigError(
            f"config error: [recon] spec_dim {validated['recon'].spec_dim} differs from "
            f"the {validated['frames'].n_bins} bins of the frames section"
        )
    if validated["synth"].sample_rate != validated["frames"].sample_rate_hz:
        raise ConfigError(
            f"config error: [synth] sample_rate {validated['synth'].sample_rate} differs "
            f"from [frames] sample_rate_hz {validated['frames'].sample_rate_hz}"
        )

    stages_raw = _mapping(raw.get("stages"), "stages")
    _check_keys(stages_raw, STAGES, "stages")
    stages = {
        stage: _stage_configs(stage, _mapping(stages_raw.get(stage), f"stages.{stage}"), seed)
        for stage in STAGES
    }
    return ExperimentConfig(
        seed=seed,
        workspace=workspace,
        paper_scale=bool(paper_scale),
        stages=stages,
        griffin_lim_seed=derive_seed(seed, "griffin_lim"),
        **validated,
    )


def load_config(path, seed=None, workspace=None, paper_scale=False):
    """
    Read and validate an experiment YAML file.

    Raises:
        ConfigError: The file is missing, is not YAML, or fails validation.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"config error: cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config error: {path} is not valid YAML: {exc}") from exc
    return parse_config(raw, seed=seed, workspace=workspace, paper_scale=paper_scale)
