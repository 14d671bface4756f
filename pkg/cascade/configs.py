"""
Stage configuration of the cascade.
"""

from dataclasses import dataclass, field

STAGE_PHONE = "phone"
STAGE_SPEAKER = "speaker"
STAGE_EMOTION = "emotion"
STAGES = (STAGE_PHONE, STAGE_SPEAKER, STAGE_EMOTION)
STAGE_CHOICES = [(s, s) for s in STAGES]

OPTIMIZER_CHOICES = [("adam", "adam"), ("sgd", "sgd")]

# Keys of StageConfig.upstream.
UPSTREAM_PHONE = "phone"
UPSTREAM_SPEAKER = "speaker"


@dataclass(frozen=True)
class StageConfig:
    """
    Training settings of one cascade stage.

    Attributes:
        stage (str): "phone", "speaker" or "emotion".
        conditioning (tuple[str]): Subset of ("ling", "spk"); empty for the
            phone stage, at most ("ling",) for the speaker stage.
        batch_frames (int): Training frames per update.
        lr_decay (float): Learning-rate factor applied after every epoch.
        max_frames_per_epoch (int): Seeded subsample per epoch, 0 for all.
        upstream (dict[str, str]): Checkpoint paths keyed "phone"/"speaker".
    """

    stage: str
    conditioning: tuple = ()
    epochs: int = 8
    batch_frames: int = 256
    lr: float = 1e-3
    lr_decay: float = 0.9
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 0
    max_frames_per_epoch: int = 0
    upstream: dict = field(default_factory=dict, hash=False)


def system_name(stage, conditioning):
    """
    Name of a trained system: "phone"; "idf" or "cdf" for the speaker stage;
    "baseline", "ling", "spk" or "ling+spk" for the emotion stage.
    """
    if stage == STAGE_PHONE:
        return STAGE_PHONE
    if stage == STAGE_SPEAKER:
        return "cdf" if conditioning else "idf"
    return "+".join(conditioning) if conditioning else "baseline"
