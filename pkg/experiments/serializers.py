"""
Validation of the top level of an experiment config and of the per-stage
system lists.

Section contents are validated by the owning app's serializer; see
`experiments.configs.SECTIONS`.
"""

from rest_framework import serializers

from cascade.configs import STAGE_CHOICES, STAGE_EMOTION, STAGE_PHONE, STAGE_SPEAKER
from networks.configs import COND_LING, COND_SPK

# System name -> conditioning factors, per stage.
STAGE_SYSTEMS = {
    STAGE_PHONE: {"phone": ()},
    STAGE_SPEAKER: {"idf": (), "cdf": (COND_LING,)},
    STAGE_EMOTION: {
        "baseline": (),
        "ling": (COND_LING,),
        "spk": (COND_SPK,),
        "ling+spk": (COND_LING, COND_SPK),
    },
}


class ExperimentSerializer(serializers.Serializer):
    """
    Top-level keys of an experiment file.

    Fields:
        seed (int): Global seed, the root of every sub-seed.
        workspace (str): Artifact directory, defaults to CDF["WORKSPACE"].
    """
    seed = serializers.IntegerField(min_value=0, default=0)
    workspace = serializers.CharField(required=False, allow_blank=False)


class StageSystemsSerializer(serializers.Serializer):
    """
    The `systems` list of one stage section.

    Methods:
        validate: Names must belong to the stage; duplicates are dropped and
            the stage's canonical order is restored. Missing means all.
    """
    stage = serializers.ChoiceField(choices=STAGE_CHOICES)
    systems = serializers.ListField(child=serializers.CharField(), min_length=1, required=False)

    def validate(self, attrs):
        known = STAGE_SYSTEMS[attrs["stage"]]
        requested = attrs.get("systems", list(known))
        unknown = sorted(set(requested) - set(known))
        if unknown:
            raise serializers.ValidationError(
                {"systems": f"Unknown {attrs['stage']} systems {unknown}; choose from {list(known)}."}
            )
        attrs["systems"] = tuple(name for name in known if name in requested)
        return attrs
