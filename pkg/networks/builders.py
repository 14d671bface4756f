"""
Builders for the three networks of the cascade.

Each builder is a pure function of (config, seed) and returns an initialized
`Network` whose metadata records what inference needs: the model kind, input
widths, the splice context and the index of the layer whose output is the
factor passed downstream.
"""

import logging

from core.exceptions import ConfigError, GeometryError
from nncore.layers import LayerSpec
from nncore.network import Network

from .configs import MODEL_AER, MODEL_CTDNN, MODEL_PHONE, COND_LING, conditioning_label

logger = logging.getLogger(__name__)


def _splice(offsets, in_dim):
    """timedelay over `offsets` followed by a crop of the clamped edge rows."""
    return [
        LayerSpec("timedelay", {"offsets": offsets, "in_dim": in_dim}),
        LayerSpec("crop", {"left": max(0, -offsets[0]), "right": max(0, offsets[-1])}),
    ]


def _context_metadata(offsets):
    left, right = max(0, -offsets[0]), max(0, offsets[-1])
    return {"left": left, "right": right, "context": left + right + 1}


def build_phone_net(cfg, seed):
    """
    timedelay(context) -> crop -> [dense -> relu] x hidden_layers -> dense -> softmax

    Raises:
        ConfigError: Fewer than two phones or no hidden layer.
    """
    if cfg.n_phones < 2:
        raise ConfigError(f"config error: n_phones must be at least 2, got {cfg.n_phones}")
    if cfg.hidden_layers < 1:
        raise ConfigError("config error: the phone net needs at least one hidden layer")
    offsets = tuple(cfg.context_offsets)
    specs = _splice(offsets, cfg.fbank_dim)
    width = len(offsets) * cfg.fbank_dim
    for _ in range(cfg.hidden_layers):
        specs.append(LayerSpec("dense", {"in_dim": width, "out_dim": cfg.hidden_units}))
        specs.append(LayerSpec("relu"))
        width = cfg.hidden_units
    specs.append(LayerSpec("dense", {"in_dim": width, "out_dim": cfg.n_phones}))
    specs.append(LayerSpec("softmax"))
    metadata = {
        "model_kind": MODEL_PHONE,
        "input_dim": cfg.fbank_dim,
        "fbank_dim": cfg.fbank_dim,
        "n_outputs": cfg.n_phones,
        "padding": "edge",
        "seed": seed,
        **_context_metadata(offsets),
    }
    return Network.build(specs, seed, metadata)


def _pooled_width(width, pool, stage):
    if pool > 1 and width % pool:
        logger.info("CT-DNN %s: width %d not divisible by %d, frequency pooling disabled",
                    stage, width, pool)
        pool = 1
    return width // pool, pool


def ctdnn_geometry(cfg):
    """
    Resolve layer widths and the time context of a CT-DNN config.

    Returns:
        dict: context, pool1, pool2, td_in_dim.

    Raises:
        GeometryError: A convolution does not fit the input width, or the
            time geometry does not add up to `effective_context_frames`.
    """
    (kh1, kw1), (kh2, kw2) = cfg.conv1_kernel, cfg.conv2_kernel
    td1, td2 = tuple(cfg.td1_offsets), tuple(cfg.td2_offsets)
    context = 1 + (kh1 - 1) + (kh2 - 1) + (td1[-1] - td1[0]) + (td2[-1] - td2[0])
    if context != cfg.effective_context_frames:
        raise GeometryError(
            f"geometry error: layers span {context} frames, "
            f"configured context is {cfg.effective_context_frames}"
        )
    width = cfg.input_dim_per_frame - kw1 + 1
    if width < 1:
        raise GeometryError(f"geometry error: conv1 kernel width {kw1} exceeds input width "
                            f"{cfg.input_dim_per_frame}")
    width, pool1 = _pooled_width(width, cfg.pool_freq, "pool1")
    width = width - kw2 + 1
    if width < 1:
        raise GeometryError(f"geometry error: conv2 kernel width {kw2} exceeds pooled width")
    width, pool2 = _pooled_width(width, cfg.pool_freq, "pool2")
    if cfg.td_units % cfg.pnorm_group:
        raise GeometryError("geometry error: td_units not divisible by the p-norm group")
    return {
        "context": context,
        "pool1": pool1,
        "pool2": pool2,
        "td_in_dim": cfg.conv2_channels * width,
    }


def build_ctdnn(cfg, seed):
    """
    conv -> relu -> pool -> conv -> relu -> pool -> [timedelay -> crop ->
    dense -> pnorm] x 2 -> dense feature layer -> dense -> softmax.

    The network takes [N, 1, T, input_dim_per_frame] and emits
    T - context + 1 rows.
    """
    geometry = ctdnn_geometry(cfg)
    (kh1, kw1), (kh2, kw2) = cfg.conv1_kernel, cfg.conv2_kernel
    td1, td2 = tuple(cfg.td1_offsets), tuple(cfg.td2_offsets)
    reduced = cfg.td_units // cfg.pnorm_group
    specs = [
        LayerSpec("conv2d", {"in_channels": 1, "out_channels": cfg.conv1_channels,
                             "kernel_h": kh1, "kernel_w": kw1}),
        LayerSpec("relu"),
        LayerSpec("maxpool2d", {"pool_h": 1, "pool_w": geometry["pool1"]}),
        LayerSpec("conv2d", {"in_channels": cfg.conv1_channels, "out_channels": cfg.conv2_channels,
                             "kernel_h": kh2, "kernel_w": kw2}),
        LayerSpec("relu"),
        LayerSpec("maxpool2d", {"pool_h": 1, "pool_w": geometry["pool2"]}),
        *_splice(td1, geometry["td_in_dim"]),
        LayerSpec("dense", {"in_dim": len(td1) * geometry["td_in_dim"], "out_dim": cfg.td_units}),
        LayerSpec("pnorm", {"in_dim": cfg.td_units, "group_size": cfg.pnorm_group, "p": 2.0}),
        *_splice(td2, reduced),
        LayerSpec("dense", {"in_dim": len(td2) * reduced, "out_dim": cfg.td_units}),
        LayerSpec("pnorm", {"in_dim": cfg.td_units, "group_size": cfg.pnorm_group, "p": 2.0}),
        LayerSpec("dense", {"in_dim": reduced, "out_dim": cfg.feature_dim}),
        LayerSpec("dense", {"in_dim": cfg.feature_dim, "out_dim": cfg.n_speakers}),
        LayerSpec("softmax"),
    ]
    metadata = {
        "model_kind": MODEL_CTDNN,
        "input_dim": cfg.input_dim_per_frame,
        "fbank_dim": cfg.fbank_dim,
        "ling_dim": cfg.ling_dim,
        "conditioning": conditioning_label((COND_LING,) if cfg.ling_dim else ()),
        "feature_dim": cfg.feature_dim,
        "feature_layer": len(specs) - 3,
        "n_outputs": cfg.n_speakers,
        "padding": "none",
        "context": geometry["context"],
        "left": (geometry["context"] - 1) // 2,
        "right": geometry["context"] - 1 - (geometry["context"] - 1) // 2,
        "seed": seed,
    }
    return Network.build(specs, seed, metadata)


def build_aer_net(cfg, seed):
    """
    timedelay -> crop -> [dense -> pnorm] x hidden_layers -> dense -> softmax,
    on per-frame input [fbank; q; s].

    Raises:
        ConfigError: hidden_units not divisible by pnorm_out.
    """
    if cfg.hidden_units % cfg.pnorm_out:
        raise ConfigError(
            f"config error: hidden_units {cfg.hidden_units} not divisible by pnorm_out {cfg.pnorm_out}"
        )
    if cfg.hidden_layers < 1:
        raise ConfigError("config error: the AER net needs at least one hidden layer")
    offsets = tuple(cfg.context_offsets)
    specs = _splice(offsets, cfg.input_dim)
    width = len(offsets) * cfg.input_dim
    for _ in range(cfg.hidden_layers):
        specs.append(LayerSpec("dense", {"in_dim": width, "out_dim": cfg.hidden_units}))
        specs.append(LayerSpec("pnorm", {"in_dim": cfg.hidden_units,
                                         "group_size": cfg.pnorm_group, "p": 2.0}))
        width = cfg.pnorm_out
    specs.append(LayerSpec("dense", {"in_dim": width, "out_dim": cfg.n_emotions}))
    specs.append(LayerSpec("softmax"))
    metadata = {
        "model_kind": MODEL_AER,
        "input_dim": cfg.input_dim,
        "fbank_dim": cfg.fbank_dim,
        "ling_dim": cfg.ling_dim,
        "spk_dim": cfg.spk_dim,
        "conditioning": conditioning_label(cfg.conditioning),
        "factor_layer": len(specs) - 3,
        "factor_dim": cfg.pnorm_out,
        "n_outputs": cfg.n_emotions,
        "padding": "edge",
        "seed": seed,
        **_context_metadata(offsets),
    }
    return Network.build(specs, seed, metadata)
