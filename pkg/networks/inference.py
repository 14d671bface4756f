"""
Whole-utterance inference for the phone, CT-DNN and AER networks.
"""

import numpy as np

from core.exceptions import ConfigError, DimensionError, ModelKindError, UtteranceTooShortError
from dsp.frontend import length_normalize

from .configs import MODEL_AER, MODEL_CTDNN, MODEL_PHONE


def require_kind(network, kind):
    if network.kind != kind:
        raise ModelKindError(
            f"model kind error: expected a '{kind}' checkpoint, got '{network.kind or 'unknown'}'"
        )


def meta_int(network, key):
    return int(network.metadata[key])


def _frames(data):
    frames = getattr(data, "frames", data)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise DimensionError(f"dimension error: expected [T x d] frames, got {frames.shape}")
    return frames


def _edge_padded(network, frames):
    left, right = meta_int(network, "left"), meta_int(network, "right")
    if frames.shape[0] == 0:
        raise UtteranceTooShortError("utterance too short: no frames")
    return np.pad(frames, ((left, right), (0, 0)), mode="edge")


def phone_posteriors(network, fbank):
    """
    Per-frame phone posteriors, the linguistic factor q.

    Args:
        network (Network): A "phone" checkpoint.
        fbank (FbankSequence | np.ndarray): [T x fbank_dim] frames.

    Returns:
        np.ndarray: [T x n_phones], rows summing to one.
    """
    require_kind(network, MODEL_PHONE)
    frames = _frames(fbank)
    if frames.shape[1] != meta_int(network, "input_dim"):
        raise DimensionError(
            f"dimension error: fbank width {frames.shape[1]} != {network.metadata['input_dim']}"
        )
    return network.forward(_edge_padded(network, frames)[None])[0]


def speaker_features(network, frames):
    """
    Length-normalized feature-layer activations of a CT-DNN.

    Args:
        network (Network): A "ctdnn" checkpoint.
        frames (np.ndarray): [T x input_dim_per_frame], i.e. fbank or [fbank; q].

    Returns:
        np.ndarray: [T - context + 1, feature_dim], unit-norm rows. Row j
        summarizes input frames j .. j + context - 1.

    Raises:
        UtteranceTooShortError: Fewer than `context` frames.
    """
    require_kind(network, MODEL_CTDNN)
    frames = _frames(frames)
    if frames.shape[1] != meta_int(network, "input_dim"):
        raise DimensionError(
            f"dimension error: input width {frames.shape[1]} != {network.metadata['input_dim']}"
        )
    context = meta_int(network, "context")
    if frames.shape[0] < context:
        raise UtteranceTooShortError(
            f"utterance too short: {frames.shape[0]} frames, the network needs {context}"
        )
    layer = meta_int(network, "feature_layer")
    _, taps = network.forward_with_taps(frames[None, None], [layer])
    return length_normalize(taps[layer][0])


def emotion_outputs(network, frames):
    """
    Emotion posteriors and the emotion factor e.

    Args:
        network (Network): An "aer" checkpoint.
        frames (np.ndarray): [T x (fbank_dim + ling_dim + spk_dim)].

    Returns:
        tuple: (posteriors [T x n_emotions], emotion_factor [T x pnorm_out])

    Raises:
        ConfigError: Input width does not match the configured conditioning.
    """
    require_kind(network, MODEL_AER)
    frames = _frames(frames)
    if frames.shape[1] != meta_int(network, "input_dim"):
        raise ConfigError(
            f"config error: input width {frames.shape[1]} does not match conditioning "
            f"'{network.metadata.get('conditioning')}' (expected {network.metadata['input_dim']})"
        )
    layer = meta_int(network, "factor_layer")
    posteriors, taps = network.forward_with_taps(_edge_padded(network, frames)[None], [layer])
    return posteriors[0], taps[layer][0]
