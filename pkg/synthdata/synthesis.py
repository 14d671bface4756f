"""
Source-filter synthesis of one utterance from its latent factors.

    excitation (speaker F0, emotion F0 shift and vibrato)
      -> two parallel formant resonators per phone (scaled by the speaker)
      -> speaker spectral tilt
      -> emotion/speaker energy envelope
      -> additive noise

Emotion changes the signal least of the three factors.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal

from core.seeds import derive_seed

OUTPUT_SCALE = 6.0
ASPIRATION_LEVEL = 0.02
FRICATION_LEVEL = 0.3
SECOND_FORMANT_GAIN = 0.6
UNVOICED_EVERY = 5


@dataclass(frozen=True)
class SpeakerProfile:
    f0: float
    formant_scale: float
    tilt: float
    gain: float


@dataclass(frozen=True)
class PhoneProfile:
    formants: tuple
    bandwidths: tuple
    voiced: bool


@dataclass(frozen=True)
class EmotionProfile:
    gain: float
    f0_shift: float
    f0_depth: float
    f0_rate: float
    slope: float


def _spread(rng, low, high, count):
    """`count` values evenly covering [low, high], in seeded random order."""
    if count == 1:
        return np.array([(low + high) / 2.0])
    return rng.permutation(np.linspace(low, high, count))


def speaker_profiles(spec):
    rng = np.random.default_rng(derive_seed(spec.seed, "speakers"))
    count = spec.total_speakers
    f0 = _spread(rng, 90.0, 250.0, count)
    scale = _spread(rng, 0.85, 1.15, count)
    tilt = _spread(rng, 0.3, 0.85, count)
    gain = _spread(rng, 0.75, 1.25, count)
    return [SpeakerProfile(*values) for values in zip(f0, scale, tilt, gain)]


def phone_profiles(spec):
    rng = np.random.default_rng(derive_seed(spec.seed, "phones"))
    f1 = _spread(rng, 280.0, 850.0, spec.n_phones)
    f2 = _spread(rng, 950.0, 2700.0, spec.n_phones)
    bandwidths = rng.uniform([50.0, 80.0], [90.0, 140.0], size=(spec.n_phones, 2))
    return [
        PhoneProfile((float(f1[p]), float(f2[p])), tuple(bandwidths[p]),
                     voiced=(p % UNVOICED_EVERY != UNVOICED_EVERY - 1))
        for p in range(spec.n_phones)
    ]


def emotion_profiles(spec):
    rng = np.random.default_rng(derive_seed(spec.seed, "emotions"))
    n = spec.n_emotions
    return [
        EmotionProfile(*values)
        for values in zip(
            _spread(rng, 0.9, 1.1, n),
            _spread(rng, 0.95, 1.06, n),
            _spread(rng, 0.0, 0.08, n),
            _spread(rng, 2.0, 6.0, n),
            _spread(rng, -0.3, 0.3, n),
        )
    ]


def excitation(n_samples, sample_rate, speaker, emotion, rng):
    """Impulse train following the modulated F0 contour, plus aspiration noise."""
    t = np.arange(n_samples) / sample_rate
    vibrato = 1.0 + emotion.f0_depth * np.sin(2.0 * np.pi * emotion.f0_rate * t + rng.uniform(0, 2 * np.pi))
    f0 = speaker.f0 * emotion.f0_shift * vibrato
    cycles = np.floor(np.cumsum(f0 / sample_rate) + rng.uniform())
    pulses = np.diff(cycles, prepend=cycles[0] - 1.0)
    return pulses + rng.normal(scale=ASPIRATION_LEVEL, size=n_samples)


def synthesize(segments, speaker, emotion, phones, frame_config, noise_db, rng):
    """
    Render a phone sequence.

    Args:
        segments (list[tuple[int, int, int]]): (phone_id, start_frame, end_frame),
            tiling [0, n_frames).
        phones (list[PhoneProfile]): Indexed by phone id.
        frame_config (FrameConfig): Sets the frame-to-sample mapping.

    Returns:
        np.ndarray: Float samples in [-1, 1).
    """
    n_frames = segments[-1][2]
    n_samples = frame_config.n_samples(n_frames)
    rate = frame_config.sample_rate_hz
    shift = frame_config.frame_shift_samples
    voiced_source = excitation(n_samples, rate, speaker, emotion, rng)
    noise_source = rng.normal(scale=FRICATION_LEVEL, size=n_samples)

    out = np.zeros(n_samples)
    states = [np.zeros(2), np.zeros(2)]
    for index, (phone_id, start, end) in enumerate(segments):
        a = start * shift
        b = n_samples if index == len(segments) - 1 else end * shift
        profile = phones[phone_id]
        source = voiced_source[a:b] if profile.voiced else noise_source[a:b]
        for k, (formant, bandwidth) in enumerate(zip(profile.formants, profile.bandwidths)):
            centre = formant * speaker.formant_scale
            num, den = signal.iirpeak(centre, Q=centre / bandwidth, fs=rate)
            filtered, states[k] = signal.lfilter(num, den, source, zi=states[k])
            out[a:b] += (1.0 if k == 0 else SECOND_FORMANT_GAIN) * filtered

    out = signal.lfilter([1.0 - speaker.tilt], [1.0, -speaker.tilt], out)
    position = np.linspace(-0.5, 0.5, n_samples)
    out *= speaker.gain * emotion.gain * (1.0 + emotion.slope * position)
    rms = np.sqrt(np.mean(out**2))
    out += rng.normal(scale=rms * 10.0 ** (noise_db / 20.0), size=n_samples)
    return np.clip(out * OUTPUT_SCALE, -1.0, 32767.0 / 32768.0)


def draw_segments(spec, rng):
    """Random phone sequence with random durations, as frame segments."""
    n_phones = rng.integers(spec.phones_per_utterance[0], spec.phones_per_utterance[1] + 1)
    segments = []
    start = 0
    for _ in range(n_phones):
        phone = int(rng.integers(spec.n_phones))
        duration = int(rng.integers(spec.phone_duration_frames[0], spec.phone_duration_frames[1] + 1))
        segments.append((phone, start, start + duration))
        start += duration
    return segments
