import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.io import wavfile

from core.exceptions import (
    ArchiveFormatError,
    AudioFormatError,
    ConfigError,
    ConfigMismatchError,
    DimensionError,
    FilterbankDegenerateError,
    IterationError,
    SignalTooShortError,
    ZeroVectorError,
)
from dsp.archives import FeatureArchive, decode_record, encode_record
from dsp.containers import FrameConfig, Spectrogram, Waveform
from dsp.frontend import (
    fbank,
    frame_signal,
    length_normalize,
    log_power_spectrogram,
    mel_center_frequencies,
    mel_filterbank_matrix,
    stft,
)
from dsp.serializers import FrameConfigSerializer
from dsp.vocoder import griffin_lim, griffin_lim_with_history
from dsp.wavio import read_wav, write_wav

DEFAULT = FrameConfig()


def naive_dft(frame, n_fft):
    padded = np.zeros(n_fft)
    padded[: frame.shape[0]] = frame
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    return (padded[None, :] * np.exp(-2j * np.pi * k * n / n_fft)).sum(axis=1)


def white_noise(seconds=1.0, seed=0, rate=8000):
    rng = np.random.default_rng(seed)
    return Waveform(rng.uniform(-0.5, 0.5, int(seconds * rate)), rate)


class StftTests(SimpleTestCase):

    def test_constant_signal_puts_all_energy_in_dc(self):
        config = FrameConfig(frame_length_samples=8, frame_shift_samples=8, fft_size=8,
                             n_mels=2, window="rectangular")
        spectrum = stft(Waveform(np.ones(8), 8000), config)
        self.assertEqual(spectrum.shape, (1, 5))
        self.assertAlmostEqual(abs(spectrum[0, 0]), 8.0, places=12)
        np.testing.assert_allclose(np.abs(spectrum[0, 1:]), 0.0, atol=1e-12)

    def test_bin_centered_sine_matches_naive_dft(self):
        config = FrameConfig(frame_length_samples=256, frame_shift_samples=128,
                             fft_size=256, window="rectangular")
        t = np.arange(256)
        samples = np.sin(2 * np.pi * 3 * t / 256)
        spectrum = stft(Waveform(samples, 8000), config)
        self.assertEqual(int(np.argmax(np.abs(spectrum[0]))), 3)
        oracle = naive_dft(samples, 256)
        self.assertLess(np.max(np.abs(spectrum[0] - oracle)), 1e-9)

    def test_windowed_frames_match_naive_dft(self):
        waveform = white_noise(0.1, seed=3)
        frames = frame_signal(waveform, DEFAULT)
        spectrum = stft(waveform, DEFAULT)
        for t in (0, 3, frames.shape[0] - 1):
            oracle = naive_dft(frames[t], DEFAULT.fft_size)
            self.assertLess(np.max(np.abs(spectrum[t] - oracle)), 1e-9)

    def test_parseval_per_frame(self):
        waveform = white_noise(1.0, seed=1)
        frames = frame_signal(waveform, DEFAULT)
        spectrum = stft(waveform, DEFAULT)
        power = np.abs(spectrum) ** 2
        spectral = (power[:, 0] + 2 * power[:, 1:-1].sum(axis=1) + power[:, -1]) / DEFAULT.fft_size
        temporal = (frames**2).sum(axis=1)
        np.testing.assert_allclose(spectral, temporal, rtol=1e-9)

    def test_frame_count_follows_framing_formula(self):
        rng = np.random.default_rng(7)
        for n_samples in rng.integers(DEFAULT.frame_length_samples, 5000, size=25):
            waveform = Waveform(rng.standard_normal(int(n_samples)), 8000)
            expected = (int(n_samples) - 200) // 80 + 1
            self.assertEqual(stft(waveform, DEFAULT).shape[0], expected)
            self.assertEqual(fbank(waveform, DEFAULT).n_frames, expected)

    def test_short_signal_rejected(self):
        with self.assertRaises(SignalTooShortError):
            stft(Waveform(np.zeros(199), 8000), DEFAULT)

    def test_sample_rate_mismatch_rejected(self):
        with self.assertRaises(ConfigMismatchError):
            stft(Waveform(np.zeros(400), 16000), DEFAULT)


class LogPowerTests(SimpleTestCase):

    def test_silence_hits_floor(self):
        spec = log_power_spectrogram(Waveform(np.zeros(800), 8000), DEFAULT)
        self.assertTrue(np.all(spec.frames == np.log(DEFAULT.log_floor)))

    def test_scaling_shifts_log_power(self):
        waveform = white_noise(0.5, seed=2)
        base = log_power_spectrogram(waveform, DEFAULT).frames
        for factor in (2.0, 0.3):
            scaled = log_power_spectrogram(waveform.scaled(factor), DEFAULT).frames
            floor = np.log(DEFAULT.log_floor)
            mask = (base > floor + 1.0) & (scaled > floor + 1.0)
            np.testing.assert_allclose(scaled[mask] - base[mask], 2 * np.log(factor), atol=1e-9)

    def test_entries_never_below_floor(self):
        spec = log_power_spectrogram(white_noise(0.3, seed=4).scaled(1e-8), DEFAULT)
        self.assertTrue(np.all(spec.frames >= np.log(DEFAULT.log_floor)))


class FilterbankTests(SimpleTestCase):

    def test_construction(self):
        weights = mel_filterbank_matrix(DEFAULT)
        self.assertEqual(weights.shape, (40, 129))
        self.assertTrue(np.all(weights >= 0.0))
        self.assertTrue(np.all(weights.sum(axis=1) > 0.0))

    def test_interior_overlap_sums_to_one(self):
        weights = mel_filterbank_matrix(DEFAULT)
        centers = mel_center_frequencies(DEFAULT)
        freqs = np.arange(DEFAULT.n_bins) * DEFAULT.sample_rate_hz / DEFAULT.fft_size
        interior = (freqs >= centers[0]) & (freqs <= centers[-1])
        self.assertTrue(interior.any())
        totals = np.array([sum(weights[m, k] for m in range(weights.shape[0]))
                           for k in np.flatnonzero(interior)])
        np.testing.assert_allclose(totals, 1.0, atol=1e-9)

    def test_centers_strictly_increasing(self):
        self.assertTrue(np.all(np.diff(mel_center_frequencies(DEFAULT)) > 0))

    def test_cached_matches_recomputed(self):
        cached = np.array(mel_filterbank_matrix(DEFAULT))
        mel_filterbank_matrix.cache_clear()
        self.assertTrue(np.array_equal(cached, mel_filterbank_matrix(DEFAULT)))

    def test_degenerate_filterbank_rejected(self):
        with self.assertRaises(FilterbankDegenerateError):
            mel_filterbank_matrix(FrameConfig(n_mels=120))


class FbankTests(SimpleTestCase):

    def test_silence_hits_floor(self):
        feats = fbank(Waveform(np.zeros(1000), 8000), DEFAULT)
        self.assertTrue(np.all(feats.frames == np.log(DEFAULT.log_floor)))

    def test_deterministic(self):
        waveform = white_noise(0.4, seed=5)
        first = fbank(waveform, DEFAULT).frames
        second = fbank(waveform, DEFAULT).frames
        self.assertTrue(np.array_equal(first, second))

    def test_white_noise_is_finite_and_above_floor(self):
        feats = fbank(white_noise(0.2, seed=6), DEFAULT).frames
        self.assertEqual(feats.shape[1], 40)
        self.assertTrue(np.all(np.isfinite(feats)))
        self.assertTrue(np.all(feats > np.log(DEFAULT.log_floor)))

    def test_rows_match_spectrogram_rows(self):
        waveform = white_noise(0.37, seed=8)
        self.assertEqual(fbank(waveform, DEFAULT).n_frames,
                         log_power_spectrogram(waveform, DEFAULT).n_frames)


class LengthNormalizeTests(SimpleTestCase):

    def test_three_four_five(self):
        np.testing.assert_allclose(length_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)

    def test_unit_vector_is_fixed_point(self):
        v = np.array([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(length_normalize(v), v)

    def test_zero_vector_rejected(self):
        with self.assertRaisesMessage(ZeroVectorError, "cannot normalize zero vector"):
            length_normalize(np.zeros(3))

    def test_scale_invariance(self):
        rng = np.random.default_rng(9)
        v = rng.standard_normal(40)
        unit = length_normalize(v)
        self.assertAlmostEqual(np.linalg.norm(unit), 1.0, delta=1e-12)
        for c in (1e-3, 0.5, 7.0, 1e4):
            np.testing.assert_allclose(length_normalize(c * v), unit, atol=1e-12)


class GriffinLimTests(SimpleTestCase):

    def setUp(self):
        n_samples = DEFAULT.n_samples(60)
        t = np.arange(n_samples) / 8000.0
        self.sine = Waveform(0.5 * np.sin(2 * np.pi * 1000.0 * t), 8000)
        self.spec = log_power_spectrogram(self.sine, DEFAULT)

    def test_sine_keeps_dominant_bin(self):
        rebuilt = griffin_lim(self.spec, 100, seed=0)
        self.assertEqual(len(rebuilt), len(self.sine))
        original_bin = np.argmax(np.abs(np.fft.rfft(self.sine.samples)))
        rebuilt_bin = np.argmax(np.abs(np.fft.rfft(rebuilt.samples)))
        self.assertEqual(original_bin, rebuilt_bin)

    def test_convergence_error_non_increasing(self):
        _, history = griffin_lim_with_history(self.spec, 50, seed=1)
        self.assertEqual(len(history), 50)
        self.assertLessEqual(history[-1], history[0])
        for before, after in zip(history, history[1:]):
            self.assertLessEqual(after, before + 1e-6)

    def test_deterministic_given_seed(self):
        first = griffin_lim(self.spec, 10, seed=3)
        second = griffin_lim(self.spec, 10, seed=3)
        self.assertTrue(np.array_equal(first.samples, second.samples))

    def test_zero_iterations_rejected(self):
        with self.assertRaises(IterationError):
            griffin_lim(Spectrogram(self.spec.frames, DEFAULT), 0, seed=0)

    def test_spectrum_width_must_match_the_config(self):
        with self.assertRaisesMessage(DimensionError, "129 bins"):
            griffin_lim(Spectrogram(self.spec.frames[:, :-1], DEFAULT), 5, seed=0)
        narrow = FrameConfig(frame_length_samples=128, frame_shift_samples=64, fft_size=128)
        with self.assertRaises(DimensionError):
            griffin_lim(Spectrogram(self.spec.frames, narrow), 5, seed=0)


class WavIoTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_write_then_read(self):
        samples = np.array([0.0, 0.5, -0.5, 0.25])
        path = self.root / "a.wav"
        write_wav(path, Waveform(samples, 8000))
        waveform = read_wav(path)
        self.assertEqual(waveform.sample_rate, 8000)
        np.testing.assert_allclose(waveform.samples, samples, atol=1 / 32768)

    def test_stereo_rejected(self):
        path = self.root / "stereo.wav"
        wavfile.write(str(path), 8000, np.zeros((10, 2), dtype=np.int16))
        with self.assertRaises(AudioFormatError):
            read_wav(path)

    def test_other_rate_rejected(self):
        path = self.root / "fast.wav"
        wavfile.write(str(path), 16000, np.zeros(10, dtype=np.int16))
        with self.assertRaises(AudioFormatError):
            read_wav(path)

    def test_float_wav_rejected(self):
        path = self.root / "float.wav"
        wavfile.write(str(path), 8000, np.zeros(10, dtype=np.float32))
        with self.assertRaises(AudioFormatError):
            read_wav(path)


class ArchiveTests(SimpleTestCase):

    def test_record_header_and_payload(self):
        matrix = np.arange(6, dtype=np.float64).reshape(3, 2)
        blob = encode_record(matrix)
        self.assertEqual(blob[:4], b"CDFF")
        self.assertEqual(len(blob), 12 + 4 * 6)
        np.testing.assert_array_equal(decode_record(blob), matrix)

    def test_bad_magic_rejected(self):
        blob = bytearray(encode_record(np.zeros((1, 1))))
        blob[:4] = b"XXXX"
        with self.assertRaises(ArchiveFormatError):
            decode_record(bytes(blob))

    def test_archive_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            archive = FeatureArchive(tmp, "fbank")
            archive.write("b", np.ones((2, 3)))
            archive.write("a", np.zeros((1, 3)))
            self.assertEqual(archive.utt_ids(), ["a", "b"])
            self.assertEqual(archive.read("b").shape, (2, 3))


class FrameConfigSerializerTests(SimpleTestCase):

    def test_defaults(self):
        serializer = FrameConfigSerializer(data={})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save(), FrameConfig())

    def test_shift_longer_than_frame_rejected(self):
        serializer = FrameConfigSerializer(data={"frame_shift_samples": 300})
        self.assertFalse(serializer.is_valid())
        self.assertIn("frame_shift_samples", serializer.errors)

    def test_fft_size_must_be_power_of_two(self):
        serializer = FrameConfigSerializer(data={"fft_size": 300})
        self.assertFalse(serializer.is_valid())
        self.assertIn("fft_size", serializer.errors)


class FrameConfigTests(SimpleTestCase):

    def test_shift_longer_than_frame_rejected(self):
        with self.assertRaisesMessage(ConfigError, "exceeds frame length"):
            FrameConfig(frame_shift_samples=201)

    def test_fft_shorter_than_frame_rejected(self):
        with self.assertRaisesMessage(ConfigError, "fft_size 128"):
            FrameConfig(fft_size=128)

    def test_fft_size_must_be_power_of_two(self):
        with self.assertRaises(ConfigError):
            FrameConfig(fft_size=300)

    def test_bins_follow_fft_size(self):
        self.assertEqual(FrameConfig().n_bins, 129)
        self.assertEqual(FrameConfig(fft_size=512).n_bins, 257)
