import wave

import numpy as np
import pytest

from sonolab.dsp import AudioClip, load_wav, mel_filterbank, mel_spectrogram, stft
from sonolab.reconstruct import (griffin_lim, mel_to_audio, mel_to_linear, spectral_distance, spectral_snr_db,
                                 write_wav)


def test_spectral_distance_is_two_sided_frobenius(rng):
    a = rng.random((5, 3))
    b = rng.random((5, 3))
    d = a - b
    full = np.concatenate([d, d[1:-1][::-1]])  # bins 0..4 then mirror 3..1 for frame_len 8
    assert spectral_distance(a, b, 8) == pytest.approx(np.linalg.norm(full))


@pytest.mark.parametrize("seed", range(10))
def test_distance_non_increasing_on_random_magnitudes(seed):
    mag = np.random.default_rng(seed).random((257, 40)) * 3
    _, dist = griffin_lim(mag, 512, 128, iters=60, return_distances=True)
    assert len(dist) == 61
    assert all(b <= a for a, b in zip(dist, dist[1:]))


@pytest.mark.parametrize("momentum", [0.0, 0.99])
def test_self_consistent_magnitudes_reach_20db(momentum):
    sr = 22050
    t = np.arange(sr) / sr
    rng = np.random.default_rng(0)
    chirp = 0.5 * np.sin(2 * np.pi * (200 * t + 1500 * t * t)) * (0.6 + 0.4 * np.sin(2 * np.pi * 3 * t))
    noise = 0.3 * rng.standard_normal(sr) * np.exp(-5 * t)
    for x in (chirp, noise):
        mag = np.abs(stft(AudioClip(x, sr)).bins)
        clip = griffin_lim(mag, iters=60, momentum=momentum)
        if momentum:
            assert spectral_snr_db(mag, clip) >= 20.0
        else:
            # plain Griffin-Lim is slower but must improve on the zero-phase start
            start = griffin_lim(mag, iters=0)
            assert spectral_snr_db(mag, clip) > spectral_snr_db(mag, start)


def test_zero_magnitude_gives_silence():
    clip = griffin_lim(np.zeros((513, 10)), iters=5)
    assert clip.samples.size == 1024 + 256 * 9
    np.testing.assert_array_equal(clip.samples, 0.0)


def test_output_peak_and_framing_errors(rng):
    clip = griffin_lim(100 * rng.random((513, 12)), iters=3)
    assert np.abs(clip.samples).max() <= 0.99 + 1e-12
    with pytest.raises(ValueError):
        griffin_lim(rng.random((100, 5)))
    with pytest.raises(ValueError):
        griffin_lim(rng.random((513, 5)), hop=800)
    with pytest.raises(ValueError):
        griffin_lim(-rng.random((513, 5)))


class TestMelInversion:
    fb = mel_filterbank(22050, 1024, 40, 0, 11025)

    def test_broadband_recovery(self):
        # smooth broadband magnitude, forward-projected through the filterbank
        f = np.fft.rfftfreq(1024, 1 / 22050)[:, None]
        S = (1.0 / (1.0 + f / 800.0)) * np.array([[1.0, 0.5, 2.0, 1.3]])
        mel = np.log(np.maximum(self.fb @ S ** 2, 1e-10))
        mag = mel_to_linear(mel, self.fb)
        covered = self.fb.sum(axis=0) > 0
        err = np.linalg.norm(mag[covered] - S[covered]) / np.linalg.norm(S[covered])
        assert err <= 0.2

    def test_zero_power(self):
        mel = np.full((40, 4), np.log(1e-10))
        np.testing.assert_array_equal(mel_to_linear(mel, self.fb), 0.0)

    def test_residual_monotone(self, rng):
        mel = np.log(rng.random((40, 6)) + 0.1)
        mag, res = mel_to_linear(mel, self.fb, iters=50, return_residuals=True)
        assert np.all(mag >= 0) and len(res) == 51
        assert all(b <= a * (1 + 1e-12) for a, b in zip(res, res[1:]))

    def test_band_mismatch(self):
        with pytest.raises(ValueError):
            mel_to_linear(np.zeros((30, 2)), self.fb)

    def test_mel_to_audio_shape(self, rng):
        mel = np.log(rng.random((40, 8)) + 1e-3)
        clip = mel_to_audio(mel, self.fb, gl_iters=5, mel_iters=5)
        assert clip.samples.size == 1024 + 256 * 7


class TestWriteWav:
    def test_round_trip(self, tmp_path, rng):
        x = rng.uniform(-1, 1, 1000)
        write_wav(AudioClip(x, 16000), tmp_path / "a.wav")
        back = load_wav(tmp_path / "a.wav")
        assert np.abs(back.samples - x).max() <= 1 / 32768
        with wave.open(str(tmp_path / "a.wav")) as wf:
            assert (wf.getnframes(), wf.getframerate(), wf.getnchannels(), wf.getsampwidth()) == (1000, 16000, 1, 2)

    def test_clipping_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_wav(AudioClip(np.array([0.5, 1.5]), 22050), tmp_path / "b.wav")
