"""Waveform reconstruction from log-mel spectrograms (vocoder stand-in)."""
from __future__ import annotations

import wave

import numpy as np

from .dsp import AudioClip, ComplexSpectrogram, MelSpectrogram, istft, stft


def mel_to_linear(mel, filterbank, iters: int = 50, return_residuals: bool = False):
    """Non-negative least-squares inversion of a mel filterbank.

    The log-mel grid is exponentiated (entries at the log floor count as
    zero power) and the linear power spectrum is fitted with multiplicative
    updates started from ``filterbank.T @ mel_power``. Returns magnitudes
    ``sqrt(power)`` with shape ``(n_bins, frames)``.
    """
    values = np.asarray(getattr(mel, "values", mel), dtype=np.float64)
    floor = getattr(mel, "floor", 1e-10)
    fb = np.asarray(filterbank, dtype=np.float64)
    if fb.shape[0] != values.shape[0]:
        raise ValueError(f"filterbank has {fb.shape[0]} filters, mel has {values.shape[0]} bands")
    target = np.where(values <= np.log(floor) + 1e-9, 0.0, np.exp(values))
    power = fb.T @ target
    gram = fb.T @ fb
    numer = fb.T @ target
    residuals = [float(np.linalg.norm(fb @ power - target))]
    tiny = np.finfo(float).tiny
    for _ in range(iters):
        power = power * numer / np.maximum(gram @ power, tiny)
        if return_residuals:
            residuals.append(float(np.linalg.norm(fb @ power - target)))
    mag = np.sqrt(np.maximum(power, 0.0))
    return (mag, residuals) if return_residuals else mag


def _bin_weights(n_bins, frame_len):
    w = np.full(n_bins, 2.0)
    w[0] = 1.0
    if frame_len % 2 == 0:
        w[-1] = 1.0
    return w[:, None]


def spectral_distance(a, b, frame_len):
    """Frobenius distance over the full two-sided spectrum of one-sided grids."""
    d = np.abs(a) - np.abs(b) if np.iscomplexobj(a) or np.iscomplexobj(b) else a - b
    return float(np.sqrt((_bin_weights(d.shape[0], frame_len) * d * d).sum()))


def griffin_lim(mag, frame_len: int = 1024, hop: int = 256, iters: int = 60, seed: int = 0,
                sample_rate: int = 22050, window: str = "hann", init: str = "zero",
                momentum: float = 0.99, env_floor: float = 0.1, return_distances: bool = False):
    """Phase retrieval from a magnitude spectrogram.

    Each iteration projects onto the target magnitude and back onto the set
    of consistent spectrograms (least-squares ISTFT then STFT). With
    ``momentum > 0`` the projection is applied to an extrapolated point, as
    in fast Griffin-Lim; an extrapolated step is kept only if it does not
    increase the spectral distance, otherwise the plain step is taken and
    the momentum restarts. ``distances[i]`` (two-sided spectral distance of
    iterate ``i``) is therefore non-increasing for any momentum.

    The returned clip is scaled down to peak 0.99 if it exceeds that.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[0] != frame_len // 2 + 1:
        raise ValueError(f"magnitude must have {frame_len // 2 + 1} bins")
    if np.any(mag < 0) or not np.all(np.isfinite(mag)):
        raise ValueError("magnitude must be finite and non-negative")
    if hop > frame_len // 2:
        raise ValueError("Griffin-Lim needs at least 50% frame overlap")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    if init == "zero":
        phase = np.ones_like(mag, dtype=np.complex128)
    elif init == "random":
        rng = np.random.default_rng(seed)
        phase = np.exp(2j * np.pi * rng.random(mag.shape))
    else:
        raise ValueError(f"unknown init {init!r}")
    length = frame_len + hop * (mag.shape[1] - 1)

    def project(spec):
        absx = np.abs(spec)
        unit = np.where(absx > 0, spec / np.where(absx > 0, absx, 1.0), 1.0)
        x = istft(ComplexSpectrogram(mag * unit, frame_len, hop, window, sample_rate), length, env_floor)
        X = stft(AudioClip(x, sample_rate), frame_len, hop, window).bins
        return x, X, spectral_distance(np.abs(X), mag, frame_len)

    x, X, d = project(mag * phase)
    prev = X
    distances = [d]
    for _ in range(iters):
        if momentum > 0.0:
            x_new, X_new, d_new = project(X + momentum * (X - prev))
            if d_new > d:
                x_new, X_new, d_new = project(X)
                X = X_new  # restart: no extrapolation on the next step
        else:
            x_new, X_new, d_new = project(X)
        prev, X, x, d = X, X_new, x_new, d_new
        distances.append(d)
    peak = np.abs(x).max()
    if peak > 0.99:
        x = x * (0.99 / peak)
    clip = _clip_from(x, sample_rate)
    return (clip, distances) if return_distances else clip


def _clip_from(x, sample_rate):
    if x.size == 0:
        raise ValueError("empty reconstruction")
    return AudioClip(x, sample_rate, "")


def spectral_snr_db(mag, clip: AudioClip, frame_len=1024, hop=256, window="hann"):
    """``10 log10(||mag||^2 / ||mag - |STFT(clip)|||^2)`` over the two-sided spectrum."""
    X = stft(clip, frame_len, hop, window).bins
    frames = min(X.shape[1], mag.shape[1])
    num = spectral_distance(mag[:, :frames], np.zeros_like(mag[:, :frames]), frame_len)
    den = spectral_distance(np.abs(X[:, :frames]), mag[:, :frames], frame_len)
    return float(20.0 * np.log10(num / max(den, 1e-300)))


def write_wav(clip: AudioClip, path) -> None:
    """Write 16-bit PCM mono; samples outside [-1, 1] are rejected."""
    x = clip.samples
    if np.any(np.abs(x) > 1.0):
        raise ValueError("samples exceed [-1, 1]; normalize before writing")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


def mel_to_audio(mel: MelSpectrogram, filterbank, frame_len=1024, hop=256, sample_rate=22050,
                 gl_iters=60, mel_iters=50):
    """Log-mel grid to waveform: filterbank inversion followed by Griffin-Lim."""
    mag = mel_to_linear(mel, filterbank, mel_iters)
    return griffin_lim(mag, frame_len, hop, gl_iters, sample_rate=sample_rate)
