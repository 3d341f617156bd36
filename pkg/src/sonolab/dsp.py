"""Audio ingestion, short-time analysis and per-clip acoustic descriptors."""
from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

FEATURE_SCHEMA_VERSION = 1
DEFAULT_SAMPLE_RATE = 22050


class WavError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("clip must be a non-empty 1-D signal")
        if not np.all(np.isfinite(samples)):
            raise ValueError("clip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ComplexSpectrogram:
    bins: np.ndarray  # (n_fft // 2 + 1, frames)
    frame_len: int
    hop: int
    window: str
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def power(self) -> np.ndarray:
        return self.bins.real ** 2 + self.bins.imag ** 2

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.bins.shape[0]) * self.sample_rate / self.frame_len


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (n_mels, frames), natural-log power
    fmin: float
    fmax: float
    floor: float = 1e-10

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_len: int = 1024
    hop: int = 256
    n_mels: int = 40
    n_mfcc: int = 13
    fmin: float = 0.0
    fmax: float | None = None
    floor: float = 1e-10

    @property
    def dim(self) -> int:
        return 2 * (self.n_mels + self.n_mfcc + 5)

    def band_edges(self):
        return self.fmin, self.sample_rate / 2 if self.fmax is None else self.fmax


def load_wav(path, clip_id=None) -> AudioClip:
    """Read a 16-bit PCM RIFF/WAVE file, averaging stereo to mono."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise WavError(f"{path}: unsupported compression ({msg})") from None
        raise WavError(f"{path}: malformed header ({msg})") from None
    if width != 2:
        raise WavError(f"{path}: unsupported bit depth {8 * width}")
    if n_channels not in (1, 2):
        raise WavError(f"{path}: unsupported channel count {n_channels}")
    pcm = np.frombuffer(raw, dtype="<i2")
    usable = pcm.size - pcm.size % n_channels
    if usable == 0:
        raise WavError(f"{path}: empty payload")
    frames = pcm[:usable].astype(np.float64).reshape(-1, n_channels)
    samples = frames.mean(axis=1) / 32768.0
    return AudioClip(samples, rate, str(path) if clip_id is None else clip_id)


def resample_linear(clip: AudioClip, sample_rate: int) -> AudioClip:
    """Linear-interpolation resampling; used only when explicitly requested."""
    if clip.sample_rate == sample_rate:
        return clip
    n_out = max(1, int(round(clip.samples.size * sample_rate / clip.sample_rate)))
    t_out = np.arange(n_out) / sample_rate
    t_in = np.arange(clip.samples.size) / clip.sample_rate
    return AudioClip(np.interp(t_out, t_in, clip.samples), sample_rate, clip.id)


def get_window(name: str, n: int) -> np.ndarray:
    if name == "hann":
        # periodic Hann: satisfies constant overlap-add at hop n/4 and n/2
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    if name in ("rect", "rectangular", "boxcar"):
        return np.ones(n)
    raise ValueError(f"unknown window {name!r}")


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Frames as rows; frame t covers ``[t*hop, t*hop + frame_len)``."""
    if x.size < frame_len:
        raise ValueError(f"clip shorter than one frame ({x.size} < {frame_len} samples)")
    n_frames = 1 + (x.size - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def _check_framing(frame_len, hop):
    if frame_len < 1 or frame_len & (frame_len - 1):
        raise ValueError("frame_len must be a power of two")
    if not 0 < hop <= frame_len:
        raise ValueError("hop must satisfy 0 < hop <= frame_len")


def stft(clip: AudioClip, frame_len: int = 1024, hop: int = 256, window: str = "hann") -> ComplexSpectrogram:
    _check_framing(frame_len, hop)
    frames = frame_signal(clip.samples, frame_len, hop) * get_window(window, frame_len)
    bins = np.fft.rfft(frames, axis=1).T
    return ComplexSpectrogram(bins, frame_len, hop, window, clip.sample_rate)


def istft(spec: ComplexSpectrogram, length: int | None = None, env_floor: float = 0.0) -> np.ndarray:
    """Least-squares overlap-add inverse of :func:`stft`.

    Samples not covered by any nonzero window value are returned as 0.
    ``env_floor > 0`` divides by ``max(envelope, env_floor * max(envelope))``
    instead, which damps the clip edges where the window envelope is tiny
    and an inconsistent spectrogram would otherwise blow up.
    """
    frame_len, hop = spec.frame_len, spec.hop
    win = get_window(spec.window, frame_len)
    frames = np.fft.irfft(spec.bins.T, n=frame_len, axis=1) * win
    n_frames = frames.shape[0]
    total = frame_len + hop * (n_frames - 1)
    out = np.zeros(total)
    env = np.zeros(total)
    w2 = win * win
    for t in range(n_frames):
        s = t * hop
        out[s:s + frame_len] += frames[t]
        env[s:s + frame_len] += w2
    if env_floor > 0:
        env = np.maximum(env, env_floor * env.max())
    nz = env > 1e-12
    out[nz] /= env[nz]
    out[~nz] = 0.0
    if length is not None:
        if length < total:
            out = out[:length]
        else:
            out = np.concatenate([out, np.zeros(length - total)])
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, frame_len: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape ``(n_mels, frame_len//2 + 1)``.

    Each triangle peaks at 1 on its center frequency. A filter that catches
    no FFT bin raises ``ValueError``.
    """
    if n_mels < 2:
        raise ValueError("n_mels must be at least 2")
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError("need 0 <= fmin < fmax <= sample_rate/2")
    freqs = np.arange(frame_len // 2 + 1) * sample_rate / frame_len
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.max(axis=1) <= 0.0)
    if empty.size:
        raise ValueError(
            f"degenerate band edges: mel filter {int(empty[0])} has zero support "
            f"({edges[empty[0]]:.1f}-{edges[empty[0] + 2]:.1f} Hz); use fewer mels or a longer frame"
        )
    return fb


def mel_spectrogram(spec: ComplexSpectrogram, n_mels: int = 40, fmin: float = 0.0,
                    fmax: float | None = None, floor: float = 1e-10) -> MelSpectrogram:
    fmax = spec.sample_rate / 2 if fmax is None else fmax
    fb = mel_filterbank(spec.sample_rate, spec.frame_len, n_mels, fmin, fmax)
    values = np.log(np.maximum(fb @ spec.power, floor))
    return MelSpectrogram(values, fmin, fmax, floor)


def frame_descriptors(clip: AudioClip, spec: ComplexSpectrogram, floor: float = 1e-10) -> dict:
    """Per-frame centroid, bandwidth, zero-crossing rate, RMS and flatness.

    Frames whose total power is below ``floor`` get centroid 0, bandwidth 0
    and flatness 1.
    """
    frames = frame_signal(clip.samples, spec.frame_len, spec.hop)
    if frames.shape[0] != spec.n_frames:
        raise ValueError("spectrogram framing does not match the clip")
    power = spec.power  # (bins, frames)
    freqs = spec.bin_frequencies()[:, None]
    total = power.sum(axis=0)
    silent = total < floor
    safe = np.where(silent, 1.0, total)
    centroid = (freqs * power).sum(axis=0) / safe
    spread = ((freqs - centroid[None, :]) ** 2 * power).sum(axis=0) / safe
    bandwidth = np.sqrt(np.maximum(spread, 0.0))
    geo = np.exp(np.mean(np.log(np.maximum(power, floor)), axis=0))
    flatness = np.clip(geo / (safe / power.shape[0]), 0.0, 1.0)
    centroid[silent] = 0.0
    bandwidth[silent] = 0.0
    flatness[silent] = 1.0
    crossings = np.count_nonzero(frames[:, 1:] * frames[:, :-1] < 0.0, axis=1)
    zcr = crossings / (spec.frame_len - 1)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    return {"centroid": centroid, "bandwidth": bandwidth, "zcr": zcr, "rms": rms, "flatness": flatness}


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II as an ``(n, n)`` matrix acting on column vectors."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


def mfcc(mel: MelSpectrogram, n_mfcc: int = 13) -> np.ndarray:
    """First ``n_mfcc`` orthonormal DCT-II coefficients per frame, ``(n_mfcc, frames)``."""
    if n_mfcc > mel.n_mels:
        raise ValueError("n_mfcc cannot exceed n_mels")
    return dct_matrix(mel.n_mels)[:n_mfcc] @ mel.values


_DESCRIPTOR_ORDER = ("centroid", "bandwidth", "zcr", "rms", "flatness")


def frame_feature_matrix(clip: AudioClip, config: FeatureConfig) -> np.ndarray:
    """Stacked per-frame features ``(n_mels + n_mfcc + 5, frames)``."""
    spec = stft(clip, config.frame_len, config.hop)
    fmin, fmax = config.band_edges()
    mel = mel_spectrogram(spec, config.n_mels, fmin, fmax, config.floor)
    desc = frame_descriptors(clip, spec, config.floor)
    return np.vstack([mel.values, mfcc(mel, config.n_mfcc)] + [desc[k][None, :] for k in _DESCRIPTOR_ORDER])


def clip_features(clip: AudioClip, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Mean and population std over frames of mel bands, MFCCs and descriptors."""
    per_frame = frame_feature_matrix(clip, config)
    return np.concatenate([per_frame.mean(axis=1), per_frame.std(axis=1)])


def feature_names(config: FeatureConfig) -> list[str]:
    base = [f"mel{i}" for i in range(config.n_mels)] + [f"mfcc{i}" for i in range(config.n_mfcc)]
    base += list(_DESCRIPTOR_ORDER)
    return [f"mean_{n}" for n in base] + [f"std_{n}" for n in base]


def log_mel(clip: AudioClip, config: FeatureConfig) -> MelSpectrogram:
    spec = stft(clip, config.frame_len, config.hop)
    fmin, fmax = config.band_edges()
    return mel_spectrogram(spec, config.n_mels, fmin, fmax, config.floor)
