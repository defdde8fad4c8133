"""Acoustic front end: framing, log-mel, MFCC, context stacking and binning."""

from __future__ import annotations

import wave
from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import dct

from .errors import ConfigError, ContractError, DataError, EmptyInputError

PREEMPH = 0.97
LOG_FLOOR = 1e-10
DEFAULT_SAMPLE_RATE = 8000


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError("audio must be single channel")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError("audio contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureMatrix:
    """T x D features plus the frame geometry (in ms) they were computed with."""

    values: np.ndarray
    frame_shift: float = 10.0
    frame_length: float = 25.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ContractError(f"feature matrix must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def with_values(self, values, **kw) -> "FeatureMatrix":
        return replace(self, values=values, **kw)


def samples_per(ms: float, sample_rate: int) -> int:
    return int(round(ms * sample_rate / 1000.0))


def num_frames(n_samples: int, win: int, hop: int) -> int:
    if n_samples < win:
        return 0
    return 1 + (n_samples - win) // hop


def frame_signal(signal: AudioSignal, frame_length: float = 25.0, frame_shift: float = 10.0) -> np.ndarray:
    """Pre-emphasize, slice into overlapping frames and apply a Hamming window.

    Returns a ``(T, win)`` array with ``T = 1 + (len - win) // hop``.
    """
    if not (frame_length >= frame_shift > 0):
        raise ConfigError("need frame_length >= frame_shift > 0")
    win = samples_per(frame_length, signal.sample_rate)
    hop = samples_per(frame_shift, signal.sample_rate)
    x = signal.samples
    if len(x) < win:
        raise EmptyInputError(f"signal of {len(x)} samples is shorter than one {win}-sample frame")
    emph = np.empty_like(x)
    emph[0] = x[0]
    emph[1:] = x[1:] - PREEMPH * x[:-1]
    n = num_frames(len(x), win, hop)
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return emph[idx] * np.hamming(win)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int, sample_rate: int) -> np.ndarray:
    """``n_mels + 2`` frequencies (Hz): lower edge, centers, upper edge."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters evaluated at the rfft bin frequencies, shape (n_mels, n_fft//2+1)."""
    edges = mel_band_edges(n_mels, sample_rate)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    frames = np.atleast_2d(frames)
    n_fft = next_pow2(frames.shape[1])
    return np.abs(np.fft.rfft(frames, n_fft, axis=1)) ** 2


def logmel(frames: np.ndarray, n_mels: int = 36, sample_rate: int = DEFAULT_SAMPLE_RATE,
           frame_length: float = 25.0, frame_shift: float = 10.0) -> FeatureMatrix:
    if n_mels < 1:
        raise ConfigError("n_mels must be >= 1")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] == 0:
        return FeatureMatrix(np.zeros((0, n_mels)), frame_shift, frame_length)
    pspec = power_spectrum(frames)
    fb = mel_filterbank(n_mels, next_pow2(frames.shape[1]), sample_rate)
    energies = pspec @ fb.T
    return FeatureMatrix(np.log(np.maximum(energies, LOG_FLOOR)), frame_shift, frame_length)


def mfcc(logmel_feats: FeatureMatrix, n_ceps: int = 20) -> FeatureMatrix:
    """Orthonormal DCT-II of each log-mel row, keeping the first ``n_ceps`` terms."""
    n_mels = logmel_feats.dim
    if n_ceps > n_mels:
        raise ConfigError(f"n_ceps={n_ceps} exceeds n_mels={n_mels}")
    if logmel_feats.num_frames == 0:
        return logmel_feats.with_values(np.zeros((0, n_ceps)))
    ceps = dct(logmel_feats.values, type=2, axis=1, norm="ortho")[:, :n_ceps]
    return logmel_feats.with_values(ceps)


def context_window(feats: FeatureMatrix, r: int) -> FeatureMatrix:
    """Stack each frame with ``r`` neighbours on both sides, replicating edge frames."""
    if r < 0:
        raise ConfigError("context r must be >= 0")
    x = feats.values
    if r == 0:
        return feats.with_values(x.copy())
    T = x.shape[0]
    if T == 0:
        return feats.with_values(np.zeros((0, x.shape[1] * (2 * r + 1))))
    idx = np.clip(np.arange(T)[:, None] + np.arange(-r, r + 1)[None, :], 0, T - 1)
    return feats.with_values(x[idx].reshape(T, -1))


def bin_mean(rows: np.ndarray) -> np.ndarray:
    """Mean of a block of consecutive frames (shared by batch and streaming binning)."""
    return rows.sum(axis=0) / rows.shape[0]


def bin_features(feats: FeatureMatrix, n: int) -> FeatureMatrix:
    """Average non-overlapping groups of ``n`` frames; a trailing partial group is kept."""
    if n < 1:
        raise ConfigError(f"bin size must be >= 1, got {n}")
    x = feats.values
    if n == 1:
        return feats.with_values(x.copy())
    T = x.shape[0]
    out = np.array([bin_mean(x[k:k + n]) for k in range(0, T, n)]).reshape(-(-T // n), x.shape[1])
    return feats.with_values(out, frame_shift=feats.frame_shift * n)


def bin_labels(labels, n: int) -> np.ndarray:
    """Label of a bin is 1 iff the mean of its member labels is at least 0.5."""
    labels = np.asarray(labels, dtype=np.float64)
    if n < 1:
        raise ConfigError(f"bin size must be >= 1, got {n}")
    T = len(labels)
    out = [bin_mean(labels[k:k + n, None])[0] >= 0.5 for k in range(0, T, n)]
    return np.asarray(out, dtype=np.int8)


def expand_predictions(preds, n: int, orig_len: int) -> np.ndarray:
    preds = np.asarray(preds)
    if n < 1:
        raise ConfigError(f"bin size must be >= 1, got {n}")
    if len(preds) != -(-orig_len // n):
        raise ContractError(f"expected {-(-orig_len // n)} binned predictions for {orig_len} frames, got {len(preds)}")
    return np.repeat(preds, n, axis=0)[:orig_len]


# -- front-end composition and I/O -------------------------------------------------------

def extract(signal: AudioSignal, n_mels: int = 36, frame_length: float = 25.0,
            frame_shift: float = 10.0) -> FeatureMatrix:
    """Log-mel features of a whole signal; empty matrix when shorter than one frame."""
    win = samples_per(frame_length, signal.sample_rate)
    if len(signal.samples) < win:
        return FeatureMatrix(np.zeros((0, n_mels)), frame_shift, frame_length)
    frames = frame_signal(signal, frame_length, frame_shift)
    return logmel(frames, n_mels, signal.sample_rate, frame_length, frame_shift)


def read_wav(path) -> AudioSignal:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise DataError(f"{path}: expected mono 16-bit PCM")
        rate = w.getframerate()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return AudioSignal(data.astype(np.float64) / 32768.0, rate)


def write_wav(path, signal: AudioSignal) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(pcm.tobytes())


def read_raw_float32(path, sample_rate: int) -> AudioSignal:
    return AudioSignal(np.fromfile(str(path), dtype="<f4").astype(np.float64), sample_rate)


def write_features_csv(path, feats: FeatureMatrix) -> None:
    np.savetxt(str(path), feats.values, delimiter=",", fmt="%.9g")
