"""Log-mel audio features.

The hop is chosen so one feature frame covers exactly one motion frame:
16 kHz / 800 samples = 20 feature rows per second. A pretrained speech
encoder can replace this by implementing AudioFeatureProvider.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .errors import DataError

SAMPLE_RATE = 16_000
HOP = 800            # 20 rows/s at 16 kHz
N_FFT = 1024
N_MELS = 80
FMIN = 0.0
FMAX = SAMPLE_RATE / 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   sr: int = SAMPLE_RATE, fmin: float = FMIN,
                   fmax: float = FMAX) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) triangular filters on the power spectrum."""
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sr)
    fb = np.zeros((n_mels, bins.size), dtype=np.float64)
    for i in range(n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bins - left) / max(center - left, 1e-9)
        down = (right - bins) / max(right - center, 1e-9)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def resample_linear(wave: np.ndarray, sr: int, target_sr: int) -> np.ndarray:
    if sr == target_sr:
        return wave
    duration = wave.size / sr
    n_out = int(round(duration * target_sr))
    t_out = np.arange(n_out) / target_sr
    t_in = np.arange(wave.size) / sr
    return np.interp(t_out, t_in, wave)


class LogMelProvider:
    """Default AudioFeatureProvider: (waveform, sr) -> (frames, n_mels)."""

    def __init__(self, n_mels: int = N_MELS, n_fft: int = N_FFT, hop: int = HOP):
        self.n_mels = n_mels
        self.n_fft = n_fft
        self.hop = hop
        self._fb = mel_filterbank(n_mels, n_fft)
        self._window = np.hanning(n_fft)

    @property
    def feature_dim(self) -> int:
        return self.n_mels

    def __call__(self, wave: np.ndarray, sr: int = SAMPLE_RATE) -> np.ndarray:
        wave = np.asarray(wave, dtype=np.float64)
        if wave.ndim != 1:
            raise DataError("expected a mono waveform")
        if wave.size == 0:
            raise DataError("empty waveform")
        wave = resample_linear(wave, sr, SAMPLE_RATE)
        pad = self.n_fft // 2
        padded = np.pad(wave, pad, mode="reflect") if wave.size > 1 else \
            np.pad(wave, pad, mode="edge")
        n_frames = 1 + wave.size // self.hop
        spec = np.empty((n_frames, self._fb.shape[1]), dtype=np.float64)
        for i in range(n_frames):
            start = i * self.hop
            frame = padded[start:start + self.n_fft]
            if frame.size < self.n_fft:
                frame = np.pad(frame, (0, self.n_fft - frame.size))
            fft = np.fft.rfft(frame * self._window)
            spec[i] = np.abs(fft) ** 2
        return np.log(1e-5 + spec @ self._fb.T)


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file to a float64 mono waveform in [-1, 1]."""
    sr, data = wavfile.read(path)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        wave = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        wave = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        wave = (data.astype(np.float64) - 128.0) / 128.0
    else:
        wave = data.astype(np.float64)
    return wave, int(sr)


def save_wav(path, wave: np.ndarray, sr: int = SAMPLE_RATE) -> None:
    """Write a float waveform as PCM-16 mono."""
    pcm = np.clip(np.asarray(wave, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, sr, (pcm * 32767.0).astype(np.int16))
