"""Built-in deterministic provider: log-mel filterbank statistics.

This exists so the full pipeline runs and tests without any external model: a
64-band log-mel spectrogram (25 ms windows, 10 ms hop) summarized per band by
mean, standard deviation, min, and max -> 256 values.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import ProviderSpec

N_BANDS = 64
STFT_WINDOW_SECONDS = 0.025
STFT_HOP_SECONDS = 0.010
MEL_FMIN_HZ = 60.0
LOG_FLOOR = 1e-10
REFERENCE_DIM = 4 * N_BANDS


def reference_provider_spec(
    native_rate: int = 16000,
    window_seconds: float = 1.0,
    resample_mode: str = "resample",
) -> ProviderSpec:
    return ProviderSpec(
        name="reference",
        native_rate=native_rate,
        window_seconds=window_seconds,
        embedding_dim=REFERENCE_DIM,
        resample_mode=resample_mode,
    )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def _filterbank(rate: int, n_fft: int) -> np.ndarray:
    """Triangular mel filters (N_BANDS, n_fft//2 + 1), peaks at 1."""
    edges_hz = mel_to_hz(
        np.linspace(hz_to_mel(MEL_FMIN_HZ), hz_to_mel(rate / 2.0), N_BANDS + 2)
    )
    bin_freqs = np.arange(n_fft // 2 + 1) * (rate / n_fft)
    bank = np.zeros((N_BANDS, len(bin_freqs)))
    for band in range(N_BANDS):
        left, center, right = edges_hz[band : band + 3]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        bank[band] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def log_mel_spectrogram(samples: np.ndarray, rate: int) -> np.ndarray:
    """Log-mel frames, shape (n_stft_frames, N_BANDS); natural log, floored."""
    samples = np.asarray(samples, dtype=np.float64)
    win = max(2, round(STFT_WINDOW_SECONDS * rate))
    hop = max(1, round(STFT_HOP_SECONDS * rate))
    if len(samples) < win:
        padded = np.zeros(win)
        padded[: len(samples)] = samples
        samples = padded
    starts = np.arange(0, len(samples) - win + 1, hop)
    window = np.hanning(win)
    segments = np.stack([samples[s : s + win] for s in starts]) * window
    power = np.abs(np.fft.rfft(segments, axis=1)) ** 2
    mel = power @ _filterbank(rate, win).T
    return np.log(np.maximum(mel, LOG_FLOOR))


def reference_embed(frame_samples: np.ndarray, rate: int) -> np.ndarray:
    """Embed one frame: per-band mean, std, min, max of the log-mel bands."""
    bands = log_mel_spectrogram(frame_samples, rate)
    stats = np.concatenate(
        [bands.mean(axis=0), bands.std(axis=0), bands.min(axis=0), bands.max(axis=0)]
    )
    return stats.astype(np.float32)


class ReferenceEmbedder:
    """FrameEmbedder over reference_embed; stateless and reentrant."""

    def embed_frames(self, frames: Sequence[np.ndarray], rate: int) -> list[np.ndarray]:
        return [reference_embed(f, rate) for f in frames]
