"""
Audio Core Module
Waveform container, WAV I/O, resampling and the DSP primitives shared by
the encoder, the countermeasures and the metrics
"""
import logging
import struct
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path
from typing import Union

import numpy as np
from scipy import signal
from scipy.io import wavfile

from sceneguard.config import CANONICAL_RATE_HZ
from sceneguard.errors import (
    AudioFormatError, AudioIOError, ConfigurationError, ContractError,
    EmptySpectrogramError, UnsupportedFormatError
)

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0
DEFAULT_FFT_SIZE = 512
DEFAULT_HOP = 160


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples in [-1, 1] (nominal) with their sample rate"""
    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE_HZ

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate_hz) <= 0:
            raise ContractError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ContractError("Waveform samples must be finite")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    @property
    def power(self) -> float:
        """Mean square over the whole signal"""
        return float(np.mean(self.samples ** 2)) if len(self) else 0.0

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude STFT, frames x bins"""
    magnitudes: np.ndarray
    frame_hop_samples: int
    fft_size: int
    sample_rate_hz: int

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        if mags.ndim != 2 or mags.shape[1] != self.fft_size // 2 + 1:
            raise ContractError(f"Spectrogram must have {self.fft_size // 2 + 1} bins, got shape {mags.shape}")
        if np.any(mags < 0) or not np.all(np.isfinite(mags)):
            raise ContractError("Spectrogram magnitudes must be finite and non-negative")
        mags.flags.writeable = False
        object.__setattr__(self, "magnitudes", mags)

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[0]


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular HTK-mel filters, n_mels x bins"""
    weights: np.ndarray
    f_min_hz: float
    f_max_hz: float
    sample_rate_hz: int = CANONICAL_RATE_HZ
    fft_size: int = DEFAULT_FFT_SIZE
    centers_hz: np.ndarray = field(default=None, repr=False)

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def read_wav(path: Union[str, Path]) -> Waveform:
    """
    Read a PCM16 or float32 RIFF/WAVE file

    Args:
        path: WAV file

    Returns:
        Mono Waveform scaled to [-1, 1]; multichannel input is mean-downmixed
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError as e:
        raise AudioIOError(f"WAV file not found: {path}") from e
    except OSError as e:
        raise AudioIOError(f"Cannot read {path}: {e}") from e
    except (ValueError, EOFError, IndexError, struct.error) as e:
        raise AudioFormatError(f"Malformed WAV file {path}: {e}") from e

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(f"Unsupported WAV encoding {data.dtype} in {path}; expected PCM16 or float32")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples, rate)


def write_wav(w: Waveform, path: Union[str, Path]) -> None:
    """Write 16-bit PCM mono; samples outside [-1, 1] are clipped with a warning"""
    samples = w.samples
    if samples.size and np.max(np.abs(samples)) > 1.0:
        logger.warning(f"Clipping {int(np.sum(np.abs(samples) > 1.0))} samples outside [-1, 1] while writing {path}")
        samples = np.clip(samples, -1.0, 1.0)

    pcm = np.clip(np.round(samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    try:
        wavfile.write(str(path), w.sample_rate_hz, pcm)
    except OSError as e:
        raise AudioIOError(f"Cannot write {path}: {e}") from e


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    """Polyphase resampling; output length is round(len * target / source)"""
    if target_rate_hz <= 0:
        raise ContractError(f"target_rate_hz must be > 0, got {target_rate_hz}")
    if target_rate_hz == w.sample_rate_hz:
        return w

    g = gcd(int(target_rate_hz), w.sample_rate_hz)
    up, down = target_rate_hz // g, w.sample_rate_hz // g
    out = signal.resample_poly(w.samples, up, down)

    expected = int(round(len(w) * target_rate_hz / w.sample_rate_hz))
    if out.shape[0] > expected:
        out = out[:expected]
    elif out.shape[0] < expected:
        out = np.pad(out, (0, expected - out.shape[0]))
    return Waveform(out, target_rate_hz)


def to_canonical(w: Waveform) -> Waveform:
    return resample(w, CANONICAL_RATE_HZ)


# ---------------------------------------------------------------------------
# Framing and STFT
# ---------------------------------------------------------------------------

def hann_window(size: int) -> np.ndarray:
    """Periodic hann window"""
    return signal.get_window("hann", size, fftbins=True)


def _check_stft_args(n: int, fft_size: int, hop: int) -> None:
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise ConfigurationError(f"fft_size must be a power of two, got {fft_size}")
    if not 0 < hop <= fft_size:
        raise ConfigurationError(f"hop must lie in (0, fft_size], got {hop}")
    if n < fft_size:
        raise EmptySpectrogramError(f"Signal of {n} samples is shorter than fft_size {fft_size}")


def frame_signal(x: np.ndarray, frame_size: int, hop: int) -> np.ndarray:
    """View of x as frames x frame_size, 1 + floor((len - frame) / hop) frames"""
    return np.lib.stride_tricks.sliding_window_view(x, frame_size)[::hop]


def stft_complex(x: np.ndarray, fft_size: int = DEFAULT_FFT_SIZE, hop: int = DEFAULT_HOP,
                 window: str = "hann") -> np.ndarray:
    """One-sided complex STFT of a raw sample array, frames x bins"""
    if window != "hann":
        raise ConfigurationError(f"Unsupported window '{window}'")
    x = np.asarray(x, dtype=np.float64)
    _check_stft_args(x.shape[0], fft_size, hop)
    frames = frame_signal(x, fft_size, hop) * hann_window(fft_size)
    return np.fft.rfft(frames, axis=-1)


def stft(w: Waveform, fft_size: int = DEFAULT_FFT_SIZE, hop: int = DEFAULT_HOP,
         window: str = "hann") -> Spectrogram:
    """Magnitude STFT without padding"""
    spec = stft_complex(w.samples, fft_size, hop, window)
    return Spectrogram(np.abs(spec), hop, fft_size, w.sample_rate_hz)


# ---------------------------------------------------------------------------
# Filterbanks
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    """HTK mel scale"""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = 40, fft_size: int = DEFAULT_FFT_SIZE,
                   sample_rate_hz: int = CANONICAL_RATE_HZ,
                   f_min_hz: float = 0.0, f_max_hz: float = None) -> MelFilterbank:
    """
    Triangular filters spaced uniformly on the HTK mel scale

    Raises:
        ConfigurationError: bad frequency range or a filter covering no FFT bin
    """
    if f_max_hz is None:
        f_max_hz = sample_rate_hz / 2.0
    if not 0 <= f_min_hz < f_max_hz <= sample_rate_hz / 2.0:
        raise ConfigurationError(f"Need 0 <= f_min < f_max <= sr/2, got [{f_min_hz}, {f_max_hz}]")
    if n_mels < 1:
        raise ConfigurationError("n_mels must be >= 1")

    bin_hz = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate_hz)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min_hz), hz_to_mel(f_max_hz), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]

    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(~np.any(weights > 0, axis=1))
    if empty.size:
        raise ConfigurationError(
            f"{n_mels} mel bands too many for fft_size {fft_size}: bands {empty.tolist()} cover no bin"
        )
    weights.flags.writeable = False
    return MelFilterbank(weights, float(f_min_hz), float(f_max_hz), sample_rate_hz, fft_size, edges[1:-1])


# ---------------------------------------------------------------------------
# IIR filtering
# ---------------------------------------------------------------------------

def butterworth_lowpass(w: Waveform, cutoff_hz: float, order: int = 4) -> Waveform:
    """
    Zero-phase Butterworth lowpass (cascaded biquads, forward-backward)

    Args:
        w: Input waveform
        cutoff_hz: -3 dB frequency of a single pass
        order: Even filter order; forward-backward doubles the effective order
    """
    nyquist = w.sample_rate_hz / 2.0
    if not 0 < cutoff_hz < nyquist:
        raise ConfigurationError(f"cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz")
    if order < 2 or order % 2:
        raise ConfigurationError(f"order must be even and >= 2, got {order}")

    sos = signal.butter(order, cutoff_hz, btype="low", fs=w.sample_rate_hz, output="sos")
    return w.with_samples(signal.sosfiltfilt(sos, w.samples))


def fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    """Truncate or zero-pad to exactly n samples"""
    if samples.shape[0] >= n:
        return samples[:n]
    return np.pad(samples, (0, n - samples.shape[0]))
