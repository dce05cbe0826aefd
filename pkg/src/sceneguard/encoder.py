"""
Speaker Encoder Module
Speaker embeddings behind a common backend interface:
- MelStatsEncoder: built-in log-mel statistics embedding with analytic gradients
- ExternalCommandEncoder: any command printing an embedding vector (evaluation only)
"""
import logging
import shlex
import subprocess
import tempfile
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from sceneguard.audio_core import (
    DEFAULT_FFT_SIZE, DEFAULT_HOP, Waveform, hann_window, mel_filterbank, resample, stft_complex, write_wav
)
from sceneguard.config import CANONICAL_RATE_HZ, EncoderConfig
from sceneguard.errors import BackendError, ContractError, TooShortError
from sceneguard.mixer import DEFAULT_PEAK, SnrBounds

logger = logging.getLogger(__name__)

MIN_DURATION_S = 0.5
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class Embedding:
    """Unit-norm speaker embedding"""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ContractError("Embedding entries must be finite")
        if abs(np.linalg.norm(values) - 1.0) > UNIT_NORM_TOL:
            raise ContractError("Embedding must have unit L2 norm")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_vector(cls, vector) -> "Embedding":
        vector = np.asarray(vector, dtype=np.float64)
        norm = np.linalg.norm(vector)
        if not np.isfinite(norm) or norm == 0:
            raise ContractError("Cannot normalize a zero or non-finite embedding vector")
        return cls(vector / norm)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Dot product of unit vectors, clamped to [-1, 1]"""
    if a.dim != b.dim:
        raise ContractError(f"Embedding dimensions differ ({a.dim} vs {b.dim})")
    return float(np.clip(np.dot(a.values, b.values), -1.0, 1.0))


class EncoderBackend(ABC):
    """Abstract speaker encoder"""

    kind: str = "abstract"
    supports_gradients: bool = False

    @abstractmethod
    def embed(self, w: Waveform) -> Embedding:
        """Embed a waveform at the canonical rate"""
        pass

    def _prepare(self, w: Waveform) -> Waveform:
        if w.sample_rate_hz != CANONICAL_RATE_HZ:
            w = resample(w, CANONICAL_RATE_HZ)
        if w.duration_s < MIN_DURATION_S:
            raise TooShortError(f"Need >= {MIN_DURATION_S} s of audio, got {w.duration_s:.3f} s")
        return w


@dataclass
class _MelStatsCache:
    spectrum: np.ndarray
    mel: np.ndarray
    centered: np.ndarray
    std: np.ndarray
    vector_norm: float
    embedding: np.ndarray
    n_samples: int


class MelStatsEncoder(EncoderBackend):
    """
    Log-mel statistics embedding

    STFT -> power -> mel -> log(1 + .) -> per-band temporal mean and std
    -> concatenate -> L2 normalize. Every stage is differentiable and
    backward() returns the exact gradient with respect to the samples.
    """

    kind = "builtin_melstats"
    supports_gradients = True

    def __init__(self, n_mels: int = 40, fft_size: int = DEFAULT_FFT_SIZE, hop: int = DEFAULT_HOP,
                 sample_rate_hz: int = CANONICAL_RATE_HZ, f_min_hz: float = 0.0,
                 f_max_hz: Optional[float] = None, std_eps: float = 1e-10):
        self.fft_size = fft_size
        self.hop = hop
        self.sample_rate_hz = sample_rate_hz
        self.std_eps = std_eps
        self.window = hann_window(fft_size)
        self.filterbank = mel_filterbank(n_mels, fft_size, sample_rate_hz, f_min_hz,
                                         f_max_hz if f_max_hz is not None else sample_rate_hz / 2.0)

    @property
    def dim(self) -> int:
        return 2 * self.filterbank.n_mels

    def embed(self, w: Waveform) -> Embedding:
        w = self._prepare(w)
        embedding, _ = self.forward(w.samples)
        return Embedding(embedding)

    def forward(self, samples: np.ndarray) -> Tuple[np.ndarray, _MelStatsCache]:
        """Embedding vector of raw samples plus the cache backward() needs"""
        spectrum = stft_complex(samples, self.fft_size, self.hop)
        power = spectrum.real ** 2 + spectrum.imag ** 2
        mel = power @ self.filterbank.weights.T
        log_mel = np.log1p(mel)

        mean = log_mel.mean(axis=0)
        centered = log_mel - mean
        std = np.sqrt((centered ** 2).mean(axis=0) + self.std_eps)

        vector = np.concatenate([mean, std])
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            raise ContractError("Degenerate signal: zero mel statistics")
        embedding = vector / norm
        cache = _MelStatsCache(spectrum, mel, centered, std, norm, embedding, samples.shape[0])
        return embedding, cache

    def backward(self, cache: _MelStatsCache, grad_embedding: np.ndarray) -> np.ndarray:
        """Gradient of <grad_embedding, embedding> with respect to the samples"""
        e = cache.embedding
        grad_vector = (grad_embedding - e * np.dot(e, grad_embedding)) / cache.vector_norm

        n_mels = self.filterbank.n_mels
        n_frames = cache.mel.shape[0]
        grad_mean, grad_std = grad_vector[:n_mels], grad_vector[n_mels:]

        grad_log_mel = (grad_mean[None, :] + grad_std[None, :] * cache.centered / cache.std[None, :]) / n_frames
        grad_mel = grad_log_mel / (1.0 + cache.mel)
        grad_power = grad_mel @ self.filterbank.weights

        # d|F_j|^2/du_k = 2 Re(F_j e^{+2 pi i j k / N}) over the one-sided bins
        weighted = 2.0 * grad_power * cache.spectrum
        full = np.zeros((n_frames, self.fft_size), dtype=np.complex128)
        full[:, : weighted.shape[1]] = weighted
        grad_frames = self.fft_size * np.real(np.fft.ifft(full, axis=-1))
        grad_frames *= self.window

        grad_samples = np.zeros(cache.n_samples)
        starts = np.arange(n_frames) * self.hop
        np.add.at(grad_samples, starts[:, None] + np.arange(self.fft_size)[None, :], grad_frames)
        return grad_samples


class ExternalCommandEncoder(EncoderBackend):
    """
    Encoder delegated to an external command

    The command receives one WAV path and must print a whitespace-separated
    vector on stdout and exit 0. No gradients.
    """

    kind = "external_command"
    supports_gradients = False

    def __init__(self, command: str, timeout_s: float = 300.0):
        if not command:
            raise ContractError("External encoder needs a command")
        self.command = command
        self.timeout_s = timeout_s
        self.dim: Optional[int] = None
        self._lock = threading.Lock()

    def _argv(self, wav_path: str):
        if "{in}" in self.command:
            return shlex.split(self.command.replace("{in}", shlex.quote(wav_path)))
        return shlex.split(self.command) + [wav_path]

    def embed(self, w: Waveform) -> Embedding:
        w = self._prepare(w)
        with self._lock, tempfile.TemporaryDirectory(prefix="sceneguard_enc_") as tmp:
            wav_path = str(Path(tmp) / "input.wav")
            write_wav(w, wav_path)
            try:
                proc = subprocess.run(self._argv(wav_path), capture_output=True, text=True,
                                      timeout=self.timeout_s, check=False)
            except (OSError, subprocess.TimeoutExpired) as e:
                raise BackendError(f"External encoder failed to run: {e}") from e

            if proc.returncode != 0:
                raise BackendError(f"External encoder exited {proc.returncode}: {proc.stderr.strip()}")
            try:
                vector = np.array([float(tok) for tok in proc.stdout.split()], dtype=np.float64)
            except ValueError as e:
                raise BackendError(f"External encoder printed a malformed vector: {e}") from e

            if vector.size == 0:
                raise BackendError("External encoder printed an empty vector")
            if self.dim is None:
                self.dim = int(vector.size)
                logger.info(f"External encoder dimension discovered: {self.dim}")
            elif vector.size != self.dim:
                raise BackendError(f"External encoder dimension changed from {self.dim} to {vector.size}")
            try:
                return Embedding.from_vector(vector)
            except ContractError as e:
                raise BackendError(f"External encoder vector unusable: {e}") from e


def make_backend(config: Optional[EncoderConfig] = None) -> EncoderBackend:
    config = config or EncoderConfig()
    if config.kind == "external_command":
        return ExternalCommandEncoder(config.command)
    return MelStatsEncoder(n_mels=config.n_mels, fft_size=config.fft_size, hop=config.hop)


@lru_cache(maxsize=1)
def default_encoder() -> MelStatsEncoder:
    """Shared builtin encoder with default settings; it holds no per-call state"""
    return MelStatsEncoder()


def embed(backend: EncoderBackend, w: Waveform) -> Embedding:
    return backend.embed(w)


@dataclass(frozen=True)
class SimGradient:
    """Similarity loss with gradients and the projected parameters it used"""
    loss: float
    d_mask_logits: np.ndarray
    d_gamma_logit: float
    mask: np.ndarray
    gamma: float
    peak_scale: float


def sim_forward_backward(speech: Waveform, noise: Waveform, mask_logits: np.ndarray, gamma_logit: float,
                         bounds: SnrBounds, target: Embedding, backend: EncoderBackend = None,
                         peak_scale: Optional[float] = None) -> SimGradient:
    """
    Cosine similarity between the normalized mixture and target, with gradients

    The peak-normalization scale is a constant in the backward pass; pass
    peak_scale to freeze it (finite-difference checks), otherwise it is
    0.99 / max|x'| of the current mixture.
    """
    backend = backend or default_encoder()
    if not backend.supports_gradients:
        raise ContractError(f"Encoder backend '{backend.kind}' does not support gradients")
    if len(speech) != len(noise) or len(mask_logits) != len(speech):
        raise ContractError("speech, noise and mask_logits must share one length")

    mask = expit(np.asarray(mask_logits, dtype=np.float64))
    sig_gamma = float(expit(gamma_logit))
    gamma = bounds.gamma_min + bounds.span * sig_gamma
    noise_samples = noise.samples
    mixture = speech.samples + gamma * mask * noise_samples

    if peak_scale is None:
        peak = float(np.max(np.abs(mixture)))
        if peak == 0.0:
            raise ContractError("Degenerate signal: mixture has zero power")
        peak_scale = DEFAULT_PEAK / peak

    embedding, cache = backend.forward(peak_scale * mixture)
    loss = float(np.dot(embedding, target.values))

    grad_mixture = peak_scale * backend.backward(cache, target.values)
    grad_mask = grad_mixture * gamma * noise_samples
    grad_gamma = float(np.dot(grad_mixture, mask * noise_samples))

    return SimGradient(
        loss=loss,
        d_mask_logits=grad_mask * mask * (1.0 - mask),
        d_gamma_logit=grad_gamma * bounds.span * sig_gamma * (1.0 - sig_gamma),
        mask=mask,
        gamma=gamma,
        peak_scale=peak_scale,
    )


def sim_loss_and_gradient(speech: Waveform, noise: Waveform, mask_logits: np.ndarray, gamma_logit: float,
                          bounds: SnrBounds, target: Embedding, backend: EncoderBackend = None,
                          peak_scale: Optional[float] = None) -> Tuple[float, np.ndarray, float]:
    """(loss, d_mask_logits, d_gamma_logit) of the similarity term"""
    result = sim_forward_backward(speech, noise, mask_logits, gamma_logit, bounds, target, backend, peak_scale)
    return result.loss, result.d_mask_logits, result.d_gamma_logit
