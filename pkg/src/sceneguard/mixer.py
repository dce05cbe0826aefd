"""
Mixer Module
Mixing model x' = x + gamma * m * n, SNR arithmetic and the gamma bounds
that keep the mixture inside the SNR range
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from sceneguard.audio_core import Waveform
from sceneguard.errors import ContractError, UndefinedSnrError

logger = logging.getLogger(__name__)

DEFAULT_PEAK = 0.99


@dataclass(frozen=True)
class MixInputs:
    """Length-matched speech and noise with their powers"""
    speech: Waveform
    noise: Waveform
    P_x: float
    P_n: float

    @classmethod
    def build(cls, speech: Waveform, noise: Waveform) -> "MixInputs":
        if len(speech) != len(noise):
            raise ContractError(f"Speech ({len(speech)}) and noise ({len(noise)}) lengths differ")
        if speech.sample_rate_hz != noise.sample_rate_hz:
            raise ContractError("Speech and noise sample rates differ")
        p_x, p_n = speech.power, noise.power
        if p_x <= 0 or p_n <= 0:
            raise ContractError(f"Signal powers must be > 0 (P_x={p_x}, P_n={p_n})")
        return cls(speech, noise, p_x, p_n)


@dataclass(frozen=True)
class SnrBounds:
    snr_min_db: float
    snr_max_db: float
    gamma_min: float
    gamma_max: float

    @property
    def span(self) -> float:
        return self.gamma_max - self.gamma_min


def _as_mask(mask, n: int) -> np.ndarray:
    mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), (n,))
    if np.any(mask < 0) or np.any(mask > 1):
        raise ContractError("Mask entries must lie in [0, 1]")
    return mask


def mix(speech: Waveform, noise: Waveform, mask, gamma: float) -> Waveform:
    """x'(t) = x(t) + gamma * m(t) * n(t), no normalization"""
    if len(speech) != len(noise):
        raise ContractError(f"Speech ({len(speech)}) and noise ({len(noise)}) lengths differ")
    if gamma < 0:
        raise ContractError(f"gamma must be >= 0, got {gamma}")
    m = _as_mask(mask, len(speech))
    return speech.with_samples(speech.samples + gamma * m * noise.samples)


def effective_snr_db(speech: Waveform, noise: Waveform, mask, gamma: float) -> float:
    """10 log10(P_x / mean((gamma m n)^2))"""
    m = _as_mask(mask, len(speech))
    p_eff = float(np.mean((gamma * m * noise.samples) ** 2))
    if p_eff <= 0:
        raise UndefinedSnrError("Effective noise power is zero; SNR undefined")
    return float(10.0 * np.log10(speech.power / p_eff))


def gamma_for_snr(P_x: float, P_n: float, snr_db: float) -> float:
    """Strength giving the requested SNR under a mask of all ones"""
    if P_x <= 0 or P_n <= 0:
        raise ContractError(f"Powers must be > 0 (P_x={P_x}, P_n={P_n})")
    return float(np.sqrt(P_x / (P_n * 10.0 ** (snr_db / 10.0))))


def gamma_bounds(P_x: float, P_n: float, snr_min_db: float, snr_max_db: float) -> SnrBounds:
    """Strength interval whose mask-of-ones SNR lies in [snr_min_db, snr_max_db]"""
    return SnrBounds(
        snr_min_db=float(snr_min_db),
        snr_max_db=float(snr_max_db),
        gamma_min=gamma_for_snr(P_x, P_n, snr_max_db),
        gamma_max=gamma_for_snr(P_x, P_n, snr_min_db),
    )


def project_gamma(gamma_logit: float, bounds: SnrBounds) -> float:
    """gamma = gamma_min + (gamma_max - gamma_min) * sigmoid(logit)"""
    return float(bounds.gamma_min + bounds.span * expit(gamma_logit))


def peak_normalize(w: Waveform, target_peak: float = DEFAULT_PEAK) -> Waveform:
    """Scale so max |x| equals target_peak; all-zero input is returned unchanged"""
    peak = float(np.max(np.abs(w.samples))) if len(w) else 0.0
    if peak == 0.0:
        logger.warning("peak_normalize called on an all-zero signal; returning it unchanged")
        return w
    return w.with_samples(w.samples * (target_peak / peak))
