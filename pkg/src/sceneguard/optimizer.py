"""
Protection Optimizer Module
Optimizes a temporal mask and a noise strength so the mixed scene noise pulls
the speaker embedding away from the clean speaker while the SNR stays inside
the configured range.

Parameters live in logit space: m = sigmoid(mask_logits) and
gamma = gamma_min + (gamma_max - gamma_min) * sigmoid(gamma_logit).
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from sceneguard.audio_core import Waveform
from sceneguard.config import OptimConfig
from sceneguard.encoder import EncoderBackend, Embedding, default_encoder, sim_forward_backward
from sceneguard.errors import ContractError, NonFiniteError
from sceneguard.mixer import (
    MixInputs, SnrBounds, effective_snr_db, gamma_bounds, gamma_for_snr, mix, peak_normalize, project_gamma
)
from sceneguard.noise_library import NoiseClip, match_length

logger = logging.getLogger(__name__)

MIN_DURATION_S = 0.5


@dataclass(frozen=True)
class ProtectionParams:
    mask_logits: np.ndarray
    gamma_logit: float = 0.0

    def check_finite(self, epoch: int) -> None:
        if not np.all(np.isfinite(self.mask_logits)):
            raise NonFiniteError("mask_logits", epoch)
        if not np.isfinite(self.gamma_logit):
            raise NonFiniteError("gamma_logit", epoch)


@dataclass(frozen=True)
class Gradients:
    mask_logits: np.ndarray
    gamma_logit: float

    @property
    def norm(self) -> float:
        """Global L2 norm over both tensors"""
        return float(np.sqrt(np.sum(self.mask_logits ** 2) + self.gamma_logit ** 2))


@dataclass(frozen=True)
class AdamState:
    """First/second moments per tensor and the step count"""
    m_mask: np.ndarray
    v_mask: np.ndarray
    m_gamma: float = 0.0
    v_gamma: float = 0.0
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    total_loss: float
    sim_loss: float
    reg_loss: float
    grad_norm: float
    snr_db: float
    gamma: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'epoch': self.epoch,
            'total_loss': self.total_loss,
            'sim_loss': self.sim_loss,
            'reg_loss': self.reg_loss,
            'grad_norm': self.grad_norm,
            'snr_db': self.snr_db,
            'gamma': self.gamma,
        }


@dataclass
class ProtectionResult:
    """Protected waveform plus the parameters and trace that produced it"""
    protected: Waveform
    final_mask: np.ndarray
    final_gamma: float
    final_snr_db: float
    worst_case_snr_db: float
    bounds: SnrBounds
    noise_scene: str
    trace: List[EpochRecord] = field(default_factory=list)
    method: str = "optimized"

    def to_dict(self) -> Dict[str, Any]:
        """Summary without sample arrays"""
        return {
            'method': self.method,
            'noise_scene': self.noise_scene,
            'final_gamma': self.final_gamma,
            'final_snr_db': self.final_snr_db,
            'worst_case_snr_db': self.worst_case_snr_db,
            'gamma_min': self.bounds.gamma_min,
            'gamma_max': self.bounds.gamma_max,
            'mask_mean': float(np.mean(self.final_mask)),
            'epochs': len(self.trace),
            'trace': [record.to_dict() for record in self.trace],
        }


def init_params(T: int, rng: np.random.Generator, std: float = 0.1) -> ProtectionParams:
    """Mask logits ~ Normal(0, std^2), gamma logit 0"""
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    return ProtectionParams(rng.normal(0.0, std, size=T), 0.0)


def smoothness(mask: np.ndarray) -> float:
    """Sum of squared first differences"""
    return float(np.sum(np.diff(mask) ** 2))


def _smoothness_grad(mask: np.ndarray) -> np.ndarray:
    diff = np.diff(mask)
    grad = np.zeros_like(mask)
    grad[1:] += 2.0 * diff
    grad[:-1] -= 2.0 * diff
    return grad


def total_loss(sim_loss: float, mask: np.ndarray, gamma: float,
               config: OptimConfig) -> Tuple[float, Dict[str, float]]:
    """
    Weighted objective lambda_sim * L_sim + lambda_reg * (smoothness + gamma^2)

    Returns:
        (loss, components with sim, smoothness, energy and reg entries)
    """
    smooth = smoothness(mask)
    energy = float(gamma ** 2)
    reg = smooth + energy
    loss = config.lambda_sim * sim_loss + config.lambda_reg * reg
    return float(loss), {'sim': float(sim_loss), 'smoothness': smooth, 'energy': energy, 'reg': reg}


def loss_and_gradients(speech: Waveform, noise: Waveform, params: ProtectionParams, bounds: SnrBounds,
                       target: Embedding, config: OptimConfig, backend: Optional[EncoderBackend] = None,
                       peak_scale: Optional[float] = None) -> Tuple[float, Dict[str, float], Gradients]:
    """Total loss, its components and the gradients with respect to both logits"""
    sim = sim_forward_backward(speech, noise, params.mask_logits, params.gamma_logit, bounds,
                               target, backend, peak_scale)
    loss, components = total_loss(sim.loss, sim.mask, sim.gamma, config)

    mask_slope = sim.mask * (1.0 - sim.mask)
    sig_gamma = float(expit(params.gamma_logit))
    gamma_slope = bounds.span * sig_gamma * (1.0 - sig_gamma)

    grad_mask = (config.lambda_sim * sim.d_mask_logits
                 + config.lambda_reg * _smoothness_grad(sim.mask) * mask_slope)
    grad_gamma = (config.lambda_sim * sim.d_gamma_logit
                  + config.lambda_reg * 2.0 * sim.gamma * gamma_slope)
    return loss, components, Gradients(grad_mask, float(grad_gamma))


def clip_gradients(grads: Gradients, max_norm: float) -> Gradients:
    """Rescale so the joint L2 norm is at most max_norm"""
    if max_norm <= 0:
        raise ContractError(f"max_norm must be > 0, got {max_norm}")
    norm = grads.norm
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return Gradients(grads.mask_logits * scale, grads.gamma_logit * scale)


def adam_step(params: ProtectionParams, grads: Gradients, state: AdamState, config: OptimConfig,
              epoch: int = 0) -> Tuple[ProtectionParams, AdamState]:
    """
    One bias-corrected Adam update

    Raises:
        NonFiniteError: a gradient or updated parameter is NaN/Inf
    """
    if not np.all(np.isfinite(grads.mask_logits)):
        raise NonFiniteError("grad_mask_logits", epoch)
    if not np.isfinite(grads.gamma_logit):
        raise NonFiniteError("grad_gamma_logit", epoch)

    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.lr
    t = state.step + 1

    m_mask = b1 * state.m_mask + (1 - b1) * grads.mask_logits
    v_mask = b2 * state.v_mask + (1 - b2) * grads.mask_logits ** 2
    m_gamma = b1 * state.m_gamma + (1 - b1) * grads.gamma_logit
    v_gamma = b2 * state.v_gamma + (1 - b2) * grads.gamma_logit ** 2

    c1, c2 = 1 - b1 ** t, 1 - b2 ** t  # bias correction
    mask_logits = params.mask_logits - lr * (m_mask / c1) / (np.sqrt(v_mask / c2) + eps)
    gamma_logit = params.gamma_logit - lr * (m_gamma / c1) / (np.sqrt(v_gamma / c2) + eps)

    updated = ProtectionParams(mask_logits, float(gamma_logit))
    updated.check_finite(epoch)
    return updated, AdamState(m_mask, v_mask, float(m_gamma), float(v_gamma), t)


def _prepare(speech: Waveform, noise_clip: NoiseClip, config: OptimConfig,
             rng: np.random.Generator) -> Tuple[MixInputs, SnrBounds]:
    if speech.duration_s < MIN_DURATION_S:
        raise ContractError(f"Speech must be >= {MIN_DURATION_S} s, got {speech.duration_s:.3f} s")
    noise = noise_clip.audio
    if len(noise) != len(speech):
        noise = match_length(noise_clip, len(speech), rng)
    inputs = MixInputs.build(speech, noise)
    bounds = gamma_bounds(inputs.P_x, inputs.P_n, config.snr_min_db, config.snr_max_db)
    return inputs, bounds


def _finish(inputs: MixInputs, mask: np.ndarray, gamma: float, bounds: SnrBounds, scene: str,
            config: OptimConfig, trace: List[EpochRecord], method: str) -> ProtectionResult:
    protected = mix(inputs.speech, inputs.noise, mask, gamma)
    if config.normalize_output:
        protected = peak_normalize(protected)
    return ProtectionResult(
        protected=protected,
        final_mask=mask,
        final_gamma=gamma,
        final_snr_db=effective_snr_db(inputs.speech, inputs.noise, mask, gamma),
        worst_case_snr_db=effective_snr_db(inputs.speech, inputs.noise, 1.0, gamma),
        bounds=bounds,
        noise_scene=scene,
        trace=trace,
        method=method,
    )


def protect(speech: Waveform, noise_clip: NoiseClip, config: OptimConfig, rng: np.random.Generator,
            backend: Optional[EncoderBackend] = None, target: Optional[Embedding] = None) -> ProtectionResult:
    """
    Optimize mask and strength for one utterance

    Args:
        speech: Clean utterance at the canonical rate
        noise_clip: Scene noise; length-matched here when needed
        config: Optimization hyperparameters
        rng: Per-utterance generator (noise offset, then mask init)
        backend: Differentiable encoder, builtin log-mel stats by default
        target: Embedding to move away from, embed(speech) by default

    Returns:
        ProtectionResult whose waveform is rebuilt from the final parameters
    """
    backend = backend or default_encoder()
    inputs, bounds = _prepare(speech, noise_clip, config, rng)
    if target is None:
        target = backend.embed(inputs.speech)

    params = init_params(len(speech), rng, config.init_std)
    state = AdamState.zeros(len(speech))
    trace: List[EpochRecord] = []

    for epoch in range(config.epochs):
        loss, components, grads = loss_and_gradients(inputs.speech, inputs.noise, params, bounds,
                                                     target, config, backend)
        if not np.isfinite(loss):
            raise NonFiniteError("loss", epoch)

        grad_norm = grads.norm
        gamma = project_gamma(params.gamma_logit, bounds)
        mask = expit(params.mask_logits)
        trace.append(EpochRecord(
            epoch=epoch,
            total_loss=loss,
            sim_loss=components['sim'],
            reg_loss=components['reg'],
            grad_norm=grad_norm,
            snr_db=effective_snr_db(inputs.speech, inputs.noise, mask, gamma),
            gamma=gamma,
        ))
        params, state = adam_step(params, clip_gradients(grads, config.clip_norm), state, config, epoch)

    mask = expit(params.mask_logits)
    gamma = project_gamma(params.gamma_logit, bounds)
    result = _finish(inputs, mask, gamma, bounds, noise_clip.scene, config, trace, "optimized")
    logger.debug(
        f"Protected utterance: sim {trace[0].sim_loss:.4f} -> {trace[-1].sim_loss:.4f}",
        extra={'extra_fields': {'scene': noise_clip.scene, 'gamma': gamma,
                                'snr_db': result.final_snr_db, 'epochs': config.epochs}}
    )
    return result


def protect_direct(speech: Waveform, noise_clip: NoiseClip, config: OptimConfig,
                   rng: np.random.Generator) -> ProtectionResult:
    """Unoptimized baseline: initial random mask, gamma at the mid-range SNR in dB"""
    inputs, bounds = _prepare(speech, noise_clip, config, rng)
    params = init_params(len(speech), rng, config.init_std)
    mask = expit(params.mask_logits)

    mid_db = 0.5 * (config.snr_min_db + config.snr_max_db)
    gamma = gamma_for_snr(inputs.P_x, inputs.P_n, mid_db)
    return _finish(inputs, mask, gamma, bounds, noise_clip.scene, config, [], "direct")
