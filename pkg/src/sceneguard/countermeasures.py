"""
Countermeasures Module
Attacker-side preprocessing applied to protected audio before scoring:
spectral subtraction, telephone-band lowpass, 8 kHz round trip and an
external lossy codec hook
"""
import logging
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import signal

from sceneguard.audio_core import Waveform, butterworth_lowpass, fit_length, read_wav, resample, write_wav
from sceneguard.config import CANONICAL_RATE_HZ, CodecHookConfig, CountermeasureSpec, SpectralSubtractionConfig
from sceneguard.encoder import EncoderBackend, cosine_similarity
from sceneguard.errors import (
    AudioFormatError, AudioIOError, ConfigurationError, CountermeasureError, SceneGuardError
)

logger = logging.getLogger(__name__)

Countermeasure = CountermeasureSpec
Scorer = Callable[[int, Waveform, Waveform], Optional[float]]


def spectral_subtraction(w: Waveform, params: Optional[SpectralSubtractionConfig] = None) -> Waveform:
    """
    Magnitude-domain spectral subtraction with the noisy phase

    The noise floor is the per-bin mean magnitude over the lowest-energy
    frames (noise_quantile of all frames, at least one).
    """
    params = params or SpectralSubtractionConfig()
    noverlap = params.fft_size - params.hop
    _, _, Z = signal.stft(w.samples, fs=w.sample_rate_hz, window="hann",
                          nperseg=params.fft_size, noverlap=noverlap)
    magnitude = np.abs(Z)

    frame_energy = np.sum(magnitude ** 2, axis=0)
    n_quiet = max(1, int(np.floor(params.noise_quantile * frame_energy.shape[0])))
    quiet = np.argsort(frame_energy, kind="stable")[:n_quiet]
    noise_floor = magnitude[:, quiet].mean(axis=1, keepdims=True)

    cleaned = np.maximum(magnitude - params.alpha * noise_floor, params.beta * magnitude)
    _, out = signal.istft(cleaned * np.exp(1j * np.angle(Z)), fs=w.sample_rate_hz, window="hann",
                          nperseg=params.fft_size, noverlap=noverlap)
    return w.with_samples(fit_length(out, len(w)))


def downsample_round_trip(w: Waveform, target_rate_hz: int = 8000) -> Waveform:
    """Resample down then back so downstream metrics compare equal-rate signals"""
    return resample(resample(w, target_rate_hz), w.sample_rate_hz)


def _format_cmd(template: str, **values: str) -> List[str]:
    quoted = {key: shlex.quote(str(value)) for key, value in values.items()}
    try:
        return shlex.split(template.format(**quoted))
    except (KeyError, IndexError, ValueError) as e:
        raise ConfigurationError(f"Bad codec command template '{template}': {e}") from e


def _run_step(argv: List[str], step: str, workdir: str) -> None:
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, check=False)
    except OSError as e:
        raise CountermeasureError(f"Codec {step} command could not start: {e}", str(e), workdir) from e
    if proc.returncode != 0:
        raise CountermeasureError(
            f"Codec {step} command exited {proc.returncode} (workdir kept at {workdir})",
            proc.stderr, workdir,
        )


def codec_round_trip(w: Waveform, codec: CodecHookConfig) -> Waveform:
    """
    Encode and decode through external commands

    Templates take {in}, {out} and {bitrate}. The temporary directory is
    removed on success and kept on failure.
    """
    if not codec.configured:
        raise ConfigurationError("external_codec needs both encode_cmd and decode_cmd")

    workdir = tempfile.mkdtemp(prefix="sceneguard_codec_")
    src = Path(workdir) / "input.wav"
    encoded = Path(workdir) / f"encoded{codec.encoded_suffix}"
    decoded = Path(workdir) / "decoded.wav"

    write_wav(w, src)
    _run_step(_format_cmd(codec.encode_cmd, **{"in": src, "out": encoded, "bitrate": codec.bitrate}),
              "encode", workdir)
    _run_step(_format_cmd(codec.decode_cmd, **{"in": encoded, "out": decoded, "bitrate": codec.bitrate}),
              "decode", workdir)

    try:
        out = resample(read_wav(decoded), CANONICAL_RATE_HZ)
    except (AudioIOError, AudioFormatError) as e:
        raise CountermeasureError(f"Codec output unreadable: {e}", "", workdir) from e

    shutil.rmtree(workdir, ignore_errors=True)
    return Waveform(fit_length(out.samples, len(w)), CANONICAL_RATE_HZ)


def apply(cm: Countermeasure, w: Waveform) -> Waveform:
    """Apply one countermeasure to a canonical-rate waveform"""
    if cm.kind == "none":
        return w
    if cm.kind == "spectral_subtraction":
        return spectral_subtraction(w, cm.spectral)
    if cm.kind == "lowpass_3400":
        return butterworth_lowpass(w, cm.cutoff_hz, cm.order)
    if cm.kind == "downsample_8k":
        return downsample_round_trip(w, cm.target_rate_hz)
    if cm.kind == "external_codec":
        return codec_round_trip(w, cm.codec)
    raise ConfigurationError(f"Unknown countermeasure kind '{cm.kind}'")


@dataclass
class RobustnessRow:
    countermeasure: str
    kind: str
    sim_mean: Optional[float]
    delta_sim: Optional[float]
    n: int
    skipped: bool = False
    reason: Optional[str] = None
    similarities: List[float] = field(default_factory=list, repr=False)
    extras: Dict[str, Optional[float]] = field(default_factory=dict)
    failed: List[Dict[str, str]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'countermeasure': self.countermeasure,
            'kind': self.kind,
            'sim_mean': self.sim_mean,
            'delta_sim': self.delta_sim,
            'n': self.n,
            'n_failed': len(self.failed),
            'failed': list(self.failed),
            'skipped': self.skipped,
            'reason': self.reason,
            **self.extras,
        }


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


def _score(name: str, scorer: Scorer, index: int, utt_id: str, clean: Waveform,
           processed: Waveform) -> Optional[float]:
    try:
        return scorer(index, clean, processed)
    except SceneGuardError as e:
        logger.warning(f"{name} not scored for {utt_id}: {e}")
        return None


def run_robustness_matrix(protected: Sequence[Waveform], clean: Sequence[Waveform],
                          cms: Sequence[Countermeasure], backend: EncoderBackend,
                          scorers: Optional[Mapping[str, Scorer]] = None,
                          ids: Optional[Sequence[str]] = None) -> List[RobustnessRow]:
    """
    Similarity of each countermeasure's output to the clean speaker

    Args:
        protected: Protected utterances
        clean: Clean utterances aligned with protected
        cms: Countermeasures, one row each
        backend: Encoder used for similarity
        scorers: Optional extra per-sample metrics, called as
            scorer(index, clean, processed) and averaged over non-None values
        ids: Utterance ids for failure records; defaults to list positions

    Returns:
        One row per countermeasure; delta is against the unprocessed row.
        Codec rows without a configured codec are marked skipped. An
        utterance whose countermeasure fails is left out of that row and
        listed under `failed`.
    """
    if len(protected) != len(clean):
        raise ConfigurationError(f"protected ({len(protected)}) and clean ({len(clean)}) lists differ in length")
    if ids is not None and len(ids) != len(protected):
        raise ConfigurationError(f"ids ({len(ids)}) and protected ({len(protected)}) lists differ in length")
    names = [str(i) for i in ids] if ids is not None else [str(i) for i in range(len(protected))]
    scorers = scorers or {}
    clean_embeddings = [backend.embed(w) for w in clean]

    baseline_sims = [cosine_similarity(ref, backend.embed(w)) for ref, w in zip(clean_embeddings, protected)]
    baseline = _mean(baseline_sims)

    rows: List[RobustnessRow] = []
    for cm in cms:
        if cm.kind == "external_codec" and not cm.codec.configured:
            logger.warning(f"Skipping countermeasure {cm.label}: no codec command configured")
            rows.append(RobustnessRow(cm.label, cm.kind, None, None, 0, skipped=True,
                                      reason="codec not configured"))
            continue

        processed: Dict[int, Waveform] = {}
        failed: List[Dict[str, str]] = []
        for i, w in enumerate(protected):
            try:
                processed[i] = apply(cm, w)
            except CountermeasureError as e:
                logger.error(f"Countermeasure {cm.label} failed on {names[i]}: {e}", exc_info=True)
                failed.append({'utterance_id': names[i], 'error': f"{type(e).__name__}: {e}"})

        if cm.kind == "none":
            sims = list(baseline_sims)
        else:
            sims = [cosine_similarity(clean_embeddings[i], backend.embed(p)) for i, p in processed.items()]
        sim_mean = _mean(sims)
        delta = None if sim_mean is None or baseline is None else sim_mean - baseline

        extras: Dict[str, Optional[float]] = {}
        for name, scorer in sorted(scorers.items()):
            values = [_score(name, scorer, i, names[i], clean[i], p) for i, p in processed.items()]
            extras[name] = _mean([v for v in values if v is not None])

        rows.append(RobustnessRow(cm.label, cm.kind, sim_mean, delta, len(sims),
                                  similarities=sims, extras=extras, failed=failed))
        if sim_mean is None:
            logger.warning(f"Countermeasure {cm.label}: every utterance failed")
        else:
            logger.info(f"Countermeasure {cm.label}: SIM {sim_mean:.4f} (delta {delta:+.4f})")
    return rows
