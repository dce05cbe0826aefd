"""
Metrics Module
Objective evaluation of protected speech: STOI intelligibility, mel-cepstral
distortion, word error rate, attack success rate and the defense-goal check
"""
import logging
import re
import shlex
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import jiwer
import numpy as np
import pystoi
from scipy.fft import dct

from sceneguard.audio_core import Waveform, fit_length, mel_filterbank, resample, stft_complex, write_wav
from sceneguard.config import DefenseCriteria
from sceneguard.errors import BackendError, ContractError, IngestionError, TooShortError

logger = logging.getLogger(__name__)

# pystoi works internally at 10 kHz with 256-sample frames and 30-frame segments
STOI_RATE_HZ = 10000
STOI_MIN_SAMPLES = 256 + 29 * 128

MCD_N_MELS = 40
MCD_N_CEPS = 13
MCD_LOG_FLOOR = 1e-8
MCD_SCALE = 10.0 / np.log(10.0) * np.sqrt(2.0)

ATTACK_THRESHOLD = 0.7


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------

def stoi(clean: Waveform, processed: Waveform) -> float:
    """
    Short-time objective intelligibility of processed against clean

    Args:
        clean: Reference speech
        processed: Degraded speech; padded or truncated to the clean length

    Returns:
        Mean band/segment correlation, practically in [0, 1]

    Raises:
        TooShortError: Fewer than 30 non-silent analysis frames
    """
    if processed.sample_rate_hz != clean.sample_rate_hz:
        processed = resample(processed, clean.sample_rate_hz)
    y = fit_length(processed.samples, len(clean))

    needed_s = STOI_MIN_SAMPLES / STOI_RATE_HZ
    if clean.duration_s < needed_s:
        raise TooShortError(f"STOI needs >= {needed_s:.3f} s of audio, got {clean.duration_s:.3f} s")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        score = pystoi.stoi(clean.samples, y, clean.sample_rate_hz, extended=False)
    # pystoi returns 1e-5 with a RuntimeWarning when silence removal leaves too few frames
    if any(issubclass(w.category, RuntimeWarning) for w in caught):
        raise TooShortError("STOI needs 30 non-silent frames after silence removal")
    return float(score)


# ---------------------------------------------------------------------------
# MCD
# ---------------------------------------------------------------------------

def mel_cepstra(w: Waveform, n_ceps: int = MCD_N_CEPS) -> np.ndarray:
    """Frames x n_ceps DCT-II (orthonormal) of the log 40-band mel energies"""
    fb = mel_filterbank(MCD_N_MELS, sample_rate_hz=w.sample_rate_hz)
    power = np.abs(stft_complex(w.samples)) ** 2
    log_mel = np.log(np.maximum(power @ fb.weights.T, MCD_LOG_FLOOR))
    return dct(log_mel, type=2, norm="ortho", axis=-1)[:, :n_ceps]


def mcd_from_cepstra(c_ref: np.ndarray, c_proc: np.ndarray) -> float:
    """Frame-averaged cepstral distance over coefficients 1..12; c0 excluded"""
    c_ref = np.atleast_2d(np.asarray(c_ref, dtype=np.float64))
    c_proc = np.atleast_2d(np.asarray(c_proc, dtype=np.float64))
    if c_ref.shape != c_proc.shape:
        raise ContractError(f"Cepstra shapes differ: {c_ref.shape} vs {c_proc.shape}")
    diff = c_ref[:, 1:MCD_N_CEPS] - c_proc[:, 1:MCD_N_CEPS]
    return float(MCD_SCALE * np.mean(np.sqrt(np.sum(diff ** 2, axis=1))))


def mcd(clean: Waveform, processed: Waveform) -> float:
    """Frame-aligned mel-cepstral distortion in dB"""
    if len(clean) != len(processed):
        raise ContractError(f"MCD needs equal lengths ({len(clean)} vs {len(processed)})")
    if clean.sample_rate_hz != processed.sample_rate_hz:
        raise ContractError("MCD needs equal sample rates")
    return mcd_from_cepstra(mel_cepstra(clean), mel_cepstra(processed))


# ---------------------------------------------------------------------------
# WER
# ---------------------------------------------------------------------------

_PUNCTUATION = re.compile(r"[^\w\s]")


def normalize_text(text: str) -> List[str]:
    """Lowercase, strip punctuation, split on whitespace"""
    return _PUNCTUATION.sub("", text.lower()).split()


@dataclass(frozen=True)
class Transcript:
    utterance_id: str
    tokens: tuple

    @classmethod
    def from_text(cls, utterance_id: str, text: str) -> "Transcript":
        return cls(utterance_id, tuple(normalize_text(text)))

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def read_transcripts(path) -> Dict[str, Transcript]:
    """Read `utterance_id<TAB>text` lines; blank lines are ignored"""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IngestionError(f"Cannot read transcripts {path}: {e}", str(path)) from e

    transcripts: Dict[str, Transcript] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise IngestionError(f"{path}:{lineno}: expected 'utterance_id<TAB>text'", str(path))
        utt_id, text = line.split("\t", 1)
        transcripts[utt_id.strip()] = Transcript.from_text(utt_id.strip(), text)
    return transcripts


def wer(reference: Transcript, hypothesis: Transcript) -> float:
    """Word-level edit distance divided by the reference length"""
    if not reference.tokens:
        raise ContractError(f"Reference transcript {reference.utterance_id!r} is empty")
    if not hypothesis.tokens:
        return 1.0
    return float(jiwer.process_words(reference.text, hypothesis.text).wer)


def run_asr_hook(asr_cmd: str, w: Waveform, utterance_id: str = "") -> Transcript:
    """Transcribe through an external command printing the transcript on stdout"""
    with tempfile.TemporaryDirectory(prefix="sceneguard_asr_") as tmp:
        wav_path = Path(tmp) / "input.wav"
        write_wav(w, wav_path)
        if "{in}" in asr_cmd:
            argv = shlex.split(asr_cmd.replace("{in}", shlex.quote(str(wav_path))))
        else:
            argv = shlex.split(asr_cmd) + [str(wav_path)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, check=False)
        except OSError as e:
            raise BackendError(f"ASR command failed to start: {e}") from e
    if proc.returncode != 0:
        raise BackendError(f"ASR command exited {proc.returncode}: {proc.stderr.strip()}")
    return Transcript.from_text(utterance_id, proc.stdout)


# ---------------------------------------------------------------------------
# Aggregates
# ---------------------------------------------------------------------------

def attack_success_rate(sims: Sequence[float], threshold: float = ATTACK_THRESHOLD) -> float:
    """Fraction of similarities strictly above threshold"""
    sims = np.asarray(sims, dtype=np.float64)
    if sims.size == 0:
        raise ContractError("attack_success_rate needs at least one similarity")
    return float(np.mean(sims > threshold))


def protection_percent(sim: float) -> float:
    return (1.0 - sim) * 100.0


def mask_smoothness(mask: np.ndarray) -> float:
    """Mean squared first difference of a mask"""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape[0] < 2:
        return 0.0
    return float(np.mean(np.diff(mask) ** 2))


@dataclass
class SampleMetrics:
    utterance_id: str
    sim: Optional[float] = None
    stoi: Optional[float] = None
    mcd: Optional[float] = None
    wer: Optional[float] = None
    pesq: Optional[float] = None
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'utterance_id': self.utterance_id,
            'sim': self.sim,
            'stoi': self.stoi,
            'mcd': self.mcd,
            'wer': self.wer,
            'pesq': self.pesq,
            'error': self.error,
        }


METRIC_NAMES = ("sim", "stoi", "mcd", "wer")


@dataclass
class MetricReport:
    per_sample: List[SampleMetrics] = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(s, metric) for s in self.per_sample if getattr(s, metric) is not None],
                        dtype=np.float64)

    @property
    def aggregates(self) -> Dict[str, Dict[str, Optional[float]]]:
        out: Dict[str, Dict[str, Optional[float]]] = {}
        for metric in METRIC_NAMES:
            values = self.values(metric)
            out[metric] = {
                'mean': float(np.mean(values)) if values.size else None,
                'median': float(np.median(values)) if values.size else None,
                'n': int(values.size),
            }
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            'per_sample': [s.to_dict() for s in self.per_sample],
            'aggregates': self.aggregates,
        }


@dataclass(frozen=True)
class DefenseVerdict:
    protection_met: bool
    usability_met: bool
    mean_sim: Optional[float]
    mean_stoi: Optional[float]
    mean_wer: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'protection_met': self.protection_met,
            'usability_met': self.usability_met,
            'mean_sim': self.mean_sim,
            'mean_stoi': self.mean_stoi,
            'mean_wer': self.mean_wer,
        }


def check_defense_goal(report: MetricReport, criteria: Optional[DefenseCriteria] = None) -> DefenseVerdict:
    """
    Protection: mean SIM below the threshold. Usability: mean STOI at or
    above its threshold and, when WER was scored, mean WER within bound.
    """
    criteria = criteria or DefenseCriteria()
    agg = report.aggregates
    sim, stoi_mean, wer_mean = agg['sim']['mean'], agg['stoi']['mean'], agg['wer']['mean']

    protection = sim is not None and sim < criteria.sim_threshold
    usability = stoi_mean is not None and stoi_mean >= criteria.stoi_threshold
    if wer_mean is not None:
        usability = usability and wer_mean <= criteria.wer_threshold
    return DefenseVerdict(protection, usability, sim, stoi_mean, wer_mean)
