"""
Shared fixtures: synthetic speech-like audio, scene noise and small corpora
"""

import json
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from sceneguard.audio_core import Waveform, write_wav
from sceneguard.noise_library import NoiseClip

RATE = 16000


def speech_like(duration_s: float = 1.0, seed: int = 0, rate: int = RATE, peak: float = 0.3) -> Waveform:
    """Voiced harmonic signal with a syllabic envelope and a faint noise floor"""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate

    f0 = rng.uniform(100.0, 220.0)
    vibrato = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / rate

    ks = np.arange(1, int(5000 // f0) + 1)
    offsets = rng.uniform(0, 2 * np.pi, size=ks.size)
    harmonics = np.sin(ks[:, None] * phase[None, :] + offsets[:, None]) / np.sqrt(ks)[:, None]
    voiced = harmonics.sum(axis=0)

    syllable_hz = rng.uniform(3.0, 5.0)
    envelope = 0.15 + 0.85 * 0.5 * (1 - np.cos(2 * np.pi * syllable_hz * t))
    x = voiced * envelope + 1e-3 * rng.standard_normal(n)
    return Waveform(peak * x / np.max(np.abs(x)), rate)


def pink_noise(length: int, seed: int = 0, rms: float = 0.1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    spectrum = np.fft.rfft(rng.standard_normal(length))
    freqs = np.arange(spectrum.size, dtype=np.float64)
    freqs[0] = 1.0
    x = np.fft.irfft(spectrum / np.sqrt(freqs), n=length)
    return rms * x / np.sqrt(np.mean(x ** 2))


def sine(freq_hz: float, duration_s: float = 1.0, rate: int = RATE, amplitude: float = 0.5) -> Waveform:
    t = np.arange(int(round(duration_s * rate))) / rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t), rate)


def _merge(base: dict, updates: dict) -> dict:
    out = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def build_corpus(root: Path, n_utterances: int = 3, duration_s: float = 1.0,
                 scenes=("park", "street_traffic"), config_updates=None, extra_rows=()) -> SimpleNamespace:
    """Write clean WAVs, noise clips, manifests, transcripts and a JSON config under root"""
    clean_dir = root / "clean"
    noise_dir = root / "noise"
    clean_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)

    corpus_lines = ["utterance_id,wav_path,scene,transcript_path"]
    transcript_lines = []
    ids = []
    for i in range(n_utterances):
        utt_id = f"utt{i:02d}"
        ids.append(utt_id)
        write_wav(speech_like(duration_s, seed=100 + i), clean_dir / f"{utt_id}.wav")
        corpus_lines.append(f"{utt_id},clean/{utt_id}.wav,{scenes[i % len(scenes)]},transcripts.txt")
        transcript_lines.append(f"{utt_id}\tThe quick brown fox number {i}.")
    corpus_lines.extend(extra_rows)
    (root / "corpus.csv").write_text("\n".join(corpus_lines) + "\n", encoding="utf-8")
    (root / "transcripts.txt").write_text("\n".join(transcript_lines) + "\n", encoding="utf-8")

    noise_lines = ["path,scene"]
    for j, scene in enumerate(scenes):
        for k in range(2):
            name = f"{scene}_{k}.wav"
            write_wav(Waveform(pink_noise(2 * RATE, seed=10 * j + k)), noise_dir / name)
            noise_lines.append(f"noise/{name},{scene}")
    (root / "noise.csv").write_text("\n".join(noise_lines) + "\n", encoding="utf-8")

    config = {
        "corpus_manifest": "corpus.csv",
        "noise_manifest": "noise.csv",
        "output_dir": "results",
        "seed": 1337,
        "jobs": 1,
        "optim": {"epochs": 3},
        "bootstrap_iterations": 200,
        "permutation_iterations": 200,
        "log_dir": None,
        "log_level": "WARNING",
    }
    config = _merge(config, config_updates or {})
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2), encoding="utf-8")

    return SimpleNamespace(root=root, config_path=config_path, clean_dir=clean_dir,
                           out_dir=root / "results", ids=ids)


@pytest.fixture
def speech():
    """One second of speech-like audio"""
    return speech_like(1.0, seed=7)


@pytest.fixture
def make_speech():
    return speech_like


@pytest.fixture
def make_noise_clip():
    def _make(length: int, seed: int = 0, scene: str = "park") -> NoiseClip:
        return NoiseClip(Waveform(pink_noise(length, seed)), scene, f"{scene}_{seed}")
    return _make


@pytest.fixture
def corpus(tmp_path):
    """Factory building a small corpus with config under tmp_path"""
    def _build(**kwargs) -> SimpleNamespace:
        return build_corpus(tmp_path, **kwargs)
    return _build


@pytest.fixture(autouse=True)
def no_external_hooks(monkeypatch):
    """Hook commands from the developer's environment must not leak into tests"""
    for name in ("SCENEGUARD_ASR_CMD", "SCENEGUARD_ENCODER_CMD",
                 "SCENEGUARD_CODEC_ENCODE_CMD", "SCENEGUARD_CODEC_DECODE_CMD"):
        monkeypatch.delenv(name, raising=False)
