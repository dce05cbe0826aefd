"""
Noise Library Module
Scene-indexed noise clips: manifest ingestion, per-scene sampling and
length matching of a clip to an utterance
"""
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from sceneguard.audio_core import Waveform, read_wav, to_canonical
from sceneguard.config import DEFAULT_SCENE_LABELS, DEFAULT_SEED
from sceneguard.errors import (
    AudioFormatError, AudioIOError, ConfigurationError, ContractError,
    IngestionError, SceneLookupError
)

logger = logging.getLogger(__name__)

SILENT_RMS = 1e-4


@dataclass(frozen=True)
class NoiseClip:
    audio: Waveform
    scene: str
    source_id: str

    def __post_init__(self):
        if not self.scene:
            raise ContractError("Noise clip scene label must be non-empty")
        if len(self.audio) == 0:
            raise ContractError(f"Noise clip {self.source_id} is empty")
        if np.sqrt(self.audio.power) <= 0:
            raise ContractError(f"Noise clip {self.source_id} is silent")


@dataclass(frozen=True)
class NoiseLibrary:
    """Immutable scene -> clips mapping; sample with one rng per worker"""
    clips: Mapping[str, Tuple[NoiseClip, ...]]
    rng_seed: int = DEFAULT_SEED
    labels: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        for scene, clips in self.clips.items():
            if not clips:
                raise ContractError(f"Scene '{scene}' has no clips")

    @property
    def scenes(self) -> List[str]:
        return sorted(self.clips)

    def __len__(self) -> int:
        return sum(len(c) for c in self.clips.values())

    def clips_for(self, scene: str) -> Tuple[NoiseClip, ...]:
        if scene not in self.clips:
            raise SceneLookupError(scene, self.clips.keys())
        return self.clips[scene]


def read_manifest(manifest: Path, required: Iterable[str]) -> List[Dict[str, str]]:
    """
    Read a CSV (with header) or JSON-array manifest

    Args:
        manifest: Manifest path
        required: Column names every row must carry

    Returns:
        List of row dictionaries
    """
    manifest = Path(manifest)
    try:
        if manifest.suffix.lower() == ".json":
            with open(manifest, "r", encoding="utf-8") as f:
                rows = json.load(f)
            if not isinstance(rows, list):
                raise ConfigurationError(f"JSON manifest {manifest} must be an array of objects")
        else:
            with open(manifest, "r", encoding="utf-8", newline="") as f:
                rows = list(csv.DictReader(f))
    except OSError as e:
        raise IngestionError(f"Cannot read manifest {manifest}: {e}", str(manifest)) from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Malformed JSON manifest {manifest}: {e}") from e

    required = list(required)
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise ConfigurationError(f"Manifest {manifest} row {i} is not an object")
        missing = [key for key in required if not str(row.get(key) or "").strip()]
        if missing:
            raise ConfigurationError(f"Manifest {manifest} row {i} missing {missing}")
    return rows


def load_library(manifest, allowed_scenes: Optional[Iterable[str]] = DEFAULT_SCENE_LABELS,
                 rng_seed: int = DEFAULT_SEED) -> NoiseLibrary:
    """
    Load every clip listed in a `path,scene` manifest

    Args:
        manifest: CSV/JSON manifest; paths are relative to its directory
        allowed_scenes: Label set rows are validated against, None accepts any
        rng_seed: Seed recorded with the library

    Returns:
        NoiseLibrary at the canonical sample rate
    """
    manifest = Path(manifest)
    rows = read_manifest(manifest, ("path", "scene"))
    allowed = set(allowed_scenes) if allowed_scenes is not None else None

    grouped: Dict[str, List[NoiseClip]] = {}
    for row in rows:
        scene = row["scene"].strip()
        if allowed is not None and scene not in allowed:
            raise ConfigurationError(f"Unknown scene label '{scene}' in {manifest}; allowed: {sorted(allowed)}")

        path = Path(row["path"].strip())
        if not path.is_absolute():
            path = manifest.parent / path
        try:
            audio = to_canonical(read_wav(path))
        except (AudioIOError, AudioFormatError) as e:
            raise IngestionError(f"Cannot load noise clip {path}: {e}", str(path)) from e

        rms = float(np.sqrt(audio.power)) if len(audio) else 0.0
        if rms < SILENT_RMS:
            logger.warning(f"Skipping silent noise clip {path} (RMS {rms:.2e})")
            continue

        grouped.setdefault(scene, []).append(NoiseClip(audio, scene, str(row["path"]).strip()))

    if not grouped:
        raise IngestionError(f"No usable noise clips in {manifest}", str(manifest))

    library = NoiseLibrary(
        {scene: tuple(clips) for scene, clips in sorted(grouped.items())},
        rng_seed=rng_seed,
        labels=tuple(sorted(allowed)) if allowed is not None else tuple(sorted(grouped)),
    )
    logger.info(f"Loaded noise library: {len(library)} clips across {len(library.scenes)} scenes")
    return library


def sample_noise(lib: NoiseLibrary, scene: str, rng: np.random.Generator) -> NoiseClip:
    """Uniform draw over the scene's clips"""
    clips = lib.clips_for(scene)
    return clips[int(rng.integers(len(clips)))]


def match_length(clip: NoiseClip, target_len: int, rng: np.random.Generator) -> Waveform:
    """
    Fit a clip to target_len samples

    Longer clips yield a random contiguous window; shorter clips are tiled
    end to end and truncated.
    """
    if target_len <= 0:
        raise ContractError(f"target_len must be > 0, got {target_len}")
    samples = clip.audio.samples
    n = samples.shape[0]

    if n >= target_len:
        offset = int(rng.integers(0, n - target_len + 1))
        return clip.audio.with_samples(samples[offset:offset + target_len])

    reps = -(-target_len // n)
    return clip.audio.with_samples(np.tile(samples, reps)[:target_len])


def baseline_noise(kind: str, length: int, rng: np.random.Generator) -> NoiseClip:
    """Scene-free noise for the random/Gaussian baselines"""
    if kind == "uniform":
        samples, scene = rng.uniform(-1.0, 1.0, length), "random_noise"
    elif kind == "gaussian":
        samples, scene = rng.standard_normal(length), "gaussian_noise"
    else:
        raise ConfigurationError(f"Unknown baseline noise kind '{kind}'")
    return NoiseClip(Waveform(samples), scene, f"baseline:{kind}")
