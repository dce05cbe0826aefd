"""
Exception hierarchy for SceneGuard
All library errors derive from SceneGuardError
"""
from typing import Optional


class SceneGuardError(Exception):
    """Base class for every error raised by the library"""


class ConfigurationError(SceneGuardError, ValueError):
    """Invalid configuration value or inconsistent settings"""


class ContractError(SceneGuardError, ValueError):
    """A precondition of an operation was violated by the caller"""


class AudioFormatError(SceneGuardError, ValueError):
    """Malformed RIFF/WAVE data"""


class UnsupportedFormatError(AudioFormatError):
    """Well-formed WAV with an encoding we do not read"""


class AudioIOError(SceneGuardError, OSError):
    """File could not be read or written"""


class EmptySpectrogramError(ContractError):
    """Signal shorter than one analysis frame"""


class TooShortError(ContractError):
    """Signal shorter than the minimum an operation needs"""


class IngestionError(SceneGuardError, OSError):
    """A manifest references a file that cannot be loaded"""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


class SceneLookupError(SceneGuardError, KeyError):
    """Requested scene is not present in the noise library"""

    def __init__(self, scene: str, available):
        self.scene = scene
        self.available = sorted(available)
        super().__init__(f"Unknown scene '{scene}'; available: {', '.join(self.available)}")

    def __str__(self) -> str:
        return self.args[0]


class UndefinedSnrError(SceneGuardError, ValueError):
    """Effective noise power is zero so SNR is undefined"""


class UndefinedEffectError(SceneGuardError, ValueError):
    """Pooled variance is zero so Cohen's d is undefined"""


class BackendError(SceneGuardError, RuntimeError):
    """External encoder or ASR command failed or produced bad output"""


class CountermeasureError(SceneGuardError, RuntimeError):
    """External codec round-trip failed"""

    def __init__(self, message: str, stderr: str = "", workdir: Optional[str] = None):
        super().__init__(message)
        self.stderr = stderr
        self.workdir = workdir


class NonFiniteError(SceneGuardError, FloatingPointError):
    """Optimization produced NaN/Inf values"""

    def __init__(self, tensor: str, epoch: int, detail: str = ""):
        message = f"Non-finite values in {tensor} at epoch {epoch}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.tensor = tensor
        self.epoch = epoch
