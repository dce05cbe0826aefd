"""
SceneGuard
Protects recorded speech against voice cloning by mixing in optimized,
scene-consistent background noise
"""

__version__ = "0.1.0"
