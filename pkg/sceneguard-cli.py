#!/usr/bin/env python
"""
SceneGuard CLI launcher for running from a source checkout.

Usage:
    sceneguard-cli.py protect --config config/experiment.toml
    sceneguard-cli.py evaluate --config config/experiment.toml --clean-dir clean/ --protected-dir results/protected/
    sceneguard-cli.py ablate --config config/experiment.toml --mode hyperparameter
"""

import sys
from pathlib import Path

# Fix Windows console encoding
if sys.platform == 'win32':
    import codecs
    sys.stdout = codecs.getwriter('utf-8')(sys.stdout.buffer, 'strict')
    sys.stderr = codecs.getwriter('utf-8')(sys.stderr.buffer, 'strict')

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from sceneguard.cli import main


if __name__ == "__main__":
    sys.exit(main())
