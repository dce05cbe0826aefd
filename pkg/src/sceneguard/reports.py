"""
Report writers
Schema-versioned JSON reports and CSV summaries. Wall-clock numbers go to a
separate timing file so reports reproduce byte for byte.
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from sceneguard import __version__
from sceneguard.config import ExperimentConfig
from sceneguard.monitoring import PerformanceTracker

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


def jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values"""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def build_report(command: str, config: ExperimentConfig, body: Dict[str, Any]) -> Dict[str, Any]:
    report = {
        'schema_version': SCHEMA_VERSION,
        'tool': {'name': 'sceneguard', 'version': __version__},
        'command': command,
        'config': config.resolved(),
    }
    report.update(body)
    return jsonable(report)


def write_json(report: Dict[str, Any], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(jsonable(report), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"Wrote report {path}")
    return path


def write_csv(rows: Sequence[Dict[str, Any]], path, fieldnames: Optional[List[str]] = None) -> Path:
    """Rows to CSV; missing fields are left blank and extra fields are dropped"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []

    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction='ignore')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_cell(row.get(k)) for k in fieldnames})
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def _csv_cell(value: Any) -> Any:
    value = jsonable(value)
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return value


def write_timing(command: str, tracker: PerformanceTracker, path) -> Path:
    """Wall-clock summary for one command; never part of the reproducible report"""
    return write_json({'command': command, 'operations': tracker.summary()}, path)


def flatten_ci(prefix: str, ci: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    if not ci:
        return {f'{prefix}_mean': None, f'{prefix}_ci_lo': None, f'{prefix}_ci_hi': None}
    return {f'{prefix}_mean': ci['point'], f'{prefix}_ci_lo': ci['lo'], f'{prefix}_ci_hi': ci['hi']}


def read_json(path) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
