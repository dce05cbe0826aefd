"""
Logging and Timing Module
JSON log files for batch runs plus wall-clock tracking of experiment operations
"""

import json
import logging
import logging.handlers
import time
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

CONSOLE_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
LOG_FILE_BYTES = 10 * 1024 * 1024

# LogRecord attribute -> JSON key
_RECORD_FIELDS = (
    ('levelname', 'level'),
    ('name', 'logger'),
    ('module', 'module'),
    ('funcName', 'function'),
    ('lineno', 'line'),
)


class JSONFormatter(logging.Formatter):
    """One JSON object per line; `extra_fields` passed via `extra=` are merged in"""

    def format(self, record: logging.LogRecord) -> str:
        stamp = datetime.fromtimestamp(record.created, tz=timezone.utc)
        entry: Dict[str, Any] = {
            'timestamp': stamp.isoformat(timespec='milliseconds').replace('+00:00', 'Z'),
            'message': record.getMessage(),
        }
        entry.update({key: getattr(record, attr) for attr, key in _RECORD_FIELDS})

        if record.exc_info and record.exc_info[0] is not None:
            exc_type, exc_value, _ = record.exc_info
            entry['exception'] = {'type': exc_type.__name__, 'message': str(exc_value)}

        entry.update(getattr(record, 'extra_fields', None) or {})
        return json.dumps(entry, default=str)


def _rotating_handler(path: Path, level: int, backups: int, formatter: logging.Formatter) -> logging.Handler:
    handler = logging.handlers.RotatingFileHandler(
        filename=path, maxBytes=LOG_FILE_BYTES, backupCount=backups, encoding='utf-8'
    )
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def setup_logging(log_dir: Optional[str] = 'logs', level: int = logging.INFO, json_file: bool = True) -> None:
    """
    Configure console logging and, when log_dir is given, rotating log files

    Args:
        log_dir: Directory for sceneguard.log / error.log, None for console only
        level: Root log level
        json_file: JSON lines in the files; False writes the console format
    """
    root = logging.getLogger()
    root.setLevel(level)
    for existing in list(root.handlers):
        root.removeHandler(existing)

    console = logging.StreamHandler()
    console.setLevel(level)
    console.setFormatter(logging.Formatter(CONSOLE_FORMAT))
    root.addHandler(console)

    if log_dir is None:
        return

    target = Path(log_dir)
    target.mkdir(parents=True, exist_ok=True)
    file_formatter = JSONFormatter if json_file else (lambda: logging.Formatter(CONSOLE_FORMAT))
    root.addHandler(_rotating_handler(target / 'sceneguard.log', logging.DEBUG, 5, file_formatter()))
    root.addHandler(_rotating_handler(target / 'error.log', logging.ERROR, 3, file_formatter()))


@dataclass
class OperationTiming:
    """Running totals for one named operation"""

    executions: int = 0
    succeeded: int = 0
    elapsed_ms: float = 0.0
    fastest_ms: float = float('inf')
    slowest_ms: float = 0.0

    def add(self, duration_ms: float, success: bool) -> None:
        self.executions += 1
        self.succeeded += int(success)
        self.elapsed_ms += duration_ms
        self.fastest_ms = min(self.fastest_ms, duration_ms)
        self.slowest_ms = max(self.slowest_ms, duration_ms)

    def as_dict(self, name: str) -> Dict[str, Any]:
        return {
            'operation': name,
            'total_executions': self.executions,
            'successes': self.succeeded,
            'failures': self.executions - self.succeeded,
            'avg_duration_ms': round(self.elapsed_ms / self.executions, 2),
            'min_duration_ms': round(self.fastest_ms, 2),
            'max_duration_ms': round(self.slowest_ms, 2),
            'total_seconds': round(self.elapsed_ms / 1000.0, 3),
        }


class PerformanceTracker:
    """Track wall-clock of named operations (per utterance, per configuration)"""

    def __init__(self):
        self.operations: Dict[str, OperationTiming] = {}
        self.logger = logging.getLogger(__name__)

    def record_operation(self, operation_name: str, duration_ms: float,
                         success: bool, metadata: Optional[Dict] = None) -> None:
        self.operations.setdefault(operation_name, OperationTiming()).add(duration_ms, success)
        self.logger.debug(
            f"{operation_name} took {duration_ms:.1f} ms ({'ok' if success else 'failed'})",
            extra={'extra_fields': {
                'operation': operation_name,
                'duration_ms': duration_ms,
                'success': success,
                'metadata': metadata or {},
            }},
        )

    @contextmanager
    def track(self, operation_name: str, metadata: Optional[Dict] = None) -> Iterator[None]:
        """Time the enclosed block; failures are recorded and re-raised"""
        started = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            self.record_operation(operation_name, (time.perf_counter() - started) * 1000.0, ok, metadata)

    def get_operation_stats(self, operation_name: str) -> Dict[str, Any]:
        timing = self.operations.get(operation_name)
        if timing is None or timing.executions == 0:
            return {}
        return timing.as_dict(operation_name)

    def summary(self) -> Dict[str, Dict[str, Any]]:
        return {name: self.get_operation_stats(name) for name in sorted(self.operations)}


__all__ = [
    'setup_logging',
    'JSONFormatter',
    'OperationTiming',
    'PerformanceTracker',
]
