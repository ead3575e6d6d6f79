"""
Output files written by the management commands.

Every artifact carries the config hash and seed: JSON files as top-level
fields, CSV files as a leading '# config_hash=... seed=...' comment line.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import numpy as np
from django.utils import timezone

from manifolds.exceptions import ConfigError

logger = logging.getLogger(__name__)


def _to_builtin(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def ensure_output_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
    return path


def metadata_line(config) -> str:
    return f"# config_hash={config.config_hash} seed={config.seed}"


def write_json(path, payload: dict, config, timestamp: bool = True) -> Path:
    document = {'config_hash': config.config_hash, 'seed': config.seed}
    document.update(payload)
    document['config'] = config.as_dict()
    if timestamp:
        document['created_at'] = timezone.now().isoformat()
    path = Path(path)
    try:
        path.write_text(json.dumps(document, indent=2, sort_keys=False, default=_to_builtin) + '\n')
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc
    logger.info(f"Wrote {path}")
    return path


def write_samples_csv(path, steps: np.ndarray, samples: np.ndarray, config) -> Path:
    """One row per stored sample: step index then the ambient coordinates."""
    samples = np.asarray(samples, dtype=float)
    n_coords = samples.shape[1]
    header = metadata_line(config) + '\n' + ','.join(['step'] + [f"x{i}" for i in range(n_coords)])
    data = np.column_stack([np.asarray(steps, dtype=float), samples]) if len(steps) else np.empty((0, n_coords + 1))
    return _savetxt(path, data, header, ['%d'] + ['%.17g'] * n_coords)


def write_histograms_csv(path, histograms: Dict[str, Tuple[np.ndarray, np.ndarray]], config) -> Path:
    """Rows of observable, bin_lo, bin_hi, count."""
    lines = [metadata_line(config), 'observable,bin_lo,bin_hi,count']
    for name, (edges, counts) in histograms.items():
        for lo, hi, count in zip(edges[:-1], edges[1:], counts):
            lines.append(f"{name},{lo:.17g},{hi:.17g},{int(count)}")
    return _write_lines(path, lines)


def write_table_csv(path, rows: List[dict], config, columns: Iterable[str]) -> Path:
    columns = list(columns)
    lines = [metadata_line(config), ','.join(columns)]
    for row in rows:
        lines.append(','.join(f"{row[column]:.17g}" for column in columns))
    return _write_lines(path, lines)


def _write_lines(path, lines: List[str]) -> Path:
    path = Path(path)
    try:
        path.write_text('\n'.join(lines) + '\n')
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc
    logger.info(f"Wrote {path}")
    return path


def _savetxt(path, data: np.ndarray, header: str, fmt: List[str]) -> Path:
    path = Path(path)
    try:
        np.savetxt(path, data, delimiter=',', header=header, comments='', fmt=fmt)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc
    logger.info(f"Wrote {path}")
    return path
