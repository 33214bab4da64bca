"""CSV and manifest writers/readers. Formats are described in docs/formats.md."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from . import __version__

TRAJECTORY_HEADER = ["t_s", "device_id", "channel", "value"]
METRICS_HEADER = ["device_id", "metric", "value"]


def fmt(v) -> str:
    """Shortest text that reads back to the same value."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _writer(path: Path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_trajectories(path, times, channels: Mapping[Tuple[str, str], np.ndarray]) -> Path:
    """Long format, one row per (sample, device, channel); rows grouped by time."""
    path = Path(path)
    keys = list(channels)
    cols = [np.asarray(channels[k]) for k in keys]
    for k, c in zip(keys, cols):
        if len(c) != len(times):
            raise ValueError(f"channel {k} has {len(c)} samples, expected {len(times)}")
    fh, w = _writer(path)
    with fh:
        w.writerow(TRAJECTORY_HEADER)
        for i, t in enumerate(times):
            ts = fmt(t)
            for (dev, ch), c in zip(keys, cols):
                w.writerow([ts, dev, ch, fmt(c[i])])
    return path


def read_trajectories(path) -> Tuple[np.ndarray, Dict[Tuple[str, str], np.ndarray]]:
    times: List[float] = []
    data: Dict[Tuple[str, str], List[float]] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"unexpected trajectory header {header}")
        last = None
        for row in r:
            ts, dev, ch, val = row
            if ts != last:
                times.append(float(ts))
                last = ts
            data.setdefault((dev, ch), []).append(float(val))
    return np.array(times), {k: np.array(v) for k, v in data.items()}


def write_metrics(path, report, device_metrics: Mapping[str, Mapping[str, float]]) -> Path:
    path = Path(path)
    fh, w = _writer(path)
    with fh:
        w.writerow(METRICS_HEADER)
        for k, v in report.as_dict().items():
            w.writerow(["system", k, fmt(v)])
        for dev, m in device_metrics.items():
            for k, v in m.items():
                w.writerow([dev, k, fmt(v)])
    return path


def read_metrics(path) -> Dict[Tuple[str, str], str]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return {(row["device_id"], row["metric"]): row["value"] for row in r}


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    fh, w = _writer(path)
    with fh:
        w.writerow(list(header))
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_table(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def config_hash(config_bytes: bytes) -> str:
    return sha256_bytes(config_bytes)


def write_manifest(path, command: str, config_bytes: bytes, wall_time: float, outputs: Sequence[Path],
                   extra: Mapping | None = None) -> Path:
    path = Path(path)
    outputs = [Path(o).resolve() for o in outputs]
    path = path.resolve()
    man = {
        "command": command,
        "config_sha256": config_hash(config_bytes),
        "version": __version__,
        "wall_time_s": wall_time,
        "outputs": [{"file": Path(o).relative_to(path.parent).as_posix(), "sha256": sha256_file(o)} for o in outputs],
    }
    if extra:
        man.update(extra)
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path
