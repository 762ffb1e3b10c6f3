import json
import os
from typing import Any, Iterable, List, Optional

import numpy as np

from utils.errors import InvalidSelectionError

SCHEMA_VERSION = 1


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into JSON-native values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and value != value:
        return None
    return value


def build_report(**fields) -> dict:
    """Report document with the schema version first; unset (None) sections are kept as null."""
    return {"schema_version": SCHEMA_VERSION, **_plain(fields)}


def write_report(report: dict, path: str) -> None:
    """Sorted keys and fixed indentation so identical runs produce identical bytes."""
    directory = os.path.dirname(str(path))
    if directory and not os.path.isdir(directory):
        raise FileNotFoundError(f"directory does not exist: {directory}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def read_report(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_indices(indices: Iterable[int], path: str) -> None:
    """Ascending zero-based indices, one per line, newline-terminated."""
    ordered = sorted(int(i) for i in indices)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(f"{i}\n" for i in ordered))


def read_indices(path: str, n: Optional[int] = None) -> List[int]:
    """Parse an indices file; duplicates, negatives, junk or (given n) out-of-range values are rejected."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = [line.strip() for line in f if line.strip()]
    except UnicodeDecodeError as e:
        raise InvalidSelectionError(f"indices file {path} is not valid UTF-8 text: {e}") from e
    try:
        indices = [int(line) for line in lines]
    except ValueError as e:
        raise InvalidSelectionError(f"indices file {path} holds a non-integer line: {e}") from e
    if not indices:
        raise InvalidSelectionError(f"indices file {path} is empty")
    if len(set(indices)) != len(indices):
        raise InvalidSelectionError(f"indices file {path} contains duplicate indices")
    if min(indices) < 0 or (n is not None and max(indices) >= n):
        raise InvalidSelectionError(f"indices file {path} has an index outside [0, {n})")
    return indices
