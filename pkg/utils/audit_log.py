"""
Append-only audit trail of CLI runs: one JSON object per line, each line a Fernet token
when FERNET_KEY is configured.
"""

import os, json, datetime
from typing import Optional
from cryptography.fernet import Fernet

from config import Config


def _fernet(key: Optional[str]) -> Optional[Fernet]:
    return Fernet(key.encode()) if key else None


def _encode(event: dict, fernet: Optional[Fernet]) -> bytes:
    payload = json.dumps(event, ensure_ascii=False, sort_keys=True).encode("utf-8")
    return fernet.encrypt(payload) if fernet else payload


def write_event(event: dict, path: Optional[str] = None, key: Optional[str] = None) -> Optional[str]:
    """Returns the path written to, or None when the audit log is disabled (empty path)."""
    path = Config.AUDIT_LOG_PATH if path is None else path
    if not path:
        return None
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    stamped = {"ts": datetime.datetime.now(datetime.timezone.utc).isoformat(), **event}
    line = _encode(stamped, _fernet(Config.FERNET_KEY if key is None else key))
    with open(path, "ab") as f:
        f.write(line + b"\n")
    return path


def read_events(path: str, key: Optional[str] = None) -> list:
    """Read back an audit log written by write_event."""
    fernet = _fernet(Config.FERNET_KEY if key is None else key)
    events = []
    with open(path, "rb") as f:
        for raw in f:
            raw = raw.strip()
            if not raw:
                continue
            if fernet:
                raw = fernet.decrypt(raw)
            events.append(json.loads(raw.decode("utf-8")))
    return events
