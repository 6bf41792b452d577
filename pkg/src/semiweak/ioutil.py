"""Small deterministic file helpers: atomic writes and stable JSON."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path


def stable_json(obj) -> str:
    """JSON text with sorted keys and no locale-dependent formatting."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: Path, records) -> None:
    atomic_write_text(path, "".join(stable_json(r) + "\n" for r in records))


def read_jsonl(path: Path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
