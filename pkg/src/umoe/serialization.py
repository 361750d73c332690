"""Deterministic array archives.

``numpy.savez`` stamps the current time into the zip members, so two
otherwise identical saves differ byte-wise. Runs here must be
byte-reproducible, so archives are written manually with fixed zip
metadata and stored (uncompressed) ``.npy`` members plus an optional
``meta.json``. Files stay readable by ``numpy.load``.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from typing import Any

import numpy as np

from .errors import DataError

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def save_arrays(path: str, arrays: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    """Atomically write ``arrays`` (and optional JSON metadata) to ``path``."""
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
                info = zipfile.ZipInfo(name + ".npy", date_time=_FIXED_DATE)
                zf.writestr(info, buf.getvalue())
            if meta is not None:
                info = zipfile.ZipInfo("meta.json", date_time=_FIXED_DATE)
                zf.writestr(info, json.dumps(meta, sort_keys=True, separators=(",", ":")))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_arrays(path: str) -> tuple[dict[str, np.ndarray], dict[str, Any] | None]:
    """Read an archive written by :func:`save_arrays`."""
    if not os.path.exists(path):
        raise DataError(f"archive not found: {path}")
    arrays: dict[str, np.ndarray] = {}
    meta = None
    try:
        with zipfile.ZipFile(path) as zf:
            for name in zf.namelist():
                with zf.open(name) as fh:
                    if name == "meta.json":
                        meta = json.loads(fh.read().decode("utf-8"))
                    elif name.endswith(".npy"):
                        arrays[name[:-4]] = np.lib.format.read_array(
                            io.BytesIO(fh.read()), allow_pickle=False
                        )
    except (zipfile.BadZipFile, ValueError, KeyError) as exc:
        raise DataError(f"cannot read archive {path}: {exc}") from exc
    return arrays, meta


def write_text_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
