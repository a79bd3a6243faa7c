"""Deterministic zip container: a JSON manifest plus named ``.npy`` arrays.

Entries are written in sorted order with a fixed timestamp and no
compression, so equal content always gives equal bytes.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np

from .errors import MalformedFile

_EPOCH = (1980, 1, 1, 0, 0, 0)
MANIFEST = "manifest.json"


def _entry(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    info.create_system = 3
    return info


def write_archive(path, manifest, arrays):
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_entry(MANIFEST), json.dumps(manifest, indent=1, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]),
                                      allow_pickle=False)
            zf.writestr(_entry(f"{name}.npy"), buf.getvalue())


def read_archive(path):
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read(MANIFEST))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    arrays[name[:-4]] = np.lib.format.read_array(
                        io.BytesIO(zf.read(name)), allow_pickle=False)
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise MalformedFile(f"cannot read archive {path}: {exc}") from None
    return manifest, arrays
