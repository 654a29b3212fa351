"""Versioned npz container used by all on-disk artifacts.

Every artifact (corpus, topic model, MNIR model, forward model) is a
compressed npz archive carrying a ``__kind__`` tag, a ``__version__`` integer
and a JSON ``__meta__`` blob next to its numeric arrays.  Loaders check the
tag so that passing the wrong file to a CLI command fails with a clear
message instead of a shape error deep inside numpy.
"""

import json

import numpy as np


def write_npz(path, kind, version, arrays, meta=None):
    payload = {
        "__kind__": np.array(kind),
        "__version__": np.array(version, dtype=np.int64),
        "__meta__": np.array(json.dumps(meta or {})),
    }
    for key, value in arrays.items():
        payload[key] = value
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **payload)


def read_npz(path, kind, max_version):
    with np.load(path, allow_pickle=False) as archive:
        data = {key: archive[key] for key in archive.files}
    found = str(data.pop("__kind__", ""))
    if found != kind:
        raise ValueError(f"{path}: expected a {kind!r} file, found {found!r}")
    version = int(data.pop("__version__", -1))
    if not 1 <= version <= max_version:
        raise ValueError(f"{path}: unsupported {kind} format version {version}")
    meta = json.loads(str(data.pop("__meta__", "{}")))
    return data, meta, version
