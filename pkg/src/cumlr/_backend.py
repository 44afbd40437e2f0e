"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. ``CUMLR_BACKEND=python`` or ``=cython`` forces
one or the other.
"""

import importlib
import os

from cumlr.errors import ConfigError

_MODULES = {"cython": "cumlr._ckernels", "python": "cumlr._pykernels"}


def load(name: str):
    if name not in _MODULES:
        raise ConfigError(f"unknown kernel backend {name!r}; choose from {sorted(_MODULES)}")
    return importlib.import_module(_MODULES[name])


def available() -> list[str]:
    names = []
    for name in _MODULES:
        try:
            load(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select():
    want = os.environ.get("CUMLR_BACKEND", "auto").lower()
    if want in ("", "auto"):
        try:
            return load("cython")
        except ImportError:
            return load("python")
    return load(want)


kernels = _select()
BACKEND = kernels.NAME
