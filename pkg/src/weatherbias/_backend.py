"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``WEATHERBIAS_BACKEND=numpy`` (or ``cython``) forces a choice.
"""

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)


def _load(name=None):
    name = (name or os.environ.get("WEATHERBIAS_BACKEND", "auto")).lower()
    if name == "numpy":
        return _kernels_py
    try:
        from . import _kernels
    except ImportError:
        if name == "cython":
            raise
        log.debug("compiled kernels unavailable, using numpy fallback")
        return _kernels_py
    return _kernels


kernels = _load()


def available():
    """Names of the backends importable in this environment."""
    names = ["numpy"]
    try:
        from . import _kernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get(name):
    return _load(name)
