"""Kernel backend selection.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
pure-Python ``_pykernels`` take over. ``DSMCBF_BACKEND=python`` forces the
fallback and ``DSMCBF_BACKEND=c`` makes a missing extension an error.
"""
import os

from . import _pykernels

_choice = os.environ.get("DSMCBF_BACKEND", "auto").lower()

if _choice == "python":
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:
        if _choice == "c":
            raise
        kernels = _pykernels

BACKEND = "c" if kernels is not _pykernels else "python"


def get_kernels(name=None):
    """Return a kernel module by name ("c" or "python"), defaulting to the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "c":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
