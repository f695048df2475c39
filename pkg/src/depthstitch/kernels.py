"""Backend selection for the hot loops.

The compiled extension is used when it was built; setting
``DEPTHSTITCH_BACKEND=python`` forces the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DEPTHSTITCH_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        _impl = _ckernels


def backends():
    """Available kernel modules by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        return out
    out["cython"] = _ckernels
    return out


def slic_assign(*args):
    return _impl.slic_assign(*args)


def raster_backward(*args):
    return _impl.raster_backward(*args)


def inpaint_relax(*args):
    return _impl.inpaint_relax(*args)
