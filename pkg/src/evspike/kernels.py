"""Kernel backend selection.

The compiled ``_ckernels`` extension is preferred; the pure-Python
``_pykernels`` module is used when the extension is not built or when the
environment variable ``EVSPIKE_PURE_PYTHON`` is set to a non-empty value
other than ``0``.  ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

_force_py = os.environ.get("EVSPIKE_PURE_PYTHON", "") not in ("", "0")

_impl = _pykernels
BACKEND = "python"
if not _force_py:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

bin_time_us = _impl.bin_time_us
delta_modulate = _impl.delta_modulate
evspd_scan = _impl.evspd_scan
evspd_triggers = _impl.evspd_triggers
refractory_gate = _impl.refractory_gate
greedy_match = _impl.greedy_match


def available_backends():
    """Map of backend name to kernel module, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
