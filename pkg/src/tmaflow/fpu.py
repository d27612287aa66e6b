"""Flush-to-zero for float32 training.

Subnormal operands slow BLAS kernels down by two orders of magnitude, and
tiny gradients and Adam moments produce plenty of them.  On x86-64 glibc the
SSE control register travels inside ``fenv_t``, so it can be set through
``fegetenv``/``fesetenv`` without a compiled helper.  Elsewhere this is a no-op.
"""
from __future__ import annotations

import ctypes
import ctypes.util
import platform
from contextlib import contextmanager

FTZ = 0x8000  # flush results to zero
DAZ = 0x0040  # treat subnormal inputs as zero


class _FEnv(ctypes.Structure):
    _fields_ = [("x87", ctypes.c_uint16 * 14), ("mxcsr", ctypes.c_uint32)]


def _libm():
    if platform.system() != "Linux" or platform.machine() not in ("x86_64", "AMD64"):
        return None
    name = ctypes.util.find_library("m")
    return ctypes.CDLL(name) if name else None


def _read(libm):
    env = _FEnv()
    return env if libm.fegetenv(ctypes.byref(env)) == 0 else None


def flush_subnormals(enable: bool = True) -> bool:
    """Set or clear FTZ/DAZ on the calling thread; returns True if applied."""
    try:
        libm = _libm()
        env = _read(libm) if libm is not None else None
        if env is None:
            return False
        env.mxcsr = (env.mxcsr | FTZ | DAZ) if enable else (env.mxcsr & ~(FTZ | DAZ))
        return libm.fesetenv(ctypes.byref(env)) == 0
    except (OSError, AttributeError):
        return False


@contextmanager
def subnormals_flushed():
    """Enable FTZ/DAZ for the block and restore the previous environment after."""
    try:
        libm = _libm()
        saved = _read(libm) if libm is not None else None
    except (OSError, AttributeError):
        saved = None
    flush_subnormals()
    try:
        yield
    finally:
        if saved is not None:
            libm.fesetenv(ctypes.byref(saved))
