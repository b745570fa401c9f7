"""Numba switch.

Set ``TFISHER_NUMBA=0`` to run every hot kernel through its pure-numpy
implementation instead of the compiled one. Both implementations are always
importable so they can be compared against each other.
"""
import functools
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("TFISHER_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def njit(func=None, **kwargs):
    """``numba.njit`` when numba is enabled, identity otherwise."""
    if func is None:
        return functools.partial(njit, **kwargs)
    if not USE_NUMBA:
        return func
    kwargs.setdefault("cache", True)
    return numba.njit(**kwargs)(func)


def select(nb_impl, np_impl):
    """Pick the kernel implementation according to the switch."""
    return nb_impl if USE_NUMBA else np_impl


__all__ = ["HAVE_NUMBA", "USE_NUMBA", "njit", "select"]
