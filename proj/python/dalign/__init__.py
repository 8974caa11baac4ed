"""Python bindings for the dalign C++ core."""

from ._core import *  # noqa: F401,F403
from ._core import CLASS_NAMES, Error

__all__ = [name for name in dir() if not name.startswith("_")]
