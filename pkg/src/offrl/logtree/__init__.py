"""Numerically stable log-space weighted sampling tree.

Hot kernels come from the compiled extension when it was built, otherwise
from the numpy fallback; ``BACKEND`` names the active one.
"""

from ._backend import BACKEND
from .tree import LogSumExpTree

__all__ = ["LogSumExpTree", "BACKEND"]
