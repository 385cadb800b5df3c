"""Python bindings of the dualstyle engine.

Images are float64 numpy arrays of shape (H, W, C) with values in [-1, 1].
"""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
