"""Vision-only multi-crop-row navigation in a closed-loop field simulator.

Detection finds crop-row lines from plant centers via a sliding-window
scan and the moving variance of the window line angles; a visual-servo
law follows the detected lane at fixed speed; lane switching slides the
omnidirectional platform sideways, counting crossed rows by descriptor
matching.  ``cropnav._kernels`` selects the compiled extension for the
per-pixel kernels when it is built, with a numpy fallback otherwise.
"""

from ._kernels import backend_name

__version__ = "0.1.0"
__all__ = ["backend_name", "__version__"]
