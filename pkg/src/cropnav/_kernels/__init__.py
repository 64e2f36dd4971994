"""Hot-kernel backend selection.

The compiled extension (cropnav._kernels._native, built by setup.py) is
preferred; the numpy/scipy fallback is used when it is absent.  Set
CROPNAV_BACKEND=fallback or =native to force one side; forcing native
raises if the extension is missing.
"""

import os

from . import fallback

_requested = os.environ.get("CROPNAV_BACKEND", "").strip().lower()

_impl = None
if _requested != "fallback":
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "native":
            raise
        _impl = None

if _impl is None:
    _impl = fallback
    backend_name = "fallback"
else:
    backend_name = "native"

render_plants = _impl.render_plants
exg_u8_hist = _impl.exg_u8_hist
label_regions = _impl.label_regions
