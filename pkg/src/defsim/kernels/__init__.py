"""Hot per-pipeline kernels with a compiled core and a pure numpy fallback.

The compiled extension (built from ``_accel.pyx``) is picked automatically
when importable; set ``DEFSIM_KERNELS=pure`` or ``DEFSIM_KERNELS=compiled``
to force a backend. Both produce bitwise-identical results; the benchmark
under ``benchmarks/`` compares their throughput.
"""

import os

from . import pure as _pure

_requested = os.environ.get("DEFSIM_KERNELS", "").strip().lower()

_impl = None
if _requested in ("", "compiled"):
    try:
        from . import _accel as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = None
        if _requested == "compiled":
            raise ImportError(
                "DEFSIM_KERNELS=compiled but the compiled kernel extension is "
                "not built; run `python setup.py build_ext --inplace`"
            )
if _impl is None:
    _impl = _pure

BACKEND = _impl.BACKEND
conv_order_update = _impl.conv_order_update
pipe_interior_order = _impl.pipe_interior_order
moc_interior_step = _impl.moc_interior_step


def backends():
    """All importable backends as {name: module}, for tests and benchmarks."""
    out = {"pure": _pure}
    try:
        from . import _accel

        out["compiled"] = _accel
    except ImportError:
        pass
    return out
