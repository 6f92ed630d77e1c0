"""Hot-loop kernels with backend selection at import time.

The compiled Cython backend is used when present; the numpy reference
backend otherwise. WENAS_KERNELS=ref|fast forces a backend ("fast" raises
if the extension is missing). Both backends expose the same functions.
"""

import os

from . import ref

_requested = os.environ.get("WENAS_KERNELS", "auto")

if _requested == "ref":
    _impl = ref
elif _requested in ("auto", "fast"):
    try:
        from . import fast as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "fast":
            raise ImportError(
                "WENAS_KERNELS=fast but the compiled extension is not built; "
                "reinstall with a C compiler or unset WENAS_KERNELS"
            )
        _impl = ref
else:
    raise ValueError(f"WENAS_KERNELS must be auto, ref or fast, got {_requested!r}")


def backend() -> str:
    """Name of the active backend: 'fast' (compiled) or 'ref' (numpy)."""
    return _impl.NAME


sigmoid_fwd = _impl.sigmoid_fwd
sigmoid_bwd = _impl.sigmoid_bwd
tanh_bwd = _impl.tanh_bwd
blend_fwd = _impl.blend_fwd
blend_bwd = _impl.blend_bwd
bn_fwd = _impl.bn_fwd
bn_bwd = _impl.bn_bwd
softmax_xent_fwd = _impl.softmax_xent_fwd
softmax_xent_bwd = _impl.softmax_xent_bwd
softmax_vec_fwd = _impl.softmax_vec_fwd
softmax_vec_bwd = _impl.softmax_vec_bwd
