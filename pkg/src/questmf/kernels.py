"""Hot-loop kernel selection.

The compiled extension is used when it imports; otherwise the numpy fallback
takes over. Set ``QUESTMF_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("QUESTMF_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def get_backend(name=None):
    """Return a kernel module by name (``"python"`` or ``"compiled"``)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def lstm_forward(gx, w_h, mask, reverse):
    return _impl.lstm_forward(gx, w_h, mask, reverse)


def lstm_backward(dout, acts, cells, out, w_h, mask, reverse):
    return _impl.lstm_backward(dout, acts, cells, out, w_h, mask, reverse)


def adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, step, extent=None):
    """In-place AdamW step.

    ``grad`` may hold only the leading ``grad.size`` elements (in flat order);
    the rest of the gradient is zero. Elements at or past ``extent`` must have
    zero moments and only decay. The result equals the dense update.
    """
    for arr in (param, m, v):
        if not arr.flags.c_contiguous:
            raise ValueError("optimizer buffers must be C-contiguous")
    extent = param.size if extent is None else int(extent)
    if not grad.size <= extent <= param.size:
        raise ValueError(f"need grad size {grad.size} <= extent {extent} <= {param.size}")
    _impl.adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, step, extent)
