"""Kernel backend selection.

The compiled extension is used when importable. Set ``GRPOFT_PURE_PYTHON=1``
to force the numpy fallback.
"""

import contextlib
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("GRPOFT_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

KL_K3 = _pykernels.KL_K3
KL_EXACT = _pykernels.KL_EXACT

mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
grpo_terms = _impl.grpo_terms


def get_backend(name):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


@contextlib.contextmanager
def use_backend(name):
    """Temporarily route the module-level kernels to backend ``name``."""
    global BACKEND, mlp_forward, mlp_backward, grpo_terms
    saved = BACKEND, mlp_forward, mlp_backward, grpo_terms
    impl = get_backend(name)
    BACKEND = name
    mlp_forward, mlp_backward, grpo_terms = impl.mlp_forward, impl.mlp_backward, impl.grpo_terms
    try:
        yield impl
    finally:
        BACKEND, mlp_forward, mlp_backward, grpo_terms = saved
