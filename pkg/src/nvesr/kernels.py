"""Kernel dispatch: compiled extension when importable, numpy otherwise.

``BACKEND`` names the implementation bound to the module-level functions.
Both implementations stay importable as :data:`python` and :data:`compiled`
(the latter is ``None`` when the extension was not built).
"""
from . import _pykernels as python

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None:
    BACKEND = "cython"
    _impl = compiled
else:
    BACKEND = "python"
    _impl = python

eigh_batch = _impl.eigh_batch
lorentzian_model = _impl.lorentzian_model
lorentzian_jacobian = _impl.lorentzian_jacobian

__all__ = ["BACKEND", "compiled", "python", "eigh_batch",
           "lorentzian_model", "lorentzian_jacobian"]
