"""Self-supervised cross-domain metal artifact reduction for CT.

Sinogram completion trained only on metal-free data (paired-mask FBP
consistency), residual image refinement, and prior-image metal trace
replacement, on procedurally generated phantoms.
"""
from ._accel import get_backend, set_backend
from .core import Geometry, read_tensor_container, write_tensor_container

__version__ = "0.1.0"

__all__ = ["Geometry", "get_backend", "read_tensor_container", "set_backend", "write_tensor_container"]
