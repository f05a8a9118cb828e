"""Linear tomography operators with exact transposes."""
from .operators import (
    back_project,
    fbp,
    fbp_vjp,
    forward_project,
    forward_project_vjp,
    padded_length,
    ramp_filter,
    ramp_response,
)

__all__ = [
    "back_project",
    "fbp",
    "fbp_vjp",
    "forward_project",
    "forward_project_vjp",
    "padded_length",
    "ramp_filter",
    "ramp_response",
]
