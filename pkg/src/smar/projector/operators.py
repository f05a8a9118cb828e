"""Forward projection, its adjoint, FBP and the FBP adjoint.

Every operator accepts a single ``(H, W)`` image / ``(N, D)`` sinogram or a
stack with extra leading axes; stacks are processed slice by slice.  Outputs
are float32 (float64 for float64 inputs, which the gradient checks rely on);
internal arithmetic is always float64.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..core import Geometry, check_image, check_sinogram
from . import _kernels

WINDOWS = ("ram-lak", "hann")


@lru_cache(maxsize=32)
def _ray_table(geometry: Geometry):
    """Per-ray origin and unit direction, flattened view-major."""
    beta = geometry.view_angles
    n, d = geometry.sino_shape
    c, s = np.cos(beta)[:, None], np.sin(beta)[:, None]
    u = (np.arange(d) - 0.5 * (d - 1)) * geometry.detector_spacing
    if geometry.is_fan:
        sc, sd = geometry.source_to_center, geometry.source_to_detector
        src_x, src_y = sc * c, sc * s
        det_x = -(sd - sc) * c - u[None, :] * s
        det_y = -(sd - sc) * s + u[None, :] * c
        dx, dy = det_x - src_x, det_y - src_y
        norm = np.hypot(dx, dy)
        dx, dy = dx / norm, dy / norm
        ox = np.broadcast_to(src_x, (n, d))
        oy = np.broadcast_to(src_y, (n, d))
    else:
        ox, oy = u[None, :] * c, u[None, :] * s
        dx = np.broadcast_to(-s, (n, d))
        dy = np.broadcast_to(c, (n, d))
    return tuple(np.ascontiguousarray(a, dtype=np.float64).ravel() for a in (ox, oy, dx, dy))


@lru_cache(maxsize=32)
def _view_trig(geometry: Geometry):
    beta = geometry.view_angles
    return np.cos(beta), np.sin(beta)


def _out_dtype(arr) -> type:
    return np.float64 if np.asarray(arr).dtype == np.float64 else np.float32


def _per_slice(fn, arr, tail_ndim=2):
    arr = np.asarray(arr)
    if arr.ndim == tail_ndim:
        return fn(arr)
    lead = arr.shape[:-tail_ndim]
    flat = arr.reshape((-1,) + arr.shape[-tail_ndim:])
    out = np.stack([fn(a) for a in flat])
    return out.reshape(lead + out.shape[1:])


def forward_project(image: np.ndarray, geometry: Geometry) -> np.ndarray:
    """Line integrals of an attenuation image (1/mm) along every ray."""
    check_image(image, geometry)
    rays = _ray_table(geometry)
    ps = geometry.pixel_spacing

    def one(img):
        vals = _kernels.joseph_forward(np.ascontiguousarray(img, dtype=np.float64), *rays, ps)
        return vals.reshape(geometry.sino_shape).astype(dtype)

    dtype = _out_dtype(image)
    return _per_slice(one, image)


def back_project(sino: np.ndarray, geometry: Geometry) -> np.ndarray:
    """Exact transpose of :func:`forward_project`."""
    check_sinogram(sino, geometry)
    rays = _ray_table(geometry)
    h, w = geometry.image_size

    def one(s):
        vals = np.ascontiguousarray(s, dtype=np.float64).ravel()
        return _kernels.joseph_adjoint(vals, *rays, geometry.pixel_spacing, h, w).astype(dtype)

    dtype = _out_dtype(sino)
    return _per_slice(one, sino)


def forward_project_vjp(upstream: np.ndarray, geometry: Geometry) -> np.ndarray:
    """Gradient contract of the (linear) forward projector: its transpose."""
    return back_project(upstream, geometry)


# ---------------------------------------------------------------------------
# Ramp filter
# ---------------------------------------------------------------------------


def padded_length(num_detectors: int) -> int:
    return 1 << int(np.ceil(np.log2(2 * num_detectors)))


@lru_cache(maxsize=32)
def ramp_response(num_detectors: int, spacing: float, window: str = "ram-lak") -> np.ndarray:
    """Real rfft-domain response of the band-limited Ram-Lak kernel.

    Built from the spatial kernel h[0] = 1/(4 s^2), h[odd n] = -1/(n pi s)^2,
    so the DC bin is small and positive rather than zero.
    """
    if window not in WINDOWS:
        raise ValueError(f"unknown filter window {window!r}")
    size = padded_length(num_detectors)
    n = np.concatenate([np.arange(0, size // 2 + 1), np.arange(-size // 2 + 1, 0)])
    h = np.zeros(size)
    h[0] = 1.0 / (4.0 * spacing**2)
    odd = n % 2 == 1
    h[odd] = -1.0 / (np.pi * n[odd] * spacing) ** 2
    response = np.real(np.fft.rfft(h))
    if window == "hann":
        k = np.arange(response.size)
        response = response * 0.5 * (1.0 + np.cos(2.0 * np.pi * k / size))
    response.setflags(write=False)
    return response


def ramp_filter(views: np.ndarray, spacing: float, window: str = "ram-lak") -> np.ndarray:
    """Convolve each row with the ramp kernel (times the sample spacing).

    The operator is symmetric, so it is also its own adjoint.
    """
    d = views.shape[-1]
    response = ramp_response(d, float(spacing), window)
    size = padded_length(d)
    spec = np.fft.rfft(views, n=size, axis=-1) * response
    return spacing * np.fft.irfft(spec, n=size, axis=-1)[..., :d]


def _fan_preweight(geometry: Geometry) -> np.ndarray:
    d = geometry.num_detectors
    a = (np.arange(d) - 0.5 * (d - 1)) * geometry.iso_detector_spacing
    r = geometry.source_to_center
    return r / np.sqrt(r * r + a * a)


def _fbp_scale(geometry: Geometry) -> float:
    # parallel: dtheta over [0, pi); fan over [0, 2 pi): dbeta / 2
    return np.pi / geometry.num_views


def _bp_args(geometry: Geometry):
    c, s = _view_trig(geometry)
    src = geometry.source_to_center if geometry.is_fan else 0.0
    return c, s, geometry.pixel_spacing, geometry.iso_detector_spacing, geometry.is_fan, float(src)


def fbp(sino: np.ndarray, geometry: Geometry, window: str = "ram-lak") -> np.ndarray:
    """Filtered backprojection (cosine pre-weighting and 1/U^2 weighting for fan beam)."""
    check_sinogram(sino, geometry)
    h, w = geometry.image_size
    args = _bp_args(geometry)
    scale = _fbp_scale(geometry)
    pre = _fan_preweight(geometry) if geometry.is_fan else None

    def one(s):
        p = np.asarray(s, dtype=np.float64)
        if pre is not None:
            p = p * pre
        q = ramp_filter(p, geometry.iso_detector_spacing, window)
        img = _kernels.pixel_backproject(np.ascontiguousarray(q), *args, h, w)
        return (scale * img).astype(dtype)

    dtype = _out_dtype(sino)
    return _per_slice(one, sino)


def fbp_vjp(upstream: np.ndarray, geometry: Geometry, window: str = "ram-lak") -> np.ndarray:
    """Transpose of :func:`fbp`: adjoint backprojection, filter, then the fan pre-weight."""
    check_image(upstream, geometry, "upstream")
    args = _bp_args(geometry)
    scale = _fbp_scale(geometry)
    pre = _fan_preweight(geometry) if geometry.is_fan else None
    d = geometry.num_detectors

    def one(y):
        img = np.ascontiguousarray(y, dtype=np.float64)
        q = scale * _kernels.pixel_backproject_adjoint(img, *args, d)
        p = ramp_filter(q, geometry.iso_detector_spacing, window)
        if pre is not None:
            p = p * pre
        return p.astype(dtype)

    dtype = _out_dtype(upstream)
    return _per_slice(one, upstream)
