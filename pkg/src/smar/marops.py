"""Non-learned sinogram-domain MAR steps: trace, linear interpolation, compositing, MTR."""
from __future__ import annotations

import numpy as np

from ._accel import njit, use_numba
from .core import Geometry, check_image, check_same_shape
from .errors import FullRowTraced
from .projector import forward_project


def compute_trace(mask: np.ndarray, geometry: Geometry) -> np.ndarray:
    """Bins whose ray meets the mask; the threshold keeps interpolation dust out."""
    check_image(mask, geometry, "mask")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(geometry.sino_shape, dtype=bool)
    proj = forward_project(mask.astype(np.float32), geometry)
    return proj > 1e-6 * geometry.pixel_spacing


@njit
def _li_rows_nb(sino, trace, out):
    n, d = sino.shape
    for i in range(n):
        k = 0
        while k < d:
            if not trace[i, k]:
                k += 1
                continue
            start = k
            while k < d and trace[i, k]:
                k += 1
            # run is [start, k); neighbours start-1 and k
            left = start - 1
            right = k
            if left < 0 and right >= d:
                return i
            if left < 0:
                for q in range(start, k):
                    out[i, q] = sino[i, right]
            elif right >= d:
                for q in range(start, k):
                    out[i, q] = sino[i, left]
            else:
                lv = sino[i, left]
                slope = (sino[i, right] - lv) / (right - left)
                for q in range(start, k):
                    out[i, q] = lv + slope * (q - left)
    return -1


def _li_rows_np(sino, trace, out):
    d = sino.shape[1]
    idx = np.arange(d)
    for i in np.flatnonzero(trace.any(axis=1)):
        good = ~trace[i]
        if not good.any():
            return i
        # np.interp holds the end values constant outside the known range
        out[i, trace[i]] = np.interp(idx[trace[i]], idx[good], sino[i, good])
    return -1


def li_interpolate(sino: np.ndarray, trace: np.ndarray) -> np.ndarray:
    """Per-view linear interpolation across traced runs.

    Runs touching a detector edge take the single available neighbour's value.
    Untraced bins are copied unchanged.
    """
    check_same_shape(sino, trace)
    trace = np.asarray(trace, dtype=bool)
    out = np.array(sino, dtype=np.float32, copy=True)
    if not trace.any():
        return out
    src = np.ascontiguousarray(sino, dtype=np.float64)
    work = src.copy()
    bad = _li_rows_nb(src, trace, work) if use_numba() else _li_rows_np(src, trace, work)
    if bad >= 0:
        raise FullRowTraced(f"view {bad} is entirely inside the metal trace")
    out[trace] = work[trace]
    return out


def zero_trace(sino: np.ndarray, trace: np.ndarray) -> np.ndarray:
    check_same_shape(sino, trace)
    return np.where(trace, np.float32(0), sino).astype(np.float32)


def composite_completion(net_output: np.ndarray, s_li: np.ndarray, trace: np.ndarray) -> np.ndarray:
    """Network values inside the trace, S_LI outside."""
    check_same_shape(net_output, s_li, trace)
    return np.where(trace, net_output, s_li).astype(np.float32)


def metal_trace_replacement(s_li: np.ndarray, s_prior: np.ndarray, trace: np.ndarray) -> np.ndarray:
    """Prior projections inside the trace, shifted by the interpolated residual.

    Outside the trace the result is ``s_li`` bit for bit (equal to the measured
    sinogram there).  Inside, ``s_prior + LI(s_li - s_prior)``, so the filled
    data meets the untraced neighbours continuously.
    """
    check_same_shape(s_li, s_prior, trace)
    trace = np.asarray(trace, dtype=bool)
    out = np.array(s_li, dtype=np.float32, copy=True)
    if not trace.any():
        return out
    residual = np.asarray(s_li, np.float64) - np.asarray(s_prior, np.float64)
    work = residual.copy()
    bad = _li_rows_nb(residual, trace, work) if use_numba() else _li_rows_np(residual, trace, work)
    if bad >= 0:
        raise FullRowTraced(f"view {bad} is entirely inside the metal trace")
    out[trace] = (np.asarray(s_prior, np.float64) + work)[trace]
    return out
