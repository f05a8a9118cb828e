"""Hot loops of the tomography operators, each in a numba and a numpy flavour.

Two linear maps live here, both with their exact transposes:

* Joseph ray-driven projection.  Every ray is stepped along its dominant
  image axis; at each row (or column) the image is sampled by linear
  interpolation between the two neighbouring pixels, and the sum is scaled by
  the step length ``pixel_spacing / |dominant direction component|``.
* Pixel-driven backprojection used by FBP.  Every pixel centre is mapped to a
  fractional detector index per view and the filtered view is sampled by
  linear interpolation, times a per-(view, pixel) weight (1 for parallel beam,
  ``1/U^2`` for fan beam).

All kernels accumulate in float64.  Out-of-range neighbours contribute zero.
"""
import math

import numpy as np

from .._accel import njit, use_numba

# ---------------------------------------------------------------------------
# Joseph projector
# ---------------------------------------------------------------------------


@njit
def _joseph_forward_nb(img, ox, oy, dx, dy, ps):
    h, w = img.shape
    cx = 0.5 * (w - 1)
    cy = 0.5 * (h - 1)
    out = np.zeros(ox.size)
    for r in range(ox.size):
        acc = 0.0
        if abs(dy[r]) >= abs(dx[r]):
            for i in range(h):
                t = ((i - cy) * ps - oy[r]) / dy[r]
                c = (ox[r] + t * dx[r]) / ps + cx
                j0 = int(math.floor(c))
                f = c - j0
                if 0 <= j0 < w:
                    acc += (1.0 - f) * img[i, j0]
                if 0 <= j0 + 1 < w:
                    acc += f * img[i, j0 + 1]
            out[r] = acc * ps / abs(dy[r])
        else:
            for j in range(w):
                t = ((j - cx) * ps - ox[r]) / dx[r]
                c = (oy[r] + t * dy[r]) / ps + cy
                i0 = int(math.floor(c))
                f = c - i0
                if 0 <= i0 < h:
                    acc += (1.0 - f) * img[i0, j]
                if 0 <= i0 + 1 < h:
                    acc += f * img[i0 + 1, j]
            out[r] = acc * ps / abs(dx[r])
    return out


@njit
def _joseph_adjoint_nb(vals, ox, oy, dx, dy, ps, h, w):
    cx = 0.5 * (w - 1)
    cy = 0.5 * (h - 1)
    img = np.zeros((h, w))
    for r in range(ox.size):
        if abs(dy[r]) >= abs(dx[r]):
            v = vals[r] * ps / abs(dy[r])
            if v == 0.0:
                continue
            for i in range(h):
                t = ((i - cy) * ps - oy[r]) / dy[r]
                c = (ox[r] + t * dx[r]) / ps + cx
                j0 = int(math.floor(c))
                f = c - j0
                if 0 <= j0 < w:
                    img[i, j0] += (1.0 - f) * v
                if 0 <= j0 + 1 < w:
                    img[i, j0 + 1] += f * v
        else:
            v = vals[r] * ps / abs(dx[r])
            if v == 0.0:
                continue
            for j in range(w):
                t = ((j - cx) * ps - ox[r]) / dx[r]
                c = (oy[r] + t * dy[r]) / ps + cy
                i0 = int(math.floor(c))
                f = c - i0
                if 0 <= i0 < h:
                    img[i0, j] += (1.0 - f) * v
                if 0 <= i0 + 1 < h:
                    img[i0 + 1, j] += f * v
    return img


def _split_rays(dx, dy):
    ydom = np.abs(dy) >= np.abs(dx)
    return np.flatnonzero(ydom), np.flatnonzero(~ydom)


def _joseph_forward_np(img, ox, oy, dx, dy, ps):
    h, w = img.shape
    cx, cy = 0.5 * (w - 1), 0.5 * (h - 1)
    out = np.zeros(ox.size)
    ys, xs = _split_rays(dx, dy)
    # (rays stepped over rows, sample along columns), then the transposed case
    for sel, n_steps, n_line, o_step, o_line, d_step, d_line, c_step, c_line, transpose in (
        (ys, h, w, oy, ox, dy, dx, cy, cx, False),
        (xs, w, h, ox, oy, dx, dy, cx, cy, True),
    ):
        if sel.size == 0:
            continue
        o_s, o_l, d_s, d_l = o_step[sel], o_line[sel], d_step[sel], d_line[sel]
        src = img.T if transpose else img
        acc = np.zeros(sel.size)
        for i in range(n_steps):
            t = ((i - c_step) * ps - o_s) / d_s
            c = (o_l + t * d_l) / ps + c_line
            j0 = np.floor(c).astype(np.int64)
            f = c - j0
            row = src[i]
            ok0 = (j0 >= 0) & (j0 < n_line)
            ok1 = (j0 + 1 >= 0) & (j0 + 1 < n_line)
            acc += np.where(ok0, (1.0 - f) * row[np.clip(j0, 0, n_line - 1)], 0.0)
            acc += np.where(ok1, f * row[np.clip(j0 + 1, 0, n_line - 1)], 0.0)
        out[sel] = acc * ps / np.abs(d_s)
    return out


def _joseph_adjoint_np(vals, ox, oy, dx, dy, ps, h, w):
    cx, cy = 0.5 * (w - 1), 0.5 * (h - 1)
    img = np.zeros((h, w))
    img_t = img.T  # view: writes land in img
    ys, xs = _split_rays(dx, dy)
    for sel, n_steps, n_line, o_step, o_line, d_step, d_line, c_step, c_line, dst in (
        (ys, h, w, oy, ox, dy, dx, cy, cx, img),
        (xs, w, h, ox, oy, dx, dy, cx, cy, img_t),
    ):
        if sel.size == 0:
            continue
        o_s, o_l, d_s, d_l = o_step[sel], o_line[sel], d_step[sel], d_line[sel]
        v = vals[sel] * ps / np.abs(d_s)
        for i in range(n_steps):
            t = ((i - c_step) * ps - o_s) / d_s
            c = (o_l + t * d_l) / ps + c_line
            j0 = np.floor(c).astype(np.int64)
            f = c - j0
            ok0 = (j0 >= 0) & (j0 < n_line)
            ok1 = (j0 + 1 >= 0) & (j0 + 1 < n_line)
            row = np.bincount(j0[ok0], weights=((1.0 - f) * v)[ok0], minlength=n_line)
            row += np.bincount(j0[ok1] + 1, weights=(f * v)[ok1], minlength=n_line)
            dst[i] += row[:n_line]
    return img


def joseph_forward(img, ox, oy, dx, dy, ps):
    if use_numba():
        return _joseph_forward_nb(img, ox, oy, dx, dy, ps)
    return _joseph_forward_np(img, ox, oy, dx, dy, ps)


def joseph_adjoint(vals, ox, oy, dx, dy, ps, h, w):
    if use_numba():
        return _joseph_adjoint_nb(vals, ox, oy, dx, dy, ps, h, w)
    return _joseph_adjoint_np(vals, ox, oy, dx, dy, ps, h, w)


# ---------------------------------------------------------------------------
# Pixel-driven backprojection
# ---------------------------------------------------------------------------


@njit
def _pixel_bp_nb(sino, cos_v, sin_v, ps, spacing, fan, src_dist, h, w):
    n, d = sino.shape
    cx = 0.5 * (w - 1)
    cy = 0.5 * (h - 1)
    dc = 0.5 * (d - 1)
    img = np.zeros((h, w))
    for v in range(n):
        c = cos_v[v]
        s = sin_v[v]
        for i in range(h):
            y = (i - cy) * ps
            for j in range(w):
                x = (j - cx) * ps
                if fan:
                    el = src_dist - (x * c + y * s)
                    a = src_dist * (y * c - x * s) / el
                    wt = (src_dist / el) ** 2
                else:
                    a = x * c + y * s
                    wt = 1.0
                u = a / spacing + dc
                k0 = int(math.floor(u))
                f = u - k0
                val = 0.0
                if 0 <= k0 < d:
                    val += (1.0 - f) * sino[v, k0]
                if 0 <= k0 + 1 < d:
                    val += f * sino[v, k0 + 1]
                img[i, j] += wt * val
    return img


@njit
def _pixel_bp_adjoint_nb(img, cos_v, sin_v, ps, spacing, fan, src_dist, d):
    h, w = img.shape
    n = cos_v.size
    cx = 0.5 * (w - 1)
    cy = 0.5 * (h - 1)
    dc = 0.5 * (d - 1)
    sino = np.zeros((n, d))
    for v in range(n):
        c = cos_v[v]
        s = sin_v[v]
        for i in range(h):
            y = (i - cy) * ps
            for j in range(w):
                x = (j - cx) * ps
                if fan:
                    el = src_dist - (x * c + y * s)
                    a = src_dist * (y * c - x * s) / el
                    wt = (src_dist / el) ** 2
                else:
                    a = x * c + y * s
                    wt = 1.0
                u = a / spacing + dc
                k0 = int(math.floor(u))
                f = u - k0
                g = wt * img[i, j]
                if 0 <= k0 < d:
                    sino[v, k0] += (1.0 - f) * g
                if 0 <= k0 + 1 < d:
                    sino[v, k0 + 1] += f * g
    return sino


def _pixel_coords(ps, h, w):
    y = (np.arange(h) - 0.5 * (h - 1)) * ps
    x = (np.arange(w) - 0.5 * (w - 1)) * ps
    return np.meshgrid(x, y)  # X, Y with shape (h, w)


def _pixel_map(X, Y, c, s, spacing, fan, src_dist, d):
    if fan:
        el = src_dist - (X * c + Y * s)
        a = src_dist * (Y * c - X * s) / el
        wt = (src_dist / el) ** 2
    else:
        a = X * c + Y * s
        wt = np.ones_like(a)
    u = a / spacing + 0.5 * (d - 1)
    k0 = np.floor(u).astype(np.int64)
    return k0, u - k0, wt


def _pixel_bp_np(sino, cos_v, sin_v, ps, spacing, fan, src_dist, h, w):
    n, d = sino.shape
    X, Y = _pixel_coords(ps, h, w)
    img = np.zeros((h, w))
    for v in range(n):
        k0, f, wt = _pixel_map(X, Y, cos_v[v], sin_v[v], spacing, fan, src_dist, d)
        row = sino[v]
        ok0 = (k0 >= 0) & (k0 < d)
        ok1 = (k0 + 1 >= 0) & (k0 + 1 < d)
        val = np.where(ok0, (1.0 - f) * row[np.clip(k0, 0, d - 1)], 0.0)
        val += np.where(ok1, f * row[np.clip(k0 + 1, 0, d - 1)], 0.0)
        img += wt * val
    return img


def _pixel_bp_adjoint_np(img, cos_v, sin_v, ps, spacing, fan, src_dist, d):
    h, w = img.shape
    n = cos_v.size
    X, Y = _pixel_coords(ps, h, w)
    sino = np.zeros((n, d))
    for v in range(n):
        k0, f, wt = _pixel_map(X, Y, cos_v[v], sin_v[v], spacing, fan, src_dist, d)
        g = wt * img
        ok0 = (k0 >= 0) & (k0 < d)
        ok1 = (k0 + 1 >= 0) & (k0 + 1 < d)
        row = np.bincount(k0[ok0], weights=((1.0 - f) * g)[ok0], minlength=d)
        row += np.bincount(k0[ok1] + 1, weights=(f * g)[ok1], minlength=d)
        sino[v] = row[:d]
    return sino


def pixel_backproject(sino, cos_v, sin_v, ps, spacing, fan, src_dist, h, w):
    if use_numba():
        return _pixel_bp_nb(sino, cos_v, sin_v, ps, spacing, fan, src_dist, h, w)
    return _pixel_bp_np(sino, cos_v, sin_v, ps, spacing, fan, src_dist, h, w)


def pixel_backproject_adjoint(img, cos_v, sin_v, ps, spacing, fan, src_dist, d):
    if use_numba():
        return _pixel_bp_adjoint_nb(img, cos_v, sin_v, ps, spacing, fan, src_dist, d)
    return _pixel_bp_adjoint_np(img, cos_v, sin_v, ps, spacing, fan, src_dist, d)
