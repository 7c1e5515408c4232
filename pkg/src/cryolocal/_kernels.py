"""Compiled inner loops shared by the projector, back-projector and patch sampler.

All coordinates handed to these kernels are *index* coordinates (centered
coordinate plus ``(n - 1) / 2``). Samples outside ``[0, n - 1]`` on any axis
are zero.
"""

import math

import numba
import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _corner(f, n):
    i0 = int(math.floor(f))
    if i0 > n - 2:
        i0 = n - 2
    if i0 < 0:
        i0 = 0
    return i0, f - i0


@njit(cache=True)
def trilinear(vol, fx, fy, fz):
    nx, ny, nz = vol.shape
    if not (0.0 <= fx <= nx - 1 and 0.0 <= fy <= ny - 1 and 0.0 <= fz <= nz - 1):
        return 0.0
    ix, wx = _corner(fx, nx)
    iy, wy = _corner(fy, ny)
    iz, wz = _corner(fz, nz)
    jx = min(ix + 1, nx - 1)
    jy = min(iy + 1, ny - 1)
    jz = min(iz + 1, nz - 1)
    c00 = vol[ix, iy, iz] * (1.0 - wx) + vol[jx, iy, iz] * wx
    c10 = vol[ix, jy, iz] * (1.0 - wx) + vol[jx, jy, iz] * wx
    c01 = vol[ix, iy, jz] * (1.0 - wx) + vol[jx, iy, jz] * wx
    c11 = vol[ix, jy, jz] * (1.0 - wx) + vol[jx, jy, jz] * wx
    c0 = c00 * (1.0 - wy) + c10 * wy
    c1 = c01 * (1.0 - wy) + c11 * wy
    return c0 * (1.0 - wz) + c1 * wz


@njit(cache=True)
def bilinear(img, fu, fv):
    nu, nv = img.shape
    if not (0.0 <= fu <= nu - 1 and 0.0 <= fv <= nv - 1):
        return 0.0
    iu, wu = _corner(fu, nu)
    iv, wv = _corner(fv, nv)
    ju = min(iu + 1, nu - 1)
    jv = min(iv + 1, nv - 1)
    a = img[iu, iv] * (1.0 - wu) + img[ju, iv] * wu
    b = img[iu, jv] * (1.0 - wu) + img[ju, jv] * wu
    return a * (1.0 - wv) + b * wv


@njit(cache=True)
def trilinear_points(vol, idx):
    out = np.empty(idx.shape[0])
    for k in range(idx.shape[0]):
        out[k] = trilinear(vol, idx[k, 0], idx[k, 1], idx[k, 2])
    return out


@njit(cache=True)
def bilinear_points(img, idx):
    out = np.empty(idx.shape[0])
    for k in range(idx.shape[0]):
        out[k] = bilinear(img, idx[k, 0], idx[k, 1])
    return out


@njit(cache=True, parallel=True)
def project(vol, cos_t, sin_t, det_u, det_v, step, t0, n_steps):
    """Midpoint-rule line integrals along (sin, 0, cos) through every detector pixel."""
    nx, ny, nz = vol.shape
    cx = 0.5 * (nx - 1)
    cy = 0.5 * (ny - 1)
    cz = 0.5 * (nz - 1)
    cu = 0.5 * (det_u - 1)
    cv = 0.5 * (det_v - 1)
    n_tilts = cos_t.shape[0]
    out = np.zeros((n_tilts, det_u, det_v))
    for job in prange(n_tilts * det_v):
        n = job // det_v
        iv = job % det_v
        c = cos_t[n]
        s = sin_t[n]
        fy = iv - cv + cy
        for iu in range(det_u):
            u = iu - cu
            acc = 0.0
            for k in range(n_steps):
                t = t0 + (k + 0.5) * step
                acc += trilinear(vol, u * c + t * s + cx, fy, -u * s + t * c + cz)
            out[n, iu, iv] = acc * step
    return out


@njit(cache=True, parallel=True)
def backproject(proj, cos_t, sin_t, weights, nx, ny, nz):
    n_tilts, det_u, det_v = proj.shape
    cx = 0.5 * (nx - 1)
    cy = 0.5 * (ny - 1)
    cz = 0.5 * (nz - 1)
    cu = 0.5 * (det_u - 1)
    cv = 0.5 * (det_v - 1)
    out = np.zeros((nx, ny, nz))
    for ix in prange(nx):
        rx = ix - cx
        for iy in range(ny):
            fv = iy - cy + cv
            for iz in range(nz):
                rz = iz - cz
                acc = 0.0
                for n in range(n_tilts):
                    fu = rx * cos_t[n] - rz * sin_t[n] + cu
                    acc += weights[n] * bilinear(proj[n], fu, fv)
                out[ix, iy, iz] = acc
    return out


@njit(cache=True, inline="always")
def _axis_taps(f0, delta, half, n, idx, w, ok):
    # taps for samples f0 - delta * i, i = -half..half; same rule as ``bilinear``
    for k in range(2 * half + 1):
        f = f0 - delta * (k - half)
        if 0.0 <= f <= n - 1:
            i0, wk = _corner(f, n)
            idx[k] = i0
            w[k] = wk
            ok[k] = True
        else:
            idx[k] = 0
            w[k] = 0.0
            ok[k] = False


@njit(cache=True, parallel=True)
def gather_patches(proj, cos_t, sin_t, points, half, delta, shift, inv_scale, out):
    """Fill ``out[b, :]`` with the tilt-major, row-major patch features of ``points[b]``.

    ``points`` are centered voxel coordinates; every sample is stored as
    ``(value - shift) * inv_scale``. ``out`` has shape ``(B, n_tilts * P * P)``.
    Equivalent to calling ``bilinear`` per sample, with taps hoisted per row
    and column of the patch.
    """
    n_tilts, det_u, det_v = proj.shape
    cu = 0.5 * (det_u - 1)
    cv = 0.5 * (det_v - 1)
    p = 2 * half + 1
    for b in prange(points.shape[0]):
        iu = np.empty(p, np.int64)
        wu = np.empty(p)
        oku = np.empty(p, np.bool_)
        iv = np.empty(p, np.int64)
        wv = np.empty(p)
        okv = np.empty(p, np.bool_)
        rx = points[b, 0]
        rz = points[b, 2]
        _axis_taps(points[b, 1] + cv, delta, half, det_v, iv, wv, okv)
        col = 0
        for n in range(n_tilts):
            _axis_taps(rx * cos_t[n] - rz * sin_t[n] + cu, delta, half, det_u, iu, wu, oku)
            img = proj[n]
            for i in range(p):
                if not oku[i]:
                    for j in range(p):
                        out[b, col] = (0.0 - shift) * inv_scale
                        col += 1
                    continue
                u0 = iu[i]
                u1 = min(u0 + 1, det_u - 1)
                a = wu[i]
                for j in range(p):
                    if okv[j]:
                        v0 = iv[j]
                        v1 = min(v0 + 1, det_v - 1)
                        c = wv[j]
                        lo = img[u0, v0] * (1.0 - a) + img[u1, v0] * a
                        hi = img[u0, v1] * (1.0 - a) + img[u1, v1] * a
                        val = lo * (1.0 - c) + hi * c
                    else:
                        val = 0.0
                    out[b, col] = (val - shift) * inv_scale
                    col += 1
    return out


@njit(cache=True)
def adam_update(p, g, m, v, beta1, beta2, lr, c1, c2, eps):
    """In-place Adam update of flat arrays; moments are kept in the parameter dtype."""
    pf = p.ravel()
    gf = g.ravel()
    mf = m.ravel()
    vf = v.ravel()
    one = beta1 / beta1
    step = lr / c1
    inv_c2 = one / c2
    for k in range(pf.size):
        gk = gf[k]
        mk = beta1 * mf[k] + (one - beta1) * gk
        vk = beta2 * vf[k] + (one - beta2) * (gk * gk)
        mf[k] = mk
        vf[k] = vk
        pf[k] -= step * mk / (np.sqrt(vk * inv_c2) + eps)


def set_threads(n):
    """Cap the number of worker threads used by the compiled kernels."""
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
