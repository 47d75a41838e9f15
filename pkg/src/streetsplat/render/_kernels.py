"""Numba kernels for projection, tile binning, compositing and their adjoints.

All kernels are single-threaded and visit pixels and Gaussians in a fixed
order, so float results are bitwise reproducible.
"""

import math

import numba
import numpy as np

DILATION = 0.3
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.999
CULL_SIGMA = 3.0
DEPTH_EPS = 1e-6
QUAT_EPS = 1e-8

_jit = numba.njit(cache=True, fastmath=False, nogil=True)


@_jit
def quat_to_rot(w, x, y, z):
    r = np.empty((3, 3))
    r[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[0, 1] = 2.0 * (x * y - w * z)
    r[0, 2] = 2.0 * (x * z + w * y)
    r[1, 0] = 2.0 * (x * y + w * z)
    r[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[1, 2] = 2.0 * (y * z - w * x)
    r[2, 0] = 2.0 * (x * z - w * y)
    r[2, 1] = 2.0 * (y * z + w * x)
    r[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return r


@_jit
def _unit_quat(q):
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n < QUAT_EPS:
        return 1.0, 0.0, 0.0, 0.0, n
    return q[0] / n, q[1] / n, q[2] / n, q[3] / n, n


@_jit
def _cov_cam(rw, quat, scale):
    """Camera-space covariance W R S S^T R^T W^T and the world-space factor M = R S."""
    w, x, y, z, _ = _unit_quat(quat)
    rq = quat_to_rot(w, x, y, z)
    m = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            m[i, j] = rq[i, j] * scale[j]
    sigma = m @ m.T
    return rw @ sigma @ rw.T, sigma, m, rq


@_jit
def preprocess(means, quats, scales, rw, tw, fx, fy, cx, cy, near, far, width, height):
    """Project every Gaussian; culled ones get ``valid = False`` and radius 0."""
    n = means.shape[0]
    xy = np.zeros((n, 2))
    conic = np.zeros((n, 3))
    cov2d = np.zeros((n, 3))
    depth = np.zeros(n)
    radius = np.zeros(n)
    valid = np.zeros(n, dtype=np.bool_)
    for g in range(n):
        px = rw[0, 0] * means[g, 0] + rw[0, 1] * means[g, 1] + rw[0, 2] * means[g, 2] + tw[0]
        py = rw[1, 0] * means[g, 0] + rw[1, 1] * means[g, 1] + rw[1, 2] * means[g, 2] + tw[1]
        pz = rw[2, 0] * means[g, 0] + rw[2, 1] * means[g, 1] + rw[2, 2] * means[g, 2] + tw[2]
        if not (pz > near and pz < far):
            continue
        cc, _, _, _ = _cov_cam(rw, quats[g], scales[g])
        j00 = fx / pz
        j02 = -fx * px / (pz * pz)
        j11 = fy / pz
        j12 = -fy * py / (pz * pz)
        # cov2d = J Sc J^T, J = [[j00, 0, j02], [0, j11, j12]]
        a = (j00 * j00 * cc[0, 0] + 2.0 * j00 * j02 * cc[0, 2] + j02 * j02 * cc[2, 2]) + DILATION
        b = (j00 * j11 * cc[0, 1] + j00 * j12 * cc[0, 2] + j02 * j11 * cc[2, 1] + j02 * j12 * cc[2, 2])
        c = (j11 * j11 * cc[1, 1] + 2.0 * j11 * j12 * cc[1, 2] + j12 * j12 * cc[2, 2]) + DILATION
        det = a * c - b * b
        if not det > 0.0:
            continue
        mid = 0.5 * (a + c)
        lam = mid + math.sqrt(max(0.25 * (a - c) * (a - c) + b * b, 0.0))
        r = CULL_SIGMA * math.sqrt(lam)
        u = fx * px / pz + cx
        v = fy * py / pz + cy
        if math.ceil(u - r) > width - 1 or math.floor(u + r) < 0:
            continue
        if math.ceil(v - r) > height - 1 or math.floor(v + r) < 0:
            continue
        xy[g, 0] = u
        xy[g, 1] = v
        cov2d[g, 0] = a
        cov2d[g, 1] = b
        cov2d[g, 2] = c
        conic[g, 0] = c / det
        conic[g, 1] = -b / det
        conic[g, 2] = a / det
        depth[g] = pz
        radius[g] = r
        valid[g] = True
    return xy, conic, cov2d, depth, radius, valid


@_jit
def _pixel_span(center, r, size):
    lo = max(int(math.ceil(center - r)), 0)
    hi = min(int(math.floor(center + r)), size - 1)
    return lo, hi


@_jit
def bin_tiles(order, xy, radius, width, height, tile):
    """Per-tile Gaussian lists; ``order`` is the global front-to-back order."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    counts = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    for g in order:
        c0, c1 = _pixel_span(xy[g, 0], radius[g], width)
        r0, r1 = _pixel_span(xy[g, 1], radius[g], height)
        if c0 > c1 or r0 > r1:
            continue
        for ty in range(r0 // tile, r1 // tile + 1):
            for tx in range(c0 // tile, c1 // tile + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    lists = np.empty(offsets[-1], dtype=np.int64)
    for g in order:
        c0, c1 = _pixel_span(xy[g, 0], radius[g], width)
        r0, r1 = _pixel_span(xy[g, 1], radius[g], height)
        if c0 > c1 or r0 > r1:
            continue
        for ty in range(r0 // tile, r1 // tile + 1):
            for tx in range(c0 // tile, c1 // tile + 1):
                t = ty * tiles_x + tx
                lists[fill[t]] = g
                fill[t] += 1
    return offsets, lists


@_jit
def _alpha_at(g, fx_, fy_, xy, conic, radius, opac):
    """Returns (a, gauss, clamped, dx, dy); a < 0 marks a skipped pair."""
    dx = fx_ - xy[g, 0]
    dy = fy_ - xy[g, 1]
    if dx * dx + dy * dy > radius[g] * radius[g]:
        return -1.0, 0.0, False, dx, dy
    power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) - conic[g, 1] * dx * dy
    gauss = math.exp(power)
    a = opac[g] * gauss
    clamped = False
    if a > ALPHA_MAX:
        a = ALPHA_MAX
        clamped = True
    if a < ALPHA_MIN:
        return -1.0, gauss, clamped, dx, dy
    return a, gauss, clamped, dx, dy


@_jit
def rasterize(offsets, lists, xy, conic, radius, depth, opac, colors, bg, width, height, tile,
              out_color, out_depth, out_alpha):
    tiles_x = (width + tile - 1) // tile
    n_tiles = offsets.shape[0] - 1
    for t in range(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        start = offsets[t]
        stop = offsets[t + 1]
        for row in range(ty * tile, min((ty + 1) * tile, height)):
            for col in range(tx * tile, min((tx + 1) * tile, width)):
                trans = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                dsum = 0.0
                for k in range(start, stop):
                    g = lists[k]
                    a, _, _, _, _ = _alpha_at(g, float(col), float(row), xy, conic, radius, opac)
                    if a < 0.0:
                        continue
                    w = a * trans
                    c0 += colors[g, 0] * w
                    c1 += colors[g, 1] * w
                    c2 += colors[g, 2] * w
                    dsum += depth[g] * w
                    trans = trans * (1.0 - a)
                alpha = 1.0 - trans
                out_color[row, col, 0] = c0 + bg[0] * trans
                out_color[row, col, 1] = c1 + bg[1] * trans
                out_color[row, col, 2] = c2 + bg[2] * trans
                out_alpha[row, col] = alpha
                out_depth[row, col] = dsum / max(alpha, DEPTH_EPS)


@_jit
def rasterize_backward(offsets, lists, xy, conic, radius, depth, opac, colors, bg, width, height,
                       tile, grad_color, grad_depth, grad_alpha,
                       g_xy, g_conic, g_depth, g_opac, g_color):
    """Adjoint of ``rasterize``; accumulates into the ``g_*`` per-Gaussian buffers."""
    tiles_x = (width + tile - 1) // tile
    n_tiles = offsets.shape[0] - 1
    for t in range(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        start = offsets[t]
        stop = offsets[t + 1]
        m = stop - start
        ids = np.empty(m, dtype=np.int64)
        a_buf = np.empty(m)
        t_buf = np.empty(m)
        gs_buf = np.empty(m)
        dx_buf = np.empty(m)
        dy_buf = np.empty(m)
        cl_buf = np.empty(m, dtype=np.bool_)
        for row in range(ty * tile, min((ty + 1) * tile, height)):
            for col in range(tx * tile, min((tx + 1) * tile, width)):
                # forward replay
                trans = 1.0
                dsum = 0.0
                n = 0
                for k in range(start, stop):
                    g = lists[k]
                    a, gauss, clamped, dx, dy = _alpha_at(g, float(col), float(row), xy, conic,
                                                          radius, opac)
                    if a < 0.0:
                        continue
                    ids[n] = g
                    a_buf[n] = a
                    t_buf[n] = trans
                    gs_buf[n] = gauss
                    dx_buf[n] = dx
                    dy_buf[n] = dy
                    cl_buf[n] = clamped
                    dsum += depth[g] * a * trans
                    trans = trans * (1.0 - a)
                    n += 1
                alpha = 1.0 - trans
                gc0 = grad_color[row, col, 0]
                gc1 = grad_color[row, col, 1]
                gc2 = grad_color[row, col, 2]
                if alpha > DEPTH_EPS:
                    g_dsum = grad_depth[row, col] / alpha
                    g_alpha = grad_alpha[row, col] - grad_depth[row, col] * dsum / (alpha * alpha)
                else:
                    g_dsum = grad_depth[row, col] / DEPTH_EPS
                    g_alpha = grad_alpha[row, col]
                # back-to-front: b* is what lies behind entry i, normalized by T_{i+1}
                b0 = bg[0]
                b1 = bg[1]
                b2 = bg[2]
                bz = 0.0
                behind = 1.0
                for i in range(n - 1, -1, -1):
                    g = ids[i]
                    a = a_buf[i]
                    tr = t_buf[i]
                    w = a * tr
                    g_color[g, 0] += gc0 * w
                    g_color[g, 1] += gc1 * w
                    g_color[g, 2] += gc2 * w
                    g_depth[g] += g_dsum * w
                    d_a = tr * (gc0 * (colors[g, 0] - b0) + gc1 * (colors[g, 1] - b1)
                                + gc2 * (colors[g, 2] - b2) + g_dsum * (depth[g] - bz))
                    d_a += g_alpha * tr * behind
                    b0 = colors[g, 0] * a + (1.0 - a) * b0
                    b1 = colors[g, 1] * a + (1.0 - a) * b1
                    b2 = colors[g, 2] * a + (1.0 - a) * b2
                    bz = depth[g] * a + (1.0 - a) * bz
                    behind = behind * (1.0 - a)
                    if cl_buf[i]:
                        continue
                    gauss = gs_buf[i]
                    g_opac[g] += d_a * gauss
                    d_power = d_a * opac[g] * gauss
                    dx = dx_buf[i]
                    dy = dy_buf[i]
                    g_xy[g, 0] += d_power * (conic[g, 0] * dx + conic[g, 1] * dy)
                    g_xy[g, 1] += d_power * (conic[g, 1] * dx + conic[g, 2] * dy)
                    g_conic[g, 0] += -0.5 * d_power * dx * dx
                    g_conic[g, 1] += -d_power * dx * dy
                    g_conic[g, 2] += -0.5 * d_power * dy * dy


@_jit
def preprocess_backward(means, quats, scales, rw, tw, fx, fy, valid, conic,
                        g_xy, g_conic, g_depth, g_means, g_quats, g_scales):
    n = means.shape[0]
    for g in range(n):
        if not valid[g]:
            continue
        px = rw[0, 0] * means[g, 0] + rw[0, 1] * means[g, 1] + rw[0, 2] * means[g, 2] + tw[0]
        py = rw[1, 0] * means[g, 0] + rw[1, 1] * means[g, 1] + rw[1, 2] * means[g, 2] + tw[1]
        pz = rw[2, 0] * means[g, 0] + rw[2, 1] * means[g, 1] + rw[2, 2] * means[g, 2] + tw[2]
        cc, sigma, m, rq = _cov_cam(rw, quats[g], scales[g])

        # conic = inv(cov): dCov = -A Gc A with the off-diagonal gradient split in half
        a00 = conic[g, 0]
        a01 = conic[g, 1]
        a11 = conic[g, 2]
        gc00 = g_conic[g, 0]
        gc01 = 0.5 * g_conic[g, 1]
        gc11 = g_conic[g, 2]
        # A Gc
        p00 = a00 * gc00 + a01 * gc01
        p01 = a00 * gc01 + a01 * gc11
        p10 = a01 * gc00 + a11 * gc01
        p11 = a01 * gc01 + a11 * gc11
        dcov = np.empty((2, 2))
        dcov[0, 0] = -(p00 * a00 + p01 * a01)
        dcov[0, 1] = -(p00 * a01 + p01 * a11)
        dcov[1, 0] = -(p10 * a00 + p11 * a01)
        dcov[1, 1] = -(p10 * a01 + p11 * a11)
        sym = 0.5 * (dcov[0, 1] + dcov[1, 0])
        dcov[0, 1] = sym
        dcov[1, 0] = sym

        jac = np.zeros((2, 3))
        jac[0, 0] = fx / pz
        jac[0, 2] = -fx * px / (pz * pz)
        jac[1, 1] = fy / pz
        jac[1, 2] = -fy * py / (pz * pz)
        tmat = jac @ rw
        d_sigma = tmat.T @ dcov @ tmat
        d_jac = 2.0 * (dcov @ jac @ cc)

        gx = g_xy[g, 0]
        gy = g_xy[g, 1]
        d_px = gx * fx / pz - d_jac[0, 2] * fx / (pz * pz)
        d_py = gy * fy / pz - d_jac[1, 2] * fy / (pz * pz)
        d_pz = (-gx * fx * px / (pz * pz) - gy * fy * py / (pz * pz) + g_depth[g]
                - d_jac[0, 0] * fx / (pz * pz) + d_jac[0, 2] * 2.0 * fx * px / (pz * pz * pz)
                - d_jac[1, 1] * fy / (pz * pz) + d_jac[1, 2] * 2.0 * fy * py / (pz * pz * pz))
        for k in range(3):
            g_means[g, k] += rw[0, k] * d_px + rw[1, k] * d_py + rw[2, k] * d_pz

        # sigma = M M^T
        d_m = 2.0 * (0.5 * (d_sigma + d_sigma.T)) @ m
        d_r = np.empty((3, 3))
        for j in range(3):
            s_acc = 0.0
            for i in range(3):
                d_r[i, j] = d_m[i, j] * scales[g, j]
                s_acc += d_m[i, j] * rq[i, j]
            g_scales[g, j] += s_acc

        w, x, y, z, norm = _unit_quat(quats[g])
        if norm < QUAT_EPS:
            continue
        dw = 2.0 * (-z * d_r[0, 1] + y * d_r[0, 2] + z * d_r[1, 0] - x * d_r[1, 2]
                    - y * d_r[2, 0] + x * d_r[2, 1])
        dqx = 2.0 * (y * d_r[0, 1] + z * d_r[0, 2] + y * d_r[1, 0] - 2.0 * x * d_r[1, 1]
                     - w * d_r[1, 2] + z * d_r[2, 0] + w * d_r[2, 1] - 2.0 * x * d_r[2, 2])
        dqy = 2.0 * (-2.0 * y * d_r[0, 0] + x * d_r[0, 1] + w * d_r[0, 2] + x * d_r[1, 0]
                     + z * d_r[1, 2] - w * d_r[2, 0] + z * d_r[2, 1] - 2.0 * y * d_r[2, 2])
        dqz = 2.0 * (-2.0 * z * d_r[0, 0] - w * d_r[0, 1] + x * d_r[0, 2] + w * d_r[1, 0]
                     - 2.0 * z * d_r[1, 1] + y * d_r[1, 2] + x * d_r[2, 0] + y * d_r[2, 1])
        dot = w * dw + x * dqx + y * dqy + z * dqz
        g_quats[g, 0] += (dw - w * dot) / norm
        g_quats[g, 1] += (dqx - x * dot) / norm
        g_quats[g, 2] += (dqy - y * dot) / norm
        g_quats[g, 3] += (dqz - z * dot) / norm
