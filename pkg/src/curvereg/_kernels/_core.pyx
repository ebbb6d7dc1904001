# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; semantics mirror curvereg._kernels._py exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, rint, sqrt

cnp.import_array()

cdef double _SNAP = 1e-7


def trilinear_gather(const float[:, :, ::1] data, const double[:, ::1] coords, double fill):
    cdef Py_ssize_t n = coords.shape[0]
    cdef Py_ssize_t nz = data.shape[0], ny = data.shape[1], nx = data.shape[2]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, ix, iy, iz
    cdef double vx, vy, vz, rx, ry, rz, fx, fy, fz
    cdef double c00, c10, c01, c11, c0, c1

    with nogil:
        for i in range(n):
            vx = coords[i, 0]
            vy = coords[i, 1]
            vz = coords[i, 2]
            rx = rint(vx)
            ry = rint(vy)
            rz = rint(vz)
            if fabs(vx - rx) < _SNAP:
                vx = rx
            if fabs(vy - ry) < _SNAP:
                vy = ry
            if fabs(vz - rz) < _SNAP:
                vz = rz
            if (vx < 0.0 or vx > nx - 1 or vy < 0.0 or vy > ny - 1
                    or vz < 0.0 or vz > nz - 1):
                out[i] = fill
                continue
            ix = <Py_ssize_t>floor(vx)
            iy = <Py_ssize_t>floor(vy)
            iz = <Py_ssize_t>floor(vz)
            if ix > nx - 2:
                ix = nx - 2
            if iy > ny - 2:
                iy = ny - 2
            if iz > nz - 2:
                iz = nz - 2
            fx = vx - ix
            fy = vy - iy
            fz = vz - iz
            c00 = data[iz, iy, ix] * (1.0 - fx) + data[iz, iy, ix + 1] * fx
            c10 = data[iz, iy + 1, ix] * (1.0 - fx) + data[iz, iy + 1, ix + 1] * fx
            c01 = data[iz + 1, iy, ix] * (1.0 - fx) + data[iz + 1, iy, ix + 1] * fx
            c11 = data[iz + 1, iy + 1, ix] * (1.0 - fx) + data[iz + 1, iy + 1, ix + 1] * fx
            c0 = c00 * (1.0 - fy) + c10 * fy
            c1 = c01 * (1.0 - fy) + c11 * fy
            out[i] = c0 * (1.0 - fz) + c1 * fz
    return out_arr


def tps_apply_many(const double[:, ::1] points, const double[:, ::1] controls,
                   const double[:, ::1] weights, const double[:, ::1] linear,
                   const double[::1] translation):
    cdef Py_ssize_t m = points.shape[0], nc = controls.shape[0]
    out_arr = np.empty((m, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double px, py, pz, ox, oy, oz, dx, dy, dz, r

    with nogil:
        for i in range(m):
            px = points[i, 0]
            py = points[i, 1]
            pz = points[i, 2]
            ox = linear[0, 0] * px + linear[0, 1] * py + linear[0, 2] * pz + translation[0]
            oy = linear[1, 0] * px + linear[1, 1] * py + linear[1, 2] * pz + translation[1]
            oz = linear[2, 0] * px + linear[2, 1] * py + linear[2, 2] * pz + translation[2]
            for j in range(nc):
                dx = px - controls[j, 0]
                dy = py - controls[j, 1]
                dz = pz - controls[j, 2]
                r = sqrt(dx * dx + dy * dy + dz * dz)
                ox += weights[j, 0] * r
                oy += weights[j, 1] * r
                oz += weights[j, 2] * r
            out[i, 0] = ox
            out[i, 1] = oy
            out[i, 2] = oz
    return out_arr


def tps_inverse_many(const double[:, ::1] targets, const double[:, ::1] controls,
                     const double[:, ::1] weights, const double[:, ::1] linear,
                     const double[::1] translation, double damping, double tol_mm,
                     int max_iter):
    cdef Py_ssize_t m = targets.shape[0], nc = controls.shape[0]
    out_arr = np.empty((m, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef int it, n_fail = 0
    cdef bint converged
    cdef double tol2 = tol_mm * tol_mm
    cdef double tx, ty, tz, qx, qy, qz, ax, ay, az, dx, dy, dz, r, rx, ry, rz

    with nogil:
        for i in range(m):
            tx = targets[i, 0]
            ty = targets[i, 1]
            tz = targets[i, 2]
            qx = tx
            qy = ty
            qz = tz
            converged = False
            for it in range(max_iter + 1):
                ax = linear[0, 0] * qx + linear[0, 1] * qy + linear[0, 2] * qz + translation[0]
                ay = linear[1, 0] * qx + linear[1, 1] * qy + linear[1, 2] * qz + translation[1]
                az = linear[2, 0] * qx + linear[2, 1] * qy + linear[2, 2] * qz + translation[2]
                for j in range(nc):
                    dx = qx - controls[j, 0]
                    dy = qy - controls[j, 1]
                    dz = qz - controls[j, 2]
                    r = sqrt(dx * dx + dy * dy + dz * dz)
                    ax += weights[j, 0] * r
                    ay += weights[j, 1] * r
                    az += weights[j, 2] * r
                rx = ax - tx
                ry = ay - ty
                rz = az - tz
                if rx * rx + ry * ry + rz * rz <= tol2:
                    converged = True
                    break
                if it == max_iter:
                    break
                qx -= damping * rx
                qy -= damping * ry
                qz -= damping * rz
            if not converged:
                n_fail += 1
            out[i, 0] = qx
            out[i, 1] = qy
            out[i, 2] = qz
    return out_arr, n_fail


def pool_cell_stats(const float[:, :, ::1] vol, spacing, cell):
    cdef Py_ssize_t nz = vol.shape[0], ny = vol.shape[1], nx = vol.shape[2]
    cdef double sx = spacing[0], sy = spacing[1], sz = spacing[2]
    cdef Py_ssize_t cx = cell[0], cy = cell[1], cz = cell[2]
    cdef Py_ssize_t ncx = (nx + cx - 1) // cx
    cdef Py_ssize_t ncy = (ny + cy - 1) // cy
    cdef Py_ssize_t ncz = (nz + cz - 1) // cz
    out_arr = np.zeros((ncx * ncy * ncz, 5), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cnt_arr = np.zeros(ncx * ncy * ncz, dtype=np.float64)
    cdef double[::1] cnt = cnt_arr
    cdef Py_ssize_t ix, iy, iz, row
    cdef double v, gx, gy, gz_

    with nogil:
        for iz in range(nz):
            for iy in range(ny):
                for ix in range(nx):
                    v = vol[iz, iy, ix]
                    # differences in double precision, matching the fallback
                    if ix == 0:
                        gx = (<double>vol[iz, iy, 1] - <double>vol[iz, iy, 0]) / sx
                    elif ix == nx - 1:
                        gx = (<double>vol[iz, iy, nx - 1] - <double>vol[iz, iy, nx - 2]) / sx
                    else:
                        gx = (<double>vol[iz, iy, ix + 1] - <double>vol[iz, iy, ix - 1]) / (2.0 * sx)
                    if iy == 0:
                        gy = (<double>vol[iz, 1, ix] - <double>vol[iz, 0, ix]) / sy
                    elif iy == ny - 1:
                        gy = (<double>vol[iz, ny - 1, ix] - <double>vol[iz, ny - 2, ix]) / sy
                    else:
                        gy = (<double>vol[iz, iy + 1, ix] - <double>vol[iz, iy - 1, ix]) / (2.0 * sy)
                    if iz == 0:
                        gz_ = (<double>vol[1, iy, ix] - <double>vol[0, iy, ix]) / sz
                    elif iz == nz - 1:
                        gz_ = (<double>vol[nz - 1, iy, ix] - <double>vol[nz - 2, iy, ix]) / sz
                    else:
                        gz_ = (<double>vol[iz + 1, iy, ix] - <double>vol[iz - 1, iy, ix]) / (2.0 * sz)
                    row = (iz // cz) * ncy * ncx + (iy // cy) * ncx + (ix // cx)
                    cnt[row] += 1.0
                    out[row, 0] += v
                    out[row, 1] += v * v
                    out[row, 2] += gx
                    out[row, 3] += gy
                    out[row, 4] += gz_

        for row in range(ncx * ncy * ncz):
            out[row, 0] /= cnt[row]
            v = out[row, 1] / cnt[row] - out[row, 0] * out[row, 0]
            out[row, 1] = sqrt(v) if v > 0.0 else 0.0
            out[row, 2] /= cnt[row]
            out[row, 3] /= cnt[row]
            out[row, 4] /= cnt[row]
    return out_arr
