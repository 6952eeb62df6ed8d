# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``; same semantics, same arithmetic."""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, sqrt, exp, floor, ceil, M_PI

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI


cdef inline double _pixel(const double[:, ::1] img, Py_ssize_t r, Py_ssize_t c) noexcept nogil:
    if r < 0 or c < 0 or r >= img.shape[0] or c >= img.shape[1]:
        return 0.0
    return img[r, c]


cdef inline double _bilinear(const double[:, ::1] img, double x, double y) noexcept nogil:
    cdef double x0 = floor(x)
    cdef double y0 = floor(y)
    cdef double fx = x - x0
    cdef double fy = y - y0
    cdef Py_ssize_t xi = <Py_ssize_t>x0
    cdef Py_ssize_t yi = <Py_ssize_t>y0
    return ((1.0 - fy) * (1.0 - fx) * _pixel(img, yi, xi)
            + (1.0 - fy) * fx * _pixel(img, yi, xi + 1)
            + fy * (1.0 - fx) * _pixel(img, yi + 1, xi)
            + fy * fx * _pixel(img, yi + 1, xi + 1))


def sift_histograms(img, centers, int patch, int cells, int bins):
    cdef const double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef const double[:, ::1] ctr = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t l = ctr.shape[0]
    cdef int P = patch
    cdef int dim = cells * cells * bins
    out = np.zeros((l, dim), dtype=np.float64)
    cdef double[:, ::1] hist = out
    samples_arr = np.empty((P + 2, P + 2), dtype=np.float64)
    cdef double[:, ::1] s = samples_arr
    gw_arr = np.empty((P, P), dtype=np.float64)
    cdef double[:, ::1] gw = gw_arr
    cdef double half = (P - 1) / 2.0
    cdef double sig2 = (P / 2.0) * (P / 2.0)
    cdef double cw = P / <double>cells
    cdef double obw = TWO_PI / bins
    cdef Py_ssize_t k, a, b, dyc, dxc, ry, rx
    cdef int o0, o1
    cdef double u, v, gx, gy, mag, w, ori, ob, of, cy, cx, cyf, cxf, wy, wx, wsp, dxo, dyo
    cdef double cy0, cx0
    cdef Py_ssize_t base

    for a in range(P):
        for b in range(P):
            dyo = a - half
            dxo = b - half
            gw[a, b] = exp(-(dyo * dyo + dxo * dxo) / (2.0 * sig2))

    with nogil:
        for k in range(l):
            u = ctr[k, 0]
            v = ctr[k, 1]
            for a in range(P + 2):
                for b in range(P + 2):
                    s[a, b] = _bilinear(im, u + ((b - 1) - half), v + ((a - 1) - half))
            for a in range(P):
                cy = (a + 0.5) / cw - 0.5
                cy0 = floor(cy)
                cyf = cy - cy0
                for b in range(P):
                    gx = (s[a + 1, b + 2] - s[a + 1, b]) / 2.0
                    gy = (s[a + 2, b + 1] - s[a, b + 1]) / 2.0
                    mag = sqrt(gx * gx + gy * gy)
                    if mag == 0.0:
                        continue
                    w = mag * gw[a, b]
                    ori = atan2(gy, gx)
                    if ori < 0.0:
                        ori = ori + TWO_PI
                    ob = ori / obw
                    o0 = <int>floor(ob)
                    of = ob - floor(ob)
                    o0 = o0 % bins
                    o1 = (o0 + 1) % bins
                    cx = (b + 0.5) / cw - 0.5
                    cx0 = floor(cx)
                    cxf = cx - cx0
                    for dyc in range(2):
                        ry = <Py_ssize_t>cy0 + dyc
                        if ry < 0 or ry >= cells:
                            continue
                        wy = cyf if dyc else 1.0 - cyf
                        for dxc in range(2):
                            rx = <Py_ssize_t>cx0 + dxc
                            if rx < 0 or rx >= cells:
                                continue
                            wx = cxf if dxc else 1.0 - cxf
                            wsp = w * wy * wx
                            base = (ry * cells + rx) * bins
                            hist[k, base + o0] += wsp * (1.0 - of)
                            hist[k, base + o1] += wsp * of
    return out


def rasterize(xy, depth, shade, faces, int width, int height, double background=0.0):
    cdef const double[:, ::1] p = np.ascontiguousarray(xy, dtype=np.float64)
    cdef const double[::1] dz = np.ascontiguousarray(depth, dtype=np.float64)
    cdef const double[::1] sh = np.ascontiguousarray(shade, dtype=np.float64)
    cdef const cnp.int64_t[:, ::1] f = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
    img_arr = np.full((height, width), background, dtype=np.float64)
    zb_arr = np.full((height, width), -np.inf, dtype=np.float64)
    cdef double[:, ::1] img = img_arr
    cdef double[:, ::1] zb = zb_arr
    cdef Py_ssize_t t, r, c, i0, i1, i2
    cdef double x0, y0, x1, y1, x2, y2, area, px, py, w0, w1, w2, z
    cdef Py_ssize_t cmin, cmax, rmin, rmax
    with nogil:
        for t in range(f.shape[0]):
            i0 = f[t, 0]
            i1 = f[t, 1]
            i2 = f[t, 2]
            x0 = p[i0, 0]; y0 = p[i0, 1]
            x1 = p[i1, 0]; y1 = p[i1, 1]
            x2 = p[i2, 0]; y2 = p[i2, 1]
            area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            if area == 0.0:
                continue
            cmin = <Py_ssize_t>ceil(min(x0, min(x1, x2)))
            cmax = <Py_ssize_t>floor(max(x0, max(x1, x2)))
            rmin = <Py_ssize_t>ceil(min(y0, min(y1, y2)))
            rmax = <Py_ssize_t>floor(max(y0, max(y1, y2)))
            if cmin < 0:
                cmin = 0
            if rmin < 0:
                rmin = 0
            if cmax > width - 1:
                cmax = width - 1
            if rmax > height - 1:
                rmax = height - 1
            for r in range(rmin, rmax + 1):
                py = <double>r
                for c in range(cmin, cmax + 1):
                    px = <double>c
                    w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
                    w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
                    w2 = 1.0 - w0 - w1
                    if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                        continue
                    z = w0 * dz[i0] + w1 * dz[i1] + w2 * dz[i2]
                    if z > zb[r, c]:
                        zb[r, c] = z
                        img[r, c] = w0 * sh[i0] + w1 * sh[i1] + w2 * sh[i2]
    return img_arr, zb_arr
