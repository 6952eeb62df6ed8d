"""Pure-numpy kernels; the reference semantics for ``_ckernels.pyx``.

Both backends must agree to floating-point round-off.  Conventions:

* images are ``(height, width)`` float64 arrays; pixel ``(row, col)`` sits
  at ``(u, v) = (col, row)``; samples outside the image read 0;
* a descriptor patch of side ``P`` samples a ``P x P`` grid centred on
  ``(u, v)`` with unit spacing, plus a one-sample border for central
  differences.
"""
from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def _bilinear(img, x, y):
    h, w = img.shape
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(x.shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.zeros(x.shape)
            vals[ok] = img[yi[ok], xi[ok]]
            out += wy * wx * vals
    return out


def sift_histograms(img, centers, patch, cells, bins):
    """Raw (un-normalised) gradient-orientation histograms, shape (l, cells*cells*bins)."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
    l = centers.shape[0]
    P = int(patch)
    half = (P - 1) / 2.0
    grid = np.arange(-1, P + 1, dtype=np.float64) - half
    xs = centers[:, 0, None, None] + grid[None, None, :]
    ys = centers[:, 1, None, None] + grid[None, :, None]
    xs = np.broadcast_to(xs, (l, P + 2, P + 2))
    ys = np.broadcast_to(ys, (l, P + 2, P + 2))
    s = _bilinear(img, xs, ys)

    gx = (s[:, 1:-1, 2:] - s[:, 1:-1, :-2]) / 2.0
    gy = (s[:, 2:, 1:-1] - s[:, :-2, 1:-1]) / 2.0
    mag = np.sqrt(gx * gx + gy * gy)

    off = np.arange(P, dtype=np.float64) - half
    sig2 = (P / 2.0) ** 2
    gw = np.exp(-(off[:, None] ** 2 + off[None, :] ** 2) / (2.0 * sig2))
    weight = mag * gw[None]

    ori = np.arctan2(gy, gx)
    ori = np.where(ori < 0.0, ori + TWO_PI, ori)
    ob = ori / (TWO_PI / bins)
    o0f = np.floor(ob)
    of = ob - o0f
    o0 = o0f.astype(np.int64) % bins
    o1 = (o0 + 1) % bins

    cw = P / float(cells)
    cpos = (np.arange(P, dtype=np.float64) + 0.5) / cw - 0.5
    c0f = np.floor(cpos)
    cf = cpos - c0f
    c0 = c0f.astype(np.int64)

    dim = cells * cells * bins
    hist = np.zeros(l * dim)
    lidx = np.arange(l)[:, None, None] * dim
    nz = mag != 0.0
    for dyc in (0, 1):
        ry = c0 + dyc
        wy = cf if dyc else 1.0 - cf
        oky = (ry >= 0) & (ry < cells)
        for dxc in (0, 1):
            rx = c0 + dxc
            wx = cf if dxc else 1.0 - cf
            okx = (rx >= 0) & (rx < cells)
            ok = nz & oky[None, :, None] & okx[None, None, :]
            wsp = weight * wy[None, :, None] * wx[None, None, :]
            base = lidx + (ry[None, :, None] * cells + rx[None, None, :]) * bins
            for obin, wo in ((o0, 1.0 - of), (o1, of)):
                idx = (base + obin)[ok]
                hist += np.bincount(idx, weights=(wsp * wo)[ok], minlength=l * dim)
    return hist.reshape(l, dim)


def rasterize(xy, depth, shade, faces, width, height, background=0.0):
    """Z-buffered Gouraud rasterisation; larger depth is nearer the camera.

    Returns ``(image, zbuffer)``; uncovered pixels hold ``background`` and
    ``-inf`` respectively.  Triangles are drawn in order with a strict depth
    test, so earlier triangles win exact ties.
    """
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    shade = np.ascontiguousarray(shade, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    img = np.full((height, width), float(background))
    zbuf = np.full((height, width), -np.inf)
    for f in faces:
        i0, i1, i2 = int(f[0]), int(f[1]), int(f[2])
        x0, y0 = xy[i0]
        x1, y1 = xy[i1]
        x2, y2 = xy[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        cmin = max(int(np.ceil(min(x0, x1, x2))), 0)
        cmax = min(int(np.floor(max(x0, x1, x2))), width - 1)
        rmin = max(int(np.ceil(min(y0, y1, y2))), 0)
        rmax = min(int(np.floor(max(y0, y1, y2))), height - 1)
        if cmin > cmax or rmin > rmax:
            continue
        px = np.arange(cmin, cmax + 1, dtype=np.float64)[None, :]
        py = np.arange(rmin, rmax + 1, dtype=np.float64)[:, None]
        w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
        w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue
        z = w0 * depth[i0] + w1 * depth[i1] + w2 * depth[i2]
        zb = zbuf[rmin:rmax + 1, cmin:cmax + 1]
        win = inside & (z > zb)
        if not win.any():
            continue
        c = w0 * shade[i0] + w1 * shade[i1] + w2 * shade[i2]
        zb[win] = z[win]
        img[rmin:rmax + 1, cmin:cmax + 1][win] = c[win]
    return img, zbuf
