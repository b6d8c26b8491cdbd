"""numba @njit kernel implementations.

Loop twins of numpy_impl with identical signatures and accumulation
order.  Compiled lazily on first call; cache=True persists the compiled
artifacts next to the package.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def spring_energy(pos, edges, rest, stiff, masses, gravity):
    n = pos.shape[0]
    m = edges.shape[0]
    min_len = np.inf
    elastic = 0.0
    for s in range(m):
        a = edges[s, 0]
        b = edges[s, 1]
        dx = pos[a, 0] - pos[b, 0]
        dy = pos[a, 1] - pos[b, 1]
        dz = pos[a, 2] - pos[b, 2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        if length < min_len:
            min_len = length
        stretch = length - rest[s]
        elastic += 0.5 * stiff[s] * stretch * stretch
    grav = 0.0
    for i in range(n):
        grav -= masses[i] * (pos[i, 0] * gravity[0] + pos[i, 1] * gravity[1]
                             + pos[i, 2] * gravity[2])
    return elastic + grav, min_len


@njit(cache=True)
def spring_gradient(pos, edges, rest, stiff, masses, gravity):
    n = pos.shape[0]
    m = edges.shape[0]
    grad = np.empty((n, 3))
    for i in range(n):
        grad[i, 0] = -masses[i] * gravity[0]
        grad[i, 1] = -masses[i] * gravity[1]
        grad[i, 2] = -masses[i] * gravity[2]
    min_len = np.inf
    if m == 0:
        return grad, min_len
    for s in range(m):
        a = edges[s, 0]
        b = edges[s, 1]
        dx = pos[a, 0] - pos[b, 0]
        dy = pos[a, 1] - pos[b, 1]
        dz = pos[a, 2] - pos[b, 2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        if length < min_len:
            min_len = length
        if length < 1e-12:
            continue
        c = stiff[s] * (length - rest[s]) / length
        grad[a, 0] += c * dx
        grad[a, 1] += c * dy
        grad[a, 2] += c * dz
        grad[b, 0] -= c * dx
        grad[b, 1] -= c * dy
        grad[b, 2] -= c * dz
    return grad, min_len


@njit(cache=True)
def spring_hessian(pos, edges, rest, stiff, n):
    H = np.zeros((3 * n, 3 * n))
    m = edges.shape[0]
    for s in range(m):
        a = edges[s, 0]
        b = edges[s, 1]
        dx = pos[a, 0] - pos[b, 0]
        dy = pos[a, 1] - pos[b, 1]
        dz = pos[a, 2] - pos[b, 2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        if length < 1e-12:
            length = 1e-12
        u = np.empty(3)
        u[0] = dx / length
        u[1] = dy / length
        u[2] = dz / length
        k = stiff[s]
        t = 1.0 - rest[s] / length
        ia = 3 * a
        ib = 3 * b
        for r in range(3):
            for c in range(3):
                uut = u[r] * u[c]
                eye = 1.0 if r == c else 0.0
                blk = k * (uut + t * (eye - uut))
                H[ia + r, ia + c] += blk
                H[ib + r, ib + c] += blk
                H[ia + r, ib + c] -= blk
                H[ib + r, ia + c] -= blk
    return H


@njit(cache=True)
def raster_mesh(pts2, depth, tris, tri_shade, segs, seg_shade, width, height):
    zbuf = np.full((height, width), np.inf)
    img = np.zeros((height, width))
    mask = np.zeros((height, width), dtype=np.uint8)
    for t in range(tris.shape[0]):
        ia = tris[t, 0]
        ib = tris[t, 1]
        ic = tris[t, 2]
        ax, ay = pts2[ia, 0], pts2[ia, 1]
        bx, by = pts2[ib, 0], pts2[ib, 1]
        cx, cy = pts2[ic, 0], pts2[ic, 1]
        det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(det) < 1e-12:
            continue
        x0 = int(np.floor(min(ax, min(bx, cx))))
        x1 = int(np.ceil(max(ax, max(bx, cx))))
        y0 = int(np.floor(min(ay, min(by, cy))))
        y1 = int(np.ceil(max(ay, max(by, cy))))
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        for py in range(y0, y1 + 1):
            for px in range(x0, x1 + 1):
                wa = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / det
                wb = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / det
                wc = 1.0 - wa - wb
                if wa >= -1e-9 and wb >= -1e-9 and wc >= -1e-9:
                    z = wa * depth[ia] + wb * depth[ib] + wc * depth[ic]
                    if z < zbuf[py, px] - 1e-12:
                        zbuf[py, px] = z
                        img[py, px] = tri_shade[t]
                        mask[py, px] = 1
    for s in range(segs.shape[0]):
        ia = segs[s, 0]
        ib = segs[s, 1]
        ax, ay = pts2[ia, 0], pts2[ia, 1]
        bx, by = pts2[ib, 0], pts2[ib, 1]
        span = max(abs(bx - ax), abs(by - ay))
        nstep = int(np.ceil(span * 2.0)) + 1
        for k in range(nstep):
            tt = k / max(nstep - 1, 1)
            x = int(np.rint(ax + (bx - ax) * tt))
            y = int(np.rint(ay + (by - ay) * tt))
            if x < 0 or x >= width or y < 0 or y >= height:
                continue
            z = depth[ia] + (depth[ib] - depth[ia]) * tt
            if z < zbuf[y, x] - 1e-12:
                zbuf[y, x] = z
                img[y, x] = seg_shade[s]
                mask[y, x] = 1
    return zbuf, img, mask


@njit(cache=True)
def conv2d_same(image, kernel):
    h, w = image.shape
    kh, kw = kernel.shape
    ph = kh // 2
    pw = kw // 2
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for dy in range(kh):
                sy = r + dy - ph
                if sy < 0 or sy >= h:
                    continue
                for dx in range(kw):
                    sx = c + dx - pw
                    if sx < 0 or sx >= w:
                        continue
                    acc += kernel[dy, dx] * image[sy, sx]
            out[r, c] = acc
    return out


@njit(cache=True)
def how_accumulate(responses, mask, grids):
    nf, h, w = responses.shape
    ng = grids.shape[0]
    total = 0
    for j in range(ng):
        g = grids[j]
        total += ((w + g - 1) // g) * ((h + g - 1) // g)
    out = np.zeros(nf * total)
    base = 0
    for f in range(nf):
        for j in range(ng):
            g = grids[j]
            ncx = (w + g - 1) // g
            ncy = (h + g - 1) // g
            for y in range(h):
                for x in range(w):
                    if mask[y, x] != 0:
                        cell = (y // g) * ncx + (x // g)
                        out[base + cell] += responses[f, y, x]
            base += ncy * ncx
    return out


@njit(cache=True)
def lasso_cd(gram, dty, y_sq, alpha, max_sweeps, gap_tol):
    m = gram.shape[0]
    beta = np.zeros(m)
    q = np.zeros(m)
    lam = 0.5 * alpha
    for _ in range(max_sweeps):
        delta_max = 0.0
        for j in range(m):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            z = dty[j] - q[j] + gjj * beta[j]
            if z > lam:
                bnew = (z - lam) / gjj
            elif z < -lam:
                bnew = (z + lam) / gjj
            else:
                bnew = 0.0
            diff = bnew - beta[j]
            if diff != 0.0:
                for i in range(m):
                    q[i] += gram[i, j] * diff
                beta[j] = bnew
                if abs(diff) > delta_max:
                    delta_max = abs(diff)
        r_sq = y_sq
        rty_part = 0.0
        xtr_inf = 0.0
        l1 = 0.0
        for i in range(m):
            r_sq += beta[i] * (q[i] - 2.0 * dty[i])
            xtr = dty[i] - q[i]
            rty_part += beta[i] * xtr
            if abs(xtr) > xtr_inf:
                xtr_inf = abs(xtr)
            l1 += abs(beta[i])
        if r_sq < 0.0:
            r_sq = 0.0
        if xtr_inf > lam and xtr_inf > 0.0:
            s = lam / xtr_inf
        else:
            s = 1.0
        rty = r_sq + rty_part
        nu_y_sq = s * s * r_sq - 2.0 * s * rty + y_sq
        gap = 2.0 * (0.5 * r_sq + lam * l1 - 0.5 * y_sq + 0.5 * nu_y_sq)
        if gap <= gap_tol or delta_max < 1e-14:
            break
    return beta


@njit(cache=True)
def split_gain_scan(xcand, y, n_classes, thresholds):
    n, nf = xcand.shape
    nt = thresholds.shape[1]
    total = np.zeros(n_classes)
    for i in range(n):
        total[y[i]] += 1.0
    parent = 0.0
    for c in range(n_classes):
        if total[c] > 0.0:
            p = total[c] / n
            parent -= p * np.log(p)
    gains = np.zeros((nf, nt))
    lcounts = np.zeros(n_classes)
    for f in range(nf):
        for t in range(nt):
            thr = thresholds[f, t]
            for c in range(n_classes):
                lcounts[c] = 0.0
            nl = 0
            for i in range(n):
                if xcand[i, f] <= thr:
                    lcounts[y[i]] += 1.0
                    nl += 1
            nr = n - nl
            if nl == 0 or nr == 0:
                continue
            hl = 0.0
            hr = 0.0
            for c in range(n_classes):
                if lcounts[c] > 0.0:
                    p = lcounts[c] / nl
                    hl -= p * np.log(p)
                rc = total[c] - lcounts[c]
                if rc > 0.0:
                    p = rc / nr
                    hr -= p * np.log(p)
            gains[f, t] = parent - (nl * hl + nr * hr) / n
    return gains
