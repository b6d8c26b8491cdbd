"""Vectorized pure-numpy kernel implementations.

Fallback path for environments without numba; also the reference the
numba twins are benchmarked against.  Signatures and accumulation order
match numba_impl exactly.
"""

import numpy as np


# -- mass-spring -------------------------------------------------------------

def spring_energy(pos, edges, rest, stiff, masses, gravity):
    """Total potential energy and the minimum spring length.

    U = sum 1/2 k (|xa－xb| － L)^2  －  sum m g·x
    (gravity is the acceleration vector, so the force on particle i is m_i g).
    """
    if len(edges) == 0:
        min_len = np.inf
        elastic = 0.0
    else:
        d = pos[edges[:, 0]] - pos[edges[:, 1]]
        lengths = np.sqrt(np.sum(d * d, axis=1))
        min_len = float(lengths.min())
        elastic = float(np.sum(0.5 * stiff * (lengths - rest) ** 2))
    grav = -float(np.sum(masses * (pos @ gravity)))
    return elastic + grav, min_len


def spring_gradient(pos, edges, rest, stiff, masses, gravity):
    """Gradient of the energy wrt all particle positions, plus min spring length."""
    grad = -masses[:, None] * gravity[None, :]
    if len(edges) == 0:
        return grad, np.inf
    a = edges[:, 0]
    b = edges[:, 1]
    d = pos[a] - pos[b]
    lengths = np.sqrt(np.sum(d * d, axis=1))
    min_len = float(lengths.min())
    if min_len < 1e-12:
        return grad, min_len
    coef = (stiff * (lengths - rest) / lengths)[:, None] * d
    np.add.at(grad, a, coef)
    np.add.at(grad, b, -coef)
    return grad, min_len


def spring_hessian(pos, edges, rest, stiff, n):
    """Dense (3n, 3n) Hessian of the elastic energy (gravity contributes zero)."""
    H = np.zeros((3 * n, 3 * n))
    if len(edges) == 0:
        return H
    a = edges[:, 0]
    b = edges[:, 1]
    d = pos[a] - pos[b]
    lengths = np.sqrt(np.sum(d * d, axis=1))
    lengths = np.maximum(lengths, 1e-12)
    u = d / lengths[:, None]
    uut = np.einsum("mi,mj->mij", u, u)
    eye = np.eye(3)[None, :, :]
    # per-spring block: k [ u u^T + (1 - L/|d|)(I - u u^T) ]
    blocks = stiff[:, None, None] * (uut + (1.0 - rest / lengths)[:, None, None] * (eye - uut))
    for m in range(len(edges)):
        ia, ib = 3 * a[m], 3 * b[m]
        blk = blocks[m]
        H[ia:ia + 3, ia:ia + 3] += blk
        H[ib:ib + 3, ib:ib + 3] += blk
        H[ia:ia + 3, ib:ib + 3] -= blk
        H[ib:ib + 3, ia:ia + 3] -= blk
    return H


# -- rasterization -----------------------------------------------------------

def raster_mesh(pts2, depth, tris, tri_shade, segs, seg_shade, width, height):
    """Flat-shaded z-buffered rasterizer.

    pts2 holds continuous pixel coordinates (col, row); pixel (r, c) has its
    center at (c, r).  Returns (zbuf, shade image, mask); zbuf is +inf on
    background.
    """
    zbuf = np.full((height, width), np.inf)
    img = np.zeros((height, width))
    mask = np.zeros((height, width), dtype=np.uint8)
    cols = np.arange(width)
    rows = np.arange(height)
    for t in range(len(tris)):
        ia, ib, ic = tris[t]
        ax, ay = pts2[ia]
        bx, by = pts2[ib]
        cx, cy = pts2[ic]
        det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(det) < 1e-12:
            continue
        x0 = max(int(np.floor(min(ax, bx, cx))), 0)
        x1 = min(int(np.ceil(max(ax, bx, cx))), width - 1)
        y0 = max(int(np.floor(min(ay, by, cy))), 0)
        y1 = min(int(np.ceil(max(ay, by, cy))), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        px = cols[x0:x1 + 1][None, :]
        py = rows[y0:y1 + 1][:, None]
        wa = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / det
        wb = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / det
        wc = 1.0 - wa - wb
        inside = (wa >= -1e-9) & (wb >= -1e-9) & (wc >= -1e-9)
        z = wa * depth[ia] + wb * depth[ib] + wc * depth[ic]
        sub = zbuf[y0:y1 + 1, x0:x1 + 1]
        upd = inside & (z < sub - 1e-12)
        sub[upd] = z[upd]
        img[y0:y1 + 1, x0:x1 + 1][upd] = tri_shade[t]
        mask[y0:y1 + 1, x0:x1 + 1][upd] = 1
    for s in range(len(segs)):
        ia, ib = segs[s]
        ax, ay = pts2[ia]
        bx, by = pts2[ib]
        span = max(abs(bx - ax), abs(by - ay))
        nstep = int(np.ceil(span * 2.0)) + 1
        ts = np.linspace(0.0, 1.0, nstep)
        xs = np.rint(ax + (bx - ax) * ts).astype(np.int64)
        ys = np.rint(ay + (by - ay) * ts).astype(np.int64)
        zs = depth[ia] + (depth[ib] - depth[ia]) * ts
        ok = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
        for x, y, z in zip(xs[ok], ys[ok], zs[ok]):
            if z < zbuf[y, x] - 1e-12:
                zbuf[y, x] = z
                img[y, x] = seg_shade[s]
                mask[y, x] = 1
    return zbuf, img, mask


# -- image filtering ---------------------------------------------------------

def conv2d_same(image, kernel):
    """Zero-padded same-size correlation with an odd-sided kernel.

    Accumulates in kernel row-major order so the per-pixel floating-point
    add sequence matches the numba twin bit for bit.
    """
    h, w = image.shape
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((h + kh - 1, w + kw - 1))
    padded[ph:ph + h, pw:pw + w] = image
    out = np.zeros((h, w))
    for dy in range(kh):
        for dx in range(kw):
            out += kernel[dy, dx] * padded[dy:dy + h, dx:dx + w]
    return out


def how_accumulate(responses, mask, grids):
    """Grid-pooled sums of filter responses over foreground pixels.

    Cell of pixel (col w, row h) at grid size g is (w//g, h//g), 0-based;
    cells stack row-major, grids then filters outermost.
    """
    nf, h, w = responses.shape
    ys, xs = np.nonzero(mask)
    chunks = []
    for f in range(nf):
        vals = responses[f][ys, xs]
        for g in grids:
            ncx = -(-w // g)
            ncy = -(-h // g)
            cell = (ys // g) * ncx + (xs // g)
            acc = np.zeros(ncy * ncx)
            np.add.at(acc, cell, vals)
            chunks.append(acc)
    if not chunks:
        return np.zeros(0)
    return np.concatenate(chunks)


# -- sparse coding -----------------------------------------------------------

def lasso_cd(gram, dty, y_sq, alpha, max_sweeps, gap_tol):
    """Cyclic coordinate descent for  min |y - D b|^2 + alpha |b|_1.

    Works from the Gram matrix G = D^T D and correlations D^T y; stops on
    the duality gap of the equivalent standard-form problem.
    """
    m = gram.shape[0]
    beta = np.zeros(m)
    q = np.zeros(m)  # q = G beta
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
                q += gram[:, j] * diff
                beta[j] = bnew
                delta_max = max(delta_max, abs(diff))
        # duality gap for 1/2|y-Db|^2 + lam|b|_1, doubled to our scaling
        r_sq = max(y_sq - 2.0 * float(beta @ dty) + float(beta @ q), 0.0)
        xtr = dty - q
        xtr_inf = float(np.max(np.abs(xtr))) if m else 0.0
        l1 = float(np.sum(np.abs(beta)))
        if xtr_inf > lam and xtr_inf > 0.0:
            s = lam / xtr_inf
        else:
            s = 1.0
        rty = r_sq + float(beta @ xtr)
        nu_y_sq = s * s * r_sq - 2.0 * s * rty + y_sq
        gap = 2.0 * (0.5 * r_sq + lam * l1 - 0.5 * y_sq + 0.5 * nu_y_sq)
        if gap <= gap_tol or delta_max < 1e-14:
            break
    return beta


# -- decision-tree split search ----------------------------------------------

def split_gain_scan(xcand, y, n_classes, thresholds):
    """Information gain for every (candidate feature, threshold) pair.

    xcand: (n, F) node feature columns; thresholds: (F, T).  Left branch
    takes x <= t.  Returns gains (F, T); empty branches score 0.
    """
    n, nf = xcand.shape
    nt = thresholds.shape[1]
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    total = onehot.sum(axis=0)
    parent = _entropy(total, n)
    gains = np.zeros((nf, nt))
    for f in range(nf):
        left = xcand[:, f][:, None] <= thresholds[f][None, :]  # (n, T)
        lcounts = np.einsum("nt,nc->tc", left, onehot)
        rcounts = total[None, :] - lcounts
        nl = lcounts.sum(axis=1)
        nr = n - nl
        for t in range(nt):
            if nl[t] == 0 or nr[t] == 0:
                continue
            hl = _entropy(lcounts[t], nl[t])
            hr = _entropy(rcounts[t], nr[t])
            gains[f, t] = parent - (nl[t] * hl + nr[t] * hr) / n
    return gains


def _entropy(counts, total):
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log(p)))
