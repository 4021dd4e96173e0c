"""Compiled inner loops for bulk evaluation of the compressed ML cost.

Trig goes through a short polynomial after range reduction so LLVM can
vectorize the point loop; absolute error is below 2e-11 per term.
"""
import math

import numba
import numpy as np

TWO_PI = 2.0 * math.pi
INV_TWO_PI = 1.0 / TWO_PI


@numba.njit(fastmath=True, inline="always", cache=True)
def _sincos(x):
    # x in [-pi, pi]; evaluate at x/2 and apply the double-angle identities
    h = 0.5 * x
    h2 = h * h
    s = 1.0 / 355687428096000
    s = s * h2 - 1.0 / 1307674368000
    s = s * h2 + 1.0 / 6227020800
    s = s * h2 - 1.0 / 39916800
    s = s * h2 + 1.0 / 362880
    s = s * h2 - 1.0 / 5040
    s = s * h2 + 1.0 / 120
    s = s * h2 - 1.0 / 6
    s = (s * h2 + 1.0) * h
    c = -1.0 / 6402373705728000
    c = c * h2 + 1.0 / 20922789888000
    c = c * h2 - 1.0 / 87178291200
    c = c * h2 + 1.0 / 479001600
    c = c * h2 - 1.0 / 3628800
    c = c * h2 + 1.0 / 40320
    c = c * h2 - 1.0 / 720
    c = c * h2 + 1.0 / 24
    c = c * h2 - 0.5
    c = c * h2 + 1.0
    return 2.0 * s * c, c * c - s * s


@numba.njit(fastmath=True, cache=True)
def steering_sum(px, py, apx, apy, tr, ti, k2):
    """sum_m t_m exp(-j k2 d_m(p)) at every point; returns (re, im)."""
    n = px.size
    sr = np.zeros(n)
    si = np.zeros(n)
    for m in range(apx.size):
        ax = apx[m]
        ay = apy[m]
        a = tr[m]
        b = ti[m]
        for i in range(n):
            dx = px[i] - ax
            dy = py[i] - ay
            ph = k2 * math.sqrt(dx * dx + dy * dy)
            ph = ph - TWO_PI * math.floor(ph * INV_TWO_PI + 0.5)
            s, c = _sincos(ph)
            sr[i] += a * c + b * s
            si[i] += b * c - a * s
    return sr, si


@numba.njit(fastmath=True, cache=True)
def grid_best(x0, y0, h, nx, ny, apx, apy, tr, ti, k2):
    """Index (iy * nx + ix) of the grid point with the largest |sum|.

    Grid point (ix, iy) sits at (x0 + ix*h, y0 + iy*h). Ties go to the
    lowest index.
    """
    xs = x0 + h * np.arange(nx)
    best = -1.0
    best_idx = -1
    sr = np.empty(nx)
    si = np.empty(nx)
    for iy in range(ny):
        y = y0 + h * iy
        sr[:] = 0.0
        si[:] = 0.0
        for m in range(apx.size):
            ax = apx[m]
            dy = y - apy[m]
            dy2 = dy * dy
            a = tr[m]
            b = ti[m]
            for i in range(nx):
                dx = xs[i] - ax
                ph = k2 * math.sqrt(dx * dx + dy2)
                ph = ph - TWO_PI * math.floor(ph * INV_TWO_PI + 0.5)
                s, c = _sincos(ph)
                sr[i] += a * c + b * s
                si[i] += b * c - a * s
        for i in range(nx):
            v = sr[i] * sr[i] + si[i] * si[i]
            if v > best:
                best = v
                best_idx = iy * nx + i
    return best_idx, best


# -- hyperbola intersection kernels --------------------------------------------

@numba.njit(cache=True)
def _pair_f(x, y, ax, ay, bx, by, o1, cx, cy, dx, dy, o2):
    rax, ray = x - ax, y - ay
    rbx, rby = x - bx, y - by
    rcx, rcy = x - cx, y - cy
    rdx, rdy = x - dx, y - dy
    na = math.sqrt(rax * rax + ray * ray)
    nb = math.sqrt(rbx * rbx + rby * rby)
    nc = math.sqrt(rcx * rcx + rcy * rcy)
    nd = math.sqrt(rdx * rdx + rdy * rdy)
    f1 = na - nb - o1
    f2 = nc - nd - o2
    j11 = rax / na - rbx / nb
    j12 = ray / na - rby / nb
    j21 = rcx / nc - rdx / nd
    j22 = rcy / nc - rdy / nd
    return f1, f2, j11, j12, j21, j22


@numba.njit(cache=True)
def newton2(x, y, ax, ay, bx, by, o1, cx, cy, dx, dy, o2, max_iters, tol, max_halvings, max_step):
    """Damped Newton on two range-difference residuals; returns (x, y, max|f|)."""
    f1, f2, j11, j12, j21, j22 = _pair_f(x, y, ax, ay, bx, by, o1, cx, cy, dx, dy, o2)
    fn = max(abs(f1), abs(f2))
    for _ in range(max_iters):
        if not fn >= tol * 1e-3:
            break
        det = j11 * j22 - j12 * j21
        if det != 0.0 and math.isfinite(det):
            sx = -(f1 * j22 - f2 * j12) / det
            sy = -(j11 * f2 - j21 * f1) / det
        else:
            sx = -(f1 * j11 + f2 * j21)
            sy = -(f1 * j12 + f2 * j22)
        slen = math.sqrt(sx * sx + sy * sy)
        if not math.isfinite(slen):
            break
        if slen > max_step:
            sx *= max_step / slen
            sy *= max_step / slen
        t = 1.0
        accepted = False
        for _h in range(max_halvings + 1):
            nx = x + t * sx
            ny = y + t * sy
            g1, g2, k11, k12, k21, k22 = _pair_f(nx, ny, ax, ay, bx, by, o1, cx, cy, dx, dy, o2)
            gn = max(abs(g1), abs(g2))
            if gn <= fn:
                x, y = nx, ny
                f1, f2, j11, j12, j21, j22 = g1, g2, k11, k12, k21, k22
                fn = gn
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    return x, y, fn


@numba.njit(cache=True)
def sweep_families(pa, pb, offsets1, pc, pd, dphase2, lam, zmin, zmax, box, spacing,
                   max_iters, tol, max_halvings, max_step, dedupe_tol, max_roots):
    """Intersect every branch of pair (pa, pb) with every branch of (pc, pd).

    Returns (xs, ys, branch index, z2) of the distinct roots, grouped by
    branch then level, in sweep order within each group.
    """
    ax, ay, bx, by = pa[0], pa[1], pb[0], pb[1]
    cx, cy, dx, dy = pc[0], pc[1], pd[0], pd[1]
    c = 0.5 * math.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
    e1x, e1y = (bx - ax) / (2 * c), (by - ay) / (2 * c)
    e2x, e2y = -e1y, e1x
    mx, my = 0.5 * (ax + bx), 0.5 * (ay + by)
    sep2 = math.sqrt((cx - dx) ** 2 + (cy - dy) ** 2)
    xmin, ymin, xmax, ymax = box[0], box[1], box[2], box[3]
    R = 0.0
    for px, py in ((xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)):
        R = max(R, math.sqrt((px - mx) ** 2 + (py - my) ** 2))
    n1 = offsets1.size
    smax_all = 0.0
    for k in range(n1):
        A = 0.5 * offsets1[k]
        smax_all = max(smax_all, math.sqrt(max(R * R - A * A, 0.0)) / c)
    ns = int(math.ceil(2 * smax_all * c / spacing)) + 1
    cap = 1024
    ox = np.empty(cap)
    oy = np.empty(cap)
    ob = np.empty(cap, np.int64)
    oz = np.empty(cap, np.int64)
    n_out = 0
    sx_ = np.empty(ns)
    sy_ = np.empty(ns)
    w = np.empty(ns)
    ins = np.empty(ns, np.bool_)
    # per-branch scratch: seeds found during the sweep
    seed_x = np.empty(64)
    seed_y = np.empty(64)
    seed_z = np.empty(64, np.int64)
    for k in range(n1):
        A = 0.5 * offsets1[k]
        Bs = math.sqrt(max(c * c - A * A, 0.0))
        smax = math.sqrt(max(R * R - A * A, 0.0)) / c
        for i in range(ns):
            s = -smax + 2.0 * smax * i / (ns - 1)
            lx = A * math.sqrt(1.0 + s * s)
            ly = Bs * s
            x = mx + lx * e1x + ly * e2x
            y = my + lx * e1y + ly * e2y
            sx_[i] = x
            sy_[i] = y
            ins[i] = (x >= xmin) and (x <= xmax) and (y >= ymin) and (y <= ymax)
            g = math.sqrt((x - cx) ** 2 + (y - cy) ** 2) - math.sqrt((x - dx) ** 2 + (y - dy) ** 2)
            w[i] = (dphase2 - g) / lam
        n_seed = 0
        for i in range(ns - 1):
            if not (ins[i] or ins[i + 1]):
                continue
            w0, w1 = w[i], w[i + 1]
            if w0 != w1:
                zlo = int(math.ceil(min(w0, w1)))
                zhi = int(math.floor(max(w0, w1)))
                zlo = max(zlo, zmin)
                zhi = min(zhi, zmax)
                for z in range(zlo, zhi + 1):
                    fr = (z - w0) / (w1 - w0)
                    if n_seed == seed_x.size:
                        seed_x = np.concatenate((seed_x, np.empty(seed_x.size)))
                        seed_y = np.concatenate((seed_y, np.empty(seed_y.size)))
                        seed_z = np.concatenate((seed_z, np.empty(seed_z.size, np.int64)))
                    seed_x[n_seed] = sx_[i] + fr * (sx_[i + 1] - sx_[i])
                    seed_y[n_seed] = sy_[i] + fr * (sy_[i + 1] - sy_[i])
                    seed_z[n_seed] = z
                    n_seed += 1
        for i in range(1, ns - 1):
            if ins[i] and (w[i] - w[i - 1]) * (w[i + 1] - w[i]) < 0:
                z = int(np.rint(w[i]))
                if z < zmin or z > zmax:
                    continue
                if n_seed == seed_x.size:
                    seed_x = np.concatenate((seed_x, np.empty(seed_x.size)))
                    seed_y = np.concatenate((seed_y, np.empty(seed_y.size)))
                    seed_z = np.concatenate((seed_z, np.empty(seed_z.size, np.int64)))
                seed_x[n_seed] = sx_[i]
                seed_y[n_seed] = sy_[i]
                seed_z[n_seed] = z
                n_seed += 1
        if n_seed == 0:
            continue
        order = np.argsort(seed_z[:n_seed], kind="mergesort")
        start_out = n_out
        for jj in range(n_seed):
            j = order[jj]
            z = seed_z[j]
            o2 = dphase2 - z * lam
            if not abs(o2) < sep2:
                continue
            x, y, res = newton2(seed_x[j], seed_y[j], ax, ay, bx, by, offsets1[k],
                                cx, cy, dx, dy, o2, max_iters, tol, max_halvings, max_step)
            if not res < tol:
                continue
            dup = False
            same = 0
            for q in range(start_out, n_out):
                if oz[q] == z:
                    same += 1
                    if math.sqrt((ox[q] - x) ** 2 + (oy[q] - y) ** 2) < dedupe_tol:
                        dup = True
                        break
            if dup or (max_roots > 0 and same >= max_roots):
                continue
            if n_out == cap:
                cap *= 2
                ox = np.concatenate((ox, np.empty(cap - ox.size)))
                oy = np.concatenate((oy, np.empty(cap - oy.size)))
                ob = np.concatenate((ob, np.empty(cap - ob.size, np.int64)))
                oz = np.concatenate((oz, np.empty(cap - oz.size, np.int64)))
            ox[n_out] = x
            oy[n_out] = y
            ob[n_out] = k
            oz[n_out] = z
            n_out += 1
    return ox[:n_out], oy[:n_out], ob[:n_out], oz[:n_out]


@numba.njit(cache=True)
def common_focus_pairs(pr, s1, s2, o1, o2, tol, box):
    """Closed-form intersections for every (o1[i], o2[j]) offset pair.

    Keeps roots whose signed residuals are below ``tol`` and that fall
    inside ``box``. Returns (xs, ys, i, j).
    """
    b11, b12 = pr[0] - s1[0], pr[1] - s1[1]
    b21, b22 = pr[0] - s2[0], pr[1] - s2[1]
    det = b11 * b22 - b12 * b21
    i11, i12 = b22 / det, -b12 / det
    i21, i22 = -b21 / det, b11 / det
    n1b = b11 * b11 + b12 * b12
    n2b = b21 * b21 + b22 * b22
    n = o1.size * o2.size * 2
    ox = np.empty(n)
    oy = np.empty(n)
    oi = np.empty(n, np.int64)
    oj = np.empty(n, np.int64)
    m = 0
    for i in range(o1.size):
        v1 = -o1[i]
        c1 = 0.5 * (n1b - v1 * v1)
        for j in range(o2.size):
            v2 = -o2[j]
            c2 = 0.5 * (n2b - v2 * v2)
            alx = i11 * c1 + i12 * c2
            aly = i21 * c1 + i22 * c2
            bex = i11 * v1 + i12 * v2
            bey = i21 * v1 + i22 * v2
            qa = bex * bex + bey * bey - 1.0
            qb = -2.0 * (alx * bex + aly * bey)
            qc = alx * alx + aly * aly
            r0 = np.nan
            r1 = np.nan
            if abs(qa) < 1e-12:
                if qb != 0.0:
                    r0 = -qc / qb
            else:
                disc = qb * qb - 4.0 * qa * qc
                if disc >= 0.0:
                    sq = math.sqrt(disc)
                    q = -0.5 * (qb + math.copysign(sq, qb))
                    r0 = q / qa
                    if q != 0.0:
                        r1 = qc / q
            for r in (r0, r1):
                if not r >= 0.0:
                    continue
                ux = alx - bex * r
                uy = aly - bey * r
                x = pr[0] - ux
                y = pr[1] - uy
                if x < box[0] or x > box[2] or y < box[1] or y > box[3]:
                    continue
                dr = math.sqrt(ux * ux + uy * uy)
                d1 = math.sqrt((x - s1[0]) ** 2 + (y - s1[1]) ** 2)
                d2 = math.sqrt((x - s2[0]) ** 2 + (y - s2[1]) ** 2)
                if abs(dr - d1 - o1[i]) < tol and abs(dr - d2 - o2[j]) < tol:
                    ox[m] = x
                    oy[m] = y
                    oi[m] = i
                    oj[m] = j
                    m += 1
    return ox[:m], oy[:m], oi[:m], oj[:m]
