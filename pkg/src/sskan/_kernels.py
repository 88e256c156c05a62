"""Compiled inner loops shared by the spline, KAN and state-space modules.

Flat parameter layout of a KAN block starting at ``off`` in ``theta``:
layer by layer, edges in row-major (output j, input i) order, each edge
stored as ``[c_0 .. c_{nb-1}, w_b, w_s]``. Knot rows are stacked the same
way: row ``row_off[l] + i`` holds the grid seen by input ``i`` of layer ``l``.
An absent network is encoded by an empty ``dims`` array.

All reductions run in a fixed order so results are bit-reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def silu(x):
    return x * sigmoid(x)


@njit(cache=True)
def silu_grad(x):
    s = sigmoid(x)
    return s + x * s * (1.0 - s)


@njit(cache=True)
def basis_into(knots, degree, x, vals, ders):
    """Cox-de Boor values (and first derivatives) of all basis functions at x."""
    nk = knots.shape[0]
    nb = nk - degree - 1
    b = np.zeros(nk - 1)
    for j in range(nk - 1):
        if knots[j] <= x < knots[j + 1]:
            b[j] = 1.0
    if degree == 0:
        for j in range(nb):
            ders[j] = 0.0
    for k in range(1, degree + 1):
        if k == degree:
            for j in range(nb):
                ders[j] = (k / (knots[j + k] - knots[j])) * b[j] - (
                    k / (knots[j + k + 1] - knots[j + 1])
                ) * b[j + 1]
        for j in range(nk - 1 - k):
            b[j] = (x - knots[j]) / (knots[j + k] - knots[j]) * b[j] + (
                knots[j + k + 1] - x
            ) / (knots[j + k + 1] - knots[j + 1]) * b[j + 1]
    for j in range(nb):
        vals[j] = b[j]


@njit(cache=True)
def basis_batch(knots, degree, xs):
    nb = knots.shape[0] - degree - 1
    vals = np.zeros((xs.shape[0], nb))
    ders = np.zeros((xs.shape[0], nb))
    for n in range(xs.shape[0]):
        basis_into(knots, degree, xs[n], vals[n], ders[n])
    return vals, ders


@njit(cache=True)
def kan_size(dims, nb):
    total = 0
    for l in range(dims.shape[0] - 1):
        total += dims[l] * dims[l + 1] * (nb + 2)
    return total


@njit(cache=True)
def kan_forward(theta, off, dims, knots, degree, x, acts, bvals, bders, sv, sd):
    """Evaluate the network at one input vector, caching what backprop needs.

    ``acts`` has shape (L + 1, max_width); row l holds the inputs of layer l.
    """
    nlayers = dims.shape[0] - 1
    nb = knots.shape[1] - degree - 1
    for i in range(dims[0]):
        acts[0, i] = x[i]
    row = 0
    p = off
    for l in range(nlayers):
        nin = dims[l]
        nout = dims[l + 1]
        for i in range(nin):
            xi = acts[l, i]
            basis_into(knots[row + i], degree, xi, bvals[row + i], bders[row + i])
            sv[row + i] = silu(xi)
            sd[row + i] = silu_grad(xi)
        for j in range(nout):
            acc = 0.0
            for i in range(nin):
                e = p + (j * nin + i) * (nb + 2)
                spl = 0.0
                for m in range(nb):
                    spl += theta[e + m] * bvals[row + i, m]
                acc += theta[e + nb] * sv[row + i] + theta[e + nb + 1] * spl
            acts[l + 1, j] = acc
        p += nout * nin * (nb + 2)
        row += nin


@njit(cache=True)
def kan_backward(theta, off, dims, nb, acts, bvals, bders, sv, sd, gout, gtheta, gacts):
    """Reverse pass for the sample cached by the last ``kan_forward`` call.

    Accumulates parameter gradients into ``gtheta``; on return ``gacts[0]``
    holds the gradient with respect to the network input.
    """
    nlayers = dims.shape[0] - 1
    poffs = np.zeros(nlayers, dtype=np.int64)
    roffs = np.zeros(nlayers, dtype=np.int64)
    p = off
    row = 0
    for l in range(nlayers):
        poffs[l] = p
        roffs[l] = row
        p += dims[l] * dims[l + 1] * (nb + 2)
        row += dims[l]
    for j in range(dims[nlayers]):
        gacts[nlayers, j] = gout[j]
    for l in range(nlayers - 1, -1, -1):
        nin = dims[l]
        nout = dims[l + 1]
        row = roffs[l]
        for i in range(nin):
            gacts[l, i] = 0.0
        for j in range(nout):
            gj = gacts[l + 1, j]
            for i in range(nin):
                e = poffs[l] + (j * nin + i) * (nb + 2)
                spl = 0.0
                dspl = 0.0
                for m in range(nb):
                    spl += theta[e + m] * bvals[row + i, m]
                    dspl += theta[e + m] * bders[row + i, m]
                wb = theta[e + nb]
                ws = theta[e + nb + 1]
                for m in range(nb):
                    gtheta[e + m] += gj * ws * bvals[row + i, m]
                gtheta[e + nb] += gj * sv[row + i]
                gtheta[e + nb + 1] += gj * spl
                gacts[l, i] += gj * (wb * sd[row + i] + ws * dspl)


@njit(cache=True)
def _max_width(dims):
    w = 1
    for l in range(dims.shape[0]):
        if dims[l] > w:
            w = dims[l]
    return w


@njit(cache=True)
def kan_batch(theta, off, dims, knots, degree, xs):
    """Forward pass over a batch; returns (outputs, per-layer activations)."""
    nlayers = dims.shape[0] - 1
    nb = knots.shape[1] - degree - 1
    w = _max_width(dims)
    nrows = knots.shape[0]
    n = xs.shape[0]
    out = np.zeros((n, dims[nlayers]))
    allacts = np.zeros((n, nlayers + 1, w))
    acts = np.zeros((nlayers + 1, w))
    bvals = np.zeros((nrows, nb))
    bders = np.zeros((nrows, nb))
    sv = np.zeros(nrows)
    sd = np.zeros(nrows)
    for s in range(n):
        kan_forward(theta, off, dims, knots, degree, xs[s], acts, bvals, bders, sv, sd)
        for j in range(dims[nlayers]):
            out[s, j] = acts[nlayers, j]
        allacts[s] = acts
    return out, allacts


# ---------------------------------------------------------------------------
# General SS-KAN model: x+ = A x + B u + f(x, u), y = C x + D u + g(x, u)
# theta = [A, B, C, D, theta_f, theta_g], matrices row-major.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _linear_part(theta, nx, nu, ny):
    ia = 0
    ib = ia + nx * nx
    ic = ib + nx * nu
    idd = ic + ny * nx
    return ia, ib, ic, idd, idd + ny * nu


@njit(cache=True)
def sskan_simulate(theta, nx, nu, ny, fd, fk, gd, gk, degree, u, x0):
    """Free-run rollout. Returns (y, x, fail) with fail = -1 or the bad step."""
    T = u.shape[0]
    ia, ib, ic, idd, f_off = _linear_part(theta, nx, nu, ny)
    nb = (fk.shape[1] if fk.shape[0] > 0 else gk.shape[1]) - degree - 1
    has_f = fd.shape[0] > 0
    has_g = gd.shape[0] > 0
    g_off = f_off + (kan_size(fd, nb) if has_f else 0)
    xs = np.zeros((T + 1, nx))
    ys = np.zeros((T, ny))
    for a in range(nx):
        xs[0, a] = x0[a]
    z = np.zeros(nx + nu)
    wf = _max_width(fd) if has_f else 1
    wg = _max_width(gd) if has_g else 1
    fa = np.zeros((max(fd.shape[0], 1), wf))
    ga = np.zeros((max(gd.shape[0], 1), wg))
    fbv = np.zeros((fk.shape[0], nb))
    fbd = np.zeros((fk.shape[0], nb))
    fsv = np.zeros(fk.shape[0])
    fsd = np.zeros(fk.shape[0])
    gbv = np.zeros((gk.shape[0], nb))
    gbd = np.zeros((gk.shape[0], nb))
    gsv = np.zeros(gk.shape[0])
    gsd = np.zeros(gk.shape[0])
    nf = fd.shape[0] - 1
    ng = gd.shape[0] - 1
    for k in range(T):
        for a in range(nx):
            z[a] = xs[k, a]
        for c in range(nu):
            z[nx + c] = u[k, c]
        if has_f:
            kan_forward(theta, f_off, fd, fk, degree, z, fa, fbv, fbd, fsv, fsd)
        if has_g:
            kan_forward(theta, g_off, gd, gk, degree, z, ga, gbv, gbd, gsv, gsd)
        for o in range(ny):
            acc = 0.0
            for b in range(nx):
                acc += theta[ic + o * nx + b] * xs[k, b]
            acc2 = 0.0
            for c in range(nu):
                acc2 += theta[idd + o * nu + c] * u[k, c]
            val = acc + acc2
            if has_g:
                val = val + ga[ng, o]
            ys[k, o] = val
        ok = True
        for a in range(nx):
            acc = 0.0
            for b in range(nx):
                acc += theta[ia + a * nx + b] * xs[k, b]
            acc2 = 0.0
            for c in range(nu):
                acc2 += theta[ib + a * nu + c] * u[k, c]
            val = acc + acc2
            if has_f:
                val = val + fa[nf, a]
            xs[k + 1, a] = val
            if not np.isfinite(val):
                ok = False
        for o in range(ny):
            if not np.isfinite(ys[k, o]):
                ok = False
        if not ok:
            return ys, xs, k
    return ys, xs, -1


@njit(cache=True)
def penalties(theta, n_lin):
    l2 = 0.0
    for p in range(n_lin):
        l2 += theta[p] * theta[p]
    l1 = 0.0
    for p in range(n_lin, theta.shape[0]):
        l1 += abs(theta[p])
    return l2, l1


@njit(cache=True)
def add_penalty_grad(theta, n_lin, lam1, lam2, grad):
    for p in range(n_lin):
        grad[p] += 2.0 * lam2 * theta[p]
    for p in range(n_lin, theta.shape[0]):
        v = theta[p]
        if v > 0.0:
            grad[p] += lam1
        elif v < 0.0:
            grad[p] -= lam1


@njit(cache=True)
def sskan_loss_grad(theta, nx, nu, ny, fd, fk, gd, gk, degree, u, y, x0, lam1, lam2):
    """Segment objective and its exact gradient by backprop through the rollout.

    Returns (loss, mse, grad, x_final, fail).
    """
    T = u.shape[0]
    ia, ib, ic, idd, f_off = _linear_part(theta, nx, nu, ny)
    nb = (fk.shape[1] if fk.shape[0] > 0 else gk.shape[1]) - degree - 1
    has_f = fd.shape[0] > 0
    has_g = gd.shape[0] > 0
    g_off = f_off + (kan_size(fd, nb) if has_f else 0)
    grad = np.zeros(theta.shape[0])
    ys, xs, fail = sskan_simulate(theta, nx, nu, ny, fd, fk, gd, gk, degree, u, x0)
    if fail >= 0:
        return np.nan, np.nan, grad, xs[fail + 1].copy(), fail
    mse = 0.0
    for k in range(T):
        for o in range(ny):
            e = ys[k, o] - y[k, o]
            mse += e * e
    mse /= T
    l2, l1 = penalties(theta, f_off)
    loss = mse + lam2 * l2 + lam1 * l1

    wf = _max_width(fd) if has_f else 1
    wg = _max_width(gd) if has_g else 1
    fa = np.zeros((max(fd.shape[0], 1), wf))
    fga = np.zeros((max(fd.shape[0], 1), wf))
    ga = np.zeros((max(gd.shape[0], 1), wg))
    gga = np.zeros((max(gd.shape[0], 1), wg))
    fbv = np.zeros((fk.shape[0], nb))
    fbd = np.zeros((fk.shape[0], nb))
    fsv = np.zeros(fk.shape[0])
    fsd = np.zeros(fk.shape[0])
    gbv = np.zeros((gk.shape[0], nb))
    gbd = np.zeros((gk.shape[0], nb))
    gsv = np.zeros(gk.shape[0])
    gsd = np.zeros(gk.shape[0])
    z = np.zeros(nx + nu)
    ey = np.zeros(ny)
    gx = np.zeros(nx)
    gnext = np.zeros(nx)
    scale = 2.0 / T
    for k in range(T - 1, -1, -1):
        for a in range(nx):
            z[a] = xs[k, a]
        for c in range(nu):
            z[nx + c] = u[k, c]
        for o in range(ny):
            ey[o] = scale * (ys[k, o] - y[k, o])
        for b in range(nx):
            acc = 0.0
            for o in range(ny):
                acc += theta[ic + o * nx + b] * ey[o]
            for a in range(nx):
                acc += theta[ia + a * nx + b] * gnext[a]
            gx[b] = acc
        for o in range(ny):
            for b in range(nx):
                grad[ic + o * nx + b] += ey[o] * xs[k, b]
            for c in range(nu):
                grad[idd + o * nu + c] += ey[o] * u[k, c]
        for a in range(nx):
            for b in range(nx):
                grad[ia + a * nx + b] += gnext[a] * xs[k, b]
            for c in range(nu):
                grad[ib + a * nu + c] += gnext[a] * u[k, c]
        if has_f:
            kan_forward(theta, f_off, fd, fk, degree, z, fa, fbv, fbd, fsv, fsd)
            kan_backward(theta, f_off, fd, nb, fa, fbv, fbd, fsv, fsd, gnext, grad, fga)
            for a in range(nx):
                gx[a] += fga[0, a]
        if has_g:
            kan_forward(theta, g_off, gd, gk, degree, z, ga, gbv, gbd, gsv, gsd)
            kan_backward(theta, g_off, gd, nb, ga, gbv, gbd, gsv, gsd, ey, grad, gga)
            for a in range(nx):
                gx[a] += gga[0, a]
        for a in range(nx):
            gnext[a] = gx[a]
    add_penalty_grad(theta, f_off, lam1, lam2, grad)
    return loss, mse, grad, xs[T].copy(), -1


# ---------------------------------------------------------------------------
# Cascade (Wiener-Hammerstein) model, SISO:
#   x1+ = A1 x1 + B1 u,  v = C1 x1 + D1 u,  w = KAN(v),
#   x2+ = A2 x2 + B2 w,  y = C2 x2 + D2 w
# theta = [A1, B1, C1, D1, A2, B2, C2, D2, theta_kan]
# ---------------------------------------------------------------------------


@njit(cache=True)
def _cascade_offsets(n1, n2):
    a1 = 0
    b1 = a1 + n1 * n1
    c1 = b1 + n1
    d1 = c1 + n1
    a2 = d1 + 1
    b2 = a2 + n2 * n2
    c2 = b2 + n2
    d2 = c2 + n2
    return a1, b1, c1, d1, a2, b2, c2, d2, d2 + 1


@njit(cache=True)
def cascade_simulate(theta, n1, n2, kd, kk, degree, u, x10, x20):
    T = u.shape[0]
    a1, b1, c1, d1, a2, b2, c2, d2, k_off = _cascade_offsets(n1, n2)
    nb = kk.shape[1] - degree - 1
    has_k = kd.shape[0] > 0
    x1 = np.zeros((T + 1, n1))
    x2 = np.zeros((T + 1, n2))
    v = np.zeros(T)
    w = np.zeros(T)
    y = np.zeros(T)
    x1[0] = x10
    x2[0] = x20
    acts = np.zeros((max(kd.shape[0], 1), _max_width(kd) if has_k else 1))
    bv = np.zeros((kk.shape[0], nb))
    bd = np.zeros((kk.shape[0], nb))
    sv = np.zeros(kk.shape[0])
    sd = np.zeros(kk.shape[0])
    zin = np.zeros(1)
    nl = kd.shape[0] - 1
    for k in range(T):
        acc = 0.0
        for b in range(n1):
            acc += theta[c1 + b] * x1[k, b]
        vk = acc + theta[d1] * u[k]
        v[k] = vk
        if has_k:
            zin[0] = vk
            kan_forward(theta, k_off, kd, kk, degree, zin, acts, bv, bd, sv, sd)
            wk = acts[nl, 0]
        else:
            wk = vk
        w[k] = wk
        acc = 0.0
        for b in range(n2):
            acc += theta[c2 + b] * x2[k, b]
        y[k] = acc + theta[d2] * wk
        ok = np.isfinite(y[k]) and np.isfinite(wk)
        for a in range(n1):
            acc = 0.0
            for b in range(n1):
                acc += theta[a1 + a * n1 + b] * x1[k, b]
            x1[k + 1, a] = acc + theta[b1 + a] * u[k]
            ok = ok and np.isfinite(x1[k + 1, a])
        for a in range(n2):
            acc = 0.0
            for b in range(n2):
                acc += theta[a2 + a * n2 + b] * x2[k, b]
            x2[k + 1, a] = acc + theta[b2 + a] * wk
            ok = ok and np.isfinite(x2[k + 1, a])
        if not ok:
            return y, v, w, x1, x2, k
    return y, v, w, x1, x2, -1


@njit(cache=True)
def cascade_loss_grad(theta, n1, n2, kd, kk, degree, u, y, x10, x20, lam1, lam2):
    """Returns (loss, mse, grad, x1_final, x2_final, fail)."""
    T = u.shape[0]
    a1, b1, c1, d1, a2, b2, c2, d2, k_off = _cascade_offsets(n1, n2)
    nb = kk.shape[1] - degree - 1
    has_k = kd.shape[0] > 0
    grad = np.zeros(theta.shape[0])
    ys, v, w, x1, x2, fail = cascade_simulate(theta, n1, n2, kd, kk, degree, u, x10, x20)
    if fail >= 0:
        return np.nan, np.nan, grad, x1[fail + 1].copy(), x2[fail + 1].copy(), fail
    mse = 0.0
    for k in range(T):
        e = ys[k] - y[k]
        mse += e * e
    mse /= T
    l2, l1 = penalties(theta, k_off)
    loss = mse + lam2 * l2 + lam1 * l1

    nlay = max(kd.shape[0], 1)
    wd = _max_width(kd) if has_k else 1
    acts = np.zeros((nlay, wd))
    gacts = np.zeros((nlay, wd))
    bv = np.zeros((kk.shape[0], nb))
    bd = np.zeros((kk.shape[0], nb))
    sv = np.zeros(kk.shape[0])
    sd = np.zeros(kk.shape[0])
    zin = np.zeros(1)
    gw_arr = np.zeros(1)
    g1 = np.zeros(n1)
    g2 = np.zeros(n2)
    n1next = np.zeros(n1)
    n2next = np.zeros(n2)
    scale = 2.0 / T
    for k in range(T - 1, -1, -1):
        ey = scale * (ys[k] - y[k])
        # output block
        for b in range(n2):
            grad[c2 + b] += ey * x2[k, b]
        grad[d2] += ey * w[k]
        gw = theta[d2] * ey
        for a in range(n2):
            gw += theta[b2 + a] * n2next[a]
        for b in range(n2):
            acc = theta[c2 + b] * ey
            for a in range(n2):
                acc += theta[a2 + a * n2 + b] * n2next[a]
            g2[b] = acc
        for a in range(n2):
            for b in range(n2):
                grad[a2 + a * n2 + b] += n2next[a] * x2[k, b]
            grad[b2 + a] += n2next[a] * w[k]
        # static nonlinearity
        if has_k:
            zin[0] = v[k]
            kan_forward(theta, k_off, kd, kk, degree, zin, acts, bv, bd, sv, sd)
            gw_arr[0] = gw
            kan_backward(theta, k_off, kd, nb, acts, bv, bd, sv, sd, gw_arr, grad, gacts)
            gv = gacts[0, 0]
        else:
            gv = gw
        # input block
        for b in range(n1):
            grad[c1 + b] += gv * x1[k, b]
        grad[d1] += gv * u[k]
        for b in range(n1):
            acc = theta[c1 + b] * gv
            for a in range(n1):
                acc += theta[a1 + a * n1 + b] * n1next[a]
            g1[b] = acc
        for a in range(n1):
            for b in range(n1):
                grad[a1 + a * n1 + b] += n1next[a] * x1[k, b]
            grad[b1 + a] += n1next[a] * u[k]
        for a in range(n1):
            n1next[a] = g1[a]
        for a in range(n2):
            n2next[a] = g2[a]
    add_penalty_grad(theta, k_off, lam1, lam2, grad)
    return loss, mse, grad, x1[T].copy(), x2[T].copy(), -1
