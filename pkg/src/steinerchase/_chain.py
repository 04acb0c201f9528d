"""Log-barrier solver for chain-structured path programs, batched over queries.

A chain program has stages ``i = 0..S-1``.  Stage ``i`` owns a position
``y_i = p_i + Z_i z_i`` (``z_i`` has ``k_i`` free coordinates, possibly zero),
movement epigraph variables ``m_i`` bounding ``||y_i - y_{i-1}||`` (one scalar
for the l2/linf norms, one per coordinate for l1) and optionally a service
epigraph variable ``r_i``.  Linear rows ``Gy . y_i + Gr * r_i <= Gh`` live on a
single stage; movement terms couple consecutive stages.  The origin plays the
role of ``y_{-1}``.  The last stage takes its offset from a per-query
``plast`` (used to pin the endpoint when evaluating ``W(x)``).

The objective is ``cost_flag * (sum m + sum r) - theta . y_{S-1}``; an optional
budget row ``sum m + sum r <= budget`` couples every stage and is folded into
the Newton solve with a Sherman-Morrison update.  Newton systems are block
tridiagonal and are factored with a block LDL^T sweep.

Many queries (different ``theta``/``plast``) share the same stages, so the
solver runs blocks of them in lockstep with the query index innermost in
every array; each query keeps its own barrier parameter, step length and
termination state.

Everything in this module is an implementation detail of :mod:`workfn`.
"""
import numpy as np
from numba import njit

L2, LINF, L1 = 0, 1, 2

STATUS_OK = 0
STATUS_MAXITER = 1
STATUS_INFEASIBLE_START = 2
STATUS_LOOSE = 3  # stalled; returned the last centred point, gap above target

BLOCK = 64

_ROW_FLUSH = 12


@njit(cache=True)
def _positions(S, d, k, Z, ident, p, plast, x, y, mc):
    for i in range(S):
        for a in range(d):
            if i == S - 1:
                for j in range(mc):
                    y[i, a, j] = plast[a, j]
            else:
                base = p[i, a]
                for j in range(mc):
                    y[i, a, j] = base
            if ident[i]:
                for j in range(mc):
                    y[i, a, j] += x[i, a, j]
            else:
                for c in range(k[i]):
                    zz = Z[i, a, c]
                    if zz != 0.0:
                        for j in range(mc):
                            y[i, a, j] += zz * x[i, c, j]


@njit(cache=True)
def _barrier(S, d, norm, q, k, has_r, row_ptr, Gy, Gr, Gh, use_budget, budget,
             cost_flag, th, x, y, t, out, phi, spend, prod, mins, sl, mc):
    """out[j] = t_j * objective + barrier, or +inf outside the domain.

    ``phi`` receives the barrier term alone so that line searches can compare
    values without the large ``t * objective`` part.
    """
    for j in range(mc):
        out[j] = 0.0
        spend[j] = 0.0
        mins[j] = 1.0
    for i in range(S):
        ki = k[i]
        # stage rows; slacks are multiplied up and logged in batches
        for j in range(mc):
            prod[j] = 1.0
        cnt = 0
        for rr in range(row_ptr[i], row_ptr[i + 1]):
            h0 = Gh[rr]
            for j in range(mc):
                sl[j] = h0
            for a in range(d):
                ga = Gy[rr, a]
                if ga != 0.0:
                    for j in range(mc):
                        sl[j] -= ga * y[i, a, j]
            if has_r[i]:
                gr = Gr[rr]
                if gr != 0.0:
                    for j in range(mc):
                        sl[j] -= gr * x[i, ki + q, j]
            for j in range(mc):
                mins[j] = min(mins[j], sl[j])
                prod[j] *= sl[j]
            cnt += 1
            if cnt == _ROW_FLUSH:
                for j in range(mc):
                    out[j] -= np.log(abs(prod[j]))
                    prod[j] = 1.0
                cnt = 0
        if cnt > 0:
            for j in range(mc):
                out[j] -= np.log(abs(prod[j]))
                prod[j] = 1.0
        # movement barrier between y_{i-1} and y_i
        if norm == L2:
            for j in range(mc):
                sl[j] = 0.0
            for a in range(d):
                for j in range(mc):
                    da = y[i, a, j] - (y[i - 1, a, j] if i > 0 else 0.0)
                    sl[j] += da * da
            for j in range(mc):
                s = x[i, ki, j]
                qq = s * s - sl[j]
                mins[j] = min(mins[j], min(s, qq))
                out[j] -= np.log(abs(qq))
                spend[j] += s
        else:
            for a in range(d):
                col = ki if norm == LINF else ki + a
                for j in range(mc):
                    da = y[i, a, j] - (y[i - 1, a, j] if i > 0 else 0.0)
                    e = x[i, col, j]
                    sp = e - da
                    sm = e + da
                    mins[j] = min(mins[j], min(sp, sm))
                    prod[j] *= sp * sm
            for j in range(mc):
                out[j] -= np.log(abs(prod[j]))
            if norm == LINF:
                for j in range(mc):
                    spend[j] += x[i, ki, j]
            else:
                for a in range(d):
                    for j in range(mc):
                        spend[j] += x[i, ki + a, j]
        if has_r[i]:
            for j in range(mc):
                spend[j] += x[i, ki + q, j]
    for j in range(mc):
        obj = spend[j] if cost_flag else 0.0
        for a in range(d):
            obj -= th[a, j] * y[S - 1, a, j]
        ph = out[j]
        if use_budget:
            bs = budget - spend[j]
            mins[j] = min(mins[j], bs)
            ph -= np.log(abs(bs))
        phi[j] = ph if mins[j] > 0.0 else np.inf
        out[j] = t[j] * obj + ph if mins[j] > 0.0 else np.inf


@njit(cache=True)
def _objective(S, d, q, k, has_r, cost_flag, th, x, y, obj, spend, mc):
    for j in range(mc):
        spend[j] = 0.0
    for i in range(S):
        ki = k[i]
        for a in range(q + has_r[i]):
            for j in range(mc):
                spend[j] += x[i, ki + a, j]
    for j in range(mc):
        o = spend[j] if cost_flag else 0.0
        for a in range(d):
            o -= th[a, j] * y[S - 1, a, j]
        obj[j] = o


@njit(cache=True)
def _assemble(S, d, norm, q, k, Z, ident, has_r, row_ptr, Gy, Gr, Gh,
              x, y, gb, H, C, gu, Hu, Cu, T, sl, mc):
    """Barrier gradient gb and block-tridiagonal Hessian (H diagonal blocks,
    C sub-diagonal blocks) in reduced coordinates (z, m, r)."""
    B = d + q + 1
    for i in range(S):
        for a in range(B):
            for j in range(mc):
                gu[i, a, j] = 0.0
            for c in range(B):
                for j in range(mc):
                    Hu[i, a, c, j] = 0.0
                    Cu[i, a, c, j] = 0.0
    rc = d + q
    for i in range(S):
        ki = k[i]
        hr = has_r[i]
        # stage rows (upper triangle only; mirrored below)
        for rr in range(row_ptr[i], row_ptr[i + 1]):
            h0 = Gh[rr]
            gr = Gr[rr] if hr else 0.0
            for j in range(mc):
                sl[j] = h0
            for a in range(d):
                ga = Gy[rr, a]
                if ga != 0.0:
                    for j in range(mc):
                        sl[j] -= ga * y[i, a, j]
            if gr != 0.0:
                for j in range(mc):
                    sl[j] -= gr * x[i, ki + q, j]
            for j in range(mc):
                sl[j] = 1.0 / sl[j]
            for a in range(d):
                ga = Gy[rr, a]
                if ga == 0.0:
                    continue
                for j in range(mc):
                    gu[i, a, j] += ga * sl[j]
                for c in range(a, d):
                    gg = ga * Gy[rr, c]
                    if gg != 0.0:
                        for j in range(mc):
                            Hu[i, a, c, j] += gg * sl[j] * sl[j]
                if gr != 0.0:
                    gg = ga * gr
                    for j in range(mc):
                        Hu[i, a, rc, j] += gg * sl[j] * sl[j]
            if gr != 0.0:
                for j in range(mc):
                    gu[i, rc, j] += gr * sl[j]
                    Hu[i, rc, rc, j] += gr * gr * sl[j] * sl[j]
        # movement barrier between y_{i-1} and y_i
        if norm == L2:
            for j in range(mc):
                sl[j] = 0.0
            for a in range(d):
                for j in range(mc):
                    da = y[i, a, j] - (y[i - 1, a, j] if i > 0 else 0.0)
                    sl[j] += da * da
            for j in range(mc):
                s = x[i, ki, j]
                sl[j] = 1.0 / (s * s - sl[j])
            for a in range(d):
                for j in range(mc):
                    da = y[i, a, j] - (y[i - 1, a, j] if i > 0 else 0.0)
                    iq = sl[j]
                    gd = 2.0 * da * iq
                    gu[i, a, j] += gd
                    hds = -4.0 * x[i, ki, j] * da * iq * iq
                    Hu[i, a, d, j] += hds
                    if i > 0:
                        gu[i - 1, a, j] -= gd
                        Cu[i, d, a, j] -= hds
                for c in range(a, d):
                    for j in range(mc):
                        da = y[i, a, j] - (y[i - 1, a, j] if i > 0 else 0.0)
                        dc = y[i, c, j] - (y[i - 1, c, j] if i > 0 else 0.0)
                        iq = sl[j]
                        hdd = 4.0 * da * dc * iq * iq
                        if a == c:
                            hdd += 2.0 * iq
                        Hu[i, a, c, j] += hdd
                        if i > 0:
                            Hu[i - 1, a, c, j] += hdd
                            Cu[i, a, c, j] -= hdd
                            if a != c:
                                Cu[i, c, a, j] -= hdd
            for j in range(mc):
                s = x[i, ki, j]
                iq = sl[j]
                gu[i, d, j] += -2.0 * s * iq
                Hu[i, d, d, j] += -2.0 * iq + 4.0 * s * s * iq * iq
        else:
            for a in range(d):
                col = d if norm == LINF else d + a
                xcol = ki if norm == LINF else ki + a
                for j in range(mc):
                    e = x[i, xcol, j]
                    da = y[i, a, j] - (y[i - 1, a, j] if i > 0 else 0.0)
                    ip = 1.0 / (e - da)
                    im = 1.0 / (e + da)
                    ip2 = ip * ip
                    im2 = im * im
                    gu[i, col, j] += -ip - im
                    gd = ip - im
                    gu[i, a, j] += gd
                    hee = ip2 + im2
                    hed = im2 - ip2
                    Hu[i, col, col, j] += hee
                    Hu[i, a, col, j] += hed
                    Hu[i, a, a, j] += hee
                    if i > 0:
                        gu[i - 1, a, j] -= gd
                        Hu[i - 1, a, a, j] += hee
                        Cu[i, a, a, j] -= hee
                        Cu[i, col, a, j] -= hed
    for i in range(S):
        for a in range(B):
            for c in range(a + 1, B):
                for j in range(mc):
                    Hu[i, c, a, j] = Hu[i, a, c, j]
    # pull back to x-space: u = (y, m, r) = P x + const, P = blkdiag(Z, I)
    for i in range(S):
        ki = k[i]
        bi = ki + q + has_r[i]
        if ident[i]:
            for a in range(bi):
                for j in range(mc):
                    gb[i, a, j] = gu[i, a, j]
                for c in range(bi):
                    for j in range(mc):
                        H[i, a, c, j] = Hu[i, a, c, j]
        else:
            for a in range(bi):
                if a < ki:
                    for j in range(mc):
                        gb[i, a, j] = 0.0
                    for u in range(d):
                        zz = Z[i, u, a]
                        if zz != 0.0:
                            for j in range(mc):
                                gb[i, a, j] += zz * gu[i, u, j]
                else:
                    for j in range(mc):
                        gb[i, a, j] = gu[i, d + a - ki, j]
            # T = Hu[:, y-part] Z  (rows in u-space, columns in x-space)
            for u in range(B):
                for c in range(ki):
                    for j in range(mc):
                        T[u, c, j] = 0.0
                    for w in range(d):
                        zz = Z[i, w, c]
                        if zz != 0.0:
                            for j in range(mc):
                                T[u, c, j] += Hu[i, u, w, j] * zz
            for a in range(bi):
                for c in range(bi):
                    if a < ki and c < ki:
                        for j in range(mc):
                            H[i, a, c, j] = 0.0
                        for u in range(d):
                            zz = Z[i, u, a]
                            if zz != 0.0:
                                for j in range(mc):
                                    H[i, a, c, j] += zz * T[u, c, j]
                    elif c < ki:
                        for j in range(mc):
                            H[i, a, c, j] = T[d + a - ki, c, j]
                    elif a < ki:
                        for j in range(mc):
                            H[i, a, c, j] = T[d + c - ki, a, j]
                    else:
                        for j in range(mc):
                            H[i, a, c, j] = Hu[i, d + a - ki, d + c - ki, j]
        if i > 0:
            kp = k[i - 1]
            bp = kp + q + has_r[i - 1]
            both = ident[i] and ident[i - 1]
            for a in range(bi):
                for c in range(bp):
                    if c >= kp:
                        for j in range(mc):
                            C[i, a, c, j] = 0.0
                    elif both:
                        for j in range(mc):
                            C[i, a, c, j] = Cu[i, a, c, j]
                    else:
                        for j in range(mc):
                            C[i, a, c, j] = 0.0
                        for w in range(d):
                            zc = Z[i - 1, w, c]
                            if zc == 0.0:
                                continue
                            if a >= ki:
                                aa = d + a - ki
                                for j in range(mc):
                                    C[i, a, c, j] += Cu[i, aa, w, j] * zc
                            elif ident[i]:
                                for j in range(mc):
                                    C[i, a, c, j] += Cu[i, a, w, j] * zc
                            else:
                                for u in range(d):
                                    zz = Z[i, u, a] * zc
                                    if zz != 0.0:
                                        for j in range(mc):
                                            C[i, a, c, j] += zz * Cu[i, u, w, j]


@njit(cache=True)
def _chol(A, n, L, acc, mc):
    """Batched Cholesky of the leading n x n block; tiny pivots are lifted."""
    for c in range(n):
        for j in range(mc):
            acc[j] = A[c, c, j]
        for m in range(c):
            for j in range(mc):
                acc[j] -= L[c, m, j] * L[c, m, j]
        for j in range(mc):
            L[c, c, j] = np.sqrt(max(acc[j], 1e-300))
        for r in range(c + 1, n):
            for j in range(mc):
                acc[j] = A[r, c, j]
            for m in range(c):
                for j in range(mc):
                    acc[j] -= L[r, m, j] * L[c, m, j]
            for j in range(mc):
                L[r, c, j] = acc[j] / L[c, c, j]


@njit(cache=True)
def _fwd(L, n, b, mc):
    for r in range(n):
        for m in range(r):
            for j in range(mc):
                b[r, j] -= L[r, m, j] * b[m, j]
        for j in range(mc):
            b[r, j] /= L[r, r, j]


@njit(cache=True)
def _bwd(L, n, b, mc):
    for r in range(n - 1, -1, -1):
        for m in range(r + 1, n):
            for j in range(mc):
                b[r, j] -= L[m, r, j] * b[m, j]
        for j in range(mc):
            b[r, j] /= L[r, r, j]


@njit(cache=True)
def _factor(S, bsz, H, C, Lf, D, W, acc, mc):
    """Block LDL^T: D_i = H_i - C_i D_{i-1}^{-1} C_i^T, Lf_i = chol(D_i)."""
    for i in range(S):
        bi = bsz[i]
        for a in range(bi):
            for c in range(bi):
                for j in range(mc):
                    D[a, c, j] = H[i, a, c, j]
        if i > 0:
            bp = bsz[i - 1]
            # W = L_{i-1}^{-1} C_i^T, then D -= W^T W
            for c in range(bi):
                for a in range(bp):
                    for j in range(mc):
                        W[a, c, j] = C[i, c, a, j]
            for r in range(bp):
                for m in range(r):
                    for c in range(bi):
                        for j in range(mc):
                            W[r, c, j] -= Lf[i - 1, r, m, j] * W[m, c, j]
                for c in range(bi):
                    for j in range(mc):
                        W[r, c, j] /= Lf[i - 1, r, r, j]
            for a in range(bi):
                for c in range(a, bi):
                    for m in range(bp):
                        for j in range(mc):
                            D[a, c, j] -= W[m, a, j] * W[m, c, j]
                    if c != a:
                        for j in range(mc):
                            D[c, a, j] = D[a, c, j]
        _chol(D, bi, Lf[i], acc, mc)


@njit(cache=True)
def _tri_solve(S, bsz, C, Lf, rhs, out, tmp, mc):
    # forward: w_i = r_i - C_i D_{i-1}^{-1} w_{i-1}; keep D_i^{-1} w_i in out
    for i in range(S):
        bi = bsz[i]
        for a in range(bi):
            for j in range(mc):
                tmp[a, j] = rhs[i, a, j]
        if i > 0:
            bp = bsz[i - 1]
            for a in range(bi):
                for m in range(bp):
                    for j in range(mc):
                        tmp[a, j] -= C[i, a, m, j] * out[i - 1, m, j]
        _fwd(Lf[i], bi, tmp, mc)
        _bwd(Lf[i], bi, tmp, mc)
        for a in range(bi):
            for j in range(mc):
                out[i, a, j] = tmp[a, j]
    # backward: x_i = D_i^{-1} w_i - D_i^{-1} C_{i+1}^T x_{i+1}
    for i in range(S - 2, -1, -1):
        bi = bsz[i]
        bn = bsz[i + 1]
        for a in range(bi):
            for j in range(mc):
                tmp[a, j] = 0.0
            for m in range(bn):
                for j in range(mc):
                    tmp[a, j] += C[i + 1, m, a, j] * out[i + 1, m, j]
        _fwd(Lf[i], bi, tmp, mc)
        _bwd(Lf[i], bi, tmp, mc)
        for a in range(bi):
            for j in range(mc):
                out[i, a, j] -= tmp[a, j]


@njit(cache=True)
def _rows_max_r(i, d, row_ptr, Gy, Gr, Gh, y, j):
    """Smallest feasible service level of stage i at its current position."""
    rmax = -np.inf
    for rr in range(row_ptr[i], row_ptr[i + 1]):
        if Gr[rr] < 0.0:
            v = 0.0
            for a in range(d):
                v += Gy[rr, a] * y[i, a, j]
            v = (v - Gh[rr]) / (-Gr[rr])
            if v > rmax:
                rmax = v
    return rmax


@njit(cache=True)
def solve_chain(d, norm, k, Z, ident, p, has_r, row_ptr, Gy, Gr, Gh, zc,
                cost_flag, use_budget, budget, theta, plast, z0, use_z0,
                gap_abs, gap_rel, max_newton, mu,
                out_obj, out_gap, out_path, out_spend, out_status, out_iters):
    """Solve one chain program for each row of ``theta``/``plast``.

    Stops a query once ``nu / t <= gap_abs + gap_rel * |objective|`` at a
    centred point; ``nu / t`` is reported as the gap bound.  A query that
    cannot be centred at its current ``t`` falls back to its last centred
    point (status LOOSE, with that point's gap) or, without one, is reported
    as not converged.
    """
    S = k.shape[0]
    M = theta.shape[0]
    q = d if norm == L1 else 1
    B = d + q + 1
    MC = BLOCK
    bsz = np.empty(S, dtype=np.int64)
    nu = 0.0
    n_spend = 0
    for i in range(S):
        bsz[i] = k[i] + q + has_r[i]
        nu += row_ptr[i + 1] - row_ptr[i]
        nu += 2.0 if norm == L2 else 2.0 * d
        n_spend += q + has_r[i]
    if use_budget:
        nu += 1.0

    x = np.zeros((S, B, MC))
    xt = np.zeros((S, B, MC))
    dx = np.zeros((S, B, MC))
    wv = np.zeros((S, B, MC))
    y = np.zeros((S, d, MC))
    yt = np.zeros((S, d, MC))
    xs = np.zeros((S, B, MC))
    ts = np.zeros(MC)
    has_snap = np.zeros(MC, dtype=np.bool_)
    gb = np.zeros((S, B, MC))
    cg = np.zeros((S, B, MC))
    g = np.zeros((S, B, MC))
    kap = np.zeros((S, B, MC))
    H = np.zeros((S, B, B, MC))
    C = np.zeros((S, B, B, MC))
    gu = np.zeros((S, B, MC))
    Hu = np.zeros((S, B, B, MC))
    Cu = np.zeros((S, B, B, MC))
    T = np.zeros((B, B, MC))
    Lf = np.zeros((S, B, B, MC))
    D = np.zeros((B, B, MC))
    W = np.zeros((B, B, MC))
    tmp = np.zeros((B, MC))
    th = np.zeros((d, MC))
    pl = np.zeros((d, MC))
    sl = np.zeros(MC)
    acc = np.zeros(MC)
    prod = np.zeros(MC)
    mins = np.zeros(MC)
    f0 = np.zeros(MC)
    ft = np.zeros(MC)
    p0 = np.zeros(MC)
    pt = np.zeros(MC)
    cdx = np.zeros(MC)
    spend = np.zeros(MC)
    obj = np.zeros(MC)
    sb = np.zeros(MC)
    t = np.ones(MC)
    lam2 = np.zeros(MC)
    alpha = np.zeros(MC)
    active = np.zeros(MC, dtype=np.bool_)
    pending = np.zeros(MC, dtype=np.bool_)
    stalled = np.zeros(MC, dtype=np.bool_)
    steps_at_t = np.zeros(MC, dtype=np.int64)
    iters = np.zeros(MC, dtype=np.int64)
    status = np.zeros(MC, dtype=np.int64)

    # spend indicator for the budget row
    for i in range(S):
        for a in range(B):
            v = 1.0 if (a >= k[i] and a < bsz[i]) else 0.0
            for j in range(MC):
                kap[i, a, j] = v

    for start in range(0, M, MC):
        mc = min(MC, M - start)
        for j in range(mc):
            for a in range(d):
                th[a, j] = theta[start + j, a]
                pl[a, j] = plast[start + j, a]
            t[j] = 1.0
            sb[j] = 0.0
            stalled[j] = False
            has_snap[j] = False
            steps_at_t[j] = 0
            iters[j] = 0
            status[j] = STATUS_MAXITER
        # objective gradient in x-space
        for i in range(S):
            for a in range(B):
                for j in range(mc):
                    cg[i, a, j] = kap[i, a, j] if cost_flag else 0.0
        for c in range(k[S - 1]):
            for a in range(d):
                zz = Z[S - 1, a, c]
                if zz != 0.0:
                    for j in range(mc):
                        cg[S - 1, c, j] -= zz * th[a, j]

        # starting point: stage centres (or warm start) plus slack on spend vars
        for i in range(S):
            for a in range(B):
                for j in range(mc):
                    x[i, a, j] = 0.0
            for a in range(k[i]):
                for j in range(mc):
                    x[i, a, j] = z0[start + j, i, a] if use_z0 else zc[i, a]
        _positions(S, d, k, Z, ident, p, pl, x, y, mc)
        for j in range(mc):
            base = 0.0
            for i in range(S):
                mv = 0.0
                for a in range(d):
                    da = y[i, a, j] - (y[i - 1, a, j] if i > 0 else 0.0)
                    if norm == L2:
                        mv += da * da
                    elif norm == LINF:
                        mv = max(mv, abs(da))
                    else:
                        mv += abs(da)
                base += np.sqrt(mv) if norm == L2 else mv
                if has_r[i]:
                    base += _rows_max_r(i, d, row_ptr, Gy, Gr, Gh, y, j)
            eps = 1.0
            active[j] = True
            if use_budget:
                slack = budget - base
                if not slack > 0.0:
                    active[j] = False
                    status[j] = STATUS_INFEASIBLE_START
                    continue
                eps = slack / (2.0 * n_spend)
            for i in range(S):
                ki = k[i]
                if norm == L2:
                    s2 = 0.0
                    for a in range(d):
                        da = y[i, a, j] - (y[i - 1, a, j] if i > 0 else 0.0)
                        s2 += da * da
                    x[i, ki, j] = np.sqrt(s2) + eps
                else:
                    for a in range(d):
                        da = y[i, a, j] - (y[i - 1, a, j] if i > 0 else 0.0)
                        if norm == LINF:
                            x[i, ki, j] = max(x[i, ki, j], abs(da) + eps)
                        else:
                            x[i, ki + a, j] = abs(da) + eps
                if has_r[i]:
                    x[i, ki + q, j] = _rows_max_r(i, d, row_ptr, Gy, Gr, Gh, y, j) + eps

        _barrier(S, d, norm, q, k, has_r, row_ptr, Gy, Gr, Gh, use_budget, budget,
                 cost_flag, th, x, y, t, f0, p0, spend, prod, mins, sl, mc)
        n_active = 0
        for j in range(mc):
            if active[j] and not np.isfinite(f0[j]):
                active[j] = False
                status[j] = STATUS_INFEASIBLE_START
            if active[j]:
                n_active += 1

        while n_active > 0:
            _assemble(S, d, norm, q, k, Z, ident, has_r, row_ptr, Gy, Gr, Gh,
                      x, y, gb, H, C, gu, Hu, Cu, T, sl, mc)
            if use_budget:
                _objective(S, d, q, k, has_r, cost_flag, th, x, y, obj, spend, mc)
                for j in range(mc):
                    sb[j] = 1.0 / (budget - spend[j]) if active[j] else 0.0
            _factor(S, bsz, H, C, Lf, D, W, acc, mc)
            if use_budget:
                _tri_solve(S, bsz, C, Lf, kap, wv, tmp, mc)
            # Newton step; a second sweep re-solves after raising some t
            for sweep in range(2):
                for i in range(S):
                    for a in range(bsz[i]):
                        for j in range(mc):
                            g[i, a, j] = -(t[j] * cg[i, a, j] + gb[i, a, j]
                                           + kap[i, a, j] * sb[j])
                _tri_solve(S, bsz, C, Lf, g, dx, tmp, mc)
                if use_budget:
                    for j in range(mc):
                        ka_w = 0.0
                        ka_dx = 0.0
                        for i in range(S):
                            for a in range(k[i], bsz[i]):
                                ka_w += wv[i, a, j]
                                ka_dx += dx[i, a, j]
                        s2 = sb[j] * sb[j]
                        alpha[j] = s2 * ka_dx / (1.0 + s2 * ka_w)
                    for i in range(S):
                        for a in range(bsz[i]):
                            for j in range(mc):
                                dx[i, a, j] -= alpha[j] * wv[i, a, j]
                for j in range(mc):
                    lam2[j] = 0.0
                for i in range(S):
                    for a in range(bsz[i]):
                        for j in range(mc):
                            lam2[j] += g[i, a, j] * dx[i, a, j]
                if sweep == 1:
                    break
                centred_any = False
                for j in range(mc):
                    if active[j] and (0.5 * lam2[j] <= 1e-9 or stalled[j]
                                      or steps_at_t[j] > 60):
                        centred_any = True
                    if active[j] and (stalled[j] or steps_at_t[j] > 60) and lam2[j] > 0.25:
                        # stuck far from the central path: the nu/t bound is not valid here
                        active[j] = False
                        n_active -= 1
                        status[j] = STATUS_MAXITER
                        if has_snap[j]:
                            for i in range(S):
                                for a in range(B):
                                    x[i, a, j] = xs[i, a, j]
                            t[j] = ts[j]
                            status[j] = STATUS_LOOSE
                if not centred_any:
                    break
                _objective(S, d, q, k, has_r, cost_flag, th, x, y, obj, spend, mc)
                bumped = False
                for j in range(mc):
                    if not active[j]:
                        continue
                    if 0.5 * lam2[j] <= 1e-9 or stalled[j] or steps_at_t[j] > 60:
                        stalled[j] = False
                        steps_at_t[j] = 0
                        for i in range(S):
                            for a in range(B):
                                xs[i, a, j] = x[i, a, j]
                        ts[j] = t[j]
                        has_snap[j] = True
                        target = gap_abs + gap_rel * abs(obj[j])
                        if nu / t[j] <= target:
                            status[j] = STATUS_OK
                            active[j] = False
                            n_active -= 1
                        else:
                            # land the last stage exactly on the target
                            t[j] = min(t[j] * mu, nu / target)
                            bumped = True
                if not bumped:
                    break
            if n_active == 0:
                break
            # backtracking line search, lockstep over the still-pending queries
            _barrier(S, d, norm, q, k, has_r, row_ptr, Gy, Gr, Gh, use_budget, budget,
                     cost_flag, th, x, y, t, f0, p0, spend, prod, mins, sl, mc)
            for j in range(mc):
                cdx[j] = 0.0
            for i in range(S):
                for a in range(bsz[i]):
                    for j in range(mc):
                        cdx[j] += cg[i, a, j] * dx[i, a, j]
            n_pend = 0
            for j in range(mc):
                pending[j] = active[j]
                alpha[j] = 1.0 if active[j] else 0.0
                if active[j]:
                    n_pend += 1
                    iters[j] += 1
                    steps_at_t[j] += 1
            for _ls in range(60):
                for i in range(S):
                    for a in range(bsz[i]):
                        for j in range(mc):
                            xt[i, a, j] = x[i, a, j] + alpha[j] * dx[i, a, j]
                _positions(S, d, k, Z, ident, p, pl, xt, yt, mc)
                _barrier(S, d, norm, q, k, has_r, row_ptr, Gy, Gr, Gh, use_budget,
                         budget, cost_flag, th, xt, yt, t, ft, pt, spend, prod, mins, sl, mc)
                for j in range(mc):
                    if not pending[j]:
                        continue
                    # objective is linear, so its change is exact; only the barrier is differenced
                    df = t[j] * alpha[j] * cdx[j] + (pt[j] - p0[j])
                    if np.isfinite(pt[j]) and df <= -0.25 * alpha[j] * lam2[j]:
                        pending[j] = False
                        n_pend -= 1
                        # round-off floor: the barrier no longer decreases measurably
                        if -df <= 1e-13 * (1.0 + abs(p0[j])):
                            stalled[j] = True
                        for i in range(S):
                            for a in range(bsz[i]):
                                x[i, a, j] = xt[i, a, j]
                            for a in range(d):
                                y[i, a, j] = yt[i, a, j]
                    else:
                        alpha[j] *= 0.5
                if n_pend == 0:
                    break
            for j in range(mc):
                if pending[j]:
                    # no progress possible at this t: treat the point as centred
                    stalled[j] = True
                if active[j] and iters[j] >= max_newton:
                    active[j] = False
                    n_active -= 1
                    if has_snap[j]:
                        for i in range(S):
                            for a in range(B):
                                x[i, a, j] = xs[i, a, j]
                        t[j] = ts[j]
                        status[j] = STATUS_LOOSE

        _positions(S, d, k, Z, ident, p, pl, x, y, mc)
        _objective(S, d, q, k, has_r, cost_flag, th, x, y, obj, spend, mc)
        for j in range(mc):
            jj = start + j
            if status[j] == STATUS_INFEASIBLE_START:
                out_obj[jj] = np.nan
                out_gap[jj] = np.inf
                out_spend[jj] = np.nan
            else:
                out_obj[jj] = obj[j]
                out_gap[jj] = nu / t[j]
                out_spend[jj] = spend[j]
            out_status[jj] = status[j]
            out_iters[jj] = iters[j]
            for i in range(S):
                for a in range(d):
                    out_path[jj, i, a] = y[i, a, j]
