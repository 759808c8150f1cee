"""Compiled numerical core.

Everything that runs inside the sampler's inner loop lives here as numba
kernels over plain float64/int64 arrays: the counter-based RNG, the dense
linear-algebra primitives, the per-model log-density/gradient kernels, the
leapfrog integrator, the NUTS transition and the warm-up/sampling loops.
The public modules wrap these kernels; nothing outside this file should need
numba.

Model kernels share one dispatch function keyed by an integer code. Each
model packs its data and prior parameters into a fixed tuple of arrays
(``iargs``, ``dargs``, ``v1``..``v3``, ``m1``, ``m2``, ``gidx``); the layout
per code is documented where the containing model is built (models.py).

RNG: Philox4x32-10, keyed from (seed, stream) through a splitmix64 hash, so
per-chain streams are independent and runs are reproducible bit for bit.
Normal variates use the Box-Muller transform.
"""

import math

import numpy as np
from numba import njit

# model codes
STD_NORMAL = 0
REG_SUFF = 1
REG_NAIVE = 2
MIXED_SUFF = 3
MIXED_NAIVE = 4
FACTOR_SUFF = 5
FACTOR_WOODBURY = 6
FACTOR_NAIVE = 7
POIS_SUFF = 8
POIS_NAIVE = 9

# prior family codes
FAM_FLAT = -1
FAM_NORMAL = 0
FAM_STUDENT_T = 1
FAM_CAUCHY = 2
FAM_HALF_STUDENT_T = 3
FAM_HALF_CAUCHY = 4

LOG2 = math.log(2.0)
LOGPI = math.log(math.pi)
LOG2PI = math.log(2.0 * math.pi)
HALF_LOG2PI = 0.5 * LOG2PI

# dual averaging constants (Hoffman & Gelman defaults)
DA_GAMMA = 0.05
DA_T0 = 10.0
DA_KAPPA = 0.75

_EMPTY_I = np.empty(0, dtype=np.int64)
_EMPTY_D = np.empty(0, dtype=np.float64)
_EMPTY_M = np.empty((0, 0), dtype=np.float64)

# workspace row indices for the NUTS transition
_NWS = 17


# ---------------------------------------------------------------------------
# RNG: Philox4x32-10 with splitmix64 key derivation
# ---------------------------------------------------------------------------

_MASK32 = np.uint64(0xFFFFFFFF)
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_U64_53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True)
def _mix64(z):
    z = (z + np.uint64(0x9E3779B97F4A7C15))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def rng_init(seed, stream):
    """State vector: [counter, key64, stashed u64, stash flag]."""
    st = np.zeros(4, dtype=np.uint64)
    h = _mix64(np.uint64(seed))
    h = _mix64(h ^ (np.uint64(stream) * np.uint64(0xBF58476D1CE4E5B9) + np.uint64(1)))
    st[1] = h
    return st


@njit(cache=True)
def _next_u64(st):
    if st[3] != np.uint64(0):
        st[3] = np.uint64(0)
        return st[2]
    c = st[0]
    x0 = c & _MASK32
    x1 = (c >> np.uint64(32)) & _MASK32
    x2 = np.uint64(0)
    x3 = np.uint64(0)
    k0 = st[1] & _MASK32
    k1 = (st[1] >> np.uint64(32)) & _MASK32
    for _ in range(10):
        p0 = _PHILOX_M0 * x0
        p1 = _PHILOX_M1 * x2
        y0 = ((p1 >> np.uint64(32)) ^ x1 ^ k0) & _MASK32
        y1 = p1 & _MASK32
        y2 = ((p0 >> np.uint64(32)) ^ x3 ^ k1) & _MASK32
        y3 = p0 & _MASK32
        x0, x1, x2, x3 = y0, y1, y2, y3
        k0 = (k0 + _PHILOX_W0) & _MASK32
        k1 = (k1 + _PHILOX_W1) & _MASK32
    st[0] = c + np.uint64(1)
    st[2] = (x2 << np.uint64(32)) | x3
    st[3] = np.uint64(1)
    return (x0 << np.uint64(32)) | x1


@njit(cache=True)
def rng_uniform(st):
    """Uniform on [0, 1)."""
    return float(_next_u64(st) >> np.uint64(11)) * _U64_53


@njit(cache=True)
def _rng_open_uniform(st):
    """Uniform on (0, 1), safe for log()."""
    return (float(_next_u64(st) >> np.uint64(11)) + 0.5) * _U64_53


@njit(cache=True)
def rng_normal(st):
    u1 = _rng_open_uniform(st)
    u2 = rng_uniform(st)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


# ---------------------------------------------------------------------------
# scalar prior log-densities with gradients
# ---------------------------------------------------------------------------


@njit(cache=True)
def normal_lpg(x, loc, scale):
    z = (x - loc) / scale
    lp = -0.5 * z * z - math.log(scale) - HALF_LOG2PI
    return lp, -z / scale


@njit(cache=True)
def student_t_lpg(x, df, loc, scale):
    z = (x - loc) / scale
    lp = (
        math.lgamma(0.5 * (df + 1.0))
        - math.lgamma(0.5 * df)
        - 0.5 * math.log(df * math.pi)
        - math.log(scale)
        - 0.5 * (df + 1.0) * math.log1p(z * z / df)
    )
    dx = -(df + 1.0) * z / (scale * (df + z * z))
    return lp, dx


@njit(cache=True)
def cauchy_lpg(x, loc, scale):
    z = (x - loc) / scale
    lp = -LOGPI - math.log(scale) - math.log1p(z * z)
    dx = -2.0 * z / (scale * (1.0 + z * z))
    return lp, dx


@njit(cache=True)
def cauchy_lpg_hier(x, loc, scale):
    """Cauchy lpdf with gradients w.r.t. x, loc and scale."""
    z = (x - loc) / scale
    w = 1.0 + z * z
    lp = -LOGPI - math.log(scale) - math.log(w)
    dx = -2.0 * z / (scale * w)
    dscale = (z * z - 1.0) / (scale * w)
    return lp, dx, -dx, dscale


@njit(cache=True)
def prior_lpg(fam, df, loc, scale, x):
    """Log-density and d/dx for one prior family at a scalar point.

    Half families add the constant log 2 truncation correction; the caller
    guarantees x >= 0 for them (positivity comes from the log transform).
    """
    if fam == FAM_NORMAL:
        return normal_lpg(x, loc, scale)
    elif fam == FAM_STUDENT_T:
        return student_t_lpg(x, df, loc, scale)
    elif fam == FAM_CAUCHY:
        return cauchy_lpg(x, loc, scale)
    elif fam == FAM_HALF_STUDENT_T:
        lp, dx = student_t_lpg(x, df, loc, scale)
        return lp + LOG2, dx
    elif fam == FAM_HALF_CAUCHY:
        lp, dx = cauchy_lpg(x, loc, scale)
        return lp + LOG2, dx
    return 0.0, 0.0  # FAM_FLAT


# ---------------------------------------------------------------------------
# dense linear-algebra kernels (row-major, sizes small enough for plain loops)
# ---------------------------------------------------------------------------


@njit(cache=True)
def chol_lower(a, out):
    """Lower Cholesky factor of a into out. False when a pivot is <= 1e-300."""
    p = a.shape[0]
    for j in range(p):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not (s > 1e-300):
            return False
        d = math.sqrt(s)
        out[j, j] = d
        for i in range(j + 1, p):
            t = a[i, j]
            for k in range(j):
                t -= out[i, k] * out[j, k]
            out[i, j] = t / d
        for i in range(j):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def chol_logdet(chol):
    s = 0.0
    for i in range(chol.shape[0]):
        s += math.log(chol[i, i])
    return 2.0 * s


@njit(cache=True)
def inv_from_chol(chol, out):
    """Inverse of A = L L^T from its Cholesky factor, via M = L^-1, A^-1 = M^T M."""
    p = chol.shape[0]
    minv = np.zeros((p, p))
    for j in range(p):
        minv[j, j] = 1.0 / chol[j, j]
        for i in range(j + 1, p):
            t = 0.0
            for k in range(j, i):
                t += chol[i, k] * minv[k, j]
            minv[i, j] = -t / chol[i, i]
    for i in range(p):
        for j in range(i, p):
            t = 0.0
            for k in range(j, p):
                t += minv[k, i] * minv[k, j]
            out[i, j] = t
            out[j, i] = t


@njit(cache=True)
def woodbury_omega(psi, lam, out):
    """Omega = (Lam Lam^T + diag(psi))^-1 with a d x d inner solve.

    Also returns log|Omega| through the matrix determinant lemma:
    log|Omega| = -sum(log psi) - log|I_d + Lam^T Psi^-1 Lam|.
    Returns (ok, logdet); ok is False when the capacitance matrix fails
    Cholesky.
    """
    p, d = lam.shape
    u = np.empty(p)
    for i in range(p):
        u[i] = 1.0 / psi[i]
    w = np.empty((p, d))
    for i in range(p):
        for k in range(d):
            w[i, k] = lam[i, k] * u[i]
    cap = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            t = 0.0
            for i in range(p):
                t += lam[i, a] * w[i, b]
            cap[a, b] = t
        cap[a, a] += 1.0
    lc = np.empty((d, d))
    if not chol_lower(cap, lc):
        return False, 0.0
    # t = Lc^-1 W^T, solved column by column
    tmat = np.empty((d, p))
    for c in range(p):
        for a in range(d):
            s = w[c, a]
            for k in range(a):
                s -= lc[a, k] * tmat[k, c]
            tmat[a, c] = s / lc[a, a]
    for i in range(p):
        for j in range(i, p):
            s = 0.0
            for a in range(d):
                s -= tmat[a, i] * tmat[a, j]
            out[i, j] = s
            out[j, i] = s
        out[i, i] += u[i]
    logdet = -chol_logdet(lc)
    for i in range(p):
        logdet -= math.log(psi[i])
    return True, logdet


# ---------------------------------------------------------------------------
# model log-density + gradient dispatch
# ---------------------------------------------------------------------------


@njit(cache=True)
def _coef_prior(b, grad, fam, df, loc, scale):
    lp = 0.0
    for k in range(b.shape[0]):
        lpk, dx = prior_lpg(fam, df, loc, scale, b[k])
        lp += lpk
        grad[k] += dx
    return lp


@njit(cache=True)
def _fail(grad):
    for k in range(grad.shape[0]):
        grad[k] = 0.0
    return -np.inf


@njit(cache=True)
def _reg_lp_grad(naive, q, grad, iargs, dargs, v1, m1, m2):
    n = float(iargs[0])
    p = iargs[1]
    fix_sigma = iargs[2] == 1
    b = q[:p]
    if fix_sigma:
        ls = 0.0
        sigma = 1.0
    else:
        ls = q[p]
        sigma = math.exp(ls)
        if not (sigma > 0.0 and math.isfinite(sigma)):
            return _fail(grad)
    inv2 = 1.0 / (sigma * sigma)

    if naive:
        nn = m1.shape[0]
        mu = m1 @ b
        rss = 0.0
        for i in range(nn):
            z = (v1[i] - mu[i]) / sigma
            rss += z * z
            mu[i] = z
        lp = -n * (ls + HALF_LOG2PI) - 0.5 * rss
        g = m2 @ mu
        for k in range(p):
            grad[k] = g[k] / sigma
    else:
        syy = dargs[0]
        sxxb = m1 @ b
        rss = syy - 2.0 * (v1 @ b) + (b @ sxxb)
        lp = -n * ls - 0.5 * rss * inv2
        for k in range(p):
            grad[k] = (v1[k] - sxxb[k]) * inv2

    lp += _coef_prior(b, grad, int(dargs[1]), dargs[2], dargs[3], dargs[4])
    if not fix_sigma:
        grad[p] = -n + rss * inv2
        lps, dxs = prior_lpg(int(dargs[5]), dargs[6], dargs[7], dargs[8], sigma)
        lp += lps + ls
        grad[p] = grad[p] + dxs * sigma + 1.0
    return lp


@njit(cache=True)
def _mixed_lp_grad(naive, q, grad, iargs, dargs, v1, v2, v3, m1, m2, gidx):
    n = float(iargs[0])
    p = iargs[1]
    nj = iargs[2]
    b = q[:p]
    ls = q[p]
    lsd = q[p + 1]
    sigma = math.exp(ls)
    sd = math.exp(lsd)
    if not (sigma > 0.0 and math.isfinite(sigma) and math.isfinite(sd)):
        return _fail(grad)
    inv2 = 1.0 / (sigma * sigma)
    z = q[p + 2:]
    r = np.empty(nj)
    for j in range(nj):
        r[j] = sd * z[j]
    dldr = np.empty(nj)

    if naive:
        nn = m1.shape[0]
        mu = m1 @ b
        for j in range(nj):
            dldr[j] = 0.0
        rss = 0.0
        for i in range(nn):
            e = v1[i] - mu[i] - r[gidx[i]]
            dldr[gidx[i]] += e
            ze = e / sigma
            rss += ze * ze
            mu[i] = ze
        lp = -n * (ls + HALF_LOG2PI) - 0.5 * rss
        g = m2 @ mu
        for k in range(p):
            grad[k] = g[k] / sigma
        for j in range(nj):
            dldr[j] *= inv2
    else:
        syy_adj = dargs[0]
        sb = 0.0
        for j in range(nj):
            syy_adj += r[j] * (r[j] * v3[j] - 2.0 * v2[j])
        syx_adj = np.empty(p)
        for k in range(p):
            syx_adj[k] = v1[k]
        for j in range(nj):
            rj = r[j]
            for k in range(p):
                syx_adj[k] -= rj * m2[j, k]
        sxxb = m1 @ b
        for k in range(p):
            sb += syx_adj[k] * b[k]
        rss = syy_adj - 2.0 * sb + (b @ sxxb)
        lp = -n * ls - 0.5 * rss * inv2
        for k in range(p):
            grad[k] = (syx_adj[k] - sxxb[k]) * inv2
        for j in range(nj):
            xb = 0.0
            for k in range(p):
                xb += m2[j, k] * b[k]
            dldr[j] = (v2[j] - r[j] * v3[j] - xb) * inv2

    # latent z ~ N(0, 1) plus chain rule through r = sd * z
    dsd = 0.0
    for j in range(nj):
        lp += -0.5 * z[j] * z[j] - HALF_LOG2PI
        grad[p + 2 + j] = sd * dldr[j] - z[j]
        dsd += z[j] * dldr[j]

    lp += _coef_prior(b, grad, int(dargs[1]), dargs[2], dargs[3], dargs[4])
    lps, dxs = prior_lpg(int(dargs[5]), dargs[6], dargs[7], dargs[8], sigma)
    lp += lps + ls
    grad[p] = -n + rss * inv2 + dxs * sigma + 1.0
    lpu, dxu = prior_lpg(int(dargs[9]), dargs[10], dargs[11], dargs[12], sd)
    lp += lpu + lsd
    grad[p + 1] = (dsd + dxu) * sd + 1.0
    return lp


@njit(cache=True)
def _factor_lp_grad(code, q, grad, iargs, dargs, m1):
    n = float(iargs[0])
    p = iargs[1]
    d = iargs[2]
    m = iargs[3]
    ld_scale = dargs[0]

    lt = q[:m]
    ld = np.empty(d)
    for j in range(d):
        ld[j] = math.exp(q[m + j])
        if not math.isfinite(ld[j]):
            return _fail(grad)
    psi = np.empty(p)
    for j in range(p):
        psi[j] = math.exp(q[m + d + j])
        if not math.isfinite(psi[j]):
            return _fail(grad)
    h = m + d + p
    mu_psi = math.exp(q[h])
    sigma_psi = math.exp(q[h + 1])
    mu_lt = q[h + 2]
    sigma_lt = math.exp(q[h + 3])
    if not (math.isfinite(mu_psi) and math.isfinite(sigma_psi) and math.isfinite(sigma_lt)):
        return _fail(grad)

    # assemble the loading matrix: zero upper triangle, positive diagonal,
    # free entries packed column-major below the diagonal
    lam = np.zeros((p, d))
    idx = 0
    for j in range(d):
        lam[j, j] = ld[j]
        for i in range(j + 1, p):
            lam[i, j] = lt[idx]
            idx += 1

    omega = np.empty((p, p))
    if code == FACTOR_WOODBURY:
        ok, logdet_om = woodbury_omega(psi, lam, omega)
        if not ok:
            return _fail(grad)
    else:
        sig = lam @ lam.T
        for i in range(p):
            sig[i, i] += psi[i]
        lc = np.empty((p, p))
        if not chol_lower(sig, lc):
            return _fail(grad)
        logdet_om = -chol_logdet(lc)
        inv_from_chol(lc, omega)

    if code == FACTOR_NAIVE:
        # per-observation route: m1 holds the raw n x p data matrix
        nn = m1.shape[0]
        t1 = m1 @ omega
        qsum = 0.0
        for i in range(nn):
            for k in range(p):
                qsum += t1[i, k] * m1[i, k]
        tr = qsum / n
        s = (m1.T @ m1) / n
    else:
        s = m1
        tr = 0.0
        for i in range(p):
            for j in range(p):
                tr += s[i, j] * omega[j, i]

    lp = 0.5 * n * (-p * LOG2PI + logdet_om - tr)

    # dl/dSigma = (n/2) (Omega S Omega - Omega); dl/dLam = 2 G Lam; dl/dpsi_j = G_jj
    g = omega @ (s @ omega)
    for i in range(p):
        for j in range(p):
            g[i, j] = 0.5 * n * (g[i, j] - omega[i, j])
    gl = g @ lam

    dmu_psi = 0.0
    dsig_psi = 0.0
    for j in range(p):
        lpj, dx, dm, ds = cauchy_lpg_hier(psi[j], mu_psi, sigma_psi)
        lp += lpj + LOG2 + q[m + d + j]
        grad[m + d + j] = (g[j, j] + dx) * psi[j] + 1.0
        dmu_psi += dm
        dsig_psi += ds

    dmu_lt = 0.0
    dsig_lt = 0.0
    idx = 0
    for j in range(d):
        lpj, dx = cauchy_lpg(ld[j], 0.0, ld_scale)
        lp += lpj + LOG2 + q[m + j]
        grad[m + j] = (2.0 * gl[j, j] + dx) * ld[j] + 1.0
        for i in range(j + 1, p):
            lpe, dxe, dme, dse = cauchy_lpg_hier(lt[idx], mu_lt, sigma_lt)
            lp += lpe
            grad[idx] = 2.0 * gl[i, j] + dxe
            dmu_lt += dme
            dsig_lt += dse
            idx += 1

    lph, dxh = cauchy_lpg(mu_psi, 0.0, dargs[1])
    lp += lph + LOG2 + q[h]
    grad[h] = (dmu_psi + dxh) * mu_psi + 1.0
    lph, dxh = cauchy_lpg(sigma_psi, 0.0, dargs[2])
    lp += lph + LOG2 + q[h + 1]
    grad[h + 1] = (dsig_psi + dxh) * sigma_psi + 1.0
    lph, dxh = cauchy_lpg(mu_lt, 0.0, dargs[3])
    lp += lph
    grad[h + 2] = dmu_lt + dxh
    lph, dxh = cauchy_lpg(sigma_lt, 0.0, dargs[4])
    lp += lph + LOG2 + q[h + 3]
    grad[h + 3] = (dsig_lt + dxh) * sigma_lt + 1.0
    return lp


@njit(cache=True)
def _poisson_lp_grad(naive, q, grad, iargs, dargs, v1, m1, m2):
    p = iargs[1]
    nn = m1.shape[0]
    b = q[:p]
    eta = m1 @ b
    for i in range(nn):
        if eta[i] > 700.0:
            return _fail(grad)
    lp = 0.0
    if naive:
        sexp = 0.0
        for i in range(nn):
            w = math.exp(eta[i])
            sexp += w
            lp += v1[i] * eta[i]
            eta[i] = v1[i] - w
        lp -= sexp
        g = m2 @ eta
        for k in range(p):
            grad[k] = g[k]
    else:
        sexp = 0.0
        for i in range(nn):
            w = math.exp(eta[i])
            sexp += w
            eta[i] = w
        lp = (v1 @ b) - sexp
        g = m2 @ eta
        for k in range(p):
            grad[k] = v1[k] - g[k]
    lp += _coef_prior(b, grad, int(dargs[0]), dargs[1], dargs[2], dargs[3])
    return lp


@njit(cache=True)
def model_lp_grad(code, q, grad, margs):
    """Joint log-density (up to a constant) and gradient, unconstrained scale.

    Returns -inf with a zero gradient on degenerate points (failed Cholesky,
    exp overflow); the sampler treats those as divergences.
    """
    iargs, dargs, v1, v2, v3, m1, m2, gidx = margs
    if code == STD_NORMAL:
        lp = 0.0
        for k in range(q.shape[0]):
            lp -= 0.5 * q[k] * q[k]
            grad[k] = -q[k]
        return lp
    elif code == REG_SUFF:
        return _reg_lp_grad(False, q, grad, iargs, dargs, v1, m1, m2)
    elif code == REG_NAIVE:
        return _reg_lp_grad(True, q, grad, iargs, dargs, v1, m1, m2)
    elif code == MIXED_SUFF:
        return _mixed_lp_grad(False, q, grad, iargs, dargs, v1, v2, v3, m1, m2, gidx)
    elif code == MIXED_NAIVE:
        return _mixed_lp_grad(True, q, grad, iargs, dargs, v1, v2, v3, m1, m2, gidx)
    elif code == FACTOR_SUFF or code == FACTOR_WOODBURY or code == FACTOR_NAIVE:
        return _factor_lp_grad(code, q, grad, iargs, dargs, m1)
    elif code == POIS_SUFF:
        return _poisson_lp_grad(False, q, grad, iargs, dargs, v1, m1, m2)
    elif code == POIS_NAIVE:
        return _poisson_lp_grad(True, q, grad, iargs, dargs, v1, m1, m2)
    return _fail(grad)


# ---------------------------------------------------------------------------
# leapfrog and NUTS transition
# ---------------------------------------------------------------------------


@njit(cache=True)
def leapfrog_step(code, margs, q, pmom, grad, eps, inv_mass):
    """One in-place leapfrog step; returns the new log-density."""
    he = 0.5 * eps
    for k in range(q.shape[0]):
        pmom[k] += he * grad[k]
        q[k] += eps * inv_mass[k] * pmom[k]
    lp = model_lp_grad(code, q, grad, margs)
    for k in range(q.shape[0]):
        pmom[k] += he * grad[k]
    return lp


@njit(cache=True)
def _kinetic(pmom, inv_mass):
    t = 0.0
    for k in range(pmom.shape[0]):
        t += inv_mass[k] * pmom[k] * pmom[k]
    return 0.5 * t


@njit(cache=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit(cache=True)
def nuts_transition(code, margs, q, lp, grad, eps, inv_mass, max_depth,
                    max_delta, st, ws, ck_q, ck_ps, stats):
    """One multinomial NUTS transition; q and grad are updated in place.

    Trajectories grow by doubling until the U-turn criterion (dot products of
    the endpoint momenta with the endpoint position difference) fails, a
    divergence occurs, or max_depth doublings beyond the first single-step
    subtree have been made. States are selected multinomially by posterior
    weight, with the biased-progressive rule across doublings.

    ``ws`` is a (17, D) scratch matrix; ``ck_q``/``ck_ps`` hold the U-turn
    checkpoints for the iterative subtree construction. ``stats`` receives
    [treedepth, n_leapfrog, divergent, energy, accept_sum, accept_count].
    """
    ndim = q.shape[0]
    qm, pm, gm = ws[0], ws[1], ws[2]
    qp, pp, gp = ws[3], ws[4], ws[5]
    psm, psp = ws[6], ws[7]
    qprop, gprop = ws[8], ws[9]
    qsub, gsub = ws[10], ws[11]
    qw, pw, gw = ws[12], ws[13], ws[14]
    psw = ws[15]
    p0 = ws[16]

    for k in range(ndim):
        z = rng_normal(st)
        p0[k] = z / math.sqrt(inv_mass[k])
    h0 = -lp + _kinetic(p0, inv_mass)

    for k in range(ndim):
        qm[k] = q[k]
        qp[k] = q[k]
        pm[k] = p0[k]
        pp[k] = p0[k]
        gm[k] = grad[k]
        gp[k] = grad[k]
        psm[k] = inv_mass[k] * p0[k]
        psp[k] = psm[k]
        qprop[k] = q[k]
        gprop[k] = grad[k]
    lpm = lp
    lpp = lp
    lp_prop = lp
    h_prop = h0

    logw_traj = 0.0
    sum_acc = 0.0
    n_acc = 0.0
    n_leap = 0.0
    divergent = 0.0
    depth = 0
    last_depth = 0

    while True:
        forward = rng_uniform(st) < 0.5
        v = 1.0 if forward else -1.0
        if forward:
            for k in range(ndim):
                qw[k] = qp[k]
                pw[k] = pp[k]
                gw[k] = gp[k]
        else:
            for k in range(ndim):
                qw[k] = qm[k]
                pw[k] = pm[k]
                gw[k] = gm[k]

        logw_sub = -np.inf
        lp_sub = 0.0
        h_sub = 0.0
        sub_turned = False
        sub_diverged = False
        nleaves = 1 << depth
        lpw = 0.0

        for leaf in range(nleaves):
            lpw = leapfrog_step(code, margs, qw, pw, gw, v * eps, inv_mass)
            n_leap += 1.0
            h = -lpw + _kinetic(pw, inv_mass)
            dh = h - h0
            if dh < 0.0:
                sum_acc += 1.0
            elif dh < 100.0:
                sum_acc += math.exp(-dh)
            n_acc += 1.0
            if not (dh < max_delta):
                sub_diverged = True
                break
            for k in range(ndim):
                psw[k] = inv_mass[k] * pw[k]
            lw = -dh
            logw_new = _logaddexp(logw_sub, lw)
            if math.log(_rng_open_uniform(st)) < lw - logw_new:
                for k in range(ndim):
                    qsub[k] = qw[k]
                    gsub[k] = gw[k]
                lp_sub = lpw
                h_sub = h
            logw_sub = logw_new

            if leaf % 2 == 0:
                slot = _popcount(leaf >> 1)
                for k in range(ndim):
                    ck_q[slot, k] = qw[k]
                    ck_ps[slot, k] = psw[k]
            else:
                idx_max = _popcount(leaf >> 1)
                t = 0
                while (leaf >> t) & 1:
                    t += 1
                idx_min = idx_max - t + 1
                for s in range(idx_max, idx_min - 1, -1):
                    d1 = 0.0
                    d2 = 0.0
                    for k in range(ndim):
                        dq = v * (qw[k] - ck_q[s, k])
                        d1 += dq * ck_ps[s, k]
                        d2 += dq * psw[k]
                    if d1 < 0.0 or d2 < 0.0:
                        sub_turned = True
                        break
                if sub_turned:
                    break

        last_depth = depth
        if sub_diverged:
            divergent = 1.0
            break
        if forward:
            for k in range(ndim):
                qp[k] = qw[k]
                pp[k] = pw[k]
                gp[k] = gw[k]
                psp[k] = inv_mass[k] * pw[k]
            lpp = lpw
        else:
            for k in range(ndim):
                qm[k] = qw[k]
                pm[k] = pw[k]
                gm[k] = gw[k]
                psm[k] = inv_mass[k] * pw[k]
            lpm = lpw
        if sub_turned:
            break

        # biased progressive selection between old trajectory and new subtree
        if math.log(_rng_open_uniform(st)) < logw_sub - logw_traj:
            for k in range(ndim):
                qprop[k] = qsub[k]
                gprop[k] = gsub[k]
            lp_prop = lp_sub
            h_prop = h_sub
        logw_traj = _logaddexp(logw_traj, logw_sub)

        d1 = 0.0
        d2 = 0.0
        for k in range(ndim):
            dq = qp[k] - qm[k]
            d1 += dq * psm[k]
            d2 += dq * psp[k]
        if d1 < 0.0 or d2 < 0.0:
            break
        depth += 1
        if depth > max_depth:
            break

    for k in range(ndim):
        q[k] = qprop[k]
        grad[k] = gprop[k]
    stats[0] = float(last_depth)
    stats[1] = n_leap
    stats[2] = divergent
    stats[3] = h_prop
    stats[4] = sum_acc
    stats[5] = n_acc
    return lp_prop


# ---------------------------------------------------------------------------
# adaptation and chain loops
# ---------------------------------------------------------------------------


@njit(cache=True)
def find_reasonable_epsilon(code, margs, q, lp, grad, inv_mass, st):
    """Stan-style initial step-size heuristic.

    Doubles/halves eps until the single-step acceptance crosses 0.8, reusing
    one sampled momentum throughout.
    """
    ndim = q.shape[0]
    eps = 1.0
    p0 = np.empty(ndim)
    for k in range(ndim):
        p0[k] = rng_normal(st) / math.sqrt(inv_mass[k])
    h0 = -lp + _kinetic(p0, inv_mass)
    qt = np.empty(ndim)
    pt = np.empty(ndim)
    gt = np.empty(ndim)
    log08 = math.log(0.8)

    def probe(e):
        for k in range(ndim):
            qt[k] = q[k]
            pt[k] = p0[k]
            gt[k] = grad[k]
        lpt = leapfrog_step(code, margs, qt, pt, gt, e, inv_mass)
        h = -lpt + _kinetic(pt, inv_mass)
        if math.isnan(h):
            return -np.inf
        return h0 - h

    delta = probe(eps)
    direction = 1 if delta > log08 else -1
    for _ in range(100):
        delta = probe(eps)
        if direction == 1 and not (delta > log08):
            break
        if direction == -1 and not (delta < log08):
            break
        eps = eps * 2.0 if direction == 1 else eps * 0.5
        if eps > 1e7 or eps < 1e-16:
            break
    return eps


@njit(cache=True)
def run_warmup(code, margs, q, warmup, target_accept, max_depth, max_delta,
               st, window_ends, init_buffer, eps_fixed, adapt_mass):
    """Warm-up loop: dual-averaging step size plus windowed variance metric.

    ``window_ends`` lists the warm-up iterations (1-based) at which a slow
    window closes and the diagonal inverse mass is re-estimated; empty when
    metric adaptation is off. ``eps_fixed > 0`` disables all step-size
    adaptation. Returns the final state, frozen eps, inverse metric, and the
    per-iteration eps/divergence traces.
    """
    ndim = q.shape[0]
    inv_mass = np.ones(ndim)
    grad = np.empty(ndim)
    lp = model_lp_grad(code, q, grad, margs)
    ws = np.empty((_NWS, ndim))
    ck_q = np.empty((max_depth + 2, ndim))
    ck_ps = np.empty((max_depth + 2, ndim))
    stats = np.empty(6)
    eps_trace = np.zeros(warmup)
    div_trace = np.zeros(warmup)

    adapting = eps_fixed <= 0.0
    if adapting:
        eps = find_reasonable_epsilon(code, margs, q, lp, grad, inv_mass, st)
        mu = math.log(10.0 * eps)
        hbar = 0.0
        log_ebar = 0.0
        acount = 0.0
    else:
        eps = eps_fixed
        mu = 0.0
        hbar = 0.0
        log_ebar = math.log(eps)
        acount = 0.0

    wn = 0.0
    wmean = np.zeros(ndim)
    wm2 = np.zeros(ndim)
    wptr = 0
    term_start = warmup
    if window_ends.shape[0] > 0:
        term_start = window_ends[window_ends.shape[0] - 1]

    for it in range(warmup):
        lp = nuts_transition(code, margs, q, lp, grad, eps, inv_mass,
                             max_depth, max_delta, st, ws, ck_q, ck_ps, stats)
        div_trace[it] = stats[2]
        if adapting:
            alpha = stats[4] / stats[5] if stats[5] > 0 else 0.0
            acount += 1.0
            eta = 1.0 / (acount + DA_T0)
            hbar = (1.0 - eta) * hbar + eta * (target_accept - alpha)
            log_eps = mu - math.sqrt(acount) * hbar / DA_GAMMA
            eps = math.exp(log_eps)
            xeta = acount ** (-DA_KAPPA)
            log_ebar = (1.0 - xeta) * log_ebar + xeta * log_eps

            if adapt_mass and wptr < window_ends.shape[0] and it >= init_buffer and it < term_start:
                wn += 1.0
                for k in range(ndim):
                    dlt = q[k] - wmean[k]
                    wmean[k] += dlt / wn
                    wm2[k] += dlt * (q[k] - wmean[k])
                if it + 1 == window_ends[wptr]:
                    if wn > 1.0:
                        for k in range(ndim):
                            var = wm2[k] / (wn - 1.0)
                            inv_mass[k] = (wn / (wn + 5.0)) * var + 1e-3 * (5.0 / (wn + 5.0))
                    wn = 0.0
                    for k in range(ndim):
                        wmean[k] = 0.0
                        wm2[k] = 0.0
                    wptr += 1
                    eps = find_reasonable_epsilon(code, margs, q, lp, grad, inv_mass, st)
                    mu = math.log(10.0 * eps)
                    hbar = 0.0
                    log_ebar = math.log(eps)
                    acount = 0.0
        eps_trace[it] = eps

    if adapting and acount > 0.0:
        eps = math.exp(log_ebar)
    return q, lp, grad, eps, inv_mass, eps_trace, div_trace


@njit(cache=True)
def run_draws(code, margs, q, lp, grad, eps, inv_mass, max_depth, max_delta,
              st, out_draws, out_lp, out_stats):
    """Sampling loop: fills out_draws (unconstrained scale) and statistics.

    out_stats columns: treedepth, n_leapfrog, divergent, energy, accept_stat.
    """
    ndim = q.shape[0]
    ndraws = out_draws.shape[0]
    ws = np.empty((_NWS, ndim))
    ck_q = np.empty((max_depth + 2, ndim))
    ck_ps = np.empty((max_depth + 2, ndim))
    stats = np.empty(6)
    for it in range(ndraws):
        lp = nuts_transition(code, margs, q, lp, grad, eps, inv_mass,
                             max_depth, max_delta, st, ws, ck_q, ck_ps, stats)
        for k in range(ndim):
            out_draws[it, k] = q[k]
        out_lp[it] = lp
        out_stats[it, 0] = stats[0]
        out_stats[it, 1] = stats[1]
        out_stats[it, 2] = stats[2]
        out_stats[it, 3] = stats[3]
        out_stats[it, 4] = stats[4] / stats[5] if stats[5] > 0 else 0.0


@njit(cache=True)
def init_position(code, margs, ndim, init_radius, st, max_tries):
    """Uniform draws on [-init_radius, init_radius]^D until lp is finite."""
    q = np.empty(ndim)
    grad = np.empty(ndim)
    for _ in range(max_tries):
        for k in range(ndim):
            q[k] = (2.0 * rng_uniform(st) - 1.0) * init_radius
        lp = model_lp_grad(code, q, grad, margs)
        if math.isfinite(lp):
            return q, True
    return q, False


def empty_margs():
    """Arg tuple template; models overwrite the slots they use."""
    return (_EMPTY_I, _EMPTY_D, _EMPTY_D, _EMPTY_D, _EMPTY_D,
            _EMPTY_M, _EMPTY_M, _EMPTY_I)
