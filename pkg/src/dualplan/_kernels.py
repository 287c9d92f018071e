"""Compiled numerical kernels shared by the public API and the tree search.

Everything here works on plain float arrays so that the same code path is
used by single-step Python calls and by the compiled planner loops.  The
augmented vector ``s`` is always ``[state, params]``.
"""
import math

import numpy as np
from numba import njit

DOUBLE_INTEGRATOR = 0
PLANAR = 1

L1 = 0
L2 = 1

# layout of the per-model constants vector
C_DT = 0
C_UMAX = 1
C_RBX = 2
C_RBY = 3
C_FD = 4

JITTER = 1e-9
PSD_TOL = 1e-9

OK = 0
DIVERGED = 1


@njit(cache=True)
def state_dim(kind):
    return 2 if kind == DOUBLE_INTEGRATOR else 6


@njit(cache=True)
def control_dim(kind):
    return 1 if kind == DOUBLE_INTEGRATOR else 3


@njit(cache=True)
def obs_dim(kind):
    return 2 if kind == DOUBLE_INTEGRATOR else 9


@njit(cache=True)
def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    two_pi = 2.0 * math.pi
    y = math.pi - theta
    y -= two_pi * math.floor(y / two_pi)
    return math.pi - y


@njit(cache=True)
def torque_arms(theta, rx, ry):
    g1 = math.cos(theta) * ry + math.sin(theta) * rx
    g2 = math.cos(theta) * rx - math.sin(theta) * ry
    return g1, g2


@njit(cache=True)
def dynamics(kind, c, s, u):
    out = s.copy()
    dt = c[C_DT]
    if kind == DOUBLE_INTEGRATOR:
        m = s[2]
        out[0] = s[0] + dt * s[1] + 0.5 * dt * dt / m * u[0]
        out[1] = s[1] + dt / m * u[0]
    else:
        th = s[2]
        m = s[6]
        J = s[7]
        mu = s[8]
        g1, g2 = torque_arms(th, s[9], s[10])
        damp = 1.0 - mu * dt / m
        out[0] = s[0] + dt * s[3]
        out[1] = s[1] + dt * s[4]
        out[2] = th + dt * s[5]
        out[3] = damp * s[3] + dt / m * u[0]
        out[4] = damp * s[4] + dt / m * u[1]
        out[5] = s[5] + dt / J * (g1 * u[0] + g2 * u[1] + u[2])
    return out


@njit(cache=True)
def dynamics_jacobian(kind, c, s, u):
    n = s.shape[0]
    F = np.eye(n)
    dt = c[C_DT]
    if kind == DOUBLE_INTEGRATOR:
        m = s[2]
        F[0, 1] = dt
        F[0, 2] = -0.5 * dt * dt * u[0] / (m * m)
        F[1, 2] = -dt * u[0] / (m * m)
    else:
        th = s[2]
        m = s[6]
        J = s[7]
        mu = s[8]
        rx = s[9]
        ry = s[10]
        ct = math.cos(th)
        st = math.sin(th)
        g1, g2 = torque_arms(th, rx, ry)
        F[0, 3] = dt
        F[1, 4] = dt
        F[2, 5] = dt
        damp = 1.0 - mu * dt / m
        F[3, 3] = damp
        F[4, 4] = damp
        F[3, 6] = mu * dt * s[3] / (m * m) - dt * u[0] / (m * m)
        F[4, 6] = mu * dt * s[4] / (m * m) - dt * u[1] / (m * m)
        F[3, 8] = -dt * s[3] / m
        F[4, 8] = -dt * s[4] / m
        dg1 = -st * ry + ct * rx
        dg2 = -st * rx - ct * ry
        F[5, 2] = dt / J * (dg1 * u[0] + dg2 * u[1])
        F[5, 7] = -dt / (J * J) * (g1 * u[0] + g2 * u[1] + u[2])
        F[5, 9] = dt / J * (st * u[0] + ct * u[1])
        F[5, 10] = dt / J * (ct * u[0] - st * u[1])
    return F


@njit(cache=True)
def measure(kind, c, s, u):
    if kind == DOUBLE_INTEGRATOR:
        y = np.empty(2)
        y[0] = s[0]
        y[1] = s[1]
        return y
    rbx = c[C_RBX]
    rby = c[C_RBY]
    y = np.empty(9)
    th = s[2]
    vx = s[3]
    vy = s[4]
    om = s[5]
    m = s[6]
    J = s[7]
    mu = s[8]
    g1, g2 = torque_arms(th, s[9], s[10])
    alpha = (u[2] + g1 * u[0] + g2 * u[1]) / J
    y[0] = s[0] + rbx
    y[1] = s[1] + rby
    y[2] = th
    y[3] = vx - om * rby
    y[4] = vy + om * rbx
    y[5] = om
    y[6] = (u[0] - mu * vx) / m - alpha * rby - om * om * rbx
    y[7] = (u[1] - mu * vy) / m + alpha * rbx - om * om * rby
    y[8] = alpha
    return y


@njit(cache=True)
def measure_jacobian(kind, c, s, u):
    n = s.shape[0]
    if kind == DOUBLE_INTEGRATOR:
        H = np.zeros((2, n))
        H[0, 0] = 1.0
        H[1, 1] = 1.0
        return H
    rbx = c[C_RBX]
    rby = c[C_RBY]
    H = np.zeros((9, n))
    th = s[2]
    vx = s[3]
    vy = s[4]
    om = s[5]
    m = s[6]
    J = s[7]
    mu = s[8]
    rx = s[9]
    ry = s[10]
    ct = math.cos(th)
    st = math.sin(th)
    g1, g2 = torque_arms(th, rx, ry)
    alpha = (u[2] + g1 * u[0] + g2 * u[1]) / J
    for i in range(6):
        H[i, i] = 1.0
    H[3, 5] = -rby
    H[4, 5] = rbx
    # angular acceleration row; rows 6-7 reuse it through the lever arm
    dalpha = np.zeros(n)
    dalpha[2] = ((-st * ry + ct * rx) * u[0] + (-st * rx - ct * ry) * u[1]) / J
    dalpha[7] = -alpha / J
    dalpha[9] = (st * u[0] + ct * u[1]) / J
    dalpha[10] = (ct * u[0] - st * u[1]) / J
    for j in range(n):
        H[8, j] = dalpha[j]
        H[6, j] = -rby * dalpha[j]
        H[7, j] = rbx * dalpha[j]
    H[6, 3] += -mu / m
    H[6, 5] += -2.0 * om * rbx
    H[6, 6] += -(u[0] - mu * vx) / (m * m)
    H[6, 8] += -vx / m
    H[7, 4] += -mu / m
    H[7, 5] += -2.0 * om * rby
    H[7, 6] += -(u[1] - mu * vy) / (m * m)
    H[7, 8] += -vy / m
    return H


@njit(cache=True)
def fd_step(x):
    return max(1e-6, 1e-6 * abs(x))


@njit(cache=True)
def dynamics_jacobian_fd(kind, c, s, u):
    n = s.shape[0]
    F = np.empty((n, n))
    for j in range(n):
        h = fd_step(s[j])
        sp = s.copy()
        sm = s.copy()
        sp[j] += h
        sm[j] -= h
        F[:, j] = (dynamics(kind, c, sp, u) - dynamics(kind, c, sm, u)) / (2.0 * h)
    return F


@njit(cache=True)
def measure_jacobian_fd(kind, c, s, u):
    n = s.shape[0]
    H = np.empty((obs_dim(kind), n))
    for j in range(n):
        h = fd_step(s[j])
        sp = s.copy()
        sm = s.copy()
        sp[j] += h
        sm[j] -= h
        H[:, j] = (measure(kind, c, sp, u) - measure(kind, c, sm, u)) / (2.0 * h)
    return H


@njit(cache=True)
def jac_f(kind, c, s, u):
    if c[C_FD] > 0.5:
        return dynamics_jacobian_fd(kind, c, s, u)
    return dynamics_jacobian(kind, c, s, u)


@njit(cache=True)
def jac_h(kind, c, s, u):
    if c[C_FD] > 0.5:
        return measure_jacobian_fd(kind, c, s, u)
    return measure_jacobian(kind, c, s, u)


@njit(cache=True)
def clamp_params(mean, lower, nx):
    for i in range(lower.shape[0]):
        if mean[nx + i] < lower[i]:
            mean[nx + i] = lower[i]


@njit(cache=True)
def all_finite(a):
    for v in a.ravel():
        if not math.isfinite(v):
            return False
    return True


@njit(cache=True)
def cholesky(A):
    """Lower Cholesky factor; ok is False when a pivot is not positive."""
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return L, False
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            acc = A[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    return L, True


@njit(cache=True)
def cholesky_solve(L, B):
    n = L.shape[0]
    m = B.shape[1]
    X = B.copy()
    for col in range(m):
        for i in range(n):
            acc = X[i, col]
            for k in range(i):
                acc -= L[i, k] * X[k, col]
            X[i, col] = acc / L[i, i]
        for i in range(n - 1, -1, -1):
            acc = X[i, col]
            for k in range(i + 1, n):
                acc -= L[k, i] * X[k, col]
            X[i, col] = acc / L[i, i]
    return X


@njit(cache=True)
def mm(A, B):
    """Small dense product; explicit loops beat BLAS dispatch at these sizes."""
    n, k = A.shape
    m = B.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for p in range(k):
            a = A[i, p]
            if a != 0.0:
                for j in range(m):
                    out[i, j] += a * B[p, j]
    return out


@njit(cache=True)
def mmt(A, B):
    """A @ B.T"""
    n, k = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += A[i, p] * B[j, p]
            out[i, j] = acc
    return out


@njit(cache=True)
def mv(A, x):
    n, k = A.shape
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for p in range(k):
            acc += A[i, p] * x[p]
        out[i] = acc
    return out


@njit(cache=True)
def symmetrize_psd(P):
    """Symmetrize, then floor negative eigenvalues if PSD is violated beyond tolerance."""
    n = P.shape[0]
    P = 0.5 * (P + P.T)
    if not all_finite(P):
        # left for the caller's finiteness check to report
        return P
    _, psd = cholesky(P + PSD_TOL * np.eye(n))
    if not psd:
        w, V = np.linalg.eigh(P)
        for i in range(n):
            if w[i] < 0.0:
                w[i] = 0.0
        P = (V * w) @ V.T
        P = 0.5 * (P + P.T)
    return P


@njit(cache=True)
def ekf_predict(kind, c, mean, cov, u, noise_cov):
    F = jac_f(kind, c, mean, u)
    new_mean = dynamics(kind, c, mean, u)
    new_cov = symmetrize_psd(mmt(mm(F, cov), F) + noise_cov)
    status = OK if (all_finite(new_mean) and all_finite(new_cov)) else DIVERGED
    return new_mean, new_cov, status


@njit(cache=True)
def ekf_correct(kind, c, mean, cov, u, o, R, lower):
    nx = state_dim(kind)
    n = mean.shape[0]
    H = jac_h(kind, c, mean, u)
    resid = o - measure(kind, c, mean, u)
    HP = mm(H, cov)
    S = mmt(HP, H) + R + JITTER * np.eye(H.shape[0])
    if not all_finite(S):
        return mean, cov, DIVERGED
    L, ok = cholesky(0.5 * (S + S.T))
    if not ok:
        return mean, cov, DIVERGED
    # K^T = S^-1 H cov
    Kt = cholesky_solve(L, HP)
    K = Kt.T
    new_mean = mean + mv(K, resid)
    new_cov = symmetrize_psd(mm(np.eye(n) - mm(K, H), cov))
    clamp_params(new_mean, lower, nx)
    status = OK if (all_finite(new_mean) and all_finite(new_cov)) else DIVERGED
    return new_mean, new_cov, status


@njit(cache=True)
def reward(kind, reward_kind, weights, x, u):
    """Penalty on position block, velocity block and control (weights <= 0)."""
    nx = x.shape[0]
    half = nx // 2
    total = 0.0
    for i in range(nx):
        v = x[i]
        if kind == PLANAR and i == 2:
            v = wrap_angle(v)
        w = weights[0] if i < half else weights[1]
        if reward_kind == L1:
            total += w * abs(v)
        else:
            total += w * v * v
    for i in range(u.shape[0]):
        if reward_kind == L1:
            total += weights[2] * abs(u[i])
        else:
            total += weights[2] * u[i] * u[i]
    return total


@njit(cache=True)
def _psd3(a00, a01, a02, a11, a12, a22):
    """Cholesky test of a symmetric 3x3 matrix shifted by PSD_TOL."""
    d0 = a00 + PSD_TOL
    if not d0 > 0.0:
        return False
    l10 = a01 / d0
    l20 = a02 / d0
    d1 = a11 + PSD_TOL - l10 * a01
    if not d1 > 0.0:
        return False
    l21 = (a12 - l10 * a02) / d1
    d2 = a22 + PSD_TOL - l20 * a02 - l21 * l21 * d1
    return d2 > 0.0


@njit(cache=True)
def generate_1d(c, mean, cov, u, noise_cov, noise_sqrt, R, R_sqrt, lower, z_proc, z_obs):
    """Unrolled :func:`generate` for the double integrator (augmented dimension 3)."""
    dt = c[C_DT]
    f = u[0]
    x = mean[0]
    v = mean[1]
    m = mean[2]
    a = 0.5 * dt * dt / m
    b = dt / m
    px = x + dt * v + a * f
    pv = v + b * f
    # sampled next truth and its exact observation plus noise
    t0 = px
    t1 = pv
    t2 = m
    for j in range(3):
        t0 += noise_sqrt[0, j] * z_proc[j]
        t1 += noise_sqrt[1, j] * z_proc[j]
        t2 += noise_sqrt[2, j] * z_proc[j]
    if t2 < lower[0]:
        t2 = lower[0]
    o = np.empty(2)
    o[0] = t0 + R_sqrt[0, 0] * z_obs[0] + R_sqrt[0, 1] * z_obs[1]
    o[1] = t1 + R_sqrt[1, 0] * z_obs[0] + R_sqrt[1, 1] * z_obs[1]
    # predict: F = [[1, dt, f02], [0, 1, f12], [0, 0, 1]]
    f02 = -a * f / m
    f12 = -b * f / m
    s00 = cov[0, 0]
    s01 = cov[0, 1]
    s02 = cov[0, 2]
    s11 = cov[1, 1]
    s12 = cov[1, 2]
    s22 = cov[2, 2]
    r00 = s00 + dt * s01 + f02 * s02
    r01 = s01 + dt * s11 + f02 * s12
    r02 = s02 + dt * s12 + f02 * s22
    r11 = s11 + f12 * s12
    r12 = s12 + f12 * s22
    p00 = r00 + dt * r01 + f02 * r02 + noise_cov[0, 0]
    p01 = r01 + f12 * r02 + noise_cov[0, 1]
    p02 = r02 + noise_cov[0, 2]
    p11 = r11 + f12 * r12 + noise_cov[1, 1]
    p12 = r12 + noise_cov[1, 2]
    p22 = s22 + noise_cov[2, 2]
    # correct with H = [I 0]
    S00 = p00 + R[0, 0] + JITTER
    S01 = p01 + 0.5 * (R[0, 1] + R[1, 0])
    S11 = p11 + R[1, 1] + JITTER
    new_mean = np.empty(3)
    new_cov = np.empty((3, 3))
    if not (S00 > 0.0 and S11 - S01 * S01 / S00 > 0.0):
        return mean, cov, o, DIVERGED
    det = S00 * S11 - S01 * S01
    i00 = S11 / det
    i01 = -S01 / det
    i11 = S00 / det
    k00 = p00 * i00 + p01 * i01
    k01 = p00 * i01 + p01 * i11
    k10 = p01 * i00 + p11 * i01
    k11 = p01 * i01 + p11 * i11
    k20 = p02 * i00 + p12 * i01
    k21 = p02 * i01 + p12 * i11
    e0 = o[0] - px
    e1 = o[1] - pv
    new_mean[0] = px + k00 * e0 + k01 * e1
    new_mean[1] = pv + k10 * e0 + k11 * e1
    new_mean[2] = m + k20 * e0 + k21 * e1
    if new_mean[2] < lower[0]:
        new_mean[2] = lower[0]
    # (I - K H) P, symmetrized
    c00 = p00 - k00 * p00 - k01 * p01
    c11 = p11 - k10 * p01 - k11 * p11
    c22 = p22 - k20 * p02 - k21 * p12
    c01 = 0.5 * ((p01 - k00 * p01 - k01 * p11) + (p01 - k10 * p00 - k11 * p01))
    c02 = 0.5 * ((p02 - k00 * p02 - k01 * p12) + (p02 - k20 * p00 - k21 * p01))
    c12 = 0.5 * ((p12 - k10 * p02 - k11 * p12) + (p12 - k20 * p01 - k21 * p11))
    new_cov[0, 0] = c00
    new_cov[1, 1] = c11
    new_cov[2, 2] = c22
    new_cov[0, 1] = new_cov[1, 0] = c01
    new_cov[0, 2] = new_cov[2, 0] = c02
    new_cov[1, 2] = new_cov[2, 1] = c12
    if not _psd3(c00, c01, c02, c11, c12, c22):
        new_cov = symmetrize_psd(new_cov)
    status = OK if (all_finite(new_mean) and all_finite(new_cov)) else DIVERGED
    return new_mean, new_cov, o, status


@njit(cache=True)
def generate(kind, c, mean, cov, u, noise_cov, noise_sqrt, R, R_sqrt, lower, z_proc, z_obs):
    """One belief-MDP transition driven by pre-drawn standard normals."""
    if kind == DOUBLE_INTEGRATOR and c[C_FD] < 0.5:
        return generate_1d(c, mean, cov, u, noise_cov, noise_sqrt, R, R_sqrt, lower, z_proc, z_obs)
    nx = state_dim(kind)
    s_next = dynamics(kind, c, mean, u) + mv(noise_sqrt, z_proc)
    clamp_params(s_next, lower, nx)
    o = measure(kind, c, s_next, u) + mv(R_sqrt, z_obs)
    pm, pc, status = ekf_predict(kind, c, mean, cov, u, noise_cov)
    if status != OK:
        return mean, cov, o, status
    new_mean, new_cov, status = ekf_correct(kind, c, pm, pc, u, o, R, lower)
    return new_mean, new_cov, o, status


@njit(cache=True)
def rollout_action(kind, c, mean, gain):
    nu = control_dim(kind)
    umax = c[C_UMAX]
    u = np.empty(nu)
    for i in range(nu):
        e = mean[i]
        if kind == PLANAR and i == 2:
            e = wrap_angle(e)
        u[i] = min(umax, max(-umax, -gain * e))
    return u


@njit(cache=True)
def seed_rng(seed):
    np.random.seed(seed)


@njit(cache=True)
def rollout(kind, c, mean, cov, noise_cov, noise_sqrt, R, R_sqrt, lower,
            reward_kind, weights, gain, gamma, steps):
    """Proportional-controller rollout; returns (discounted return, status)."""
    nx = state_dim(kind)
    n = mean.shape[0]
    no = obs_dim(kind)
    total = 0.0
    disc = 1.0
    for _ in range(steps):
        u = rollout_action(kind, c, mean, gain)
        z_proc = np.random.standard_normal(n)
        z_obs = np.random.standard_normal(no)
        mean, cov, _, status = generate(kind, c, mean, cov, u, noise_cov, noise_sqrt,
                                        R, R_sqrt, lower, z_proc, z_obs)
        if status != OK:
            return total, status
        r = reward(kind, reward_kind, weights, mean[:nx], u)
        if not math.isfinite(r):
            return total, DIVERGED
        total += disc * r
        disc *= gamma
    return total, OK


@njit(cache=True)
def width_limit(k, n, alpha):
    return math.ceil(k * n ** alpha)


@njit(cache=True)
def mcts_search(kind, c, noise_cov, noise_sqrt, R, R_sqrt, lower,
                reward_kind, weights, root_mean, root_cov,
                n_iter, depth, explore, k_dpw, alpha_dpw, gain, gamma,
                seed, max_retries):
    """UCT with double progressive widening over EKF beliefs.

    The tree lives in flat arrays.  State nodes carry a belief, the reward of
    the transition that produced them and a transition count used for
    visit-proportional child sampling.  Action nodes hang off state nodes via
    singly linked sibling lists; ids grow with creation order.
    """
    np.random.seed(seed)
    n = root_mean.shape[0]
    nx = state_dim(kind)
    nu = control_dim(kind)
    no = obs_dim(kind)
    umax = c[C_UMAX]

    cap_s = n_iter + 1
    cap_a = n_iter * depth + 1
    s_mean = np.empty((cap_s, n))
    s_cov = np.empty((cap_s, n, n))
    s_N = np.zeros(cap_s, np.int64)
    s_nact = np.zeros(cap_s, np.int64)
    s_head = np.full(cap_s, -1, np.int64)
    s_next = np.full(cap_s, -1, np.int64)
    s_parent = np.full(cap_s, -1, np.int64)
    s_trans = np.zeros(cap_s, np.int64)
    s_reward = np.zeros(cap_s)
    a_N = np.zeros(cap_a, np.int64)
    a_Q = np.zeros(cap_a)
    a_u = np.zeros((cap_a, nu))
    a_next = np.full(cap_a, -1, np.int64)
    a_owner = np.full(cap_a, -1, np.int64)
    a_nchild = np.zeros(cap_a, np.int64)
    a_head = np.full(cap_a, -1, np.int64)

    tr_action = np.full(n_iter, -1, np.int64)
    tr_return = np.zeros(n_iter)
    tr_depth = np.zeros(n_iter, np.int64)
    tr_retries = np.zeros(n_iter, np.int64)

    s_mean[0] = root_mean
    s_cov[0] = root_cov
    ns = 1
    na = 0

    path_s = np.empty(depth, np.int64)
    path_a = np.empty(depth, np.int64)
    path_r = np.empty(depth)
    path_child = np.empty(depth, np.int64)
    path_new = np.zeros(depth, np.bool_)
    made_a = np.empty(depth, np.int64)
    discarded = 0

    for it in range(n_iter):
        for attempt in range(max_retries + 1):
            node = 0
            d = 0
            plen = 0
            n_made = 0
            new_state = -1
            leaf = 0.0
            ok = True
            while d < depth:
                # action widening
                if s_nact[node] < width_limit(k_dpw, s_N[node] + 1, alpha_dpw):
                    a = na
                    na += 1
                    if s_nact[node] == 0:
                        a_u[a] = rollout_action(kind, c, s_mean[node], gain)
                    else:
                        for i in range(nu):
                            a_u[a, i] = np.random.uniform(-umax, umax)
                    a_N[a] = 0
                    a_Q[a] = 0.0
                    a_nchild[a] = 0
                    a_head[a] = -1
                    a_owner[a] = node
                    a_next[a] = s_head[node]
                    s_head[node] = a
                    s_nact[node] += 1
                    made_a[n_made] = a
                    n_made += 1
                # UCB selection; unvisited first, ties to the earliest action
                best = -1
                best_val = -np.inf
                logn = math.log(s_N[node]) if s_N[node] > 0 else 0.0
                a = s_head[node]
                while a != -1:
                    if a_N[a] == 0:
                        val = np.inf
                    else:
                        val = a_Q[a] + explore * math.sqrt(logn / a_N[a])
                    if val > best_val or (val == best_val and a < best):
                        best_val = val
                        best = a
                    a = a_next[a]
                a = best
                path_s[plen] = node
                path_a[plen] = a
                # state widening
                if a_nchild[a] < width_limit(k_dpw, a_N[a] + 1, alpha_dpw):
                    z_proc = np.random.standard_normal(n)
                    z_obs = np.random.standard_normal(no)
                    m2, c2, _, status = generate(kind, c, s_mean[node], s_cov[node], a_u[a],
                                                 noise_cov, noise_sqrt, R, R_sqrt, lower,
                                                 z_proc, z_obs)
                    r = reward(kind, reward_kind, weights, m2[:nx], a_u[a])
                    if status != OK or not math.isfinite(r):
                        ok = False
                        break
                    sp = ns
                    ns += 1
                    s_mean[sp] = m2
                    s_cov[sp] = c2
                    s_N[sp] = 0
                    s_nact[sp] = 0
                    s_head[sp] = -1
                    s_reward[sp] = r
                    s_trans[sp] = 0
                    s_parent[sp] = a
                    s_next[sp] = a_head[a]
                    a_head[a] = sp
                    a_nchild[a] += 1
                    new_state = sp
                    path_r[plen] = r
                    path_child[plen] = sp
                    path_new[plen] = True
                    plen += 1
                    d += 1
                    leaf, status = rollout(kind, c, m2, c2, noise_cov, noise_sqrt, R, R_sqrt,
                                           lower, reward_kind, weights, gain, gamma, depth - d)
                    if status != OK:
                        ok = False
                    break
                else:
                    total = 0
                    ch = a_head[a]
                    while ch != -1:
                        total += s_trans[ch]
                        ch = s_next[ch]
                    pick = np.random.uniform(0.0, total)
                    ch = a_head[a]
                    acc = 0.0
                    chosen = ch
                    while ch != -1:
                        acc += s_trans[ch]
                        chosen = ch
                        if pick < acc:
                            break
                        ch = s_next[ch]
                    path_r[plen] = s_reward[chosen]
                    path_child[plen] = chosen
                    path_new[plen] = False
                    plen += 1
                    d += 1
                    node = chosen
            if ok:
                q = leaf
                for i in range(plen - 1, -1, -1):
                    q = path_r[i] + gamma * q
                    s_N[path_s[i]] += 1
                    a = path_a[i]
                    a_N[a] += 1
                    a_Q[a] += (q - a_Q[a]) / a_N[a]
                    s_trans[path_child[i]] += 1
                tr_action[it] = path_a[0]
                tr_return[it] = q
                tr_depth[it] = plen
                tr_retries[it] = attempt
                break
            # roll back whatever this attempt created
            if new_state != -1:
                a = s_parent[new_state]
                a_head[a] = s_next[new_state]
                a_nchild[a] -= 1
                ns -= 1
            for j in range(n_made - 1, -1, -1):
                a = made_a[j]
                owner = a_owner[a]
                s_head[owner] = a_next[a]
                s_nact[owner] -= 1
                na -= 1
            discarded += 1

    # root decision: max Q, then max N, then earliest
    choice = -1
    a = s_head[0]
    while a != -1:
        if a_N[a] > 0:
            if choice == -1:
                choice = a
            elif a_Q[a] > a_Q[choice]:
                choice = a
            elif a_Q[a] == a_Q[choice]:
                if a_N[a] > a_N[choice] or (a_N[a] == a_N[choice] and a < choice):
                    choice = a
        a = a_next[a]

    return (choice, ns, na, s_N[:ns], s_nact[:ns], s_parent[:ns], s_trans[:ns],
            s_reward[:ns], a_N[:na], a_Q[:na], a_u[:na], a_owner[:na], a_nchild[:na],
            tr_action, tr_return, tr_depth, tr_retries, discarded)
