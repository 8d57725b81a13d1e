"""Compiled inner loops for the serial arm chain (trunk coordinates)."""
import numpy as np
from numba import njit


@njit(cache=True)
def cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def rodrigues(axis, angle):
    K = np.zeros((3, 3))
    K[0, 1] = -axis[2]
    K[0, 2] = axis[1]
    K[1, 0] = axis[2]
    K[1, 2] = -axis[0]
    K[2, 0] = -axis[1]
    K[2, 1] = axis[0]
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


@njit(cache=True)
def chain_kinematics(origin_R, origin_p, axis, q):
    n = q.shape[0]
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    z = np.empty((n, 3))
    Rp = np.eye(3)
    pp = np.zeros(3)
    for i in range(n):
        Ro = Rp @ origin_R[i]
        p[i] = pp + Rp @ origin_p[i]
        R[i] = Ro @ rodrigues(axis[i], q[i])
        z[i] = R[i] @ axis[i]
        Rp = R[i]
        pp = p[i]
    return R, p, z


@njit(cache=True)
def rnea(R, p, z, mass, com, inertia, armature, qd, qdd, gravity):
    n = qd.shape[0]
    w = np.zeros(3)
    wd = np.zeros(3)
    a = -gravity
    p_prev = np.zeros(3)
    f = np.empty((n, 3))
    nm = np.empty((n, 3))
    rc = np.empty((n, 3))
    for i in range(n):
        d = p[i] - p_prev
        a = a + cross(wd, d) + cross(w, cross(w, d))
        zi = z[i]
        wd = wd + zi * qdd[i] + cross(w, zi * qd[i])
        w = w + zi * qd[i]
        r = R[i] @ com[i]
        rc[i] = r
        ac = a + cross(wd, r) + cross(w, cross(w, r))
        I = R[i] @ inertia[i] @ R[i].T
        f[i] = mass[i] * ac
        nm[i] = I @ wd + cross(w, I @ w)
        p_prev = p[i]
    tau = np.empty(n)
    F = np.zeros(3)
    N = np.zeros(3)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            N = N + cross(p[i + 1] - p[i], F)
        F = F + f[i]
        N = N + nm[i] + cross(rc[i], f[i])
        tau[i] = np.dot(z[i], N) + armature[i] * qdd[i]
    return tau, F, N


@njit(cache=True)
def crba(R, p, z, mass, com, inertia, armature):
    n = mass.shape[0]
    M = np.zeros((n, n))
    m_c = 0.0
    h_c = np.zeros(3)
    I_o = np.zeros((3, 3))
    eye = np.eye(3)
    for i in range(n - 1, -1, -1):
        m = mass[i]
        c = p[i] + R[i] @ com[i]
        m_c += m
        h_c = h_c + m * c
        I_o = I_o + R[i] @ inertia[i] @ R[i].T + m * (np.dot(c, c) * eye - np.outer(c, c))
        if m_c <= 0.0:
            M[i, i] = armature[i]
            continue
        cc = h_c / m_c
        I_c = I_o - m_c * (np.dot(cc, cc) * eye - np.outer(cc, cc))
        zi = z[i]
        Fi = m_c * cross(zi, cc - p[i])
        ni = I_c @ zi
        for j in range(i + 1):
            M[j, i] = np.dot(z[j], ni + cross(cc - p[j], Fi))
            M[i, j] = M[j, i]
        M[i, i] += armature[i]
    return M


@njit(cache=True)
def point_jacobian(p, z, link, point):
    n = p.shape[0]
    J = np.zeros((6, n))
    for i in range(link + 1):
        c = cross(z[i], point - p[i])
        for k in range(3):
            J[k, i] = c[k]
            J[3 + k, i] = z[i, k]
    return J


@njit(cache=True)
def forward_dynamics(origin_R, origin_p, axis, mass, com, inertia, armature,
                     q, qd, tau, gravity, ext_links, ext_points, ext_forces):
    """M^-1 (tau + sum J_k^T f_k - h); external points given in link frames."""
    R, p, z = chain_kinematics(origin_R, origin_p, axis, q)
    M = crba(R, p, z, mass, com, inertia, armature)
    h, _, _ = rnea(R, p, z, mass, com, inertia, armature, qd, np.zeros(q.shape[0]), gravity)
    rhs = tau - h
    for k in range(ext_links.shape[0]):
        lk = ext_links[k]
        pt = p[lk] + R[lk] @ ext_points[k]
        J = point_jacobian(p, z, lk, pt)
        rhs = rhs + J[:3].T @ ext_forces[k]
    return np.linalg.solve(M, rhs), M, h
