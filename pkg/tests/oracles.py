"""Dense reference solvers and random instance generators for QP testing.

The dense oracle flattens the whole problem and iterates a textbook
primal-dual path-following method, factorizing the full unreduced Newton
KKT matrix with a dense solve at every step. No stage structure, no slack
elimination, no Riccati: an independent route to the same optimum.
"""

import numpy as np

from fwguidance.qp import QpProblem


def flatten_qp(qp: QpProblem):
    """Dense (H, g, Aeq, beq, C, d) for the stacked variable [X, U, S]."""
    N, nx, nu, ns, m = qp.N, qp.nx, qp.nu, qp.ns, qp.m
    n = (N + 1) * nx + N * nu + N * ns
    ix = lambda k: slice(k * nx, (k + 1) * nx)
    iu = lambda k: slice((N + 1) * nx + k * nu, (N + 1) * nx + (k + 1) * nu)
    isl = lambda k: slice((N + 1) * nx + N * nu + (k - 1) * ns,
                          (N + 1) * nx + N * nu + k * ns)

    H = np.zeros((n, n))
    g = np.zeros(n)
    for k in range(N + 1):
        H[ix(k), ix(k)] = qp.Qxx[k]
        g[ix(k)] = qp.qx[k]
    for k in range(N):
        H[iu(k), iu(k)] = qp.Ruu[k]
        H[ix(k), iu(k)] = qp.Mxu[k]
        H[iu(k), ix(k)] = qp.Mxu[k].T
        g[iu(k)] = qp.ru[k]
    for k in range(1, N + 1):
        H[isl(k), isl(k)] = qp.Hss[k - 1]
        g[isl(k)] = qp.gs[k - 1]

    Aeq = np.zeros((nx + N * nx, n))
    beq = np.zeros(nx + N * nx)
    Aeq[:nx, ix(0)] = np.eye(nx)
    beq[:nx] = qp.x0
    for k in range(N):
        r = slice((k + 1) * nx, (k + 2) * nx)
        Aeq[r, ix(k)] = qp.A[k]
        Aeq[r, iu(k)] = qp.B[k]
        Aeq[r, ix(k + 1)] = -np.eye(nx)
        beq[r] = -qp.c[k]

    rows, ds = [], []
    for k in range(N):
        for j in range(nu):
            if np.isfinite(qp.ubu[k, j]):
                row = np.zeros(n)
                row[iu(k)][j] = 1.0
                rows.append(row)
                ds.append(qp.ubu[k, j])
            if np.isfinite(qp.lbu[k, j]):
                row = np.zeros(n)
                row[iu(k)][j] = -1.0
                rows.append(row)
                ds.append(-qp.lbu[k, j])
    for k in range(1, N + 1):
        for i in range(m):
            row = np.zeros(n)
            row[ix(k)] = qp.Cx[k - 1, i]
            row[isl(k)] = qp.Cs[k - 1, i]
            rows.append(row)
            ds.append(qp.cub[k - 1, i])
        for j in range(ns):
            row = np.zeros(n)
            row[isl(k)][j] = -1.0
            rows.append(row)
            ds.append(-qp.slb[k - 1, j])
    C = np.array(rows) if rows else np.zeros((0, n))
    d = np.array(ds)
    return H, g, Aeq, beq, C, d


def dense_qp_oracle(qp: QpProblem, tol: float = 1e-12, max_iter: int = 200):
    """Solve via dense factorization of the full primal-dual Newton system."""
    H, g, Aeq, beq, C, d = flatten_qp(qp)
    n = H.shape[0]
    me, mi = Aeq.shape[0], C.shape[0]
    z = np.zeros(n)
    nu_eq = np.zeros(me)
    if mi == 0:
        M = np.block([[H, Aeq.T], [Aeq, np.zeros((me, me))]])
        sol = np.linalg.solve(M, np.concatenate([-g, beq]))
        return sol[:n]
    t = np.maximum(1.0, d - C @ z)
    lam = np.ones(mi)
    for _ in range(max_iter):
        mu = lam @ t / mi
        r_d = H @ z + g + Aeq.T @ nu_eq + C.T @ lam
        r_eq = Aeq @ z - beq
        r_p = C @ z + t - d
        if (mu < tol and np.abs(r_d).max() < 1e-10
                and np.abs(r_eq).max() < 1e-10 and np.abs(r_p).max() < 1e-10):
            break
        sigma = 0.1
        r_c = lam * t - sigma * mu
        M = np.block([
            [H, Aeq.T, C.T],
            [Aeq, np.zeros((me, me)), np.zeros((me, mi))],
            [-lam[:, None] * C, np.zeros((mi, me)), np.diag(t)],
        ])
        rhs = np.concatenate([-r_d, -r_eq, -r_c + lam * r_p])
        step = np.linalg.solve(M, rhs)
        dz, dnu, dlam = step[:n], step[n:n + me], step[n + me:]
        dt = -r_p - C @ dz
        a = 1.0
        neg = dt < 0
        if neg.any():
            a = min(a, float((0.99 * t[neg] / -dt[neg]).min()))
        neg = dlam < 0
        if neg.any():
            a = min(a, float((0.99 * lam[neg] / -dlam[neg]).min()))
        z += a * dz
        nu_eq += a * dnu
        lam += a * dlam
        t += a * dt
    return z


def unflatten(qp: QpProblem, z: np.ndarray):
    N, nx, nu, ns = qp.N, qp.nx, qp.nu, qp.ns
    X = z[:(N + 1) * nx].reshape(N + 1, nx)
    U = z[(N + 1) * nx:(N + 1) * nx + N * nu].reshape(N, nu)
    S = z[(N + 1) * nx + N * nu:].reshape(N, ns) if ns else np.zeros((N, 0))
    return X, U, S


def random_qp(rng: np.random.Generator, N=None, nx=None, nu=None,
              with_slacks=True) -> QpProblem:
    """Random bounded strictly-convex instance with a strictly feasible point."""
    N = int(rng.integers(1, 6)) if N is None else N
    nx = int(rng.integers(2, 6)) if nx is None else nx
    nu = int(rng.integers(1, 4)) if nu is None else nu
    ns = int(rng.integers(1, 4)) if with_slacks else 0
    m = int(rng.integers(1, 4)) if with_slacks else 0
    qp = QpProblem.empty(N, nx, nu, ns, m)

    for k in range(N):
        A = rng.normal(0, 0.5, (nx, nx))
        qp.A[k] = A / max(1.0, 0.9 * np.abs(np.linalg.eigvals(A)).max())
        qp.B[k] = rng.normal(0, 0.7, (nx, nu))
        qp.c[k] = rng.normal(0, 0.3, nx)
    qp.x0 = rng.normal(0, 0.5, nx)
    for k in range(N + 1):
        G = rng.normal(0, 1.0, (nx + nu, nx + nu))
        W = G @ G.T / (nx + nu) + 1e-3 * np.eye(nx + nu)
        qp.Qxx[k] = W[:nx, :nx]
        qp.qx[k] = rng.normal(0, 1.0, nx)
        if k < N:
            qp.Mxu[k] = W[:nx, nx:]
            qp.Ruu[k] = W[nx:, nx:] + 0.1 * np.eye(nu)
            qp.ru[k] = rng.normal(0, 1.0, nu)
    qp.lbu = -rng.uniform(0.05, 1.5, (N, nu))
    qp.ubu = rng.uniform(0.05, 1.5, (N, nu))
    drop = rng.random((N, nu)) < 0.15
    qp.ubu[drop] = np.inf
    drop = rng.random((N, nu)) < 0.15
    qp.lbu[drop] = -np.inf

    if with_slacks:
        for k in range(N):
            qp.Hss[k] = np.diag(rng.uniform(0.5, 5.0, ns))
            qp.gs[k] = rng.normal(0, 0.3, ns)
            qp.Cx[k] = rng.normal(0, 1.0, (m, nx))
            qp.Cs[k] = rng.normal(0, 1.0, (m, ns))
        qp.slb = np.zeros((N, ns))
        # strictly feasible reference: x from zero-control rollout, s = 1
        x = qp.x0.copy()
        xs = [x]
        for k in range(N):
            x = qp.A[k] @ x + qp.c[k]
            xs.append(x)
        s_ref = np.ones(ns)
        for k in range(1, N + 1):
            val = qp.Cx[k - 1] @ xs[k] + qp.Cs[k - 1] @ s_ref
            qp.cub[k - 1] = val + rng.uniform(0.1, 1.5, m)
    return qp
