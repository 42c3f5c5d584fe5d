"""Structured convex QP solver for multiple-shooting subproblems.

Problem form, over stages k = 0..N (states x_k), k = 0..N-1 (controls u_k),
and k = 1..N (slacks s_k):

    min  sum_k [ 1/2 x'Qxx x + qx'x ]  +  sum_k [ 1/2 u'Ruu u + ru'u + x'Mxu u ]
         + sum_k [ 1/2 s'Hss s + gs's ]
    s.t. x_0 = x0,   x_{k+1} = A_k x_k + B_k u_k + c_k
         lbu_k <= u_k <= ubu_k
         Cx_k x_k + Cs_k s_k <= cub_k,    s_k >= slb_k

Algorithm: Mehrotra-style primal-dual interior point in residual (delta)
form. Each iteration builds barrier-modified stage blocks, eliminates the
slack variables per stage by a small Schur complement, factorizes the
remaining equality-constrained LQR by a backward Riccati recursion, and
recovers the dual steps in closed form. The factorization is reused for the
corrector, so the per-iteration cost is linear in N. Fully deterministic:
identical inputs give identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_GROUPS = ("box_hi", "box_lo", "soft", "slb")


class QpInfeasibleError(ValueError):
    pass


@dataclass
class QpProblem:
    A: np.ndarray      # (N, nx, nx)
    B: np.ndarray      # (N, nx, nu)
    c: np.ndarray      # (N, nx)
    x0: np.ndarray     # (nx,) fixed initial state
    Qxx: np.ndarray    # (N+1, nx, nx)
    qx: np.ndarray     # (N+1, nx)
    Ruu: np.ndarray    # (N, nu, nu)
    ru: np.ndarray     # (N, nu)
    Mxu: np.ndarray    # (N, nx, nu) cross terms
    lbu: np.ndarray    # (N, nu), -inf allowed
    ubu: np.ndarray    # (N, nu), +inf allowed
    Hss: np.ndarray    # (N, ns, ns) slack cost blocks, stages 1..N
    gs: np.ndarray     # (N, ns)
    Cx: np.ndarray     # (N, m, nx) soft rows, stages 1..N
    Cs: np.ndarray     # (N, m, ns)
    cub: np.ndarray    # (N, m)
    slb: np.ndarray    # (N, ns) lower bounds on slacks

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def nx(self) -> int:
        return self.A.shape[1]

    @property
    def nu(self) -> int:
        return self.B.shape[2]

    @property
    def ns(self) -> int:
        return self.Hss.shape[1]

    @property
    def m(self) -> int:
        return self.Cx.shape[1]

    def validate(self) -> None:
        if np.any(self.lbu > self.ubu):
            raise QpInfeasibleError("box bounds with lbu > ubu")
        for name in ("Qxx", "Ruu", "Hss"):
            H = getattr(self, name)
            if H.shape[1] and np.abs(H - H.transpose(0, 2, 1)).max() > 1e-10:
                raise ValueError(f"{name} blocks are not symmetric")

    @classmethod
    def empty(cls, N: int, nx: int, nu: int, ns: int = 0, m: int = 0) -> "QpProblem":
        return cls(
            A=np.zeros((N, nx, nx)), B=np.zeros((N, nx, nu)), c=np.zeros((N, nx)),
            x0=np.zeros(nx),
            Qxx=np.zeros((N + 1, nx, nx)), qx=np.zeros((N + 1, nx)),
            Ruu=np.zeros((N, nu, nu)), ru=np.zeros((N, nu)),
            Mxu=np.zeros((N, nx, nu)),
            lbu=np.full((N, nu), -np.inf), ubu=np.full((N, nu), np.inf),
            Hss=np.zeros((N, ns, ns)), gs=np.zeros((N, ns)),
            Cx=np.zeros((N, m, nx)), Cs=np.zeros((N, m, ns)), cub=np.zeros((N, m)),
            slb=np.zeros((N, ns)),
        )


@dataclass
class QpSolution:
    x: np.ndarray            # (N+1, nx)
    u: np.ndarray            # (N, nu)
    s: np.ndarray            # (N, ns) slacks for stages 1..N
    nu_dyn: np.ndarray       # (N, nx) dynamics multipliers
    lam_box_lo: np.ndarray   # (N, nu)
    lam_box_hi: np.ndarray   # (N, nu)
    lam_soft: np.ndarray     # (N, m)
    lam_slb: np.ndarray      # (N, ns)
    status: str
    iterations: int
    kkt: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _stationarity(qp: QpProblem, x, u, s, lam, nu_dyn):
    """Stationarity residual blocks (rx (N+1,nx) with row 0 zeroed, ru, rs)."""
    N = qp.N
    rx = np.einsum("kij,kj->ki", qp.Qxx, x) + qp.qx
    rx[:-1] += np.einsum("kij,kj->ki", qp.Mxu, u)
    rx[:-1] += np.einsum("kji,kj->ki", qp.A, nu_dyn)
    rx[1:] -= nu_dyn
    if qp.m:
        rx[1:] += np.einsum("kmi,km->ki", qp.Cx, lam["soft"])
    rx[0] = 0.0  # x_0 is fixed; no stationarity row
    ru = (np.einsum("kij,kj->ki", qp.Ruu, u) + qp.ru
          + np.einsum("kij,ki->kj", qp.Mxu, x[:-1])
          + np.einsum("kij,ki->kj", qp.B, nu_dyn)
          + lam["box_hi"] - lam["box_lo"])
    if qp.ns:
        rs = (np.einsum("kij,kj->ki", qp.Hss, s) + qp.gs - lam["slb"])
        if qp.m:
            rs += np.einsum("kmi,km->ki", qp.Cs, lam["soft"])
    else:
        rs = np.zeros((N, 0))
    return rx, ru, rs


def _margins(qp: QpProblem, x, u, s) -> dict:
    out = {
        "box_hi": qp.ubu - u,
        "box_lo": u - qp.lbu,
        "slb": s - qp.slb,
    }
    if qp.m:
        out["soft"] = qp.cub - (np.einsum("kmi,ki->km", qp.Cx, x[1:])
                                + np.einsum("kmi,ki->km", qp.Cs, s))
    else:
        out["soft"] = np.zeros((qp.N, 0))
    # rows with infinite bounds are inert; park their margins at 1
    return {k: np.where(np.isfinite(v), v, 1.0) for k, v in out.items()}


def kkt_residuals(qp: QpProblem, sol: QpSolution) -> dict:
    """Inf-norm KKT residuals of a candidate primal-dual point."""
    lam = {"box_hi": sol.lam_box_hi, "box_lo": sol.lam_box_lo,
           "soft": sol.lam_soft, "slb": sol.lam_slb}
    rx, ru, rs = _stationarity(qp, sol.x, sol.u, sol.s, lam, sol.nu_dyn)
    stat = max(np.abs(rx).max(initial=0.0), np.abs(ru).max(initial=0.0),
               np.abs(rs).max(initial=0.0))
    eq = np.abs(np.einsum("kij,kj->ki", qp.A, sol.x[:-1])
                + np.einsum("kij,kj->ki", qp.B, sol.u) + qp.c - sol.x[1:]).max()
    eq = max(eq, np.abs(sol.x[0] - qp.x0).max())
    margins = _margins(qp, sol.x, sol.u, sol.s)
    masks = _masks(qp)
    ineq = 0.0
    comp = 0.0
    for name in _GROUPS:
        msk = masks[name]
        if msk.any():
            ineq = max(ineq, float(np.maximum(0.0, -margins[name][msk]).max()))
            comp = max(comp, float(np.abs(lam[name][msk] * margins[name][msk]).max()))
    return {"stationarity": float(stat), "eq": float(eq),
            "ineq": float(ineq), "comp": float(comp)}


def _masks(qp: QpProblem) -> dict:
    return {
        "box_hi": np.isfinite(qp.ubu),
        "box_lo": np.isfinite(qp.lbu),
        "soft": np.ones((qp.N, qp.m), dtype=bool),
        "slb": np.isfinite(qp.slb) if qp.ns else np.zeros((qp.N, 0), dtype=bool),
    }


def qp_solve(qp: QpProblem, tol: float = 1e-6, max_iter: int = 100) -> QpSolution:
    """Solve the structured QP to the requested scaled KKT tolerance.

    Returns the best iterate found, flagged "max_iter" when the tolerance was
    not reached within the iteration budget.
    """
    qp.validate()
    N, nx, nu, ns, m = qp.N, qp.nx, qp.nu, qp.ns, qp.m
    AT = qp.A.transpose(0, 2, 1)
    BT = qp.B.transpose(0, 2, 1)
    masks = _masks(qp)
    n_active = sum(int(msk.sum()) for msk in masks.values())
    scale = 1.0 + max(
        np.abs(qp.qx).max(initial=0.0), np.abs(qp.ru).max(initial=0.0),
        np.abs(qp.gs).max(initial=0.0), np.abs(qp.c).max(initial=0.0),
        np.abs(qp.x0).max(initial=0.0),
    )
    tau = 0.995

    # primal start: equality-feasible rollout; duals at unit scale
    x = np.zeros((N + 1, nx))
    x[0] = qp.x0
    u = np.zeros((N, nu))
    for k in range(N):
        x[k + 1] = qp.A[k] @ x[k] + qp.c[k]
    s = (np.maximum(qp.slb, 0.0) + 1.0) if ns else np.zeros((N, 0))
    margins = _margins(qp, x, u, s)
    t = {g: np.where(masks[g], np.maximum(1.0, margins[g]), 1.0) for g in _GROUPS}
    lam = {g: np.where(masks[g], 1.0, 0.0) for g in _GROUPS}
    nu_dyn = np.zeros((N, nx))

    def pack(status, it):
        return QpSolution(x=x.copy(), u=u.copy(), s=s.copy(), nu_dyn=nu_dyn.copy(),
                          lam_box_lo=lam["box_lo"].copy(), lam_box_hi=lam["box_hi"].copy(),
                          lam_soft=lam["soft"].copy(), lam_slb=lam["slb"].copy(),
                          status=status, iterations=it)

    status = "max_iter"
    it = 0
    best = pack(status, it)
    best_kkt = kkt_residuals(qp, best)
    best_metric = max(best_kkt.values())

    for it in range(1, max_iter + 1):
        D = {g: np.where(masks[g], lam[g] / t[g], 0.0) for g in _GROUPS}
        mu = (sum(float((lam[g] * t[g])[masks[g]].sum()) for g in _GROUPS) / n_active
              if n_active else 0.0)

        # barrier-modified matrix blocks
        Qxx_mod = qp.Qxx.copy()
        Ruu_mod = qp.Ruu.copy()
        idx = np.arange(nu)
        Ruu_mod[:, idx, idx] += D["box_hi"] + D["box_lo"]
        if m:
            Qxx_mod[1:] += np.einsum("kmi,km,kmj->kij", qp.Cx, D["soft"], qp.Cx)
            Hxs = np.einsum("kmi,km,kmj->kij", qp.Cx, D["soft"], qp.Cs)
        else:
            Hxs = np.zeros((N, nx, ns))
        if ns:
            Hss_mod = qp.Hss.copy()
            if m:
                Hss_mod += np.einsum("kmi,km,kmj->kij", qp.Cs, D["soft"], qp.Cs)
            sdx = np.arange(ns)
            Hss_mod[:, sdx, sdx] += D["slb"]
            Fs = np.linalg.solve(Hss_mod, Hxs.transpose(0, 2, 1))  # (N, ns, nx)
            Qxx_mod[1:] -= Hxs @ Fs
        else:
            Hss_mod = np.zeros((N, 0, 0))
            Fs = np.zeros((N, 0, nx))

        # Riccati matrix recursion (shared by predictor and corrector)
        P = np.empty((N + 1, nx, nx))
        K = np.empty((N, nu, nx))
        Sbar = np.empty((N, nu, nx))
        Rbar = np.empty((N, nu, nu))
        P[N] = Qxx_mod[N]
        for k in range(N - 1, -1, -1):
            PA = P[k + 1] @ qp.A[k]
            PB = P[k + 1] @ qp.B[k]
            Rb = Ruu_mod[k] + BT[k] @ PB
            Sb = qp.Mxu[k].T + BT[k] @ PA
            Kk = -np.linalg.solve(Rb, Sb)
            Pk = Qxx_mod[k] + AT[k] @ PA + Sb.T @ Kk
            P[k] = 0.5 * (Pk + Pk.T)
            K[k], Sbar[k], Rbar[k] = Kk, Sb, Rb

        # residuals at the current iterate
        rx, ru_r, rs = _stationarity(qp, x, u, s, lam, nu_dyn)
        r_eq = (np.einsum("kij,kj->ki", qp.A, x[:-1])
                + np.einsum("kij,kj->ki", qp.B, u) + qp.c - x[1:])
        r_eq0 = qp.x0 - x[0]
        margins = _margins(qp, x, u, s)
        r_p = {g: np.where(masks[g], t[g] - margins[g], 0.0) for g in _GROUPS}

        def solve_newton(e):
            """Newton step for centering terms e (per group): returns deltas."""
            qx_eff = rx.copy()
            ru_eff = ru_r.copy()
            gs_eff = rs.copy()

            def dual_rhs(g):
                return np.where(masks[g], D[g] * r_p[g] - lam[g] + e[g] / t[g], 0.0)

            hi, lo = dual_rhs("box_hi"), dual_rhs("box_lo")
            ru_eff += hi - lo
            if m:
                soft = dual_rhs("soft")
                qx_eff[1:] += np.einsum("kmi,km->ki", qp.Cx, soft)
                if ns:
                    gs_eff += np.einsum("kmi,km->ki", qp.Cs, soft)
            if ns:
                gs_eff -= dual_rhs("slb")
                Fg = np.linalg.solve(Hss_mod, gs_eff[:, :, None])[:, :, 0]
                qx_eff[1:] -= np.einsum("kij,kj->ki", Hxs, Fg)
            # vector backward pass
            p = np.empty((N + 1, nx))
            kff = np.empty((N, nu))
            p[N] = qx_eff[N]
            for k in range(N - 1, -1, -1):
                tmp = P[k + 1] @ r_eq[k] + p[k + 1]
                kff[k] = -np.linalg.solve(Rbar[k], ru_eff[k] + BT[k] @ tmp)
                p[k] = qx_eff[k] + AT[k] @ tmp + Sbar[k].T @ kff[k]
            # forward rollout of the deltas
            dx = np.empty_like(x)
            du = np.empty_like(u)
            dnu = np.empty_like(nu_dyn)
            dx[0] = r_eq0
            for k in range(N):
                du[k] = K[k] @ dx[k] + kff[k]
                dx[k + 1] = qp.A[k] @ dx[k] + qp.B[k] @ du[k] + r_eq[k]
                dnu[k] = P[k + 1] @ dx[k + 1] + p[k + 1]
            if ns:
                ds = -Fg - np.einsum("kij,kj->ki", Fs, dx[1:])
            else:
                ds = np.zeros((N, 0))
            # dual and slack-of-inequality deltas
            dval = {"box_hi": du, "box_lo": -du, "slb": -ds}
            if m:
                dval["soft"] = (np.einsum("kmi,ki->km", qp.Cx, dx[1:])
                                + np.einsum("kmi,ki->km", qp.Cs, ds))
            else:
                dval["soft"] = np.zeros((N, 0))
            dt = {g: np.where(masks[g], -r_p[g] - dval[g], 0.0) for g in _GROUPS}
            dlam = {g: np.where(masks[g],
                                D[g] * (dval[g] + r_p[g]) - lam[g] + e[g] / t[g], 0.0)
                    for g in _GROUPS}
            return dx, du, ds, dnu, dt, dlam

        def step_lengths(dt, dlam):
            a_p, a_d = 1.0, 1.0
            for g in _GROUPS:
                msk = masks[g]
                if not msk.any():
                    continue
                dtm, dlm = dt[g][msk], dlam[g][msk]
                tm, lm = t[g][msk], lam[g][msk]
                neg = dtm < 0
                if neg.any():
                    a_p = min(a_p, float((tau * tm[neg] / -dtm[neg]).min()))
                neg = dlm < 0
                if neg.any():
                    a_d = min(a_d, float((tau * lm[neg] / -dlm[neg]).min()))
            return a_p, a_d

        zero_e = {g: np.zeros_like(t[g]) for g in _GROUPS}
        dx, du, ds, dnu, dt_a, dl_a = solve_newton(zero_e)
        a_p, a_d = step_lengths(dt_a, dl_a)
        if n_active:
            mu_aff = sum(float(((lam[g] + a_d * dl_a[g]) * (t[g] + a_p * dt_a[g]))[masks[g]].sum())
                         for g in _GROUPS) / n_active
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            e = {g: np.where(masks[g], sigma * mu - dt_a[g] * dl_a[g], 0.0)
                 for g in _GROUPS}
            dx, du, ds, dnu, dt_c, dl_c = solve_newton(e)
            a_p, a_d = step_lengths(dt_c, dl_c)
        else:
            dt_c, dl_c = dt_a, dl_a

        x += a_p * dx
        u += a_p * du
        if ns:
            s += a_p * ds
        nu_dyn += a_d * dnu
        for g in _GROUPS:
            t[g] = t[g] + a_p * dt_c[g]
            lam[g] = lam[g] + a_d * dl_c[g]

        sol = pack("running", it)
        kkt = kkt_residuals(qp, sol)
        metric = max(kkt.values())
        if metric < best_metric:
            best_metric, best, best_kkt = metric, sol, kkt
        if metric <= tol * scale:
            status = "converged"
            break
        if metric > 1e8 * max(best_metric, 1e-14):
            break  # numerical floor reached; stop polishing

    best.status = status
    best.iterations = it
    best.kkt = best_kkt
    return best
