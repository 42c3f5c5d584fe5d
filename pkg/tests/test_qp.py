import numpy as np
import pytest

from fwguidance.qp import QpInfeasibleError, QpProblem, kkt_residuals, qp_solve

from oracles import dense_qp_oracle, random_qp, unflatten


class TestHandCases:
    def test_unconstrained_single_stage_closed_form(self):
        # min 1/2*q*x1^2 + qx*x1 + 1/2*r*u^2  s.t.  x1 = a*x0 + b*u + c
        a, b, c, x0, q, r, qx = 0.5, 1.0, 0.2, 2.0, 2.0, 0.5, 0.3
        qp = QpProblem.empty(N=1, nx=1, nu=1)
        qp.A[0, 0, 0] = a
        qp.B[0, 0, 0] = b
        qp.c[0, 0] = c
        qp.x0[0] = x0
        qp.Qxx[1, 0, 0] = q
        qp.qx[1, 0] = qx
        qp.Ruu[0, 0, 0] = r
        sol = qp_solve(qp, tol=1e-12)
        u_star = -(q * b * (a * x0 + c) + qx * b) / (q * b * b + r)
        assert sol.converged
        assert sol.u[0, 0] == pytest.approx(u_star, abs=1e-10)
        assert sol.x[1, 0] == pytest.approx(a * x0 + b * u_star + c, abs=1e-10)

    def test_active_box_bound_with_multiplier(self):
        # min (u - 2)^2  s.t.  u <= 1  ->  u* = 1, multiplier 2
        qp = QpProblem.empty(N=1, nx=1, nu=1)
        qp.Ruu[0, 0, 0] = 2.0
        qp.ru[0, 0] = -4.0
        qp.ubu[0, 0] = 1.0
        sol = qp_solve(qp, tol=1e-10)
        assert sol.converged
        assert sol.u[0, 0] == pytest.approx(1.0, abs=1e-8)
        assert sol.lam_box_hi[0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_soft_constraint_slack_and_multiplier(self):
        # x1 driven to 2, row x1 - s <= 1 forces s >= 1; cost 1/2 s^2
        qp = QpProblem.empty(N=1, nx=1, nu=1, ns=1, m=1)
        qp.c[0, 0] = 2.0
        qp.Ruu[0, 0, 0] = 1.0
        qp.Hss[0, 0, 0] = 1.0
        qp.Cx[0, 0, 0] = 1.0
        qp.Cs[0, 0, 0] = -1.0
        qp.cub[0, 0] = 1.0
        sol = qp_solve(qp, tol=1e-10)
        assert sol.converged
        assert sol.s[0, 0] == pytest.approx(1.0, abs=1e-7)
        assert sol.lam_soft[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_infeasible_box_raises(self):
        qp = QpProblem.empty(N=1, nx=1, nu=1)
        qp.lbu[0, 0] = 1.0
        qp.ubu[0, 0] = -1.0
        with pytest.raises(QpInfeasibleError):
            qp_solve(qp)


class TestOracleAgreement:
    def test_matches_dense_kkt_oracle(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for i in range(200):
            qp = random_qp(rng)
            sol = qp_solve(qp, tol=1e-10, max_iter=200)
            assert sol.converged, f"instance {i} did not converge"
            z = dense_qp_oracle(qp)
            X, U, S = unflatten(qp, z)
            ref = max(1.0, np.abs(z).max())
            err = max(np.abs(sol.x - X).max(), np.abs(sol.u - U).max(),
                      np.abs(sol.s - S).max() if S.size else 0.0)
            worst = max(worst, err / ref)
            assert err / ref <= 1e-8, f"instance {i}: {err/ref:.2e}"

    def test_kkt_residuals_on_converged_returns(self):
        rng = np.random.default_rng(43)
        for i in range(200):
            qp = random_qp(rng)
            sol = qp_solve(qp, tol=1e-6)
            assert sol.converged, f"instance {i}"
            kkt = kkt_residuals(qp, sol)
            scale = 1.0 + max(np.abs(qp.qx).max(), np.abs(qp.ru).max(),
                              np.abs(qp.c).max())
            for name, val in kkt.items():
                assert val <= 1e-5 * scale, (i, name, val)

    def test_no_slack_instances(self):
        rng = np.random.default_rng(44)
        for i in range(50):
            qp = random_qp(rng, with_slacks=False)
            sol = qp_solve(qp, tol=1e-10, max_iter=200)
            assert sol.converged
            z = dense_qp_oracle(qp)
            X, U, _ = unflatten(qp, z)
            ref = max(1.0, np.abs(z).max())
            assert np.abs(sol.u - U).max() / ref <= 1e-8, i


class TestDeterminism:
    def test_bit_identical_repeat_solves(self):
        rng = np.random.default_rng(45)
        qp = random_qp(rng, N=5)
        s1 = qp_solve(qp, tol=1e-8)
        s2 = qp_solve(qp, tol=1e-8)
        assert s1.x.tobytes() == s2.x.tobytes()
        assert s1.u.tobytes() == s2.u.tobytes()
        assert s1.s.tobytes() == s2.s.tobytes()
        assert s1.nu_dyn.tobytes() == s2.nu_dyn.tobytes()
        assert s1.iterations == s2.iterations


class TestReporting:
    def test_nonconverged_flag_on_iteration_cap(self):
        rng = np.random.default_rng(46)
        qp = random_qp(rng, N=4)
        sol = qp_solve(qp, tol=1e-12, max_iter=2)
        assert not sol.converged
        assert sol.status == "max_iter"
        assert sol.iterations == 2

    def test_hessian_symmetry_validation(self):
        qp = QpProblem.empty(N=1, nx=2, nu=1)
        qp.Qxx[0] = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError):
            qp_solve(qp)
