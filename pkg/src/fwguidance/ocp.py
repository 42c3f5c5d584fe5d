"""Nonlinear least-squares OCP assembly for path-following guidance.

Builds the direct multiple-shooting problem for either controller mode:
constant-rate tracking (the reference path parameter advances at a fixed
speed over the horizon) and contouring (the path-parameter rate is a
decision variable appended to the control vector, with the path parameter
appended to the state).

Stage residuals: path position errors, wrapped course-angle error, flight
path angle error (plus the airspeed incentive in contouring mode), the
attitude/throttle rate vector, control slew against the previous solution,
and quadratically priced slacks on the airspeed/alpha soft constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace

import numpy as np

from fwguidance import vehicle
from fwguidance.paths import ArcLengthPath
from fwguidance.vehicle import (
    CMD_DIM,
    ICHI,
    IDELTA,
    IGAMMA,
    IPHI,
    ITHETA,
    IVA,
    STATE_DIM,
    AircraftState,
    ModelParameters,
    validate_state_array,
)

CR_MPC = "cr-mpc"
MPCC = "mpcc"
SLACK_DIM = 4  # upper V_a, upper alpha, lower V_a, lower alpha


@dataclass(frozen=True)
class StageWeights:
    """Diagonal cost weights; defaults are the flight-tuned values."""

    q_n: float = 1.0
    q_e: float = 1.0
    q_d: float = 1.0
    q_chi: float = 1.0
    q_gamma: float = 1.0
    b_phidot: float = 1.0
    b_thetadot: float = 20.0
    b_deltaTdot: float = 10.0
    s_alpha: float = 1e4
    s_Va: float = 1e4
    r_phi: float = 400.0
    r_theta: float = 400.0
    r_deltaT: float = 400.0
    r_psidot: float = 0.1
    lam: float = 0.99    # slew discount along the horizon, config key "lambda"
    mu: float = 0.001    # airspeed incentive weight, contouring mode only

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if value < 0.0:
                raise ValueError(f"StageWeights.{name} must be >= 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("StageWeights.lam must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StageWeights":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        w = cls(**d)
        w.validate()
        return w

    def error_diag(self, mode: str) -> np.ndarray:
        q = [self.q_n, self.q_e, self.q_d, self.q_chi, self.q_gamma]
        if mode == MPCC:
            q.append(self.mu)
        return np.array(q)

    def rate_diag(self) -> np.ndarray:
        return np.array([self.b_phidot, self.b_thetadot, self.b_deltaTdot])

    def slew_diag(self, mode: str) -> np.ndarray:
        r = [self.r_phi, self.r_theta, self.r_deltaT]
        if mode == MPCC:
            r.append(self.r_psidot)
        return np.array(r)

    def slack_diag(self) -> np.ndarray:
        return np.array([self.s_Va, self.s_alpha, self.s_Va, self.s_alpha])


@dataclass(frozen=True)
class FlightEnvelope:
    """Soft state bounds and hard command boxes."""

    ubar_Va: float = 20.0
    bar_Va: float = 40.0
    ubar_alpha: float = float(np.deg2rad(-6.0))
    bar_alpha: float = float(np.deg2rad(12.0))
    ubar_phi_c: float = float(np.deg2rad(-45.0))
    bar_phi_c: float = float(np.deg2rad(45.0))
    ubar_theta_c: float = float(np.deg2rad(-10.0))
    bar_theta_c: float = float(np.deg2rad(10.0))
    ubar_deltaT_c: float = 0.0
    bar_deltaT_c: float = 1.0
    ubar_psidot_c: float = 15.0
    bar_psidot_c: float = 45.0

    def validate(self) -> None:
        pairs = [
            ("ubar_Va", "bar_Va"), ("ubar_alpha", "bar_alpha"),
            ("ubar_phi_c", "bar_phi_c"), ("ubar_theta_c", "bar_theta_c"),
            ("ubar_deltaT_c", "bar_deltaT_c"), ("ubar_psidot_c", "bar_psidot_c"),
        ]
        for lo, hi in pairs:
            if not getattr(self, lo) < getattr(self, hi):
                raise ValueError(f"FlightEnvelope requires {lo} < {hi}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FlightEnvelope":
        env = cls(**d)
        env.validate()
        return env

    def command_bounds(self, mode: str) -> tuple[np.ndarray, np.ndarray]:
        lb = [self.ubar_phi_c, self.ubar_theta_c, self.ubar_deltaT_c]
        ub = [self.bar_phi_c, self.bar_theta_c, self.bar_deltaT_c]
        if mode == MPCC:
            lb.append(self.ubar_psidot_c)
            ub.append(self.bar_psidot_c)
        return np.array(lb), np.array(ub)


def control_dim(mode: str) -> int:
    return CMD_DIM + 1 if mode == MPCC else CMD_DIM


def state_dim(mode: str) -> int:
    return STATE_DIM + 1 if mode == MPCC else STATE_DIM


def reference_schedule(psi_star: float, psi_dot_ref: float, dt: float, N: int,
                       path: ArcLengthPath | None = None) -> np.ndarray:
    """Reference path parameters over the horizon, wrapped on closed paths."""
    if psi_dot_ref < 0.0:
        raise ValueError("psi_dot_ref must be >= 0")
    psis = psi_star + psi_dot_ref * dt * np.arange(N + 1)
    if path is not None and path.closed:
        psis = np.mod(psis, path.total_length)
    return psis


def wrap_angle(a):
    """Wrap into (-pi, pi] via the two-argument arctangent."""
    return np.arctan2(np.sin(a), np.cos(a))


def stage_errors_array(x: np.ndarray, psi: np.ndarray, path: ArcLengthPath,
                       wind: np.ndarray, mode: str, envelope: FlightEnvelope,
                       jacobian: bool = False):
    """Stage error vectors y (K, ny) for batched states; optionally also the
    Jacobian (K, ny, nxs) with the path-parameter column in contouring mode."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    K = x.shape[0]
    ny = 6 if mode == MPCC else 5
    nxs = state_dim(mode)

    r_p = path.eval_extended(psi, 0)
    tang = path.eval_extended(psi, 1)

    chi, V, gam = x[:, ICHI], x[:, IVA], x[:, IGAMMA]
    cg = np.cos(gam)
    vg_n = V * cg * np.cos(chi) + wind[0]
    vg_e = V * cg * np.sin(chi) + wind[1]

    y = np.empty((K, ny))
    y[:, 0:3] = x[:, 0:3] - r_p
    eps_c = np.arctan2(vg_e, vg_n) - np.arctan2(tang[:, 1], tang[:, 0])
    y[:, 3] = wrap_angle(eps_c)
    t_norm = np.linalg.norm(tang, axis=1)
    sin_gpath = -tang[:, 2] / t_norm
    y[:, 4] = gam - np.arcsin(sin_gpath)
    if mode == MPCC:
        y[:, 5] = envelope.bar_Va - V

    if not jacobian:
        return y

    J = np.zeros((K, ny, nxs))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    J[:, 2, 2] = 1.0
    # course error: derivatives of atan2(vg_e, vg_n)
    den = vg_n**2 + vg_e**2
    dvgn = {"V": cg * np.cos(chi), "gam": -V * np.sin(gam) * np.cos(chi),
            "chi": -(vg_e - wind[1])}
    dvge = {"V": cg * np.sin(chi), "gam": -V * np.sin(gam) * np.sin(chi),
            "chi": vg_n - wind[0]}
    for name, idx in (("chi", ICHI), ("V", IVA), ("gam", IGAMMA)):
        J[:, 3, idx] = (vg_n * dvge[name] - vg_e * dvgn[name]) / den
    J[:, 4, IGAMMA] = 1.0
    if mode == MPCC:
        J[:, 5, IVA] = -1.0
        d2 = path.eval_extended(psi, 2)
        # position errors
        J[:, 0:3, STATE_DIM] = -tang
        # course error through the path tangent heading
        hden = tang[:, 0]**2 + tang[:, 1]**2
        J[:, 3, STATE_DIM] = -(tang[:, 0] * d2[:, 1] - tang[:, 1] * d2[:, 0]) / hden
        # flight-path-angle error through the tangent slope
        dsin = (-d2[:, 2] / t_norm
                + tang[:, 2] * np.sum(tang * d2, axis=1) / t_norm**3)
        J[:, 4, STATE_DIM] = -dsin / np.sqrt(np.maximum(1.0 - sin_gpath**2, 1e-12))
    return y, J


def stage_error(state: AircraftState, psi_hat: float, path: ArcLengthPath,
                mode: str, envelope: FlightEnvelope,
                wind: np.ndarray | None = None) -> np.ndarray:
    """Single-state convenience wrapper over stage_errors_array."""
    validate_state_array(state.as_array())
    w = np.zeros(3) if wind is None else np.asarray(wind, dtype=float)
    return stage_errors_array(state.as_array()[None, :], np.array([psi_hat]),
                              path, w, mode, envelope)[0]


@dataclass(frozen=True)
class SoftConstraintRows:
    """Airspeed/alpha soft constraints in the form g - s <= bound, s >= 0."""

    values: np.ndarray   # g = [V_a, alpha, -V_a, -alpha]
    bounds: np.ndarray   # [bar_Va, bar_alpha, -ubar_Va, -ubar_alpha]

    @property
    def min_slack(self) -> np.ndarray:
        return np.maximum(0.0, self.values - self.bounds)


def soft_row_matrix(mode: str) -> np.ndarray:
    """Constant Jacobian of the soft-constraint values wrt the state."""
    G = np.zeros((SLACK_DIM, state_dim(mode)))
    G[0, IVA] = 1.0
    G[1, ITHETA], G[1, IGAMMA] = 1.0, -1.0
    G[2, IVA] = -1.0
    G[3, ITHETA], G[3, IGAMMA] = -1.0, 1.0
    return G


def soft_bounds(envelope: FlightEnvelope) -> np.ndarray:
    return np.array([envelope.bar_Va, envelope.bar_alpha,
                     -envelope.ubar_Va, -envelope.ubar_alpha])


def soft_constraint_rows(state: AircraftState, envelope: FlightEnvelope) -> SoftConstraintRows:
    alpha = state.theta - state.gamma_a
    values = np.array([state.V_a, alpha, -state.V_a, -alpha])
    return SoftConstraintRows(values=values, bounds=soft_bounds(envelope))


def rate_vector(state: AircraftState, cmd, params: ModelParameters) -> np.ndarray:
    """First-order attitude/throttle rates at (state, command)."""
    u = cmd.as_array() if hasattr(cmd, "as_array") else np.asarray(cmd)
    return rate_vectors_array(state.as_array()[None, :], u[None, :], params)[0]


def rate_vectors_array(x: np.ndarray, u: np.ndarray, p: ModelParameters) -> np.ndarray:
    b = np.empty(x.shape[:-1] + (3,))
    b[..., 0] = p.K_phi * (u[..., 0] - x[..., IPHI])
    b[..., 1] = p.K_theta * (u[..., 1] - x[..., ITHETA])
    b[..., 2] = (u[..., 2] - x[..., IDELTA]) / p.tau_T
    return b


def rate_jacobians(mode: str, p: ModelParameters) -> tuple[np.ndarray, np.ndarray]:
    """Constant Jacobians of the rate vector wrt state and command."""
    Jx = np.zeros((3, state_dim(mode)))
    Ju = np.zeros((3, control_dim(mode)))
    Jx[0, IPHI] = -p.K_phi
    Jx[1, ITHETA] = -p.K_theta
    Jx[2, IDELTA] = -1.0 / p.tau_T
    Ju[0, 0] = p.K_phi
    Ju[1, 1] = p.K_theta
    Ju[2, 2] = 1.0 / p.tau_T
    return Jx, Ju


class StructuredNlp:
    """One multiple-shooting OCP instance: immutable data plus reentrant
    residual/linearization callbacks over full trajectory arrays."""

    def __init__(self, mode, x_init, wind, path, weights, envelope, params,
                 N, dt, psi_schedule=None, u_slew_ref=None, psi_star=None):
        self.mode = mode
        self.x_init = np.asarray(x_init, dtype=float)
        self.wind = np.asarray(wind, dtype=float)
        self.path = path
        self.weights = weights
        self.envelope = envelope
        self.params = params
        self.N = int(N)
        self.dt = float(dt)
        self.psi_schedule = psi_schedule
        self.psi_star = psi_star
        self.nx = state_dim(mode)
        self.nu = control_dim(mode)
        self.ns = SLACK_DIM
        self.ny = 6 if mode == MPCC else 5
        if u_slew_ref is None:
            u_slew_ref = np.zeros((self.N, self.nu))
        self.u_slew_ref = np.asarray(u_slew_ref, dtype=float)
        self.lb_u, self.ub_u = envelope.command_bounds(mode)

        # per-stage diagonal weights
        self.W_y = np.tile(weights.error_diag(mode), (self.N + 1, 1))
        self.W_y[0] = 0.0                     # initial stage carries no cost
        if mode == MPCC:
            self.W_y[self.N, 5] = 0.0         # terminal airspeed incentive off
        self.W_b = weights.rate_diag()
        self.W_du = weights.lam ** np.arange(self.N)[:, None] * weights.slew_diag(mode)
        self.W_s = weights.slack_diag()
        self.G_soft = soft_row_matrix(mode)
        self.h_soft = soft_bounds(envelope)

    # -- dynamics ------------------------------------------------------------

    def step(self, x, u, check: bool = True):
        """One RK4 step of the (possibly augmented) dynamics, batched."""
        if self.mode == MPCC:
            x9 = vehicle.rk4_step_array(x[..., :STATE_DIM], u[..., :CMD_DIM],
                                        self.wind, self.dt, self.params, check)
            psi = x[..., STATE_DIM] + self.dt * u[..., CMD_DIM]
            return np.concatenate([x9, psi[..., None]], axis=-1)
        return vehicle.rk4_step_array(x, u, self.wind, self.dt, self.params, check)

    def step_jacobians(self, x, u, check: bool = True):
        A9, B9 = vehicle.rk4_jacobians_array(x[..., :STATE_DIM], u[..., :CMD_DIM],
                                             self.wind, self.dt, self.params, check)
        if self.mode != MPCC:
            return A9, B9
        batch = x.shape[:-1]
        A = np.zeros(batch + (self.nx, self.nx))
        B = np.zeros(batch + (self.nx, self.nu))
        A[..., :STATE_DIM, :STATE_DIM] = A9
        A[..., STATE_DIM, STATE_DIM] = 1.0
        B[..., :STATE_DIM, :CMD_DIM] = B9
        B[..., STATE_DIM, CMD_DIM] = self.dt
        return A, B

    def rollout(self, U: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        x = self.x_init if x0 is None else np.asarray(x0, dtype=float)
        X = np.empty((self.N + 1, self.nx))
        X[0] = x
        for k in range(self.N):
            X[k + 1] = self.step(X[k], U[k])
        return X

    def defects(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return self.step(X[:-1], U) - X[1:]

    # -- residuals -----------------------------------------------------------

    def stage_psis(self, X: np.ndarray) -> np.ndarray:
        if self.mode == MPCC:
            return X[:, STATE_DIM]
        return self.psi_schedule

    def residuals(self, X: np.ndarray, U: np.ndarray, jacobian: bool = False):
        psis = self.stage_psis(X)
        err = stage_errors_array(X, psis, self.path, self.wind, self.mode,
                                 self.envelope, jacobian=jacobian)
        b = rate_vectors_array(X[:-1], U, self.params)
        du = U - self.u_slew_ref
        if not jacobian:
            return err, b, du
        y, Jy = err
        Jbx, Jbu = rate_jacobians(self.mode, self.params)
        return (y, Jy), (b, Jbx, Jbu), du

    def cost(self, X: np.ndarray, U: np.ndarray, S: np.ndarray) -> float:
        """Total OCP cost; S holds slack rows for stages 1..N ((N, 4) or the
        full (N+1, 4) with row 0 ignored)."""
        y, b, du = self.residuals(X, U)
        S = np.asarray(S)
        s = S[-self.N:, :]
        return 0.5 * float(
            np.sum(self.W_y * y * y)
            + np.sum(self.W_s * s * s)
            + np.sum(self.W_b * b * b)
            + np.sum(self.W_du * du * du)
        )

    def min_feasible_slack(self, X: np.ndarray) -> np.ndarray:
        """Smallest nonnegative slacks satisfying the soft rows at each node."""
        g = X @ self.G_soft.T
        return np.maximum(0.0, g - self.h_soft)


def assemble(mode: str, x_i: AircraftState, w_i, path: ArcLengthPath,
             weights: StageWeights, envelope: FlightEnvelope,
             params: ModelParameters, psi_dot_ref: float | None = None,
             prev_solution=None, N: int = 50, dt: float = 0.1,
             psi_star: float | None = None) -> StructuredNlp:
    """Build the multiple-shooting NLP for one controller query.

    The slew reference is the previous solution's control trajectory,
    stage-aligned; with no previous solution the slew residual measures the
    controls against zero (callers wanting a different cold-start reference
    pass a synthetic previous solution).
    """
    if mode not in (CR_MPC, MPCC):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == CR_MPC and psi_dot_ref is None:
        raise ValueError("constant-rate mode requires psi_dot_ref")
    weights.validate()
    envelope.validate()
    x9 = x_i.as_array()
    validate_state_array(x9)
    wind = w_i.as_array() if hasattr(w_i, "as_array") else np.asarray(w_i, dtype=float)

    if psi_star is None:
        psi_star = path.closest_param_global(x9[:3])

    psi_schedule = None
    if mode == CR_MPC:
        psi_schedule = psi_star + psi_dot_ref * dt * np.arange(N + 1)
        x_init = x9
    else:
        x_init = np.concatenate([x9, [psi_star]])

    u_slew_ref = None
    if prev_solution is not None:
        U_prev = np.asarray(prev_solution.U if hasattr(prev_solution, "U")
                            else prev_solution, dtype=float)
        if U_prev.shape != (N, control_dim(mode)):
            raise ValueError(f"previous solution controls have shape {U_prev.shape}, "
                             f"expected {(N, control_dim(mode))}")
        u_slew_ref = U_prev

    return StructuredNlp(mode=mode, x_init=x_init, wind=wind, path=path,
                         weights=weights, envelope=envelope, params=params,
                         N=N, dt=dt, psi_schedule=psi_schedule,
                         u_slew_ref=u_slew_ref, psi_star=psi_star)
