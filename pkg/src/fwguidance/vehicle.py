"""Control-augmented fixed-wing aircraft model.

Nine-state rigid kinematics with first-order closed-loop roll/pitch
responses and a first-order virtual throttle, lift/drag polynomials and a
propeller thrust curve, the body-frame IMU observation map, RK4
discretization, and analytic discrete Jacobians.

State layout (SI units, north-east-down frame):
    [n, e, d, phi, theta, chi_a, V_a, gamma_a, delta_T]
Command layout:
    [phi_c, theta_c, delta_Tc]
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy import optimize

# state / command vector indices
IN, IE, ID, IPHI, ITHETA, ICHI, IVA, IGAMMA, IDELTA = range(9)
STATE_DIM = 9
CMD_DIM = 3

# validity thresholds sit inside the true singular bounds (V_a = 0,
# |gamma_a| = pi/2) to catch numerical blow-up early
VA_MIN_VALID = 0.1
GAMMA_MAX_VALID = np.deg2rad(89.0)
DELTA_T_TOL = 1e-6


class InvalidStateError(ValueError):
    """Aircraft state outside the region where the dynamics are defined."""


@dataclass(frozen=True)
class ModelParameters:
    """Closed-loop, open-loop, and physical constants of the airframe.

    Defaults are the stock fitted values for the reference airframe; all
    fields can be overridden through configuration.
    """

    K_phi: float = 2.0316      # 1/s, closed-loop roll response
    K_theta: float = 2.1498    # 1/s, closed-loop pitch response
    tau_T: float = 0.1161      # s, throttle time constant
    C_L0: float = 0.0917
    C_L1: float = 2.7493
    C_D0: float = 0.0362
    C_D1: float = 0.0868
    C_D2: float = 0.4459
    C_T: float = 0.0233
    k_m: float = 143.3052      # m/s, motor constant
    m: float = 6.65            # kg
    g: float = 9.81            # m/s^2
    rho: float = 1.225         # kg/m^3 (sea-level standard; flights may override)
    S: float = 1.02            # m^2, wing area
    S_p: float = 0.0856        # m^2, propeller swept area

    def validate(self) -> None:
        for name in ("m", "g", "rho", "S", "S_p", "tau_T", "K_phi", "K_theta"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"ModelParameters.{name} must be > 0")
        if self.k_m <= 40.0:
            raise ValueError("ModelParameters.k_m must exceed the maximum free-stream speed")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParameters":
        p = cls(**d)
        p.validate()
        return p

    open_loop_names = ("tau_T", "C_L0", "C_L1", "C_D0", "C_D1", "C_D2", "C_T", "k_m")
    closed_loop_names = ("K_phi", "K_theta")


@dataclass(frozen=True)
class AircraftState:
    n: float
    e: float
    d: float
    phi: float
    theta: float
    chi_a: float
    V_a: float
    gamma_a: float
    delta_T: float

    def as_array(self) -> np.ndarray:
        return np.array([self.n, self.e, self.d, self.phi, self.theta,
                         self.chi_a, self.V_a, self.gamma_a, self.delta_T])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "AircraftState":
        return cls(*(float(v) for v in np.asarray(x)[:STATE_DIM]))

    def validate(self) -> None:
        validate_state_array(self.as_array())


@dataclass(frozen=True)
class ControlCommand:
    phi_c: float
    theta_c: float
    delta_Tc: float
    psi_dot_c: float | None = None  # path-rate command, contouring mode only

    def as_array(self) -> np.ndarray:
        return np.array([self.phi_c, self.theta_c, self.delta_Tc])

    @classmethod
    def from_array(cls, u: np.ndarray, psi_dot_c: float | None = None) -> "ControlCommand":
        u = np.asarray(u)
        return cls(float(u[0]), float(u[1]), float(u[2]), psi_dot_c)


@dataclass(frozen=True)
class WindVector:
    w_n: float = 0.0
    w_e: float = 0.0
    w_d: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.w_n, self.w_e, self.w_d])

    @classmethod
    def from_array(cls, w: np.ndarray) -> "WindVector":
        w = np.asarray(w)
        return cls(float(w[0]), float(w[1]), float(w[2]))


@dataclass(frozen=True)
class ForceSet:
    L: float
    D: float
    T: float
    alpha: float
    V_inf: float
    drag_negative: bool = False  # drag polynomial went negative (extreme alpha)


def validate_state_array(x: np.ndarray, context: str = "state") -> None:
    """Raise InvalidStateError if any state in the (batched) array is invalid."""
    x = np.asarray(x)
    ok = (
        np.isfinite(x).all(axis=-1)
        & (x[..., IVA] > VA_MIN_VALID)
        & (np.abs(x[..., IGAMMA]) < GAMMA_MAX_VALID)
        & (x[..., IDELTA] > -DELTA_T_TOL)
        & (x[..., IDELTA] < 1.0 + DELTA_T_TOL)
    )
    if not ok.all():
        bad = np.argwhere(~np.atleast_1d(ok))
        raise InvalidStateError(f"invalid {context} at index {bad[0].tolist()}")


def alpha_of(state: AircraftState) -> float:
    """Angle of attack under the zero-sideslip assumption."""
    return state.theta - state.gamma_a


def gamma_from_kinematics(d_dot: float, w_d: float, V_a: float) -> float:
    """Air-relative flight path angle from the vertical kinematic row."""
    if V_a <= 0.0:
        raise ValueError("V_a must be positive")
    arg = -(d_dot - w_d) / V_a
    if abs(arg) > 1.0:
        raise ValueError(f"inconsistent inputs: |(d_dot - w_d)/V_a| = {abs(arg):.4f} > 1")
    return float(np.arcsin(arg))


def _forces_core(V_a, alpha, delta_T, p: ModelParameters):
    """Lift, drag, thrust for (broadcastable) arrays of V_a, alpha, delta_T."""
    q_bar_S = 0.5 * p.rho * V_a**2 * p.S
    L = q_bar_S * (p.C_L0 + p.C_L1 * alpha)
    D = q_bar_S * (p.C_D0 + p.C_D1 * alpha + p.C_D2 * alpha**2)
    V_inf = V_a * np.cos(alpha)
    w_km = p.k_m - V_inf
    T = p.rho * p.S_p * p.C_T * delta_T * (V_inf + delta_T * w_km) * w_km
    return L, D, T, V_inf


def forces(state: AircraftState, params: ModelParameters) -> ForceSet:
    """Evaluate the aerodynamic/thrust force model at a state."""
    alpha = alpha_of(state)
    L, D, T, V_inf = _forces_core(state.V_a, alpha, state.delta_T, params)
    return ForceSet(L=float(L), D=float(D), T=float(T), alpha=float(alpha),
                    V_inf=float(V_inf), drag_negative=bool(D < 0.0))


def imu_accels(force_set: ForceSet, mass: float) -> tuple[float, float]:
    """Body-frame specific-force observations (a_x, a_z) from the force set."""
    if mass <= 0.0:
        raise ValueError("mass must be positive")
    ca, sa = np.cos(force_set.alpha), np.sin(force_set.alpha)
    f1 = (force_set.T * ca - force_set.D) / mass
    f2 = (force_set.T * sa + force_set.L) / mass
    a_x = ca * f1 + sa * f2
    a_z = sa * f1 - ca * f2
    return float(a_x), float(a_z)


def dynamics_rhs_array(x: np.ndarray, u: np.ndarray, w: np.ndarray,
                       p: ModelParameters) -> np.ndarray:
    """State derivative for batched state/command arrays; no validity checks."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    phi, theta = x[..., IPHI], x[..., ITHETA]
    chi, V, gam, dT = x[..., ICHI], x[..., IVA], x[..., IGAMMA], x[..., IDELTA]
    alpha = theta - gam
    L, D, T, _ = _forces_core(V, alpha, dT, p)
    sal, cal = np.sin(alpha), np.cos(alpha)
    sg, cg = np.sin(gam), np.cos(gam)
    lift_n = T * sal + L  # force normal to the air velocity

    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (STATE_DIM,))
    out[..., IN] = V * cg * np.cos(chi) + w[..., 0]
    out[..., IE] = V * cg * np.sin(chi) + w[..., 1]
    out[..., ID] = -V * sg + w[..., 2]
    out[..., IPHI] = p.K_phi * (u[..., 0] - phi)
    out[..., ITHETA] = p.K_theta * (u[..., 1] - theta)
    out[..., ICHI] = np.sin(phi) * lift_n / (p.m * V * cg)
    out[..., IVA] = (T * cal - D) / p.m - p.g * sg
    out[..., IGAMMA] = (lift_n * np.cos(phi) - p.m * p.g * cg) / (p.m * V)
    out[..., IDELTA] = (u[..., 2] - dT) / p.tau_T
    return out


def dynamics_jacobians_array(x: np.ndarray, u: np.ndarray, w: np.ndarray,
                             p: ModelParameters) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time Jacobians (d f/d x, d f/d u) for batched inputs."""
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    phi, theta = x[..., IPHI], x[..., ITHETA]
    chi, V, gam, dT = x[..., ICHI], x[..., IVA], x[..., IGAMMA], x[..., IDELTA]
    alpha = theta - gam
    sal, cal = np.sin(alpha), np.cos(alpha)
    sg, cg = np.sin(gam), np.cos(gam)
    sc, cc = np.sin(chi), np.cos(chi)
    sphi, cphi = np.sin(phi), np.cos(phi)

    q_bar_S = 0.5 * p.rho * V**2 * p.S
    L = q_bar_S * (p.C_L0 + p.C_L1 * alpha)
    D = q_bar_S * (p.C_D0 + p.C_D1 * alpha + p.C_D2 * alpha**2)
    V_inf = V * cal
    w_km = p.k_m - V_inf
    cT2 = p.rho * p.S_p * p.C_T
    T = cT2 * dT * (V_inf + dT * w_km) * w_km

    dL_dV = p.rho * p.S * V * (p.C_L0 + p.C_L1 * alpha)
    dL_da = q_bar_S * p.C_L1
    dD_dV = p.rho * p.S * V * (p.C_D0 + p.C_D1 * alpha + p.C_D2 * alpha**2)
    dD_da = q_bar_S * (p.C_D1 + 2.0 * p.C_D2 * alpha)
    # T = cT2*dT*(V_inf + dT*(k_m - V_inf))*(k_m - V_inf)
    dT_dVinf = cT2 * dT * ((1.0 - dT) * w_km - (V_inf + dT * w_km))
    dT_dV = dT_dVinf * cal
    dT_da = dT_dVinf * (-V * sal)
    dT_ddT = cT2 * w_km * (V_inf + 2.0 * dT * w_km)

    # N = T sin(alpha) + L (normal force), A = T cos(alpha) - D (axial force)
    Nf = T * sal + L
    dN_da = dT_da * sal + T * cal + dL_da
    dN_dV = dT_dV * sal + dL_dV
    dN_ddT = dT_ddT * sal
    dA_da = dT_da * cal - T * sal - dD_da
    dA_dV = dT_dV * cal - dD_dV
    dA_ddT = dT_ddT * cal

    fx = np.zeros(batch + (STATE_DIM, STATE_DIM))
    fu = np.zeros(batch + (STATE_DIM, CMD_DIM))

    fx[..., IN, ICHI] = -V * cg * sc
    fx[..., IN, IVA] = cg * cc
    fx[..., IN, IGAMMA] = -V * sg * cc
    fx[..., IE, ICHI] = V * cg * cc
    fx[..., IE, IVA] = cg * sc
    fx[..., IE, IGAMMA] = -V * sg * sc
    fx[..., ID, IVA] = -sg
    fx[..., ID, IGAMMA] = -V * cg

    fx[..., IPHI, IPHI] = -p.K_phi
    fu[..., IPHI, 0] = p.K_phi
    fx[..., ITHETA, ITHETA] = -p.K_theta
    fu[..., ITHETA, 1] = p.K_theta

    denom = p.m * V * cg
    fx[..., ICHI, IPHI] = cphi * Nf / denom
    fx[..., ICHI, ITHETA] = sphi * dN_da / denom
    fx[..., ICHI, IVA] = sphi * (dN_dV / denom - Nf / (p.m * V**2 * cg))
    fx[..., ICHI, IGAMMA] = sphi * (-dN_da / denom + Nf * sg / (p.m * V * cg**2))
    fx[..., ICHI, IDELTA] = sphi * dN_ddT / denom

    fx[..., IVA, ITHETA] = dA_da / p.m
    fx[..., IVA, IVA] = dA_dV / p.m
    fx[..., IVA, IGAMMA] = -dA_da / p.m - p.g * cg
    fx[..., IVA, IDELTA] = dA_ddT / p.m

    mV = p.m * V
    fx[..., IGAMMA, IPHI] = -Nf * sphi / mV
    fx[..., IGAMMA, ITHETA] = cphi * dN_da / mV
    fx[..., IGAMMA, IVA] = cphi * dN_dV / mV - (Nf * cphi - p.m * p.g * cg) / (p.m * V**2)
    fx[..., IGAMMA, IGAMMA] = (-cphi * dN_da + p.m * p.g * sg) / mV
    fx[..., IGAMMA, IDELTA] = cphi * dN_ddT / mV

    fx[..., IDELTA, IDELTA] = -1.0 / p.tau_T
    fu[..., IDELTA, 2] = 1.0 / p.tau_T
    return fx, fu


def continuous_dynamics(state: AircraftState, cmd: ControlCommand,
                        wind: WindVector, params: ModelParameters) -> np.ndarray:
    """Right-hand side of the control-augmented model (9 SI rates)."""
    x = state.as_array()
    validate_state_array(x)
    return dynamics_rhs_array(x, cmd.as_array(), wind.as_array(), params)


def rk4_step_array(x: np.ndarray, u: np.ndarray, w: np.ndarray, dt: float,
                   p: ModelParameters, check: bool = True) -> np.ndarray:
    """Classical RK4 step on batched arrays; wind held constant over the step."""
    if check:
        validate_state_array(x, "rk4 stage 1")
    k1 = dynamics_rhs_array(x, u, w, p)
    x2 = x + 0.5 * dt * k1
    if check:
        validate_state_array(x2, "rk4 stage 2")
    k2 = dynamics_rhs_array(x2, u, w, p)
    x3 = x + 0.5 * dt * k2
    if check:
        validate_state_array(x3, "rk4 stage 3")
    k3 = dynamics_rhs_array(x3, u, w, p)
    x4 = x + dt * k3
    if check:
        validate_state_array(x4, "rk4 stage 4")
    k4 = dynamics_rhs_array(x4, u, w, p)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(state: AircraftState, cmd: ControlCommand, wind: WindVector,
             dt: float, params: ModelParameters) -> AircraftState:
    if dt < 0.0:
        raise ValueError("dt must be >= 0")
    if dt == 0.0:
        return state
    x1 = rk4_step_array(state.as_array(), cmd.as_array(), wind.as_array(), dt, params)
    return AircraftState.from_array(x1)


def rk4_jacobians_array(x: np.ndarray, u: np.ndarray, w: np.ndarray, dt: float,
                        p: ModelParameters, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Discrete Jacobians (A, B) of rk4_step_array via the chain rule through
    the four stages. Exact to the same order as the integrator itself."""
    x = np.asarray(x, dtype=float)
    if check:
        validate_state_array(x, "rk4 stage 1")
    batch = np.broadcast_shapes(x.shape[:-1], np.asarray(u).shape[:-1])
    eye = np.broadcast_to(np.eye(STATE_DIM), batch + (STATE_DIM, STATE_DIM))

    k1 = dynamics_rhs_array(x, u, w, p)
    x2 = x + 0.5 * dt * k1
    k2 = dynamics_rhs_array(x2, u, w, p)
    x3 = x + 0.5 * dt * k2
    k3 = dynamics_rhs_array(x3, u, w, p)
    x4 = x + dt * k3
    if check:
        validate_state_array(x4, "rk4 stage 4")

    f1x, f1u = dynamics_jacobians_array(x, u, w, p)
    f2x, f2u = dynamics_jacobians_array(x2, u, w, p)
    f3x, f3u = dynamics_jacobians_array(x3, u, w, p)
    f4x, f4u = dynamics_jacobians_array(x4, u, w, p)

    dk1x = f1x
    dk2x = f2x @ (eye + 0.5 * dt * dk1x)
    dk3x = f3x @ (eye + 0.5 * dt * dk2x)
    dk4x = f4x @ (eye + dt * dk3x)
    A = eye + (dt / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)

    dk1u = f1u
    dk2u = f2u + f2x @ (0.5 * dt * dk1u)
    dk3u = f3u + f3x @ (0.5 * dt * dk2u)
    dk4u = f4u + f4x @ (dt * dk3u)
    B = (dt / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return A, B


def discrete_jacobians(state: AircraftState, cmd: ControlCommand, wind: WindVector,
                       dt: float, params: ModelParameters) -> tuple[np.ndarray, np.ndarray]:
    if dt == 0.0:
        return np.eye(STATE_DIM), np.zeros((STATE_DIM, CMD_DIM))
    return rk4_jacobians_array(state.as_array(), cmd.as_array(), wind.as_array(),
                               dt, params)


def coordinated_turn_radius(V: float, phi: float, g: float = 9.81) -> float:
    """Turn radius of a coordinated level turn at airspeed V and bank phi."""
    if V <= 0.0:
        raise ValueError("V must be positive")
    if not 0.0 < abs(phi) < np.pi / 2:
        raise ValueError("phi must satisfy 0 < |phi| < pi/2")
    return float(V**2 / (g * np.tan(abs(phi))))


def trim(params: ModelParameters, V_a: float, gamma: float = 0.0,
         chi: float = 0.0, position=(0.0, 0.0, -100.0)) -> tuple[AircraftState, ControlCommand]:
    """Wings-level equilibrium at airspeed V_a and flight path angle gamma.

    Solves the axial/normal force balance for (alpha, delta_T) and returns a
    state with zero attitude/throttle rates together with the command that
    holds it. Raises if the root solve fails or the trim is unphysical.
    """
    p = params

    def residual(z):
        alpha, delta_T = z
        L, D, T, _ = _forces_core(V_a, alpha, delta_T, p)
        return [
            (T * np.cos(alpha) - D) / p.m - p.g * np.sin(gamma),
            (T * np.sin(alpha) + L) - p.m * p.g * np.cos(gamma),
        ]

    qS = 0.5 * p.rho * V_a**2 * p.S
    alpha0 = (p.m * p.g / qS - p.C_L0) / p.C_L1
    sol = optimize.root(residual, x0=[alpha0, 0.5], method="hybr", tol=1e-12)
    if not sol.success:
        raise RuntimeError(f"trim solve failed at V_a={V_a}: {sol.message}")
    alpha, delta_T = float(sol.x[0]), float(sol.x[1])
    if not 0.0 <= delta_T <= 1.0:
        raise RuntimeError(f"trim throttle {delta_T:.3f} outside [0, 1] at V_a={V_a}")
    theta = alpha + gamma
    state = AircraftState(n=position[0], e=position[1], d=position[2], phi=0.0,
                          theta=theta, chi_a=chi, V_a=V_a, gamma_a=gamma,
                          delta_T=delta_T)
    cmd = ControlCommand(phi_c=0.0, theta_c=theta, delta_Tc=delta_T)
    return state, cmd
