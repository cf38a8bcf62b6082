"""Deterministic physics generators for the experiment suite.

Three systems:

* actuated pendulum, gym convention: theta = 0 upright, torque input,
  semi-implicit Euler with the angular velocity clipped;
* planar double pendulum in free fall, angles measured from the downward
  vertical, standard Lagrangian equations integrated with classical RK4.
  The second link is light and short by default, a small hidden dynamic
  riding on the big one;
* a synthetic geared motor whose shaft couples to the rotor through a
  dead zone, the classic backlash nonlinearity.

``simulate`` rolls a system from its documented initial state over a given
actuation sequence and records observation channels, optionally adding
i.i.d. Gaussian measurement noise.  Dynamics always evolve on the noiseless
state.  The per-step rollouts are scalar loops, so they carry numba builds
with plain-python fallbacks (see accel module); both builds are kept
importable for the benchmark command.
"""

import math
from dataclasses import dataclass

import numpy as np

from .accel import NUMBA_ENABLED, njit
from .errors import ConfigError, DomainError, ShapeError

SYSTEMS = ("pendulum", "double_pendulum", "backlash")


@dataclass
class PendulumParams:
    g: float = 10.0
    l: float = 1.0
    mass: float = 1.0
    dt: float = 0.05
    omega_clip: float = 8.0

    def __post_init__(self):
        for field in ("g", "l", "mass", "dt", "omega_clip"):
            if getattr(self, field) <= 0:
                raise DomainError(f"{field} must be positive")
        if self.dt > 0.05:
            raise DomainError(f"pendulum dt must be <= 0.05, got {self.dt}")


@dataclass
class DoublePendulumParams:
    m1: float = 1.0
    m2: float = 0.1
    l1: float = 1.0
    l2: float = 0.2
    g: float = 9.81
    dt: float = 0.01

    def __post_init__(self):
        for field in ("m1", "m2", "l1", "l2", "g", "dt"):
            if getattr(self, field) <= 0:
                raise DomainError(f"{field} must be positive")


@dataclass
class BacklashMotorParams:
    time_constant: float = 0.05
    gain: float = 2.0
    deadzone_halfwidth: float = 0.1
    dt: float = 0.02

    def __post_init__(self):
        if self.time_constant <= 0 or self.gain <= 0 or self.dt <= 0:
            raise DomainError("time_constant, gain, dt must be positive")
        if self.deadzone_halfwidth < 0:
            raise DomainError("deadzone_halfwidth must be >= 0")


@dataclass
class Trajectory:
    """Recorded observation channels plus the actuation that produced them."""

    states: np.ndarray          # (T, d)
    actions: np.ndarray         # (T, d_u), d_u may be 0
    dt: float
    state_names: tuple
    action_names: tuple

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ShapeError("states and actions must be 2-D")
        if self.states.shape[0] != self.actions.shape[0]:
            raise ShapeError(
                f"states rows {self.states.shape[0]} != "
                f"actions rows {self.actions.shape[0]}")
        if self.states.shape[1] != len(self.state_names):
            raise ShapeError("state_names length must match state columns")
        if self.actions.shape[1] != len(self.action_names):
            raise ShapeError("action_names length must match action columns")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.actions))):
            raise DomainError("trajectory contains non-finite values")
        self.state_names = tuple(self.state_names)
        self.action_names = tuple(self.action_names)


def wrap_angle(theta):
    """Wrap to the half-open interval (-pi, pi]."""
    return math.pi - ((math.pi - theta) % (2.0 * math.pi))


# ---------------------------------------------------------------------------
# Single steps (scalar, python): the documented dynamics.

def step_pendulum(state, u, p):
    """One semi-implicit Euler step of the gym-style actuated pendulum."""
    theta, omega = state
    acc = (3.0 * p.g / (2.0 * p.l)) * math.sin(theta) \
        + (3.0 / (p.mass * p.l * p.l)) * u
    omega = omega + p.dt * acc
    if omega > p.omega_clip:
        omega = p.omega_clip
    elif omega < -p.omega_clip:
        omega = -p.omega_clip
    theta = wrap_angle(theta + p.dt * omega)
    return theta, omega


def _dp_accel_py(th1, w1, th2, w2, m1, m2, l1, l2, g):
    # standard two-link equations, angles from the downward vertical
    delta = th1 - th2
    den = 2.0 * m1 + m2 - m2 * math.cos(2.0 * delta)
    a1 = (-g * (2.0 * m1 + m2) * math.sin(th1)
          - m2 * g * math.sin(th1 - 2.0 * th2)
          - 2.0 * math.sin(delta) * m2
          * (w2 * w2 * l2 + w1 * w1 * l1 * math.cos(delta))) / (l1 * den)
    a2 = (2.0 * math.sin(delta)
          * (w1 * w1 * l1 * (m1 + m2) + g * (m1 + m2) * math.cos(th1)
             + w2 * w2 * l2 * m2 * math.cos(delta))) / (l2 * den)
    return a1, a2


_dp_accel = njit(cache=True)(_dp_accel_py) if NUMBA_ENABLED else _dp_accel_py


def double_pendulum_accel(state, p):
    """Instantaneous angular accelerations (alpha1, alpha2) at ``state``."""
    th1, w1, th2, w2 = state
    return _dp_accel(th1, w1, th2, w2, p.m1, p.m2, p.l1, p.l2, p.g)


def _dp_rk4_py(th1, w1, th2, w2, m1, m2, l1, l2, g, dt):
    a1, a2 = _dp_accel(th1, w1, th2, w2, m1, m2, l1, l2, g)
    k1 = (w1, a1, w2, a2)
    a1, a2 = _dp_accel(th1 + 0.5 * dt * k1[0], w1 + 0.5 * dt * k1[1],
                       th2 + 0.5 * dt * k1[2], w2 + 0.5 * dt * k1[3],
                       m1, m2, l1, l2, g)
    k2 = (w1 + 0.5 * dt * k1[1], a1, w2 + 0.5 * dt * k1[3], a2)
    a1, a2 = _dp_accel(th1 + 0.5 * dt * k2[0], w1 + 0.5 * dt * k2[1],
                       th2 + 0.5 * dt * k2[2], w2 + 0.5 * dt * k2[3],
                       m1, m2, l1, l2, g)
    k3 = (w1 + 0.5 * dt * k2[1], a1, w2 + 0.5 * dt * k2[3], a2)
    a1, a2 = _dp_accel(th1 + dt * k3[0], w1 + dt * k3[1],
                       th2 + dt * k3[2], w2 + dt * k3[3],
                       m1, m2, l1, l2, g)
    k4 = (w1 + dt * k3[1], a1, w2 + dt * k3[3], a2)
    s = dt / 6.0
    return (th1 + s * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            w1 + s * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            th2 + s * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
            w2 + s * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]))


_dp_rk4 = njit(cache=True)(_dp_rk4_py) if NUMBA_ENABLED else _dp_rk4_py


def step_double_pendulum(state, p):
    """One classical RK4 step of the free-fall double pendulum."""
    th1, w1, th2, w2 = state
    return _dp_rk4(th1, w1, th2, w2, p.m1, p.m2, p.l1, p.l2, p.g, p.dt)


def double_pendulum_energy(state, p):
    """Total mechanical energy, potential measured from both links hanging.

    The zero at the stable equilibrium makes relative-drift checks
    well-defined for any start, including ones where the pivot-referenced
    potential crosses zero.
    """
    th1, w1, th2, w2 = state
    kinetic = (0.5 * (p.m1 + p.m2) * p.l1 ** 2 * w1 ** 2
               + 0.5 * p.m2 * p.l2 ** 2 * w2 ** 2
               + p.m2 * p.l1 * p.l2 * w1 * w2 * math.cos(th1 - th2))
    potential = ((p.m1 + p.m2) * p.g * p.l1 * (1.0 - math.cos(th1))
                 + p.m2 * p.g * p.l2 * (1.0 - math.cos(th2)))
    return kinetic + potential


def step_backlash_motor(state, u, p):
    """One step of the geared motor: first-order rotor lag, dead-zone shaft."""
    theta_m, theta_s, omega_m = state
    omega_m = omega_m + p.dt * (p.gain * u - omega_m) / p.time_constant
    theta_m = theta_m + p.dt * omega_m
    gap = theta_m - theta_s
    beta = p.deadzone_halfwidth
    if gap > beta:
        theta_s = theta_m - beta
    elif gap < -beta:
        theta_s = theta_m + beta
    return theta_m, theta_s, omega_m


# ---------------------------------------------------------------------------
# Whole-trajectory rollouts (record state, then step).  These are the hot
# loops: each exists as a plain-python build (_py suffix) and, when numba is
# enabled, a jitted build; the module-level name points at the active one.

def _rollup_pendulum_py(theta0, omega0, u, g, l, m, dt, clip):
    steps = u.shape[0]
    thetas = np.empty(steps)
    omegas = np.empty(steps)
    th = theta0
    om = omega0
    for t in range(steps):
        thetas[t] = th
        omegas[t] = om
        om = om + dt * ((3.0 * g / (2.0 * l)) * math.sin(th)
                        + (3.0 / (m * l * l)) * u[t])
        if om > clip:
            om = clip
        elif om < -clip:
            om = -clip
        th = math.pi - ((math.pi - (th + dt * om)) % (2.0 * math.pi))
    return thetas, omegas


def _rollup_double_pendulum_py(s0, steps, m1, m2, l1, l2, g, dt):
    out = np.empty((steps, 4))
    th1, w1, th2, w2 = s0[0], s0[1], s0[2], s0[3]
    for t in range(steps):
        out[t, 0] = th1
        out[t, 1] = w1
        out[t, 2] = th2
        out[t, 3] = w2
        th1, w1, th2, w2 = _dp_rk4(th1, w1, th2, w2, m1, m2, l1, l2, g, dt)
    return out


def _rollup_backlash_py(u, tau, gain, beta, dt):
    steps = u.shape[0]
    out = np.empty((steps, 3))
    th_m = 0.0
    th_s = 0.0
    om = 0.0
    for t in range(steps):
        out[t, 0] = th_m
        out[t, 1] = th_s
        out[t, 2] = om
        om = om + dt * (gain * u[t] - om) / tau
        th_m = th_m + dt * om
        gap = th_m - th_s
        if gap > beta:
            th_s = th_m - beta
        elif gap < -beta:
            th_s = th_m + beta
    return out


if NUMBA_ENABLED:
    _rollup_pendulum = njit(cache=True)(_rollup_pendulum_py)
    _rollup_double_pendulum = njit(cache=True)(_rollup_double_pendulum_py)
    _rollup_backlash = njit(cache=True)(_rollup_backlash_py)
else:
    _rollup_pendulum = _rollup_pendulum_py
    _rollup_double_pendulum = _rollup_double_pendulum_py
    _rollup_backlash = _rollup_backlash_py


# ---------------------------------------------------------------------------
# Actuation and rollout-to-Trajectory assembly.

def generate_actuation(rng, steps, amplitude, hold):
    """Piecewise-constant excitation: uniform draws held for ``hold`` steps."""
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    if hold < 1:
        raise DomainError(f"hold must be >= 1, got {hold}")
    if amplitude < 0:
        raise DomainError(f"amplitude must be >= 0, got {amplitude}")
    n_levels = (steps + hold - 1) // hold
    levels = rng.uniform(size=n_levels, low=-amplitude, high=amplitude)
    u = np.repeat(levels, hold)[:steps]
    return u.reshape(-1, 1)


PENDULUM_CHANNELS = ("cos_theta", "sin_theta", "omega")
DOUBLE_PENDULUM_CHANNELS = ("theta1", "omega1", "alpha1")
BACKLASH_CHANNELS = ("theta_s", "omega_s")

PENDULUM_INIT = (math.pi, 0.0)                       # hanging at rest
DOUBLE_PENDULUM_INIT = (math.pi / 2, 0.0, math.pi / 2, 0.0)   # both at 90 deg


def simulate(system, params, actions, noise_sigma, rng, init_state=None):
    """Roll ``system`` over ``actions`` and record its observation channels.

    Pendulum records (cos theta, sin theta, omega); the double pendulum
    records only the big link, (theta1, omega1, alpha1), with alpha1 taken
    from the equations of motion at the noiseless state; the backlash motor
    records shaft position and a backward-difference shaft velocity, the way
    an encoder pipeline would produce it.  ``noise_sigma > 0`` adds i.i.d.
    Gaussian noise to every recorded channel; the underlying dynamics stay
    noiseless.  Bit-reproducible given the same seed and arguments.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2:
        raise ShapeError(f"actions must be 2-D (T, d_u), got ndim={actions.ndim}")
    steps = actions.shape[0]
    if steps < 1:
        raise DomainError("need at least one step")

    if system == "pendulum":
        if actions.shape[1] != 1:
            raise ShapeError("pendulum takes exactly one action channel")
        th0, om0 = PENDULUM_INIT if init_state is None else init_state
        u = np.ascontiguousarray(actions[:, 0])
        thetas, omegas = _rollup_pendulum(
            th0, om0, u, params.g, params.l, params.mass, params.dt,
            params.omega_clip)
        clean = np.column_stack([np.cos(thetas), np.sin(thetas), omegas])
        names, action_names = PENDULUM_CHANNELS, ("u",)
    elif system == "double_pendulum":
        if actions.shape[1] != 0:
            raise ShapeError("double pendulum is unactuated; pass (T, 0) actions")
        s0 = np.asarray(DOUBLE_PENDULUM_INIT if init_state is None else init_state,
                        dtype=np.float64)
        full = _rollup_double_pendulum(
            s0, steps, params.m1, params.m2, params.l1, params.l2,
            params.g, params.dt)
        alpha1 = np.empty(steps)
        for t in range(steps):
            alpha1[t] = _dp_accel(full[t, 0], full[t, 1], full[t, 2], full[t, 3],
                                  params.m1, params.m2, params.l1, params.l2,
                                  params.g)[0]
        clean = np.column_stack([full[:, 0], full[:, 1], alpha1])
        names, action_names = DOUBLE_PENDULUM_CHANNELS, ()
    elif system == "backlash":
        if actions.shape[1] != 1:
            raise ShapeError("backlash motor takes exactly one action channel")
        u = np.ascontiguousarray(actions[:, 0])
        full = _rollup_backlash(u, params.time_constant, params.gain,
                                params.deadzone_halfwidth, params.dt)
        omega_s = np.empty(steps)
        omega_s[0] = 0.0
        if steps > 1:
            omega_s[1:] = np.diff(full[:, 1]) / params.dt
        clean = np.column_stack([full[:, 1], omega_s])
        names, action_names = BACKLASH_CHANNELS, ("u",)
    else:
        raise ConfigError(f"unknown system {system!r}; choose from {SYSTEMS}")

    if noise_sigma < 0:
        raise DomainError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if noise_sigma > 0:
        clean = clean + rng.normal(size=clean.shape, sigma=noise_sigma)
    return Trajectory(clean, actions, params.dt, names, action_names)


def default_params(system):
    if system == "pendulum":
        return PendulumParams()
    if system == "double_pendulum":
        return DoublePendulumParams()
    if system == "backlash":
        return BacklashMotorParams()
    raise ConfigError(f"unknown system {system!r}; choose from {SYSTEMS}")
