"""Controlled plants: a linear aircraft model and a nonlinear bicycle vehicle.

``f`` and ``utility`` are written with :mod:`dgpi.autodiff` operations and
accept single states ``(n,)`` or batches ``(B, n)``, traced or not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

GRAVITY = 9.81


class DomainError(ValueError):
    """State or input outside the region where the model is defined."""


class DynamicsModel:
    name = "base"
    n: int
    m: int
    x_e: np.ndarray
    u_e: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    omega_lo: np.ndarray
    omega_hi: np.ndarray
    linear = False

    def f(self, x, u):
        raise NotImplementedError

    def utility(self, x, u):
        raise NotImplementedError

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.u_lo, self.u_hi)

    def set_omega(self, lo, hi) -> None:
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if lo.shape != (self.n,) or hi.shape != (self.n,) or np.any(lo >= hi):
            raise ValueError("state box needs n strictly increasing (lo, hi) pairs")
        self.omega_lo, self.omega_hi = lo, hi

    def in_omega(self, x: np.ndarray, inflate: float = 1.0) -> np.ndarray:
        """Membership in the state box, optionally inflated about its centre."""
        centre = 0.5 * (self.omega_lo + self.omega_hi)
        half = 0.5 * inflate * (self.omega_hi - self.omega_lo)
        return np.all(np.abs(np.asarray(x) - centre) <= half, axis=-1)

    def sample_states(self, count: int, rng) -> np.ndarray:
        """I.i.d. uniform states in the box, shape ``(count, n)``."""
        if count <= 0:
            raise ValueError("count must be positive")
        rng = np.random.default_rng(rng)
        return rng.uniform(self.omega_lo, self.omega_hi, size=(count, self.n))

    def valid(self, x: np.ndarray) -> np.ndarray:
        """States where ``f`` is defined."""
        return np.all(np.isfinite(x), axis=-1)


# ---------------------------------------------------------------- aircraft

AIRCRAFT_A = np.array([[-1.01887, 0.90506, -0.00215],
                       [0.82225, -1.07741, -0.17555],
                       [0.0, 0.0, -1.0]])
AIRCRAFT_B = np.array([[0.0], [0.0], [1.0]])


class Aircraft(DynamicsModel):
    """Three-state linear longitudinal aircraft plant with identity Q and R."""

    name = "aircraft"
    linear = True

    def __init__(self, omega_lo=(-2.0,) * 3, omega_hi=(2.0,) * 3):
        self.A = AIRCRAFT_A.copy()
        self.B = AIRCRAFT_B.copy()
        self.Q = np.eye(3)
        self.R = np.eye(1)
        self.n, self.m = 3, 1
        self.x_e = np.zeros(3)
        self.u_e = np.zeros(1)
        self.u_lo = np.full(1, -np.inf)
        self.u_hi = np.full(1, np.inf)
        self.set_omega(omega_lo, omega_hi)

    def f(self, x, u):
        return ad.add(ad.matvec(self.A, x), ad.matvec(self.B, u))

    def utility(self, x, u):
        return ad.add(ad.dot(x, ad.matvec(self.Q, x)), ad.dot(u, ad.matvec(self.R, u)))


# ---------------------------------------------------------------- vehicle

@dataclass(frozen=True)
class VehicleParams:
    C_f: float = 88000.0
    C_r: float = 94000.0
    a: float = 1.14
    b: float = 1.40
    m: float = 1500.0
    I_z: float = 2420.0
    mu: float = 1.0

    def __post_init__(self):
        for name, val in vars(self).items():
            if not val > 0:
                raise ValueError(f"vehicle parameter {name} must be positive")


def fiala_lateral_force(alpha, C, mu_t, F_z):
    """Fiala brush-model lateral force, opposing the slip angle.

    Cubic in ``tan(alpha)`` up to full sliding, then capped at ``mu_t * F_z``.
    """
    t = ad.tan(alpha)
    grip = ad.mul(mu_t, F_z)
    ct = ad.mul(C, t)
    bracket = ad.add(ad.sub(ad.div(ad.square(ct), ad.scale(ad.square(grip), 27.0)),
                            ad.div(ad.abs_(ct), ad.scale(grip, 3.0))), 1.0)
    return ad.neg(ad.mul(ad.sign(alpha), ad.min2(ad.abs_(ad.mul(ct, bracket)), ad.abs_(grip))))


def tire_loads_and_friction(p: VehicleParams, a_x) -> dict:
    """Axle loads, longitudinal force split and remaining lateral friction."""
    ax = ad.value_of(a_x)
    if np.any(np.abs(ax) > 3.0 + 1e-12):
        raise DomainError("longitudinal acceleration outside [-3, 3]")
    F_zf = p.b * p.m * GRAVITY / (p.a + p.b)
    F_zr = p.a * p.m * GRAVITY / (p.a + p.b)
    braking = (ax < 0).astype(np.float64)
    # accelerating: rear axle drives; braking: force split evenly
    F_xf = ad.mul(ad.scale(a_x, p.m / 2.0), braking)
    F_xr = ad.mul(ad.scale(a_x, p.m), 1.0 - 0.5 * braking)
    for F_x, F_z in ((F_xf, F_zf), (F_xr, F_zr)):
        if np.any(ad.value_of(F_x) ** 2 > (p.mu * F_z) ** 2):
            raise DomainError("longitudinal force exceeds the friction circle")
    mu_f = ad.scale(ad.sqrt(ad.sub((p.mu * F_zf) ** 2, ad.square(F_xf))), 1.0 / F_zf)
    mu_r = ad.scale(ad.sqrt(ad.sub((p.mu * F_zr) ** 2, ad.square(F_xr))), 1.0 / F_zr)
    return {"F_zf": F_zf, "F_zr": F_zr, "F_xf": F_xf, "F_xr": F_xr, "mu_f": mu_f, "mu_r": mu_r}


class Vehicle(DynamicsModel):
    """Bicycle model tracking a straight path at 12 m/s.

    State ``(v_y, r, v_x, phi, y)``: lateral speed, yaw rate, longitudinal
    speed, heading error and lateral offset. Control ``(delta, a_x)``:
    steering angle and longitudinal acceleration.
    """

    name = "vehicle"
    V_X_MIN = 0.1

    def __init__(self, params: VehicleParams | None = None,
                 omega_lo=(-2.0, -1.0, 8.0, -0.5, -3.0), omega_hi=(2.0, 1.0, 16.0, 0.5, 3.0)):
        self.p = params or VehicleParams()
        self.n, self.m = 5, 2
        self.x_e = np.array([0.0, 0.0, 12.0, 0.0, 0.0])
        self.u_e = np.zeros(2)
        self.u_lo = np.array([-0.35, -3.0])
        self.u_hi = np.array([0.35, 3.0])
        self.set_omega(omega_lo, omega_hi)

    def valid(self, x):
        x = np.asarray(x)
        return np.all(np.isfinite(x), axis=-1) & (x[..., 2] > self.V_X_MIN)

    def f(self, x, u):
        p = self.p
        if np.any(ad.value_of(x)[..., 2] <= self.V_X_MIN):
            raise DomainError("longitudinal speed too low for the slip-angle model")
        v_y, r, v_x, phi = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        delta, a_x = u[..., 0], u[..., 1]
        tires = tire_loads_and_friction(p, a_x)
        alpha_f = ad.sub(ad.arctan(ad.div(ad.add(v_y, ad.scale(r, p.a)), v_x)), delta)
        alpha_r = ad.arctan(ad.div(ad.sub(v_y, ad.scale(r, p.b)), v_x))
        F_yf = fiala_lateral_force(alpha_f, p.C_f, tires["mu_f"], tires["F_zf"])
        F_yr = fiala_lateral_force(alpha_r, p.C_r, tires["mu_r"], tires["F_zr"])
        F_yf_cos = ad.mul(F_yf, ad.cos(delta))
        dv_y = ad.sub(ad.scale(ad.add(F_yf_cos, F_yr), 1.0 / p.m), ad.mul(v_x, r))
        dr = ad.scale(ad.sub(ad.scale(F_yf_cos, p.a), ad.scale(F_yr, p.b)), 1.0 / p.I_z)
        dv_x = ad.sub(ad.add(a_x, ad.mul(v_y, r)), ad.scale(ad.mul(F_yf, ad.sin(delta)), 1.0 / p.m))
        dy = ad.add(ad.mul(v_x, ad.sin(phi)), ad.mul(v_y, ad.cos(phi)))
        return ad.stack([dv_y, dr, dv_x, r, dy], axis=-1)

    def utility(self, x, u):
        speed_err = ad.sub(x[..., 2], 12.0)
        track = ad.add(ad.scale(ad.square(speed_err), 0.4), ad.scale(ad.square(x[..., 4]), 80.0))
        effort = ad.add(ad.scale(ad.square(u[..., 0]), 280.0), ad.scale(ad.square(u[..., 1]), 0.3))
        return ad.add(track, effort)


MODELS = {"aircraft": Aircraft, "vehicle": Vehicle}


def make_model(name: str, omega_lo=None, omega_hi=None) -> DynamicsModel:
    if name not in MODELS:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
    model = MODELS[name]()
    if omega_lo is not None or omega_hi is not None:
        model.set_omega(model.omega_lo if omega_lo is None else omega_lo,
                        model.omega_hi if omega_hi is None else omega_hi)
    return model


# ---------------------------------------------------------------- integration

def rk4_step(model: DynamicsModel, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """One RK4 step with the control held constant over the step."""
    k1 = model.f(x, u)
    k2 = model.f(x + 0.5 * dt * k1, u)
    k3 = model.f(x + 0.5 * dt * k2, u)
    k4 = model.f(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def safe_rk4_step(model: DynamicsModel, x: np.ndarray, u: np.ndarray, dt: float):
    """RK4 step that reports, instead of raising, states whose step leaves the domain.

    Returns ``(x_next, ok)``; rows with ``ok`` false are returned unchanged.
    """
    try:
        return rk4_step(model, x, u, dt), np.ones(x.shape[:-1], dtype=bool)
    except DomainError:
        if x.ndim == 1:
            return x.copy(), np.array(False)
    nxt = x.copy()
    ok = np.zeros(len(x), dtype=bool)
    for i in range(len(x)):
        try:
            nxt[i] = rk4_step(model, x[i], u[i], dt)
            ok[i] = True
        except DomainError:
            pass
    return nxt, ok


class RolloutSampler:
    """Training states taken from persistent closed-loop simulations.

    Each of ``count`` vehicles is integrated under the current policy between
    training iterations. A vehicle restarts from a fresh uniform state when it
    leaves the state box or its episode exceeds ``max_time``. Episode ages are
    staggered at start so restarts do not all happen on the same iteration.
    ``uniform_fraction`` of every returned batch is replaced by fresh i.i.d.
    uniform states.
    """

    def __init__(self, model: DynamicsModel, count: int, rng, dt: float = 0.01,
                 max_time: float = 20.0, uniform_fraction: float = 0.0):
        self.model = model
        self.rng = np.random.default_rng(rng)
        self.dt = dt
        self.max_steps = max(1, int(round(max_time / dt)))
        self.uniform_fraction = uniform_fraction
        self.states = model.sample_states(count, self.rng)
        self.initial = self.states.copy()
        self.ages = self.rng.integers(0, self.max_steps, size=count)
        self.restarts = 0

    def batch(self) -> np.ndarray:
        k = int(round(self.uniform_fraction * len(self.states)))
        if k == 0:
            return self.states.copy()
        out = self.states.copy()
        out[:k] = self.model.sample_states(k, self.rng)
        return out

    def advance(self, policy, steps: int = 1) -> None:
        for _ in range(steps):
            u = self.model.clamp(policy(self.states))
            nxt, ok = safe_rk4_step(self.model, self.states, u, self.dt)
            self.ages += 1
            reset = ~(ok & self.model.in_omega(nxt) & self.model.valid(nxt)) | (self.ages >= self.max_steps)
            if np.any(reset):
                k = int(reset.sum())
                nxt[reset] = self.model.sample_states(k, self.rng)
                self.initial[reset] = nxt[reset]
                self.ages[reset] = 0
                self.restarts += k
            self.states = nxt
