"""
Pseudospectral time integration of the first-order good Boussinesq system.

In Fourier space the linear part couples (u1^, u2^) through ik and ik(1+k^2).
The characteristic variables w+- = (u1^ +- u2^/c)/2 with c = sqrt(1+k^2)
diagonalize it with rates +-i k c, so the linear flow is an exact phase
rotation and the nonlinear forcing is treated with ETDRK4 (Cox-Matthews
coefficients evaluated on a complex contour, Kassam-Trefethen).
"""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..exceptions import ContractViolationError, InsufficientDataError, NumericalBlowupError
from .functionals import energy, momentum
from .grid import FieldState, Grid, fourier_interpolate, spectral_derivative
from .solitons import odd_power

logger = logging.getLogger(__name__)

CONTOUR_POINTS = 32
BLOWUP_FACTOR = 10.0
DEFAULT_DT_FRACTION = 0.2
DEALIAS_FRACTION = 2.0 / 3.0


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class EvolveConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_end: float
    nonlinearity_p: float = Field(gt=0)
    dt: Optional[float] = Field(default=None, gt=0)
    dealias: bool = True
    checkpoint_stride: int = Field(default=10, ge=1)
    direction: Direction = Direction.FORWARD

    def time_step(self, grid: Grid) -> float:
        bound = stability_bound(grid)
        if self.dt is None:
            return DEFAULT_DT_FRACTION * bound
        if self.dt > bound:
            raise ContractViolationError(f"dt={self.dt:.4g} exceeds the stability bound {bound:.4g} for {grid}")
        return self.dt


def stability_bound(grid: Grid) -> float:
    """50/(1 + k_max sqrt(1 + k_max^2)); the default step is a fifth of it."""
    k = grid.k_max
    return 50.0 / (1.0 + k * math.sqrt(1.0 + k * k))


def default_dt(grid: Grid) -> float:
    return DEFAULT_DT_FRACTION * stability_bound(grid)


def dealias_mask(grid: Grid) -> np.ndarray:
    k = np.abs(grid.rfft_wavenumbers)
    return (k <= DEALIAS_FRACTION * grid.k_max).astype(float)


def _forcing(grid: Grid, u1: np.ndarray, p: float, dealias: bool) -> np.ndarray:
    """rfft of |u1|^2p u1, 2/3-truncated when dealiasing."""
    f_hat = np.fft.rfft(odd_power(u1, p))
    if dealias:
        f_hat *= dealias_mask(grid)
    return f_hat


def rhs(state: FieldState, p: float, dealias: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(d_x u2, d_x(u1 - u1_xx - |u1|^2p u1)) with spectral derivatives."""
    grid = state.grid
    du1 = spectral_derivative(grid, state.u2, 1)
    k = grid.odd_rfft_wavenumbers
    k2 = grid.rfft_wavenumbers**2
    u1_hat = np.fft.rfft(state.u1)
    du2_hat = 1j * k * ((1.0 + k2) * u1_hat - _forcing(grid, state.u1, p, dealias))
    du2 = np.fft.irfft(du2_hat, n=grid.n_points)
    if not (np.all(np.isfinite(du1)) and np.all(np.isfinite(du2))):
        raise NumericalBlowupError("non-finite right-hand side", state.time)
    return du1, du2


@dataclass(frozen=True)
class _Coefficients:
    speed: np.ndarray
    sigma: np.ndarray
    e: np.ndarray
    e2: np.ndarray
    q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray


@lru_cache(maxsize=32)
def _coefficients(half_length: float, n_points: int, dt: float) -> _Coefficients:
    grid = Grid(half_length, n_points)
    speed = np.sqrt(1.0 + grid.rfft_wavenumbers**2)
    sigma = grid.odd_rfft_wavenumbers * speed
    lin = np.stack([1j * sigma, -1j * sigma]) * dt
    # full circle: the linear symbol is purely imaginary
    roots = np.exp(2j * np.pi * (np.arange(CONTOUR_POINTS) + 0.5) / CONTOUR_POINTS)
    lr = lin[..., None] + roots
    elr = np.exp(lr)
    q = dt * np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=-1)
    f1 = dt * np.mean((-4.0 - lr + elr * (4.0 - 3.0 * lr + lr**2)) / lr**3, axis=-1)
    f2 = dt * np.mean((2.0 + lr + elr * (-2.0 + lr)) / lr**3, axis=-1)
    f3 = dt * np.mean((-4.0 - 3.0 * lr - lr**2 + elr * (4.0 - lr)) / lr**3, axis=-1)
    logger.debug(f"ETDRK4 coefficients for L={half_length:.2f}, n={n_points}, dt={dt:.4g}")
    return _Coefficients(speed, sigma, np.exp(lin), np.exp(lin / 2.0), q, f1, f2, f3)


class Integrator:
    """Fixed-step ETDRK4 in characteristic variables on one grid."""

    def __init__(self, grid: Grid, p: float, dt: float, dealias: bool = True):
        self.grid = grid
        self.p = p
        self.dt = dt
        self.dealias = dealias
        self.coeffs = _coefficients(grid.half_length, grid.n_points, dt)

    def encode(self, state: FieldState) -> np.ndarray:
        u1_hat = np.fft.rfft(state.u1)
        u2_hat = np.fft.rfft(state.u2) / self.coeffs.speed
        return 0.5 * np.stack([u1_hat + u2_hat, u1_hat - u2_hat])

    def decode(self, v: np.ndarray, t: float) -> FieldState:
        n = self.grid.n_points
        u1 = np.fft.irfft(v[0] + v[1], n=n)
        u2 = np.fft.irfft(self.coeffs.speed * (v[0] - v[1]), n=n)
        return FieldState(self.grid, u1, u2, t)

    def nonlinear(self, v: np.ndarray) -> np.ndarray:
        u1 = np.fft.irfft(v[0] + v[1], n=self.grid.n_points)
        forced = -1j * self.grid.odd_rfft_wavenumbers * _forcing(self.grid, u1, self.p, self.dealias)
        half = forced / (2.0 * self.coeffs.speed)
        return np.stack([half, -half])

    def advance(self, v: np.ndarray) -> np.ndarray:
        c = self.coeffs
        nv = self.nonlinear(v)
        a = c.e2 * v + c.q * nv
        na = self.nonlinear(a)
        b = c.e2 * v + c.q * na
        nb = self.nonlinear(b)
        cc = c.e2 * a + c.q * (2.0 * nb - nv)
        nc = self.nonlinear(cc)
        return c.e * v + c.f1 * nv + 2.0 * c.f2 * (na + nb) + c.f3 * nc

    def h_norm(self, v: np.ndarray) -> float:
        """Energy-space norm from the Fourier coefficients (Parseval)."""
        u1_hat = v[0] + v[1]
        u2_hat = self.coeffs.speed * (v[0] - v[1])
        weights = np.full(u1_hat.shape, 2.0)
        weights[0] = 1.0
        weights[-1] = 1.0
        density = weights * (np.abs(u1_hat) ** 2 * self.coeffs.speed**2 + np.abs(u2_hat) ** 2)
        return math.sqrt(2.0 * self.grid.half_length * float(np.sum(density)) / self.grid.n_points**2)

    def run(
        self,
        state: FieldState,
        n_steps: int,
        stride: int = 1,
        on_checkpoint: Optional[Callable[[FieldState], None]] = None,
    ) -> FieldState:
        v = self.encode(state)
        t0 = state.time
        norm = self.h_norm(v)
        for i in range(1, n_steps + 1):
            v = self.advance(v)
            t = t0 + i * self.dt
            new_norm = self.h_norm(v)
            if not math.isfinite(new_norm) or (norm > 0 and new_norm > BLOWUP_FACTOR * norm):
                raise NumericalBlowupError(f"H-norm jumped from {norm:.3e} to {new_norm:.3e} in one step", t)
            norm = new_norm
            logger.debug(f"step {i}/{n_steps} t={t:.6f} |u|_H={norm:.6e}")
            if on_checkpoint is not None and (i % stride == 0 or i == n_steps):
                on_checkpoint(self.decode(v, t))
        return self.decode(v, t0 + n_steps * self.dt)


def _step_plan(span: float, dt: float) -> tuple[int, float]:
    """Step count landing exactly on the end time."""
    n_steps = max(1, math.ceil(span / dt - 1e-9))
    return n_steps, span / n_steps


def step(state: FieldState, cfg: EvolveConfig) -> FieldState:
    dt = cfg.time_step(state.grid)
    integrator = Integrator(state.grid, cfg.nonlinearity_p, dt, cfg.dealias)
    if cfg.direction == Direction.BACKWARD:
        return integrator.run(state.time_reversed(), 1).time_reversed()
    return integrator.run(state, 1)


@dataclass
class Trajectory:
    """Checkpointed states in integration order (descending time when backward)."""

    states: list[FieldState]
    p: float
    direction: Direction = Direction.FORWARD
    wall_seconds: float = 0.0
    history: list[dict] = field(default_factory=list, repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    @property
    def initial(self) -> FieldState:
        return self.states[0]

    @property
    def final(self) -> FieldState:
        return self.states[-1]

    def at(self, t: float, tol: float = 1e-9) -> FieldState:
        for state in self.states:
            if abs(state.time - t) <= tol:
                return state
        raise ContractViolationError(f"no checkpoint at t={t}; have {self.times.min():.4g}..{self.times.max():.4g}")


def _integrate(initial: FieldState, t_end: float, cfg: EvolveConfig, direction: Direction) -> Trajectory:
    started = time.perf_counter()
    reversed_ = direction == Direction.BACKWARD
    span = initial.time - t_end if reversed_ else t_end - initial.time
    if span < 0:
        raise ContractViolationError(f"{direction.value} evolution from t={initial.time} cannot reach t={t_end}")
    trajectory = Trajectory([initial], cfg.nonlinearity_p, direction)
    if span == 0:
        return trajectory
    n_steps, dt = _step_plan(span, cfg.time_step(initial.grid))
    integrator = Integrator(initial.grid, cfg.nonlinearity_p, dt, cfg.dealias)
    start = initial.time_reversed() if reversed_ else initial

    def keep(state: FieldState):
        trajectory.states.append(state.time_reversed() if reversed_ else state)

    logger.info(f"Evolving {direction.value} from t={initial.time:.4g} to t={t_end:.4g} in {n_steps} steps of {dt:.4g}")
    try:
        integrator.run(start, n_steps, cfg.checkpoint_stride, keep)
    except NumericalBlowupError as e:
        blowup_time = -e.time if reversed_ else e.time
        logger.error(f"Blowup during {direction.value} evolution at t={blowup_time:.6g}")
        raise NumericalBlowupError("H-norm blowup", blowup_time) from e
    trajectory.wall_seconds = time.perf_counter() - started
    return trajectory


def evolve(initial: FieldState, cfg: EvolveConfig) -> Trajectory:
    trajectory = _integrate(initial, cfg.t_end, cfg, cfg.direction)
    trajectory.history = conservation_history(trajectory, cfg.nonlinearity_p)
    return trajectory


def evolve_backward_from_final(final: FieldState, t_start: float, cfg: EvolveConfig) -> Trajectory:
    """Final-value problem solved through the symmetry (u1, u2, t) -> (u1, -u2, -t)."""
    if not t_start < final.time:
        raise ContractViolationError(f"t_start={t_start} must precede the final time {final.time}")
    return _integrate(final, t_start, cfg, Direction.BACKWARD)


def conservation_history(trajectory: Trajectory, p: float) -> list[dict]:
    e0 = energy(trajectory.initial, p)
    m0 = momentum(trajectory.initial)
    rows = []
    for state in trajectory.states:
        e, m = energy(state, p), momentum(state)
        rows.append({
            "t": state.time,
            "energy": e,
            "momentum": m,
            "energy_drift": abs(e - e0) / (abs(e0) if e0 != 0 else 1.0),
            "momentum_drift": abs(m - m0) / (1.0 + abs(m0)),
        })
    return rows


def peak_position(state: FieldState, newton_steps: int = 4) -> float:
    """Maximum of the trigonometric interpolant of u1 near the grid argmax."""
    grid = state.grid
    i = int(np.argmax(state.u1))
    left, mid, right = state.u1[i - 1], state.u1[i], state.u1[(i + 1) % grid.n_points]
    curvature = left - 2.0 * mid + right
    x = grid.x[i] + (0.5 * grid.spacing * (left - right) / curvature if curvature < 0 else 0.0)
    d1 = spectral_derivative(grid, state.u1, 1)
    d2 = spectral_derivative(grid, state.u1, 2)
    for _ in range(newton_steps):
        slope = fourier_interpolate(grid, d1, np.array([x]), outside="periodic")[0]
        bend = fourier_interpolate(grid, d2, np.array([x]), outside="periodic")[0]
        if bend >= 0:
            break
        x -= slope / bend
    return x


def track_peak_speed(trajectory: Trajectory) -> float:
    """Least-squares speed of the u1 maximum, unwrapped across the periodic box."""
    if len(trajectory.states) < 2:
        raise InsufficientDataError("peak tracking needs at least two checkpoints")
    period = 2.0 * trajectory.initial.grid.half_length
    positions = np.unwrap([peak_position(s) for s in trajectory.states], period=period)
    speed, _ = np.polyfit(trajectory.times, positions, 1)
    return float(speed)
