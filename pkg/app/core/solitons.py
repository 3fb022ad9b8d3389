"""
Closed-form ground states and traveling solitons of the good Boussinesq system.

Phi(x) = ((p+1) sech^2(p x))^(1/2p) solves -Phi'' + Phi - |Phi|^2p Phi = 0 and
Phi_w(x) = (1-w^2)^(1/2p) Phi(sqrt(1-w^2) x) solves the speed-w equation; the
traveling pair is (Phi_w(x - w t - x0), -w Phi_w(x - w t - x0)).
"""

import logging
import math
from enum import Enum
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import integrate

from .grid import FieldState, Grid, quadrature, spectral_derivative

logger = logging.getLogger(__name__)

OMEGA_STAR_FACTOR = 1.0 / 256.0


class Regime(str, Enum):
    SUBCRITICAL = "subcritical"
    SUPERCRITICAL = "supercritical"

    @classmethod
    def for_exponent(cls, p: float) -> "Regime":
        if p < 2:
            return cls.SUBCRITICAL
        if p > 2:
            return cls.SUPERCRITICAL
        raise ValueError("p = 2 is the critical exponent and belongs to neither regime")


class SolitonParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float = Field(gt=0)
    omega: float
    x0: float = 0.0

    @field_validator("omega")
    @classmethod
    def _subsonic(cls, omega: float) -> float:
        # the profile formulas degenerate at |omega| = 1
        if not abs(omega) < 1.0:
            raise ValueError(f"soliton speed must satisfy |omega| < 1 strictly, got {omega}")
        return omega

    @property
    def width(self) -> float:
        return soliton_width(self.p, self.omega)

    @property
    def decay_rate(self) -> float:
        """Rate a of the e^(-a|x|) tail of Phi_w."""
        return math.sqrt(1.0 - self.omega**2)


class SolitonFamily(BaseModel):
    model_config = ConfigDict(frozen=True)

    solitons: tuple[SolitonParams, ...]
    lambda0s: Optional[tuple[float, ...]] = None

    @field_validator("solitons")
    @classmethod
    def _ordered(cls, solitons):
        if len(solitons) < 1:
            raise ValueError("a soliton family needs at least one soliton")
        if len({s.p for s in solitons}) != 1:
            raise ValueError("all solitons of a family must share the exponent p")
        if solitons[0].p == 2:
            raise ValueError("p = 2 is the critical exponent; choose p < 2 or p > 2")
        speeds = [s.omega for s in solitons]
        if any(b <= a for a, b in zip(speeds, speeds[1:])):
            raise ValueError(f"soliton speeds must be pairwise distinct and increasing, got {speeds}")
        return tuple(solitons)

    @model_validator(mode="after")
    def _unstable_rates(self):
        if self.lambda0s is not None and len(self.lambda0s) != len(self.solitons):
            raise ValueError("lambda0s needs one unstable rate per soliton")
        return self

    @classmethod
    def build(cls, p: float, omegas: Sequence[float], positions: Sequence[float], lambda0s=None) -> "SolitonFamily":
        pairs = sorted(zip(omegas, positions))
        return cls(
            solitons=tuple(SolitonParams(p=p, omega=w, x0=x) for w, x in pairs),
            lambda0s=None if lambda0s is None else tuple(lambda0s),
        )

    @property
    def p(self) -> float:
        return self.solitons[0].p

    @property
    def size(self) -> int:
        return len(self.solitons)

    @property
    def regime(self) -> Regime:
        return Regime.for_exponent(self.p)

    @property
    def omegas(self) -> np.ndarray:
        return np.array([s.omega for s in self.solitons])

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.x0 for s in self.solitons])

    @property
    def omega_star(self) -> float:
        return omega_star(self.omegas, self.regime, self.lambda0s)

    def with_parameters(self, omegas: Sequence[float], positions: Sequence[float]) -> "SolitonFamily":
        return SolitonFamily(
            solitons=tuple(SolitonParams(p=self.p, omega=w, x0=x) for w, x in zip(omegas, positions)),
            lambda0s=self.lambda0s,
        )

    def grid(self, horizon: float = 0.0) -> Grid:
        return Grid.for_solitons(
            [s.width for s in self.solitons],
            self.omegas,
            self.positions,
            horizon=horizon,
            decay_rates=[s.decay_rate for s in self.solitons],
        )


def soliton_width(p: float, omega: float) -> float:
    """Unit width 1/(max(p,1) sqrt(1-w^2)) used by the resolution rule."""
    return 1.0 / (max(p, 1.0) * math.sqrt(1.0 - omega**2))


def omega_star(omegas: Sequence[float], regime: Regime, lambda0s: Optional[Sequence[float]] = None) -> float:
    omegas = list(omegas)
    candidates = [1.0 - w**2 for w in omegas]
    candidates += [abs(a - b) for i, a in enumerate(omegas) for b in omegas[i + 1:]]
    if regime == Regime.SUPERCRITICAL and lambda0s is not None:
        # the printed bound multiplies by w_j; a zero speed would kill omega_star
        candidates += [lam**1.5 * abs(w) for lam, w in zip(lambda0s, omegas) if w != 0]
    return OMEGA_STAR_FACTOR * min(candidates)


def odd_power(s: np.ndarray, p: float) -> np.ndarray:
    """|s|^2p s evaluated as sign(s)|s|^(2p+1), well defined for fractional p."""
    s = np.asarray(s, dtype=float)
    return np.sign(s) * np.abs(s) ** (2.0 * p + 1.0)


def ground_state(p: float, x: np.ndarray) -> np.ndarray:
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    z = p * np.asarray(x, dtype=float)
    # sech^(1/p) via exp(-|z|) to stay finite in the far tails
    sech = 2.0 * np.exp(-np.abs(z)) / (1.0 + np.exp(-2.0 * np.abs(z)))
    return (p + 1.0) ** (1.0 / (2.0 * p)) * sech ** (1.0 / p)


def ground_state_derivative(p: float, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -np.tanh(p * x) * ground_state(p, x)


def scaled_soliton(params: SolitonParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = math.sqrt(1.0 - params.omega**2)
    y = np.asarray(x, dtype=float) - params.x0
    phi = a ** (1.0 / params.p) * ground_state(params.p, a * y)
    return phi, -params.omega * phi


def profile_derivative(params: SolitonParams, x: np.ndarray) -> np.ndarray:
    a = math.sqrt(1.0 - params.omega**2)
    y = np.asarray(x, dtype=float) - params.x0
    return a ** (1.0 / params.p + 1.0) * ground_state_derivative(params.p, a * y)


def profile_speed_derivative(params: SolitonParams, x: np.ndarray) -> np.ndarray:
    """d/dw of Phi_w(x - x0), from the closed form."""
    p, omega = params.p, params.omega
    a = math.sqrt(1.0 - omega**2)
    y = np.asarray(x, dtype=float) - params.x0
    d_da = (1.0 / p) * a ** (1.0 / p - 1.0) * ground_state(p, a * y) + a ** (1.0 / p) * y * ground_state_derivative(p, a * y)
    return (-omega / a) * d_da


@lru_cache(maxsize=64)
def ground_state_mass(p: float) -> float:
    value, _ = integrate.quad(lambda z: ground_state(p, np.array([z]))[0] ** 2, -np.inf, np.inf, limit=200, epsabs=1e-14, epsrel=1e-13)
    return float(value)


def mass(p: float, omega: float) -> float:
    """||Phi_w||^2_L2 = (1-w^2)^(1/p - 1/2) ||Phi||^2_L2."""
    return (1.0 - omega**2) ** (1.0 / p - 0.5) * ground_state_mass(p)


def scalar_ground_eigenvalue(p: float, omega: float) -> float:
    """Ground level of -d_xx + (1-w^2) - (2p+1) Phi_w^2p (Poschl-Teller)."""
    return -p * (p + 2.0) * (1.0 - omega**2)


def soliton_state(params: SolitonParams, grid: Grid, t: float = 0.0) -> FieldState:
    moved = params.model_copy(update={"x0": params.x0 + params.omega * t})
    phi, psi = scaled_soliton(moved, grid.x)
    return FieldState(grid, phi, psi, t)


def soliton_sum(family: SolitonFamily, grid: Grid, t: float = 0.0) -> FieldState:
    u1 = np.zeros(grid.n_points)
    u2 = np.zeros(grid.n_points)
    for params in family.solitons:
        grid.require_resolution(params.width, f"soliton omega={params.omega}")
        single = soliton_state(params, grid, t)
        u1 += single.u1
        u2 += single.u2
    return FieldState(grid, u1, u2, t)


def elliptic_residual(params: SolitonParams, grid: Grid, scale: float = 1.0) -> float:
    """sup |-phi'' + (1-w^2) phi - |phi|^2p phi| on the grid.

    `scale` multiplies the profile before evaluation, to exercise non-solutions.
    """
    grid.require_resolution(params.width, f"soliton omega={params.omega}")
    phi = scale * scaled_soliton(params, grid.x)[0]
    residual = -spectral_derivative(grid, phi, 2) + (1.0 - params.omega**2) * phi - odd_power(phi, params.p)
    return float(np.max(np.abs(residual)))


def interaction_integrals(family: SolitonFamily, grid: Grid, t: float) -> float:
    """max over j != k of int (|R_k|+|R_k'|)(|R_j|+|R_j'|) dx for both components."""
    if family.size < 2:
        return 0.0
    envelopes = []
    for params in family.solitons:
        moved = params.model_copy(update={"x0": params.x0 + params.omega * t})
        phi = scaled_soliton(moved, grid.x)[0]
        dphi = profile_derivative(moved, grid.x)
        envelopes.append(np.abs(phi) + np.abs(dphi))
    worst = 0.0
    for j in range(family.size):
        for k in range(family.size):
            if j != k:
                worst = max(worst, quadrature(grid, envelopes[j] * envelopes[k]))
    return worst
