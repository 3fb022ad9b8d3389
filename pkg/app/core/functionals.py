"""
Conserved and localized quantities of the good Boussinesq flow.

The localized quantities weight the densities with a moving partition of unity
phi_j built from one smooth transition profile psi. Solitons are indexed by
increasing speed, so phi_1 covers the slowest (leftmost) soliton at large t.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from ..exceptions import ContractViolationError, DomainError
from .grid import FieldState, Grid, h_norm, quadrature, spectral_derivative
from .solitons import SolitonFamily, soliton_sum

logger = logging.getLogger(__name__)

TRANSITION_NODES = 801


def _bump(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _transition_table() -> PchipInterpolator:
    """Monotone interpolant of the normalized bump integral on [-1, 1]."""
    nodes = np.linspace(-1.0, 1.0, TRANSITION_NODES)
    pieces = [integrate.quad(lambda r: _bump(np.array([r]))[0], a, b)[0] for a, b in zip(nodes, nodes[1:])]
    cumulative = np.concatenate([[0.0], np.cumsum(pieces)])
    return PchipInterpolator(nodes, cumulative / cumulative[-1])


def transition(s: np.ndarray) -> np.ndarray:
    """psi(s): 0 for s <= -1, 1 for s >= 1, C-infinity and monotone in between."""
    s = np.asarray(s, dtype=float)
    inner = np.clip(_transition_table()(np.clip(s, -1.0, 1.0)), 0.0, 1.0)
    return np.where(s <= -1.0, 0.0, np.where(s >= 1.0, 1.0, inner))


@dataclass(frozen=True)
class CutoffSystem:
    """psi_j(x, t) = psi((x - m_j t)/sqrt t) with psi_1 = 1, phi_j = psi_j - psi_(j+1)."""

    midspeeds: tuple[float, ...]

    @classmethod
    def for_speeds(cls, speeds: Sequence[float]) -> "CutoffSystem":
        speeds = list(speeds)
        if any(b <= a for a, b in zip(speeds, speeds[1:])):
            raise ContractViolationError(f"cutoff speeds must be increasing, got {speeds}")
        return cls(tuple(0.5 * (a + b) for a, b in zip(speeds, speeds[1:])))

    @classmethod
    def for_family(cls, family: SolitonFamily) -> "CutoffSystem":
        return cls.for_speeds(family.omegas)

    @property
    def size(self) -> int:
        return len(self.midspeeds) + 1

    @staticmethod
    def _require_time(t: float):
        if not t > 0:
            raise DomainError(f"cutoffs are defined for t > 0 only, got t={t}")

    def psi(self, j: int, x: np.ndarray, t: float) -> np.ndarray:
        """psi_j for j = 0..N-1 (0-based; psi_0 is identically one)."""
        self._require_time(t)
        x = np.asarray(x, dtype=float)
        if j == 0:
            return np.ones_like(x)
        return transition((x - self.midspeeds[j - 1] * t) / math.sqrt(t))

    def partition(self, x: np.ndarray, t: float) -> np.ndarray:
        """Rows phi_0..phi_(N-1); the rows telescope to one."""
        psis = [self.psi(j, x, t) for j in range(self.size)]
        psis.append(np.zeros_like(psis[0]))
        return np.array([psis[j] - psis[j + 1] for j in range(self.size)])

    def bands(self, t: float) -> list[tuple[float, float]]:
        """Support band of each phi_j, infinite at the outer ends."""
        self._require_time(t)
        root = math.sqrt(t)
        edges = [m * t for m in self.midspeeds]
        lows = [-math.inf] + [e - root for e in edges]
        highs = [e + root for e in edges] + [math.inf]
        return list(zip(lows, highs))


def cutoff_support_check(cutoffs: CutoffSystem, grid: Grid, t: float, tol: float = 0.0) -> bool:
    phis = cutoffs.partition(grid.x, t)
    ok = bool(np.all(phis >= -1e-15) and np.all(phis <= 1.0 + 1e-15))
    for j, (low, high) in enumerate(cutoffs.bands(t)):
        outside = (grid.x < low) | (grid.x > high)
        if np.any(np.abs(phis[j][outside]) > tol):
            logger.warning(f"phi_{j + 1} leaks outside [{low:.3f}, {high:.3f}] at t={t}")
            ok = False
    return ok


def energy_density(state: FieldState, p: float) -> np.ndarray:
    du1 = spectral_derivative(state.grid, state.u1, 1)
    potential = np.abs(state.u1) ** (2.0 * p + 2.0) / (p + 1.0)
    return 0.5 * (state.u1**2 + state.u2**2 + du1**2 - potential)


def energy(state: FieldState, p: float) -> float:
    return quadrature(state.grid, energy_density(state, p))


def momentum(state: FieldState) -> float:
    return quadrature(state.grid, 0.5 * state.u1 * state.u2)


def action(state: FieldState, omega: float, p: float) -> float:
    return energy(state, p) + omega * momentum(state)


@dataclass
class FunctionalReport:
    time: float
    energy: float
    momentum: float
    localized_momenta: np.ndarray = field(repr=False)
    localized_energies: np.ndarray = field(repr=False)
    actions: np.ndarray = field(repr=False)
    total_action: float

    @property
    def partition_defect(self) -> float:
        return abs(float(np.sum(self.localized_momenta)) - self.momentum)

    def as_row(self) -> dict:
        row = {"t": self.time, "energy": self.energy, "momentum": self.momentum}
        for j, value in enumerate(self.localized_momenta, start=1):
            row[f"M_{j}"] = float(value)
        for j, value in enumerate(self.localized_energies, start=1):
            row[f"E_{j}"] = float(value)
        for j, value in enumerate(self.actions, start=1):
            row[f"S_{j}"] = float(value)
        row["S_total"] = self.total_action
        return row


def localized_functionals(
    state: FieldState,
    family: SolitonFamily,
    cutoffs: CutoffSystem,
    p: float,
    speeds: Optional[Sequence[float]] = None,
) -> FunctionalReport:
    """Localized momenta, energies and actions S_j = E_j + w_j M_j at state.time.

    `speeds` weights the actions; it defaults to the nominal family speeds and
    may be replaced by modulated ones.
    """
    t = state.time
    if not t > 0:
        raise DomainError(f"localized functionals need t > 0, got t={t}")
    if cutoffs.size != family.size:
        raise ContractViolationError(f"{cutoffs.size} cutoffs for a family of {family.size} solitons")
    weights = np.asarray(family.omegas if speeds is None else speeds, dtype=float)
    phis = cutoffs.partition(state.grid.x, t)
    e_density = energy_density(state, p)
    m_density = 0.5 * state.u1 * state.u2
    momenta = np.array([quadrature(state.grid, m_density * phi) for phi in phis])
    energies = np.array([quadrature(state.grid, e_density * phi) for phi in phis])
    actions = energies + weights * momenta
    return FunctionalReport(
        time=t,
        energy=quadrature(state.grid, e_density),
        momentum=quadrature(state.grid, m_density),
        localized_momenta=momenta,
        localized_energies=energies,
        actions=actions,
        total_action=float(np.sum(actions)),
    )


def h_distance_to_sum(state: FieldState, family: SolitonFamily) -> float:
    return h_norm(state - soliton_sum(family, state.grid, state.time))


def quadratic_form(eps: FieldState, family: SolitonFamily, cutoffs: Optional[CutoffSystem] = None) -> float:
    """Sum over j of 1/2 int (eps1x^2 + eps1^2 - (2p+1)|R1|^2p eps1^2 + eps2^2 + 2 w_j eps1 eps2) phi_j."""
    grid, t, p = eps.grid, eps.time, family.p
    cutoffs = cutoffs or CutoffSystem.for_family(family)
    phis = cutoffs.partition(grid.x, t) if family.size > 1 else np.ones((1, grid.n_points))
    r1 = soliton_sum(family, grid, t).u1
    de1 = spectral_derivative(grid, eps.u1, 1)
    common = de1**2 + eps.u1**2 - (2.0 * p + 1.0) * np.abs(r1) ** (2.0 * p) * eps.u1**2 + eps.u2**2
    total = 0.0
    for omega, phi in zip(family.omegas, phis):
        total += 0.5 * quadrature(grid, (common + 2.0 * omega * eps.u1 * eps.u2) * phi)
    return total
