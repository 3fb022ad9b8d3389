"""
Modulation of states near a soliton sum.

A state u near sum_j R_j is written u = R~ + eps with modulated waves
R~_j = (Phi_w~j, -w~j Phi_w~j)(x - w_j t - x~_j). The parameters are fixed by
orthogonality conditions on eps, solved with a damped Newton iteration whose
Jacobian comes from the closed-form profile derivatives.

subcritical:   (eps1, R~_j^(1)) = (eps1, d_x R~_j^(1)) = 0, unknowns (w~_j, x~_j)
supercritical: (eps, d_x R~_j) = 0 in L2 x L2, speeds pinned, unknowns x~_j
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..exceptions import (
    ContractViolationError,
    ModulationConvergenceError,
    ModulationError,
    OutOfBasinError,
)
from .functionals import h_distance_to_sum
from .grid import FieldState, Grid, h_norm, inner_product, pair_inner_product, spectral_derivative
from .solitons import (
    Regime,
    SolitonFamily,
    SolitonParams,
    profile_derivative,
    profile_speed_derivative,
    scaled_soliton,
    soliton_state,
)

logger = logging.getLogger(__name__)

BASIN_FRACTION = 0.1
MAX_NEWTON_ITERATIONS = 50
MAX_HALVINGS = 30
RESIDUAL_TOLERANCE = 1e-13
ACCEPTABLE_RESIDUAL = 1e-10
DEGENERATE_SPEED = 1e-6


@dataclass
class ModulationDecomposition:
    mode: Regime
    time: float
    tilde_omegas: np.ndarray
    tilde_positions: np.ndarray
    epsilon: FieldState = field(repr=False)
    ortho_residuals: np.ndarray
    newton_iterations: int
    diagnostics: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.ortho_residuals))) if self.ortho_residuals.size else 0.0

    @property
    def epsilon_norm(self) -> float:
        return h_norm(self.epsilon)

    def as_row(self, gammas: Optional[np.ndarray] = None) -> dict:
        row = {"t": self.time}
        for j, w in enumerate(self.tilde_omegas, start=1):
            row[f"omega_{j}"] = float(w)
        for j, x in enumerate(self.tilde_positions, start=1):
            row[f"x_{j}"] = float(x)
        row["eps_h"] = self.epsilon_norm
        row["max_ortho_residual"] = self.max_residual
        if gammas is not None:
            n = len(gammas) // 2
            for j in range(n):
                row[f"gamma_plus_{j + 1}"] = float(gammas[j])
                row[f"gamma_minus_{j + 1}"] = float(gammas[n + j])
        return row


def modulation_radius(family: SolitonFamily, grid: Grid) -> float:
    """0.1 * min_j ||(Phi_wj, -w_j Phi_wj)||_H."""
    norms = [h_norm(soliton_state(s.model_copy(update={"x0": 0.0}), grid)) for s in family.solitons]
    return BASIN_FRACTION * min(norms)


class _Waves:
    """Modulated waves and their parameter derivatives on one grid."""

    def __init__(self, grid: Grid, p: float, omegas: np.ndarray, centers: np.ndarray):
        self.grid = grid
        self.phi, self.dphi, self.dphi_dw, self.d2phi, self.dphi_dw_dx = [], [], [], [], []
        for omega, center in zip(omegas, centers):
            params = SolitonParams(p=p, omega=float(omega), x0=float(center))
            phi = scaled_soliton(params, grid.x)[0]
            dw = profile_speed_derivative(params, grid.x)
            self.phi.append(phi)
            self.dphi.append(profile_derivative(params, grid.x))
            self.dphi_dw.append(dw)
            self.d2phi.append(spectral_derivative(grid, phi, 2))
            self.dphi_dw_dx.append(spectral_derivative(grid, dw, 1))
        self.omegas = np.asarray(omegas, dtype=float)

    def total(self) -> tuple[np.ndarray, np.ndarray]:
        u1 = np.sum(self.phi, axis=0)
        u2 = -np.sum([w * phi for w, phi in zip(self.omegas, self.phi)], axis=0)
        return u1, u2


class Modulator:
    """Newton solve of the orthogonality conditions for one state."""

    def __init__(self, state: FieldState, family: SolitonFamily, mode: Regime):
        self.state = state
        self.family = family
        self.mode = mode
        self.p = family.p
        self.drift = family.omegas * state.time
        if mode == Regime.SUBCRITICAL and np.any(np.abs(family.omegas) < DEGENERATE_SPEED):
            raise ModulationError(
                "speed modulation is degenerate at w = 0 (d_w ||Phi_w||^2 vanishes); "
                "use the supercritical (position-only) conditions for standing solitons"
            )

    def unpack(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.family.size
        if self.mode == Regime.SUBCRITICAL:
            return params[:n], params[n:]
        return self.family.omegas, params

    def initial_guess(self) -> np.ndarray:
        if self.mode == Regime.SUBCRITICAL:
            return np.concatenate([self.family.omegas, self.family.positions])
        return self.family.positions.astype(float)

    def waves(self, params: np.ndarray) -> _Waves:
        omegas, positions = self.unpack(params)
        if np.any(np.abs(omegas) >= 1.0):
            raise ModulationError(f"modulated speeds left (-1, 1): {omegas}")
        return _Waves(self.state.grid, self.p, omegas, self.drift + positions)

    def epsilon(self, waves: _Waves) -> FieldState:
        r1, r2 = waves.total()
        return FieldState(self.state.grid, self.state.u1 - r1, self.state.u2 - r2, self.state.time)

    def residual(self, waves: _Waves, eps: FieldState) -> np.ndarray:
        grid = self.state.grid
        if self.mode == Regime.SUBCRITICAL:
            values = [inner_product(grid, eps.u1, phi) for phi in waves.phi]
            values += [inner_product(grid, eps.u1, dphi) for dphi in waves.dphi]
            return np.array(values)
        return np.array([
            inner_product(grid, eps.u1, dphi) - w * inner_product(grid, eps.u2, dphi)
            for w, dphi in zip(waves.omegas, waves.dphi)
        ])

    def diagnostics(self, waves: _Waves, eps: FieldState) -> np.ndarray:
        """The inner products not imposed as conditions."""
        grid = self.state.grid
        values = []
        for w, phi, dphi in zip(waves.omegas, waves.phi, waves.dphi):
            values += [-w * inner_product(grid, eps.u2, phi), -w * inner_product(grid, eps.u2, dphi)]
            if self.mode == Regime.SUPERCRITICAL:
                values += [inner_product(grid, eps.u1, phi), inner_product(grid, eps.u1, dphi)]
        return np.array(values)

    def jacobian(self, waves: _Waves, eps: FieldState) -> np.ndarray:
        grid = self.state.grid
        n = self.family.size
        ip = lambda f, g: inner_product(grid, f, g)  # noqa: E731
        if self.mode == Regime.SUBCRITICAL:
            jac = np.zeros((2 * n, 2 * n))
            for j in range(n):
                for k in range(n):
                    # d eps1 / d w~_k = -d_w Phi_k, d eps1 / d x~_k = +d_x Phi_k
                    jac[j, k] = -ip(waves.dphi_dw[k], waves.phi[j])
                    jac[j, n + k] = ip(waves.dphi[k], waves.phi[j])
                    jac[n + j, k] = -ip(waves.dphi_dw[k], waves.dphi[j])
                    jac[n + j, n + k] = ip(waves.dphi[k], waves.dphi[j])
                jac[j, j] += ip(eps.u1, waves.dphi_dw[j])
                jac[j, n + j] -= ip(eps.u1, waves.dphi[j])
                jac[n + j, j] += ip(eps.u1, waves.dphi_dw_dx[j])
                jac[n + j, n + j] -= ip(eps.u1, waves.d2phi[j])
            return jac
        jac = np.zeros((n, n))
        for j in range(n):
            wj = waves.omegas[j]
            for k in range(n):
                wk = waves.omegas[k]
                jac[j, k] = (1.0 + wj * wk) * ip(waves.dphi[k], waves.dphi[j])
            jac[j, j] -= ip(eps.u1, waves.d2phi[j]) - wj * ip(eps.u2, waves.d2phi[j])
        return jac

    def solve(self, start: Optional[np.ndarray] = None) -> ModulationDecomposition:
        params = self.initial_guess() if start is None else np.asarray(start, dtype=float)
        scale = max(1.0, h_norm(self.state))
        tolerance = RESIDUAL_TOLERANCE * scale
        waves = self.waves(params)
        eps = self.epsilon(waves)
        residual = self.residual(waves, eps)
        iterations = 0
        while np.max(np.abs(residual)) > tolerance:
            if iterations >= MAX_NEWTON_ITERATIONS:
                raise ModulationConvergenceError(iterations, float(np.max(np.abs(residual))))
            direction = np.linalg.solve(self.jacobian(waves, eps), -residual)
            damping = 1.0
            current = np.linalg.norm(residual)
            for _ in range(MAX_HALVINGS):
                trial = params + damping * direction
                try:
                    trial_waves = self.waves(trial)
                except ModulationError:
                    damping *= 0.5
                    continue
                trial_eps = self.epsilon(trial_waves)
                trial_residual = self.residual(trial_waves, trial_eps)
                if np.linalg.norm(trial_residual) <= current:
                    break
                damping *= 0.5
            else:
                if np.max(np.abs(residual)) <= ACCEPTABLE_RESIDUAL * scale:
                    break
                raise ModulationConvergenceError(iterations, float(np.max(np.abs(residual))))
            params, waves, eps, residual = trial, trial_waves, trial_eps, trial_residual
            iterations += 1
            logger.debug(f"newton iteration {iterations}: |F|={np.max(np.abs(residual)):.3e} damping={damping}")
            if np.max(np.abs(damping * direction)) < 1e-13 * max(1.0, np.max(np.abs(params))):
                break
        omegas, positions = self.unpack(params)
        return ModulationDecomposition(
            mode=self.mode,
            time=self.state.time,
            tilde_omegas=np.array(omegas, dtype=float),
            tilde_positions=np.array(positions, dtype=float),
            epsilon=eps,
            ortho_residuals=residual,
            newton_iterations=iterations,
            diagnostics=self.diagnostics(waves, eps),
        )


def modulate(
    state: FieldState,
    family: SolitonFamily,
    mode: Optional[Regime] = None,
    start: Optional[np.ndarray] = None,
) -> ModulationDecomposition:
    """Decomposes state = R~ + eps; raises OutOfBasinError beyond the modulation radius."""
    mode = Regime(mode) if mode is not None else family.regime
    distance = h_distance_to_sum(state, family)
    radius = modulation_radius(family, state.grid)
    if distance > radius:
        raise OutOfBasinError(distance, radius, state.time)
    decomposition = Modulator(state, family, mode).solve(start)
    logger.debug(
        f"Modulated t={state.time:.4g}: {decomposition.newton_iterations} iterations, "
        f"|F|={decomposition.max_residual:.2e}"
    )
    return decomposition


def lipschitz_ratio(state: FieldState, family: SolitonFamily, alpha: float, mode: Optional[Regime] = None) -> float:
    """(||eps||_H + sum_j |w~_j - w_j| + |x~_j - x_j|) / alpha."""
    if not alpha > 0:
        raise ContractViolationError(f"alpha must be positive, got {alpha}")
    decomposition = modulate(state, family, mode)
    shift = np.sum(np.abs(decomposition.tilde_omegas - family.omegas))
    shift += np.sum(np.abs(decomposition.tilde_positions - family.positions))
    return float((decomposition.epsilon_norm + shift) / alpha)


@dataclass
class DriftReport:
    rows: list[dict]
    gaps: list[float]

    @property
    def max_ratio(self) -> float:
        ratios = [r["ratio"] for r in self.rows]
        return max(ratios) if ratios else math.nan

    @property
    def bounded(self) -> bool:
        return bool(self.rows) and math.isfinite(self.max_ratio)


def parameter_drift_bound_check(
    states: Sequence[FieldState],
    family: SolitonFamily,
    mode: Optional[Regime] = None,
    max_workers: int = 1,
) -> DriftReport:
    """Differenced parameter drift over ||eps||_H + exp(-3 w*^(3/2) t) per checkpoint interval."""
    ordered = sorted(states, key=lambda s: s.time)
    rate = 3.0 * family.omega_star**1.5

    def decompose(state: FieldState) -> Optional[ModulationDecomposition]:
        try:
            return modulate(state, family, mode)
        except ModulationError as e:
            logger.warning(f"Checkpoint t={state.time:.4g} skipped: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        decompositions = list(pool.map(decompose, ordered))
    gaps = [s.time for s, d in zip(ordered, decompositions) if d is None]
    rows = []
    for left, right in zip(decompositions, decompositions[1:]):
        if left is None or right is None or right.time == left.time:
            continue
        dt = right.time - left.time
        drift = (
            np.sum(np.abs(right.tilde_omegas - left.tilde_omegas))
            + np.sum(np.abs(right.tilde_positions - left.tilde_positions))
        ) / dt
        bound = max(left.epsilon_norm, right.epsilon_norm) + math.exp(-rate * left.time)
        rows.append({
            "t_left": left.time,
            "t_right": right.time,
            "drift": float(drift),
            "eps_h": max(left.epsilon_norm, right.epsilon_norm),
            "bound": bound,
            "ratio": float(drift / bound),
        })
    return DriftReport(rows, gaps)


def unstable_projections(decomposition: ModulationDecomposition, modes: Sequence) -> np.ndarray:
    """gamma_j^+- = (eps, Z~_j^+-) in L2 x L2; returns (gamma+_1..gamma+_N, gamma-_1..gamma-_N).

    Z~_j is the mode translated to w_j t + x~_j on the evolution grid.
    """
    if decomposition.mode != Regime.SUPERCRITICAL:
        raise ContractViolationError("unstable projections need a supercritical decomposition")
    if len(modes) != len(decomposition.tilde_positions):
        raise ContractViolationError(
            f"{len(modes)} mode sets for {len(decomposition.tilde_positions)} solitons"
        )
    eps = decomposition.epsilon
    plus, minus = [], []
    for mode_set, omega, position in zip(modes, decomposition.tilde_omegas, decomposition.tilde_positions):
        placed = mode_set.placed(eps.grid, omega * eps.time + position)
        plus.append(pair_inner_product(eps, placed.z_plus))
        minus.append(pair_inner_product(eps, placed.z_minus))
    return np.array(plus + minus)
