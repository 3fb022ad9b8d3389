"""
Backward construction of approximate multi-solitons.

For each final time T^n the final data is the soliton sum at T^n (plus, in
the supercritical regime, a correction along the decaying modes Y-_j) and the
system is integrated backward to t0. Convergence is judged by the H-distance
to the exact sum and by the Cauchy differences u^(n+1)(t0) - u^n(t0).

In the supercritical regime gamma+_j = (eps, Z+_j) grows backward at rate
lambda0_j; the correction coefficients are chosen by least-squares shooting so
that gamma+ stays small on [t0, T^n].
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize

from ..exceptions import (
    ConstructionFailedError,
    ContractViolationError,
    InsufficientDataError,
    ModulationError,
    NumericalBlowupError,
)
from .evolution import Direction, EvolveConfig, Trajectory, evolve_backward_from_final
from .functionals import h_distance_to_sum
from .grid import FieldState, Grid, h_norm, pair_inner_product, quadrature
from .modulation import modulate, unstable_projections
from .solitons import Regime, SolitonFamily, SolitonParams, soliton_state, soliton_sum
from .spectrum import PegoWeinsteinModes, modes_for

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 4
BLOWUP_PENALTY = 1e3
# interaction below this leaves only integrator error in a Cauchy difference
CAUCHY_RESOLUTION_FLOOR = 1e-10
CAUCHY_COLUMNS = ["index", "T_left", "T_right", "cauchy_h", "interaction", "resolved"]


class ShootConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_evaluations: int = Field(default=40, ge=2)
    target: float = Field(default=1.0, gt=0)
    diff_step: float = Field(default=1e-4, gt=0)
    seed_amplitude: float = Field(default=0.0, ge=0)
    seed: int = 0


@dataclass
class ConstructionRun:
    family: SolitonFamily
    t0: float
    final_times: list[float]
    grid: Grid
    trajectories: dict[float, Trajectory] = field(default_factory=dict, repr=False)
    error_series: dict[float, list[tuple[float, float]]] = field(default_factory=dict, repr=False)
    diagnostics: dict[float, list[dict]] = field(default_factory=dict, repr=False)
    cauchy_series: list[float] = field(default_factory=list)
    cauchy_pairs: list[tuple[float, float]] = field(default_factory=list)
    interaction_defects: dict[float, float] = field(default_factory=dict)
    alphas: dict[float, np.ndarray] = field(default_factory=dict)
    targets: dict[float, np.ndarray] = field(default_factory=dict)
    alpha_bounded: dict[float, bool] = field(default_factory=dict)
    objectives: dict[float, float] = field(default_factory=dict)
    failures: dict[float, str] = field(default_factory=dict)

    @property
    def completed(self) -> list[float]:
        return [T for T in self.final_times if T in self.trajectories]

    def bound_violations(self) -> list[tuple[float, float, float]]:
        """Checkpoints where ||u^n(t) - R(t)||_H exceeds exp(-w*^(3/2) t)."""
        rate = self.family.omega_star**1.5
        return [
            (T, t, err)
            for T, series in self.error_series.items()
            for t, err in series
            if err > math.exp(-rate * t)
        ]

    def cauchy_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.cauchy_series, self.cauchy_series[1:]))

    def cauchy_resolved(self) -> list[bool]:
        """Per pair: the interaction at T_left is large enough to show through integrator error."""
        return [self.interaction_defects.get(a, 0.0) > CAUCHY_RESOLUTION_FLOOR for a, _ in self.cauchy_pairs]

    def cauchy_rows(self) -> list[dict]:
        return [
            {"index": i, "T_left": a, "T_right": b, "cauchy_h": c,
             "interaction": self.interaction_defects.get(a, math.nan), "resolved": resolved}
            for i, ((a, b), c, resolved) in enumerate(
                zip(self.cauchy_pairs, self.cauchy_series, self.cauchy_resolved()), start=1
            )
        ]

    def error_rows(self) -> list[dict]:
        return [
            {"T": T, "t": t, "error_h": err, "bound": math.exp(-self.family.omega_star**1.5 * t)}
            for T in self.final_times
            for t, err in sorted(self.error_series.get(T, []))
        ]


def _check_schedule(family: SolitonFamily, t0: float, final_times: Sequence[float], regime: Regime):
    if family.regime != regime:
        raise ContractViolationError(f"{regime.value} construction called for a {family.regime.value} family")
    times = list(final_times)
    if not times or any(b <= a for a, b in zip(times, times[1:])):
        raise ContractViolationError(f"final times must be nonempty and strictly increasing, got {times}")
    if not t0 < times[0]:
        raise ContractViolationError(f"t0={t0} must precede the first final time {times[0]}")


def _backward_config(cfg: EvolveConfig, t0: float) -> EvolveConfig:
    return cfg.model_copy(update={"t_end": t0, "direction": Direction.BACKWARD})


def interaction_defect(family: SolitonFamily, grid: Grid, t: float) -> float:
    """L2 norm of |R|^2p R - sum_j |R_j|^2p R_j, the part of the flow the sum misses."""
    def forcing(u: np.ndarray) -> np.ndarray:
        return np.abs(u) ** (2.0 * family.p) * u

    total = soliton_sum(family, grid, t).u1
    singles = sum(forcing(soliton_state(s, grid, t).u1) for s in family.solitons)
    return math.sqrt(quadrature(grid, (forcing(total) - singles) ** 2))


def _cauchy(run: ConstructionRun):
    """Differences at t0 between runs from consecutive final times; a failed T^n breaks both its pairs."""
    run.cauchy_pairs, run.cauchy_series = [], []
    for a, b in zip(run.final_times, run.final_times[1:]):
        missing = [T for T in (a, b) if T not in run.trajectories]
        if missing:
            logger.warning(f"Cauchy pair T^n={a:g}, {b:g} skipped: no trajectory from {missing}")
            continue
        if a not in run.interaction_defects:
            run.interaction_defects[a] = interaction_defect(run.family, run.grid, a)
        run.cauchy_pairs.append((a, b))
        run.cauchy_series.append(h_norm(run.trajectories[b].final - run.trajectories[a].final))
    unresolved = [a for (a, _), ok in zip(run.cauchy_pairs, run.cauchy_resolved()) if not ok]
    if unresolved:
        logger.info(
            f"Cauchy pairs from T^n={unresolved} are at integrator-error level: "
            f"interaction below {CAUCHY_RESOLUTION_FLOOR:g}"
        )


def _modulation_row(state: FieldState, family: SolitonFamily) -> Optional[dict]:
    try:
        return modulate(state, family).as_row()
    except ModulationError as e:
        logger.debug(f"No modulation at t={state.time:.4g}: {e}")
        return None


def build_subcritical(
    family: SolitonFamily,
    t0: float,
    final_times: Sequence[float],
    cfg: EvolveConfig,
    max_workers: int = 1,
    modulation_stride: int = 1,
) -> ConstructionRun:
    """u^n(T^n) = R(T^n), evolved backward to t0 for every T^n."""
    _check_schedule(family, t0, final_times, Regime.SUBCRITICAL)
    grid = family.grid(horizon=max(final_times))
    run = ConstructionRun(family, t0, list(final_times), grid)
    backward = _backward_config(cfg, t0)

    def construct(final_time: float):
        final = soliton_sum(family, grid, final_time)
        try:
            trajectory = evolve_backward_from_final(final, t0, backward)
        except NumericalBlowupError as e:
            return final_time, None, str(e)
        return final_time, trajectory, None

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        results = list(pool.map(construct, run.final_times))
    for final_time, trajectory, failure in results:
        if failure is not None:
            logger.error(f"T^n={final_time}: backward evolution failed: {failure}")
            run.failures[final_time] = failure
            continue
        run.trajectories[final_time] = trajectory
        run.error_series[final_time] = [(s.time, h_distance_to_sum(s, family)) for s in trajectory.states]
        rows = [_modulation_row(s, family) for s in trajectory.states[::max(1, modulation_stride)]]
        run.diagnostics[final_time] = [r for r in rows if r is not None]
        worst = max(err for _, err in run.error_series[final_time])
        logger.info(f"T^n={final_time}: reached t0={t0}, max ||u-R||_H={worst:.3e}")
    _cauchy(run)
    if run.cauchy_series:
        logger.info(f"Cauchy differences at t0: {', '.join(f'{c:.3e}' for c in run.cauchy_series)}")
    return run


def _placed_modes(modes: Sequence[PegoWeinsteinModes], family: SolitonFamily, grid: Grid, t: float, positions=None):
    positions = family.positions if positions is None else positions
    return [m.placed(grid, w * t + x) for m, w, x in zip(modes, family.omegas, positions)]


def final_data_gram(
    modes: Sequence[PegoWeinsteinModes],
    family: SolitonFamily,
    grid: Grid,
    final_time: float,
    positions: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """G[k, l] = (Y~-_l, Z~+_k) at the final time; alpha = G^-1 a."""
    placed = _placed_modes(modes, family, grid, final_time, positions)
    return np.array([[pair_inner_product(pl.y_minus, pk.z_plus) for pl in placed] for pk in placed])


def _family_modes(family: SolitonFamily) -> list[PegoWeinsteinModes]:
    modes = [modes_for(family.p, float(w)) for w in family.omegas]
    missing = [float(w) for w, m in zip(family.omegas, modes) if m is None]
    if missing:
        raise ContractViolationError(f"no unstable mode for p={family.p} at speeds {missing}")
    return modes


def _smooth_seed(grid: Grid, family: SolitonFamily, t: float, amplitude: float, seed: int) -> FieldState:
    """Random low-mode perturbation localized on the solitons, of H-norm `amplitude`."""
    if amplitude == 0:
        return FieldState.zeros(grid, t)
    rng = np.random.default_rng(seed)
    envelope = sum(
        soliton_state(SolitonParams(p=family.p, omega=s.omega, x0=s.x0), grid, t).u1 for s in family.solitons
    )
    u1 = envelope * np.polynomial.polynomial.polyval(grid.x - grid.x.mean(), rng.normal(size=3) * [1, 0.1, 0.01])
    u2 = envelope * rng.normal()
    seed_state = FieldState(grid, u1, u2, t)
    return (amplitude / h_norm(seed_state)) * seed_state


def _gammas(state: FieldState, family: SolitonFamily, modes: Sequence[PegoWeinsteinModes]) -> np.ndarray:
    """gamma+ then gamma-, from the modulated residual when the state is in the basin."""
    try:
        return unstable_projections(modulate(state, family, Regime.SUPERCRITICAL), modes)
    except ModulationError:
        eps = state - soliton_sum(family, state.grid, state.time)
        placed = _placed_modes(modes, family, state.grid, state.time)
        return np.array(
            [pair_inner_product(eps, pl.z_plus) for pl in placed]
            + [pair_inner_product(eps, pl.z_minus) for pl in placed]
        )


@dataclass
class _Shot:
    trajectory: Optional[Trajectory]
    gammas: list[tuple[float, np.ndarray]]
    objective: float
    residual: np.ndarray


class _Shooter:
    def __init__(self, family, modes, grid, final_time, t0, cfg, shoot_cfg):
        self.family = family
        self.modes = modes
        self.grid = grid
        self.final_time = final_time
        self.cfg = cfg
        self.t0 = t0
        self.weight_rate = 2.0 * family.omega_star**1.5
        self.base = soliton_sum(family, grid, final_time) + _smooth_seed(
            grid, family, final_time, shoot_cfg.seed_amplitude, shoot_cfg.seed
        )
        placed = _placed_modes(modes, family, grid, final_time)
        self.directions = [pl.y_minus for pl in placed]
        self.gram = final_data_gram(modes, family, grid, final_time)
        self.evaluations = 0

    def alpha(self, target: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.gram, target)

    def final_data(self, target: np.ndarray) -> FieldState:
        state = self.base
        for coefficient, direction in zip(self.alpha(target), self.directions):
            state = state + coefficient * direction
        return state

    def shoot(self, target: np.ndarray) -> _Shot:
        self.evaluations += 1
        n = self.family.size
        try:
            trajectory = evolve_backward_from_final(self.final_data(target), self.t0, self.cfg)
        except NumericalBlowupError as e:
            logger.warning(f"Shot {self.evaluations} blew up at t={e.time:.4g}")
            return _Shot(None, [], math.inf, np.full(n, BLOWUP_PENALTY))
        gammas = [(s.time, _gammas(s, self.family, self.modes)) for s in trajectory.states]
        weighted = np.array([g[:n] * math.exp(self.weight_rate * t) for t, g in gammas])
        objective = float(np.max(np.linalg.norm(weighted, axis=1)))
        logger.debug(f"shot {self.evaluations}: a={target}, objective={objective:.3e}")
        # worst weighted gamma+_j over the checkpoints, one entry per soliton
        return _Shot(trajectory, gammas, objective, weighted[np.argmax(np.abs(weighted), axis=0), np.arange(n)])


def build_supercritical(
    family: SolitonFamily,
    t0: float,
    final_times: Sequence[float],
    cfg: EvolveConfig,
    shoot_cfg: Optional[ShootConfig] = None,
    max_workers: int = 1,
    strict: bool = True,
) -> ConstructionRun:
    """u^n(T^n) = R(T^n) + sum_j alpha_j Y~-_j with alpha = G^-1 a, a found by shooting."""
    _check_schedule(family, t0, final_times, Regime.SUPERCRITICAL)
    shoot_cfg = shoot_cfg or ShootConfig()
    modes = _family_modes(family)
    if family.lambda0s is None:
        family = family.model_copy(update={"lambda0s": tuple(m.lambda0 for m in modes)})
    grid = family.grid(horizon=max(final_times))
    run = ConstructionRun(family, t0, list(final_times), grid)
    backward = _backward_config(cfg, t0)

    def construct(final_time: float):
        shooter = _Shooter(family, modes, grid, final_time, t0, backward, shoot_cfg)
        best: dict = {}

        def residual(target):
            shot = shooter.shoot(np.asarray(target))
            if not best or shot.objective < best["shot"].objective:
                best.update(shot=shot, target=np.array(target))
            return shot.residual

        initial = np.zeros(family.size)
        residual(initial)
        if best["shot"].objective >= shoot_cfg.target:
            result = optimize.least_squares(
                residual, initial, diff_step=shoot_cfg.diff_step, max_nfev=shoot_cfg.max_evaluations, method="trf"
            )
            logger.info(f"T^n={final_time}: least squares stopped after {result.nfev} shots ({result.message})")
        return final_time, best["shot"], best["target"], shooter

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        results = list(pool.map(construct, run.final_times))

    for final_time, shot, target, shooter in results:
        alpha = shooter.alpha(target)
        run.alphas[final_time] = alpha
        run.targets[final_time] = target
        run.objectives[final_time] = shot.objective
        run.alpha_bounded[final_time] = bool(np.linalg.norm(alpha) <= 2.0 * np.linalg.norm(target) + 1e-15)
        if shot.trajectory is None or shot.objective >= shoot_cfg.target:
            run.failures[final_time] = f"objective {shot.objective:.3e} not below {shoot_cfg.target}"
            logger.error(f"T^n={final_time}: shooting failed, best objective {shot.objective:.3e}")
            continue
        run.trajectories[final_time] = shot.trajectory
        run.error_series[final_time] = [(s.time, h_distance_to_sum(s, family)) for s in shot.trajectory.states]
        run.diagnostics[final_time] = [
            {"t": t, **{f"gamma_plus_{j + 1}": float(g[j]) for j in range(family.size)},
             **{f"gamma_minus_{j + 1}": float(g[family.size + j]) for j in range(family.size)}}
            for t, g in shot.gammas
        ]
        logger.info(
            f"T^n={final_time}: objective {shot.objective:.3e}, |alpha|={np.linalg.norm(alpha):.3e}, "
            f"|a|={np.linalg.norm(target):.3e}"
        )
    _cauchy(run)
    if strict and run.failures:
        final_time = min(run.failures)
        raise ConstructionFailedError(
            run.failures[final_time], final_time, run.objectives.get(final_time, math.inf), run.alphas.get(final_time)
        )
    return run


@dataclass
class GrowthMeasurement:
    rate: float
    predicted: float
    times: np.ndarray = field(repr=False)
    gamma_plus: np.ndarray = field(repr=False)

    @property
    def relative_error(self) -> float:
        return abs(self.rate - self.predicted) / abs(self.predicted)


def measure_unstable_growth(
    p: float,
    omega: float,
    delta: float = 1e-8,
    span: float = 10.0,
    cfg: Optional[EvolveConfig] = None,
) -> GrowthMeasurement:
    """Seeds eps = delta Y-, evolves backward with the full solver and fits log|gamma+|."""
    modes = modes_for(p, omega)
    if modes is None:
        raise ContractViolationError(f"no unstable mode for p={p}, omega={omega}")
    # keep delta * exp(lambda0 span) in the linear regime
    span = min(span, math.log(1e-3 / delta) / modes.lambda0)
    family = SolitonFamily.build(p, [omega], [0.0], lambda0s=[modes.lambda0])
    grid = family.grid(horizon=span)
    final = soliton_sum(family, grid, span) + delta * modes.placed(grid, omega * span).y_minus
    cfg = cfg or EvolveConfig(t_end=0.0, nonlinearity_p=p, checkpoint_stride=20)
    trajectory = evolve_backward_from_final(final.with_time(span), 0.0, _backward_config(cfg, 0.0))
    times = trajectory.times
    gamma_plus = np.array([_gammas(s, family, [modes])[0] for s in trajectory.states])
    slope, _ = np.polyfit(times, np.log(np.abs(gamma_plus)), 1)
    measurement = GrowthMeasurement(rate=float(-slope), predicted=modes.lambda0, times=times, gamma_plus=gamma_plus)
    logger.info(f"Growth of gamma+ for p={p}, omega={omega}: {measurement.rate:.6f} vs lambda0={modes.lambda0:.6f}")
    return measurement


@dataclass
class DecayFit:
    rate: float
    constant: float
    r2: float


def decay_fit_series(times: Sequence[float], errors: Sequence[float]) -> DecayFit:
    """Least squares of log(error) = log(C) - rate * t."""
    times = np.asarray(times, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0
    if np.count_nonzero(keep) < MIN_FIT_SAMPLES:
        raise InsufficientDataError(f"decay fit needs {MIN_FIT_SAMPLES} positive samples, got {np.count_nonzero(keep)}")
    t, y = times[keep], np.log(errors[keep])
    slope, intercept = np.polyfit(t, y, 1)
    fitted = slope * t + intercept
    spread = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if spread == 0 else 1.0 - float(np.sum((y - fitted) ** 2)) / spread
    return DecayFit(rate=float(-slope), constant=float(math.exp(intercept)), r2=r2)


def decay_fit(run: ConstructionRun, t_min: Optional[float] = None) -> DecayFit:
    """Fit on the longest completed trajectory, optionally from t_min on."""
    if not run.completed:
        raise InsufficientDataError("no completed trajectory to fit")
    series = sorted(run.error_series[run.completed[-1]])
    if t_min is not None:
        series = [(t, e) for t, e in series if t >= t_min]
    return decay_fit_series([t for t, _ in series], [e for _, e in series])
