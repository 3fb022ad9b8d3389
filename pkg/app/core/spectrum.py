"""
Linearized operators around a single soliton.

L = [[-d_xx + 1 - (2p+1) Phi_w^2p, w], [w, 1]] is assembled densely with
circulant spectral differentiation matrices; J L with J = [[0, d_x], [d_x, 0]]
is the linearized generator in the frame moving with the soliton. Everything
here works in the L2 x L2 pairing (grid spacing times the dot product).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import linalg

from ..exceptions import CertificationError, ContractViolationError, DomainError
from .grid import MIN_POINTS, POINTS_PER_WIDTH, FieldState, Grid, pair_inner_product, resample
from .solitons import (
    Regime,
    SolitonParams,
    profile_derivative,
    scaled_soliton,
    scalar_ground_eigenvalue,
    soliton_width,
)

logger = logging.getLogger(__name__)

MODE_HALF_LENGTH = 24.0
MODE_MIN_POINTS = 512
KERNEL_FLOOR = 1e-8
UNSTABLE_MIN_RATE = 1e-4
UNSTABLE_MAX_IMAG = 1e-6
TAIL_LEAK = 1e-3
INVERSE_ITERATIONS = 6

SUBCRITICAL_PAIR = "subcritical_pair"
SUPERCRITICAL_TRIPLET = "supercritical_triplet"


def mode_grid(p: float, omega: float, half_length: float = MODE_HALF_LENGTH) -> Grid:
    """Compact grid for eigenproblems, resolving Phi_w at the standard rate."""
    needed = 2.0 * half_length * POINTS_PER_WIDTH / soliton_width(p, omega)
    n_points = max(MODE_MIN_POINTS, MIN_POINTS, 1 << math.ceil(math.log2(needed)))
    return Grid(half_length, n_points)


@lru_cache(maxsize=16)
def _differentiation_matrix(half_length: float, n_points: int, order: int) -> np.ndarray:
    grid = Grid(half_length, n_points)
    k = grid.wavenumbers.copy()
    if order % 2:
        k[n_points // 2] = 0.0
    column = np.fft.ifft((1j * k) ** order).real
    # exact (anti)symmetry of the circulant
    mirrored = np.roll(column[::-1], 1)
    column = 0.5 * (column - mirrored) if order % 2 else 0.5 * (column + mirrored)
    return linalg.circulant(column)


def differentiation_matrix(grid: Grid, order: int) -> np.ndarray:
    return _differentiation_matrix(grid.half_length, grid.n_points, order)


@dataclass(frozen=True, eq=False)
class OperatorAssembly:
    grid: Grid
    p: float
    omega: float
    matrix: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)

    @property
    def matrix_dim(self) -> int:
        return 2 * self.grid.n_points

    @property
    def params(self) -> SolitonParams:
        return SolitonParams(p=self.p, omega=self.omega)

    def apply(self, w: FieldState) -> FieldState:
        out = self.matrix @ w.as_vector()
        n = self.grid.n_points
        return FieldState(self.grid, out[:n], out[n:], w.time)

    def form(self, w: FieldState) -> float:
        """<L w, w> in L2 x L2."""
        v = w.as_vector()
        return float(self.grid.spacing * v @ (self.matrix @ v))

    def soliton_pair(self) -> FieldState:
        phi, psi = scaled_soliton(self.params, self.grid.x)
        return FieldState(self.grid, phi, psi)

    def kernel_direction(self) -> FieldState:
        dphi = profile_derivative(self.params, self.grid.x)
        return FieldState(self.grid, dphi, -self.omega * dphi)

    def scalar_operator(self) -> np.ndarray:
        """-d_xx + (1 - w^2) - (2p+1) Phi_w^2p."""
        d2 = differentiation_matrix(self.grid, 2)
        return -d2 + np.diag((1.0 - self.omega**2) - self.potential)

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.T)))


def assemble_linearized(p: float, omega: float, grid: Optional[Grid] = None) -> OperatorAssembly:
    params = SolitonParams(p=p, omega=omega)
    grid = grid or mode_grid(p, omega)
    grid.require_resolution(params.width, f"linearization at omega={omega}")
    n = grid.n_points
    phi = scaled_soliton(params, grid.x)[0]
    potential = (2.0 * p + 1.0) * np.abs(phi) ** (2.0 * p)
    eye = np.eye(n)
    upper = -differentiation_matrix(grid, 2) + eye - np.diag(potential)
    matrix = np.block([[upper, omega * eye], [omega * eye, eye]])
    logger.debug(f"Assembled L for p={p}, omega={omega} on n={n}, L={grid.half_length}")
    return OperatorAssembly(grid, p, omega, matrix, potential)


def assemble_jl(assembly: OperatorAssembly) -> np.ndarray:
    n = assembly.grid.n_points
    d1 = differentiation_matrix(assembly.grid, 1)
    zero = np.zeros((n, n))
    return np.block([[zero, d1], [d1, zero]]) @ assembly.matrix


def essential_spectrum_floor(omega: float, grid: Grid) -> float:
    """Smallest eigenvalue of the constant-coefficient operator (Phi = 0)."""
    n = grid.n_points
    eye = np.eye(n)
    upper = -differentiation_matrix(grid, 2) + eye
    matrix = np.block([[upper, omega * eye], [omega * eye, eye]])
    return float(linalg.eigvalsh(matrix, subset_by_index=[0, 0])[0])


def lambda0_closed_form(lambda_minus: float, omega: float) -> float:
    w2 = omega**2
    root = math.sqrt(lambda_minus**2 + 2.0 * (w2 - 1.0) * lambda_minus + (w2 + 1.0) ** 2)
    return 0.5 * (lambda_minus + w2 + 1.0 - root)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


@dataclass
class PlacedModes:
    y_plus: FieldState
    y_minus: FieldState
    z_plus: FieldState
    z_minus: FieldState


@dataclass
class PegoWeinsteinModes:
    """Eigenpairs J L Y+- = +-lambda0 Y+-, Z+- = L Y+-, with (Y+, Z-) = (Y-, Z+) = 1."""

    p: float
    omega: float
    lambda0: float
    y_plus: FieldState = field(repr=False)
    y_minus: FieldState = field(repr=False)
    z_plus: FieldState = field(repr=False)
    z_minus: FieldState = field(repr=False)
    residual: float = 0.0
    reflected_sign: float = 1.0

    @property
    def grid(self) -> Grid:
        return self.y_plus.grid

    def biorthogonality(self) -> np.ndarray:
        """[[(Y+,Z+), (Y+,Z-)], [(Y-,Z+), (Y-,Z-)]]; the anti-diagonal identity when normalized."""
        ys = (self.y_plus, self.y_minus)
        zs = (self.z_plus, self.z_minus)
        return np.array([[pair_inner_product(y, z) for z in zs] for y in ys])

    def kernel_overlaps(self) -> tuple[float, float]:
        params = SolitonParams(p=self.p, omega=self.omega)
        dphi = profile_derivative(params, self.grid.x)
        kernel = FieldState(self.grid, dphi, -self.omega * dphi)
        return pair_inner_product(self.z_plus, kernel), pair_inner_product(self.z_minus, kernel)

    def tail_decay_rate(self) -> float:
        """Log-linear fit of the |Y+| envelope against |x| on the outer half of the grid."""
        x = self.grid.x
        envelope = np.abs(self.y_plus.u1) + np.abs(self.y_plus.u2)
        window = (np.abs(x) > 0.25 * self.grid.half_length) & (np.abs(x) < 0.75 * self.grid.half_length)
        envelope = np.maximum(envelope[window], 1e-300)
        slope, _ = np.polyfit(np.abs(x[window]), np.log(envelope), 1)
        return float(-slope)

    def placed(self, grid: Grid, center: float) -> PlacedModes:
        """The modes translated to `center` on another grid (zero beyond the mode box)."""
        move = lambda state: resample(state, grid, center=center)  # noqa: E731
        return PlacedModes(move(self.y_plus), move(self.y_minus), move(self.z_plus), move(self.z_minus))


def _inverse_iteration(jl: np.ndarray, shift: float, start: np.ndarray) -> tuple[float, np.ndarray]:
    # nudged off the eigenvalue so the factorization stays nonsingular
    nudged = shift + 1e-10 * max(1.0, abs(shift))
    lu = linalg.lu_factor(jl - nudged * np.eye(jl.shape[0]))
    v = _unit(start)
    value = shift
    for _ in range(INVERSE_ITERATIONS):
        v = _unit(linalg.lu_solve(lu, v))
        value = float(v @ (jl @ v))
    return value, v


def _decays(v: np.ndarray, grid: Grid) -> bool:
    n = grid.n_points
    envelope = np.abs(v[:n]) + np.abs(v[n:])
    edge = np.abs(grid.x) > 0.8 * grid.half_length
    return float(np.max(envelope[edge])) <= TAIL_LEAK * float(np.max(envelope))


def compute_pw_modes(assembly: OperatorAssembly) -> Optional[PegoWeinsteinModes]:
    """Real positive eigenvalue of J L with a decaying eigenvector, or None."""
    grid = assembly.grid
    n = grid.n_points
    h = grid.spacing
    jl = assemble_jl(assembly)
    values, vectors = linalg.eig(jl)
    candidates = [
        i for i in np.argsort(-values.real)
        if values[i].real > UNSTABLE_MIN_RATE and abs(values[i].imag) < UNSTABLE_MAX_IMAG * max(1.0, abs(values[i]))
    ]
    chosen = None
    for i in candidates:
        start = vectors[:, i].real if np.linalg.norm(vectors[:, i].real) >= np.linalg.norm(vectors[:, i].imag) else vectors[:, i].imag
        if _decays(start, grid):
            chosen = (values[i].real, start)
            break
    if chosen is None:
        logger.info(f"No unstable mode for p={assembly.p}, omega={assembly.omega}")
        return None
    lambda0, y = _inverse_iteration(jl, chosen[0], chosen[1])
    y = y if y[int(np.argmax(np.abs(y[:n])))] > 0 else -y
    reflect = (-np.arange(n)) % n
    y_reflected = np.concatenate([y[:n][reflect], y[n:][reflect]])
    cross = h * float(y @ (assembly.matrix @ y_reflected))
    if abs(cross) < 1e-14:
        raise CertificationError(f"(Y+, L R Y+) vanishes for p={assembly.p}, omega={assembly.omega}")
    sign = 1.0 if cross > 0 else -1.0
    scale = 1.0 / math.sqrt(abs(cross))
    y_plus = scale * y
    y_minus = sign * scale * y_reflected
    z_plus = assembly.matrix @ y_plus
    z_minus = assembly.matrix @ y_minus
    residual = float(np.linalg.norm(jl @ y_plus - lambda0 * y_plus) / np.linalg.norm(y_plus))
    as_state = lambda v: FieldState(grid, v[:n], v[n:])  # noqa: E731
    modes = PegoWeinsteinModes(
        p=assembly.p,
        omega=assembly.omega,
        lambda0=lambda0,
        y_plus=as_state(y_plus),
        y_minus=as_state(y_minus),
        z_plus=as_state(z_plus),
        z_minus=as_state(z_minus),
        residual=residual,
        reflected_sign=sign,
    )
    logger.info(f"Unstable mode p={assembly.p}, omega={assembly.omega}: lambda0={lambda0:.8f}, residual={residual:.2e}")
    return modes


@lru_cache(maxsize=8)
def modes_for(p: float, omega: float) -> Optional[PegoWeinsteinModes]:
    """compute_pw_modes on the default mode grid, cached per (p, w)."""
    return compute_pw_modes(assemble_linearized(p, omega))


def coercivity_constant(
    assembly: OperatorAssembly,
    constraints: Sequence[FieldState] = (),
    norm: str = "h",
) -> float:
    """min <L w, w> / ||w||^2 over w orthogonal (L2 x L2) to the constraints.

    norm="h" uses ||w1||^2 + ||w1'||^2 + ||w2||^2; norm="l2" the plain L2 x L2 norm.
    """
    dim = assembly.matrix_dim
    n = assembly.grid.n_points
    if norm == "h":
        gram = np.eye(dim)
        gram[:n, :n] -= differentiation_matrix(assembly.grid, 2)
    elif norm == "l2":
        gram = np.eye(dim)
    else:
        raise ContractViolationError(f"norm must be 'h' or 'l2', got {norm!r}")
    if constraints:
        c = np.column_stack([w.as_vector() for w in constraints])
        basis = linalg.null_space(c.T)
        a = basis.T @ assembly.matrix @ basis
        g = basis.T @ gram @ basis
    else:
        a, g = assembly.matrix, gram
    a = 0.5 * (a + a.T)
    g = 0.5 * (g + g.T)
    return float(linalg.eigh(a, g, eigvals_only=True, subset_by_index=[0, 0])[0])


def default_constraints(assembly: OperatorAssembly, modes: Optional[PegoWeinsteinModes] = None) -> tuple[str, list[FieldState]]:
    kernel = assembly.kernel_direction()
    if Regime.for_exponent(assembly.p) == Regime.SUBCRITICAL:
        phi = assembly.soliton_pair().u1
        return SUBCRITICAL_PAIR, [kernel, FieldState(assembly.grid, phi, np.zeros_like(phi))]
    modes = modes if modes is not None else compute_pw_modes(assembly)
    if modes is None:
        return SUPERCRITICAL_TRIPLET, [kernel]
    return SUPERCRITICAL_TRIPLET, [modes.z_plus, modes.z_minus, kernel]


@dataclass
class SpectrumReport:
    p: float
    omega: float
    n_points: int
    half_length: float
    negative_eigenvalues: list[float]
    zero_modes: list[tuple[float, float]]
    lambda_minus: float
    lambda_minus_closed_form: float
    lambda0_formula: float
    lambda0_numeric: float
    kernel_correlation: float
    coercivity_constant: float
    constraint_set: str
    essential_floor: float
    unstable_rate: Optional[float] = None
    certified: bool = True
    failures: list[str] = field(default_factory=list)
    ground_vector: np.ndarray = field(default=None, repr=False)
    scalar_ground_vector: np.ndarray = field(default=None, repr=False)

    def as_row(self) -> dict:
        return {
            "p": self.p,
            "omega": self.omega,
            "lambda_minus": self.lambda_minus,
            "lambda0_formula": self.lambda0_formula,
            "lambda0_numeric": self.lambda0_numeric,
            "coercivity_C": self.coercivity_constant,
            "n_negative": len(self.negative_eigenvalues),
            "n_zero": len(self.zero_modes),
        }

    def as_lines(self) -> list[str]:
        lines = [
            f"p: {self.p}",
            f"omega: {self.omega}",
            f"grid: L={self.half_length} n={self.n_points}",
            f"negative_eigenvalues: {', '.join(f'{v:.10g}' for v in self.negative_eigenvalues)}",
            f"zero_modes: {len(self.zero_modes)}",
            f"kernel_correlation: {self.kernel_correlation:.10f}",
            f"lambda_minus: {self.lambda_minus:.10g}",
            f"lambda_minus_closed_form: {self.lambda_minus_closed_form:.10g}",
            f"lambda0_formula: {self.lambda0_formula:.10g}",
            f"lambda0_numeric: {self.lambda0_numeric:.10g}",
            f"coercivity_constant: {self.coercivity_constant:.10g}",
            f"constraint_set: {self.constraint_set}",
            f"essential_floor: {self.essential_floor:.10g}",
        ]
        if self.unstable_rate is not None:
            lines.append(f"unstable_rate: {self.unstable_rate:.10g}")
        lines.append(f"certified: {'yes' if self.certified else 'no'}")
        lines += [f"failure: {reason}" for reason in self.failures]
        return lines


def certify_spectrum(assembly: OperatorAssembly, strict: bool = True) -> SpectrumReport:
    """Dense eigensolve of L with the one-negative, one-zero certification.

    Coercivity is only required positive where it is asserted: always in the
    supercritical regime, and for 2 w^2 > p in the subcritical one.
    """
    if assembly.p == 2:
        raise DomainError("p = 2 is critical; no constraint set is defined")
    values, vectors = linalg.eigh(assembly.matrix)
    tolerance = max(KERNEL_FLOOR, 10.0 * np.finfo(float).eps * float(np.max(np.abs(values))))
    kernel = _unit(assembly.kernel_direction().as_vector())
    negatives = [float(v) for v in values if v < -tolerance]
    zero_modes = [
        (float(values[i]), abs(float(kernel @ vectors[:, i])))
        for i in range(len(values)) if abs(values[i]) <= tolerance
    ]
    scalar_values, scalar_vectors = linalg.eigh(assembly.scalar_operator(), subset_by_index=[0, 0])
    lambda_minus = float(scalar_values[0])
    modes = compute_pw_modes(assembly) if Regime.for_exponent(assembly.p) == Regime.SUPERCRITICAL else None
    constraint_set, constraints = default_constraints(assembly, modes)
    coercivity = coercivity_constant(assembly, constraints)
    report = SpectrumReport(
        p=assembly.p,
        omega=assembly.omega,
        n_points=assembly.grid.n_points,
        half_length=assembly.grid.half_length,
        negative_eigenvalues=negatives,
        zero_modes=zero_modes,
        lambda_minus=lambda_minus,
        lambda_minus_closed_form=scalar_ground_eigenvalue(assembly.p, assembly.omega),
        lambda0_formula=lambda0_closed_form(lambda_minus, assembly.omega),
        lambda0_numeric=float(values[0]),
        kernel_correlation=max((c for _, c in zero_modes), default=0.0),
        coercivity_constant=coercivity,
        constraint_set=constraint_set,
        essential_floor=essential_spectrum_floor(assembly.omega, assembly.grid),
        unstable_rate=None if modes is None else modes.lambda0,
        ground_vector=vectors[:, 0],
        scalar_ground_vector=scalar_vectors[:, 0],
    )
    if len(negatives) != 1:
        report.failures.append(f"expected one negative eigenvalue, found {len(negatives)}")
    if len(zero_modes) != 1:
        report.failures.append(f"expected one zero mode, found {len(zero_modes)}")
    asserted = constraint_set == SUPERCRITICAL_TRIPLET or 2.0 * assembly.omega**2 > assembly.p
    if asserted and coercivity <= 0:
        report.failures.append(f"coercivity constant {coercivity:.3e} is not positive")
    report.certified = not report.failures
    logger.info(
        f"Spectrum p={assembly.p}, omega={assembly.omega}: lambda0={report.lambda0_numeric:.8f} "
        f"(formula {report.lambda0_formula:.8f}), C={coercivity:.4e}, certified={report.certified}"
    )
    if strict and not report.certified:
        raise CertificationError("; ".join(report.failures))
    return report


def reconstruct_gamma0(assembly: OperatorAssembly, report: SpectrumReport) -> tuple[FieldState, float]:
    """Gamma0 = (psi0, w psi0/(lambda0 - 1)) from the scalar ground state, and its
    correlation with the numeric negative eigenvector of L."""
    psi0 = report.scalar_ground_vector
    second = assembly.omega * psi0 / (report.lambda0_formula - 1.0)
    gamma = _unit(np.concatenate([psi0, second]))
    correlation = abs(float(gamma @ _unit(report.ground_vector)))
    n = assembly.grid.n_points
    return FieldState(assembly.grid, gamma[:n], gamma[n:]), correlation


def sweep(
    p_values: Iterable[float],
    omega_values: Iterable[float],
    grid_factory: Optional[Callable[[float, float], Grid]] = None,
    max_workers: int = 1,
) -> list[dict]:
    """certify_spectrum over a (p, w) table; failed certifications are reported, not raised."""
    grid_factory = grid_factory or mode_grid
    cases = [(p, w) for p in p_values for w in omega_values if p != 2]

    def run(case):
        p, omega = case
        report = certify_spectrum(assemble_linearized(p, omega, grid_factory(p, omega)), strict=False)
        return {**report.as_row(), "certified": report.certified}

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        return list(pool.map(run, cases))
