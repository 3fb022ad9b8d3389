"""Unit tests for the modulation decomposition."""
import numpy as np
import pytest

from app.core.grid import FieldState, Grid, h_norm, inner_product
from app.core.modulation import (
    ModulationDecomposition,
    lipschitz_ratio,
    modulate,
    modulation_radius,
    parameter_drift_bound_check,
    unstable_projections,
)
from app.core.solitons import (
    Regime,
    SolitonFamily,
    SolitonParams,
    profile_derivative,
    scaled_soliton,
    soliton_state,
    soliton_sum,
)
from app.exceptions import ContractViolationError, ModulationError, OutOfBasinError


@pytest.fixture
def supercritical_pair():
    family = SolitonFamily.build(3.0, [-0.5, 0.5], [-10.0, 10.0])
    grid = family.grid(horizon=5.0)

    def _create(d_x: float, t: float = 5.0):
        moved = family.with_parameters(family.omegas, family.positions + d_x + family.omegas * t)
        return soliton_sum(moved, grid, 0.0).with_time(t)

    return family, _create


@pytest.mark.unit
class TestSubcriticalModulation:
    """Recovery of speeds and positions from exact soliton sums."""

    @pytest.mark.parametrize("delta", [1e-4, 1e-3, 1e-2])
    def test_recovers_parameters(self, pair_family, pair_state_factory, delta):
        """Perturbed sums are decomposed with eps = 0 and the perturbed parameters."""
        _, create = pair_state_factory
        decomposition = modulate(create(d_omega=delta, d_x=delta), pair_family)
        assert decomposition.mode == Regime.SUBCRITICAL
        assert np.max(np.abs(decomposition.tilde_omegas - (pair_family.omegas + delta))) < 1e-10
        assert np.max(np.abs(decomposition.tilde_positions - (pair_family.positions + delta))) < 1e-10
        assert decomposition.epsilon_norm < 1e-10
        assert decomposition.max_residual < 1e-10

    def test_unperturbed_state_needs_no_iteration(self, pair_family, pair_state_factory):
        _, create = pair_state_factory
        assert modulate(create(), pair_family).newton_iterations == 0

    def test_orthogonal_perturbation_is_epsilon(self, pair_family, pair_state_factory):
        """A perturbation already orthogonal to every R_j and d_x R_j leaves the parameters alone."""
        grid, create = pair_state_factory
        t = 5.0
        basis = []
        for w, x in zip(pair_family.omegas, pair_family.positions):
            params = SolitonParams(p=1.0, omega=float(w), x0=float(x + w * t))
            basis += [scaled_soliton(params, grid.x)[0], profile_derivative(params, grid.x)]
        raw = 1e-3 * np.exp(-((grid.x - 12.0) ** 2) / 4.0) * np.cos(grid.x)
        gram = np.array([[inner_product(grid, a, b) for b in basis] for a in basis])
        weights = np.linalg.solve(gram, [inner_product(grid, raw, b) for b in basis])
        eps1 = raw - np.sum([c * b for c, b in zip(weights, basis)], axis=0)
        eps2 = 2e-3 * np.exp(-((grid.x + 12.0) ** 2) / 4.0)
        perturbation = FieldState(grid, eps1, eps2, t)

        decomposition = modulate(create() + perturbation, pair_family)
        assert np.max(np.abs(decomposition.tilde_omegas - pair_family.omegas)) < 1e-10
        assert np.max(np.abs(decomposition.tilde_positions - pair_family.positions)) < 1e-10
        assert h_norm(decomposition.epsilon - perturbation) < 1e-10

    def test_decomposition_is_unique_in_the_basin(self, pair_family, pair_state_factory):
        """Newton started from two points of the basin lands on the same parameters."""
        _, create = pair_state_factory
        state = create(d_omega=2e-3, d_x=-3e-3)
        nominal = modulate(state, pair_family)
        offset = np.concatenate([pair_family.omegas + 5e-3, pair_family.positions + 1e-2])
        shifted = modulate(state, pair_family, start=offset)
        assert np.max(np.abs(shifted.tilde_omegas - nominal.tilde_omegas)) < 1e-10
        assert np.max(np.abs(shifted.tilde_positions - nominal.tilde_positions)) < 1e-10
        assert h_norm(shifted.epsilon - nominal.epsilon) < 1e-10

    def test_standing_soliton_is_degenerate(self):
        """Speed modulation is refused at w = 0; position-only modulation works."""
        family = SolitonFamily.build(1.0, [0.0], [0.0])
        grid = family.grid()
        state = soliton_state(family.solitons[0].model_copy(update={"x0": 0.01}), grid, 1.0)
        with pytest.raises(ModulationError, match="degenerate"):
            modulate(state, family, Regime.SUBCRITICAL)
        decomposition = modulate(state, family, Regime.SUPERCRITICAL)
        assert decomposition.tilde_positions[0] == pytest.approx(0.01, abs=1e-10)

    def test_out_of_basin(self, pair_family, pair_state_factory):
        """States farther than the modulation radius are rejected before Newton."""
        _, create = pair_state_factory
        with pytest.raises(OutOfBasinError) as error:
            modulate(2.0 * create(), pair_family)
        assert error.value.distance > error.value.radius
        assert error.value.time == 5.0

    def test_radius(self, pair_family):
        grid = pair_family.grid()
        expected = 0.1 * h_norm(soliton_state(pair_family.solitons[0].model_copy(update={"x0": 0.0}), grid))
        assert modulation_radius(pair_family, grid) == pytest.approx(expected)

    def test_row(self, pair_family, pair_state_factory):
        _, create = pair_state_factory
        row = modulate(create(), pair_family).as_row(np.array([1.0, 2.0, 3.0, 4.0]))
        assert list(row) == [
            "t", "omega_1", "omega_2", "x_1", "x_2", "eps_h", "max_ortho_residual",
            "gamma_plus_1", "gamma_minus_1", "gamma_plus_2", "gamma_minus_2",
        ]
        assert row["gamma_plus_2"] == 2.0 and row["gamma_minus_1"] == 3.0


@pytest.mark.unit
class TestSupercriticalModulation:
    """Position-only modulation with pinned speeds."""

    @pytest.mark.parametrize("delta", [1e-3, -1e-2])
    def test_recovers_positions(self, supercritical_pair, delta):
        family, create = supercritical_pair
        decomposition = modulate(create(delta), family)
        assert decomposition.mode == Regime.SUPERCRITICAL
        assert np.array_equal(decomposition.tilde_omegas, family.omegas)
        assert np.max(np.abs(decomposition.tilde_positions - (family.positions + delta))) < 1e-10
        assert decomposition.epsilon_norm < 1e-10

    def test_projection_contract(self, supercritical_pair, pair_family, pair_state_factory):
        """Projections need a supercritical decomposition and one mode set per soliton."""
        family, create = supercritical_pair
        with pytest.raises(ContractViolationError, match="mode sets"):
            unstable_projections(modulate(create(0.0), family), [])
        _, create_sub = pair_state_factory
        with pytest.raises(ContractViolationError, match="supercritical"):
            unstable_projections(modulate(create_sub(), pair_family), [])


@pytest.mark.unit
class TestUnstableProjections:
    """gamma+- = (eps, Z~+-) for a hand-built biorthogonal mode set."""

    GRID = Grid(40.0, 1024)

    @staticmethod
    def _decomposition(eps: FieldState) -> ModulationDecomposition:
        return ModulationDecomposition(
            mode=Regime.SUPERCRITICAL,
            time=2.0,
            tilde_omegas=np.array([0.5]),
            tilde_positions=np.array([2.0]),
            epsilon=eps,
            ortho_residuals=np.zeros(1),
            newton_iterations=0,
        )

    def test_zero_epsilon(self, biorthogonal_modes):
        gammas = unstable_projections(self._decomposition(FieldState.zeros(self.GRID, 2.0)), [biorthogonal_modes])
        assert np.array_equal(gammas, [0.0, 0.0])

    def test_growing_mode_is_picked_by_z_minus(self, biorthogonal_modes):
        """eps = Y~+ at the modulated centre 0.5 * 2 + 2 gives gamma- = 1, gamma+ = 0."""
        eps = biorthogonal_modes.placed(self.GRID, 3.0).y_plus.with_time(2.0)
        gamma_plus, gamma_minus = unstable_projections(self._decomposition(eps), [biorthogonal_modes])
        assert gamma_plus == pytest.approx(0.0, abs=1e-12)
        assert gamma_minus == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("scale", [-2.5, 1e-3, 7.0])
    def test_linear_in_epsilon(self, biorthogonal_modes, scale):
        x = self.GRID.x
        eps = FieldState(self.GRID, np.exp(-((x - 3.5) ** 2)), (x - 3.0) * np.exp(-((x - 3.0) ** 2)), 2.0)
        base = unstable_projections(self._decomposition(eps), [biorthogonal_modes])
        scaled = unstable_projections(self._decomposition(scale * eps), [biorthogonal_modes])
        assert np.all(np.abs(base) > 1e-3)
        assert scaled == pytest.approx(scale * base, rel=1e-12)


@pytest.mark.unit
class TestDriftBounds:
    """Lipschitz ratios and parameter drift."""

    def test_lipschitz_ratio(self, pair_family, pair_state_factory):
        """For an exact perturbed sum the ratio counts the parameter shifts."""
        _, create = pair_state_factory
        delta = 1e-3
        assert lipschitz_ratio(create(delta, delta), pair_family, delta) == pytest.approx(4.0, rel=1e-6)

    def test_lipschitz_needs_positive_alpha(self, pair_family, pair_state_factory):
        _, create = pair_state_factory
        with pytest.raises(ContractViolationError):
            lipschitz_ratio(create(), pair_family, 0.0)

    def test_drift_of_exact_sums(self, pair_family, pair_state_factory):
        """Exact sums do not drift; undecomposable checkpoints become gaps."""
        _, create = pair_state_factory
        states = [create(t=t) for t in (7.0, 5.0, 6.0)] + [2.0 * create(t=8.0)]
        report = parameter_drift_bound_check(states, pair_family, max_workers=2)
        assert [row["t_left"] for row in report.rows] == [5.0, 6.0]
        assert report.max_ratio < 1e-8
        assert report.bounded
        assert report.gaps == [8.0]

    def test_empty_report_is_not_bounded(self, pair_family):
        report = parameter_drift_bound_check([], pair_family)
        assert not report.bounded
