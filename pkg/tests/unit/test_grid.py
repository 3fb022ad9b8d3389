"""Unit tests for the periodic grid, spectral operators and FieldState."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.grid import (
    FieldState,
    Grid,
    fourier_interpolate,
    h_norm,
    inner_product,
    pair_inner_product,
    quadrature,
    resample,
    spectral_derivative,
    spectral_shift,
)
from app.exceptions import ContractViolationError, ResolutionError


@pytest.mark.unit
class TestGrid:
    """Grid construction and the resolution rule."""

    def test_points_and_spacing(self):
        """x covers [-L, L) with spacing 2L/n."""
        grid = Grid(10.0, 64)
        assert grid.x[0] == -10.0
        assert grid.spacing == pytest.approx(20.0 / 64)
        assert grid.x[-1] == pytest.approx(10.0 - grid.spacing)

    @pytest.mark.parametrize("half_length,n_points", [(0.0, 64), (-1.0, 64), (10.0, 63), (10.0, 8)])
    def test_rejects_bad_parameters(self, half_length, n_points):
        """Non-positive length, odd or tiny point counts are contract violations."""
        with pytest.raises(ContractViolationError):
            Grid(half_length, n_points)

    def test_check_rejects_wrong_shape(self, small_grid):
        """Arrays must have exactly n_points samples."""
        with pytest.raises(ContractViolationError):
            small_grid.check(np.zeros(small_grid.n_points + 1))

    def test_for_solitons_power_of_two_and_resolving(self):
        """The tail and resolution rules give a power-of-two grid that resolves every width."""
        grid = Grid.for_solitons([1.0, 0.5], [-0.5, 0.5], [-10.0, 10.0], horizon=20.0)
        assert grid.half_length == pytest.approx(40.0 + 10.0 + 10.0)
        assert grid.n_points & (grid.n_points - 1) == 0
        assert grid.resolves(0.5)
        assert not Grid(grid.half_length, grid.n_points // 2).resolves(0.5)

    def test_require_resolution_raises(self):
        """A coarse grid raises ResolutionError naming the width."""
        with pytest.raises(ResolutionError, match="width"):
            Grid(50.0, 64).require_resolution(0.5)


@pytest.mark.unit
class TestSpectralOperators:
    """Derivatives, quadrature, shifts and interpolation."""

    def test_derivative_of_trigonometric_polynomial_is_exact(self):
        """d/dx sin(m pi x / L) is reproduced to rounding for resolvable m."""
        grid = Grid(5.0, 64)
        k = 3 * math.pi / grid.half_length
        f = np.sin(k * grid.x)
        assert np.max(np.abs(spectral_derivative(grid, f, 1) - k * np.cos(k * grid.x))) < 1e-11
        assert np.max(np.abs(spectral_derivative(grid, f, 2) + k**2 * f)) < 1e-10

    def test_first_derivative_twice_is_second(self, small_grid):
        """Composing order 1 with itself gives order 2 on resolved data."""
        x = small_grid.x
        f = np.exp(-((x - 0.7) ** 2)) * np.cos(2.0 * x)
        twice = spectral_derivative(small_grid, spectral_derivative(small_grid, f, 1), 1)
        assert np.max(np.abs(twice - spectral_derivative(small_grid, f, 2))) < 1e-10

    def test_derivative_order_limits(self, small_grid):
        """Only orders 1..4 are supported."""
        with pytest.raises(ContractViolationError):
            spectral_derivative(small_grid, np.zeros(small_grid.n_points), 5)

    def test_quadrature_of_gaussian(self, small_grid):
        """The trapezoid rule is spectrally accurate for decaying functions."""
        assert quadrature(small_grid, np.exp(-small_grid.x**2)) == pytest.approx(math.sqrt(math.pi), abs=1e-12)

    def test_inner_products(self, gaussian_state):
        """pair_inner_product is the sum of the componentwise L2 products."""
        grid = gaussian_state.grid
        expected = inner_product(grid, gaussian_state.u1, gaussian_state.u1) + inner_product(
            grid, gaussian_state.u2, gaussian_state.u2
        )
        assert pair_inner_product(gaussian_state, gaussian_state) == pytest.approx(expected)

    def test_spectral_shift_translates(self, small_grid):
        """spectral_shift(f, s)(x) = f(x - s) for a non-integer number of cells."""
        x = small_grid.x
        shifted = spectral_shift(small_grid, np.exp(-(x**2)), 1.3)
        assert np.max(np.abs(shifted - np.exp(-((x - 1.3) ** 2)))) < 1e-10

    def test_fourier_interpolate_matches_function(self, small_grid):
        """The interpolant reproduces the sampled function off the nodes."""
        x = small_grid.x
        points = np.array([-3.21, 0.05, 2.5])
        values = fourier_interpolate(small_grid, np.exp(-(x**2)), points)
        assert np.max(np.abs(values - np.exp(-(points**2)))) < 1e-10

    def test_fourier_interpolate_outside(self, small_grid):
        """Points beyond [-L, L) give zero by default and the periodic image otherwise."""
        x = small_grid.x
        f = np.cos(math.pi * x / small_grid.half_length)
        outside = np.array([small_grid.half_length + 1.0])
        assert fourier_interpolate(small_grid, f, outside)[0] == 0.0
        periodic = fourier_interpolate(small_grid, f, outside, outside="periodic")[0]
        assert periodic == pytest.approx(math.cos(math.pi * (1.0 - small_grid.half_length) / small_grid.half_length))

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=-3.0, max_value=3.0), st.floats(min_value=-3.0, max_value=3.0))
    def test_shifts_compose(self, a, b):
        """Shifting by a then b equals shifting by a + b."""
        grid = Grid(20.0, 256)
        f = np.exp(-(grid.x**2))
        twice = spectral_shift(grid, spectral_shift(grid, f, a), b)
        assert np.max(np.abs(twice - spectral_shift(grid, f, a + b))) < 1e-12


@pytest.mark.unit
class TestFieldState:
    """Arithmetic and symmetries of sampled pairs."""

    def test_arithmetic(self, gaussian_state):
        """Sums, differences and scalar multiples act componentwise and keep the time."""
        doubled = gaussian_state + gaussian_state
        assert np.array_equal(doubled.u1, 2.0 * gaussian_state.u1)
        assert np.array_equal((2.0 * gaussian_state).u2, doubled.u2)
        assert np.max(np.abs((doubled - gaussian_state).u1 - gaussian_state.u1)) == 0.0
        assert doubled.time == gaussian_state.time

    def test_grid_mismatch(self, gaussian_state):
        """States on different grids cannot be combined."""
        other = FieldState.zeros(Grid(10.0, 256))
        with pytest.raises(ContractViolationError, match="grid mismatch"):
            gaussian_state + other

    def test_rejects_non_finite(self, small_grid):
        """NaN samples are rejected at construction."""
        u = np.zeros(small_grid.n_points)
        u[3] = np.nan
        with pytest.raises(ContractViolationError):
            FieldState(small_grid, u, np.zeros(small_grid.n_points))

    def test_time_reversal_is_an_involution(self, gaussian_state):
        """(u1, u2, t) -> (u1, -u2, -t) applied twice is the identity."""
        reversed_ = gaussian_state.time_reversed()
        assert reversed_.time == -gaussian_state.time
        assert np.array_equal(reversed_.u2, -gaussian_state.u2)
        back = reversed_.time_reversed()
        assert np.array_equal(back.u2, gaussian_state.u2) and back.time == gaussian_state.time

    def test_shifted_by_cells(self, gaussian_state):
        """shifted(k) rolls both components by k cells."""
        moved = gaussian_state.shifted(4)
        assert np.array_equal(moved.u1, np.roll(gaussian_state.u1, 4))
        assert np.array_equal(moved.u2, np.roll(gaussian_state.u2, 4))

    def test_h_norm(self, small_grid):
        """||(u1, u2)||_H^2 = ||u1||^2 + ||u1'||^2 + ||u2||^2."""
        x = small_grid.x
        u1 = np.exp(-(x**2))
        state = FieldState(small_grid, u1, np.zeros_like(u1))
        # int e^{-2x^2} = sqrt(pi/2), int (2x e^{-x^2})^2 = sqrt(pi/2)
        assert h_norm(state) ** 2 == pytest.approx(2.0 * math.sqrt(math.pi / 2.0), rel=1e-10)
        assert h_norm(FieldState.zeros(small_grid)) == 0.0

    @settings(max_examples=25, deadline=None)
    @given(
        st.floats(min_value=1e-3, max_value=1e3),
        st.sampled_from([-1.0, 1.0]),
        st.floats(min_value=-5.0, max_value=5.0),
        st.floats(min_value=0.5, max_value=3.0),
    )
    def test_h_norm_is_homogeneous(self, magnitude, sign, center, width):
        grid = Grid(20.0, 256)
        bump = np.exp(-(((grid.x - center) / width) ** 2))
        state = FieldState(grid, bump, np.sin(grid.x) * bump)
        assert h_norm((sign * magnitude) * state) == pytest.approx(magnitude * h_norm(state), rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(
        st.floats(min_value=-5.0, max_value=5.0),
        st.floats(min_value=-5.0, max_value=5.0),
        st.floats(min_value=-3.0, max_value=3.0),
    )
    def test_h_norm_triangle_inequality(self, a, b, mix):
        grid = Grid(20.0, 256)
        first = FieldState(grid, np.exp(-((grid.x - a) ** 2)), mix * np.exp(-((grid.x + a) ** 2)))
        second = FieldState(grid, np.cos(grid.x) * np.exp(-((grid.x - b) ** 2)), np.exp(-((grid.x - b) ** 2) / 2.0))
        assert h_norm(first + second) <= h_norm(first) + h_norm(second) + 1e-12

    def test_resample_moves_centre(self, small_grid):
        """Resampling onto a larger grid translates source_center to center."""
        x = small_grid.x
        state = FieldState(small_grid, np.exp(-(x**2)), np.zeros_like(x))
        target = Grid(40.0, 512)
        moved = resample(state, target, center=7.0)
        assert np.max(np.abs(moved.u1 - np.exp(-((target.x - 7.0) ** 2)))) < 1e-10
