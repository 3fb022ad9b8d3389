"""Shared test fixtures and configuration."""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add app to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core.grid import FieldState, Grid  # noqa: E402
from app.core.solitons import SolitonFamily, soliton_sum  # noqa: E402
from app.core.spectrum import PegoWeinsteinModes  # noqa: E402


@pytest.fixture(autouse=True)
def isolated_environment(tmp_path, monkeypatch):
    """Run directories and logging config never touch the working tree."""
    monkeypatch.setenv("BLAB_OUTPUT_ROOT", str(tmp_path / "runs"))
    monkeypatch.setenv("BLAB_LOG_CONFIG", str(tmp_path / "no-logging-config.yml"))
    monkeypatch.delenv("BLAB_MAX_WORKERS", raising=False)
    monkeypatch.delenv("BLAB_VERBOSE_STEPS", raising=False)
    yield


@pytest.fixture
def small_grid():
    """Periodic grid on [-20, 20) with 256 points."""
    return Grid(20.0, 256)


@pytest.fixture
def gaussian_state(small_grid):
    x = small_grid.x
    return FieldState(small_grid, np.exp(-(x**2)), 0.5 * x * np.exp(-(x**2)), 1.0)


@pytest.fixture
def single_family():
    """One p=1 soliton moving right at w=0.5."""
    return SolitonFamily.build(1.0, [0.5], [0.0])


@pytest.fixture
def pair_family():
    """Two well separated p=1 solitons moving apart."""
    return SolitonFamily.build(1.0, [-0.5, 0.5], [-10.0, 10.0])


@pytest.fixture
def pair_state_factory(pair_family):
    """Exact soliton sum of the pair family with perturbed parameters."""
    grid = pair_family.grid(horizon=10.0)

    def _create(d_omega: float = 0.0, d_x: float = 0.0, t: float = 5.0):
        # modulated waves are centred at w_j t + x~_j with the nominal speeds w_j
        moved = pair_family.with_parameters(
            pair_family.omegas + d_omega,
            pair_family.positions + d_x + pair_family.omegas * t,
        )
        return soliton_sum(moved, grid, 0.0).with_time(t)

    return grid, _create


@pytest.fixture
def biorthogonal_modes():
    """Hand-built mode set on [-24, 24) with (Y+, Z-) = (Y-, Z+) = 1 and (Y+, Z+) = (Y-, Z-) = 0.

    Y+ = (sech(2x), 0) so its tail decays at rate 2.
    """
    grid = Grid(24.0, 512)
    x = grid.x
    zero = np.zeros_like(x)
    even, odd = 1.0 / np.cosh(2.0 * x), x * np.exp(-(x**2))
    y_plus, y_minus = FieldState(grid, even, zero), FieldState(grid, zero, odd)
    h = grid.spacing
    return PegoWeinsteinModes(
        p=3.0,
        omega=0.5,
        lambda0=0.25,
        y_plus=y_plus,
        y_minus=y_minus,
        z_plus=(1.0 / (h * np.sum(odd**2))) * y_minus,
        z_minus=(1.0 / (h * np.sum(even**2))) * y_plus,
    )
