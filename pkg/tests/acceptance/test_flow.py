"""Acceptance runs for profiles, propagation, reversibility and almost-conservation."""
import numpy as np
import pytest

from app.core.evolution import EvolveConfig, default_dt, evolve, evolve_backward_from_final
from app.core.functionals import CutoffSystem, localized_functionals
from app.core.grid import h_norm
from app.core.solitons import SolitonFamily, SolitonParams, elliptic_residual, soliton_state, soliton_sum


@pytest.mark.acceptance
class TestSolitonExactness:
    def test_profile_table(self):
        """Every (p, w) profile solves the elliptic equation on its own grid."""
        worst = 0.0
        for p in (1.0, 2.0, 3.0):
            for omega in (0.0, 0.5, -0.5, 0.9, -0.9):
                grid = SolitonFamily.build(p, [omega], [0.0]).grid()
                worst = max(worst, elliptic_residual(SolitonParams(p=p, omega=omega), grid))
        assert worst <= 1e-8


@pytest.mark.acceptance
class TestPropagation:
    @pytest.fixture(scope="class")
    def long_run(self):
        family = SolitonFamily.build(1.0, [0.5], [0.0])
        grid = family.grid(horizon=20.0)
        initial = soliton_sum(family, grid, 0.0)
        return family, initial, EvolveConfig(t_end=20.0, nonlinearity_p=1.0)

    @pytest.mark.timeout(300)
    def test_translate(self, long_run):
        family, initial, cfg = long_run
        trajectory = evolve(initial, cfg)
        exact = soliton_state(family.solitons[0], initial.grid, 20.0)
        assert np.max(np.abs(trajectory.final.u1 - exact.u1)) <= 1e-6
        assert np.max(np.abs(trajectory.final.u2 - exact.u2)) <= 1e-6
        assert max(r["energy_drift"] for r in trajectory.history) <= 1e-8
        assert max(r["momentum_drift"] for r in trajectory.history) <= 1e-8

    @pytest.mark.timeout(600)
    def test_round_trip(self, long_run):
        """Forward to t=20 and back returns the initial data."""
        _, initial, cfg = long_run
        cfg = cfg.model_copy(update={"dt": default_dt(initial.grid) / 4, "checkpoint_stride": 1000})
        forward = evolve(initial, cfg)
        back = evolve_backward_from_final(forward.final, 0.0, cfg)
        assert back.final.time == pytest.approx(0.0, abs=1e-12)
        assert h_norm(back.final - initial) <= 1e-9


@pytest.mark.acceptance
class TestAlmostConservation:
    @pytest.mark.timeout(900)
    def test_localized_momenta(self):
        """M_j barely move on [10, 50] and their variation shrinks from one window to the next."""
        family = SolitonFamily.build(1.0, [-0.5, 0.5], [-10.0, 10.0])
        grid = family.grid(horizon=50.0)
        cfg = EvolveConfig(t_end=50.0, nonlinearity_p=1.0, checkpoint_stride=100)
        trajectory = evolve(soliton_sum(family, grid, 0.0), cfg)
        assert max(r["momentum_drift"] for r in trajectory.history) <= 1e-8

        cutoffs = CutoffSystem.for_family(family)
        separated = [s for s in trajectory.states if s.time >= 10.0]
        momenta = np.array([localized_functionals(s, family, cutoffs, 1.0).localized_momenta for s in separated])
        times = np.array([s.time for s in separated])
        assert np.max(momenta.max(axis=0) - momenta.min(axis=0)) <= 1e-4

        variation = []
        for start, end in ((10.0, 20.0), (20.0, 30.0), (30.0, 40.0), (40.0, 50.0)):
            window = momenta[(times >= start - 1e-9) & (times <= end + 1e-9)]
            assert len(window) >= 2
            variation.append(float(np.max(window.max(axis=0) - window.min(axis=0))))
        # below ten times the integrator's own energy error there is no trend left to see
        e0 = trajectory.history[0]["energy"]
        floor = max(1e-12, 10.0 * max(abs(r["energy"] - e0) for r in trajectory.history))
        assert all(later <= max(earlier, floor) for earlier, later in zip(variation, variation[1:]))
