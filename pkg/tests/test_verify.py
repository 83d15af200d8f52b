"""Property estimators: polynomial exactness, restriction monotonicity, suite."""

import math

import numpy as np
import pytest

from degmfg.coupling import CouplingSpec, builtin_coupling
from degmfg.dynamics import dynamics_preset
from degmfg.errors import ConfigurationError
from degmfg.fpe import solve_fpe_forward
from degmfg.grid import (DensityPath, Direction, Grid2D, ScalarField,
                         ValuePath, truncated_gaussian, uniform_density)
from degmfg.hjb import HjbConfig, solve_hjb_backward
from degmfg.verify import (AXES_AND_DIAGONALS, ae_residual_report,
                           interior_restrict, lipschitz_estimate,
                           property_checks, report_to_dict,
                           semiconcavity_estimate, third_difference_estimate,
                           time_lipschitz_estimate, VerifyThresholds)

DIAG = Direction(1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0))


def _box(half, n):
    return Grid2D(-half, half, -half, half, n, n)


def _field(grid, fn):
    x1g, x2g = grid.meshgrid()
    return ScalarField(grid, fn(x1g, x2g))


class TestLipschitz:
    def test_linear_3x1(self):
        u = _field(_box(3.0, 32), lambda x1, x2: 3.0 * x1)
        assert abs(lipschitz_estimate(u) - 3.0) < 1e-12

    def test_constant_is_zero(self):
        u = _field(_box(3.0, 32), lambda x1, x2: 0.0 * x1 + 7.0)
        assert lipschitz_estimate(u) == 0.0

    def test_diagonal_pairs_detected(self):
        # u = x1 + x2 has gradient norm sqrt(2), attained along the diagonal
        u = _field(_box(3.0, 32), lambda x1, x2: x1 + x2)
        assert abs(lipschitz_estimate(u) - math.sqrt(2.0)) < 1e-12


class TestTimeLipschitz:
    def test_T_minus_t_is_one(self):
        grid = _box(3.0, 8)
        nt, dt = 11, 0.1
        vals = np.broadcast_to((1.0 - dt * np.arange(nt))[:, None, None],
                               (nt,) + grid.shape)
        assert abs(time_lipschitz_estimate(ValuePath(grid, dt, vals)) - 1.0) < 1e-12

    def test_constant_is_zero(self):
        grid = _box(3.0, 8)
        u = ValuePath(grid, 0.1, np.ones((5,) + grid.shape))
        assert time_lipschitz_estimate(u) == 0.0


class TestSemiconcavity:
    def test_negative_quadratic_every_direction(self):
        u = _field(_box(3.0, 32), lambda x1, x2: -(x1 ** 2 + x2 ** 2))
        for eta in AXES_AND_DIAGONALS:
            est = semiconcavity_estimate(u, eta)
            assert abs(est - (-2.0)) < 1e-10  # exact for lattice-aligned eta

    def test_linear_is_zero(self):
        u = _field(_box(3.0, 32), lambda x1, x2: 2.0 * x1 - x2)
        for eta in AXES_AND_DIAGONALS:
            assert abs(semiconcavity_estimate(u, eta)) < 1e-12

    def test_mixed_quadratic_directional(self):
        # u = x1*x2: second derivative along (1,1)/sqrt(2) is +1, along axes 0
        u = _field(_box(3.0, 32), lambda x1, x2: x1 * x2)
        assert abs(semiconcavity_estimate(u, DIAG) - 1.0) < 1e-10
        assert abs(semiconcavity_estimate(u, Direction(1.0, 0.0))) < 1e-12


class TestThirdDifference:
    def test_cubic_along_x1(self):
        u = _field(_box(3.0, 64), lambda x1, x2: x1 ** 3)
        est = third_difference_estimate(u, Direction(1.0, 0.0))
        assert abs(est - 6.0) < 1e-9  # exact for a cubic on the lattice

    def test_quadratic_is_zero(self):
        u = _field(_box(3.0, 64), lambda x1, x2: x1 ** 2 + 0.5 * x2 ** 2)
        for eta in AXES_AND_DIAGONALS:
            assert third_difference_estimate(u, eta) < 1e-10


class TestRestrictionMonotonicity:
    def test_estimates_never_increase_on_subbox(self):
        rng = np.random.default_rng(7)
        grid = _box(3.0, 40)
        vals = rng.normal(size=grid.shape).cumsum(axis=0).cumsum(axis=1)
        vals /= np.abs(vals).max()
        u = ScalarField(grid, vals)
        for frame in (0.1, 0.2):
            assert lipschitz_estimate(u, frame) <= lipschitz_estimate(u) + 1e-14
            for eta in AXES_AND_DIAGONALS:
                assert (semiconcavity_estimate(u, eta, frame)
                        <= semiconcavity_estimate(u, eta) + 1e-14)
                assert (third_difference_estimate(u, eta, frame)
                        <= third_difference_estimate(u, eta) + 1e-14)

    def test_frame_bounds_validated(self):
        u = _field(_box(3.0, 32), lambda x1, x2: x1)
        with pytest.raises(ConfigurationError):
            interior_restrict(u, 0.5)
        with pytest.raises(ConfigurationError):
            interior_restrict(u, 0.49)  # leaves fewer than 4 nodes


class TestAeResidual:
    def _const_coupling(self, f_val, g_val):
        return CouplingSpec(
            F=lambda x1, x2, m: np.full_like(x1, f_val),
            G=lambda x1, x2, m: np.full_like(x1, g_val),
            monotone=True, lipschitz_in_m=0.0)

    def test_exact_constant_solution_fraction_one(self):
        grid = _box(3.0, 16)
        nt, dt = 9, 0.125
        u = ValuePath(grid, dt, np.full((nt,) + grid.shape, 2.0))
        m = DensityPath(grid, dt, np.repeat(
            uniform_density(grid).values[None], nt, axis=0))
        rep = ae_residual_report(u, dynamics_preset("grushin_exp", epsilon=0.1),
                                 self._const_coupling(0.0, 2.0), m, tol=1e-8)
        assert rep.fraction_below_tol == 1.0

    def test_T_minus_t_fraction_one(self):
        grid = _box(3.0, 16)
        nt, dt = 9, 0.125
        vals = np.broadcast_to((1.0 - dt * np.arange(nt))[:, None, None],
                               (nt,) + grid.shape)
        u = ValuePath(grid, dt, vals)
        m = DensityPath(grid, dt, np.repeat(
            uniform_density(grid).values[None], nt, axis=0))
        rep = ae_residual_report(u, dynamics_preset("zero", epsilon=0.0),
                                 self._const_coupling(1.0, 0.0), m, tol=1e-8)
        assert rep.fraction_below_tol == 1.0

    def test_fraction_non_decreasing_under_refinement(self):
        coup = builtin_coupling("nonlocal_smooth")
        dyn = dynamics_preset("grushin_exp", epsilon=0.05)
        fractions = []
        for n, nt in [(24, 48), (48, 96)]:
            grid = _box(3.0, n)
            cfg = HjbConfig(T=1.0, nt=nt)
            m0 = uniform_density(grid)
            m = DensityPath(grid, cfg.dt,
                            np.repeat(m0.values[None], cfg.nt, axis=0))
            u = solve_hjb_backward(dyn, coup, m, cfg)
            # fixed tol taken from the coarser level so levels are comparable
            tol = 5.0 * (6.0 / 23 + 1.0 / 47)
            fractions.append(
                ae_residual_report(u, dyn, coup, m, tol=tol).fraction_below_tol)
        assert fractions[1] >= fractions[0]


class TestPropertySuite:
    def test_solved_pair_passes_and_reports(self):
        grid = _box(5.0, 32)
        cfg = HjbConfig(T=1.0, nt=64)
        dyn = dynamics_preset("grushin_exp", epsilon=0.05)
        coup = builtin_coupling("nonlocal_smooth")
        m0 = truncated_gaussian(grid)
        frozen = DensityPath(grid, cfg.dt,
                             np.repeat(m0.values[None], cfg.nt, axis=0))
        u = solve_hjb_backward(dyn, coup, frozen, cfg)
        m = solve_fpe_forward(m0, u, dyn, cfg)
        results = property_checks(u, m, dyn, coup)
        report = report_to_dict(results)
        assert report["passed"], [r.name for r in results if not r.passed]
        names = {r.name for r in results}
        assert {"spatial_lipschitz", "time_lipschitz", "semiconcavity",
                "positivity", "mass_conservation", "second_moment_bound",
                "ae_residual_fraction", "boundary_mass"} <= names
        for r in results:
            assert np.isfinite(r.measured)

    def test_thresholds_are_config_visible(self):
        # tightening a threshold must flip the corresponding check
        grid = _box(5.0, 32)
        cfg = HjbConfig(T=1.0, nt=64)
        dyn = dynamics_preset("grushin_exp", epsilon=0.05)
        coup = builtin_coupling("nonlocal_smooth")
        m0 = truncated_gaussian(grid)
        frozen = DensityPath(grid, cfg.dt,
                             np.repeat(m0.values[None], cfg.nt, axis=0))
        u = solve_hjb_backward(dyn, coup, frozen, cfg)
        m = solve_fpe_forward(m0, u, dyn, cfg)
        tight = VerifyThresholds(lipschitz_max=1e-6)
        results = property_checks(u, m, dyn, coup, tight)
        by_name = {r.name: r for r in results}
        assert not by_name["spatial_lipschitz"].passed

    def test_sabotaged_run_fails_positivity(self):
        grid = _box(5.0, 32)
        cfg = HjbConfig(T=1.0, nt=64)
        dyn = dynamics_preset("zero", epsilon=0.0)
        x1g, _ = grid.meshgrid()
        u = ValuePath(grid, cfg.dt,
                      np.repeat((1.5 * x1g)[None], cfg.nt, axis=0))
        m0 = truncated_gaussian(grid)
        m = solve_fpe_forward(m0, u, dyn, cfg, sabotage_upwind=True)
        coup = CouplingSpec(
            F=lambda a, b, mm: np.zeros_like(a),
            G=lambda a, b, mm: np.zeros_like(a),
            monotone=True, lipschitz_in_m=0.0)
        results = property_checks(u, m, dyn, coup)
        by_name = {r.name: r for r in results}
        assert not by_name["positivity"].passed
